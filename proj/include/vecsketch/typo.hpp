#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vecsketch/common.hpp"
#include "vecsketch/geometry.hpp"
#include "vecsketch/guidance.hpp"
#include "vecsketch/optim.hpp"
#include "vecsketch/raster.hpp"

// Word-as-image pipeline: deform the control points of a letter's outline so the
// filled shape depicts a concept, while an angle-preservation term (over a frozen
// triangulation of the initial points) and a blurred-tone term keep the glyph
// legible. Letters are optimized independently and reassembled into the word by
// refitting each deformed letter into the original letter's bounding box.

namespace vecsketch {

// ---------------------------------------------------------------------------
// Tone weight schedule: a Gaussian bump over the iteration counter, so the tone
// term stays out of the way early and clamps down mid-run.

struct ToneScheduleParams {
    double a = 100.0;  // peak weight
    int b = 300;       // center iteration
    double c = 30.0;   // bump width

    void validate() const {
        if (!(a >= 0.0)) throw ConfigError("ToneScheduleParams: a must be >= 0");
        if (!(c > 0.0)) throw ConfigError("ToneScheduleParams: c must be positive");
    }
};

inline double tone_weight(int t, const ToneScheduleParams& p) {
    p.validate();
    if (t < 0) throw std::domain_error("tone_weight: t must be >= 0");
    const double d = double(t) - double(p.b);
    return p.a * std::exp(-d * d / (2.0 * p.c * p.c));
}

// ---------------------------------------------------------------------------
// Filled-glyph rasterization. Closed contours are filled with the even-odd rule;
// the boundary gets an erf edge profile in the parity-signed distance, which is
// continuous as the outline sweeps across a pixel, so pixel values are smooth in
// the control points and admit exact vector-Jacobian products. The distance is a
// hard min over boundary edges: on the measure-zero ridges where two edges tie
// (e.g. vertex bisectors inside a convex corner) the gradient is a one-sided
// subgradient of the kinked value.

struct GlyphRenderParams {
    double edge_sigma = 1.0;      // transition width of the boundary, canvas units
    int samples_per_segment = 8;  // polyline density per cubic
    double cutoff_sigmas = 7.0;   // beyond this distance the fill is exactly 0/1

    void validate() const {
        if (!(edge_sigma > 0.0)) throw ConfigError("GlyphRenderParams: edge_sigma must be positive");
        if (samples_per_segment < 1) throw ConfigError("GlyphRenderParams: samples_per_segment must be >= 1");
        if (!(cutoff_sigmas > 0.0)) throw ConfigError("GlyphRenderParams: cutoff_sigmas must be positive");
    }
};

namespace detail {

inline std::vector<Point2> glyph_points(const GlyphOutline& g) {
    std::vector<Point2> pts;
    pts.reserve(g.control_point_count());
    for (const auto& c : g.contours) pts.insert(pts.end(), c.points.begin(), c.points.end());
    return pts;
}

inline void set_glyph_points(GlyphOutline& g, const std::vector<Point2>& pts) {
    if (pts.size() != g.control_point_count())
        throw std::invalid_argument("set_glyph_points: count mismatch");
    std::size_t i = 0;
    for (auto& c : g.contours)
        for (auto& p : c.points) p = pts[i++];
}

// Fixed-topology polyline of all contours with Bernstein bookkeeping, so pixel
// gradients can be pushed back onto the stored control points (wrapping at each
// contour's closing segment).
struct FlatGlyph {
    struct Vertex {
        Point2 p;
        std::array<int, 4> cp;    // global control-point indices of the segment
        std::array<double, 4> bw; // Bernstein weights at this sample
    };
    std::vector<Vertex> v;
    std::vector<std::array<int, 2>> edges;  // vertex index pairs
};

inline FlatGlyph flatten_glyph(const GlyphOutline& g, int samples_per_segment) {
    FlatGlyph f;
    int base = 0;
    for (const auto& c : g.contours) {
        const int m = int(c.points.size());
        if (m < 3 || m % 3 != 0)
            throw std::domain_error("render_glyph_fill: contour needs 3k control points (k >= 1)");
        const int nseg = m / 3;
        const int v0 = int(f.v.size());
        for (int s = 0; s < nseg; ++s) {
            const std::array<int, 4> cp{base + 3 * s, base + 3 * s + 1, base + 3 * s + 2,
                                        base + (3 * s + 3) % m};
            const CubicBezier bez = c.segment(std::size_t(s));
            for (int j = 0; j < samples_per_segment; ++j) {  // t in [0,1); t=1 is the next sample
                const double t = double(j) / samples_per_segment, u = 1.0 - t;
                f.v.push_back({evaluate_cubic(bez, t), cp,
                               {u * u * u, 3 * u * u * t, 3 * u * t * t, t * t * t}});
            }
        }
        const int nv = int(f.v.size()) - v0;
        for (int k = 0; k < nv; ++k) f.edges.push_back({v0 + k, v0 + (k + 1) % nv});
        base += m;
    }
    return f;
}

// Per-pixel nearest boundary edge (within cutoff) and even-odd parity.
struct GlyphFillField {
    std::vector<double> dist;
    std::vector<int> edge;  // -1 when farther than cutoff
    std::vector<double> tstar;
    std::vector<std::uint8_t> inside;
};

inline GlyphFillField glyph_fill_field(const FlatGlyph& f, int size, double cutoff) {
    const std::size_t npx = std::size_t(size) * size;
    GlyphFillField field;
    field.dist.assign(npx, std::numeric_limits<double>::infinity());
    field.edge.assign(npx, -1);
    field.tstar.assign(npx, 0.0);
    field.inside.assign(npx, 0);

    for (std::size_t e = 0; e < f.edges.size(); ++e) {
        const Point2 a = f.v[std::size_t(f.edges[e][0])].p, b = f.v[std::size_t(f.edges[e][1])].p;
        const int x0 = std::max(0, int(std::floor(std::min(a.x, b.x) - cutoff - 0.5)));
        const int x1 = std::min(size - 1, int(std::ceil(std::max(a.x, b.x) + cutoff - 0.5)));
        const int y0 = std::max(0, int(std::floor(std::min(a.y, b.y) - cutoff - 0.5)));
        const int y1 = std::min(size - 1, int(std::ceil(std::max(a.y, b.y) + cutoff - 0.5)));
        const Point2 ab = b - a;
        const double len2 = dot(ab, ab);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const Point2 pc{x + 0.5, y + 0.5};
                const double t = len2 > 0.0 ? std::clamp(dot(pc - a, ab) / len2, 0.0, 1.0) : 0.0;
                const double d = dist(pc, a + ab * t);
                const std::size_t px = std::size_t(y) * size + x;
                if (d < field.dist[px]) {
                    field.dist[px] = d;
                    field.edge[px] = int(e);
                    field.tstar[px] = t;
                }
            }
    }

    // even-odd parity per row: pixel centers left of an odd number of crossings
    std::vector<double> xs;
    for (int y = 0; y < size; ++y) {
        const double yc = y + 0.5;
        xs.clear();
        for (const auto& ed : f.edges) {
            const Point2 a = f.v[std::size_t(ed[0])].p, b = f.v[std::size_t(ed[1])].p;
            if ((a.y > yc) != (b.y > yc)) xs.push_back(a.x + (yc - a.y) / (b.y - a.y) * (b.x - a.x));
        }
        std::sort(xs.begin(), xs.end());
        std::size_t k = 0;
        for (int x = 0; x < size; ++x) {
            while (k < xs.size() && xs[k] <= x + 0.5) ++k;
            field.inside[std::size_t(y) * size + x] = std::uint8_t(k & 1);
        }
    }
    return field;
}

}  // namespace detail

// White background 1.0, ink 0.0, single channel.
inline RasterImage render_glyph_fill(const GlyphOutline& g, int size,
                                     const GlyphRenderParams& prm = {}) {
    prm.validate();
    if (size <= 0) throw std::domain_error("render_glyph_fill: size must be positive");
    RasterImage img(size, size, 1, 1.0);
    if (g.contours.empty()) return img;
    const detail::FlatGlyph f = detail::flatten_glyph(g, prm.samples_per_segment);
    const double cutoff = prm.cutoff_sigmas * prm.edge_sigma;
    const detail::GlyphFillField field = detail::glyph_fill_field(f, size, cutoff);
    const double inv = 1.0 / (prm.edge_sigma * std::sqrt(2.0));
    for (std::size_t px = 0; px < field.dist.size(); ++px) {
        double ink;
        if (field.edge[px] < 0 || field.dist[px] > cutoff)
            ink = field.inside[px] ? 1.0 : 0.0;
        else {
            const double s = field.inside[px] ? -field.dist[px] : field.dist[px];
            ink = 0.5 * std::erfc(s * inv);
        }
        img.data[px] = 1.0 - ink;
    }
    return img;
}

// Vector-Jacobian product of render_glyph_fill against `upstream` (one value per
// pixel): d(loss)/d(control point), contour-major. If `out_image` is given the
// forward render is stored there.
inline std::vector<Point2> glyph_fill_grads(const GlyphOutline& g, const RasterImage& upstream,
                                            int size, const GlyphRenderParams& prm = {},
                                            RasterImage* out_image = nullptr) {
    prm.validate();
    if (size <= 0) throw std::domain_error("glyph_fill_grads: size must be positive");
    if (upstream.height != size || upstream.width != size || upstream.channels != 1)
        throw std::invalid_argument("glyph_fill_grads: upstream shape mismatch");
    std::vector<Point2> grads(g.control_point_count(), Point2{});
    if (out_image) *out_image = RasterImage(size, size, 1, 1.0);
    if (g.contours.empty()) return grads;

    const detail::FlatGlyph f = detail::flatten_glyph(g, prm.samples_per_segment);
    const double cutoff = prm.cutoff_sigmas * prm.edge_sigma;
    const detail::GlyphFillField field = detail::glyph_fill_field(f, size, cutoff);
    const double inv = 1.0 / (prm.edge_sigma * std::sqrt(2.0));
    const double phi_norm = 1.0 / (prm.edge_sigma * std::sqrt(2.0 * M_PI));

    for (std::size_t px = 0; px < field.dist.size(); ++px) {
        const double d = field.dist[px];
        const bool edged = field.edge[px] >= 0 && d <= cutoff;
        if (out_image) {
            const double ink = edged ? 0.5 * std::erfc((field.inside[px] ? -d : d) * inv)
                                     : (field.inside[px] ? 1.0 : 0.0);
            out_image->data[px] = 1.0 - ink;
        }
        if (!edged || d <= 0.0) continue;
        const double gpix = upstream.data[px];
        if (gpix == 0.0) continue;
        const double s = field.inside[px] ? -d : d;
        // pixel = 1 - ink(s); d(pixel)/d(s) = phi(s)
        const double gs = gpix * phi_norm * std::exp(-0.5 * s * s / (prm.edge_sigma * prm.edge_sigma));
        const double gd = field.inside[px] ? -gs : gs;

        const auto& ed = f.edges[std::size_t(field.edge[px])];
        const detail::FlatGlyph::Vertex& va = f.v[std::size_t(ed[0])];
        const detail::FlatGlyph::Vertex& vb = f.v[std::size_t(ed[1])];
        const double t = field.tstar[px];
        const int y = int(px / std::size_t(size)), x = int(px % std::size_t(size));
        const Point2 pc{x + 0.5, y + 0.5};
        const Point2 q = va.p + (vb.p - va.p) * t;
        const Point2 u = (pc - q) * (1.0 / d);  // d(dist)/d(q) = -u
        const Point2 ga = u * (-(1.0 - t) * gd);
        const Point2 gb = u * (-t * gd);
        for (int j = 0; j < 4; ++j) {
            grads[std::size_t(va.cp[j])] += ga * va.bw[j];
            grads[std::size_t(vb.cp[j])] += gb * vb.bw[j];
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Angle-preservation loss over a frozen triangulation: mean over control points
// of the summed squared change of every incident triangle angle. Invariant to
// rigid motion and uniform scaling of the deformed points.

namespace detail {

constexpr double kAngleEdgeClamp = 1e-12;

// Interior angle at `a` between rays a->b and a->c, with optional gradients.
// Edge lengths are clamped at kAngleEdgeClamp so collapsed triangles yield the
// limit angle with zero blow-up; `degenerate` is set when the clamp engaged.
inline double triangle_angle(Point2 a, Point2 b, Point2 c, Point2* ga = nullptr,
                             Point2* gb = nullptr, Point2* gc = nullptr,
                             bool* degenerate = nullptr) {
    const Point2 u = b - a, v = c - a;
    const double z = cross(u, v), w = dot(u, v);
    const double lu2 = dot(u, u), lv2 = dot(v, v);
    constexpr double kClamp2 = kAngleEdgeClamp * kAngleEdgeClamp;
    if (degenerate && (lu2 < kClamp2 || lv2 < kClamp2)) *degenerate = true;
    const double ang = std::atan2(std::abs(z), w);
    if (ga) {
        // theta = atan2(|z|, w); z^2 + w^2 = |u|^2 |v|^2 exactly
        const double denom = std::max(lu2, kClamp2) * std::max(lv2, kClamp2);
        const double sgn = z >= 0.0 ? 1.0 : -1.0;
        const double cz = w * sgn / denom, cw = -std::abs(z) / denom;
        const Point2 gu{cz * v.y + cw * v.x, -cz * v.x + cw * v.y};
        const Point2 gv{-cz * u.y + cw * u.x, cz * u.x + cw * u.y};
        *ga = (gu + gv) * -1.0;
        *gb = gu;
        *gc = gv;
    }
    return ang;
}

}  // namespace detail

// Optionally reports via `degenerate_triangles` how many triangles collapsed at
// p_hat (a zero-length edge); their angles take the limit value.
inline double acap_loss_grad(const std::vector<Point2>& p_init, const std::vector<Point2>& p_hat,
                             const Triangulation& tri, std::vector<Point2>* grad_hat,
                             int* degenerate_triangles = nullptr) {
    if (p_init.size() != p_hat.size() || p_init.size() != tri.points.size())
        throw std::invalid_argument("acap_loss: point count mismatch");
    if (p_init.empty()) throw std::domain_error("acap_loss: no points");
    if (grad_hat) grad_hat->assign(p_hat.size(), Point2{});
    if (degenerate_triangles) *degenerate_triangles = 0;
    const double k = double(p_init.size());
    double acc = 0.0;
    for (const auto& t : tri.triangles) {
        bool degen = false;
        for (int e = 0; e < 3; ++e) {
            const int ia = t[e], ib = t[(e + 1) % 3], ic = t[(e + 2) % 3];
            const double a0 = detail::triangle_angle(p_init[ia], p_init[ib], p_init[ic]);
            Point2 ga, gb, gc;
            const double a1 = detail::triangle_angle(p_hat[ia], p_hat[ib], p_hat[ic],
                                                     grad_hat ? &ga : nullptr, &gb, &gc, &degen);
            const double d = a0 - a1;
            acc += d * d;
            if (grad_hat) {
                const double cg = -2.0 * d / k;
                (*grad_hat)[ia] += ga * cg;
                (*grad_hat)[ib] += gb * cg;
                (*grad_hat)[ic] += gc * cg;
            }
        }
        if (degen && degenerate_triangles) ++*degenerate_triangles;
    }
    return acc / k;
}

inline double acap_loss(const std::vector<Point2>& p_init, const std::vector<Point2>& p_hat,
                        const Triangulation& tri, int* degenerate_triangles = nullptr) {
    return acap_loss_grad(p_init, p_hat, tri, nullptr, degenerate_triangles);
}

// ---------------------------------------------------------------------------
// Tone loss: squared L2 between low-passed images. Symmetric; zero iff the
// blurred images agree.

inline double tone_loss(const RasterImage& a, const RasterImage& b, double sigma) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw std::invalid_argument("tone_loss: image shape mismatch");
    const RasterImage la = low_pass(a, sigma), lb = low_pass(b, sigma);
    double acc = 0.0;
    for (std::size_t i = 0; i < la.size(); ++i) acc += sq(la.data[i] - lb.data[i]);
    return acc;
}

// Same, plus d(loss)/d(b) through the blur's adjoint.
inline double tone_loss_grad(const RasterImage& a, const RasterImage& b, double sigma,
                             RasterImage* grad_b) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw std::invalid_argument("tone_loss: image shape mismatch");
    const RasterImage la = low_pass(a, sigma), lb = low_pass(b, sigma);
    double acc = 0.0;
    RasterImage diff(b.height, b.width, b.channels);
    for (std::size_t i = 0; i < la.size(); ++i) {
        const double d = lb.data[i] - la.data[i];
        acc += d * d;
        diff.data[i] = 2.0 * d;
    }
    if (grad_b) *grad_b = low_pass_adjoint(diff, sigma);
    return acc;
}

// ---------------------------------------------------------------------------
// Configuration

struct WordAsImageConfig {
    double acap_weight = 0.5;  // alpha in the combined objective
    double lpf_sigma = 30.0;
    int iterations = 500;
    int warmup_iters = 100;
    double lr_start = 0.1, lr_peak = 0.8, lr_end = 0.4;
    int render_size = 600;
    int crop_size = 512;
    int codec_size = 64;  // side the latent codec expects; the crop is resized to it
    double perspective_distortion = 0.5;
    double perspective_prob = 0.7;
    double sds_weight = 1.0;
    std::string prompt_suffix = ". minimal flat 2d vector. lineal color. trending on artstation.";
    ToneScheduleParams tone;
    GlyphRenderParams fill;

    void validate() const {
        if (acap_weight < 0.0) throw ConfigError("WordAsImageConfig: acap_weight must be >= 0");
        if (!(lpf_sigma > 0.0)) throw ConfigError("WordAsImageConfig: lpf_sigma must be positive");
        if (iterations < 0) throw ConfigError("WordAsImageConfig: iterations must be >= 0");
        if (warmup_iters < 0) throw ConfigError("WordAsImageConfig: warmup_iters must be >= 0");
        if (!(lr_start > 0.0) || !(lr_peak > 0.0) || !(lr_end > 0.0))
            throw ConfigError("WordAsImageConfig: learning rates must be positive");
        if (render_size <= 0 || codec_size <= 0)
            throw ConfigError("WordAsImageConfig: sizes must be positive");
        if (crop_size <= 0 || crop_size > render_size)
            throw ConfigError("WordAsImageConfig: crop must fit inside the render");
        if (sds_weight < 0.0) throw ConfigError("WordAsImageConfig: sds_weight must be >= 0");
        tone.validate();
        fill.validate();
    }

    // Linear warmup lr_start -> lr_peak over warmup_iters, then exponential decay
    // reaching lr_end exactly at the final iteration.
    double lr_at(int it) const {
        const int warm = std::min(warmup_iters, iterations);
        if (it < warm) return lr_start + (lr_peak - lr_start) * double(it) / double(std::max(1, warm));
        const int rest = iterations - warm;
        if (rest <= 0) return lr_peak;
        const double frac = double(it - warm + 1) / double(rest);
        return lr_peak * std::pow(lr_end / lr_peak, frac);
    }
};

// ---------------------------------------------------------------------------
// Letter task: a subdivided glyph positioned in render coordinates, the frozen
// triangulation of its initial control points (control-polygon edges of each
// contour as constraints), and the guidance prompt.

struct LetterTask {
    std::string word;
    int letter_index = 0;
    GlyphOutline glyph;
    Triangulation triangulation;
    std::string prompt;

    void validate() const {
        if (word.empty()) throw ConfigError("LetterTask: empty word");
        if (letter_index < 0 || letter_index >= int(word.size()))
            throw ConfigError("LetterTask: letter_index outside word");
        if (triangulation.points.size() != glyph.control_point_count())
            throw ConfigError("LetterTask: triangulation does not match glyph control points");
    }
};

// Fits the glyph into the render frame (10% margin), subdivides to the target
// control-point count (default 20 per contour), triangulates, builds the prompt.
inline LetterTask make_letter_task(const std::string& word, int letter_index, GlyphOutline glyph,
                                   const WordAsImageConfig& cfg, std::size_t target_points = 0) {
    cfg.validate();
    if (word.empty()) throw ConfigError("make_letter_task: empty word");
    if (letter_index < 0 || letter_index >= int(word.size()))
        throw ConfigError("make_letter_task: letter_index outside word");
    const double margin = 0.1 * cfg.render_size;
    glyph = fit_into_box(std::move(glyph),
                         Box2{{margin, margin},
                              {cfg.render_size - margin, cfg.render_size - margin}});
    if (target_points == 0) target_points = 20 * glyph.contours.size();
    glyph = subdivide_outline(std::move(glyph), target_points);

    std::vector<std::array<int, 2>> boundary;
    int base = 0;
    for (const auto& c : glyph.contours) {
        const int m = int(c.points.size());
        for (int i = 0; i < m; ++i) boundary.push_back({base + i, base + (i + 1) % m});
        base += m;
    }
    LetterTask task;
    task.word = word;
    task.letter_index = letter_index;
    task.triangulation = triangulate_constrained(detail::glyph_points(glyph), boundary);
    task.glyph = std::move(glyph);
    task.prompt = word + cfg.prompt_suffix;
    task.validate();
    return task;
}

// ---------------------------------------------------------------------------
// Objective: score-distillation through the filled rasterizer plus the two
// shape-keeping terms. Only control-point coordinates receive gradients.

struct TypoBackends {
    const LatentCodec* codec = nullptr;
    DenoisePredictor* predictor = nullptr;
    NoiseSchedule schedule;

    void validate() const {
        if (!codec || !predictor) throw ConfigError("TypoBackends: codec and predictor required");
        schedule.validate();
    }
};

struct LetterState {
    LetterTask task;
    GlyphOutline current;     // deformed glyph being optimized
    RasterImage orig_raster;  // render of the initial glyph, cached for the tone term
};

inline LetterState make_letter_state(const LetterTask& task, const WordAsImageConfig& cfg) {
    task.validate();
    cfg.validate();
    return {task, task.glyph, render_glyph_fill(task.glyph, cfg.render_size, cfg.fill)};
}

struct LetterObjective {
    double acap = 0.0;       // unweighted term values
    double tone = 0.0;       // zero when the tone weight is zero (term skipped)
    double tone_beta = 0.0;  // tone weight applied at this iteration
    std::vector<Point2> grad;  // combined d/d(control point), contour-major
};

// One evaluation at optimization step `iteration`. Draws, in order: the diffusion
// timestep (uniform on 1..T), the augmentation, then the noise inside the
// distillation step — callers that need replay clone the stream.
inline LetterObjective letter_objective(const LetterState& state, int iteration,
                                        const TypoBackends& backends, const WordAsImageConfig& cfg,
                                        RandomStream& rng) {
    backends.validate();
    cfg.validate();
    if (iteration < 0) throw std::domain_error("letter_objective: iteration must be >= 0");
    const std::size_t n = state.current.control_point_count();
    LetterObjective out;
    out.grad.assign(n, Point2{});

    const int t_diff = int(rng.uniform_index(std::uint64_t(backends.schedule.T))) + 1;
    AugmentConfig aug;
    aug.perspective_distortion = cfg.perspective_distortion;
    aug.perspective_prob = cfg.perspective_prob;
    aug.crop_width = cfg.crop_size;
    aug.crop_height = cfg.crop_size;
    const AugmentTransform tf = sample_augment(cfg.render_size, cfg.render_size, aug, rng);

    const RasterImage raster = render_glyph_fill(state.current, cfg.render_size, cfg.fill);
    const RasterImage aug_img = apply_augment(raster, tf);
    const bool resized = cfg.crop_size != cfg.codec_size;
    const RasterImage fed =
        resized ? resize_bilinear(aug_img, cfg.codec_size, cfg.codec_size) : aug_img;

    TextCondition cond;
    cond.prompt = state.task.prompt;
    const RasterImage g_latent = latent_sds_step(*backends.codec, *backends.predictor, fed, cond,
                                                 t_diff, rng, backends.schedule, cfg.sds_weight);
    const RasterImage g_aug =
        resized ? resize_bilinear_adjoint(g_latent, cfg.crop_size, cfg.crop_size) : g_latent;
    RasterImage g_raster = augment_adjoint(g_aug, tf);

    out.tone_beta = tone_weight(iteration, cfg.tone);
    if (out.tone_beta != 0.0) {
        RasterImage g_tone;
        out.tone = tone_loss_grad(state.orig_raster, raster, cfg.lpf_sigma, &g_tone);
        for (std::size_t i = 0; i < g_raster.size(); ++i)
            g_raster.data[i] += out.tone_beta * g_tone.data[i];
    }

    out.grad = glyph_fill_grads(state.current, g_raster, cfg.render_size, cfg.fill);

    std::vector<Point2> g_acap;
    out.acap = acap_loss_grad(state.task.triangulation.points, detail::glyph_points(state.current),
                              state.task.triangulation, &g_acap);
    for (std::size_t i = 0; i < n; ++i) out.grad[i] += g_acap[i] * cfg.acap_weight;
    return out;
}

// Full per-letter optimization; deterministic given the stream's seed.
inline GlyphOutline optimize_letter(const LetterTask& task, const WordAsImageConfig& cfg,
                                    const TypoBackends& backends, RandomStream& rng) {
    cfg.validate();
    backends.validate();
    LetterState state = make_letter_state(task, cfg);
    const std::size_t n = state.current.control_point_count();
    if (n == 0) throw ConfigError("optimize_letter: glyph has no control points");

    AdamConfig acfg;
    acfg.lr = cfg.lr_start;
    acfg.beta1 = 0.9;
    acfg.beta2 = 0.9;
    acfg.eps = 1e-6;
    Adam opt(2 * n, acfg);
    std::vector<double> params(2 * n), grads(2 * n);
    std::vector<Point2> pts = detail::glyph_points(state.current);
    for (std::size_t i = 0; i < n; ++i) {
        params[2 * i] = pts[i].x;
        params[2 * i + 1] = pts[i].y;
    }
    for (int it = 0; it < cfg.iterations; ++it) {
        const LetterObjective obj = letter_objective(state, it, backends, cfg, rng);
        for (std::size_t i = 0; i < n; ++i) {
            grads[2 * i] = obj.grad[i].x;
            grads[2 * i + 1] = obj.grad[i].y;
        }
        opt.set_lr(cfg.lr_at(it));
        opt.step(params, grads);
        for (std::size_t i = 0; i < n; ++i) pts[i] = {params[2 * i], params[2 * i + 1]};
        detail::set_glyph_points(state.current, pts);
    }
    return state.current;
}

// ---------------------------------------------------------------------------
// Word layout and reassembly

struct WordLayout {
    std::vector<GlyphOutline> letters;  // positioned in a shared canvas space
    int canvas_width = 0, canvas_height = 0;
};

// Left-to-right placement: each glyph keeps its aspect ratio at the shared letter
// height, neighbors separated by `gap`.
inline WordLayout layout_word(const std::vector<GlyphOutline>& glyphs, double letter_height,
                              double gap, double margin = 0.0) {
    if (glyphs.empty()) throw ConfigError("layout_word: no glyphs");
    if (!(letter_height > 0.0) || gap < 0.0 || margin < 0.0)
        throw ConfigError("layout_word: bad dimensions");
    WordLayout out;
    double x = margin;
    for (const auto& g : glyphs) {
        const Box2 b = bbox(g);
        const double aspect = b.height() > 0.0 ? b.width() / b.height() : 1.0;
        const double w = std::max(aspect * letter_height, 1e-9);
        out.letters.push_back(
            fit_into_box(g, Box2{{x, margin}, {x + w, margin + letter_height}}));
        x += w + gap;
    }
    out.canvas_width = int(std::ceil(x - gap + margin));
    out.canvas_height = int(std::ceil(letter_height + 2.0 * margin));
    return out;
}

// Replaced letters are refit into the original letter's bounding box (centers
// aligned), so spacing between letters is preserved.
inline WordLayout assemble_word_layout(const WordLayout& original,
                                       const std::map<int, GlyphOutline>& replacements) {
    WordLayout out = original;
    for (const auto& [idx, g] : replacements) {
        if (idx < 0 || idx >= int(original.letters.size()))
            throw std::out_of_range("assemble_word: letter index out of range");
        out.letters[std::size_t(idx)] = fit_into_box(g, bbox(original.letters[std::size_t(idx)]));
    }
    return out;
}

// Each contour becomes one closed stroke (the first point repeated at the end).
inline VectorSketch word_to_sketch(const WordLayout& layout, double stroke_width = 1.0) {
    VectorSketch sk;
    sk.canvas_width = layout.canvas_width;
    sk.canvas_height = layout.canvas_height;
    for (const auto& g : layout.letters)
        for (const auto& c : g.contours) {
            if (c.points.empty()) continue;
            Stroke s;
            s.width = stroke_width;
            s.points = c.points;
            s.points.push_back(c.points[0]);
            sk.strokes.push_back(std::move(s));
        }
    return sk;
}

inline VectorSketch assemble_word(const WordLayout& original,
                                  const std::map<int, GlyphOutline>& replacements,
                                  double stroke_width = 1.0) {
    return word_to_sketch(assemble_word_layout(original, replacements), stroke_width);
}

}  // namespace vecsketch
