#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "vecsketch/common.hpp"
#include "vecsketch/geometry.hpp"
#include "vecsketch/guidance.hpp"
#include "vecsketch/mlp.hpp"
#include "vecsketch/optim.hpp"
#include "vecsketch/raster.hpp"

// Sketch animation: a neural displacement field turns a static sketch into k
// frames of control-point offsets. A shared point embedding feeds two paths —
// an unconstrained per-point ("local") head and a per-frame affine ("global")
// head — and training alternates between them against a text-to-video
// distillation signal over the rendered frame stack.

namespace vecsketch {

// Per-component attenuation of the global transform. Zeroing one freezes that
// aspect of the motion (e.g. translation = 0 keeps the subject in place).
struct LambdaScales {
    double translation = 1.0;
    double rotation = 1e-2;
    double scale = 5e-2;
    double shear = 1e-1;

    void validate() const {
        if (translation < 0.0 || rotation < 0.0 || scale < 0.0 || shear < 0.0)
            throw ConfigError("LambdaScales: components must be >= 0");
    }
};

// Raw per-frame transform parameters as the network emits them (before the
// lambda attenuation). Neutral values describe the identity transform.
struct AffineParams {
    double sx = 1.0, sy = 1.0;    // scale
    double shx = 0.0, shy = 0.0;  // shear
    double theta = 0.0;           // rotation, radians
    double dx = 0.0, dy = 0.0;    // translation

    static AffineParams from_raw(const std::array<double, 7>& r) {
        return {r[0], r[1], r[2], r[3], r[4], r[5], r[6]};
    }
    std::array<double, 7> to_raw() const { return {sx, sy, shx, shy, theta, dx, dy}; }
    bool finite() const {
        for (double v : to_raw())
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// Row-major 3x3 homogeneous transform (last row assumed 0 0 1 when applying).
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    Point2 apply(Point2 p) const {
        return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
    }
};

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += a.m[r * 3 + k] * b.m[k * 3 + c];
            out.m[r * 3 + c] = acc;
        }
    return out;
}

// Translate(lam_t*d) . Rotate(lam_r*theta) . Shear(lam_sh*sh) . Scale(1+lam_s*(s-1)),
// conjugated so the scale/shear/rotation pivot on `center`. Neutral parameters
// give the exact identity for any lambdas, and `center` is a fixed point
// whenever the effective translation is zero.
inline Mat3 compose_global_transform(const AffineParams& prm, const LambdaScales& lam,
                                     Point2 center) {
    lam.validate();
    const double sxe = 1.0 + lam.scale * (prm.sx - 1.0);
    const double sye = 1.0 + lam.scale * (prm.sy - 1.0);
    const double shx = lam.shear * prm.shx, shy = lam.shear * prm.shy;
    const double th = lam.rotation * prm.theta;
    const double tx = lam.translation * prm.dx, ty = lam.translation * prm.dy;
    const double c = std::cos(th), s = std::sin(th);

    // A = R * Sh * S (2x2); applied about the pivot, then translated
    const double a00 = (c - s * shy) * sxe, a01 = (c * shx - s) * sye;
    const double a10 = (s + c * shy) * sxe, a11 = (s * shx + c) * sye;

    Mat3 out;
    out.m = {a00, a01, center.x + tx - (a00 * center.x + a01 * center.y),
             a10, a11, center.y + ty - (a10 * center.x + a11 * center.y),
             0.0, 0.0, 1.0};
    return out;
}

// Per-frame, per-point displacement from applying each frame's transform to the
// initial points: delta = T_j(p) - p.
inline std::vector<std::vector<Point2>> global_displacements(const std::vector<Mat3>& transforms,
                                                             const std::vector<Point2>& p_init) {
    std::vector<std::vector<Point2>> out(transforms.size());
    for (std::size_t j = 0; j < transforms.size(); ++j) {
        out[j].resize(p_init.size());
        for (std::size_t i = 0; i < p_init.size(); ++i)
            out[j][i] = transforms[j].apply(p_init[i]) - p_init[i];
    }
    return out;
}

// Sinusoidal code over the (frame, point) pair: the first dim/2 entries encode
// the frame index, the rest the point order, each half as interleaved
// sin/cos at geometrically spaced frequencies (10000^(-2m/half)).
inline std::vector<double> positional_encoding(int frame_idx, int point_idx, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw std::domain_error("positional_encoding: dim must be even and positive");
    std::vector<double> out(std::size_t(dim), 0.0);
    const int half = dim / 2;
    auto fill = [&](int offset, double idx) {
        for (int j = 0; j < half; ++j) {
            const double freq = std::pow(10000.0, -2.0 * double(j / 2) / double(half));
            out[std::size_t(offset + j)] =
                (j % 2 == 0) ? std::sin(idx * freq) : std::cos(idx * freq);
        }
    };
    fill(0, double(frame_idx));
    fill(half, double(point_idx));
    return out;
}

// ---------------------------------------------------------------------------
// FrameSet: the animation itself (shared base points + per-frame offsets)

struct FrameSet {
    std::vector<Point2> base_points;                 // N points, shared by all frames
    int k = 0;                                       // frame count
    std::vector<std::vector<Point2>> displacements;  // k x N

    void validate() const {
        if (k < 0 || displacements.size() != std::size_t(k))
            throw ConfigError("FrameSet: frame count mismatch");
        for (const auto& d : displacements) {
            if (d.size() != base_points.size()) throw ConfigError("FrameSet: point count mismatch");
            for (const Point2& p : d)
                if (!std::isfinite(p.x) || !std::isfinite(p.y))
                    throw ConfigError("FrameSet: non-finite displacement");
        }
        for (const Point2& p : base_points)
            if (!std::isfinite(p.x) || !std::isfinite(p.y))
                throw ConfigError("FrameSet: non-finite base point");
    }

    std::vector<Point2> frame_points(int j) const {
        if (j < 0 || j >= k) throw std::out_of_range("FrameSet: frame index");
        std::vector<Point2> out(base_points.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = base_points[i] + displacements[std::size_t(j)][i];
        return out;
    }
};

// ---------------------------------------------------------------------------
// Neural displacement field

// Widths: shared projection 2 -> hidden (a bare linear map, summed with the
// positional code), heads hidden -> hidden -> out with a SeLU in between.
// Output layers start zeroed — the local head emits no offset and the global
// head emits exactly the neutral affine parameters (identity bias) — so the
// initial animation is the static input sketch.
class MotionField {
  public:
    MotionField(int hidden, Box2 domain, std::uint64_t seed)
        : hidden_(hidden),
          domain_(domain),
          shared_({2, hidden}, {Act::Identity}, splitmix64(seed ^ 0x736861726564ull)),
          local_({hidden, hidden, 2}, {Act::SeLU, Act::Identity},
                 splitmix64(seed ^ 0x6c6f63616cull)),
          global_({hidden, hidden, 7}, {Act::SeLU, Act::Identity},
                  splitmix64(seed ^ 0x676c6f62616cull)) {
        if (hidden <= 0 || hidden % 2 != 0)
            throw ConfigError("MotionField: hidden width must be positive and even");
        if (!(domain.max.x > domain.min.x) || !(domain.max.y > domain.min.y))
            throw ConfigError("MotionField: empty domain");
        local_.zero_layer(1);
        global_.zero_layer(1);
        global_.set_bias(1, {1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    }

    struct Prediction {
        std::vector<std::vector<Point2>> delta_local;   // k x N
        std::vector<std::vector<Point2>> delta_global;  // k x N
        std::vector<std::vector<Point2>> delta;         // sum of the two, k x N
        std::vector<AffineParams> affine;               // raw per-frame parameters
        std::vector<Mat3> transforms;                   // composed with the lambdas
        Point2 pivot;                                   // bbox center of the base points
    };

    // Forward pass for all frames; deterministic in the parameters.
    Prediction predict(const std::vector<Point2>& z_init, int frames, const LambdaScales& lam) {
        if (z_init.empty()) throw ConfigError("MotionField: no points");
        if (frames <= 0) throw ConfigError("MotionField: frame count must be positive");
        lam.validate();
        const std::size_t n = z_init.size();
        Prediction out;
        out.pivot = bbox_of_points(z_init).center();
        out.delta_local.resize(std::size_t(frames));
        out.affine.resize(std::size_t(frames));
        out.transforms.resize(std::size_t(frames));
        for (int j = 0; j < frames; ++j) {
            std::vector<double> pooled(std::size_t(hidden_), 0.0);
            out.delta_local[std::size_t(j)].resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::vector<double> feat = feature(z_init[i], j, int(i));
                for (int h = 0; h < hidden_; ++h) pooled[std::size_t(h)] += feat[std::size_t(h)];
                const std::vector<double> off = local_.forward(feat);
                out.delta_local[std::size_t(j)][i] = {off[0], off[1]};
            }
            for (double& v : pooled) v /= double(n);
            const std::vector<double> raw = global_.forward(pooled);
            std::array<double, 7> r;
            std::copy_n(raw.begin(), 7, r.begin());
            out.affine[std::size_t(j)] = AffineParams::from_raw(r);
            out.transforms[std::size_t(j)] =
                compose_global_transform(out.affine[std::size_t(j)], lam, out.pivot);
        }
        out.delta_global = global_displacements(out.transforms, z_init);
        out.delta.resize(std::size_t(frames));
        for (int j = 0; j < frames; ++j) {
            out.delta[std::size_t(j)].resize(n);
            for (std::size_t i = 0; i < n; ++i)
                out.delta[std::size_t(j)][i] =
                    out.delta_local[std::size_t(j)][i] + out.delta_global[std::size_t(j)][i];
        }
        return out;
    }

    // Accumulates parameter gradients for d(loss)/d(delta) of a previous
    // predict() with the same inputs. Gradients add up until zero_grad().
    void backward(const std::vector<Point2>& z_init, int frames, const LambdaScales& lam,
                  const Prediction& pred, const std::vector<std::vector<Point2>>& g_delta) {
        const std::size_t n = z_init.size();
        if (g_delta.size() != std::size_t(frames)) throw std::invalid_argument("MotionField: gradient frame count");
        const Point2 c = pred.pivot;
        for (int j = 0; j < frames; ++j) {
            const auto& g = g_delta[std::size_t(j)];
            if (g.size() != n) throw std::invalid_argument("MotionField: gradient point count");

            // global path: reduce the per-point pulls onto the 7 raw parameters
            const AffineParams& prm = pred.affine[std::size_t(j)];
            const double sxe = 1.0 + lam.scale * (prm.sx - 1.0);
            const double sye = 1.0 + lam.scale * (prm.sy - 1.0);
            const double shx = lam.shear * prm.shx, shy = lam.shear * prm.shy;
            const double th = lam.rotation * prm.theta;
            const double co = std::cos(th), si = std::sin(th);
            // S1 = sum g_i, S2 = sum g_i (p_i - c)^T
            double s1x = 0.0, s1y = 0.0, s200 = 0.0, s201 = 0.0, s210 = 0.0, s211 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double qx = z_init[i].x - c.x, qy = z_init[i].y - c.y;
                s1x += g[i].x;
                s1y += g[i].y;
                s200 += g[i].x * qx;
                s201 += g[i].x * qy;
                s210 += g[i].y * qx;
                s211 += g[i].y * qy;
            }
            auto frob = [&](double d00, double d01, double d10, double d11) {
                return d00 * s200 + d01 * s201 + d10 * s210 + d11 * s211;
            };
            std::vector<double> g_raw(7);
            // dA/d(sx_raw) = lam_s * (R*Sh) e0 e0^T, likewise sy on column 1
            g_raw[0] = lam.scale * frob(co - si * shy, 0.0, si + co * shy, 0.0);
            g_raw[1] = lam.scale * frob(0.0, co * shx - si, 0.0, si * shx + co);
            // dA/d(shx_raw) = lam_sh * R E01 S, dA/d(shy_raw) = lam_sh * R E10 S
            g_raw[2] = lam.shear * frob(0.0, co * sye, 0.0, si * sye);
            g_raw[3] = lam.shear * frob(-si * sxe, 0.0, co * sxe, 0.0);
            // dA/d(theta_raw) = lam_r * R' Sh S
            g_raw[4] = lam.rotation * frob((-si - co * shy) * sxe, (-si * shx - co) * sye,
                                           (co - si * shy) * sxe, (co * shx - si) * sye);
            g_raw[5] = lam.translation * s1x;
            g_raw[6] = lam.translation * s1y;

            std::vector<double> pooled(std::size_t(hidden_), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const std::vector<double> feat = feature(z_init[i], j, int(i));
                for (int h = 0; h < hidden_; ++h) pooled[std::size_t(h)] += feat[std::size_t(h)];
            }
            for (double& v : pooled) v /= double(n);
            global_.forward(pooled);  // restore caches for this frame
            std::vector<double> g_pool = global_.backward(g_raw);
            for (double& v : g_pool) v /= double(n);

            // local path + shared projection, one sample at a time
            for (std::size_t i = 0; i < n; ++i) {
                const std::vector<double> feat = feature(z_init[i], j, int(i));
                local_.forward(feat);
                std::vector<double> g_feat = local_.backward({g[i].x, g[i].y});
                for (int h = 0; h < hidden_; ++h) g_feat[std::size_t(h)] += g_pool[std::size_t(h)];
                shared_.forward(normalized(z_init[i]));
                shared_.backward(g_feat);  // input gradient unused: points are fixed
            }
        }
    }

    void zero_grad() {
        shared_.zero_grad();
        local_.zero_grad();
        global_.zero_grad();
    }

    Mlp& shared() { return shared_; }
    Mlp& local_head() { return local_; }
    Mlp& global_head() { return global_; }
    int hidden() const { return hidden_; }

  private:
    std::vector<double> normalized(Point2 p) const {
        return {2.0 * (p.x - domain_.min.x) / (domain_.max.x - domain_.min.x) - 1.0,
                2.0 * (p.y - domain_.min.y) / (domain_.max.y - domain_.min.y) - 1.0};
    }
    std::vector<double> feature(Point2 p, int frame, int point) {
        std::vector<double> f = shared_.forward(normalized(p));
        const std::vector<double> pe = positional_encoding(frame, point, hidden_);
        for (int h = 0; h < hidden_; ++h) f[std::size_t(h)] += pe[std::size_t(h)];
        return f;
    }

    int hidden_;
    Box2 domain_;
    Mlp shared_, local_, global_;
};

inline MotionField::Prediction predict_displacements(MotionField& field,
                                                     const std::vector<Point2>& z_init, int frames,
                                                     const LambdaScales& lam) {
    return field.predict(z_init, frames, lam);
}

// ---------------------------------------------------------------------------
// Video rendering and the distillation step

namespace detail {

inline std::vector<Point2> sketch_points(const VectorSketch& sk) {
    std::vector<Point2> out;
    for (const auto& s : sk.strokes) out.insert(out.end(), s.points.begin(), s.points.end());
    return out;
}

inline void set_sketch_points(VectorSketch& sk, const std::vector<Point2>& pts) {
    std::size_t i = 0;
    for (auto& s : sk.strokes)
        for (auto& p : s.points) {
            if (i >= pts.size()) throw std::invalid_argument("set_sketch_points: count mismatch");
            p = pts[i++];
        }
    if (i != pts.size()) throw std::invalid_argument("set_sketch_points: count mismatch");
}

}  // namespace detail

// Renders every frame of the animation with the template's stroke structure
// (widths, opacities, colors, canvas); only the points move.
inline std::vector<RasterImage> render_video(const FrameSet& frames, const VectorSketch& tmpl,
                                             const SoftRasterConfig& cfg) {
    frames.validate();
    if (detail::sketch_points(tmpl).size() != frames.base_points.size())
        throw std::invalid_argument("render_video: template point count mismatch");
    std::vector<RasterImage> out;
    out.reserve(std::size_t(frames.k));
    VectorSketch work = tmpl;
    for (int j = 0; j < frames.k; ++j) {
        detail::set_sketch_points(work, frames.frame_points(j));
        out.push_back(render(work, cfg));
    }
    return out;
}

// One distillation evaluation over a frame stack: noise the flattened video at
// timestep t, query the predictor, return w*(eps_hat - eps) reshaped per frame.
inline std::vector<RasterImage> video_sds_step(VideoDenoisePredictor& predictor,
                                               const std::vector<RasterImage>& frames,
                                               const TextCondition& cond, int t, RandomStream& rng,
                                               const NoiseSchedule& sched, double w_t = 1.0) {
    if (frames.empty()) throw std::invalid_argument("video_sds_step: no frames");
    const std::size_t per = frames[0].size();
    std::vector<double> z;
    z.reserve(per * frames.size());
    for (const auto& f : frames) {
        if (f.size() != per || f.height != frames[0].height || f.width != frames[0].width)
            throw std::invalid_argument("video_sds_step: frame shape mismatch");
        z.insert(z.end(), f.data.begin(), f.data.end());
    }
    const std::vector<double> eps = rng.normal_vec(z.size());
    const std::vector<double> z_t = noise_sample(z, t, eps, sched);
    predictor.observe_noise(eps);
    const std::vector<double> eps_hat = predictor.predict_noise(z_t, int(frames.size()), t, cond);
    if (eps_hat.size() != z.size()) throw BackendError("video_sds_step: predictor shape mismatch");
    const std::vector<double> g = sds_gradient(eps_hat, eps, w_t);
    std::vector<RasterImage> out;
    out.reserve(frames.size());
    for (std::size_t j = 0; j < frames.size(); ++j) {
        RasterImage gi(frames[0].height, frames[0].width, frames[0].channels);
        std::copy_n(g.begin() + std::ptrdiff_t(j * per), per, gi.data.begin());
        out.push_back(std::move(gi));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full optimization

struct AnimateConfig {
    int frames = 24;
    int steps = 1000;
    int render_size = 256;
    double local_lr = 5e-3;
    double global_lr = 1e-4;
    double local_scale = 30.0;   // distillation guidance weight on local steps
    double global_scale = 40.0;  // ... and on global steps
    LambdaScales lambdas;
    int field_hidden = 64;
    std::uint64_t field_seed = 1;
    AugmentConfig augment{0.5, 0.7, 224, 224, 1.0};
    SoftRasterConfig raster;

    void validate() const {
        if (frames <= 0 || steps < 0 || render_size <= 0 || field_hidden <= 0)
            throw ConfigError("AnimateConfig: sizes must be positive");
        if (!(local_lr > 0.0) || !(global_lr > 0.0))
            throw ConfigError("AnimateConfig: learning rates must be positive");
        if (local_scale < 0.0 || global_scale < 0.0)
            throw ConfigError("AnimateConfig: guidance scales must be >= 0");
        if (augment.crop_width > render_size || augment.crop_height > render_size)
            throw ConfigError("AnimateConfig: crop larger than the render");
        lambdas.validate();
        raster.validate();
    }
};

struct AnimateBackends {
    VideoDenoisePredictor* predictor = nullptr;
    NoiseSchedule schedule;

    void validate() const {
        if (!predictor) throw ConfigError("AnimateBackends: predictor required");
        schedule.validate();
    }
};

namespace detail {

// Uniform scale-and-center of the sketch into a square canvas with a 10%
// border, mirroring the letter pipeline's framing.
inline VectorSketch fit_sketch_into_canvas(VectorSketch sk, int size) {
    std::vector<Point2> pts = sketch_points(sk);
    if (pts.empty()) throw ConfigError("animate: sketch has no points");
    const Box2 b = bbox_of_points(pts);
    const double margin = 0.1 * size;
    const double extent = std::max(b.width(), b.height());
    if (!(extent > 0.0)) throw ConfigError("animate: degenerate sketch extent");
    const double scale = (size - 2.0 * margin) / extent;
    const Point2 c = b.center();
    for (auto& p : pts)
        p = {(p.x - c.x) * scale + size / 2.0, (p.y - c.y) * scale + size / 2.0};
    set_sketch_points(sk, pts);
    sk.canvas_width = size;
    sk.canvas_height = size;
    for (auto& s : sk.strokes) s.width *= scale;
    return sk;
}

}  // namespace detail

// Alternating optimization: even steps update (shared + local) with the local
// guidance scale and learning rate, odd steps update (shared + global).
// Gradients always flow through the full displacement sum; the inactive head
// simply keeps its parameters that step. Deterministic per rng seed.
// The returned FrameSet lives on the fitted square canvas (render_size^2);
// `fitted_out`, when given, receives that template sketch.
inline FrameSet optimize_animation(const VectorSketch& sketch, const std::string& prompt,
                                   const AnimateConfig& cfg, const AnimateBackends& backends,
                                   RandomStream& rng, std::vector<double>* sds_trace = nullptr,
                                   VectorSketch* fitted_out = nullptr) {
    cfg.validate();
    backends.validate();
    if (prompt.empty()) throw ConfigError("optimize_animation: empty prompt");

    const VectorSketch tmpl = detail::fit_sketch_into_canvas(sketch, cfg.render_size);
    const std::vector<Point2> z_init = detail::sketch_points(tmpl);
    const std::size_t n = z_init.size();

    MotionField field(cfg.field_hidden,
                      Box2{{0.0, 0.0}, {double(cfg.render_size), double(cfg.render_size)}},
                      cfg.field_seed);
    const std::size_t n_shared = field.shared().params().size();
    Adam opt_local(n_shared + field.local_head().params().size(), {cfg.local_lr, 0.9, 0.999, 1e-8});
    Adam opt_global(n_shared + field.global_head().params().size(),
                    {cfg.global_lr, 0.9, 0.999, 1e-8});

    TextCondition cond;
    cond.prompt = prompt;
    VectorSketch work = tmpl;

    auto phase_step = [&](Adam& opt, Mlp& head) {
        std::vector<double> params = field.shared().params();
        params.insert(params.end(), head.params().begin(), head.params().end());
        std::vector<double> grads = field.shared().grads();
        grads.insert(grads.end(), head.grads().begin(), head.grads().end());
        opt.step(params, grads);
        std::copy_n(params.begin(), n_shared, field.shared().params().begin());
        std::copy(params.begin() + std::ptrdiff_t(n_shared), params.end(),
                  head.params().begin());
    };

    for (int step = 0; step < cfg.steps; ++step) {
        const bool local_phase = step % 2 == 0;
        const double w = local_phase ? cfg.local_scale : cfg.global_scale;

        MotionField::Prediction pred = field.predict(z_init, cfg.frames, cfg.lambdas);

        const int t_diff = int(rng.uniform_index(std::uint64_t(backends.schedule.T))) + 1;
        const AugmentTransform tf =
            sample_augment(cfg.render_size, cfg.render_size, cfg.augment, rng);

        std::vector<RasterImage> frames;
        frames.reserve(std::size_t(cfg.frames));
        for (int j = 0; j < cfg.frames; ++j) {
            std::vector<Point2> pts(n);
            for (std::size_t i = 0; i < n; ++i) pts[i] = z_init[i] + pred.delta[std::size_t(j)][i];
            detail::set_sketch_points(work, pts);
            frames.push_back(apply_augment(render(work, cfg.raster), tf));
        }

        const std::vector<RasterImage> g_frames =
            video_sds_step(*backends.predictor, frames, cond, t_diff, rng, backends.schedule, w);
        if (sds_trace) {
            double norm2 = 0.0;
            for (const auto& gf : g_frames)
                for (double v : gf.data) norm2 += v * v;
            sds_trace->push_back(std::sqrt(norm2));
        }

        std::vector<std::vector<Point2>> g_delta(std::size_t(cfg.frames));
        for (int j = 0; j < cfg.frames; ++j) {
            const RasterImage g_render = augment_adjoint(g_frames[std::size_t(j)], tf);
            std::vector<Point2> pts(n);
            for (std::size_t i = 0; i < n; ++i) pts[i] = z_init[i] + pred.delta[std::size_t(j)][i];
            detail::set_sketch_points(work, pts);
            const SketchGrads sg = render_with_gradients(work, g_render, cfg.raster);
            auto& gd = g_delta[std::size_t(j)];
            gd.reserve(n);
            for (const auto& stroke : sg.strokes)
                gd.insert(gd.end(), stroke.points.begin(), stroke.points.end());
        }

        field.backward(z_init, cfg.frames, cfg.lambdas, pred, g_delta);
        if (local_phase)
            phase_step(opt_local, field.local_head());
        else
            phase_step(opt_global, field.global_head());
        field.zero_grad();
    }

    FrameSet out;
    out.base_points = z_init;
    out.k = cfg.frames;
    out.displacements = field.predict(z_init, cfg.frames, cfg.lambdas).delta;
    out.validate();
    if (fitted_out) *fitted_out = tmpl;
    return out;
}

// ---------------------------------------------------------------------------
// Displacement tensor serialization
//
// Layout (all little-endian): uint32 k, uint32 N, then k*N*2 float32 values —
// frame-major, per point x then y. No padding, no trailing data.

inline void write_displacement_tensor(std::ostream& os, const FrameSet& frames) {
    frames.validate();
    detail::put_u32le(os, std::uint32_t(frames.k));
    detail::put_u32le(os, std::uint32_t(frames.base_points.size()));
    for (const auto& frame : frames.displacements)
        for (const Point2& p : frame) {
            detail::put_f32le(os, p.x);
            detail::put_f32le(os, p.y);
        }
    if (!os) throw ConfigError("write_displacement_tensor: write failed");
}

// Base points are not part of the tensor; the returned set carries zeros there.
inline FrameSet read_displacement_tensor(std::istream& is) {
    std::uint32_t k = 0, n = 0;
    if (!detail::get_u32le(is, k) || !detail::get_u32le(is, n))
        throw ConfigError("read_displacement_tensor: truncated header");
    if (k > 100000 || n > 10000000)
        throw ConfigError("read_displacement_tensor: implausible header");
    FrameSet out;
    out.k = int(k);
    out.base_points.assign(n, Point2{0.0, 0.0});
    out.displacements.assign(k, std::vector<Point2>(n));
    for (auto& frame : out.displacements)
        for (Point2& p : frame)
            if (!detail::get_f32le(is, p.x) || !detail::get_f32le(is, p.y))
                throw ConfigError("read_displacement_tensor: truncated data");
    is.peek();
    if (!is.eof()) throw ConfigError("read_displacement_tensor: trailing bytes");
    return out;
}

}  // namespace vecsketch
