#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vecsketch/guidance.hpp"
#include "vecsketch/optim.hpp"
#include "vecsketch/raster.hpp"

// Object sketching: strokes are seeded from a saliency-times-edges distribution
// over the target, then their control points are optimized directly against an
// encoder loss (multi-layer activation L2 plus weighted semantic term) under
// shared random augmentations of sketch and target.

namespace vecsketch {

struct ObjectSketchConfig {
    int num_strokes = 16;
    int num_seeds = 3;
    int iterations = 2000;
    double lr = 1.0;
    double w_s = 0.1;
    std::vector<int> geometric_layers{3, 4};
    int eval_every = 10;
    double converge_delta = 1e-5;
    double init_radius_frac = 0.05;
    double stroke_width = 1.5;
    int canvas_width = 224;
    int canvas_height = 224;
    AugmentConfig augment;  // crop defaults to 0.9x canvas in optimize

    void validate() const {
        if (num_strokes < 1 || num_seeds < 1 || iterations < 0 || eval_every < 1)
            throw ConfigError("ObjectSketchConfig: counts must be positive");
        if (w_s < 0.0 || lr <= 0.0 || stroke_width <= 0.0 || init_radius_frac <= 0.0)
            throw ConfigError("ObjectSketchConfig: bad scalar field");
        if (canvas_width < 2 || canvas_height < 2) throw ConfigError("ObjectSketchConfig: bad canvas");
        if (geometric_layers.empty()) throw ConfigError("ObjectSketchConfig: no geometric layers");
    }
};

struct InitDistribution {
    int height = 0, width = 0;
    std::vector<double> probs;  // row major, sums to 1

    void validate() const {
        double s = 0.0;
        for (double p : probs) {
            if (p < 0.0) throw std::domain_error("InitDistribution: negative probability");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9) throw std::domain_error("InitDistribution: not normalized");
    }

    // inverse-CDF draw; returns (row, col)
    std::pair<int, int> sample(RandomStream& rng) const {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return {int(i) / width, int(i) % width};
        }
        return {height - 1, width - 1};
    }
};

struct XdogParams {
    double sigma = 0.8;
    double k = 1.6;
    double p = 20.0;
    double eps = 0.1;
    double phi = 10.0;
};

// Difference-of-Gaussians edge strength with soft thresholding:
//   E = tanh(phi * max(0, p*|G_sigma(I) - G_{k sigma}(I)| - eps)),
// in [0,1), zero on constant images, rising toward 1 at strong edges.
inline RasterImage xdog_edges(const RasterImage& img, const XdogParams& prm = {}) {
    const RasterImage g = grayscale(img);
    const RasterImage g1 = low_pass(g, prm.sigma);
    const RasterImage g2 = low_pass(g, prm.k * prm.sigma);
    RasterImage out(g.height, g.width, 1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = std::abs(g1.data[i] - g2.data[i]);
        out.data[i] = std::tanh(prm.phi * std::max(0.0, prm.p * d - prm.eps));
    }
    return out;
}

// Fallback saliency when no relevancy map is supplied: gradient magnitude of
// the gray image, normalized to peak 1.
inline RasterImage gradient_saliency(const RasterImage& img) {
    const RasterImage g = grayscale(img);
    RasterImage out(g.height, g.width, 1, 0.0);
    double peak = 0.0;
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            const double gx = g.at(y, std::min(x + 1, g.width - 1)) - g.at(y, std::max(x - 1, 0));
            const double gy = g.at(std::min(y + 1, g.height - 1), x) - g.at(std::max(y - 1, 0), x);
            const double m = std::sqrt(gx * gx + gy * gy);
            out.at(y, x) = m;
            peak = std::max(peak, m);
        }
    if (peak > 0.0)
        for (double& v : out.data) v /= peak;
    return out;
}

// softmax over the elementwise product saliency * edges
inline InitDistribution build_init_distribution(const RasterImage& saliency, const RasterImage& edges) {
    if (saliency.height != edges.height || saliency.width != edges.width)
        throw std::invalid_argument("build_init_distribution: dimension mismatch");
    for (double v : saliency.data)
        if (v < 0.0) throw std::domain_error("build_init_distribution: negative saliency");
    const RasterImage sal = grayscale(saliency), edg = grayscale(edges);
    InitDistribution dist;
    dist.height = sal.height;
    dist.width = sal.width;
    dist.probs.resize(sal.size());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sal.size(); ++i) {
        dist.probs[i] = sal.data[i] * edg.data[i];
        peak = std::max(peak, dist.probs[i]);
    }
    double z = 0.0;
    for (double& v : dist.probs) {
        v = std::exp(v - peak);
        z += v;
    }
    for (double& v : dist.probs) v /= z;
    return dist;
}

// n strokes: first control point drawn from the distribution, the remaining
// three uniform in a disc of radius init_radius_frac * min(canvas) around it.
// Width and opacity stay fixed throughout optimization.
inline VectorSketch init_strokes(const InitDistribution& dist, int n, const ObjectSketchConfig& cfg,
                                 RandomStream& rng) {
    if (n < 1) throw std::domain_error("init_strokes: need at least one stroke");
    dist.validate();
    VectorSketch sk;
    sk.canvas_width = cfg.canvas_width;
    sk.canvas_height = cfg.canvas_height;
    const double radius = cfg.init_radius_frac * std::min(cfg.canvas_width, cfg.canvas_height);
    for (int i = 0; i < n; ++i) {
        const auto [r, c] = dist.sample(rng);
        Stroke s;
        s.points.resize(4);
        s.points[0] = {double(c), double(r)};
        for (int j = 1; j < 4; ++j) {
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            const double rad = radius * std::sqrt(rng.uniform());
            s.points[j] = s.points[0] + Point2{rad * std::cos(ang), rad * std::sin(ang)};
        }
        s.width = cfg.stroke_width;
        s.opacity = 1.0;
        sk.strokes.push_back(std::move(s));
    }
    return sk;
}

inline double object_loss(const ImageEncoder& enc, const RasterImage& target,
                          const RasterImage& sketch_img, const ObjectSketchConfig& cfg) {
    return layer_l2_loss(enc, target, sketch_img, cfg.geometric_layers) +
           cfg.w_s * semantic_loss(enc, target, sketch_img);
}

inline double object_loss_grad(const ImageEncoder& enc, const RasterImage& target,
                               const RasterImage& sketch_img, const ObjectSketchConfig& cfg,
                               RasterImage* grad) {
    RasterImage g_sem;
    const double geo = layer_l2_loss_grad(enc, target, sketch_img, cfg.geometric_layers, grad);
    const double sem = semantic_loss_grad(enc, target, sketch_img, &g_sem);
    if (grad)
        for (std::size_t i = 0; i < grad->size(); ++i) grad->data[i] += cfg.w_s * g_sem.data[i];
    return geo + cfg.w_s * sem;
}

struct ObjectRunResult {
    VectorSketch sketch;             // best iterate by eval loss
    std::vector<double> eval_trace;  // unaugmented loss every eval_every steps
    double final_loss = 0.0;         // last recorded eval loss
};

namespace detail {
inline std::vector<double> flatten_points(const VectorSketch& sk) {
    std::vector<double> v;
    for (const auto& s : sk.strokes)
        for (const auto& p : s.points) {
            v.push_back(p.x);
            v.push_back(p.y);
        }
    return v;
}
inline void unflatten_points(VectorSketch& sk, const std::vector<double>& v) {
    std::size_t i = 0;
    for (auto& s : sk.strokes)
        for (auto& p : s.points) {
            p.x = v[i++];
            p.y = v[i++];
        }
}
}  // namespace detail

inline ObjectRunResult optimize_object_sketch(const RasterImage& target, const ObjectSketchConfig& cfg,
                                              const ImageEncoder& enc, RandomStream& rng,
                                              const RasterImage* saliency = nullptr) {
    cfg.validate();
    if (target.height != cfg.canvas_height || target.width != cfg.canvas_width)
        throw ConfigError("optimize_object_sketch: target does not match canvas");
    const RasterImage gray_target = grayscale(target);

    const RasterImage sal = saliency ? grayscale(*saliency) : gradient_saliency(gray_target);
    const InitDistribution dist = build_init_distribution(sal, xdog_edges(gray_target));
    VectorSketch sketch = init_strokes(dist, cfg.num_strokes, cfg, rng);

    AugmentConfig aug = cfg.augment;
    if (aug.crop_width == 0) aug.crop_width = std::max(1, int(std::lround(0.9 * cfg.canvas_width)));
    if (aug.crop_height == 0) aug.crop_height = std::max(1, int(std::lround(0.9 * cfg.canvas_height)));

    SoftRasterConfig rcfg;
    std::vector<double> params = detail::flatten_points(sketch);
    Adam opt(params.size(), {.lr = cfg.lr});

    ObjectRunResult best;
    best.sketch = sketch;
    auto eval_loss = [&](const VectorSketch& sk) {
        return object_loss(enc, gray_target, render(sk, rcfg), cfg);
    };
    double last_eval = eval_loss(sketch);
    best.eval_trace.push_back(last_eval);
    best.final_loss = last_eval;
    double best_loss = last_eval;

    for (int it = 1; it <= cfg.iterations; ++it) {
        const AugmentTransform tf = sample_augment(cfg.canvas_height, cfg.canvas_width, aug, rng);
        const RasterImage aug_sketch = apply_augment(render(sketch, rcfg), tf);
        const RasterImage aug_target = apply_augment(gray_target, tf);

        RasterImage g_aug;
        object_loss_grad(enc, aug_target, aug_sketch, cfg, &g_aug);
        const RasterImage upstream = augment_adjoint(g_aug, tf);
        const SketchGrads grads = render_with_gradients(sketch, upstream, rcfg);

        std::vector<double> g;
        g.reserve(params.size());
        for (const auto& gs : grads.strokes)
            for (const auto& p : gs.points) {
                g.push_back(p.x);
                g.push_back(p.y);
            }
        opt.step(params, g);
        detail::unflatten_points(sketch, params);

        if (it % cfg.eval_every == 0) {
            const double e = eval_loss(sketch);
            best.eval_trace.push_back(e);
            if (e < best_loss) {
                best_loss = e;
                best.sketch = sketch;
            }
            const bool converged = std::abs(e - last_eval) < cfg.converge_delta;
            last_eval = e;
            best.final_loss = e;
            if (converged) break;
        }
    }
    return best;
}

// pure argmin with first-index tie break, shared by seed selection and tests
inline std::size_t best_seed_index(const std::vector<double>& final_losses) {
    if (final_losses.empty()) throw std::domain_error("best_seed_index: empty");
    std::size_t best = 0;
    for (std::size_t i = 1; i < final_losses.size(); ++i)
        if (final_losses[i] < final_losses[best]) best = i;
    return best;
}

// Runs the optimizer once per seed (independent derived streams) and keeps the
// sketch with the lowest final eval loss.
inline ObjectRunResult multi_seed_select(const RasterImage& target, const ObjectSketchConfig& cfg,
                                         const ImageEncoder& enc, std::uint64_t master_seed = 0,
                                         const RasterImage* saliency = nullptr) {
    cfg.validate();
    RngHub hub(master_seed);
    std::vector<ObjectRunResult> runs;
    std::vector<double> losses;
    for (int s = 0; s < cfg.num_seeds; ++s) {
        RandomStream rng = hub.stream("object_seed", std::uint64_t(s));
        runs.push_back(optimize_object_sketch(target, cfg, enc, rng, saliency));
        losses.push_back(runs.back().final_loss);
    }
    return runs[best_seed_index(losses)];
}

}  // namespace vecsketch
