#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vecsketch/mlp.hpp"
#include "vecsketch/object_sketch.hpp"
#include "vecsketch/optim.hpp"

// Scene abstraction along two axes. Fidelity: strokes are re-posed by a shared
// per-point offset network trained against encoder activations at one chosen
// layer (shallow = structural, deep = semantic). Simplicity: a second network
// emits per-stroke keep-probabilities that scale stroke widths, trained with a
// ratio objective that targets progressively sparser sketches. Driving widths
// through a network rather than directly lets pruned strokes recover.

namespace vecsketch {

struct SceneSketchConfig {
    int num_strokes = 64;
    std::vector<int> fidelity_layers{2, 7, 8, 11};
    int foreground_extra_layer = 4;
    bool foreground = false;
    int canvas_width = 224;
    int canvas_height = 224;
    double stroke_width = 1.5;
    int fidelity_steps = 2000;
    int steps_per_level = 500;
    int eval_every = 10;
    double offset_lr = 1e-2;
    double keep_lr = 1e-2;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_strokes < 1 || fidelity_steps < 0 || steps_per_level < 1 || eval_every < 1)
            throw ConfigError("SceneSketchConfig: counts must be positive");
        if (canvas_width < 2 || canvas_height < 2) throw ConfigError("SceneSketchConfig: bad canvas");
        if (stroke_width <= 0.0 || offset_lr <= 0.0 || keep_lr <= 0.0)
            throw ConfigError("SceneSketchConfig: bad scalar field");
        if (fidelity_layers.empty()) throw ConfigError("SceneSketchConfig: no fidelity layers");
    }
};

// Shared 3-layer point network (2 -> 128 -> 128 -> 2, self-normalizing) whose
// output is a per-point displacement. The head starts zeroed so the sketch
// begins exactly at its initialization.
struct OffsetNetwork {
    static constexpr int kHidden = 128;
    Mlp net;

    explicit OffsetNetwork(std::uint64_t seed)
        : net({2, kHidden, kHidden, 2}, {Act::SeLU, Act::SeLU, Act::Identity}, seed) {
        net.zero_layer(2);
    }

    // one displacement per normalized input point
    std::vector<Point2> offsets(const std::vector<Point2>& pts_norm) {
        std::vector<Point2> out;
        out.reserve(pts_norm.size());
        for (const Point2& p : pts_norm) {
            const std::vector<double> y = net.forward({p.x, p.y});
            out.push_back({y[0], y[1]});
        }
        return out;
    }
};

// 3-layer network (128 -> 128 -> 128 -> n) with a squashing head; reads a
// frozen seeded vector and emits one keep-probability per stroke, strictly
// inside (0,1).
struct KeepProbNetwork {
    static constexpr int kHidden = 128;
    Mlp net;
    std::vector<double> input;

    KeepProbNetwork(int n, std::uint64_t seed)
        : net({kHidden, kHidden, kHidden, n}, {Act::SeLU, Act::SeLU, Act::Sigmoid}, seed) {
        if (n < 1) throw ConfigError("KeepProbNetwork: need at least one stroke");
        RandomStream rng = RngHub(seed).stream("keep_input");
        input.resize(kHidden);
        for (double& v : input) v = rng.normal();
    }

    std::vector<double> probs() { return net.forward(input); }
};

struct RatioSchedule {
    std::vector<double> factors;

    void validate() const {
        if (factors.empty()) throw std::domain_error("RatioSchedule: empty");
        for (std::size_t i = 0; i < factors.size(); ++i) {
            if (factors[i] <= 0.0) throw std::domain_error("RatioSchedule: non-positive factor");
            if (i > 0 && factors[i] >= factors[i - 1])
                throw std::domain_error("RatioSchedule: not strictly decreasing");
        }
    }
};

// mean keep-probability; the objective's sparsity measure
inline double sparsity_loss(const std::vector<double>& probs) {
    if (probs.empty()) throw std::domain_error("sparsity_loss: empty");
    double s = 0.0;
    for (double p : probs) {
        if (p < 0.0 || p > 1.0) throw std::domain_error("sparsity_loss: probability outside [0,1]");
        s += p;
    }
    return s / double(probs.size());
}

inline double ratio_loss(double l_sparse, double l_clip, double r) {
    if (l_clip <= 0.0) throw NumericError("ratio_loss: reference loss must be positive");
    const double d = l_sparse / l_clip - r;
    return d * d;
}

// factors[0] = 1/l_clip, then repeated halving with a step proportional to the
// reference loss (constant 1, floored at one halving per level)
inline RatioSchedule build_ratio_schedule(double l_clip_at_k, int m) {
    if (l_clip_at_k <= 0.0 || m < 1) throw std::domain_error("build_ratio_schedule: non-positive input");
    const int step = std::max(1, int(std::lround(l_clip_at_k)));
    RatioSchedule sched;
    sched.factors.resize(m);
    sched.factors[0] = 1.0 / l_clip_at_k;
    for (int j = 1; j < m; ++j) sched.factors[j] = sched.factors[j - 1] / std::pow(2.0, step);
    sched.validate();
    return sched;
}

inline VectorSketch apply_keep_probs(const VectorSketch& sketch, const std::vector<double>& probs) {
    if (probs.size() != sketch.strokes.size())
        throw std::invalid_argument("apply_keep_probs: length mismatch");
    VectorSketch out = sketch;
    for (std::size_t i = 0; i < probs.size(); ++i) out.strokes[i].width *= probs[i];
    return out;
}

struct SceneRowState {
    int layer = 0;
    bool foreground = false;
    std::vector<int> loss_layers;    // {layer} (+ extra layer in foreground mode)
    VectorSketch init;               // stroke geometry before offsets
    OffsetNetwork offsets;           // trained point displacement network
    VectorSketch sketch;             // init + current offsets
    std::vector<double> eval_trace;
    double final_loss = 0.0;         // reference for the simplification ratio
};

struct SceneCell {
    VectorSketch sketch;             // widths already scaled by keep_probs
    std::vector<double> keep_probs;
    double loss = 0.0;
};

struct AbstractionMatrix {
    int rows = 0, cols = 0;
    std::vector<SceneCell> cells;  // row major

    SceneCell& cell(int i, int j) { return cells[std::size_t(i) * cols + j]; }
    const SceneCell& cell(int i, int j) const { return cells[std::size_t(i) * cols + j]; }
};

namespace detail {

inline std::vector<Point2> normalized_points(const VectorSketch& sk) {
    std::vector<Point2> pts;
    for (const auto& s : sk.strokes)
        for (const auto& p : s.points)
            pts.push_back({p.x / sk.canvas_width, p.y / sk.canvas_height});
    return pts;
}

inline void apply_offsets(VectorSketch& sk, const VectorSketch& init, const std::vector<Point2>& off) {
    std::size_t i = 0;
    for (std::size_t s = 0; s < sk.strokes.size(); ++s)
        for (std::size_t j = 0; j < sk.strokes[s].points.size(); ++j, ++i)
            sk.strokes[s].points[j] = init.strokes[s].points[j] + off[i];
}

// VJP through the shared point network: re-runs one forward per point so the
// single-sample cache holds the right activations, then accumulates into the
// network's parameter gradients.
inline void backprop_offsets(OffsetNetwork& onet, const std::vector<Point2>& pts_norm,
                             const SketchGrads& grads) {
    std::size_t i = 0;
    for (const auto& gs : grads.strokes)
        for (const auto& gp : gs.points) {
            onet.net.forward({pts_norm[i].x, pts_norm[i].y});
            onet.net.backward({gp.x, gp.y});
            ++i;
        }
}

}  // namespace detail

// Trains the offset network so the re-posed strokes match the image's encoder
// activations at one layer (plus the extra foreground layer when configured).
inline SceneRowState fidelity_row(const RasterImage& image, int layer_k, const SceneSketchConfig& cfg,
                                  const ImageEncoder& enc) {
    cfg.validate();
    if (image.height != cfg.canvas_height || image.width != cfg.canvas_width)
        throw ConfigError("fidelity_row: image does not match canvas");
    const RasterImage target = grayscale(image);

    SceneRowState row{.layer = layer_k,
                      .foreground = cfg.foreground,
                      .loss_layers = {layer_k},
                      .init = {},
                      .offsets = OffsetNetwork(RngHub(cfg.seed).derived_seed("offset_net", std::uint64_t(layer_k))),
                      .sketch = {},
                      .eval_trace = {},
                      .final_loss = 0.0};
    if (cfg.foreground && cfg.foreground_extra_layer != layer_k)
        row.loss_layers.push_back(cfg.foreground_extra_layer);

    ObjectSketchConfig icfg;
    icfg.canvas_width = cfg.canvas_width;
    icfg.canvas_height = cfg.canvas_height;
    icfg.stroke_width = cfg.stroke_width;
    RandomStream irng = RngHub(cfg.seed).stream("scene_init", std::uint64_t(layer_k));
    const InitDistribution dist =
        build_init_distribution(gradient_saliency(target), xdog_edges(target));
    row.init = init_strokes(dist, cfg.num_strokes, icfg, irng);
    row.sketch = row.init;

    const std::vector<Point2> pts_norm = detail::normalized_points(row.init);
    SoftRasterConfig rcfg;
    Adam opt(row.offsets.net.params().size(), {.lr = cfg.offset_lr});

    auto eval_loss = [&]() {
        return layer_l2_loss(enc, target, render(row.sketch, rcfg), row.loss_layers);
    };
    row.final_loss = eval_loss();
    row.eval_trace.push_back(row.final_loss);

    for (int it = 1; it <= cfg.fidelity_steps; ++it) {
        detail::apply_offsets(row.sketch, row.init, row.offsets.offsets(pts_norm));
        RasterImage g_img;
        layer_l2_loss_grad(enc, target, render(row.sketch, rcfg), row.loss_layers, &g_img);
        const SketchGrads grads = render_with_gradients(row.sketch, g_img, rcfg);

        row.offsets.net.zero_grad();
        detail::backprop_offsets(row.offsets, pts_norm, grads);
        opt.step(row.offsets.net.params(), row.offsets.net.grads());

        if (it % cfg.eval_every == 0 || it == cfg.fidelity_steps) {
            detail::apply_offsets(row.sketch, row.init, row.offsets.offsets(pts_norm));
            row.final_loss = eval_loss();
            row.eval_trace.push_back(row.final_loss);
        }
    }
    detail::apply_offsets(row.sketch, row.init, row.offsets.offsets(pts_norm));
    return row;
}

// Level 1 trains a fresh keep-probability network while fine-tuning the row's
// offsets; every later level continues both. The per-level objective is
//   fidelity + sparsity + ratio(sparsity, reference, r)
// where the reference is the row's converged fidelity loss, held fixed across
// levels. With factors starting at 1/reference and halving, the stationary
// sparsity target halves per level exactly. The sparsity and ratio terms only
// reach the keep network; the fidelity term reaches both networks, through
// stroke widths and through point offsets.
inline std::vector<SceneCell> simplify_iteratively(const RasterImage& image, SceneRowState& row,
                                                   const RatioSchedule& schedule,
                                                   const SceneSketchConfig& cfg,
                                                   const ImageEncoder& enc) {
    cfg.validate();
    schedule.validate();
    const RasterImage target = grayscale(image);
    const double l_ref = row.final_loss;
    if (l_ref <= 0.0) throw NumericError("simplify_iteratively: non-positive reference loss");

    const std::vector<Point2> pts_norm = detail::normalized_points(row.init);
    const std::size_t n = row.init.strokes.size();
    KeepProbNetwork keep(int(n), RngHub(cfg.seed).derived_seed("keep_net", std::uint64_t(row.layer)));
    SoftRasterConfig rcfg;

    std::vector<SceneCell> cells;
    std::vector<double> base_width(n);
    for (std::size_t i = 0; i < n; ++i) base_width[i] = row.sketch.strokes[i].width;

    for (double r : schedule.factors) {
        // optimizer state restarts per level: each factor is a new objective, and
        // stale second-moment mass from the previous target would freeze the
        // keep network exactly when it has to move farthest
        Adam opt_off(row.offsets.net.params().size(), {.lr = cfg.offset_lr});
        Adam opt_keep(keep.net.params().size(), {.lr = cfg.keep_lr});
        double level_loss = 0.0;
        std::vector<double> probs;
        for (int it = 0; it < cfg.steps_per_level; ++it) {
            detail::apply_offsets(row.sketch, row.init, row.offsets.offsets(pts_norm));
            probs = keep.probs();
            VectorSketch scaled = row.sketch;
            for (std::size_t i = 0; i < n; ++i) scaled.strokes[i].width = base_width[i] * probs[i];

            RasterImage g_img;
            const double l_fid =
                layer_l2_loss_grad(enc, target, render(scaled, rcfg), row.loss_layers, &g_img);
            const SketchGrads grads = render_with_gradients(scaled, g_img, rcfg);
            const double sp = sparsity_loss(probs);
            level_loss = l_fid + sp + ratio_loss(sp, l_ref, r);

            // dL/dP_i: width chain through the raster, plus the sparsity term and
            // the ratio term (reference value is a constant)
            std::vector<double> gP(n);
            const double gsp = (1.0 + 2.0 * (sp / l_ref - r) / l_ref) / double(n);
            for (std::size_t i = 0; i < n; ++i) gP[i] = grads.strokes[i].width * base_width[i] + gsp;

            keep.net.zero_grad();
            keep.net.forward(keep.input);
            keep.net.backward(gP);
            opt_keep.step(keep.net.params(), keep.net.grads());

            row.offsets.net.zero_grad();
            detail::backprop_offsets(row.offsets, pts_norm, grads);
            opt_off.step(row.offsets.net.params(), row.offsets.net.grads());
        }
        detail::apply_offsets(row.sketch, row.init, row.offsets.offsets(pts_norm));
        probs = keep.probs();
        VectorSketch scaled = row.sketch;
        for (std::size_t i = 0; i < n; ++i) scaled.strokes[i].width = base_width[i] * probs[i];
        cells.push_back({std::move(scaled), probs, level_loss});
    }
    return cells;
}

// fg = image on the mask support over white; bg passes through the provided
// inpainted plate (mask production and inpainting are inputs, not components)
inline std::pair<RasterImage, RasterImage> decompose_scene(const RasterImage& image,
                                                           const RasterImage& fg_mask,
                                                           const RasterImage& bg_inpainted) {
    if (fg_mask.height != image.height || fg_mask.width != image.width ||
        bg_inpainted.height != image.height || bg_inpainted.width != image.width)
        throw std::invalid_argument("decompose_scene: dimension mismatch");
    const RasterImage mask = grayscale(fg_mask);
    RasterImage fg(image.height, image.width, image.channels);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const double m = mask.at(y, x);
            if (m < 0.0 || m > 1.0) throw std::domain_error("decompose_scene: mask outside [0,1]");
            for (int c = 0; c < image.channels; ++c)
                fg.at(y, x, c) = image.at(y, x, c) * m + (1.0 - m);
        }
    return {std::move(fg), bg_inpainted};
}

// rows: per fidelity level, the converged row sketch plus its simplified cells.
// Grid row 0 holds the unsimplified sketches; row j>0 holds simplification
// level j across all fidelity columns.
inline AbstractionMatrix assemble_matrix(
    const std::vector<std::pair<SceneCell, std::vector<SceneCell>>>& rows) {
    if (rows.empty()) throw std::invalid_argument("assemble_matrix: no rows");
    const std::size_t levels = rows.front().second.size();
    for (const auto& r : rows)
        if (r.second.size() != levels) throw std::invalid_argument("assemble_matrix: ragged input");

    AbstractionMatrix m;
    m.rows = int(levels) + 1;
    m.cols = int(rows.size());
    m.cells.resize(std::size_t(m.rows) * m.cols);
    for (int k = 0; k < m.cols; ++k) {
        m.cell(0, k) = rows[k].first;
        for (std::size_t j = 0; j < levels; ++j) m.cell(int(j) + 1, k) = rows[k].second[j];
    }
    return m;
}

}  // namespace vecsketch
