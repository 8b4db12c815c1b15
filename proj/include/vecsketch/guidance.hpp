#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vecsketch/common.hpp"
#include "vecsketch/raster.hpp"

// Perceptual-guidance backends: encoder / latent-codec / denoise-predictor
// interfaces, the shared loss and gradient formulas built on them, and
// deterministic mock backends so every pipeline can be exercised end to end
// without model weights.
//
// The mocks are documented precisely enough for tests to recompute them:
//   MockImageEncoder::embed   = grayscale -> bilinear 8x8 -> flatten (row major)
//                               -> fixed random projection to D=64, entries
//                               normal(0,1)/8 drawn row-major from
//                               RngHub(seed).stream("proj").
//   MockImageEncoder layer l  = grayscale -> bilinear s x s, s = max(2, 24-2l),
//                               flattened row major (no weights).
//   MockLatentCodec           = identity on 64x64 single-channel images.
//   MockDenoisePredictor      = target pulling: eps_hat = eps + kappa*(z_t -
//                               alpha_t * z_target); stochastic-distillation
//                               steps under it provably pull the latent toward
//                               z_target, giving convergent end-to-end tests.

namespace vecsketch {

struct Embedding {
    std::vector<double> values;
};

struct ActivationSet {
    std::map<int, std::vector<double>> layers;

    const std::vector<double>& layer(int l) const {
        auto it = layers.find(l);
        if (it == layers.end())
            throw BackendError("activation layer " + std::to_string(l) + " missing");
        return it->second;
    }
};

// Discrete noising schedule: z_t = alpha[t]*z + sigma[t]*eps.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha, sigma;  // indexed 0..T

    void validate() const {
        if (T <= 0 || alpha.size() != std::size_t(T) + 1 || sigma.size() != std::size_t(T) + 1)
            throw ConfigError("NoiseSchedule: bad shape");
        for (int t = 0; t <= T; ++t) {
            if (!(alpha[t] >= 0.0) || !(sigma[t] >= 0.0))
                throw ConfigError("NoiseSchedule: negative coefficient");
            if (t > 0 && (alpha[t] > alpha[t - 1] + 1e-15 || sigma[t] + 1e-15 < sigma[t - 1]))
                throw ConfigError("NoiseSchedule: not monotone");
        }
    }
};

// Cosine-squared ramp: alpha_t = cos^2(pi t / 2T), sigma_t = sqrt(1 - alpha_t^2).
inline NoiseSchedule make_cosine_schedule(int T = 1000) {
    if (T <= 0) throw std::domain_error("make_cosine_schedule: T must be positive");
    NoiseSchedule s;
    s.T = T;
    s.alpha.resize(T + 1);
    s.sigma.resize(T + 1);
    for (int t = 0; t <= T; ++t) {
        const double c = std::cos(M_PI * t / (2.0 * T));
        s.alpha[t] = c * c;
        s.sigma[t] = std::sqrt(std::max(0.0, 1.0 - s.alpha[t] * s.alpha[t]));
    }
    return s;
}

struct TextCondition {
    std::string prompt;
    Embedding embedding;                    // produced by the backend's text encoder
    std::vector<Embedding*> token_slots;    // trainable embeddings, caller owned

    void validate() const {
        if (prompt.empty()) throw ConfigError("TextCondition: empty prompt");
    }
};

// ---------------------------------------------------------------------------
// Backend interfaces

class ImageEncoder {
  public:
    virtual ~ImageEncoder() = default;
    virtual Embedding embed(const RasterImage& img) const = 0;
    virtual ActivationSet activations(const RasterImage& img, const std::vector<int>& layers) const = 0;
    // Vector-Jacobian products, so losses can hand pixel gradients to the
    // rasterizer. Real adapters implement these with their own autodiff.
    virtual RasterImage embed_vjp(const RasterImage& img, const std::vector<double>& grad_embedding) const = 0;
    virtual RasterImage activations_vjp(const RasterImage& img, int layer,
                                        const std::vector<double>& grad_activation) const = 0;
    virtual bool concurrent_safe() const { return true; }
};

class LatentCodec {
  public:
    virtual ~LatentCodec() = default;
    virtual std::vector<double> encode(const RasterImage& img) const = 0;
    virtual RasterImage decode(const std::vector<double>& z) const = 0;
    virtual RasterImage encode_vjp(const RasterImage& img, const std::vector<double>& grad_z) const = 0;
    virtual bool concurrent_safe() const { return true; }
};

class DenoisePredictor {
  public:
    virtual ~DenoisePredictor() = default;
    // Called with the exact noise drawn for the current step before
    // predict_noise; backends that do not need it ignore it.
    virtual void observe_noise(const std::vector<double>&) {}
    virtual std::vector<double> predict_noise(const std::vector<double>& z_t, int t,
                                              const TextCondition& cond) = 0;
    virtual bool concurrent_safe() const { return false; }
};

class VideoDenoisePredictor {
  public:
    virtual ~VideoDenoisePredictor() = default;
    virtual void observe_noise(const std::vector<double>&) {}
    // video_zt is frames x height x width, flattened frame-major.
    virtual std::vector<double> predict_noise(const std::vector<double>& video_zt, int frames,
                                              int t, const TextCondition& cond) = 0;
    virtual bool concurrent_safe() const { return false; }
};

class EmbeddingGenerator {
  public:
    struct LdmResult {
        double loss = 0.0;
        std::vector<std::vector<double>> slot_grads;  // one per trainable slot
    };
    virtual ~EmbeddingGenerator() = default;
    virtual RasterImage generate(const TextCondition& cond, RandomStream& rng) const = 0;
    virtual LdmResult ldm_loss_and_grads(const RasterImage& image, int t, const TextCondition& cond,
                                         const std::vector<double>& eps) const = 0;
    // Dictionary embedding of a plain word, in this backend's token-embedding
    // space. Trainable tokens are initialized from it.
    virtual Embedding embed_word(const std::string& word) const = 0;
    virtual bool concurrent_safe() const { return false; }
};

// ---------------------------------------------------------------------------
// Shared loss formulas

namespace detail {
inline double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}
inline double vec_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
}  // namespace detail

// 1 - cos(embed(target), embed(sketch)); in [0, 2].
inline double semantic_loss(const ImageEncoder& enc, const RasterImage& target,
                            const RasterImage& sketch_img) {
    const Embedding a = enc.embed(target), b = enc.embed(sketch_img);
    if (a.values.size() != b.values.size()) throw BackendError("semantic_loss: embedding dim mismatch");
    const double na = detail::vec_norm(a.values), nb = detail::vec_norm(b.values);
    if (na < 1e-300 || nb < 1e-300) throw NumericError("semantic_loss: zero-norm embedding");
    return 1.0 - detail::vec_dot(a.values, b.values) / (na * nb);
}

// Same, plus d(loss)/d(sketch pixels) through the encoder's VJP.
inline double semantic_loss_grad(const ImageEncoder& enc, const RasterImage& target,
                                 const RasterImage& sketch_img, RasterImage* grad_sketch) {
    const Embedding a = enc.embed(target), b = enc.embed(sketch_img);
    if (a.values.size() != b.values.size()) throw BackendError("semantic_loss: embedding dim mismatch");
    const double na = detail::vec_norm(a.values), nb = detail::vec_norm(b.values);
    if (na < 1e-300 || nb < 1e-300) throw NumericError("semantic_loss: zero-norm embedding");
    const double c = detail::vec_dot(a.values, b.values);
    if (grad_sketch) {
        std::vector<double> ge(b.values.size());
        for (std::size_t i = 0; i < ge.size(); ++i)
            ge[i] = -(a.values[i] / (na * nb) - c * b.values[i] / (na * nb * nb * nb));
        *grad_sketch = enc.embed_vjp(sketch_img, ge);
    }
    return 1.0 - c / (na * nb);
}

// sum_l || act_l(target) - act_l(sketch) ||^2.
inline double layer_l2_loss(const ImageEncoder& enc, const RasterImage& target,
                            const RasterImage& sketch_img, const std::vector<int>& layers) {
    if (layers.empty()) throw ConfigError("layer_l2_loss: no layers requested");
    const ActivationSet at = enc.activations(target, layers);
    const ActivationSet as = enc.activations(sketch_img, layers);
    double loss = 0.0;
    for (int l : layers) {
        const auto& x = at.layer(l);
        const auto& y = as.layer(l);
        if (x.size() != y.size()) throw BackendError("layer_l2_loss: activation shape mismatch");
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - y[i];
            loss += d * d;
        }
    }
    return loss;
}

inline double layer_l2_loss_grad(const ImageEncoder& enc, const RasterImage& target,
                                 const RasterImage& sketch_img, const std::vector<int>& layers,
                                 RasterImage* grad_sketch) {
    if (layers.empty()) throw ConfigError("layer_l2_loss: no layers requested");
    const ActivationSet at = enc.activations(target, layers);
    const ActivationSet as = enc.activations(sketch_img, layers);
    double loss = 0.0;
    if (grad_sketch)
        *grad_sketch = RasterImage(sketch_img.height, sketch_img.width, sketch_img.channels, 0.0);
    for (int l : layers) {
        const auto& x = at.layer(l);
        const auto& y = as.layer(l);
        if (x.size() != y.size()) throw BackendError("layer_l2_loss: activation shape mismatch");
        std::vector<double> ga(y.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - y[i];
            loss += d * d;
            ga[i] = 2.0 * (y[i] - x[i]);
        }
        if (grad_sketch) {
            const RasterImage g = enc.activations_vjp(sketch_img, l, ga);
            for (std::size_t i = 0; i < g.size(); ++i) grad_sketch->data[i] += g.data[i];
        }
    }
    return loss;
}

// z_t = alpha_t * x + sigma_t * eps.
inline std::vector<double> noise_sample(const std::vector<double>& x, int t,
                                        const std::vector<double>& eps, const NoiseSchedule& sched) {
    if (t < 0 || t > sched.T) throw std::domain_error("noise_sample: t outside schedule");
    if (x.size() != eps.size()) throw std::invalid_argument("noise_sample: shape mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = sched.alpha[t] * x[i] + sched.sigma[t] * eps[i];
    return out;
}

// w_t * (pred_noise - eps); the caller chains this with d(z)/d(parameters).
// No gradient flows through the predictor itself.
inline std::vector<double> sds_gradient(const std::vector<double>& pred_noise,
                                        const std::vector<double>& eps, double w_t) {
    if (pred_noise.size() != eps.size()) throw std::invalid_argument("sds_gradient: shape mismatch");
    std::vector<double> g(eps.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = w_t * (pred_noise[i] - eps[i]);
    return g;
}

// One score-distillation step in latent space: encode, noise to step t, predict,
// and return d(loss)/d(image pixels) = encode_vjp of w_t*(eps_hat - eps).
inline RasterImage latent_sds_step(const LatentCodec& codec, DenoisePredictor& predictor,
                                   const RasterImage& img, const TextCondition& cond, int t,
                                   RandomStream& rng, const NoiseSchedule& sched, double w_t = 1.0) {
    const std::vector<double> z = codec.encode(img);
    const std::vector<double> eps = rng.normal_vec(z.size());
    const std::vector<double> z_t = noise_sample(z, t, eps, sched);
    predictor.observe_noise(eps);
    const std::vector<double> eps_hat = predictor.predict_noise(z_t, t, cond);
    if (eps_hat.size() != z.size()) throw BackendError("latent_sds_step: predictor shape mismatch");
    return codec.encode_vjp(img, sds_gradient(eps_hat, eps, w_t));
}

// Skewed timestep density f(t) = (1/T)(1 - alpha cos(pi t / T)) on t = 1..T,
// normalized to an exact pmf.
inline std::vector<double> skewed_timestep_pmf(int T, double alpha) {
    if (T <= 0) throw std::domain_error("skewed_timestep_pmf: T must be positive");
    if (alpha < 0.0 || alpha >= 1.0) throw std::domain_error("skewed_timestep_pmf: need 0 <= alpha < 1");
    std::vector<double> p(T);
    double sum = 0.0;
    for (int t = 1; t <= T; ++t) {
        p[t - 1] = (1.0 - alpha * std::cos(M_PI * t / T)) / T;
        sum += p[t - 1];
    }
    for (double& v : p) v /= sum;
    return p;
}

// Inverse-CDF sampler over the skewed density; cache one of these for loops.
class SkewedTimestepSampler {
  public:
    SkewedTimestepSampler(int T, double alpha) : cdf_(skewed_timestep_pmf(T, alpha)) {
        double acc = 0.0;
        for (double& v : cdf_) {
            acc += v;
            v = acc;
        }
    }
    int operator()(RandomStream& rng) const {
        const double u = rng.uniform();
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return int(it - cdf_.begin()) + (it == cdf_.end() ? 0 : 1);
    }

  private:
    std::vector<double> cdf_;
};

inline int sample_timestep_skewed(int T, double alpha, RandomStream& rng) {
    return SkewedTimestepSampler(T, alpha)(rng);
}

// || eps - eps_theta(z_t, t, c) ||^2 with gradients confined to trainable slots.
inline EmbeddingGenerator::LdmResult ldm_objective(const EmbeddingGenerator& gen,
                                                   const RasterImage& image, int t,
                                                   const TextCondition& cond,
                                                   const std::vector<double>& eps) {
    cond.validate();
    if (cond.token_slots.empty())
        throw ConfigError("ldm_objective: condition has no trainable token slots");
    return gen.ldm_loss_and_grads(image, t, cond, eps);
}

// ---------------------------------------------------------------------------
// Deterministic mocks

class MockImageEncoder final : public ImageEncoder {
  public:
    static constexpr int kPatch = 8;   // embed downsample side
    static constexpr int kDim = 64;    // embedding dimension

    explicit MockImageEncoder(std::uint64_t seed = 7777) {
        RandomStream rs = RngHub(seed).stream("proj");
        proj_.resize(std::size_t(kDim) * kPatch * kPatch);
        for (double& w : proj_) w = rs.normal() / std::sqrt(double(kPatch * kPatch));
    }

    Embedding embed(const RasterImage& img) const override {
        const std::vector<double> v = patch_vector(img, kPatch);
        Embedding e;
        e.values.assign(kDim, 0.0);
        for (int i = 0; i < kDim; ++i)
            for (int j = 0; j < kPatch * kPatch; ++j)
                e.values[i] += proj_[std::size_t(i) * kPatch * kPatch + j] * v[j];
        return e;
    }

    RasterImage embed_vjp(const RasterImage& img, const std::vector<double>& ge) const override {
        if (ge.size() != kDim) throw BackendError("embed_vjp: gradient dim mismatch");
        std::vector<double> gv(std::size_t(kPatch) * kPatch, 0.0);
        for (int i = 0; i < kDim; ++i)
            for (int j = 0; j < kPatch * kPatch; ++j)
                gv[j] += proj_[std::size_t(i) * kPatch * kPatch + j] * ge[i];
        return patch_vector_vjp(img, kPatch, gv);
    }

    // Layer l looks at the image at scale s = max(2, 24 - 2l): early layers see
    // fine detail, late layers a coarse gist. Values carry a 1/s factor so a
    // layer's squared activation distance is the mean squared cell difference —
    // losses land well below 1 for similar images, like normalized features.
    static int layer_side(int layer) { return std::max(2, 24 - 2 * layer); }

    ActivationSet activations(const RasterImage& img, const std::vector<int>& layers) const override {
        ActivationSet out;
        for (int l : layers) {
            if (l < 0) throw BackendError("activations: negative layer");
            std::vector<double> v = patch_vector(img, layer_side(l));
            for (double& x : v) x /= double(layer_side(l));
            out.layers[l] = std::move(v);
        }
        return out;
    }

    RasterImage activations_vjp(const RasterImage& img, int layer,
                                const std::vector<double>& ga) const override {
        const int s = layer_side(layer);
        if (ga.size() != std::size_t(s) * s) throw BackendError("activations_vjp: shape mismatch");
        std::vector<double> g = ga;
        for (double& x : g) x /= double(s);
        return patch_vector_vjp(img, s, g);
    }

    // Text prompts embed as a seeded random direction so distinct prompts give
    // distinct, reproducible conditions.
    Embedding embed_text(const std::string& prompt) const {
        RandomStream rs(fnv1a64(prompt.data(), prompt.size()));
        Embedding e;
        e.values = rs.normal_vec(kDim);
        return e;
    }

  private:
    static std::vector<double> patch_vector(const RasterImage& img, int side) {
        const RasterImage g = grayscale(img);
        const RasterImage small = resize_bilinear(g, side, side);
        return small.data;
    }
    static RasterImage patch_vector_vjp(const RasterImage& img, int side,
                                        const std::vector<double>& gv) {
        if (img.channels != 1)
            throw BackendError("encoder vjp: gradients only defined for single-channel images");
        RasterImage gsmall(side, side, 1);
        gsmall.data = gv;
        return resize_bilinear_adjoint(gsmall, img.height, img.width);
    }

    std::vector<double> proj_;
};

// Identity codec on 64x64 single-channel images.
class MockLatentCodec final : public LatentCodec {
  public:
    static constexpr int kSide = 64;

    std::vector<double> encode(const RasterImage& img) const override {
        check(img);
        return img.data;
    }
    RasterImage decode(const std::vector<double>& z) const override {
        if (z.size() != std::size_t(kSide) * kSide) throw ConfigError("MockLatentCodec: bad latent size");
        RasterImage img(kSide, kSide, 1);
        img.data = z;
        return img;
    }
    RasterImage encode_vjp(const RasterImage& img, const std::vector<double>& gz) const override {
        check(img);
        return decode(gz);
    }

  private:
    static void check(const RasterImage& img) {
        if (img.height != kSide || img.width != kSide || img.channels != 1)
            throw ConfigError("MockLatentCodec: expects 64x64 single-channel images");
    }
};

// Target pulling: eps_hat = eps + kappa * (z_t - alpha_t * z_target). The
// distillation gradient w*(eps_hat - eps) = w*kappa*(alpha_t (z - z_target) +
// sigma_t eps) points, in expectation, from the current latent to the target.
class MockDenoisePredictor final : public DenoisePredictor {
  public:
    MockDenoisePredictor(std::vector<double> z_target, NoiseSchedule sched, double kappa = 0.5)
        : z_target_(std::move(z_target)), sched_(std::move(sched)), kappa_(kappa) {
        sched_.validate();
    }

    void observe_noise(const std::vector<double>& eps) override { last_eps_ = eps; }

    std::vector<double> predict_noise(const std::vector<double>& z_t, int t,
                                      const TextCondition&) override {
        if (t < 0 || t > sched_.T) throw BackendError("MockDenoisePredictor: t outside schedule");
        if (z_t.size() != z_target_.size()) throw BackendError("MockDenoisePredictor: latent shape mismatch");
        if (last_eps_.size() != z_t.size()) throw BackendError("MockDenoisePredictor: observe_noise not called");
        std::vector<double> out(z_t.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = last_eps_[i] + kappa_ * (z_t[i] - sched_.alpha[t] * z_target_[i]);
        return out;
    }

  private:
    std::vector<double> z_target_;
    NoiseSchedule sched_;
    double kappa_;
    std::vector<double> last_eps_;
};

// Trainable-embedding backend for concept trees. A fixed seeded linear map M
// turns token embeddings into a 64x64 latent image: generate() decodes
// M * (sum of slots) plus per-sample latent jitter, and the noise predictor is
// the target-pulling family around that same map, so training token slots
// against a set of images provably pulls M * (sum of slots) toward the set's
// mean latent -- the learned tokens then generate what they were trained on.
class MockEmbeddingGenerator final : public EmbeddingGenerator {
  public:
    static constexpr int kSide = MockLatentCodec::kSide;
    static constexpr int kDim = MockImageEncoder::kDim;

    explicit MockEmbeddingGenerator(std::uint64_t seed = 31337, NoiseSchedule sched = make_cosine_schedule(),
                                    double kappa = 0.5, double sample_noise = 0.05)
        : sched_(std::move(sched)), kappa_(kappa), sample_noise_(sample_noise) {
        sched_.validate();
        RandomStream rs = RngHub(seed).stream("genmap");
        map_.resize(std::size_t(kSide) * kSide * kDim);
        for (double& w : map_) w = rs.normal() / std::sqrt(double(kDim));
    }

    std::vector<double> latent_of(const TextCondition& cond) const {
        std::vector<double> mu(std::size_t(kSide) * kSide, 0.0);
        for (const Embedding* slot : cond.token_slots) {
            if (!slot || slot->values.size() != kDim)
                throw ConfigError("MockEmbeddingGenerator: slot dim mismatch");
            for (std::size_t i = 0; i < mu.size(); ++i) {
                double acc = 0.0;
                for (int j = 0; j < kDim; ++j) acc += map_[i * kDim + j] * slot->values[j];
                mu[i] += acc;
            }
        }
        return mu;
    }

    RasterImage generate(const TextCondition& cond, RandomStream& rng) const override {
        cond.validate();
        if (cond.token_slots.empty())
            throw ConfigError("MockEmbeddingGenerator: condition has no token slots");
        std::vector<double> mu = latent_of(cond);
        for (double& v : mu) v += sample_noise_ * rng.normal();
        RasterImage img(kSide, kSide, 1);
        img.data = std::move(mu);
        return img;
    }

    // Words embed as seeded random directions, like MockImageEncoder::embed_text.
    Embedding embed_word(const std::string& word) const override {
        RandomStream rs(fnv1a64(word));
        Embedding e;
        e.values = rs.normal_vec(kDim);
        return e;
    }

    LdmResult ldm_loss_and_grads(const RasterImage& image, int t, const TextCondition& cond,
                                 const std::vector<double>& eps) const override {
        if (image.height != kSide || image.width != kSide || image.channels != 1)
            throw ConfigError("MockEmbeddingGenerator: expects 64x64 single-channel images");
        if (t < 0 || t > sched_.T) throw BackendError("MockEmbeddingGenerator: t outside schedule");
        if (eps.size() != image.size()) throw std::invalid_argument("MockEmbeddingGenerator: eps shape");
        const std::vector<double> z_t = noise_sample(image.data, t, eps, sched_);
        const std::vector<double> mu = latent_of(cond);
        const double a = sched_.alpha[t];
        LdmResult res;
        std::vector<double> gmu(mu.size());  // d(loss)/d(mu)
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const double r = kappa_ * (z_t[i] - a * mu[i]);  // eps_hat - eps
            res.loss += r * r;
            gmu[i] = -2.0 * kappa_ * a * r;
        }
        std::vector<double> gslot(kDim, 0.0);
        for (std::size_t i = 0; i < mu.size(); ++i)
            for (int j = 0; j < kDim; ++j) gslot[j] += map_[i * kDim + j] * gmu[i];
        res.slot_grads.assign(cond.token_slots.size(), gslot);
        return res;
    }

    const NoiseSchedule& schedule() const { return sched_; }

  private:
    std::vector<double> map_;  // (kSide*kSide) x kDim, row major
    NoiseSchedule sched_;
    double kappa_;
    double sample_noise_;
};

// Same pulling family for frame-major video latents; each frame has its own target.
class MockVideoDenoisePredictor final : public VideoDenoisePredictor {
  public:
    MockVideoDenoisePredictor(std::vector<double> video_target, NoiseSchedule sched,
                              double kappa = 0.5)
        : target_(std::move(video_target)), sched_(std::move(sched)), kappa_(kappa) {
        sched_.validate();
    }

    void observe_noise(const std::vector<double>& eps) override { last_eps_ = eps; }

    std::vector<double> predict_noise(const std::vector<double>& video_zt, int frames, int t,
                                      const TextCondition&) override {
        if (t < 0 || t > sched_.T) throw BackendError("MockVideoDenoisePredictor: t outside schedule");
        if (video_zt.size() != target_.size() || frames <= 0 || video_zt.size() % std::size_t(frames) != 0)
            throw BackendError("MockVideoDenoisePredictor: latent shape mismatch");
        if (last_eps_.size() != video_zt.size())
            throw BackendError("MockVideoDenoisePredictor: observe_noise not called");
        std::vector<double> out(video_zt.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = last_eps_[i] + kappa_ * (video_zt[i] - sched_.alpha[t] * target_[i]);
        return out;
    }

  private:
    std::vector<double> target_;
    NoiseSchedule sched_;
    double kappa_;
    std::vector<double> last_eps_;
};

}  // namespace vecsketch
