#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "vecsketch/common.hpp"

// Small dense networks with hand-rolled backprop, enough for the per-stroke
// parameterization networks (offset / keep-probability / displacement heads).
// Single-sample forward/backward; gradients accumulate until zero_grad().

namespace vecsketch {

enum class Act { Identity, Relu, SeLU, Sigmoid, Tanh };

namespace detail {
constexpr double kSeluLambda = 1.0507009873554805;
constexpr double kSeluAlpha = 1.6732632423543772;
// Sigmoid outputs stay this far inside (0,1): keeps probabilities strictly
// interior in floating point and the derivative nonzero, so a saturated unit
// can always be pulled back. Only affects |z| beyond ~27.6.
constexpr double kSigmoidClamp = 1e-12;

inline double sigmoid(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return std::clamp(s, kSigmoidClamp, 1.0 - kSigmoidClamp);
}

inline double act_forward(Act a, double z) {
    switch (a) {
        case Act::Identity: return z;
        case Act::Relu: return z > 0.0 ? z : 0.0;
        case Act::SeLU: return z > 0.0 ? kSeluLambda * z : kSeluLambda * kSeluAlpha * (std::exp(z) - 1.0);
        case Act::Sigmoid: return sigmoid(z);
        case Act::Tanh: return std::tanh(z);
    }
    return z;
}

inline double act_derivative(Act a, double z) {
    switch (a) {
        case Act::Identity: return 1.0;
        case Act::Relu: return z > 0.0 ? 1.0 : 0.0;
        case Act::SeLU: return z > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(z);
        case Act::Sigmoid: {
            const double s = sigmoid(z);
            return s * (1.0 - s);
        }
        case Act::Tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}
}  // namespace detail

class Mlp {
  public:
    // widths = {in, hidden..., out}; acts has one entry per weight layer.
    Mlp(std::vector<int> widths, std::vector<Act> acts, std::uint64_t seed)
        : widths_(std::move(widths)), acts_(std::move(acts)) {
        if (widths_.size() < 2 || acts_.size() != widths_.size() - 1)
            throw std::invalid_argument("Mlp: widths/activations mismatch");
        RandomStream rs(seed);
        std::size_t total = 0;
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            offsets_.push_back(total);
            total += std::size_t(widths_[l]) * widths_[l + 1] + widths_[l + 1];
        }
        theta_.resize(total);
        grad_.assign(total, 0.0);
        // LeCun-normal weights, zero biases
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            double* W = weight(l);
            const double scale = 1.0 / std::sqrt(double(widths_[l]));
            for (int i = 0; i < widths_[l + 1] * widths_[l]; ++i) W[i] = rs.normal() * scale;
            double* b = bias(l);
            for (int i = 0; i < widths_[l + 1]; ++i) b[i] = 0.0;
        }
    }

    std::size_t layer_count() const { return widths_.size() - 1; }
    int input_size() const { return widths_.front(); }
    int output_size() const { return widths_.back(); }

    double* weight(std::size_t l) { return theta_.data() + offsets_[l]; }
    double* bias(std::size_t l) { return theta_.data() + offsets_[l] + std::size_t(widths_[l]) * widths_[l + 1]; }
    const double* weight(std::size_t l) const { return theta_.data() + offsets_[l]; }
    const double* bias(std::size_t l) const { return theta_.data() + offsets_[l] + std::size_t(widths_[l]) * widths_[l + 1]; }

    // zeroes one weight layer (and its bias): used for outputs that must start
    // as the identity mapping plus a chosen bias
    void zero_layer(std::size_t l) {
        double* W = weight(l);
        for (int i = 0; i < widths_[l + 1] * widths_[l]; ++i) W[i] = 0.0;
        double* b = bias(l);
        for (int i = 0; i < widths_[l + 1]; ++i) b[i] = 0.0;
    }

    void set_bias(std::size_t l, const std::vector<double>& b0) {
        if (int(b0.size()) != widths_[l + 1]) throw std::invalid_argument("Mlp::set_bias: size");
        double* b = bias(l);
        for (std::size_t i = 0; i < b0.size(); ++i) b[i] = b0[i];
    }

    std::vector<double> forward(const std::vector<double>& x) {
        if (int(x.size()) != widths_.front()) throw std::invalid_argument("Mlp::forward: input size");
        a_.assign(1, x);
        z_.clear();
        std::vector<double> cur = x;
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            const int nin = widths_[l], nout = widths_[l + 1];
            std::vector<double> z(nout);
            const double* W = weight(l);
            const double* b = bias(l);
            for (int i = 0; i < nout; ++i) {
                double acc = b[i];
                for (int j = 0; j < nin; ++j) acc += W[std::size_t(i) * nin + j] * cur[j];
                z[i] = acc;
            }
            z_.push_back(z);
            for (int i = 0; i < nout; ++i) z[i] = detail::act_forward(acts_[l], z[i]);
            cur = z;
            a_.push_back(cur);
        }
        return cur;
    }

    // VJP against the last forward() call; accumulates parameter gradients and
    // returns d(loss)/d(input).
    std::vector<double> backward(const std::vector<double>& gy) {
        if (a_.empty()) throw std::logic_error("Mlp::backward before forward");
        if (int(gy.size()) != widths_.back()) throw std::invalid_argument("Mlp::backward: grad size");
        std::vector<double> g = gy;
        for (std::size_t l = widths_.size() - 1; l-- > 0;) {
            const int nin = widths_[l], nout = widths_[l + 1];
            std::vector<double> gz(nout);
            for (int i = 0; i < nout; ++i) gz[i] = g[i] * detail::act_derivative(acts_[l], z_[l][i]);
            double* gW = grad_.data() + offsets_[l];
            double* gb = gW + std::size_t(nin) * nout;
            const std::vector<double>& ain = a_[l];
            for (int i = 0; i < nout; ++i) {
                gb[i] += gz[i];
                for (int j = 0; j < nin; ++j) gW[std::size_t(i) * nin + j] += gz[i] * ain[j];
            }
            std::vector<double> gx(nin, 0.0);
            const double* W = weight(l);
            for (int i = 0; i < nout; ++i)
                for (int j = 0; j < nin; ++j) gx[j] += W[std::size_t(i) * nin + j] * gz[i];
            g = std::move(gx);
        }
        return g;
    }

    void zero_grad() { grad_.assign(grad_.size(), 0.0); }

    std::vector<double>& params() { return theta_; }
    const std::vector<double>& params() const { return theta_; }
    std::vector<double>& grads() { return grad_; }

  private:
    std::vector<int> widths_;
    std::vector<Act> acts_;
    std::vector<std::size_t> offsets_;
    std::vector<double> theta_, grad_;
    std::vector<std::vector<double>> a_, z_;  // forward caches
};

// Fourier positional encoding: x -> (sin(2^0 pi x), cos(2^0 pi x), ..., 2^(L-1)).
inline std::vector<double> positional_encoding(const std::vector<double>& x, int levels) {
    if (levels <= 0) throw std::domain_error("positional_encoding: levels must be positive");
    std::vector<double> out;
    out.reserve(x.size() * 2 * std::size_t(levels));
    for (int l = 0; l < levels; ++l) {
        const double f = std::ldexp(M_PI, l);  // pi * 2^l
        for (double v : x) {
            out.push_back(std::sin(f * v));
            out.push_back(std::cos(f * v));
        }
    }
    return out;
}

}  // namespace vecsketch
