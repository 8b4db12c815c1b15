#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "vecsketch/guidance.hpp"
#include "vecsketch/raster.hpp"

// Quantitative evaluation: sketch-set diversity, recognizability overlap,
// multi-scale structural similarity, and embedding-consistency matrices.

namespace vecsketch {

// || (1/(||mu||_1 * n)) sum_i (S_i - mu)^2 ||_1 with mu the pixelwise mean.
inline double diversity(const std::vector<RasterImage>& set) {
    if (set.size() < 2) throw std::domain_error("diversity: need at least 2 sketches");
    const RasterImage& first = set.front();
    for (const auto& img : set)
        if (!img.same_shape(first)) throw std::invalid_argument("diversity: mixed shapes");
    const std::size_t P = first.size();
    std::vector<double> mu(P, 0.0);
    for (const auto& img : set)
        for (std::size_t i = 0; i < P; ++i) mu[i] += img.data[i];
    double mu_l1 = 0.0;
    for (double& v : mu) {
        v /= double(set.size());
        mu_l1 += std::abs(v);
    }
    if (mu_l1 == 0.0) throw std::domain_error("diversity: all-blank set (zero mean)");
    double var_l1 = 0.0;
    for (const auto& img : set)
        for (std::size_t i = 0; i < P; ++i) {
            const double d = img.data[i] - mu[i];
            var_l1 += d * d;
        }
    return var_l1 / (mu_l1 * double(set.size()));
}

struct Top5Prediction {
    std::vector<std::string> labels;

    void validate() const {
        if (labels.size() != 5) throw std::invalid_argument("Top5Prediction: need exactly 5 labels");
        const std::set<std::string> uniq(labels.begin(), labels.end());
        if (uniq.size() != 5) throw std::invalid_argument("Top5Prediction: labels must be distinct");
    }
};

// A sketch counts as recognizable when at least 2 of the image's top-5 classes
// appear in the sketch's top-5.
inline bool top5_overlap_pass(const Top5Prediction& img_pred, const Top5Prediction& sketch_pred) {
    img_pred.validate();
    sketch_pred.validate();
    const std::set<std::string> a(img_pred.labels.begin(), img_pred.labels.end());
    int shared = 0;
    for (const auto& l : sketch_pred.labels) shared += a.count(l) ? 1 : 0;
    return shared >= 2;
}

// ---------------------------------------------------------------------------
// MS-SSIM, 5 scales, the original exponents (0.0448, 0.2856, 0.3001, 0.2363,
// 0.1333), 11x11 Gaussian window sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1.
// Luminance and contrast-structure terms clamp at 0 before the fractional
// exponents so anticorrelated inputs score 0 instead of producing NaN.

namespace detail {

inline std::vector<double> ssim_window() {
    std::vector<double> w(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double x = i - 5.0;
        w[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// valid-region separable filtering (output is (h-10) x (w-10))
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                        const std::vector<double>& k) {
    const int r = int(k.size());
    const int wh = h, ww = w - r + 1;
    std::vector<double> tmp(std::size_t(wh) * ww);
    for (int y = 0; y < wh; ++y)
        for (int x = 0; x < ww; ++x) {
            double acc = 0.0;
            for (int i = 0; i < r; ++i) acc += k[i] * img[std::size_t(y) * w + x + i];
            tmp[std::size_t(y) * ww + x] = acc;
        }
    const int oh = h - r + 1;
    std::vector<double> out(std::size_t(oh) * ww);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ww; ++x) {
            double acc = 0.0;
            for (int i = 0; i < r; ++i) acc += k[i] * tmp[std::size_t(y + i) * ww + x];
            out[std::size_t(y) * ww + x] = acc;
        }
    return out;
}

struct SsimTerms {
    double luminance;          // mean of clamped l map
    double contrast_structure; // mean of clamped cs map
};

inline SsimTerms ssim_terms(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
    const std::vector<double> win = ssim_window();
    const std::size_t n = a.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const std::vector<double> mu_a = filter_valid(a, h, w, win);
    const std::vector<double> mu_b = filter_valid(b, h, w, win);
    const std::vector<double> m_aa = filter_valid(aa, h, w, win);
    const std::vector<double> m_bb = filter_valid(bb, h, w, win);
    const std::vector<double> m_ab = filter_valid(ab, h, w, win);
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double lsum = 0.0, cssum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        const double l = (2.0 * mu_a[i] * mu_b[i] + C1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1);
        const double cs = (2.0 * cov + C2) / (va + vb + C2);
        lsum += std::max(0.0, l);
        cssum += std::max(0.0, cs);
    }
    return {lsum / double(mu_a.size()), cssum / double(mu_a.size())};
}

inline void half_downsample(std::vector<double>& img, int& h, int& w) {
    const int oh = h / 2, ow = w / 2;
    std::vector<double> out(std::size_t(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            out[std::size_t(y) * ow + x] =
                0.25 * (img[std::size_t(2 * y) * w + 2 * x] + img[std::size_t(2 * y) * w + 2 * x + 1] +
                        img[std::size_t(2 * y + 1) * w + 2 * x] + img[std::size_t(2 * y + 1) * w + 2 * x + 1]);
    img = std::move(out);
    h = oh;
    w = ow;
}

}  // namespace detail

inline double msssim(const RasterImage& a_in, const RasterImage& b_in) {
    if (!a_in.same_shape(b_in)) throw std::invalid_argument("msssim: shape mismatch");
    static constexpr double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    // 5 halvings of an 11-tap window need at least 11 * 2^4 = 176 per side
    if (std::min(a_in.height, a_in.width) < 176)
        throw std::domain_error("msssim: images below 176px per side cannot support 5 scales");
    const RasterImage ga = grayscale(a_in), gb = grayscale(b_in);
    std::vector<double> a = ga.data, b = gb.data;
    int h = ga.height, w = ga.width;
    double score = 1.0;
    for (int scale = 0; scale < 5; ++scale) {
        const detail::SsimTerms t = detail::ssim_terms(a, b, h, w);
        if (scale == 4) score *= std::pow(t.luminance * t.contrast_structure, kWeights[4]);
        else {
            score *= std::pow(t.contrast_structure, kWeights[scale]);
            int h2 = h, w2 = w;
            detail::half_downsample(a, h, w);
            detail::half_downsample(b, h2, w2);
        }
    }
    return score;
}

// ---------------------------------------------------------------------------
// Embedding consistency

// Mean pairwise cosine between the two sets' embeddings. When both arguments
// are the same set object, index-equal pairs are excluded (self-consistency of
// a set of identical images is 1, not undefined).
inline double consistency(const std::vector<RasterImage>& setA, const std::vector<RasterImage>& setB,
                          const ImageEncoder& enc) {
    const bool self = &setA == &setB;
    if (setA.empty() || setB.empty()) throw std::domain_error("consistency: empty set");
    if (self && setA.size() < 2) throw std::domain_error("consistency: singleton self-consistency");
    auto embed_all = [&](const std::vector<RasterImage>& s) {
        std::vector<std::vector<double>> es;
        es.reserve(s.size());
        for (const auto& img : s) {
            std::vector<double> e = enc.embed(img).values;
            const double n = detail::vec_norm(e);
            if (n < 1e-300) throw NumericError("consistency: zero-norm embedding");
            for (double& v : e) v /= n;
            es.push_back(std::move(e));
        }
        return es;
    };
    const auto ea = embed_all(setA);
    const auto eb = self ? ea : embed_all(setB);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < ea.size(); ++i)
        for (std::size_t j = 0; j < eb.size(); ++j) {
            if (self && i == j) continue;
            sum += detail::vec_dot(ea[i], eb[j]);
            ++count;
        }
    return sum / double(count);
}

// M[i][j] = consistency(set_i, set_j); diagonal entries are self-consistencies.
inline std::vector<std::vector<double>> consistency_matrix(
    const std::vector<std::vector<RasterImage>>& sets, const ImageEncoder& enc) {
    const std::size_t n = sets.size();
    for (const auto& s : sets)
        if (s.size() < 2) throw std::domain_error("consistency_matrix: each set needs >= 2 images");
    std::vector<std::vector<double>> M(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double c = i == j ? consistency(sets[i], sets[i], enc) : consistency(sets[i], sets[j], enc);
            M[i][j] = M[j][i] = c;
        }
    return M;
}

}  // namespace vecsketch
