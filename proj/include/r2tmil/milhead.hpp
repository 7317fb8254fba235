#pragma once

// Attention-based MIL aggregation (gated or plain), linear bag classifier and
// cross-entropy bag loss.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2tmil/numerics.hpp"

namespace r2t {

struct MILHeadConfig {
    std::size_t hidden = 128;  // Dh
    std::size_t classes = 2;
    bool gated = true;
};

struct MILHeadParams {
    ParamTensor v, u;  // D x Dh
    ParamTensor w;     // Dh
    ParamTensor wc;    // D x C
    ParamTensor bc;    // C

    static MILHeadParams create(const std::string& prefix, std::size_t dim, const MILHeadConfig& cfg, Rng& rng) {
        if (cfg.hidden == 0) throw std::invalid_argument("milhead: Dh must be >= 1");
        if (cfg.classes < 2) throw std::invalid_argument("milhead: need at least two classes");
        MILHeadParams p{{prefix + ".V", {dim, cfg.hidden}},
                        {prefix + ".U", {dim, cfg.hidden}},
                        {prefix + ".w", {cfg.hidden}},
                        {prefix + ".Wc", {dim, cfg.classes}},
                        {prefix + ".bc", {cfg.classes}}};
        init_fan_in(p.v, rng);
        init_fan_in(p.u, rng);
        init_uniform(p.w, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)), rng);
        init_fan_in(p.wc, rng);
        return p;
    }

    ParamList params() { return {&v, &u, &w, &wc, &bc}; }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct PoolResult {
    std::vector<double> bag;        // D
    std::vector<double> attention;  // I
};

struct PoolCache {
    Matrix z;
    Matrix tanh_part;     // I x Dh
    Matrix sigmoid_part;  // I x Dh, unused for the plain variant
    std::vector<double> attention;
};

/// a = softmax_i( w . (tanh(Z_i V) * sigmoid(Z_i U)) ), bag = sum_i a_i Z_i.
/// The reductions over instances are order-invariant, so permuting the rows
/// of Z permutes the attention and leaves the bag vector bit-identical.
inline PoolResult gated_attention_pool(const Matrix& z, const MILHeadParams& p, bool gated = true,
                                       PoolCache* cache = nullptr) {
    if (z.rows() == 0) throw std::invalid_argument("gated_attention_pool: empty bag");
    require_shape(z.cols() == p.v.value.rows(), "gated_attention_pool");
    const std::size_t n = z.rows();
    const std::size_t dh = p.w.value.cols();
    Matrix t = matmul(z, p.v.value);
    for (double& x : t.flat()) x = std::tanh(x);
    Matrix s;
    if (gated) {
        s = matmul(z, p.u.value);
        for (double& x : s.flat()) x = sigmoid(x);
    }
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dh; ++j) acc += p.w.value(0, j) * t(i, j) * (gated ? s(i, j) : 1.0);
        score[i] = acc;
    }
    if (!all_finite(score)) throw std::domain_error("gated_attention_pool: non-finite score");
    const double mx = *std::max_element(score.begin(), score.end());
    std::vector<double> ex(n);
    for (std::size_t i = 0; i < n; ++i) ex[i] = std::exp(score[i] - mx);
    const double denom = order_invariant_sum(ex);
    PoolResult res{std::vector<double>(z.cols()), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) res.attention[i] = ex[i] / denom;
    std::vector<double> terms(n);
    for (std::size_t d = 0; d < z.cols(); ++d) {
        for (std::size_t i = 0; i < n; ++i) terms[i] = res.attention[i] * z(i, d);
        res.bag[d] = order_invariant_sum(terms);
    }
    if (cache) {
        cache->z = z;
        cache->tanh_part = std::move(t);
        cache->sigmoid_part = std::move(s);
        cache->attention = res.attention;
    }
    return res;
}

/// Accumulates head attention gradients (V, U, w); returns dZ.
inline Matrix gated_attention_pool_backward(std::span<const double> dbag, const PoolCache& cache, MILHeadParams& p,
                                            bool gated = true) {
    const Matrix& z = cache.z;
    const std::size_t n = z.rows();
    const std::size_t dh = p.w.value.cols();
    const auto& a = cache.attention;
    Matrix dz(n, z.cols());
    std::vector<double> da(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t d = 0; d < z.cols(); ++d) {
            dz(i, d) = a[i] * dbag[d];
            acc += z(i, d) * dbag[d];
        }
        da[i] = acc;
    }
    const auto dscore = softmax_backward(a, da);
    Matrix dt(n, dh), ds(gated ? n : 0, dh);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dh; ++j) {
            const double tv = cache.tanh_part(i, j);
            const double sv = gated ? cache.sigmoid_part(i, j) : 1.0;
            p.w.grad(0, j) += dscore[i] * tv * sv;
            const double g = dscore[i] * p.w.value(0, j);
            dt(i, j) = g * sv * (1.0 - tv * tv);
            if (gated) ds(i, j) = g * tv * sv * (1.0 - sv);
        }
    }
    p.v.grad += matmul_tn(z, dt);
    dz += matmul_nt(dt, p.v.value);
    if (gated) {
        p.u.grad += matmul_tn(z, ds);
        dz += matmul_nt(ds, p.u.value);
    }
    return dz;
}

/// logits = bag^T Wc + bc
inline std::vector<double> classify(std::span<const double> bag, const MILHeadParams& p) {
    if (bag.size() != p.wc.value.rows()) throw std::invalid_argument("classify: shape mismatch");
    std::vector<double> logits(p.bc.value.flat().begin(), p.bc.value.flat().end());
    for (std::size_t d = 0; d < bag.size(); ++d)
        for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += bag[d] * p.wc.value(d, c);
    return logits;
}

/// Accumulates Wc, bc gradients; returns d(bag).
inline std::vector<double> classify_backward(std::span<const double> bag, std::span<const double> dlogits,
                                             MILHeadParams& p) {
    std::vector<double> dbag(bag.size(), 0.0);
    for (std::size_t c = 0; c < dlogits.size(); ++c) p.bc.grad(0, c) += dlogits[c];
    for (std::size_t d = 0; d < bag.size(); ++d)
        for (std::size_t c = 0; c < dlogits.size(); ++c) {
            p.wc.grad(d, c) += bag[d] * dlogits[c];
            dbag[d] += p.wc.value(d, c) * dlogits[c];
        }
    return dbag;
}

inline void check_label(std::size_t label, std::size_t classes) {
    if (label >= classes)
        throw std::out_of_range("label out of range: " + std::to_string(label) + " >= " + std::to_string(classes));
}

/// -log softmax(logits)[label] via log-sum-exp.
inline double bag_loss(std::span<const double> logits, std::size_t label) {
    check_label(label, logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    return mx + std::log(s) - logits[label];
}

inline std::vector<double> bag_loss_backward(std::span<const double> logits, std::size_t label) {
    check_label(label, logits.size());
    auto g = softmax(logits);
    g[label] -= 1.0;
    return g;
}

struct BagPrediction {
    std::vector<double> logits;
    std::vector<double> probs;
    std::vector<double> attention;
    std::size_t predicted = 0;
};

}  // namespace r2t
