#pragma once

// Cross-region multi-head self-attention. Each region is pooled into K
// representative vectors, the representatives attend across regions, and the
// updated representatives are dispatched back to the region's instances with
// MinMax- and softmax-normalized weights.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2tmil/attention.hpp"
#include "r2tmil/numerics.hpp"
#include "r2tmil/rmsa.hpp"

namespace r2t {

/// Sequence axis of the inner attention: across regions for each slot, or
/// across slots inside each region.
enum class CrAttnAxis { regions, slots };

inline constexpr double kMinMaxEps = 1e-8;

struct CRMSAConfig {
    std::size_t slots = 3;  // K
    std::size_t heads = 8;
    CrAttnAxis axis = CrAttnAxis::regions;
    bool scale_full_d = false;
};

struct CRMSAParams {
    ParamTensor phi;  // D x K
    ParamTensor wq, wk, wv, wo;

    static CRMSAParams create(const std::string& prefix, std::size_t dim, const CRMSAConfig& cfg, Rng& rng) {
        if (cfg.slots == 0) throw std::invalid_argument("crmsa: K must be >= 1");
        if (cfg.heads == 0 || dim % cfg.heads != 0)
            throw std::invalid_argument("crmsa: D=" + std::to_string(dim) + " not divisible by N_head=" +
                                        std::to_string(cfg.heads));
        CRMSAParams p{{prefix + ".phi", {dim, cfg.slots}},
                      {prefix + ".wq", {dim, dim}},
                      {prefix + ".wk", {dim, dim}},
                      {prefix + ".wv", {dim, dim}},
                      {prefix + ".wo", {dim, dim}}};
        init_fan_in(p.phi, rng);
        init_fan_in(p.wq, rng);
        init_fan_in(p.wk, rng);
        init_fan_in(p.wv, rng);
        init_fan_in(p.wo, rng);
        return p;
    }

    std::size_t dim() const { return phi.value.rows(); }
    std::size_t slots() const { return phi.value.cols(); }
    ParamList params() { return {&phi, &wq, &wk, &wv, &wo}; }
};

/// All per-region matrices are K x M^2.
struct CRWeights {
    std::vector<Matrix> logits;
    std::vector<Matrix> combine;          // softmax over instances
    std::vector<Matrix> dispatch_soft;    // softmax over slots
    std::vector<Matrix> dispatch_minmax;  // MinMax over instances
};

inline CRWeights cr_weights(const std::vector<Matrix>& zhat, const Matrix& phi) {
    CRWeights w;
    for (const Matrix& reg : zhat) {
        require_shape(reg.cols() == phi.rows(), "cr_weights");
        Matrix logits = transpose(matmul(reg, phi));
        Matrix mm(logits.rows(), logits.cols());
        for (std::size_t k = 0; k < logits.rows(); ++k) {
            const auto row = logits.row(k);
            const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
            const double den = *hi - *lo + kMinMaxEps;
            for (std::size_t p = 0; p < row.size(); ++p) mm(k, p) = (row[p] - *lo) / den;
        }
        w.combine.push_back(softmax(logits, Axis::rows));
        w.dispatch_soft.push_back(softmax(logits, Axis::cols));
        w.dispatch_minmax.push_back(std::move(mm));
        w.logits.push_back(std::move(logits));
    }
    return w;
}

/// R[r] = combine[r] * Zhat[r]  (K x D)
inline std::vector<Matrix> region_representatives(const std::vector<Matrix>& zhat, const std::vector<Matrix>& combine) {
    if (zhat.size() != combine.size()) throw std::invalid_argument("region_representatives: region count mismatch");
    std::vector<Matrix> reps;
    reps.reserve(zhat.size());
    for (std::size_t r = 0; r < zhat.size(); ++r) reps.push_back(matmul(combine[r], zhat[r]));
    return reps;
}

struct CrossRegionCache {
    Matrix stacked;  // (L^2 K) x D, row r * K + k
    Matrix q, k, v;
    Matrix concat;
    std::vector<AttentionCache> sequences;
};

inline AttentionOptions crmsa_options(const CRMSAParams& p, const CRMSAConfig& cfg) {
    return {cfg.heads, attention_scale(p.dim(), cfg.heads, cfg.scale_full_d), nullptr, EpegVariant::attn};
}

/// Row indices of the stacked representative matrix forming sequence `s`.
inline std::vector<std::size_t> cr_sequence_rows(std::size_t s, std::size_t regions, std::size_t slots, CrAttnAxis axis) {
    std::vector<std::size_t> rows;
    if (axis == CrAttnAxis::regions) {
        for (std::size_t r = 0; r < regions; ++r) rows.push_back(r * slots + s);
    } else {
        for (std::size_t k = 0; k < slots; ++k) rows.push_back(s * slots + k);
    }
    return rows;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = m.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

inline void scatter_rows(const Matrix& src, const std::vector<std::size_t>& rows, Matrix& dst) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto s = src.row(i);
        std::copy(s.begin(), s.end(), dst.row(rows[i]).begin());
    }
}

inline void scatter_add_rows(const Matrix& src, const std::vector<std::size_t>& rows, Matrix& dst) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto d = dst.row(rows[i]);
        const auto s = src.row(i);
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += s[j];
    }
}

inline std::vector<Matrix> cross_region_attention(const std::vector<Matrix>& reps, const CRMSAParams& p,
                                                  const CRMSAConfig& cfg, CrossRegionCache* cache = nullptr) {
    const std::size_t regions = reps.size();
    const std::size_t slots = p.slots();
    const std::size_t dim = p.dim();
    Matrix stacked(regions * slots, dim);
    for (std::size_t r = 0; r < regions; ++r) {
        require_shape(reps[r].rows() == slots && reps[r].cols() == dim, "cross_region_attention");
        std::copy(reps[r].flat().begin(), reps[r].flat().end(), stacked.row(r * slots).begin());
    }
    const AttentionOptions opt = crmsa_options(p, cfg);
    Matrix q = matmul(stacked, p.wq.value);
    Matrix k = matmul(stacked, p.wk.value);
    Matrix v = matmul(stacked, p.wv.value);
    Matrix concat(stacked.rows(), dim);
    const std::size_t n_seq = cfg.axis == CrAttnAxis::regions ? slots : regions;
    if (cache) cache->sequences.assign(n_seq, AttentionCache{});
    for (std::size_t s = 0; s < n_seq; ++s) {
        const auto rows = cr_sequence_rows(s, regions, slots, cfg.axis);
        const Matrix o = attend(gather_rows(q, rows), gather_rows(k, rows), gather_rows(v, rows), opt, {},
                                cache ? &cache->sequences[s] : nullptr);
        scatter_rows(o, rows, concat);
    }
    const Matrix out = matmul(concat, p.wo.value);
    std::vector<Matrix> rhat;
    rhat.reserve(regions);
    for (std::size_t r = 0; r < regions; ++r) {
        Matrix m(slots, dim);
        std::copy(out.row(r * slots).begin(), out.row(r * slots).begin() + static_cast<std::ptrdiff_t>(slots * dim),
                  m.data());
        rhat.push_back(std::move(m));
    }
    if (cache) {
        cache->stacked = std::move(stacked);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->concat = std::move(concat);
    }
    return rhat;
}

inline std::vector<Matrix> cross_region_attention_backward(const std::vector<Matrix>& drhat,
                                                           const CrossRegionCache& cache, CRMSAParams& p,
                                                           const CRMSAConfig& cfg) {
    const std::size_t regions = drhat.size();
    const std::size_t slots = p.slots();
    const std::size_t dim = p.dim();
    Matrix dout(regions * slots, dim);
    for (std::size_t r = 0; r < regions; ++r)
        std::copy(drhat[r].flat().begin(), drhat[r].flat().end(), dout.row(r * slots).begin());
    const AttentionOptions opt = crmsa_options(p, cfg);
    p.wo.grad += matmul_tn(cache.concat, dout);
    const Matrix dconcat = matmul_nt(dout, p.wo.value);
    Matrix dq(dout.rows(), dim), dk(dout.rows(), dim), dv(dout.rows(), dim);
    for (std::size_t s = 0; s < cache.sequences.size(); ++s) {
        const auto rows = cr_sequence_rows(s, regions, slots, cfg.axis);
        const auto g = attend_backward(gather_rows(dconcat, rows), gather_rows(cache.q, rows),
                                       gather_rows(cache.k, rows), gather_rows(cache.v, rows), opt,
                                       cache.sequences[s]);
        scatter_add_rows(g.dq, rows, dq);
        scatter_add_rows(g.dk, rows, dk);
        scatter_add_rows(g.dv, rows, dv);
    }
    p.wq.grad += matmul_tn(cache.stacked, dq);
    p.wk.grad += matmul_tn(cache.stacked, dk);
    p.wv.grad += matmul_tn(cache.stacked, dv);
    Matrix dstacked = matmul_nt(dq, p.wq.value);
    dstacked += matmul_nt(dk, p.wk.value);
    dstacked += matmul_nt(dv, p.wv.value);
    std::vector<Matrix> dreps;
    for (std::size_t r = 0; r < regions; ++r) {
        Matrix m(slots, dim);
        std::copy(dstacked.row(r * slots).begin(),
                  dstacked.row(r * slots).begin() + static_cast<std::ptrdiff_t>(slots * dim), m.data());
        dreps.push_back(std::move(m));
    }
    return dreps;
}

/// Z[r][p] = sum_k soft[r][k,p] * minmax[r][k,p] * Rhat[r][k]
inline std::vector<Matrix> cr_dispatch(const std::vector<Matrix>& rhat, const CRWeights& w) {
    std::vector<Matrix> z;
    z.reserve(rhat.size());
    for (std::size_t r = 0; r < rhat.size(); ++r) {
        Matrix gate = w.dispatch_soft[r];
        for (std::size_t i = 0; i < gate.size(); ++i) gate.flat()[i] *= w.dispatch_minmax[r].flat()[i];
        z.push_back(matmul_tn(gate, rhat[r]));
    }
    return z;
}

struct CRMSACache {
    std::vector<Matrix> zhat;
    CRWeights weights;
    std::vector<Matrix> reps;
    std::vector<Matrix> rhat;
    CrossRegionCache cross;
};

inline std::vector<Matrix> cr_msa(const std::vector<Matrix>& zhat, const CRMSAParams& p, const CRMSAConfig& cfg,
                                  CRMSACache* cache = nullptr) {
    CRWeights w = cr_weights(zhat, p.phi.value);
    std::vector<Matrix> reps = region_representatives(zhat, w.combine);
    std::vector<Matrix> rhat = cross_region_attention(reps, p, cfg, cache ? &cache->cross : nullptr);
    std::vector<Matrix> z = cr_dispatch(rhat, w);
    if (cache) {
        cache->zhat = zhat;
        cache->weights = std::move(w);
        cache->reps = std::move(reps);
        cache->rhat = std::move(rhat);
    }
    return z;
}

/// Gradient of the MinMax normalization of one row. When max == min the
/// output is constant zero and the gradient is taken as zero.
inline void minmax_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
    const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (hi == lo) return;
    const auto i_lo = static_cast<std::size_t>(lo_it - x.begin());
    const auto i_hi = static_cast<std::size_t>(hi_it - x.begin());
    const double den = hi - lo + kMinMaxEps;
    for (std::size_t p = 0; p < x.size(); ++p) {
        const double num = x[p] - lo;
        dx[p] += dy[p] / den;
        dx[i_lo] += dy[p] * (-1.0 / den + num / (den * den));
        dx[i_hi] += dy[p] * (-num / (den * den));
    }
}

inline std::vector<Matrix> cr_msa_backward(const std::vector<Matrix>& dz, const CRMSACache& cache, CRMSAParams& p,
                                           const CRMSAConfig& cfg) {
    const std::size_t regions = dz.size();
    const CRWeights& w = cache.weights;
    std::vector<Matrix> dzhat(regions);
    std::vector<Matrix> drhat(regions);
    std::vector<Matrix> dlogits(regions);
    for (std::size_t r = 0; r < regions; ++r) {
        // dispatch
        Matrix gate = w.dispatch_soft[r];
        for (std::size_t i = 0; i < gate.size(); ++i) gate.flat()[i] *= w.dispatch_minmax[r].flat()[i];
        drhat[r] = matmul(gate, dz[r]);
        const Matrix dgate = matmul_nt(cache.rhat[r], dz[r]);
        Matrix dsoft = dgate;
        Matrix dmm = dgate;
        for (std::size_t i = 0; i < dgate.size(); ++i) {
            dsoft.flat()[i] *= w.dispatch_minmax[r].flat()[i];
            dmm.flat()[i] *= w.dispatch_soft[r].flat()[i];
        }
        Matrix dl = softmax_backward(w.dispatch_soft[r], dsoft, Axis::cols);
        for (std::size_t k = 0; k < dl.rows(); ++k) minmax_backward(w.logits[r].row(k), dmm.row(k), dl.row(k));
        dlogits[r] = std::move(dl);
    }
    const std::vector<Matrix> dreps = cross_region_attention_backward(drhat, cache.cross, p, cfg);
    for (std::size_t r = 0; r < regions; ++r) {
        // representatives
        const Matrix dcombine = matmul_nt(dreps[r], cache.zhat[r]);
        dzhat[r] = matmul_tn(w.combine[r], dreps[r]);
        dlogits[r] += softmax_backward(w.combine[r], dcombine, Axis::rows);
        // logits = (Zhat phi)^T
        p.phi.grad += matmul_tn(cache.zhat[r], transpose(dlogits[r]));
        dzhat[r] += matmul_tn(dlogits[r], transpose(p.phi.value));
    }
    return dzhat;
}

}  // namespace r2t
