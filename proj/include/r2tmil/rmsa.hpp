#pragma once

// Regional multi-head self-attention. Attention is computed independently
// inside every region of the squared instance map, with projections shared
// across regions and an optional depthwise conv on the logits (EPEG).

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2tmil/attention.hpp"
#include "r2tmil/numerics.hpp"
#include "r2tmil/region.hpp"

namespace r2t {

struct RMSAConfig {
    std::size_t heads = 8;
    std::size_t epeg_k = 15;
    bool use_epeg = true;
    EpegVariant epeg_variant = EpegVariant::attn;
    bool scale_full_d = false;  // divide logits by sqrt(D) instead of sqrt(D / heads)
    bool mask_padding = false;  // exclude zero-padded cells from the keys
};

struct RMSAParams {
    ParamTensor wq, wk, wv, wo;
    ParamTensor epeg;  // heads x k

    static RMSAParams create(const std::string& prefix, std::size_t dim, const RMSAConfig& cfg, Rng& rng) {
        if (cfg.heads == 0 || dim % cfg.heads != 0)
            throw std::invalid_argument("rmsa: D=" + std::to_string(dim) + " not divisible by N_head=" +
                                        std::to_string(cfg.heads));
        check_odd_kernel(cfg.epeg_k);
        RMSAParams p{{prefix + ".wq", {dim, dim}}, {prefix + ".wk", {dim, dim}}, {prefix + ".wv", {dim, dim}},
                     {prefix + ".wo", {dim, dim}}, {prefix + ".epeg", {cfg.heads, cfg.epeg_k}}};
        init_fan_in(p.wq, rng);
        init_fan_in(p.wk, rng);
        init_fan_in(p.wv, rng);
        init_fan_in(p.wo, rng);
        return p;
    }

    std::size_t dim() const { return wq.value.rows(); }
    ParamList params() { return {&wq, &wk, &wv, &wo, &epeg}; }
};

inline double attention_scale(std::size_t dim, std::size_t heads, bool full_d) {
    return std::sqrt(static_cast<double>(full_d ? dim : dim / heads));
}

inline AttentionOptions rmsa_options(const RMSAParams& p, const RMSAConfig& cfg) {
    return {cfg.heads, attention_scale(p.dim(), cfg.heads, cfg.scale_full_d), cfg.use_epeg ? &p.epeg.value : nullptr,
            cfg.epeg_variant};
}

/// e_ij = (H_i Wq_h)(H_j Wk_h)^T / scale for one head.
inline Matrix attention_logits(const Matrix& region, const RMSAParams& p, std::size_t head, const RMSAConfig& cfg) {
    require_shape(region.cols() == p.dim(), "attention_logits");
    const std::size_t dh = p.dim() / cfg.heads;
    const Matrix q = column_block(matmul(region, p.wq.value), head * dh, dh);
    const Matrix k = column_block(matmul(region, p.wk.value), head * dh, dh);
    Matrix e = matmul_nt(q, k);
    e *= 1.0 / attention_scale(p.dim(), cfg.heads, cfg.scale_full_d);
    return e;
}

/// alpha_h = row-softmax(e_h + conv(e_h)), conv along the key axis with kernel row h.
inline std::vector<Matrix> epeg_adjust(const std::vector<Matrix>& logits, const Matrix& kernels) {
    if (logits.size() != kernels.rows()) throw std::invalid_argument("epeg_adjust: head count mismatch");
    check_odd_kernel(kernels.cols());
    std::vector<Matrix> alpha;
    alpha.reserve(logits.size());
    for (std::size_t h = 0; h < logits.size(); ++h) {
        Matrix s = logits[h];
        std::vector<double> conv(s.cols());
        for (std::size_t i = 0; i < s.rows(); ++i) {
            conv1d_same(logits[h].row(i), kernels.row(h), conv);
            for (std::size_t j = 0; j < s.cols(); ++j) s(i, j) += conv[j];
        }
        alpha.push_back(softmax(s, Axis::rows));
    }
    return alpha;
}

struct RMSACache {
    RegionGeometry geo;
    Matrix input;  // N^2 x D map
    Matrix q, k, v;
    Matrix concat;
    std::vector<AttentionCache> regions;
};

/// Regional attention over an N^2 x D map laid out by `geo`. Returns N^2 x D.
inline Matrix rmsa_map_forward(const Matrix& map, const RegionGeometry& geo, const RMSAParams& p,
                               const RMSAConfig& cfg, RMSACache* cache = nullptr) {
    require_shape(map.rows() == geo.cells() && map.cols() == p.dim(), "r_msa");
    const AttentionOptions opt = rmsa_options(p, cfg);
    Matrix q = matmul(map, p.wq.value);
    Matrix k = matmul(map, p.wk.value);
    Matrix v = matmul(map, p.wv.value);
    Matrix concat(map.rows(), map.cols());
    if (cache) cache->regions.assign(geo.regions(), AttentionCache{});
    std::vector<char> mask;
    for (std::size_t l = 0; l < geo.regions(); ++l) {
        if (cfg.mask_padding) {
            mask.assign(geo.region_cells(), 0);
            for (std::size_t pos = 0; pos < geo.region_cells(); ++pos) mask[pos] = geo.is_valid_cell(geo.cell(l, pos));
        }
        const Matrix o = attend(gather_region(q, geo, l), gather_region(k, geo, l), gather_region(v, geo, l), opt,
                                mask, cache ? &cache->regions[l] : nullptr);
        scatter_region(o, geo, l, concat);
    }
    Matrix out = matmul(concat, p.wo.value);
    if (cache) {
        cache->geo = geo;
        cache->input = map;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->concat = std::move(concat);
    }
    return out;
}

/// Accumulates parameter gradients; returns d(map).
inline Matrix rmsa_map_backward(const Matrix& dout, const RMSACache& cache, RMSAParams& p, const RMSAConfig& cfg) {
    const RegionGeometry& geo = cache.geo;
    const AttentionOptions opt = rmsa_options(p, cfg);
    p.wo.grad += matmul_tn(cache.concat, dout);
    const Matrix dconcat = matmul_nt(dout, p.wo.value);
    Matrix dq(dout.rows(), dout.cols()), dk(dout.rows(), dout.cols()), dv(dout.rows(), dout.cols());
    Matrix* dkern = cfg.use_epeg ? &p.epeg.grad : nullptr;
    for (std::size_t l = 0; l < geo.regions(); ++l) {
        const auto g = attend_backward(gather_region(dconcat, geo, l), gather_region(cache.q, geo, l),
                                       gather_region(cache.k, geo, l), gather_region(cache.v, geo, l), opt,
                                       cache.regions[l], dkern);
        scatter_add_region(g.dq, geo, l, dq);
        scatter_add_region(g.dk, geo, l, dk);
        scatter_add_region(g.dv, geo, l, dv);
    }
    p.wq.grad += matmul_tn(cache.input, dq);
    p.wk.grad += matmul_tn(cache.input, dk);
    p.wv.grad += matmul_tn(cache.input, dv);
    Matrix dmap = matmul_nt(dq, p.wq.value);
    dmap += matmul_nt(dk, p.wk.value);
    dmap += matmul_nt(dv, p.wv.value);
    return dmap;
}

/// Attention inside one region (M^2 x D), output projected by Wo.
inline Matrix region_attention(const Matrix& region, const RMSAParams& p, const RMSAConfig& cfg) {
    const std::size_t m = ceil_sqrt(region.rows());
    if (m * m != region.rows()) throw std::invalid_argument("region_attention: region must hold M^2 instances");
    return rmsa_map_forward(region, RegionGeometry{1, m, region.rows()}, p, cfg);
}

/// square_and_pad -> partition -> per-region attention -> flatten_back.
inline Matrix r_msa(const Matrix& h, const RMSAParams& p, const RMSAConfig& cfg, std::size_t per_side,
                    RMSACache* cache = nullptr) {
    const SquaredMap map = square_and_pad(h, per_side);
    const auto geo = RegionGeometry::for_instances(h.rows(), per_side);
    return head_rows(rmsa_map_forward(map.cells, geo, p, cfg, cache), h.rows());
}

inline Matrix r_msa_backward(const Matrix& dout, const RMSACache& cache, RMSAParams& p, const RMSAConfig& cfg) {
    const Matrix dmap = rmsa_map_backward(pad_rows(dout, cache.geo.cells()), cache, p, cfg);
    return head_rows(dmap, dout.rows());
}

}  // namespace r2t
