#pragma once

// The re-embedding block:
//   Zhat = R-MSA(LN(H)) + H
//   Z    = CR-MSA(LN(Zhat)) + Zhat
// with an optional pre-norm FFN sublayer and stacking of several blocks.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2tmil/crmsa.hpp"
#include "r2tmil/numerics.hpp"
#include "r2tmil/region.hpp"
#include "r2tmil/rmsa.hpp"

namespace r2t {

inline constexpr double kLayerNormEps = 1e-5;

struct R2TConfig {
    std::size_t dim = 512;
    std::size_t regions_per_side = 8;  // L
    std::size_t heads = 8;
    std::size_t epeg_k = 15;
    std::size_t slots = 3;  // K of CR-MSA
    bool use_epeg = true;
    bool use_crmsa = true;
    std::size_t n_blocks = 1;
    bool use_ffn = false;
    bool mask_padding = false;
    bool rezero_pad = true;
    EpegVariant epeg_variant = EpegVariant::attn;
    CrAttnAxis crmsa_attn_axis = CrAttnAxis::regions;
    bool scale_full_d = false;

    RMSAConfig rmsa() const { return {heads, epeg_k, use_epeg, epeg_variant, scale_full_d, mask_padding}; }
    CRMSAConfig crmsa() const { return {slots, heads, crmsa_attn_axis, scale_full_d}; }

    /// n_blocks == 0 is accepted and means "no re-embedding".
    void validate() const {
        if (dim == 0 || heads == 0 || dim % heads != 0)
            throw std::invalid_argument("R2TConfig: D=" + std::to_string(dim) + " must be a positive multiple of N_head=" +
                                        std::to_string(heads));
        if (epeg_k % 2 == 0) throw std::invalid_argument("R2TConfig: epeg_k must be odd");
        if (regions_per_side == 0) throw std::invalid_argument("R2TConfig: L must be >= 1");
        if (slots == 0) throw std::invalid_argument("R2TConfig: K must be >= 1");
    }
};

struct LayerNormParams {
    ParamTensor scale, shift;

    static LayerNormParams create(const std::string& prefix, std::size_t dim) {
        LayerNormParams p{{prefix + ".scale", {dim}}, {prefix + ".shift", {dim}}};
        p.scale.value.fill(1.0);
        return p;
    }
    Matrix forward(const Matrix& x, LayerNormCache* cache) const {
        return layer_norm(x, scale.value.flat(), shift.value.flat(), kLayerNormEps, cache);
    }
    Matrix backward(const Matrix& dy, const LayerNormCache& cache) {
        auto g = layer_norm_backward(dy, scale.value.flat(), cache);
        for (std::size_t j = 0; j < g.dscale.size(); ++j) {
            scale.grad(0, j) += g.dscale[j];
            shift.grad(0, j) += g.dshift[j];
        }
        return std::move(g.dx);
    }
    ParamList params() { return {&scale, &shift}; }
};

/// Exact (erf) GELU.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

struct FFNParams {
    LayerNormParams norm;
    ParamTensor w1, b1, w2, b2;

    static FFNParams create(const std::string& prefix, std::size_t dim, Rng& rng) {
        const std::size_t hidden = 4 * dim;
        FFNParams p{LayerNormParams::create(prefix + ".ln", dim),
                    {prefix + ".w1", {dim, hidden}},
                    {prefix + ".b1", {hidden}},
                    {prefix + ".w2", {hidden, dim}},
                    {prefix + ".b2", {dim}}};
        init_fan_in(p.w1, rng);
        init_fan_in(p.w2, rng);
        return p;
    }
    ParamList params() {
        ParamList l = norm.params();
        for (ParamTensor* t : {&w1, &b1, &w2, &b2}) l.push_back(t);
        return l;
    }
};

struct R2TBlockParams {
    LayerNormParams norm1;
    RMSAParams rmsa;
    LayerNormParams norm2;
    CRMSAParams crmsa;
    std::vector<FFNParams> ffn;  // empty unless use_ffn

    static R2TBlockParams create(const std::string& prefix, const R2TConfig& cfg, Rng& rng) {
        cfg.validate();
        R2TBlockParams p{LayerNormParams::create(prefix + ".ln1", cfg.dim),
                         RMSAParams::create(prefix + ".rmsa", cfg.dim, cfg.rmsa(), rng),
                         LayerNormParams::create(prefix + ".ln2", cfg.dim),
                         CRMSAParams::create(prefix + ".crmsa", cfg.dim, cfg.crmsa(), rng),
                         {}};
        if (cfg.use_ffn) p.ffn.push_back(FFNParams::create(prefix + ".ffn", cfg.dim, rng));
        return p;
    }

    ParamList params() {
        ParamList l = norm1.params();
        for (ParamTensor* t : rmsa.params()) l.push_back(t);
        for (ParamTensor* t : norm2.params()) l.push_back(t);
        for (ParamTensor* t : crmsa.params()) l.push_back(t);
        for (auto& f : ffn) for (ParamTensor* t : f.params()) l.push_back(t);
        return l;
    }
};

struct R2TBlockCache {
    RegionGeometry geo;
    LayerNormCache ln1;
    RMSACache rmsa;
    LayerNormCache ln2;
    CRMSACache crmsa;
    // FFN
    LayerNormCache ln3;
    Matrix ffn_in, ffn_pre, ffn_act;
};

/// One block on H (I x D); returns I x D.
inline Matrix r2t_block_forward(const Matrix& h, const R2TBlockParams& p, const R2TConfig& cfg,
                                R2TBlockCache* cache = nullptr) {
    const auto geo = RegionGeometry::for_instances(h.rows(), cfg.regions_per_side);
    const std::size_t n = h.rows();
    LayerNormCache ln1, ln2;
    RMSACache rc;
    CRMSACache cc;

    const Matrix x1 = p.norm1.forward(h, cache ? &ln1 : nullptr);
    Matrix zmap = rmsa_map_forward(pad_rows(x1, geo.cells()), geo, p.rmsa, cfg.rmsa(), cache ? &rc : nullptr);
    for (std::size_t i = 0; i < n * h.cols(); ++i) zmap.flat()[i] += h.flat()[i];

    if (cfg.use_crmsa) {
        Matrix u;
        if (cfg.rezero_pad) {
            u = pad_rows(p.norm2.forward(head_rows(zmap, n), cache ? &ln2 : nullptr), geo.cells());
        } else {
            u = p.norm2.forward(zmap, cache ? &ln2 : nullptr);
        }
        std::vector<Matrix> regions;
        regions.reserve(geo.regions());
        for (std::size_t l = 0; l < geo.regions(); ++l) regions.push_back(gather_region(u, geo, l));
        const auto c = cr_msa(regions, p.crmsa, cfg.crmsa(), cache ? &cc : nullptr);
        for (std::size_t l = 0; l < geo.regions(); ++l) scatter_add_region(c[l], geo, l, zmap);
    }
    Matrix z = head_rows(zmap, n);

    if (cfg.use_ffn) {
        const FFNParams& f = p.ffn.at(0);
        LayerNormCache ln3;
        const Matrix a = f.norm.forward(z, cache ? &ln3 : nullptr);
        const Matrix pre = linear(a, f.w1.value, f.b1.value.flat());
        Matrix act = pre;
        for (double& v : act.flat()) v = gelu(v);
        z += linear(act, f.w2.value, f.b2.value.flat());
        if (cache) {
            cache->ln3 = std::move(ln3);
            cache->ffn_in = a;
            cache->ffn_pre = pre;
            cache->ffn_act = std::move(act);
        }
    }
    if (cache) {
        cache->geo = geo;
        cache->ln1 = std::move(ln1);
        cache->rmsa = std::move(rc);
        cache->ln2 = std::move(ln2);
        cache->crmsa = std::move(cc);
    }
    return z;
}

/// Accumulates parameter gradients; returns dH.
inline Matrix r2t_block_backward(const Matrix& dz_in, const R2TBlockCache& cache, R2TBlockParams& p,
                                 const R2TConfig& cfg) {
    const RegionGeometry& geo = cache.geo;
    const std::size_t n = dz_in.rows();
    Matrix dz = dz_in;

    if (cfg.use_ffn) {
        FFNParams& f = p.ffn.at(0);
        const auto g2 = linear_backward(cache.ffn_act, f.w2.value, dz);
        f.w2.grad += g2.dw;
        for (std::size_t j = 0; j < g2.db.size(); ++j) f.b2.grad(0, j) += g2.db[j];
        Matrix dpre = g2.dx;
        for (std::size_t i = 0; i < dpre.size(); ++i) dpre.flat()[i] *= gelu_grad(cache.ffn_pre.flat()[i]);
        const auto g1 = linear_backward(cache.ffn_in, f.w1.value, dpre);
        f.w1.grad += g1.dw;
        for (std::size_t j = 0; j < g1.db.size(); ++j) f.b1.grad(0, j) += g1.db[j];
        dz += f.norm.backward(g1.dx, cache.ln3);
    }

    // d(zhat map): identity path plus the CR-MSA branch
    Matrix dzmap = pad_rows(dz, geo.cells());
    if (cfg.use_crmsa) {
        std::vector<Matrix> dc;
        dc.reserve(geo.regions());
        for (std::size_t l = 0; l < geo.regions(); ++l) dc.push_back(gather_region(dzmap, geo, l));
        const auto du_regions = cr_msa_backward(dc, cache.crmsa, p.crmsa, cfg.crmsa());
        Matrix du(geo.cells(), dz.cols());
        for (std::size_t l = 0; l < geo.regions(); ++l) scatter_region(du_regions[l], geo, l, du);
        if (cfg.rezero_pad) {
            const Matrix dzh = p.norm2.backward(head_rows(du, n), cache.ln2);
            for (std::size_t i = 0; i < dzh.size(); ++i) dzmap.flat()[i] += dzh.flat()[i];
        } else {
            dzmap += p.norm2.backward(du, cache.ln2);
        }
    }

    // zhat = rmsa(pad(LN1(H))) + pad(H)
    Matrix dh = head_rows(dzmap, n);
    const Matrix dx1 = head_rows(rmsa_map_backward(dzmap, cache.rmsa, p.rmsa, cfg.rmsa()), n);
    dh += p.norm1.backward(dx1, cache.ln1);
    return dh;
}

}  // namespace r2t
