#include <gtest/gtest.h>

#include "r2tmil/diagnostics.hpp"
#include "r2tmil/oracles.hpp"
#include "r2tmil/r2tblock.hpp"

using namespace r2t;

namespace {

R2TConfig small_config() {
    R2TConfig cfg;
    cfg.dim = 8;
    cfg.regions_per_side = 2;
    cfg.heads = 2;
    cfg.epeg_k = 3;
    cfg.slots = 2;
    return cfg;
}

}  // namespace

TEST(R2TBlock, ZeroBranchesAreIdentity) {
    for (bool ffn : {false, true}) {
        R2TConfig cfg = small_config();
        cfg.use_ffn = ffn;
        Rng rng(1);
        R2TBlockParams p = R2TBlockParams::create("b", cfg, rng);
        p.rmsa.wv.value.fill(0.0);
        p.rmsa.wo.value.fill(0.0);
        p.crmsa.phi.value.fill(0.0);
        p.crmsa.wv.value.fill(0.0);
        p.crmsa.wo.value.fill(0.0);
        if (ffn) p.ffn[0].w2.value.fill(0.0);
        const Matrix h = random_matrix(23, 8, rng);
        EXPECT_EQ(r2t_block_forward(h, p, cfg), h);
    }
}

TEST(R2TBlock, WithoutEpegOrCrossRegionIsResidualAttention) {
    R2TConfig cfg = small_config();
    cfg.use_epeg = false;
    cfg.use_crmsa = false;
    Rng rng(2);
    R2TBlockParams p = R2TBlockParams::create("b", cfg, rng);
    init_uniform(p.norm1.scale, 1.0, rng);
    init_uniform(p.norm1.shift, 1.0, rng);
    const Matrix h = random_matrix(30, 8, rng);
    const Matrix normed = layer_norm(h, p.norm1.scale.value.flat(), p.norm1.shift.value.flat(), kLayerNormEps);
    const Matrix expect = h + oracle::naive_region_attention(normed, p.rmsa, cfg.rmsa(), 2);
    EXPECT_LT(max_abs_diff(r2t_block_forward(h, p, cfg), expect), oracle::kRecomputeTol);
}

TEST(R2TBlock, SingleInstanceClosedForm) {
    for (std::size_t l : {1u, 8u}) {
        R2TConfig cfg = small_config();
        cfg.regions_per_side = l;
        Rng rng(3);
        const R2TBlockParams p = R2TBlockParams::create("b", cfg, rng);
        const Matrix h = random_matrix(1, 8, rng);
        const Matrix normed = layer_norm(h, p.norm1.scale.value.flat(), p.norm1.shift.value.flat(), kLayerNormEps);
        const Matrix expect = h + matmul(matmul(normed, p.rmsa.wv.value), p.rmsa.wo.value);
        EXPECT_LT(max_abs_diff(r2t_block_forward(h, p, cfg), expect), 1e-14) << "L=" << l;
    }
}

TEST(R2TBlock, ShapeIsPreserved) {
    R2TConfig cfg = small_config();
    Rng rng(4);
    const R2TBlockParams p = R2TBlockParams::create("b", cfg, rng);
    for (std::size_t n : {1u, 2u, 3u, 5u, 16u, 17u, 63u, 64u, 65u, 130u}) {
        const Matrix z = r2t_block_forward(random_matrix(n, 8, rng), p, cfg);
        EXPECT_EQ(z.rows(), n);
        EXPECT_EQ(z.cols(), 8u);
        EXPECT_TRUE(all_finite(z.flat()));
    }
}

TEST(R2TBlock, GradientsPassFiniteDifferences) {
    for (bool ffn : {false, true}) {
        R2TConfig cfg = small_config();
        cfg.use_ffn = ffn;
        cfg.rezero_pad = !ffn;
        Rng rng(5);
        R2TBlockParams p = R2TBlockParams::create("b", cfg, rng);
        init_uniform(p.rmsa.epeg, 0.3, rng);
        ParamTensor h("h", {11, 8});
        // keep the MinMax slices away from their kinks
        for (int tries = 0; tries < diag_detail::kMaxRedraws; ++tries) {
            h.value = random_matrix(11, 8, rng);
            R2TBlockCache probe;
            r2t_block_forward(h.value, p, cfg, &probe);
            if (diag_detail::minmax_margin(probe.crmsa.weights) > diag_detail::kKinkMargin) break;
        }
        const Matrix c = random_matrix(11, 8, rng);
        ParamList targets = p.params();
        targets.push_back(&h);
        GradCheckOptions opt;
        opt.max_coords_per_tensor = 12;
        const auto rep = finite_diff_check_terms(
            "r2t_block", targets,
            [&] {
                const Matrix z = r2t_block_forward(h.value, p, cfg);
                std::vector<double> t(z.size());
                for (std::size_t i = 0; i < z.size(); ++i) t[i] = z.flat()[i] * c.flat()[i];
                return t;
            },
            [&] {
                R2TBlockCache cache;
                r2t_block_forward(h.value, p, cfg, &cache);
                h.grad += r2t_block_backward(c, cache, p, cfg);
            },
            opt);
        EXPECT_TRUE(rep.passed) << "ffn=" << ffn << " rel=" << rep.max_rel_err << " at " << rep.worst_coordinate;
    }
}

TEST(R2TConfig, RejectsBadShapes) {
    R2TConfig cfg = small_config();
    cfg.heads = 3;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.epeg_k = 2;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.regions_per_side = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
