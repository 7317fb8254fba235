#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "r2tmil/milhead.hpp"
#include "r2tmil/model.hpp"

using namespace r2t;

namespace {

MILHeadParams make_head(std::size_t dim, std::size_t classes, std::uint64_t seed, std::size_t hidden = 6) {
    Rng rng(seed);
    MILHeadConfig cfg;
    cfg.hidden = hidden;
    cfg.classes = classes;
    return MILHeadParams::create("head", dim, cfg, rng);
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::copy(m.row(perm[i]).begin(), m.row(perm[i]).end(), out.row(i).begin());
    return out;
}

}  // namespace

TEST(Pool, SingleInstance) {
    const MILHeadParams p = make_head(4, 2, 1);
    const Matrix z = Matrix::from_rows({{0.5, -1, 2, 0.25}});
    const auto res = gated_attention_pool(z, p);
    ASSERT_EQ(res.attention.size(), 1u);
    EXPECT_EQ(res.attention[0], 1.0);
    for (std::size_t d = 0; d < 4; ++d) EXPECT_EQ(res.bag[d], z(0, d));
}

TEST(Pool, IdenticalInstancesUniform) {
    const MILHeadParams p = make_head(3, 2, 2);
    Matrix z(7, 3);
    for (std::size_t i = 0; i < 7; ++i) {
        z(i, 0) = 0.3;
        z(i, 1) = -0.8;
        z(i, 2) = 1.1;
    }
    const auto res = gated_attention_pool(z, p);
    for (double a : res.attention) EXPECT_DOUBLE_EQ(a, 1.0 / 7.0);
    for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(res.bag[d], z(0, d), 1e-15);
}

TEST(Pool, ScalarLoopOracle) {
    for (bool gated : {true, false}) {
        const MILHeadParams p = make_head(4, 2, 3);
        Rng rng(3);
        const Matrix z = random_matrix(5, 4, rng);
        const auto res = gated_attention_pool(z, p, gated);
        std::vector<double> score(5, 0.0);
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 6; ++j) {
                double t = 0, s = 0;
                for (std::size_t d = 0; d < 4; ++d) {
                    t += z(i, d) * p.v.value(d, j);
                    s += z(i, d) * p.u.value(d, j);
                }
                const double gate = gated ? 1.0 / (1.0 + std::exp(-s)) : 1.0;
                score[i] += p.w.value(0, j) * std::tanh(t) * gate;
            }
        }
        double norm = 0;
        for (double s : score) norm += std::exp(s);
        double total = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            EXPECT_NEAR(res.attention[i], std::exp(score[i]) / norm, 1e-12);
            total += res.attention[i];
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
        for (std::size_t d = 0; d < 4; ++d) {
            double b = 0;
            for (std::size_t i = 0; i < 5; ++i) b += std::exp(score[i]) / norm * z(i, d);
            EXPECT_NEAR(res.bag[d], b, 1e-12);
        }
    }
}

TEST(Classify, ZeroWeightsGiveBias) {
    MILHeadParams p = make_head(3, 2, 4);
    p.wc.value.fill(0.0);
    p.bc.value = Matrix::from_rows({{1, 2}});
    const std::vector<double> bag{5, -3, 7};
    EXPECT_EQ(classify(bag, p), (std::vector<double>{1, 2}));
}

TEST(Classify, IdentityWeights) {
    MILHeadParams p = make_head(3, 3, 5);
    p.wc.value = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    p.bc.value = Matrix::from_rows({{0.5, 0.25, -1}});
    const std::vector<double> bag{2, 3, 4};
    EXPECT_EQ(classify(bag, p), (std::vector<double>{2.5, 3.25, 3}));
}

TEST(Classify, HandMatvec) {
    MILHeadParams p = make_head(2, 2, 6);
    p.wc.value = Matrix::from_rows({{1, 2}, {3, 4}});
    p.bc.value = Matrix::from_rows({{0.5, -0.5}});
    const std::vector<double> bag{1, -1};
    EXPECT_EQ(classify(bag, p), (std::vector<double>{-1.5, -2.5}));
    EXPECT_THROW(classify(std::vector<double>{1, 2, 3}, p), std::invalid_argument);
}

TEST(BagLoss, ClosedForms) {
    EXPECT_NEAR(bag_loss(std::vector<double>{0, 0}, 0), std::log(2.0), 1e-15);
    const double big = bag_loss(std::vector<double>{1000, 0}, 0);
    EXPECT_TRUE(std::isfinite(big));
    EXPECT_NEAR(big, 0.0, 1e-15);
    const double e = std::exp(1.0);
    EXPECT_NEAR(bag_loss(std::vector<double>{1, 2, 3}, 2), -3 + std::log(e + e * e + e * e * e), 1e-14);
    EXPECT_NEAR(bag_loss(std::vector<double>{0.7, 0.7, 0.7, 0.7}, 1), std::log(4.0), 1e-15);
    EXPECT_THROW(bag_loss(std::vector<double>{0, 0}, 2), std::out_of_range);
}

TEST(BagLoss, NonNegativeOnRandomLogits) {
    Rng rng(7);
    for (int t = 0; t < 200; ++t) {
        const Matrix l = random_matrix(1, 2 + rng() % 5, rng, -50, 50);
        EXPECT_GE(bag_loss(l.flat(), rng() % l.cols()), 0.0);
    }
}

TEST(Pool, PermutationInvarianceIsExact) {
    const MILHeadParams p = make_head(8, 2, 8, 16);
    Rng rng(8);
    const Matrix z = random_matrix(40, 8, rng);
    const auto base = gated_attention_pool(z, p);
    const auto base_logits = classify(base.bag, p);
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    for (int t = 0; t < 10; ++t) {
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto res = gated_attention_pool(permute_rows(z, perm), p);
        EXPECT_EQ(res.bag, base.bag);
        for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(res.attention[i], base.attention[perm[i]]);
        const auto logits = classify(res.bag, p);
        EXPECT_EQ(logits, base_logits);
        EXPECT_EQ(bag_loss(logits, 1), bag_loss(base_logits, 1));
    }
}

TEST(Model, FullModelDependsOnInstanceOrder) {
    ModelConfig cfg;
    cfg.input_dim = 6;
    cfg.r2t.dim = 8;
    cfg.r2t.regions_per_side = 2;
    cfg.r2t.heads = 2;
    cfg.r2t.epeg_k = 3;
    cfg.r2t.slots = 2;
    cfg.head.hidden = 8;
    const Model model(cfg, 9);
    Rng rng(9);
    const Matrix x = random_matrix(20, 6, rng);
    std::vector<std::size_t> perm(20);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    EXPECT_NE(model.predict(x).logits, model.predict(permute_rows(x, perm)).logits);
}

TEST(Model, ForwardBackwardAgreesWithPredict) {
    ModelConfig cfg;
    cfg.input_dim = 5;
    cfg.r2t.dim = 8;
    cfg.r2t.regions_per_side = 2;
    cfg.r2t.heads = 2;
    cfg.r2t.epeg_k = 3;
    cfg.r2t.slots = 2;
    cfg.head.hidden = 4;
    Model model(cfg, 10);
    Rng rng(10);
    const Matrix x = random_matrix(13, 5, rng);
    BagPrediction pred;
    const double loss = model.forward_backward(x, 1, &pred);
    EXPECT_EQ(loss, model.loss(x, 1));
    EXPECT_EQ(pred.logits, model.predict(x).logits);
    EXPECT_NEAR(std::accumulate(pred.probs.begin(), pred.probs.end(), 0.0), 1.0, 1e-12);
    EXPECT_THROW(model.forward_backward(random_matrix(3, 4, rng), 0), std::invalid_argument);
}

TEST(MilHeadParams, RejectsDegenerateShapes) {
    Rng rng(1);
    MILHeadConfig cfg;
    cfg.hidden = 0;
    EXPECT_THROW(MILHeadParams::create("h", 4, cfg, rng), std::invalid_argument);
    cfg.hidden = 2;
    cfg.classes = 1;
    EXPECT_THROW(MILHeadParams::create("h", 4, cfg, rng), std::invalid_argument);
}
