// The brute-force references are checked here on hand-worked cases, then run
// against the fast paths through the diagnostics suites. This file includes
// the oracles and diagnostics only; the fast kernels arrive through them.

#include <gtest/gtest.h>

#include "r2tmil/diagnostics.hpp"
#include "r2tmil/oracles.hpp"

using namespace r2t;

TEST(NaiveRegionAttention, SingleCellRegionsAreProjections) {
    RMSAConfig cfg;
    cfg.heads = 2;
    cfg.epeg_k = 3;
    Rng rng(1);
    RMSAParams p = RMSAParams::create("r", 4, cfg, rng);
    init_uniform(p.epeg, 0.5, rng);
    const Matrix h = random_matrix(9, 4, rng);
    const Matrix got = oracle::naive_region_attention(h, p, cfg, 3);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t d = 0; d < 4; ++d) {
            double v = 0;
            for (std::size_t a = 0; a < 4; ++a)
                for (std::size_t b = 0; b < 4; ++b) v += h(i, a) * p.wv.value(a, b) * p.wo.value(b, d);
            EXPECT_NEAR(got(i, d), v, 1e-14);
        }
}

TEST(NaiveRegionAttention, OneRegionIsGlobalAttention) {
    RMSAConfig cfg;
    cfg.heads = 1;
    cfg.use_epeg = false;
    Rng rng(2);
    const RMSAParams p = RMSAParams::create("r", 2, cfg, rng);
    const Matrix h = random_matrix(4, 2, rng);
    const Matrix got = oracle::naive_region_attention(h, p, cfg, 1);
    // softmax over all four instances, written out for instance 0
    const Matrix q = matmul(h, p.wq.value), k = matmul(h, p.wk.value), v = matmul(h, p.wv.value);
    double w[4], z = 0;
    for (std::size_t j = 0; j < 4; ++j) {
        w[j] = std::exp((q(0, 0) * k(j, 0) + q(0, 1) * k(j, 1)) / std::sqrt(2.0));
        z += w[j];
    }
    double mixed[2] = {0, 0};
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t d = 0; d < 2; ++d) mixed[d] += w[j] / z * v(j, d);
    for (std::size_t d = 0; d < 2; ++d)
        EXPECT_NEAR(got(0, d), mixed[0] * p.wo.value(0, d) + mixed[1] * p.wo.value(1, d), 1e-14);
}

TEST(NaiveCrmsa, ZeroPhiGivesZeros) {
    CRMSAConfig cfg;
    cfg.slots = 2;
    cfg.heads = 1;
    Rng rng(3);
    CRMSAParams p = CRMSAParams::create("c", 4, cfg, rng);
    p.phi.value.fill(0.0);
    const std::vector<Matrix> z{random_matrix(4, 4, rng), random_matrix(4, 4, rng)};
    for (const auto& m : oracle::naive_crmsa(z, p, cfg)) EXPECT_EQ(m, Matrix(4, 4));
}

TEST(NaiveCrmsa, SingleSlotClosedForm) {
    CRMSAConfig cfg;
    cfg.slots = 1;
    cfg.heads = 1;
    Rng rng(4);
    const CRMSAParams p = CRMSAParams::create("c", 3, cfg, rng);
    const std::vector<Matrix> z{random_matrix(4, 3, rng)};
    // single region: Rhat = R Wv Wo; K = 1 so the slot softmax is 1
    double logit[4], lo = 1e300, hi = -1e300, norm = 0;
    for (std::size_t q = 0; q < 4; ++q) {
        logit[q] = 0;
        for (std::size_t d = 0; d < 3; ++d) logit[q] += z[0](q, d) * p.phi.value(d, 0);
        lo = std::min(lo, logit[q]);
        hi = std::max(hi, logit[q]);
        norm += std::exp(logit[q]);
    }
    Matrix r(1, 3);
    for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t d = 0; d < 3; ++d) r(0, d) += std::exp(logit[q]) / norm * z[0](q, d);
    const Matrix rhat = matmul(matmul(r, p.wv.value), p.wo.value);
    const auto got = oracle::naive_crmsa(z, p, cfg);
    for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t d = 0; d < 3; ++d)
            EXPECT_NEAR(got[0](q, d), (logit[q] - lo) / (hi - lo + 1e-8) * rhat(0, d), 1e-14);
}

TEST(PairwiseAuc, MirrorsHandExamples) {
    EXPECT_EQ(oracle::pairwise_auc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<int>{1, 1, 0, 0}), 1.0);
    EXPECT_EQ(oracle::pairwise_auc(std::vector<double>(4, 0.5), std::vector<int>{0, 1, 1, 0}), 0.5);
    EXPECT_EQ(oracle::pairwise_auc(std::vector<double>{0.3, 0.7, 0.5}, std::vector<int>{1, 1, 0}), 0.5);
}

TEST(OracleSuite, AllSuitesPassWithinTolerance) {
    OracleSuiteOptions opt;
    opt.attention_configs = 20;
    opt.metric_sets = 200;
    const auto reports = run_oracle_suite(opt);
    ASSERT_FALSE(reports.empty());
    bool saw_sweep = false;
    for (const auto& r : reports) {
        EXPECT_TRUE(r.passed) << r.suite << " dev " << r.max_abs_dev;
        EXPECT_FALSE(r.shapes_tested.empty()) << r.suite;
        saw_sweep = saw_sweep || r.suite.find("sweep") != std::string::npos;
    }
    EXPECT_TRUE(saw_sweep);
}

TEST(OracleSuite, DeterministicPerSeed) {
    OracleSuiteOptions opt;
    opt.attention_configs = 5;
    opt.metric_sets = 20;
    const auto a = run_oracle_suite(opt);
    const auto b = run_oracle_suite(opt);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].max_abs_dev, b[i].max_abs_dev);
        EXPECT_EQ(a[i].shapes_tested, b[i].shapes_tested);
    }
}

TEST(GradSuite, SmallSuitePasses) {
    GradSuiteOptions opt;
    opt.instances = {1, 5};
    opt.dims = {8};
    opt.per_side = {1, 2};
    for (const auto& r : run_gradcheck_suite(opt)) EXPECT_TRUE(r.passed) << r.op_name << " " << r.max_rel_err;
}

TEST(GradSuite, InjectedBugIsCaught) {
    GradSuiteOptions opt;
    opt.instances = {5};
    opt.dims = {8};
    opt.per_side = {1};
    opt.inject_bug = true;
    bool any_failed = false;
    for (const auto& r : run_gradcheck_suite(opt)) any_failed = any_failed || !r.passed;
    EXPECT_TRUE(any_failed);
}
