#include <gtest/gtest.h>

#include <limits>

#include "r2tmil/metrics.hpp"
#include "r2tmil/oracles.hpp"

using namespace r2t;

TEST(RocAuc, PerfectSeparation) {
    const std::vector<double> s{0.9, 0.8, 0.1, 0.2};
    const std::vector<int> y{1, 1, 0, 0};
    EXPECT_EQ(roc_auc(s, y), 1.0);
}

TEST(RocAuc, AllTiesGiveHalf) {
    const std::vector<double> s(6, 0.4);
    const std::vector<int> y{1, 0, 0, 1, 1, 0};
    EXPECT_EQ(roc_auc(s, y), 0.5);
}

TEST(RocAuc, TwoPairsByHand) {
    const std::vector<double> s{0.3, 0.7, 0.5};
    const std::vector<int> y{1, 1, 0};
    EXPECT_EQ(roc_auc(s, y), 0.5);
}

TEST(RocAuc, Errors) {
    const std::vector<double> s{0.1, 0.2};
    EXPECT_THROW(roc_auc(s, std::vector<int>{1, 1}), std::invalid_argument);
    EXPECT_THROW(roc_auc(s, std::vector<int>{1, 2}), std::invalid_argument);
    EXPECT_THROW(roc_auc(s, std::vector<int>{1}), std::invalid_argument);
}

TEST(OptimalThreshold, PerfectSeparation) {
    const std::vector<double> s{0.9, 0.8, 0.1, 0.2};
    const std::vector<int> y{1, 1, 0, 0};
    const Metrics m = optimal_threshold_metrics(s, y);
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_EQ(m.f1, 1.0);
    EXPECT_EQ(m.auc, 1.0);
    EXPECT_DOUBLE_EQ(m.threshold, 0.5);
}

TEST(OptimalThreshold, AllEqualScoresGiveMajority) {
    const std::vector<double> s(5, 0.3);
    const std::vector<int> y{1, 0, 0, 1, 0};
    const Metrics m = optimal_threshold_metrics(s, y);
    EXPECT_DOUBLE_EQ(m.accuracy, 3.0 / 5.0);
    EXPECT_EQ(m.threshold, 0.3);  // nothing scores above it
    EXPECT_EQ(m.f1, 0.0);
}

TEST(OptimalThreshold, FourPointCase) {
    const std::vector<double> s{0.9, 0.4, 0.6, 0.1};
    const std::vector<int> y{1, 1, 0, 0};
    const Metrics m = optimal_threshold_metrics(s, y);
    // J = 1/2 is reached at 0.75 and at 0.25; accuracy 3/4 at both, the lower one wins
    EXPECT_DOUBLE_EQ(m.threshold, 0.25);
    EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
    EXPECT_DOUBLE_EQ(m.f1, 0.8);
    EXPECT_DOUBLE_EQ(m.auc, 0.75);
    const Metrics brute = oracle::enumerate_thresholds(s, y, ThresholdRule::youden);
    EXPECT_EQ(m.threshold, brute.threshold);
    EXPECT_EQ(m.accuracy, brute.accuracy);
}

TEST(OptimalThreshold, F1RuleCanPickDifferentThreshold) {
    const std::vector<double> s{0.95, 0.9, 0.8, 0.7, 0.6, 0.1};
    const std::vector<int> y{1, 0, 0, 0, 1, 0};
    const Metrics youden = optimal_threshold_metrics(s, y, ThresholdRule::youden);
    const Metrics f1 = optimal_threshold_metrics(s, y, ThresholdRule::f1max);
    EXPECT_GE(f1.f1, youden.f1);
    const Metrics brute = oracle::enumerate_thresholds(s, y, ThresholdRule::f1max);
    EXPECT_EQ(f1.threshold, brute.threshold);
    EXPECT_EQ(f1.f1, brute.f1);
}

TEST(MetricsProperty, AgreesWithOraclesOnRandomSets) {
    Rng rng(2024);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 2 + rng() % 40;
        std::vector<double> s(n);
        std::vector<int> y(n);
        const int levels = 1 + static_cast<int>(rng() % 8);  // few levels force ties
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % levels) / levels;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        ASSERT_NEAR(roc_auc(s, y), oracle::pairwise_auc(s, y), oracle::kReorderTol);
        for (ThresholdRule rule : {ThresholdRule::youden, ThresholdRule::f1max}) {
            const Metrics a = optimal_threshold_metrics(s, y, rule);
            const Metrics b = oracle::enumerate_thresholds(s, y, rule);
            ASSERT_EQ(a.threshold, b.threshold);
            ASSERT_TRUE(std::isfinite(a.threshold));
            ASSERT_NEAR(a.accuracy, b.accuracy, oracle::kReorderTol);
            ASSERT_NEAR(a.f1, b.f1, oracle::kReorderTol);
            ASSERT_GE(a.accuracy, 0.0);
            ASSERT_LE(a.accuracy, 1.0);
        }
    }
}
