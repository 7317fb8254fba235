#pragma once

// Binary evaluation metrics: ROC AUC (Mann-Whitney) and accuracy / F1 at an
// optimal decision threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace r2t {

enum class ThresholdRule { youden, f1max };

struct Metrics {
    double accuracy = 0.0;
    double auc = 0.0;
    double f1 = 0.0;
    double threshold = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

inline void check_binary(std::span<const double> scores, std::span<const int> labels, std::size_t& n_pos,
                         std::size_t& n_neg) {
    if (scores.size() != labels.size()) throw std::invalid_argument("metrics: scores/labels length mismatch");
    n_pos = 0;
    n_neg = 0;
    for (int l : labels) {
        if (l == 1) ++n_pos;
        else if (l == 0) ++n_neg;
        else throw std::invalid_argument("metrics: labels must be 0 or 1");
    }
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("metrics: single-class input");
}

/// Mann-Whitney U / (n_pos n_neg) using mid-ranks for ties.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    std::size_t n_pos = 0, n_neg = 0;
    check_binary(scores, labels, n_pos, n_neg);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Twice the rank sum keeps everything integral.
    long long rank_sum_x2 = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const auto midrank_x2 = static_cast<long long>(i + 1 + j);  // ranks i+1..j
        for (std::size_t q = i; q < j; ++q)
            if (labels[order[q]] == 1) rank_sum_x2 += midrank_x2;
        i = j;
    }
    const auto np = static_cast<long long>(n_pos);
    const long long u_x2 = rank_sum_x2 - np * (np + 1);
    return static_cast<double>(u_x2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Confusion counts for "predict positive iff score > threshold".
struct ThresholdCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
};

/// true when candidate a is strictly preferred to b. Youden: J = tp/P - fp/N,
/// compared exactly as tp*N - fp*P. F1max: 2tp / (2tp + fp + fn). Ties go to
/// the higher accuracy; callers break remaining ties toward the lower threshold.
inline bool threshold_better(const ThresholdCounts& a, const ThresholdCounts& b, long long n_pos, long long n_neg,
                             ThresholdRule rule) {
    if (rule == ThresholdRule::youden) {
        const long long ja = a.tp * n_neg - a.fp * n_pos;
        const long long jb = b.tp * n_neg - b.fp * n_pos;
        if (ja != jb) return ja > jb;
    } else {
        // f1 = 2tp / d; d == 0 implies tp == 0, so f1 = 0 / 1
        const long long da = std::max(1LL, 2 * a.tp + a.fp + a.fn);
        const long long db = std::max(1LL, 2 * b.tp + b.fp + b.fn);
        const long long fa = 2 * a.tp * db;
        const long long fb = 2 * b.tp * da;
        if (fa != fb) return fa > fb;
    }
    return a.tp + a.tn > b.tp + b.tn;
}

inline bool threshold_equal(const ThresholdCounts& a, const ThresholdCounts& b, long long n_pos, long long n_neg,
                            ThresholdRule rule) {
    return !threshold_better(a, b, n_pos, n_neg, rule) && !threshold_better(b, a, n_pos, n_neg, rule);
}

inline Metrics metrics_from_counts(const ThresholdCounts& c, double threshold, double auc, std::size_t n_pos,
                                   std::size_t n_neg) {
    Metrics m;
    m.threshold = threshold;
    m.auc = auc;
    m.n_pos = n_pos;
    m.n_neg = n_neg;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(n_pos + n_neg);
    const long long d = 2 * c.tp + c.fp + c.fn;
    m.f1 = d == 0 ? 0.0 : static_cast<double>(2 * c.tp) / static_cast<double>(d);
    return m;
}

/// Scans the midpoints between adjacent distinct scores plus the two end cuts
/// (the largest score, where nothing is positive, and the next double below
/// the smallest score, where everything is), and reports accuracy / F1 at the
/// threshold preferred by `rule`. Thresholds are always finite.
inline Metrics optimal_threshold_metrics(std::span<const double> scores, std::span<const int> labels,
                                         ThresholdRule rule = ThresholdRule::youden) {
    std::size_t n_pos = 0, n_neg = 0;
    check_binary(scores, labels, n_pos, n_neg);
    const double auc = roc_auc(scores, labels);
    const auto np = static_cast<long long>(n_pos);
    const auto nn = static_cast<long long>(n_neg);

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    ThresholdCounts cur{0, 0, nn, np};  // threshold +inf: everything negative
    ThresholdCounts best = cur;
    double best_t = scores[order.front()];
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        const double s = scores[order[i]];
        while (j < order.size() && scores[order[j]] == s) {
            if (labels[order[j]] == 1) {
                ++cur.tp;
                --cur.fn;
            } else {
                ++cur.fp;
                --cur.tn;
            }
            ++j;
        }
        const double t = j < order.size() ? 0.5 * (s + scores[order[j]])
                                          : std::nextafter(s, -std::numeric_limits<double>::infinity());
        // thresholds arrive in decreasing order, so ties move to the lower one
        if (!threshold_better(best, cur, np, nn, rule)) {
            best = cur;
            best_t = t;
        }
        i = j;
    }
    return metrics_from_counts(best, best_t, auc, n_pos, n_neg);
}

}  // namespace r2t
