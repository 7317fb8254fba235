#pragma once

// Brute-force reference implementations. Everything here is written as
// explicit scalar loops and deliberately calls none of the kernels in
// numerics/region/attention/rmsa/crmsa/metrics; the parameter structs are used
// only as data holders.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "r2tmil/crmsa.hpp"
#include "r2tmil/metrics.hpp"
#include "r2tmil/rmsa.hpp"

namespace r2t::oracle {

inline constexpr double kRecomputeTol = 1e-10;
inline constexpr double kReorderTol = 1e-12;

namespace detail {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

/// x (n x D) times columns [c0, c0+w) of W.
inline Mat project(const Mat& x, const Matrix& w, std::size_t c0, std::size_t width) {
    Mat out = zeros(x.size(), width);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) {
            double s = 0.0;
            for (std::size_t d = 0; d < x[i].size(); ++d) s += x[i][d] * w(d, c0 + c);
            out[i][c] = s;
        }
    return out;
}

inline void softmax_loop(Vec& v, const std::vector<char>& usable) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v.size(); ++j)
        if (usable[j] && v[j] > mx) mx = v[j];
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = usable[j] ? std::exp(v[j] - mx) : 0.0;
        s += v[j];
    }
    for (double& x : v) x = s > 0.0 ? x / s : 0.0;
}

/// Multi-head attention over one sequence `x` (T x D). kernels/variant as in
/// the regional layer; `usable[j]` masks keys.
inline Mat naive_mha(const Mat& x, const Matrix& wq, const Matrix& wk, const Matrix& wv, const Matrix& wo,
                     std::size_t heads, double scale, const Matrix* kernels, EpegVariant variant,
                     const std::vector<char>& usable) {
    const std::size_t t = x.size();
    const std::size_t dim = wq.rows();
    const std::size_t dh = dim / heads;
    Mat concat = zeros(t, dim);
    for (std::size_t h = 0; h < heads; ++h) {
        const Mat q = project(x, wq, h * dh, dh);
        const Mat k = project(x, wk, h * dh, dh);
        Mat v = project(x, wv, h * dh, dh);
        if (kernels && variant == EpegVariant::value) {
            const std::size_t kw = kernels->cols();
            const long pad = static_cast<long>(kw - 1) / 2;
            Mat vc = v;
            for (std::size_t j = 0; j < t; ++j)
                for (std::size_t c = 0; c < dh; ++c) {
                    double s = 0.0;
                    for (std::size_t u = 0; u < kw; ++u) {
                        const long src = static_cast<long>(j) + static_cast<long>(u) - pad;
                        if (src >= 0 && src < static_cast<long>(t)) s += (*kernels)(h, u) * v[src][c];
                    }
                    vc[j][c] = v[j][c] + s;
                }
            v = vc;
        }
        for (std::size_t i = 0; i < t; ++i) {
            Vec e(t, 0.0);
            for (std::size_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q[i][c] * k[j][c];
                e[j] = s / scale;
            }
            Vec logit = e;
            if (kernels && variant == EpegVariant::attn) {
                const std::size_t kw = kernels->cols();
                const long pad = static_cast<long>(kw - 1) / 2;
                for (std::size_t j = 0; j < t; ++j) {
                    double s = 0.0;
                    for (std::size_t u = 0; u < kw; ++u) {
                        const long src = static_cast<long>(j) + static_cast<long>(u) - pad;
                        if (src >= 0 && src < static_cast<long>(t)) s += (*kernels)(h, u) * e[src];
                    }
                    logit[j] += s;
                }
            }
            softmax_loop(logit, usable);
            for (std::size_t c = 0; c < dh; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < t; ++j) s += logit[j] * v[j][c];
                concat[i][h * dh + c] = s;
            }
        }
    }
    return project(concat, wo, 0, dim);
}

}  // namespace detail

/// Same contract as r_msa(): pads H into the smallest multiple-of-L square,
/// runs attention in every L x L region and returns the I valid rows.
inline Matrix naive_region_attention(const Matrix& h, const RMSAParams& p, const RMSAConfig& cfg,
                                     std::size_t per_side) {
    const std::size_t n_inst = h.rows();
    const std::size_t dim = h.cols();
    std::size_t side = 0;
    while (side * side < n_inst) ++side;
    while (side % per_side != 0) ++side;
    const std::size_t m = side / per_side;
    const double scale = std::sqrt(static_cast<double>(cfg.scale_full_d ? dim : dim / cfg.heads));
    Matrix out(n_inst, dim);
    for (std::size_t a = 0; a < per_side; ++a) {
        for (std::size_t b = 0; b < per_side; ++b) {
            std::vector<std::size_t> cells;
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < m; ++c) cells.push_back((a * m + r) * side + (b * m + c));
            detail::Mat x = detail::zeros(cells.size(), dim);
            std::vector<char> usable(cells.size(), 1);
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (cells[i] < n_inst) {
                    for (std::size_t d = 0; d < dim; ++d) x[i][d] = h(cells[i], d);
                } else if (cfg.mask_padding) {
                    usable[i] = 0;
                }
            }
            const detail::Mat y =
                detail::naive_mha(x, p.wq.value, p.wk.value, p.wv.value, p.wo.value, cfg.heads, scale,
                                  cfg.use_epeg ? &p.epeg.value : nullptr, cfg.epeg_variant, usable);
            for (std::size_t i = 0; i < cells.size(); ++i)
                if (cells[i] < n_inst)
                    for (std::size_t d = 0; d < dim; ++d) out(cells[i], d) = y[i][d];
        }
    }
    return out;
}

/// Scalar-loop transcription of the CR-MSA pseudocode. zhat: regions of M^2 x D.
inline std::vector<Matrix> naive_crmsa(const std::vector<Matrix>& zhat, const CRMSAParams& p, const CRMSAConfig& cfg) {
    const std::size_t nr = zhat.size();
    const std::size_t np = nr == 0 ? 0 : zhat[0].rows();
    const std::size_t nc = p.phi.value.rows();
    const std::size_t nk = p.phi.value.cols();

    // logits[r][k][p]
    std::vector<detail::Mat> logits(nr, detail::zeros(nk, np));
    for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t q = 0; q < np; ++q)
            for (std::size_t k = 0; k < nk; ++k) {
                double s = 0.0;
                for (std::size_t c = 0; c < nc; ++c) s += zhat[r](q, c) * p.phi.value(c, k);
                logits[r][k][q] = s;
            }

    auto combine = logits;   // softmax over p
    auto dispatch = logits;  // softmax over k
    auto minmax = logits;
    for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t k = 0; k < nk; ++k) {
            double mx = -std::numeric_limits<double>::infinity();
            double mn = std::numeric_limits<double>::infinity();
            for (std::size_t q = 0; q < np; ++q) {
                mx = std::max(mx, logits[r][k][q]);
                mn = std::min(mn, logits[r][k][q]);
            }
            double s = 0.0;
            for (std::size_t q = 0; q < np; ++q) s += std::exp(logits[r][k][q] - mx);
            for (std::size_t q = 0; q < np; ++q) {
                combine[r][k][q] = std::exp(logits[r][k][q] - mx) / s;
                minmax[r][k][q] = (logits[r][k][q] - mn) / (mx - mn + 1e-8);
            }
        }
        for (std::size_t q = 0; q < np; ++q) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < nk; ++k) mx = std::max(mx, logits[r][k][q]);
            double s = 0.0;
            for (std::size_t k = 0; k < nk; ++k) s += std::exp(logits[r][k][q] - mx);
            for (std::size_t k = 0; k < nk; ++k) dispatch[r][k][q] = std::exp(logits[r][k][q] - mx) / s;
        }
    }

    // x_region[r][k][c]
    std::vector<detail::Mat> reps(nr, detail::zeros(nk, nc));
    for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t k = 0; k < nk; ++k)
            for (std::size_t c = 0; c < nc; ++c) {
                double s = 0.0;
                for (std::size_t q = 0; q < np; ++q) s += zhat[r](q, c) * combine[r][k][q];
                reps[r][k][c] = s;
            }

    // native MSA across regions (per slot) or across slots (per region)
    const double scale = std::sqrt(static_cast<double>(cfg.scale_full_d ? nc : nc / cfg.heads));
    std::vector<detail::Mat> z(nr, detail::zeros(nk, nc));
    if (cfg.axis == CrAttnAxis::regions) {
        for (std::size_t k = 0; k < nk; ++k) {
            detail::Mat seq;
            for (std::size_t r = 0; r < nr; ++r) seq.push_back(reps[r][k]);
            const auto y = detail::naive_mha(seq, p.wq.value, p.wk.value, p.wv.value, p.wo.value, cfg.heads, scale,
                                             nullptr, EpegVariant::attn, std::vector<char>(nr, 1));
            for (std::size_t r = 0; r < nr; ++r) z[r][k] = y[r];
        }
    } else {
        for (std::size_t r = 0; r < nr; ++r)
            z[r] = detail::naive_mha(reps[r], p.wq.value, p.wk.value, p.wv.value, p.wo.value, cfg.heads, scale,
                                     nullptr, EpegVariant::attn, std::vector<char>(nk, 1));
    }

    // distribution and combination over k
    std::vector<Matrix> out(nr, Matrix(np, nc));
    for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t q = 0; q < np; ++q)
            for (std::size_t c = 0; c < nc; ++c) {
                double s = 0.0;
                for (std::size_t k = 0; k < nk; ++k) s += (z[r][k][c] * minmax[r][k][q]) * dispatch[r][k][q];
                out[r](q, c) = s;
            }
    return out;
}

/// (#{pos > neg} + 0.5 #{pos == neg}) / (n_pos n_neg) over all pairs.
inline double pairwise_auc(std::span<const double> scores, std::span<const int> labels) {
    double num = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        ++n_pos;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    for (int l : labels)
        if (l == 0) ++n_neg;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("pairwise_auc: single-class input");
    return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Recounts the confusion matrix from scratch for every candidate threshold.
inline Metrics enumerate_thresholds(std::span<const double> scores, std::span<const int> labels, ThresholdRule rule) {
    std::vector<double> uniq;
    for (double s : scores) {
        bool seen = false;
        for (double u : uniq) seen = seen || u == s;
        if (!seen) uniq.push_back(s);
    }
    std::sort(uniq.begin(), uniq.end());
    std::vector<double> cands{std::nextafter(uniq.front(), -std::numeric_limits<double>::infinity())};
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i) cands.push_back(0.5 * (uniq[i] + uniq[i + 1]));
    cands.push_back(uniq.back());  // ascending

    long long n_pos = 0, n_neg = 0;
    for (int l : labels) (l == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("enumerate_thresholds: single-class input");

    bool have = false;
    long long b_tp = 0, b_fp = 0, b_tn = 0, b_fn = 0;
    double b_t = 0.0;
    for (double t : cands) {
        long long tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const bool pred = scores[i] > t;
            if (labels[i] == 1) (pred ? tp : fn)++;
            else (pred ? fp : tn)++;
        }
        bool better;
        if (!have) {
            better = true;
        } else {
            // primary score as an exact fraction num/den
            long long num_a, den_a, num_b, den_b;
            if (rule == ThresholdRule::youden) {
                num_a = tp * n_neg - fp * n_pos;
                num_b = b_tp * n_neg - b_fp * n_pos;
                den_a = den_b = 1;
            } else {
                num_a = 2 * tp;
                den_a = 2 * tp + fp + fn > 0 ? 2 * tp + fp + fn : 1;
                num_b = 2 * b_tp;
                den_b = 2 * b_tp + b_fp + b_fn > 0 ? 2 * b_tp + b_fp + b_fn : 1;
            }
            const long long lhs = num_a * den_b;
            const long long rhs = num_b * den_a;
            // ascending scan: only a strict improvement replaces a lower threshold
            better = lhs > rhs || (lhs == rhs && tp + tn > b_tp + b_tn);
        }
        if (better) {
            have = true;
            b_tp = tp;
            b_fp = fp;
            b_tn = tn;
            b_fn = fn;
            b_t = t;
        }
    }
    Metrics m;
    m.threshold = b_t;
    m.auc = pairwise_auc(scores, labels);
    m.n_pos = static_cast<std::size_t>(n_pos);
    m.n_neg = static_cast<std::size_t>(n_neg);
    m.accuracy = static_cast<double>(b_tp + b_tn) / static_cast<double>(n_pos + n_neg);
    const long long d = 2 * b_tp + b_fp + b_fn;
    m.f1 = d == 0 ? 0.0 : static_cast<double>(2 * b_tp) / static_cast<double>(d);
    return m;
}

}  // namespace r2t::oracle
