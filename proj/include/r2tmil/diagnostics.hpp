#pragma once

// Finite-difference gradient suite and brute-force oracle suite, shared by the
// CLI (`gradcheck`, `oracle`) and the test binaries.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "r2tmil/crmsa.hpp"
#include "r2tmil/metrics.hpp"
#include "r2tmil/milhead.hpp"
#include "r2tmil/oracles.hpp"
#include "r2tmil/r2tblock.hpp"
#include "r2tmil/rmsa.hpp"

namespace r2t {

// ---------------------------------------------------------------------------
// gradient suite

struct GradSuiteOptions {
    std::uint64_t seed = 1;
    std::vector<std::size_t> instances{1, 5, 17, 64};
    std::vector<std::size_t> dims{8, 16};
    std::vector<std::size_t> per_side{1, 2, 4};
    std::size_t max_coords_per_tensor = 32;
    double eps = 1e-5;
    double tol = 1e-4;
    // Test hook: corrupts one analytic gradient so the suite must fail.
    bool inject_bug = false;
};

namespace diag_detail {

/// Terms of the reduction sum_i c_i y_i.
inline std::vector<double> weighted_sum(const Matrix& y, const Matrix& c) {
    std::vector<double> t(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) t[i] = y.flat()[i] * c.flat()[i];
    return t;
}

inline ParamTensor random_tensor(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng,
                                 double bound = 1.0) {
    ParamTensor t(name, {rows, cols});
    t.value = random_matrix(rows, cols, rng, -bound, bound);
    return t;
}

inline std::string shape_tag(std::size_t i, std::size_t d, std::size_t l) {
    return "I=" + std::to_string(i) + " D=" + std::to_string(d) + " L=" + std::to_string(l);
}

inline void randomize(const ParamList& ps, Rng& rng, double bound) {
    for (ParamTensor* p : ps)
        for (double& v : p->value.flat()) v = std::uniform_real_distribution<double>(-bound, bound)(rng);
}

/// Smallest distance between a slot's extreme logit and its runner-up over
/// all regions. MinMax is not differentiable where the extremes tie, so
/// gradient checks draw inputs that keep this gap well above eps.
inline double minmax_margin(const CRWeights& w) {
    double margin = std::numeric_limits<double>::infinity();
    for (const Matrix& lg : w.logits)
        for (std::size_t k = 0; k < lg.rows(); ++k) {
            std::vector<double> row(lg.row(k).begin(), lg.row(k).end());
            if (row.size() < 2) continue;
            std::sort(row.begin(), row.end());
            margin = std::min({margin, row[1] - row[0], row[row.size() - 1] - row[row.size() - 2]});
        }
    return margin;
}

inline constexpr double kKinkMargin = 1e-3;
inline constexpr int kMaxRedraws = 200;

}  // namespace diag_detail

inline std::vector<GradCheckReport> run_gradcheck_suite(const GradSuiteOptions& opt) {
    using namespace diag_detail;
    Rng rng(opt.seed);
    GradCheckOptions gc;
    gc.eps = opt.eps;
    gc.tol = opt.tol;
    gc.max_coords_per_tensor = opt.max_coords_per_tensor;
    std::vector<GradCheckReport> out;
    const auto run = [&](std::string name, const ParamList& targets,
                         const std::function<std::vector<double>()>& terms, const std::function<void()>& backward) {
        gc.sample_seed = rng();
        out.push_back(finite_diff_check_terms(std::move(name), targets, terms, backward, gc));
    };

    // linear
    for (std::size_t d : opt.dims) {
        const std::size_t n = opt.instances[1 % opt.instances.size()];
        auto x = random_tensor("x", n, d, rng);
        auto w = random_tensor("w", d, 3, rng);
        auto b = random_tensor("b", 1, 3, rng);
        const Matrix c = random_matrix(n, 3, rng);
        run("linear I=" + std::to_string(n) + " D=" + std::to_string(d), {&x, &w, &b},
            [&] { return weighted_sum(linear(x.value, w.value, b.value.flat()), c); },
            [&] {
                auto g = linear_backward(x.value, w.value, c);
                x.grad += g.dx;
                w.grad += g.dw;
                for (std::size_t j = 0; j < 3; ++j) b.grad(0, j) += g.db[j];
                if (opt.inject_bug) w.grad *= 1.01;
            });
    }

    // softmax over rows and over columns
    for (Axis axis : {Axis::rows, Axis::cols}) {
        auto x = random_tensor("x", 4, 6, rng, 2.0);
        const Matrix c = random_matrix(4, 6, rng);
        run(std::string("softmax axis=") + (axis == Axis::rows ? "rows" : "cols"), {&x},
            [&] { return weighted_sum(softmax(x.value, axis), c); },
            [&] { x.grad += softmax_backward(softmax(x.value, axis), c, axis); });
    }

    // layer_norm
    for (std::size_t n : opt.instances)
        for (std::size_t d : opt.dims) {
            auto x = random_tensor("x", n, d, rng);
            auto scale = random_tensor("scale", 1, d, rng);
            auto shift = random_tensor("shift", 1, d, rng);
            const Matrix c = random_matrix(n, d, rng);
            run("layer_norm I=" + std::to_string(n) + " D=" + std::to_string(d), {&x, &scale, &shift},
                [&] { return weighted_sum(layer_norm(x.value, scale.value.flat(), shift.value.flat()), c); },
                [&] {
                    LayerNormCache cache;
                    layer_norm(x.value, scale.value.flat(), shift.value.flat(), kLayerNormEps, &cache);
                    auto g = layer_norm_backward(c, scale.value.flat(), cache);
                    x.grad += g.dx;
                    for (std::size_t j = 0; j < d; ++j) {
                        scale.grad(0, j) += g.dscale[j];
                        shift.grad(0, j) += g.dshift[j];
                    }
                });
        }

    // conv1d_depthwise
    for (std::size_t n : opt.instances)
        for (std::size_t k : {std::size_t{3}, std::size_t{15}}) {
            auto x = random_tensor("x", 2, n, rng);
            auto kern = random_tensor("kernel", 2, k, rng);
            const Matrix c = random_matrix(2, n, rng);
            run("conv1d_depthwise T=" + std::to_string(n) + " k=" + std::to_string(k), {&x, &kern},
                [&] { return weighted_sum(conv1d_depthwise(x.value, kern.value), c); },
                [&] {
                    auto g = conv1d_depthwise_backward(x.value, kern.value, c);
                    x.grad += g.dx;
                    kern.grad += g.dkernels;
                });
        }

    // r_msa with EPEG (both variants on the small shapes), cr_msa, full block
    for (std::size_t n : opt.instances)
        for (std::size_t d : opt.dims)
            for (std::size_t l : opt.per_side) {
                const std::string tag = shape_tag(n, d, l);
                for (EpegVariant variant : {EpegVariant::attn, EpegVariant::value}) {
                    if (variant == EpegVariant::value && n > 17) continue;
                    RMSAConfig rc;
                    rc.heads = 2;
                    rc.epeg_k = 5;
                    rc.epeg_variant = variant;
                    rc.mask_padding = (n + l) % 2 == 1;
                    auto p = RMSAParams::create("rmsa", d, rc, rng);
                    randomize({&p.epeg}, rng, 0.5);
                    auto h = random_tensor("H", n, d, rng);
                    const Matrix c = random_matrix(n, d, rng);
                    ParamList targets{&h};
                    for (ParamTensor* t : p.params()) targets.push_back(t);
                    run(std::string("r_msa+epeg(") + (variant == EpegVariant::attn ? "attn" : "value") +
                            (rc.mask_padding ? ",mask" : "") + ") " + tag,
                        targets, [&] { return weighted_sum(r_msa(h.value, p, rc, l), c); },
                        [&] {
                            RMSACache cache;
                            r_msa(h.value, p, rc, l, &cache);
                            h.grad += r_msa_backward(c, cache, p, rc);
                        });
                }

                {
                    CRMSAConfig cc;
                    cc.slots = 3;
                    cc.heads = 2;
                    cc.axis = (n + d) % 2 == 0 ? CrAttnAxis::regions : CrAttnAxis::slots;
                    auto p = CRMSAParams::create("crmsa", d, cc, rng);
                    const auto geo = RegionGeometry::for_instances(n, l);
                    ParamTensor zmap;
                    const auto regions_of = [&] {
                        std::vector<Matrix> regs;
                        for (std::size_t r = 0; r < geo.regions(); ++r) regs.push_back(gather_region(zmap.value, geo, r));
                        return regs;
                    };
                    // a peaked phi keeps the K slot representatives distinct
                    for (int draw = 0; draw < kMaxRedraws; ++draw) {
                        randomize({&p.phi}, rng, 1.0);
                        zmap = random_tensor("Zhat", geo.cells(), d, rng);
                        if (minmax_margin(cr_weights(regions_of(), p.phi.value)) > kKinkMargin) break;
                    }
                    const Matrix c = random_matrix(geo.cells(), d, rng);
                    const auto flatten = [&](const std::vector<Matrix>& regs) {
                        Matrix m(geo.cells(), d);
                        for (std::size_t r = 0; r < regs.size(); ++r) scatter_region(regs[r], geo, r, m);
                        return m;
                    };
                    ParamList targets{&zmap};
                    for (ParamTensor* t : p.params()) targets.push_back(t);
                    run(std::string("cr_msa(") + (cc.axis == CrAttnAxis::regions ? "regions" : "slots") + ") " + tag,
                        targets, [&] { return weighted_sum(flatten(cr_msa(regions_of(), p, cc)), c); },
                        [&] {
                            CRMSACache cache;
                            cr_msa(regions_of(), p, cc, &cache);
                            std::vector<Matrix> dz;
                            for (std::size_t r = 0; r < geo.regions(); ++r) dz.push_back(gather_region(c, geo, r));
                            const auto dzhat = cr_msa_backward(dz, cache, p, cc);
                            for (std::size_t r = 0; r < geo.regions(); ++r) scatter_add_region(dzhat[r], geo, r, zmap.grad);
                        });
                }

                {
                    R2TConfig bc;
                    bc.dim = d;
                    bc.regions_per_side = l;
                    bc.heads = 2;
                    bc.epeg_k = 5;
                    bc.slots = 3;
                    bc.use_ffn = n == 5;
                    bc.rezero_pad = (n + l) % 2 == 0;
                    auto p = R2TBlockParams::create("block", bc, rng);
                    ParamTensor h;
                    for (int draw = 0; draw < kMaxRedraws; ++draw) {
                        randomize({&p.rmsa.epeg, &p.norm1.shift, &p.norm2.shift}, rng, 0.5);
                        randomize({&p.crmsa.phi}, rng, 1.0);
                        for (ParamTensor* t : {&p.norm1.scale, &p.norm2.scale})
                            for (double& v : t->value.flat())
                                v = 1.0 + std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
                        h = random_tensor("H", n, d, rng);
                        R2TBlockCache probe;
                        r2t_block_forward(h.value, p, bc, &probe);
                        if (minmax_margin(probe.crmsa.weights) > kKinkMargin) break;
                    }
                    const Matrix c = random_matrix(n, d, rng);
                    ParamList targets{&h};
                    for (ParamTensor* t : p.params()) targets.push_back(t);
                    run(std::string("r2t_block") + (bc.use_ffn ? "+ffn" : "") + (bc.rezero_pad ? "" : " norezero") +
                            " " + tag,
                        targets, [&] { return weighted_sum(r2t_block_forward(h.value, p, bc), c); },
                        [&] {
                            R2TBlockCache cache;
                            r2t_block_forward(h.value, p, bc, &cache);
                            h.grad += r2t_block_backward(c, cache, p, bc);
                        });
                }
            }

    // gated MIL head (pooling + classifier) and the loss on its own
    for (std::size_t n : opt.instances)
        for (std::size_t d : opt.dims)
            for (bool gated : {true, false}) {
                MILHeadConfig hc;
                hc.hidden = 8;
                hc.gated = gated;
                auto p = MILHeadParams::create("head", d, hc, rng);
                randomize({&p.bc}, rng, 0.5);
                auto z = random_tensor("Z", n, d, rng);
                const Matrix c = random_matrix(1, hc.classes, rng);
                const auto logits_of = [&] {
                    const auto l = classify(gated_attention_pool(z.value, p, gated).bag, p);
                    Matrix m(1, l.size());
                    for (std::size_t j = 0; j < l.size(); ++j) m(0, j) = l[j];
                    return m;
                };
                ParamList targets{&z};
                for (ParamTensor* t : p.params()) targets.push_back(t);
                run(std::string(gated ? "mil_head" : "mil_head(plain)") + " I=" + std::to_string(n) +
                        " D=" + std::to_string(d),
                    targets, [&] { return weighted_sum(logits_of(), c); },
                    [&] {
                        PoolCache pc;
                        const auto pool = gated_attention_pool(z.value, p, gated, &pc);
                        const auto dbag = classify_backward(pool.bag, c.flat(), p);
                        z.grad += gated_attention_pool_backward(dbag, pc, p, gated);
                    });
            }
    for (std::size_t classes : {std::size_t{2}, std::size_t{5}}) {
        auto logits = random_tensor("logits", 1, classes, rng, 3.0);
        const std::size_t label = rng() % classes;
        run("cross_entropy C=" + std::to_string(classes), {&logits},
            [&] { return std::vector<double>{bag_loss(logits.value.flat(), label)}; },
            [&] {
                const auto g = bag_loss_backward(logits.value.flat(), label);
                for (std::size_t j = 0; j < classes; ++j) logits.grad(0, j) += g[j];
            });
    }
    return out;
}

// ---------------------------------------------------------------------------
// oracle suite

struct OracleReport {
    std::string suite;
    double max_abs_dev = 0.0;
    double tolerance = 0.0;
    std::vector<std::string> shapes_tested;
    bool passed = true;
};

struct OracleSuiteOptions {
    std::uint64_t seed = 1;
    std::size_t attention_configs = 50;
    std::size_t metric_sets = 1000;
};

namespace diag_detail {

inline void finish(OracleReport& r) { r.passed = r.max_abs_dev < r.tolerance; }

inline void note(OracleReport& r, double dev, std::string shape) {
    if (!(dev <= r.max_abs_dev)) r.max_abs_dev = std::isnan(dev) ? std::numeric_limits<double>::infinity() : dev;
    r.shapes_tested.push_back(std::move(shape));
}

inline double threshold_dev(double a, double b) {
    if (a == b) return 0.0;  // covers matching infinities
    return std::abs(a - b);
}

/// One random regional attention case; returns |r_msa - naive| max.
inline double rmsa_case(Rng& rng, std::size_t n, std::size_t l, std::string& shape) {
    const std::size_t dims[] = {4, 8, 16};
    const std::size_t d = dims[rng() % 3];
    RMSAConfig cfg;
    const std::size_t head_opts[] = {1, 2, 4};
    cfg.heads = head_opts[rng() % 3];
    const std::size_t ks[] = {1, 3, 5, 7, 15};
    cfg.epeg_k = ks[rng() % 5];
    cfg.use_epeg = rng() % 4 != 0;
    cfg.epeg_variant = rng() % 3 == 0 ? EpegVariant::value : EpegVariant::attn;
    cfg.mask_padding = rng() % 3 == 0;
    cfg.scale_full_d = rng() % 5 == 0;
    auto p = RMSAParams::create("rmsa", d, cfg, rng);
    randomize({&p.epeg}, rng, 0.5);
    const Matrix h = random_matrix(n, d, rng);
    const double dev = max_abs_diff(r_msa(h, p, cfg, l), oracle::naive_region_attention(h, p, cfg, l));
    shape = shape_tag(n, d, l) + " heads=" + std::to_string(cfg.heads) +
            (cfg.use_epeg ? " epeg_k=" + std::to_string(cfg.epeg_k) +
                                (cfg.epeg_variant == EpegVariant::attn ? "/attn" : "/value")
                          : " no-epeg") +
            (cfg.mask_padding ? " mask" : "") + (cfg.scale_full_d ? " full-d" : "");
    return dev;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t n) {
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng() % 2);
    labels[0] = 0;
    labels[1] = 1;
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

inline std::vector<double> random_scores(Rng& rng, std::size_t n) {
    std::vector<double> s(n);
    const bool coarse = rng() % 2 == 0;  // coarse grids force ties
    for (auto& v : s) {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        v = coarse ? std::floor(u * 5.0) / 5.0 : u;
    }
    return s;
}

}  // namespace diag_detail

inline std::vector<OracleReport> run_oracle_suite(const OracleSuiteOptions& opt) {
    using namespace diag_detail;
    Rng rng(opt.seed);
    std::vector<OracleReport> out;

    {
        OracleReport r{"r_msa vs naive_region_attention", 0.0, oracle::kRecomputeTol, {}, true};
        const std::size_t ls[] = {1, 2, 4, 8};
        for (std::size_t c = 0; c < opt.attention_configs; ++c) {
            const std::size_t n = 1 + rng() % 200;
            std::string shape;
            const double dev = rmsa_case(rng, n, ls[rng() % 4], shape);
            note(r, dev, shape);
        }
        finish(r);
        out.push_back(std::move(r));
    }
    {
        OracleReport r{"r_msa L sweep {1,2,4,8}", 0.0, oracle::kRecomputeTol, {}, true};
        for (std::size_t l : {1, 2, 4, 8})
            for (std::size_t n : {1, 37, 64, 200}) {
                std::string shape;
                const double dev = rmsa_case(rng, n, l, shape);
                note(r, dev, shape);
            }
        finish(r);
        out.push_back(std::move(r));
    }
    {
        OracleReport r{"cr_msa vs naive_crmsa", 0.0, oracle::kRecomputeTol, {}, true};
        for (std::size_t c = 0; c < opt.attention_configs; ++c) {
            const std::size_t side = 1 + rng() % 4;
            const std::size_t m = 1 + rng() % 4;
            const std::size_t d = rng() % 2 == 0 ? 4 : 8;
            CRMSAConfig cfg;
            cfg.slots = 1 + rng() % 4;
            cfg.heads = rng() % 2 == 0 ? 1 : 2;
            cfg.axis = rng() % 2 == 0 ? CrAttnAxis::regions : CrAttnAxis::slots;
            cfg.scale_full_d = rng() % 5 == 0;
            auto p = CRMSAParams::create("crmsa", d, cfg, rng);
            std::vector<Matrix> zhat;
            for (std::size_t q = 0; q < side * side; ++q) zhat.push_back(random_matrix(m * m, d, rng));
            const auto fast = cr_msa(zhat, p, cfg);
            const auto slow = oracle::naive_crmsa(zhat, p, cfg);
            double dev = 0.0;
            for (std::size_t q = 0; q < zhat.size(); ++q) dev = std::max(dev, max_abs_diff(fast[q], slow[q]));
            note(r, dev,
                 "regions=" + std::to_string(side * side) + " M2=" + std::to_string(m * m) + " K=" +
                     std::to_string(cfg.slots) + " D=" + std::to_string(d) + " heads=" + std::to_string(cfg.heads) +
                     (cfg.axis == CrAttnAxis::regions ? " across-regions" : " across-slots"));
        }
        finish(r);
        out.push_back(std::move(r));
    }
    {
        OracleReport auc{"roc_auc vs pairwise_auc", 0.0, oracle::kReorderTol, {}, true};
        OracleReport thr{"optimal_threshold_metrics vs enumeration", 0.0, oracle::kReorderTol, {}, true};
        for (std::size_t s = 0; s < opt.metric_sets; ++s) {
            const std::size_t n = 2 + rng() % 60;
            const auto labels = random_labels(rng, n);
            const auto scores = random_scores(rng, n);
            const std::string shape = "n=" + std::to_string(n);
            note(auc, std::abs(roc_auc(scores, labels) - oracle::pairwise_auc(scores, labels)), shape);
            const ThresholdRule rule = s % 2 == 0 ? ThresholdRule::youden : ThresholdRule::f1max;
            const Metrics a = optimal_threshold_metrics(scores, labels, rule);
            const Metrics b = oracle::enumerate_thresholds(scores, labels, rule);
            const double dev = std::max({std::abs(a.accuracy - b.accuracy), std::abs(a.f1 - b.f1),
                                         std::abs(a.auc - b.auc), threshold_dev(a.threshold, b.threshold)});
            note(thr, dev, shape + (rule == ThresholdRule::youden ? " youden" : " f1max"));
        }
        finish(auc);
        finish(thr);
        out.push_back(std::move(auc));
        out.push_back(std::move(thr));
    }
    return out;
}

}  // namespace r2t
