// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "r2tmil/diagnostics.hpp"
#include "r2tmil/model.hpp"
#include "r2tmil/oracles.hpp"
#include "r2tmil/train.hpp"

namespace fs = std::filesystem;
using namespace r2t;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[1024];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t rows = 0, failed = 0;
    std::string worst_op;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        GradSuiteOptions opt;
        opt.seed = seed;
        for (const auto& r : run_gradcheck_suite(opt)) {
            ++rows;
            if (!r.passed) {
                ++failed;
                std::printf("    seed %llu %s rel %.3e\n", static_cast<unsigned long long>(seed), r.op_name.c_str(),
                            r.max_rel_err);
            }
            if (!(r.max_rel_err <= worst)) {
                worst = r.max_rel_err;
                worst_op = r.op_name;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {failed == 0 && worst < 1e-4 && secs < 300.0,
            fmt("%zu checks over seeds 1-5, %zu failed, worst rel %.2e (%s), %.1f s (limit 300)", rows, failed, worst,
                worst_op.c_str(), secs)};
}

Outcome oracle_suite(const std::vector<OracleReport>& reports, double secs, bool metrics) {
    bool ok = true;
    std::string detail;
    for (const auto& r : reports) {
        const bool is_metric = r.suite.find("roc_auc") == 0 || r.suite.find("optimal_threshold") == 0;
        if (is_metric != metrics) continue;
        ok = ok && r.passed;
        detail += fmt("%s: %zu cases, max dev %.2e (tol %.0e); ", r.suite.c_str(), r.shapes_tested.size(),
                      r.max_abs_dev, r.tolerance);
    }
    if (!metrics) {
        ok = ok && secs < 120.0;
        detail += fmt("%.1f s (limit 120)", secs);
    }
    return {ok, detail};
}

// ---------------------------------------------------------------------------

Outcome structural_invariants() {
    std::size_t failures = 0;
    std::string first;
    const auto fail = [&](const std::string& what) {
        if (failures++ == 0) first = what;
    };

    Rng rng(7);
    for (std::size_t i = 1; i <= 500; ++i)
        for (std::size_t l = 1; l <= 8; ++l) {
            const Matrix h = random_matrix(i, 3, rng);
            const SquaredMap map = square_and_pad(h, l);
            if (!(flatten_back(partition(map, l), map.valid) == h)) fail(fmt("round trip I=%zu L=%zu", i, l));
        }

    double norm_dev = 0.0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng() % 40;
        std::vector<double> v(n);
        for (double& x : v) x = std::uniform_real_distribution<double>(-30, 30)(rng);
        const auto s = softmax(v);
        norm_dev = std::max(norm_dev, std::abs(std::accumulate(s.begin(), s.end(), 0.0) - 1.0));
    }
    for (int t = 0; t < 50; ++t) {
        const std::size_t d = 4, k = 1 + rng() % 4, regions = 1 + rng() % 5, cells = 1 + rng() % 9;
        std::vector<Matrix> z;
        for (std::size_t r = 0; r < regions; ++r) z.push_back(random_matrix(cells, d, rng, -3, 3));
        const CRWeights w = cr_weights(z, random_matrix(d, k, rng));
        // weights are K x cells per region
        for (std::size_t r = 0; r < regions; ++r) {
            for (std::size_t s = 0; s < k; ++s) {
                double col = 0.0;
                for (std::size_t q = 0; q < cells; ++q) col += w.combine[r](s, q);
                norm_dev = std::max(norm_dev, std::abs(col - 1.0));
            }
            for (std::size_t q = 0; q < cells; ++q) {
                double row = 0.0;
                for (std::size_t s = 0; s < k; ++s) row += w.dispatch_soft[r](s, q);
                norm_dev = std::max(norm_dev, std::abs(row - 1.0));
            }
            for (double x : w.dispatch_minmax[r].flat())
                if (x < 0.0 || x > 1.0) fail("minmax dispatch outside [0,1]");
        }
    }
    if (norm_dev > 1e-12) fail(fmt("normalization dev %.2e", norm_dev));

    for (bool ffn : {false, true}) {
        R2TConfig cfg;
        cfg.dim = 16;
        cfg.heads = 4;
        cfg.regions_per_side = 2;
        cfg.epeg_k = 5;
        cfg.slots = 3;
        cfg.use_ffn = ffn;
        R2TBlockParams p = R2TBlockParams::create("b", cfg, rng);
        p.rmsa.wo.value.fill(0.0);
        p.crmsa.wo.value.fill(0.0);
        if (ffn) p.ffn[0].w2.value.fill(0.0);
        for (std::size_t i : {1u, 9u, 37u}) {
            const Matrix h = random_matrix(i, 16, rng);
            if (!(r2t_block_forward(h, p, cfg) == h)) fail(fmt("residual identity I=%zu ffn=%d", i, int(ffn)));
        }
    }

    ModelConfig mc;
    mc.input_dim = 12;
    mc.r2t.dim = 16;
    mc.r2t.heads = 4;
    mc.r2t.regions_per_side = 2;
    mc.r2t.epeg_k = 5;
    mc.head.hidden = 16;
    Model model(mc, 3);
    for (ParamTensor* t : model.parameters()) init_uniform(*t, 0.3, rng);
    const Matrix x = random_matrix(30, 12, rng);
    const Matrix z = model.embed(x);
    const auto base = gated_attention_pool(z, model.head());
    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    bool order_dependent = false;
    for (int t = 0; t < 20; ++t) {
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix zp(30, 16), xp(30, 12);
        for (std::size_t i = 0; i < 30; ++i) {
            std::copy(z.row(perm[i]).begin(), z.row(perm[i]).end(), zp.row(i).begin());
            std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), xp.row(i).begin());
        }
        const auto pooled = gated_attention_pool(zp, model.head());
        if (pooled.bag != base.bag || classify(pooled.bag, model.head()) != classify(base.bag, model.head()))
            fail("head permutation invariance");
        order_dependent = order_dependent || model.predict(xp).logits != model.predict(x).logits;
    }
    if (!order_dependent) fail("full model unchanged under every permutation");

    return {failures == 0, failures == 0 ? fmt("round trip I 1-500 x L 1-8 exact, normalization dev %.1e, "
                                                "identity and permutation checks exact",
                                                norm_dev)
                                         : fmt("%zu failures, first: %s", failures, first.c_str())};
}

Outcome zero_epeg_degeneracy() {
    std::size_t cases = 0, mismatched = 0;
    Rng rng(11);
    for (EpegVariant v : {EpegVariant::attn, EpegVariant::value})
        for (std::size_t l : {1u, 2u, 4u})
            for (std::size_t i : {1u, 7u, 50u, 130u}) {
                RMSAConfig cfg;
                cfg.heads = 4;
                cfg.epeg_k = 7;
                cfg.epeg_variant = v;
                const RMSAParams p = RMSAParams::create("r", 16, cfg, rng);
                RMSAConfig off = cfg;
                off.use_epeg = false;
                const Matrix h = random_matrix(i, 16, rng);
                ++cases;
                if (!(r_msa(h, p, cfg, l) == r_msa(h, p, off, l))) ++mismatched;
            }
    return {mismatched == 0, fmt("%zu configurations, %zu not bit-identical", cases, mismatched)};
}

// ---------------------------------------------------------------------------
// learning runs

ModelConfig acceptance_model(std::size_t input_dim, std::size_t n_blocks) {
    ModelConfig mc;
    mc.input_dim = input_dim;
    mc.r2t.dim = 64;
    mc.r2t.n_blocks = n_blocks;
    mc.head.hidden = 64;
    return mc;
}

BagStore make_store(const SynthConfig& sc, const fs::path& dir) {
    fs::remove_all(dir);
    return load_bags(load_manifest(synthesize_dataset(sc, dir)));
}

std::vector<BagRecord> records_of(const BagStore& store) {
    std::vector<BagRecord> recs;
    for (const auto& [id, bag] : store) recs.push_back({id, "", bag.label});
    return recs;
}

struct LearningRun {
    CVResult r2t, baseline;
    double r2t_secs = 0.0, baseline_secs = 0.0;
};

LearningRun desk_scale_cv(const fs::path& dir) {
    SynthConfig sc;
    sc.n_bags = 200;
    const BagStore store = make_store(sc, dir / "data");
    const auto folds = kfold_split(records_of(store), 3, 1);
    TrainConfig tc;
    LearningRun run;
    auto t0 = Clock::now();
    run.r2t = cross_validate(store, folds, acceptance_model(sc.dim, 1), tc);
    run.r2t_secs = seconds_since(t0);
    t0 = Clock::now();
    run.baseline = cross_validate(store, folds, acceptance_model(sc.dim, 0), tc);
    run.baseline_secs = seconds_since(t0);
    for (const auto& f : run.r2t.folds) write_history(f.history, dir / fmt("r2t_fold%zu.csv", f.fold));
    return run;
}

Outcome desk_scale_learning(const LearningRun& run) {
    std::string per_fold;
    for (const auto& f : run.r2t.folds)
        per_fold += fmt(" f%zu=%.3f@%zu", f.fold, f.test.auc, f.best_epoch);
    const bool ok = run.r2t.auc.mean >= 0.95 && run.baseline.auc.mean >= 0.9 && run.r2t_secs < 1200.0;
    return {ok, fmt("R2T mean AUC %.4f (>= 0.95;%s), baseline %.4f (>= 0.9), R2T CV %.0f s (limit 1200), baseline "
                    "%.0f s",
                    run.r2t.auc.mean, per_fold.c_str(), run.baseline.auc.mean, run.r2t_secs, run.baseline_secs)};
}

Outcome determinism(const LearningRun& a, const LearningRun& b) {
    std::size_t same = 0;
    for (std::size_t f = 0; f < a.r2t.folds.size(); ++f)
        same += history_csv(a.r2t.folds[f].history) == history_csv(b.r2t.folds[f].history);
    for (std::size_t f = 0; f < a.baseline.folds.size(); ++f)
        same += history_csv(a.baseline.folds[f].history) == history_csv(b.baseline.folds[f].history);
    const std::size_t total = a.r2t.folds.size() + a.baseline.folds.size();
    return {same == total, fmt("%zu of %zu fold histories byte-identical across two runs", same, total)};
}

// 3-fold CV per seed; the seed drives data, folds and initialization.
Outcome locality_advantage(const fs::path& dir) {
    const auto t0 = Clock::now();
    std::vector<double> r2t_auc, base_auc;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SynthConfig sc;
        sc.n_bags = 300;
        sc.witness_ratio = 0.05;
        sc.shift = 2.0;
        sc.locality = Locality::two_type_window;
        sc.window = 8;
        sc.seed = seed;
        const BagStore store = make_store(sc, dir / fmt("seed%llu", static_cast<unsigned long long>(seed)));
        const auto folds = kfold_split(records_of(store), 3, seed);
        TrainConfig tc;
        tc.seed = seed;
        const auto a = cross_validate(store, folds, acceptance_model(sc.dim, 1), tc);
        const auto b = cross_validate(store, folds, acceptance_model(sc.dim, 0), tc);
        r2t_auc.push_back(a.auc.mean);
        base_auc.push_back(b.auc.mean);
        per_seed += fmt(" s%llu=%.3f/%.3f", static_cast<unsigned long long>(seed), a.auc.mean, b.auc.mean);
    }
    const auto r = summarize(r2t_auc), b = summarize(base_auc);
    return {r.mean >= b.mean,
            fmt("mean test AUC R2T %.4f (sd %.4f) vs baseline %.4f (sd %.4f) over seeds, gap %+.4f (per seed "
                "r2t/base:%s), %.0f s",
                r.mean, r.stddev, b.mean, b.stddev, r.mean - b.mean, per_seed.c_str(), seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string workdir = "acceptance_work";
    std::vector<int> only;
    app.add_option("--workdir", workdir, "scratch directory for synthetic datasets")->capture_default_str();
    app.add_option("--only", only, "run only these criteria (1-8)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8}
                                                : std::set<int>(only.begin(), only.end());
    fs::create_directories(workdir);

    std::map<int, std::pair<std::string, Outcome>> results;
    const auto report = [&](int id, const char* name, const Outcome& o) {
        std::fprintf(stderr, "criterion %d done (%s)\n", id, o.passed ? "pass" : "fail");
        results[id] = {name, o};
    };

    if (selected.count(1)) report(1, "gradient suite", gradient_suite());
    if (selected.count(2) || selected.count(8)) {
        const auto t0 = Clock::now();
        OracleSuiteOptions opt;
        opt.attention_configs = 50;
        opt.metric_sets = 1000;
        const auto reports = run_oracle_suite(opt);
        const double secs = seconds_since(t0);
        if (selected.count(2)) report(2, "attention oracles", oracle_suite(reports, secs, false));
        if (selected.count(8)) report(8, "metric oracles", oracle_suite(reports, secs, true));
    }
    if (selected.count(3)) report(3, "structural invariants", structural_invariants());
    if (selected.count(4)) report(4, "zero EPEG degeneracy", zero_epeg_degeneracy());
    if (selected.count(5) || selected.count(7)) {
        const LearningRun first = desk_scale_cv(fs::path(workdir) / "desk_a");
        if (selected.count(5)) report(5, "desk-scale learning", desk_scale_learning(first));
        if (selected.count(7)) report(7, "determinism", determinism(first, desk_scale_cv(fs::path(workdir) / "desk_b")));
    }
    if (selected.count(6)) report(6, "locality advantage", locality_advantage(fs::path(workdir) / "locality"));

    int failed = 0;
    std::string summary;
    for (const auto& [id, r] : results) {
        summary += fmt("[%s] %d %s: ", r.second.passed ? "PASS" : "FAIL", id, r.first.c_str()) + r.second.detail + "\n";
        failed += !r.second.passed;
    }
    std::fputs(summary.c_str(), stdout);
    std::ofstream(fs::path(workdir) / "acceptance_results.txt") << summary;
    return failed == 0 ? 0 : 1;
}
