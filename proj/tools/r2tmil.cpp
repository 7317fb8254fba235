// r2tmil: synthetic data, training, evaluation and self-checks from the shell.
//
// Exit codes: 0 success, 1 usage or input error, 2 a check failed.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "r2tmil/bagio.hpp"
#include "r2tmil/config.hpp"
#include "r2tmil/diagnostics.hpp"
#include "r2tmil/model.hpp"
#include "r2tmil/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace r2t;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitCheckFailed = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flags shared by every subcommand, plus one --<key> override per config key.
struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "r2tmil_out";
    std::size_t jobs = 1;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "flat key = value config file");
        app->add_option("--seed", seed, "overrides the config seed");
        app->add_option("--out", out, "output directory")->capture_default_str();
        app->add_option("--jobs", jobs, "parallel folds for cv")->capture_default_str()->check(CLI::PositiveNumber);
        for (const auto& k : RunConfig::keys()) {
            if (k.name == "seed") continue;  // covered by --seed above
            options[k.name] = app->add_option("--" + k.name, values[k.name], "config override")
                                  ->group("Config keys")
                                  ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
    }

    RunConfig resolve(const std::optional<fs::path>& fallback_config = std::nullopt) const {
        RunConfig cfg;
        if (!config_path.empty()) cfg.load(config_path);
        else if (fallback_config && fs::exists(*fallback_config)) cfg.load(*fallback_config);
        for (const auto& [name, opt] : options)
            if (opt->count() > 0) cfg.set(name, values.at(name));
        if (seed) cfg.set("seed", std::to_string(*seed));
        cfg.validate();
        return cfg;
    }
};

json metrics_json(const Metrics& m) {
    json j;
    j["accuracy"] = m.accuracy;
    j["auc"] = m.auc;
    j["f1"] = m.f1;
    j["threshold"] = m.threshold;
    j["n_pos"] = m.n_pos;
    j["n_neg"] = m.n_neg;
    return j;
}

fs::path prepare_out(const RunConfig& cfg, const std::string& out) {
    const fs::path dir(out);
    fs::create_directories(dir);
    cfg.write(dir / "effective_config.txt");
    return dir;
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

ModelConfig model_config_for(const RunConfig& cfg, const BagStore& store) {
    if (store.empty()) throw UsageError("manifest lists no bags");
    ModelConfig mc = cfg.model;
    mc.input_dim = store.begin()->second.x.cols();
    for (const auto& [id, bag] : store)
        if (bag.x.cols() != mc.input_dim)
            throw FormatError("bag '" + id + "' has D=" + std::to_string(bag.x.cols()) + ", expected " +
                              std::to_string(mc.input_dim));
    return mc;
}

std::vector<FoldSplit> folds_for(const std::string& split_path, const std::vector<BagRecord>& records,
                                 const RunConfig& cfg) {
    if (!split_path.empty()) return read_splits(split_path);
    return kfold_split(records, cfg.k_folds, cfg.train.seed);
}

const FoldSplit& pick_fold(const std::vector<FoldSplit>& folds, std::size_t fold) {
    for (const auto& f : folds)
        if (f.fold_index == fold) return f;
    throw UsageError("fold " + std::to_string(fold) + " is not in the split file");
}

TrainConfig fold_train_config(const RunConfig& cfg, std::size_t fold) {
    TrainConfig tc = cfg.train;
    tc.seed += fold;  // same convention as cross_validate
    return tc;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonFlags& flags) {
    const RunConfig cfg = flags.resolve();
    const fs::path dir = prepare_out(cfg, flags.out);
    const fs::path manifest = synthesize_dataset(cfg.synth, dir);
    const auto records = load_manifest(manifest);
    const fs::path splits = dir / "splits.tsv";
    write_splits(kfold_split(records, cfg.k_folds, cfg.train.seed), splits);
    json j;
    j["command"] = "synth";
    j["manifest"] = manifest.string();
    j["splits"] = splits.string();
    j["n_bags"] = records.size();
    emit(j);
    return kExitOk;
}

int cmd_train(const CommonFlags& flags, const std::string& manifest, const std::string& split, std::size_t fold) {
    const RunConfig cfg = flags.resolve();
    const auto records = load_manifest(manifest);
    const auto store = load_bags(records);
    const auto folds = folds_for(split, records, cfg);
    const FoldSplit& f = pick_fold(folds, fold);
    const ModelConfig mc = model_config_for(cfg, store);
    const fs::path dir = prepare_out(cfg, flags.out);

    const TrainConfig tc = fold_train_config(cfg, fold);
    const auto res = train_model(select_bags(store, f.train_ids), select_bags(store, monitor_ids(f)), mc, tc);
    save_checkpoint(res.best, dir / "checkpoint.r2tc");
    write_history(res.history, dir / "history.csv");

    json j;
    j["command"] = "train";
    j["fold"] = fold;
    j["checkpoint"] = (dir / "checkpoint.r2tc").string();
    j["history"] = (dir / "history.csv").string();
    j["epochs_run"] = res.history.size();
    j["best_epoch"] = res.best_epoch;
    j["best_val"] = metrics_json(res.history[res.best_epoch].val);
    if (!f.test_ids.empty())
        j["test"] = metrics_json(evaluate(res.best, select_bags(store, f.test_ids), tc.threshold_rule).metrics);
    emit(j);
    return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint, const std::string& manifest,
             const std::string& split, std::size_t fold, const std::string& role) {
    const RunConfig cfg = flags.resolve(fs::path(checkpoint).parent_path() / "effective_config.txt");
    const auto records = load_manifest(manifest);
    const auto store = load_bags(records);
    std::vector<std::string> ids;
    if (role == "all") {
        for (const auto& r : records) ids.push_back(r.bag_id);
    } else {
        const auto folds = folds_for(split, records, cfg);
        const FoldSplit& f = pick_fold(folds, fold);
        ids = role == "train" ? f.train_ids : role == "val" ? f.val_ids : f.test_ids;
    }
    if (ids.empty()) throw UsageError("role '" + role + "' of fold " + std::to_string(fold) + " holds no bags");

    Model model(model_config_for(cfg, store), fold_train_config(cfg, fold).seed);
    load_checkpoint(model, checkpoint);
    const fs::path dir = prepare_out(cfg, flags.out);
    const auto ev = evaluate(model, select_bags(store, ids), cfg.train.threshold_rule);

    json j;
    j["command"] = "eval";
    j["role"] = role;
    j["fold"] = fold;
    j["n_bags"] = ids.size();
    j["metrics"] = metrics_json(ev.metrics);
    j["mean_loss"] = ev.mean_loss;
    std::ofstream(dir / ("eval_" + role + ".json")) << j.dump(2) << "\n";
    emit(j);
    return kExitOk;
}

int cmd_gradcheck(const CommonFlags& flags, bool inject_bug, std::size_t max_coords) {
    const RunConfig cfg = flags.resolve();
    prepare_out(cfg, flags.out);
    GradSuiteOptions opt;
    opt.seed = cfg.train.seed;
    opt.inject_bug = inject_bug;
    opt.max_coords_per_tensor = max_coords;
    const auto rows = run_gradcheck_suite(opt);

    bool all = true;
    json j;
    j["command"] = "gradcheck";
    j["seed"] = opt.seed;
    j["tolerance"] = opt.tol;
    j["rows"] = json::array();
    std::fprintf(stderr, "%-48s %12s %8s  %s\n", "op", "max_rel_err", "coords", "verdict");
    for (const auto& r : rows) {
        all = all && r.passed;
        std::fprintf(stderr, "%-48s %12.3e %8zu  %s\n", r.op_name.c_str(), r.max_rel_err, r.coordinates_checked,
                     r.passed ? "passed" : "FAILED");
        j["rows"].push_back({{"op", r.op_name},
                             {"max_rel_err", r.max_rel_err},
                             {"worst_coordinate", r.worst_coordinate},
                             {"coordinates_checked", r.coordinates_checked},
                             {"passed", r.passed}});
    }
    j["passed"] = all;
    emit(j);
    return all ? kExitOk : kExitCheckFailed;
}

int cmd_oracle(const CommonFlags& flags, std::size_t configs, std::size_t metric_sets) {
    const RunConfig cfg = flags.resolve();
    prepare_out(cfg, flags.out);
    OracleSuiteOptions opt;
    opt.seed = cfg.train.seed;
    opt.attention_configs = configs;
    opt.metric_sets = metric_sets;
    bool all = true;
    json j;
    j["command"] = "oracle";
    j["seed"] = opt.seed;
    j["suites"] = json::array();
    for (const auto& r : run_oracle_suite(opt)) {
        all = all && r.passed;
        std::fprintf(stderr, "%-45s max_abs_dev %.3e (tol %.0e)  %s\n", r.suite.c_str(), r.max_abs_dev, r.tolerance,
                     r.passed ? "passed" : "FAILED");
        j["suites"].push_back({{"suite", r.suite},
                               {"max_abs_dev", r.max_abs_dev},
                               {"tolerance", r.tolerance},
                               {"cases", r.shapes_tested.size()},
                               {"shapes_tested", r.shapes_tested},
                               {"passed", r.passed}});
    }
    j["passed"] = all;
    emit(j);
    return all ? kExitOk : kExitCheckFailed;
}

int cmd_cv(const CommonFlags& flags, std::string manifest, const std::string& split) {
    const RunConfig cfg = flags.resolve();
    const fs::path dir = prepare_out(cfg, flags.out);
    if (manifest.empty()) manifest = synthesize_dataset(cfg.synth, dir / "data").string();
    const auto records = load_manifest(manifest);
    const auto store = load_bags(records);
    const auto folds = folds_for(split, records, cfg);
    const auto cv = cross_validate(store, folds, model_config_for(cfg, store), cfg.train, flags.jobs);

    json j;
    j["command"] = "cv";
    j["manifest"] = manifest;
    j["folds"] = json::array();
    for (const auto& f : cv.folds) {
        const fs::path fdir = dir / ("fold" + std::to_string(f.fold));
        fs::create_directories(fdir);
        write_history(f.history, fdir / "history.csv");
        j["folds"].push_back({{"fold", f.fold},
                              {"best_epoch", f.best_epoch},
                              {"epochs_run", f.history.size()},
                              {"test", metrics_json(f.test)}});
    }
    for (const auto& [name, s] : {std::pair{"auc", cv.auc}, {"accuracy", cv.accuracy}, {"f1", cv.f1}})
        j["summary"][name] = {{"mean", s.mean}, {"std", s.stddev}};
    std::ofstream(dir / "cv_summary.json") << j.dump(2) << "\n";
    emit(j);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Regional re-embedding MIL: data synthesis, training and self-checks"};
    app.require_subcommand(1);

    CommonFlags synth_flags, train_flags, eval_flags, grad_flags, oracle_flags, cv_flags;

    auto* synth = app.add_subcommand("synth", "write a synthetic bag dataset, manifest and k-fold splits");
    synth_flags.attach(synth);

    std::string manifest, split, checkpoint, role = "test";
    std::size_t fold = 0;
    auto* train = app.add_subcommand("train", "train one fold and write checkpoint + history");
    train_flags.attach(train);
    train->add_option("--manifest", manifest, "manifest.tsv")->required();
    train->add_option("--split", split, "splits.tsv (default: stratified k-fold from the manifest)");
    train->add_option("--fold", fold, "fold index")->capture_default_str();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and print metrics");
    eval_flags.attach(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint.r2tc")->required();
    eval->add_option("--manifest", manifest, "manifest.tsv")->required();
    eval->add_option("--split", split, "splits.tsv");
    eval->add_option("--fold", fold, "fold index")->capture_default_str();
    eval->add_option("--role", role, "bag subset")->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();

    bool inject_bug = false;
    std::size_t max_coords = 32;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
    grad_flags.attach(grad);
    grad->add_flag("--inject-bug", inject_bug, "corrupt one analytic gradient (self-test of the checker)");
    grad->add_option("--max-coords", max_coords, "checked coordinates per tensor, 0 = all")->capture_default_str();

    std::size_t oracle_configs = 50, metric_sets = 1000;
    auto* oracle = app.add_subcommand("oracle", "compare fast kernels against brute-force references");
    oracle_flags.attach(oracle);
    oracle->add_option("--configs", oracle_configs, "random attention configurations")->capture_default_str();
    oracle->add_option("--metric-sets", metric_sets, "random score/label sets")->capture_default_str();

    std::string cv_manifest;
    auto* cv = app.add_subcommand("cv", "k-fold cross-validation (synthesizes data when no manifest is given)");
    cv_flags.attach(cv);
    cv->add_option("--manifest", cv_manifest, "manifest.tsv");
    cv->add_option("--split", split, "splits.tsv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(synth_flags);
        if (*train) return cmd_train(train_flags, manifest, split, fold);
        if (*eval) return cmd_eval(eval_flags, checkpoint, manifest, split, fold, role);
        if (*grad) return cmd_gradcheck(grad_flags, inject_bug, max_coords);
        if (*oracle) return cmd_oracle(oracle_flags, oracle_configs, metric_sets);
        if (*cv) return cmd_cv(cv_flags, cv_manifest, split);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
