#pragma once

// Adam with a per-epoch cosine schedule and early stopping (batch size 1),
// model evaluation, checkpoints, training history and k-fold cross-validation.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "r2tmil/bagio.hpp"
#include "r2tmil/metrics.hpp"
#include "r2tmil/model.hpp"
#include "r2tmil/numerics.hpp"

namespace r2t {

enum class Monitor { auc, loss };

struct TrainConfig {
    double lr = 2e-4;
    double weight_decay = 1e-5;
    std::size_t epochs = 200;
    std::size_t patience = 30;
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    Monitor monitor = Monitor::auc;
    ThresholdRule threshold_rule = ThresholdRule::youden;

    void validate() const {
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be finite and >= 0");
        if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
        if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
        if (patience == 0 || patience > epochs) throw std::invalid_argument("patience must be in [1, epochs]");
    }
};

/// 0.5 * lr0 * (1 + cos(pi * epoch / epochs))
inline double cosine_lr(std::size_t epoch, double lr0, std::size_t epochs) {
    if (epoch >= epochs)
        throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(epochs) + ")");
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

inline double cosine_lr(std::size_t epoch, const TrainConfig& cfg) { return cosine_lr(epoch, cfg.lr, cfg.epochs); }

struct AdamState {
    std::vector<Matrix> m, v;
    std::size_t step = 0;
};

/// Classic Adam with bias correction; weight decay is added to the gradient.
inline void adam_step(const ParamList& params, AdamState& st, double lr, const TrainConfig& cfg) {
    if (st.m.empty()) {
        for (const ParamTensor* p : params) {
            st.m.emplace_back(p->value.rows(), p->value.cols());
            st.v.emplace_back(p->value.rows(), p->value.cols());
        }
    }
    if (st.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed");
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto val = params[t]->value.flat();
        const auto grad = params[t]->grad.flat();
        auto m = st.m[t].flat();
        auto v = st.v[t].flat();
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double g = grad[i] + cfg.weight_decay * val[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            val[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps_adam);
        }
    }
}

// ---------------------------------------------------------------------------
// data

struct LabeledBag {
    std::string id;
    Matrix x;
    std::size_t label = 0;
};

using BagStore = std::map<std::string, LabeledBag>;

inline BagStore load_bags(const std::vector<BagRecord>& records) {
    BagStore store;
    for (const auto& r : records) {
        const auto f = read_features(r.feature_path, r.bag_id);
        store[r.bag_id] = {r.bag_id, f.to_matrix(), r.label};
    }
    return store;
}

inline std::vector<const LabeledBag*> select_bags(const BagStore& store, const std::vector<std::string>& ids) {
    std::vector<const LabeledBag*> out;
    for (const auto& id : ids) {
        const auto it = store.find(id);
        if (it == store.end()) throw std::invalid_argument("bag '" + id + "' is not in the manifest");
        out.push_back(&it->second);
    }
    return out;
}

/// Positive-class score: total probability of every class other than 0.
inline double positive_score(const BagPrediction& p) {
    double s = 0.0;
    for (std::size_t c = 1; c < p.probs.size(); ++c) s += p.probs[c];
    return s;
}

struct Evaluation {
    Metrics metrics;
    double mean_loss = 0.0;
    std::vector<double> scores;
};

inline Evaluation evaluate(const Model& model, const std::vector<const LabeledBag*>& bags, ThresholdRule rule) {
    if (bags.empty()) throw std::invalid_argument("evaluate: empty bag set");
    Evaluation ev;
    std::vector<int> labels;
    std::vector<double> losses;
    for (const LabeledBag* b : bags) {
        const auto pred = model.predict(b->x);
        ev.scores.push_back(positive_score(pred));
        labels.push_back(b->label == 0 ? 0 : 1);
        losses.push_back(bag_loss(pred.logits, b->label));
    }
    ev.mean_loss = order_invariant_sum(losses) / static_cast<double>(losses.size());
    ev.metrics = optimal_threshold_metrics(ev.scores, labels, rule);
    return ev;
}

// ---------------------------------------------------------------------------
// training

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    Metrics val;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    Model best;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> history;
};

inline bool improves(const EpochRecord& cand, const EpochRecord& best, Monitor monitor) {
    return monitor == Monitor::auc ? cand.val.auc > best.val.auc : cand.val_loss < best.val_loss;
}

/// One bag per optimizer step. Keeps the parameters of the best monitored
/// validation epoch and stops after `patience` epochs without improvement.
inline TrainResult train_model(const std::vector<const LabeledBag*>& train, const std::vector<const LabeledBag*>& val,
                               const ModelConfig& model_cfg, const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("train_model: empty training set");
    if (val.empty()) throw std::invalid_argument("train_model: empty validation set");
    Model model(model_cfg, cfg.seed);
    TrainResult res{model, 0, {}};
    const ParamList params = model.parameters();
    AdamState adam;
    Rng order_rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = cosine_lr(epoch, cfg);
        std::shuffle(order.begin(), order.end(), order_rng);
        std::vector<double> losses;
        losses.reserve(order.size());
        for (std::size_t idx : order) {
            zero_grads(params);
            losses.push_back(model.forward_backward(train[idx]->x, train[idx]->label));
            adam_step(params, adam, rec.lr, cfg);
        }
        rec.train_loss = order_invariant_sum(losses) / static_cast<double>(losses.size());
        const auto ev = evaluate(model, val, cfg.threshold_rule);
        rec.val = ev.metrics;
        rec.val_loss = ev.mean_loss;
        if (epoch == 0 || improves(rec, res.history[res.best_epoch], cfg.monitor)) {
            res.best = model;
            res.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        res.history.push_back(rec);
        if (since_best >= cfg.patience) break;
    }
    return res;
}

// ---------------------------------------------------------------------------
// history and checkpoints

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,train_loss,val_auc,val_acc,val_f1,lr\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val.auc) + "," +
               format_double(r.val.accuracy) + "," + format_double(r.val.f1) + "," + format_double(r.lr) + "\n";
    }
    return out;
}

inline void write_history(const std::vector<EpochRecord>& history, const fs::path& path) {
    detail::write_file(path, history_csv(history));
}

inline constexpr char kCheckpointMagic[4] = {'R', '2', 'T', 'C'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

/// "R2TC" | u8 version | u32 count | per tensor: u32 name_len, name, u32 rank,
/// u32 dims..., f64 values (little endian).
inline void save_checkpoint(const Model& model, const fs::path& path) {
    std::string buf(kCheckpointMagic, 4);
    buf.push_back(static_cast<char>(kCheckpointVersion));
    const auto params = model.parameters();
    detail::put_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const ParamTensor* p : params) {
        detail::put_u32(buf, static_cast<std::uint32_t>(p->name.size()));
        buf += p->name;
        detail::put_u32(buf, static_cast<std::uint32_t>(p->shape.size()));
        for (std::size_t d : p->shape) detail::put_u32(buf, static_cast<std::uint32_t>(d));
        for (double v : p->value.flat()) detail::put_u64(buf, std::bit_cast<std::uint64_t>(v));
    }
    detail::write_file(path, buf);
}

/// Loads values into a model built from the matching configuration. Every
/// tensor must be present with the same shape.
inline void load_checkpoint(Model& model, const fs::path& path) {
    const std::string buf = detail::read_file(path);
    std::size_t off = 0;
    const auto need = [&](std::size_t n) {
        if (buf.size() - off < n) throw FormatError("truncated checkpoint " + path.string());
    };
    need(9);
    if (!std::equal(kCheckpointMagic, kCheckpointMagic + 4, buf.begin()))
        throw FormatError("bad magic in checkpoint " + path.string());
    if (static_cast<std::uint8_t>(buf[4]) != kCheckpointVersion)
        throw FormatError("checkpoint version mismatch in " + path.string());
    const std::uint32_t count = detail::get_u32(buf, 5);
    off = 9;
    std::map<std::string, ParamTensor*> by_name;
    for (ParamTensor* p : model.parameters()) by_name[p->name] = p;
    std::size_t loaded = 0;
    for (std::uint32_t t = 0; t < count; ++t) {
        need(4);
        const std::uint32_t name_len = detail::get_u32(buf, off);
        off += 4;
        need(name_len + 4);
        const std::string name = buf.substr(off, name_len);
        off += name_len;
        const std::uint32_t rank = detail::get_u32(buf, off);
        off += 4;
        need(4ULL * rank);
        std::vector<std::size_t> shape;
        for (std::uint32_t r = 0; r < rank; ++r, off += 4) shape.push_back(detail::get_u32(buf, off));
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint tensor '" + name + "' does not exist in the model");
        ParamTensor& p = *it->second;
        if (shape != p.shape) {
            std::string got, want;
            for (std::size_t d : shape) got += (got.empty() ? "" : "x") + std::to_string(d);
            for (std::size_t d : p.shape) want += (want.empty() ? "" : "x") + std::to_string(d);
            throw FormatError("checkpoint tensor '" + name + "' has shape " + got + ", model expects " + want);
        }
        need(8 * p.size());
        for (double& v : p.value.flat()) {
            v = std::bit_cast<double>(detail::get_u64(buf, off));
            off += 8;
        }
        ++loaded;
    }
    if (loaded != by_name.size())
        throw FormatError("checkpoint " + path.string() + " holds " + std::to_string(loaded) + " of " +
                          std::to_string(by_name.size()) + " model tensors");
}

// ---------------------------------------------------------------------------
// cross-validation

struct FoldResult {
    std::size_t fold = 0;
    Metrics test;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> history;
};

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;  // population (divide by n)
};

inline MetricSummary summarize(const std::vector<double>& xs) {
    MetricSummary s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    for (double x : xs) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / static_cast<double>(xs.size()));
    return s;
}

struct CVResult {
    std::vector<FoldResult> folds;
    MetricSummary auc, accuracy, f1;
};

/// Bags used for early stopping: the validation list, or the training list
/// when the fold is too small to have one.
inline const std::vector<std::string>& monitor_ids(const FoldSplit& split) {
    return split.val_ids.empty() ? split.train_ids : split.val_ids;
}

inline FoldResult run_fold(const BagStore& store, const FoldSplit& split, const ModelConfig& model_cfg,
                           TrainConfig train_cfg) {
    train_cfg.seed += split.fold_index;
    auto res =
        train_model(select_bags(store, split.train_ids), select_bags(store, monitor_ids(split)), model_cfg, train_cfg);
    FoldResult fr;
    fr.fold = split.fold_index;
    fr.test = evaluate(res.best, select_bags(store, split.test_ids), train_cfg.threshold_rule).metrics;
    fr.best_epoch = res.best_epoch;
    fr.history = std::move(res.history);
    return fr;
}

/// Trains one model per fold (fold f uses seed + f) and aggregates test
/// metrics. Folds run on up to `jobs` threads; results do not depend on `jobs`.
inline CVResult cross_validate(const BagStore& store, const std::vector<FoldSplit>& folds,
                               const ModelConfig& model_cfg, const TrainConfig& train_cfg, std::size_t jobs = 1) {
    CVResult cv;
    cv.folds.resize(folds.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    const auto worker = [&] {
        for (std::size_t f = next++; f < folds.size(); f = next++) {
            try {
                cv.folds[f] = run_fold(store, folds[f], model_cfg, train_cfg);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, folds.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    std::vector<double> aucs, accs, f1s;
    for (const auto& f : cv.folds) {
        aucs.push_back(f.test.auc);
        accs.push_back(f.test.accuracy);
        f1s.push_back(f.test.f1);
    }
    cv.auc = summarize(aucs);
    cv.accuracy = summarize(accs);
    cv.f1 = summarize(f1s);
    return cv;
}

}  // namespace r2t
