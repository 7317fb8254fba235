#pragma once

// Instance-feature files, dataset manifests, stratified k-fold splits and the
// synthetic bag generator.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2tmil/numerics.hpp"

namespace r2t {

namespace fs = std::filesystem;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct InstanceFeatures {
    std::string bag_id;
    std::size_t instances = 0;  // I
    std::size_t dim = 0;        // D
    std::vector<float> values;  // I x D row-major

    float at(std::size_t i, std::size_t d) const { return values[i * dim + d]; }

    Matrix to_matrix() const {
        Matrix m(instances, dim);
        for (std::size_t i = 0; i < values.size(); ++i) m.flat()[i] = static_cast<double>(values[i]);
        return m;
    }

    bool operator==(const InstanceFeatures&) const = default;
};

// ---------------------------------------------------------------------------
// R2TF: "R2TF" | u8 version | u32 I | u32 D | I*D f32, all little endian

inline constexpr char kFeatureMagic[4] = {'R', '2', 'T', 'F'};
inline constexpr std::uint8_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 13;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const std::string& buf, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace detail

inline void write_features(const InstanceFeatures& bag, const fs::path& path) {
    if (bag.instances == 0 || bag.dim == 0 || bag.values.size() != bag.instances * bag.dim)
        throw std::invalid_argument("write_features: shape does not match stored values");
    if (!std::all_of(bag.values.begin(), bag.values.end(), [](float v) { return std::isfinite(v); }))
        throw std::invalid_argument("write_features: non-finite entry in bag " + bag.bag_id);
    std::string buf(kFeatureMagic, 4);
    buf.push_back(static_cast<char>(kFeatureVersion));
    detail::put_u32(buf, static_cast<std::uint32_t>(bag.instances));
    detail::put_u32(buf, static_cast<std::uint32_t>(bag.dim));
    buf.reserve(buf.size() + 4 * bag.values.size());
    for (float v : bag.values) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
    detail::write_file(path, buf);
}

inline InstanceFeatures read_features(const fs::path& path, std::string bag_id = {}) {
    const std::string buf = detail::read_file(path);
    if (buf.size() < 4 || !std::equal(kFeatureMagic, kFeatureMagic + 4, buf.begin()))
        throw FormatError("bad magic in " + path.string());
    if (buf.size() < kFeatureHeaderBytes) throw FormatError("truncated header in " + path.string());
    if (static_cast<std::uint8_t>(buf[4]) != kFeatureVersion)
        throw FormatError("version mismatch in " + path.string() + ": " +
                          std::to_string(static_cast<unsigned>(static_cast<std::uint8_t>(buf[4]))));
    InstanceFeatures f;
    f.bag_id = bag_id.empty() ? path.stem().string() : std::move(bag_id);
    f.instances = detail::get_u32(buf, 5);
    f.dim = detail::get_u32(buf, 9);
    const std::uint64_t payload = static_cast<std::uint64_t>(f.instances) * f.dim * 4;
    if (buf.size() - kFeatureHeaderBytes < payload)
        throw FormatError("truncated payload in " + path.string() + ": need " + std::to_string(payload) +
                          " bytes, have " + std::to_string(buf.size() - kFeatureHeaderBytes));
    f.values.resize(f.instances * f.dim);
    for (std::size_t i = 0; i < f.values.size(); ++i)
        f.values[i] = std::bit_cast<float>(detail::get_u32(buf, kFeatureHeaderBytes + 4 * i));
    return f;
}

// ---------------------------------------------------------------------------
// manifest: bag_id <TAB> relative_feature_path <TAB> label

struct BagRecord {
    std::string bag_id;
    fs::path feature_path;  // resolved against the manifest directory
    std::size_t label = 0;
};

inline std::vector<BagRecord> load_manifest(const fs::path& path, std::size_t classes = 2) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::vector<BagRecord> records;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto cols = detail::split_tabs(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (cols.size() != 3 || cols[0].empty() || cols[1].empty())
            throw FormatError("manifest parse error at " + where + ": expected 3 tab-separated fields");
        std::size_t label = 0;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(cols[2], &used);
            if (used != cols[2].size() || v < 0) throw std::invalid_argument("label");
            label = static_cast<std::size_t>(v);
        } catch (const std::logic_error&) {
            throw FormatError("manifest parse error at " + where + ": bad label '" + cols[2] + "'");
        }
        if (label >= classes)
            throw FormatError("label out of range at " + where + ": " + cols[2] + " >= " + std::to_string(classes));
        if (!seen.insert(cols[0]).second) throw FormatError("duplicate bag_id '" + cols[0] + "' at " + where);
        records.push_back({cols[0], path.parent_path() / cols[1], label});
    }
    return records;
}

inline void write_manifest(const std::vector<BagRecord>& records, const fs::path& path) {
    std::string buf;
    for (const auto& r : records) {
        const fs::path rel = r.feature_path.is_absolute() ? fs::relative(r.feature_path, path.parent_path())
                                                          : r.feature_path;
        buf += r.bag_id + "\t" + rel.generic_string() + "\t" + std::to_string(r.label) + "\n";
    }
    detail::write_file(path, buf);
}

// ---------------------------------------------------------------------------
// stratified k-fold with a validation carve-out from each fold's train part

struct FoldSplit {
    std::size_t fold_index = 0;
    std::vector<std::string> train_ids, val_ids, test_ids;

    bool operator==(const FoldSplit&) const = default;
};

inline constexpr double kValFraction = 0.2;

/// Fold i tests on stratified bucket i; 20% of each class in the remaining
/// bags (at least one, never all) forms the validation set. When some class
/// has a single remaining bag the fold gets no validation set at all, so a
/// validation list is never single-class. Lists keep manifest order.
inline std::vector<FoldSplit> kfold_split(const std::vector<BagRecord>& records, std::size_t k, std::uint64_t seed,
                                          double val_fraction = kValFraction) {
    if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].label].push_back(i);
    for (const auto& [label, members] : by_class)
        if (members.size() < k)
            throw std::invalid_argument("kfold_split: class " + std::to_string(label) + " has " +
                                        std::to_string(members.size()) + " bags, fewer than k=" + std::to_string(k));

    Rng rng(seed);
    std::vector<std::size_t> bucket(records.size());
    std::size_t next = 0;  // continues across classes so bucket sizes stay balanced
    for (auto& [label, members] : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t idx : members) bucket[idx] = next++ % k;
    }

    std::vector<FoldSplit> folds;
    for (std::size_t f = 0; f < k; ++f) {
        Rng vrng(seed ^ (0x9E3779B97F4A7C15ULL * (f + 1)));
        std::vector<char> is_val(records.size(), 0);
        bool carve = true;
        for (const auto& [label, members] : by_class) {
            std::vector<std::size_t> pool;
            for (std::size_t idx : members)
                if (bucket[idx] != f) pool.push_back(idx);
            std::sort(pool.begin(), pool.end());
            std::shuffle(pool.begin(), pool.end(), vrng);
            if (pool.size() < 2) carve = false;
            const auto n_val = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pool.size()))), 1,
                pool.size() > 1 ? pool.size() - 1 : 1);
            for (std::size_t j = 0; j < std::min(n_val, pool.size()); ++j) is_val[pool[j]] = 1;
        }
        if (!carve) std::fill(is_val.begin(), is_val.end(), 0);
        FoldSplit split{f, {}, {}, {}};
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (bucket[i] == f) split.test_ids.push_back(records[i].bag_id);
            else if (is_val[i]) split.val_ids.push_back(records[i].bag_id);
            else split.train_ids.push_back(records[i].bag_id);
        }
        folds.push_back(std::move(split));
    }
    return folds;
}

/// fold <TAB> role <TAB> bag_id
inline void write_splits(const std::vector<FoldSplit>& folds, const fs::path& path) {
    std::string buf;
    for (const auto& f : folds) {
        const std::string idx = std::to_string(f.fold_index);
        for (const auto& id : f.train_ids) buf += idx + "\ttrain\t" + id + "\n";
        for (const auto& id : f.val_ids) buf += idx + "\tval\t" + id + "\n";
        for (const auto& id : f.test_ids) buf += idx + "\ttest\t" + id + "\n";
    }
    detail::write_file(path, buf);
}

inline std::vector<FoldSplit> read_splits(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open split file " + path.string());
    std::map<std::size_t, FoldSplit> folds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        const auto cols = detail::split_tabs(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (cols.size() != 3) throw FormatError("split parse error at " + where);
        std::size_t fold = 0;
        try {
            fold = static_cast<std::size_t>(std::stoul(cols[0]));
        } catch (const std::logic_error&) {
            throw FormatError("split parse error at " + where + ": bad fold index");
        }
        auto& f = folds[fold];
        f.fold_index = fold;
        if (cols[1] == "train") f.train_ids.push_back(cols[2]);
        else if (cols[1] == "val") f.val_ids.push_back(cols[2]);
        else if (cols[1] == "test") f.test_ids.push_back(cols[2]);
        else throw FormatError("split parse error at " + where + ": unknown role '" + cols[1] + "'");
    }
    std::vector<FoldSplit> out;
    for (auto& [idx, f] : folds) out.push_back(std::move(f));
    return out;
}

// ---------------------------------------------------------------------------
// synthetic bags

enum class Locality { none, contiguous_run, two_type_window };

struct SynthConfig {
    std::size_t n_bags = 100;
    std::size_t instances_min = 64;
    std::size_t instances_max = 128;
    std::size_t dim = 64;
    double witness_ratio = 0.2;
    double shift = 3.0;
    Locality locality = Locality::none;
    std::size_t window = 8;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_bags == 0) throw std::invalid_argument("n_bags must be >= 1");
        if (instances_min == 0 || instances_min > instances_max)
            throw std::invalid_argument("instances_min must be in [1, instances_max]");
        if (dim == 0) throw std::invalid_argument("feature_dim must be >= 1");
        if (!(witness_ratio > 0.0 && witness_ratio <= 1.0))
            throw std::invalid_argument("witness_ratio must be in (0, 1]");
        if (locality == Locality::two_type_window) {
            if (dim < 2) throw std::invalid_argument("two_type_window needs feature_dim >= 2");
            if (window == 0) throw std::invalid_argument("window must be >= 1");
        }
    }
};

struct SynthBag {
    InstanceFeatures features;
    std::size_t label = 0;
    std::vector<std::size_t> witnesses;         // shifted on axis 0 (type A)
    std::vector<std::size_t> witnesses_type_b;  // shifted on axis 1
};

namespace detail {

inline bool has_close_pair(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t window) {
    for (std::size_t x : a)
        for (std::size_t y : b)
            if ((x > y ? x - y : y - x) <= window) return true;
    return false;
}

inline std::vector<std::size_t> sample_positions(std::size_t count, std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

/// Bag b is positive iff b is odd. Each bag draws from its own RNG stream so
/// any bag can be regenerated in isolation.
inline SynthBag synthesize_bag(const SynthConfig& cfg, std::size_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    Rng rng(seq);
    SynthBag out;
    out.label = b % 2;
    std::uniform_int_distribution<std::size_t> size_dist(cfg.instances_min, cfg.instances_max);
    const std::size_t n = size_dist(rng);
    char id[32];
    std::snprintf(id, sizeof(id), "bag_%05zu", b);
    out.features = {id, n, cfg.dim, std::vector<float>(n * cfg.dim)};
    std::normal_distribution<double> noise(0.0, 1.0);
    for (float& v : out.features.values) v = static_cast<float>(noise(rng));

    const auto n_w = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::ceil(cfg.witness_ratio * static_cast<double>(n) - 1e-12)));
    switch (cfg.locality) {
        case Locality::none:
            if (out.label == 1) out.witnesses = detail::sample_positions(n_w, n, rng);
            break;
        case Locality::contiguous_run:
            if (out.label == 1) {
                std::uniform_int_distribution<std::size_t> start_dist(0, n - n_w);
                const std::size_t start = start_dist(rng);
                for (std::size_t i = 0; i < n_w; ++i) out.witnesses.push_back(start + i);
            }
            break;
        case Locality::two_type_window: {
            // Both classes carry type A and type B witnesses; only their
            // proximity decides the label.
            const std::size_t total = std::max<std::size_t>(2, n_w);
            const std::size_t n_a = (total + 1) / 2;
            bool done = false;
            for (int attempt = 0; attempt < 100000 && !done; ++attempt) {
                auto pos = detail::sample_positions(total, n, rng);
                std::shuffle(pos.begin(), pos.end(), rng);
                std::vector<std::size_t> a(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_a));
                std::vector<std::size_t> bb(pos.begin() + static_cast<std::ptrdiff_t>(n_a), pos.end());
                if (out.label == 1 && !detail::has_close_pair(a, bb, cfg.window)) {
                    // move one B next to a random A
                    std::uniform_int_distribution<std::size_t> pick(0, n_a - 1);
                    const std::size_t anchor = a[pick(rng)];
                    std::vector<std::size_t> cands;
                    for (std::size_t q = anchor > cfg.window ? anchor - cfg.window : 0;
                         q <= std::min(n - 1, anchor + cfg.window); ++q)
                        if (std::find(pos.begin(), pos.end(), q) == pos.end()) cands.push_back(q);
                    if (cands.empty()) continue;
                    std::uniform_int_distribution<std::size_t> pc(0, cands.size() - 1);
                    bb[0] = cands[pc(rng)];
                }
                if (out.label == 0 && detail::has_close_pair(a, bb, cfg.window)) continue;
                std::sort(a.begin(), a.end());
                std::sort(bb.begin(), bb.end());
                out.witnesses = std::move(a);
                out.witnesses_type_b = std::move(bb);
                done = true;
            }
            if (!done)
                throw std::runtime_error("synthesize: cannot place witnesses for bag " + out.features.bag_id +
                                         " (bag too small for the window)");
            break;
        }
    }
    for (std::size_t i : out.witnesses) out.features.values[i * cfg.dim] += static_cast<float>(cfg.shift);
    for (std::size_t i : out.witnesses_type_b) out.features.values[i * cfg.dim + 1] += static_cast<float>(cfg.shift);
    return out;
}

/// Writes features/<bag_id>.r2tf for every bag plus manifest.tsv; returns the manifest path.
inline fs::path synthesize_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir / "features");
    std::vector<BagRecord> records;
    for (std::size_t b = 0; b < cfg.n_bags; ++b) {
        const SynthBag bag = synthesize_bag(cfg, b);
        const fs::path rel = fs::path("features") / (bag.features.bag_id + ".r2tf");
        write_features(bag.features, out_dir / rel);
        records.push_back({bag.features.bag_id, rel, bag.label});
    }
    const fs::path manifest = out_dir / "manifest.tsv";
    write_manifest(records, manifest);
    return manifest;
}

}  // namespace r2t
