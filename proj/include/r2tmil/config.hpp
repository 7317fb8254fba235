#pragma once

// Flat `key = value` run configuration shared by every CLI command.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2tmil/bagio.hpp"
#include "r2tmil/model.hpp"
#include "r2tmil/train.hpp"

namespace r2t {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SynthConfig synth;
    std::size_t k_folds = 5;

    struct Key {
        std::string name;
        std::function<std::string(const RunConfig&)> get;
        std::function<void(RunConfig&, const std::string&)> set;
    };

    static const std::vector<Key>& keys();

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    bool has_key(const std::string& key) const;

    /// Reads `key = value` lines; `#` starts a comment. Unknown keys throw.
    void load(const std::filesystem::path& path);
    void parse(const std::string& text, const std::string& origin = "config");
    std::string dump() const;
    void write(const std::filesystem::path& path) const;

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] inline void bad(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || v.empty()) bad(key, v, "a non-negative integer");
    return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || v.empty()) bad(key, v, "an unsigned 64-bit integer");
    return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || v.empty()) bad(key, v, "a real number");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad(key, v, "a boolean (true/false)");
}

inline std::string show(bool b) { return b ? "true" : "false"; }
inline std::string show(std::size_t n) { return std::to_string(n); }
inline std::string show_u64(std::uint64_t n) { return std::to_string(n); }
/// Shortest representation that reads back to the same double.
inline std::string show(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general);
    return std::string(buf, r.ptr);
}

template <typename E>
struct EnumName {
    E value;
    const char* name;
};

template <typename E, std::size_t N>
E parse_enum(const std::string& key, const std::string& v, const EnumName<E> (&table)[N]) {
    std::string allowed;
    for (const auto& e : table) {
        if (v == e.name) return e.value;
        allowed += allowed.empty() ? "" : "|";
        allowed += e.name;
    }
    throw ConfigError("config key '" + key + "': '" + v + "' is not one of " + allowed);
}

template <typename E, std::size_t N>
std::string enum_name(E value, const EnumName<E> (&table)[N]) {
    for (const auto& e : table)
        if (e.value == value) return e.name;
    return "?";
}

inline constexpr EnumName<EpegVariant> kEpegVariants[] = {{EpegVariant::attn, "attn"}, {EpegVariant::value, "value"}};
inline constexpr EnumName<CrAttnAxis> kAttnAxes[] = {{CrAttnAxis::regions, "regions"}, {CrAttnAxis::slots, "slots"}};
inline constexpr EnumName<ThresholdRule> kThresholdRules[] = {{ThresholdRule::youden, "youden"},
                                                             {ThresholdRule::f1max, "f1max"}};
inline constexpr EnumName<Monitor> kMonitors[] = {{Monitor::auc, "auc"}, {Monitor::loss, "loss"}};
inline constexpr EnumName<Locality> kLocalities[] = {{Locality::none, "none"},
                                                    {Locality::contiguous_run, "contiguous_run"},
                                                    {Locality::two_type_window, "two_type_window"}};

}  // namespace config_detail

#define R2T_COUNT_KEY(NAME, FIELD)                                                           \
    Key{NAME, [](const RunConfig& c) { return config_detail::show(c.FIELD); },               \
        [](RunConfig& c, const std::string& v) { c.FIELD = config_detail::parse_count(NAME, v); }}
#define R2T_REAL_KEY(NAME, FIELD)                                                            \
    Key{NAME, [](const RunConfig& c) { return config_detail::show(c.FIELD); },               \
        [](RunConfig& c, const std::string& v) { c.FIELD = config_detail::parse_real(NAME, v); }}
#define R2T_BOOL_KEY(NAME, FIELD)                                                            \
    Key{NAME, [](const RunConfig& c) { return config_detail::show(c.FIELD); },               \
        [](RunConfig& c, const std::string& v) { c.FIELD = config_detail::parse_bool(NAME, v); }}
#define R2T_ENUM_KEY(NAME, FIELD, TABLE)                                                     \
    Key{NAME, [](const RunConfig& c) { return config_detail::enum_name(c.FIELD, TABLE); },   \
        [](RunConfig& c, const std::string& v) { c.FIELD = config_detail::parse_enum(NAME, v, TABLE); }}

inline const std::vector<RunConfig::Key>& RunConfig::keys() {
    using namespace config_detail;
    static const std::vector<Key> table = {
        // re-embedding block
        R2T_COUNT_KEY("L", model.r2t.regions_per_side),
        R2T_COUNT_KEY("D", model.r2t.dim),
        R2T_COUNT_KEY("N_head", model.r2t.heads),
        R2T_COUNT_KEY("epeg_k", model.r2t.epeg_k),
        R2T_ENUM_KEY("epeg_variant", model.r2t.epeg_variant, kEpegVariants),
        R2T_BOOL_KEY("use_epeg", model.r2t.use_epeg),
        R2T_BOOL_KEY("use_crmsa", model.r2t.use_crmsa),
        R2T_COUNT_KEY("K", model.r2t.slots),
        R2T_COUNT_KEY("n_blocks", model.r2t.n_blocks),
        R2T_BOOL_KEY("use_ffn", model.r2t.use_ffn),
        R2T_BOOL_KEY("mask_padding", model.r2t.mask_padding),
        R2T_BOOL_KEY("rezero_pad", model.r2t.rezero_pad),
        R2T_ENUM_KEY("crmsa_attn_axis", model.r2t.crmsa_attn_axis, kAttnAxes),
        R2T_BOOL_KEY("scale_full_d", model.r2t.scale_full_d),
        // MIL head
        R2T_COUNT_KEY("head_hidden", model.head.hidden),
        R2T_BOOL_KEY("gated", model.head.gated),
        // training
        R2T_REAL_KEY("lr", train.lr),
        R2T_REAL_KEY("weight_decay", train.weight_decay),
        R2T_COUNT_KEY("epochs", train.epochs),
        R2T_COUNT_KEY("patience", train.patience),
        Key{"seed", [](const RunConfig& c) { return show_u64(c.train.seed); },
            [](RunConfig& c, const std::string& v) {
                c.train.seed = parse_u64("seed", v);
                c.synth.seed = c.train.seed;
            }},
        R2T_ENUM_KEY("threshold_rule", train.threshold_rule, kThresholdRules),
        R2T_ENUM_KEY("monitor", train.monitor, kMonitors),
        R2T_COUNT_KEY("k_folds", k_folds),
        // synthetic data
        R2T_COUNT_KEY("n_bags", synth.n_bags),
        R2T_COUNT_KEY("instances_min", synth.instances_min),
        R2T_COUNT_KEY("instances_max", synth.instances_max),
        R2T_COUNT_KEY("feature_dim", synth.dim),
        R2T_REAL_KEY("witness_ratio", synth.witness_ratio),
        R2T_REAL_KEY("shift", synth.shift),
        R2T_ENUM_KEY("locality", synth.locality, kLocalities),
        R2T_COUNT_KEY("window", synth.window),
    };
    return table;
}

#undef R2T_COUNT_KEY
#undef R2T_REAL_KEY
#undef R2T_BOOL_KEY
#undef R2T_ENUM_KEY

inline bool RunConfig::has_key(const std::string& key) const {
    for (const auto& k : keys())
        if (k.name == key) return true;
    return false;
}

inline void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& k : keys())
        if (k.name == key) return k.set(*this, config_detail::trim(value));
    throw ConfigError("unknown config key '" + key + "'");
}

inline std::string RunConfig::get(const std::string& key) const {
    for (const auto& k : keys())
        if (k.name == key) return k.get(*this);
    throw ConfigError("unknown config key '" + key + "'");
}

inline void RunConfig::parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        set(config_detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

inline void RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    parse(ss.str(), path.string());
}

inline std::string RunConfig::dump() const {
    std::string out;
    for (const auto& k : keys()) out += k.name + " = " + k.get(*this) + "\n";
    return out;
}

inline void RunConfig::write(const std::filesystem::path& path) const {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << dump();
}

inline void RunConfig::validate() const {
    const auto fail = [](const std::string& key, const std::string& why) {
        throw ConfigError("config key '" + key + "': " + why);
    };
    const auto& r = model.r2t;
    if (r.dim == 0) fail("D", "must be >= 1");
    if (r.heads == 0 || r.dim % r.heads != 0) fail("N_head", "must divide D");
    if (r.epeg_k % 2 == 0) fail("epeg_k", "must be odd");
    if (r.regions_per_side == 0) fail("L", "must be >= 1");
    if (r.slots == 0) fail("K", "must be >= 1");
    if (model.head.hidden == 0) fail("head_hidden", "must be >= 1");
    if (!(train.lr >= 0.0) || !std::isfinite(train.lr)) fail("lr", "must be finite and >= 0");
    if (!(train.weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
    if (train.epochs == 0) fail("epochs", "must be >= 1");
    if (train.patience == 0 || train.patience > train.epochs) fail("patience", "must be in [1, epochs]");
    if (k_folds < 2) fail("k_folds", "must be >= 2");
    if (synth.n_bags == 0) fail("n_bags", "must be >= 1");
    if (synth.instances_min == 0) fail("instances_min", "must be >= 1");
    if (synth.instances_min > synth.instances_max) fail("instances_max", "must be >= instances_min");
    if (synth.dim == 0) fail("feature_dim", "must be >= 1");
    if (!(synth.witness_ratio > 0.0 && synth.witness_ratio <= 1.0)) fail("witness_ratio", "must be in (0, 1]");
    if (!std::isfinite(synth.shift)) fail("shift", "must be finite");
    if (synth.locality == Locality::two_type_window) {
        if (synth.window == 0) fail("window", "must be >= 1");
        if (synth.dim < 2) fail("feature_dim", "two_type_window needs feature_dim >= 2");
    }
}

}  // namespace r2t
