#include <gtest/gtest.h>

#include <map>

#include "r2tmil/config.hpp"

using namespace r2t;

namespace {

// One non-default value per key.
const std::map<std::string, std::string>& alternates() {
    static const std::map<std::string, std::string> m = {
        {"L", "4"},           {"D", "96"},
        {"N_head", "4"},      {"epeg_k", "7"},
        {"epeg_variant", "value"}, {"use_epeg", "false"},
        {"use_crmsa", "false"}, {"K", "5"},
        {"n_blocks", "2"},    {"use_ffn", "true"},
        {"mask_padding", "true"}, {"rezero_pad", "false"},
        {"crmsa_attn_axis", "slots"}, {"scale_full_d", "true"},
        {"head_hidden", "32"}, {"gated", "false"},
        {"lr", "0.00125"},    {"weight_decay", "0.5"},
        {"epochs", "17"},     {"patience", "3"},
        {"seed", "18446744073709551615"}, {"threshold_rule", "f1max"},
        {"monitor", "loss"},  {"k_folds", "7"},
        {"n_bags", "33"},     {"instances_min", "5"},
        {"instances_max", "9"}, {"feature_dim", "12"},
        {"witness_ratio", "0.35"}, {"shift", "-1.5"},
        {"locality", "two_type_window"}, {"window", "3"},
    };
    return m;
}

}  // namespace

TEST(RunConfig, EveryKeyHasAnAlternateValue) {
    for (const auto& k : RunConfig::keys()) EXPECT_TRUE(alternates().count(k.name)) << k.name;
    EXPECT_EQ(alternates().size(), RunConfig::keys().size());
}

TEST(RunConfig, EveryKeyRoundTripsThroughDump) {
    const RunConfig defaults;
    for (const auto& [key, value] : alternates()) {
        RunConfig cfg;
        ASSERT_NE(defaults.get(key), value) << key << " alternate equals its default";
        cfg.set(key, value);
        EXPECT_EQ(cfg.get(key), value) << key;
        RunConfig back;
        back.parse(cfg.dump());
        EXPECT_EQ(back.dump(), cfg.dump()) << key;
        EXPECT_EQ(back.get(key), value) << key;
    }
}

TEST(RunConfig, KeysReachTheirFields) {
    RunConfig cfg;
    for (const auto& [key, value] : alternates()) cfg.set(key, value);
    EXPECT_EQ(cfg.model.r2t.regions_per_side, 4u);
    EXPECT_EQ(cfg.model.r2t.dim, 96u);
    EXPECT_EQ(cfg.model.r2t.epeg_variant, EpegVariant::value);
    EXPECT_FALSE(cfg.model.r2t.rezero_pad);
    EXPECT_EQ(cfg.model.r2t.crmsa_attn_axis, CrAttnAxis::slots);
    EXPECT_FALSE(cfg.model.head.gated);
    EXPECT_EQ(cfg.train.lr, 0.00125);
    EXPECT_EQ(cfg.train.seed, 18446744073709551615ULL);
    EXPECT_EQ(cfg.synth.seed, cfg.train.seed);
    EXPECT_EQ(cfg.train.monitor, Monitor::loss);
    EXPECT_EQ(cfg.synth.locality, Locality::two_type_window);
    EXPECT_EQ(cfg.synth.shift, -1.5);
    EXPECT_EQ(cfg.k_folds, 7u);
}

TEST(RunConfig, ParseCommentsAndWhitespace) {
    RunConfig cfg;
    cfg.parse("# header\n\n  lr = 0.01   # trailing\nuse_ffn=true\r\n");
    EXPECT_EQ(cfg.train.lr, 0.01);
    EXPECT_TRUE(cfg.model.r2t.use_ffn);
}

TEST(RunConfig, UnknownKeyAndBadValuesRejected) {
    RunConfig cfg;
    try {
        cfg.parse("bogus = 1\n");
        FAIL() << "expected an error";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("'bogus'"), std::string::npos);
    }
    EXPECT_THROW(cfg.parse("lr 0.1\n"), ConfigError);
    EXPECT_THROW(cfg.set("epochs", "-3"), ConfigError);
    EXPECT_THROW(cfg.set("epochs", "3.5"), ConfigError);
    EXPECT_THROW(cfg.set("use_epeg", "maybe"), ConfigError);
    EXPECT_THROW(cfg.set("locality", "global"), ConfigError);
    EXPECT_THROW(cfg.set("lr", "fast"), ConfigError);
}

TEST(RunConfig, ValidateNamesTheKey) {
    const auto message_for = [](const std::string& key, const std::string& value) {
        RunConfig cfg;
        cfg.set(key, value);
        try {
            cfg.validate();
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message_for("witness_ratio", "0").find("witness_ratio"), std::string::npos);
    EXPECT_NE(message_for("N_head", "7").find("N_head"), std::string::npos);
    EXPECT_NE(message_for("epeg_k", "4").find("epeg_k"), std::string::npos);
    EXPECT_NE(message_for("patience", "500").find("patience"), std::string::npos);
    EXPECT_NE(message_for("k_folds", "1").find("k_folds"), std::string::npos);
    EXPECT_EQ(message_for("lr", "0"), "");
    EXPECT_EQ(message_for("n_blocks", "0"), "");
}

TEST(RunConfig, DefaultsValidate) {
    EXPECT_NO_THROW(RunConfig{}.validate());
    const RunConfig cfg;
    EXPECT_EQ(cfg.get("lr"), "0.0002");
    EXPECT_EQ(cfg.get("L"), "8");
    EXPECT_EQ(cfg.get("epeg_k"), "15");
}
