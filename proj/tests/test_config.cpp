#include <gtest/gtest.h>

#include "csiloc/config.hpp"
#include "csiloc/error.hpp"

using namespace csiloc;
using nlohmann::json;

TEST(Config, DefaultsMatchLibraryDefaults) {
  const auto c = default_run_config();
  EXPECT_FALSE(c.seed.has_value());
  EXPECT_EQ(c.scenario.aps.size(), 2u);
  EXPECT_EQ(c.scenario.locations.size(), 48u);
  EXPECT_EQ(c.packets_per_rp, 500u);
  EXPECT_EQ(c.packets_per_tp, 100u);
  EXPECT_EQ(c.denoise.psi, 0.9);
  EXPECT_EQ(c.denoise.chi, 125.0);
  EXPECT_EQ(c.denoise.spike_threshold, 2000.0);
  EXPECT_EQ(c.k_min, 2u);
  EXPECT_EQ(c.k_max, 15u);
  EXPECT_EQ(c.unwrap, UnwrapMode::cumulative);
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_EQ(c.train.max_epochs, 200u);
  EXPECT_EQ(c.train.early_stop_patience, 15u);
  EXPECT_EQ(c.draws, 10u);
  EXPECT_EQ(c.bench_iterations, 1000u);
}

TEST(Config, EmptyObjectEqualsDefaults) {
  const auto a = parse_run_config(json::object());
  const auto b = default_run_config();
  EXPECT_EQ(a.effective, b.effective);
  EXPECT_EQ(config_checksum(a), config_checksum(b));
}

TEST(Config, UnknownKeysAreNamed) {
  try {
    parse_run_config(json{{"synth", {{"bogus", 1}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("synth"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config(json{{"extra", true}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"train", {{"lr", 0.1}}}}), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(parse_run_config(json{{"preprocess", {{"unwrap", "fancy"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"preprocess", {{"k_min", 1}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"preprocess", {{"psi", 1.5}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"train", {{"optimizer", "rmsprop"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"bench", {{"iterations", 50}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"seed", -3}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"synth", {{"spike_factor_range", {1.5, 3.0}}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"synth", {{"noise_std", "loud"}}}}), ConfigError);
}

TEST(Config, SeedRequiredOnlyWhenAsked) {
  auto c = default_run_config();
  EXPECT_THROW(c.require_seed("synth"), ConfigError);
  set_seed(c, 77);
  EXPECT_EQ(c.require_seed("synth"), 77u);
  EXPECT_EQ(c.scenario.seed, 77u);
  EXPECT_EQ(c.train.seed, 77u);
  EXPECT_EQ(parse_run_config(json{{"seed", 5}}).require_seed("x"), 5u);
}

TEST(Config, ChecksumTracksSettingsButNotThreads) {
  const auto base = parse_run_config(json{{"seed", 1}});
  const auto threads = parse_run_config(json{{"seed", 1}, {"threads", 1}});
  const auto other = parse_run_config(json{{"seed", 2}});
  const auto tweak = parse_run_config(json{{"seed", 1}, {"train", {{"batch_size", 32}}}});
  EXPECT_EQ(config_checksum(base), config_checksum(threads));
  EXPECT_NE(config_checksum(base), config_checksum(other));
  EXPECT_NE(config_checksum(base), config_checksum(tweak));
  EXPECT_EQ(config_checksum(base).size(), 64u);
}

TEST(Config, EffectiveJsonRoundTrips) {
  const auto a = parse_run_config(json{{"seed", 9}, {"synth", {{"grid", {{"cols", 4}, {"rows", 2}, {"tps_per_ap", 2}}}}}});
  const auto b = parse_run_config(a.effective);
  EXPECT_EQ(a.effective, b.effective);
  EXPECT_EQ(b.scenario.locations.size(), a.scenario.locations.size());
}

TEST(Config, ExplicitLayout) {
  const json j = json::parse(R"({
    "seed": 3,
    "synth": {
      "layout": "explicit",
      "aps": [{"id": "a", "x": 0, "y": 0}],
      "locations": [
        {"id": "r1", "role": "reference", "x": 1, "y": 1, "ap_id": "a"},
        {"id": "r2", "x": 3, "y": 1, "ap_id": "a",
         "patterns": [{"probability": 1.0, "paths": [{"gain": 1.0, "delay_ns": 0.0}]}]},
        {"id": "t1", "role": "test", "x": 1, "y": 1, "ap_id": "a"}
      ]
    }
  })");
  const auto c = parse_run_config(j);
  ASSERT_EQ(c.scenario.locations.size(), 3u);
  EXPECT_EQ(c.scenario.locations[2].role, LocationRole::test);
  EXPECT_EQ(c.scenario.locations[1].patterns.size(), 1u);
  EXPECT_EQ(parse_run_config(c.effective).effective, c.effective);

  json bad = j;
  bad["synth"]["locations"][0]["role"] = "visitor";
  EXPECT_THROW(parse_run_config(bad), ConfigError);
  json mixed = j;
  mixed["synth"]["layout"] = "grid";
  EXPECT_THROW(parse_run_config(mixed), ConfigError);
}
