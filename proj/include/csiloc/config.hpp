#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "csiloc/nn.hpp"
#include "csiloc/preprocess.hpp"
#include "csiloc/synth.hpp"
#include "json.hpp"

namespace csiloc {

/// Everything a command needs, parsed from one JSON config file. Every field
/// has a default (see default_config_json) except the seed; unknown keys are
/// rejected.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;  // 0 = hardware concurrency

  synth::SynthScenario scenario;  // seed filled in from `seed`
  std::size_t packets_per_rp = 500;
  std::size_t packets_per_tp = 100;

  DenoiseConfig denoise;
  std::size_t k_min = kDefaultKMin;
  std::size_t k_max = kDefaultKMax;
  UnwrapMode unwrap = UnwrapMode::cumulative;

  nn::TrainConfig train;

  std::size_t draws = 10;
  std::size_t bench_iterations = 1000;
  std::size_t bench_warmup = 100;

  /// Effective configuration (defaults applied) in canonical form.
  nlohmann::json effective;

  std::uint64_t require_seed(const std::string& command) const;
  std::size_t worker_threads() const;
};

nlohmann::json default_config_json();

/// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig parse_run_config(const nlohmann::json& root);
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig default_run_config();

/// Applies a seed override and refreshes the derived fields.
void set_seed(RunConfig& config, std::uint64_t seed);

/// SHA-256 of the canonical effective configuration.
std::string config_checksum(const RunConfig& config);

}  // namespace csiloc
