#pragma once

// Synthetic multipath CSI generator. Every packet is a deterministic function
// of (scenario seed, location id, packet index), so locations can be
// generated in any order, or in parallel, with identical results.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csiloc/csi_core.hpp"
#include "csiloc/dataset.hpp"

namespace csiloc::synth {

inline constexpr double kSubcarrierSpacingHz = 312.5e3;
inline constexpr double kSpeedOfLight = 299'792'458.0;

struct PathComponent {
  double gain = 1.0;  // linear amplitude
  double delay_ns = 0.0;
  double phase_offset_rad = 0.0;
};

struct PatternDefinition {
  double probability = 1.0;
  std::vector<PathComponent> paths;
};

struct SynthAp {
  std::string id;
  double x = 0.0;
  double y = 0.0;
};

struct SynthLocation {
  std::string id;
  LocationRole role = LocationRole::reference;
  double x = 0.0;
  double y = 0.0;
  std::string ap_id;
  /// Empty means "derive from the scenario's pattern parameters". Derived
  /// patterns depend only on (seed, AP, coordinates), so co-located points
  /// share them.
  std::vector<PatternDefinition> patterns;
};

/// RSSI = reference_dbm - 10 * exponent * log10(d / 1 m) + N(0, jitter_db^2).
struct RssiModel {
  double reference_dbm = -30.0;
  double exponent = 3.0;
  double jitter_db = 2.0;
};

struct SynthScenario {
  std::uint64_t seed = 0;
  std::vector<SynthAp> aps;
  std::vector<SynthLocation> locations;

  /// Reported CSI = csi_scale * agc * H / rms(H) + noise, i.e. the receiver
  /// AGC normalises each pattern to a common level.
  double csi_scale = 400.0;
  /// Total standard deviation of the circular complex Gaussian noise.
  double noise_std = 10.0;
  double spike_probability = 0.01;
  /// Spikes are injected above spike_factor_min * spike_threshold.
  double spike_threshold = 2000.0;
  double spike_factor_min = 2.2;
  double spike_factor_max = 4.0;
  double agc_min = 0.99;
  double agc_max = 1.01;
  RssiModel rssi;

  // Derived-pattern parameters.
  std::size_t patterns_per_location = 4;
  std::size_t paths_per_pattern = 5;
  std::vector<double> pattern_probabilities;  // empty means uniform
  double max_excess_delay_ns = 300.0;

  std::int64_t start_timestamp_us = 1'600'000'000'000'000;
  std::int64_t packet_interval_us = 100'000;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  const SynthAp& ap(const std::string& id) const;
};

/// Default desk scenario: 8 x 4 RP grid with 2 m spacing split between two
/// APs (16 RPs each), plus 8 TPs per AP placed on RP coordinates.
SynthScenario desk_scenario(std::uint64_t seed);

struct GridLayout {
  std::size_t cols = 8;
  std::size_t rows = 4;
  double spacing_m = 2.0;
  std::size_t aps = 2;
  std::size_t tps_per_ap = 8;
};
/// Grid of RPs split column-wise between `aps` APs; TPs sit on a
/// checkerboard subset of each AP's RPs.
void apply_grid_layout(SynthScenario& scenario, const GridLayout& grid);

/// Patterns of a location: the explicit list, or the derived one.
std::vector<PatternDefinition> location_patterns(const SynthScenario& scenario, std::size_t location_index);

/// Channel frequency response sum_p gain_p * exp(-j 2 pi f_k delay_p + j phase_p)
/// at frequency index k (f_k = k * 312.5 kHz).
ComplexValue channel_response(const std::vector<PathComponent>& paths, int frequency_index);

struct SynthPacket {
  CsiPacket packet;
  std::size_t pattern = 0;
  bool spiked = false;
  double agc = 1.0;
};

SynthPacket generate_packet(const SynthScenario& scenario, std::size_t location_index, std::uint32_t packet_index);

struct LocationTruth {
  std::string id;
  std::size_t pattern_count = 0;
  std::vector<std::size_t> packet_patterns;     // one entry per packet
  std::vector<std::uint32_t> spiked_sequences;  // sequence numbers with an injected spike
};

struct GroundTruth {
  std::uint64_t seed = 0;
  std::vector<LocationTruth> locations;

  const LocationTruth* find(const std::string& id) const;
};

struct SynthDataset {
  RadioMap map;
  GroundTruth truth;
};

SynthDataset generate_radio_map(const SynthScenario& scenario, std::size_t packets_per_rp, std::size_t packets_per_tp,
                                std::size_t threads = 1);

inline constexpr const char* kGroundTruthFile = "truth.json";
void save_ground_truth(const GroundTruth& truth, const std::filesystem::path& directory);
GroundTruth load_ground_truth(const std::filesystem::path& directory);

}  // namespace csiloc::synth
