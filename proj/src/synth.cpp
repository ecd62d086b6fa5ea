#include "csiloc/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "csiloc/binary_io.hpp"
#include "csiloc/error.hpp"
#include "csiloc/parallel.hpp"
#include "csiloc/rng.hpp"
#include "json.hpp"

namespace csiloc::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

void check_probabilities(const std::vector<double>& p, const std::string& context) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(context + ": pattern probabilities must be >= 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(context + ": pattern probabilities must sum to 1");
}

double ap_distance(const SynthAp& ap, double x, double y) { return std::max(1.0, std::hypot(x - ap.x, y - ap.y)); }

/// Mean power over the extracted, non-DC subcarriers.
double response_rms(const std::vector<PathComponent>& paths) {
  double power = 0.0;
  int n = 0;
  for (int f = -28; f <= 28; ++f) {
    if (f == 0) continue;
    power += std::norm(channel_response(paths, f));
    ++n;
  }
  return std::sqrt(power / n);
}

}  // namespace

void SynthScenario::validate() const {
  std::set<std::string> ap_ids;
  for (const auto& a : aps) {
    if (!ap_ids.insert(a.id).second) throw ConfigError("scenario: duplicate AP id '" + a.id + "'");
  }
  if (locations.empty()) throw ConfigError("scenario: no locations");
  std::set<std::string> ids;
  for (const auto& l : locations) {
    if (!ids.insert(l.id).second) throw ConfigError("scenario: duplicate location id '" + l.id + "'");
    if (!ap_ids.count(l.ap_id)) throw ConfigError("scenario: location " + l.id + " references unknown AP '" + l.ap_id + "'");
    for (const auto& p : l.patterns) {
      if (p.paths.empty()) throw ConfigError("scenario: location " + l.id + " has a pattern without paths");
      for (const auto& c : p.paths) {
        if (!(c.gain >= 0.0) || !std::isfinite(c.gain) || !(c.delay_ns >= 0.0) || !std::isfinite(c.phase_offset_rad)) {
          throw ConfigError("scenario: location " + l.id + " has an invalid path component");
        }
      }
    }
    if (!l.patterns.empty()) {
      std::vector<double> probs;
      for (const auto& p : l.patterns) probs.push_back(p.probability);
      check_probabilities(probs, "scenario: location " + l.id);
    }
  }
  if (!(csi_scale > 0.0)) throw ConfigError("scenario: csi_scale must be > 0");
  if (!(noise_std >= 0.0)) throw ConfigError("scenario: noise_std must be >= 0");
  if (!(spike_probability >= 0.0 && spike_probability < 1.0)) throw ConfigError("scenario: spike_probability must lie in [0, 1)");
  if (!(spike_threshold > 0.0) || !(spike_factor_min > 2.0) || spike_factor_max < spike_factor_min) {
    throw ConfigError("scenario: spike_factor_range must satisfy 2 < min <= max");
  }
  if (!(agc_min > 0.0) || agc_max < agc_min) throw ConfigError("scenario: agc_gain_range must satisfy 0 < min <= max");
  if (!(rssi.exponent >= 0.0) || !(rssi.jitter_db >= 0.0)) throw ConfigError("scenario: invalid rssi model");
  if (patterns_per_location == 0 || paths_per_pattern == 0) throw ConfigError("scenario: pattern counts must be >= 1");
  if (!pattern_probabilities.empty()) {
    if (pattern_probabilities.size() != patterns_per_location) {
      throw ConfigError("scenario: pattern_probabilities must have patterns_per_location entries");
    }
    check_probabilities(pattern_probabilities, "scenario");
  }
  if (!(max_excess_delay_ns > 10.0)) throw ConfigError("scenario: max_excess_delay_ns must exceed 10 ns");
}

const SynthAp& SynthScenario::ap(const std::string& id) const {
  for (const auto& a : aps) {
    if (a.id == id) return a;
  }
  throw ConfigError("scenario: unknown AP '" + id + "'");
}

void apply_grid_layout(SynthScenario& s, const GridLayout& grid) {
  if (grid.cols == 0 || grid.rows == 0 || grid.aps == 0 || grid.cols % grid.aps != 0) {
    throw ConfigError("grid: cols must be a positive multiple of aps");
  }
  if (!(grid.spacing_m > 0.0)) throw ConfigError("grid: spacing_m must be > 0");
  const std::size_t cols_per_ap = grid.cols / grid.aps;
  if (grid.tps_per_ap > cols_per_ap * grid.rows) throw ConfigError("grid: more TPs than RPs per AP");

  s.aps.clear();
  s.locations.clear();
  for (std::size_t a = 0; a < grid.aps; ++a) {
    // Each AP sits one grid step below its block, centred on it.
    const double cx = (static_cast<double>(a * cols_per_ap) + static_cast<double>(cols_per_ap - 1) / 2.0) * grid.spacing_m;
    s.aps.push_back({"ap" + std::to_string(a + 1), cx, -grid.spacing_m});
  }

  char buf[32];
  for (std::size_t c = 0; c < grid.cols; ++c) {
    for (std::size_t r = 0; r < grid.rows; ++r) {
      std::snprintf(buf, sizeof buf, "rp_%02zu_%02zu", c, r);
      s.locations.push_back({buf, LocationRole::reference, static_cast<double>(c) * grid.spacing_m,
                             static_cast<double>(r) * grid.spacing_m, s.aps[c / cols_per_ap].id, {}});
    }
  }

  std::size_t tp_index = 0;
  for (std::size_t a = 0; a < grid.aps; ++a) {
    // Checkerboard cells first, then the remaining cells, until the quota is met.
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (int parity = 0; parity < 2; ++parity) {
      for (std::size_t c = a * cols_per_ap; c < (a + 1) * cols_per_ap; ++c) {
        for (std::size_t r = 0; r < grid.rows; ++r) {
          if (static_cast<int>((c + r) % 2) == parity) cells.emplace_back(c, r);
        }
      }
    }
    for (std::size_t t = 0; t < grid.tps_per_ap; ++t) {
      std::snprintf(buf, sizeof buf, "tp_%02zu", tp_index++);
      s.locations.push_back({buf, LocationRole::test, static_cast<double>(cells[t].first) * grid.spacing_m,
                             static_cast<double>(cells[t].second) * grid.spacing_m, s.aps[a].id, {}});
    }
  }
}

SynthScenario desk_scenario(std::uint64_t seed) {
  SynthScenario s;
  s.seed = seed;
  apply_grid_layout(s, GridLayout{});
  return s;
}

std::vector<PatternDefinition> location_patterns(const SynthScenario& s, std::size_t location_index) {
  const auto& loc = s.locations.at(location_index);
  if (!loc.patterns.empty()) return loc.patterns;

  const auto& ap = s.ap(loc.ap_id);
  const double d = ap_distance(ap, loc.x, loc.y);
  const double los_delay_ns = d / kSpeedOfLight * 1e9;
  const std::uint64_t key = derive_key({s.seed, 0x70617474ULL, fnv1a64(loc.ap_id), std::bit_cast<std::uint64_t>(loc.x),
                                        std::bit_cast<std::uint64_t>(loc.y)});
  CounterRng los_rng{key, 0x6C6F73ULL};
  const double los_phase = los_rng.uniform(-std::numbers::pi, std::numbers::pi);

  std::vector<PatternDefinition> patterns(s.patterns_per_location);
  for (std::size_t j = 0; j < patterns.size(); ++j) {
    auto& p = patterns[j];
    p.probability = s.pattern_probabilities.empty() ? 1.0 / static_cast<double>(patterns.size()) : s.pattern_probabilities[j];
    CounterRng rng{key, j};
    p.paths.push_back({1.0, los_delay_ns, los_phase});
    for (std::size_t k = 1; k < s.paths_per_pattern; ++k) {
      const double gain = rng.uniform(0.3, 0.9);
      const double excess = rng.uniform(10.0, s.max_excess_delay_ns);
      const double phase = rng.uniform(-std::numbers::pi, std::numbers::pi);
      p.paths.push_back({gain, los_delay_ns + excess, phase});
    }
  }
  return patterns;
}

ComplexValue channel_response(const std::vector<PathComponent>& paths, int frequency_index) {
  const double f = frequency_index * kSubcarrierSpacingHz;
  ComplexValue h{0.0, 0.0};
  for (const auto& p : paths) h += std::polar(p.gain, -kTwoPi * f * p.delay_ns * 1e-9 + p.phase_offset_rad);
  return h;
}

SynthPacket generate_packet(const SynthScenario& s, std::size_t location_index, std::uint32_t packet_index) {
  const auto& loc = s.locations.at(location_index);
  const auto patterns = location_patterns(s, location_index);
  const auto layout = SubcarrierLayout::ieee80211_20mhz();
  CounterRng rng{s.seed, 0x706B74ULL, fnv1a64(loc.id), packet_index};

  SynthPacket out;
  const double u = rng.uniform();
  double acc = 0.0;
  out.pattern = patterns.size() - 1;
  for (std::size_t j = 0; j < patterns.size(); ++j) {
    acc += patterns[j].probability;
    if (u < acc) {
      out.pattern = j;
      break;
    }
  }
  const auto& paths = patterns[out.pattern].paths;
  const double rms = response_rms(paths);
  out.agc = rng.uniform(s.agc_min, s.agc_max);
  const double gain = rms > 0.0 ? s.csi_scale * out.agc / rms : 0.0;
  const double sigma = s.noise_std / std::numbers::sqrt2;

  auto& p = out.packet;
  for (std::size_t slot = 0; slot < kSubcarrierCount; ++slot) {
    const int f = SubcarrierLayout::frequency_of(slot);
    ComplexValue v{0.0, 0.0};
    if (layout.kind_at(f) != SubcarrierKind::guard) v = gain * channel_response(paths, f);
    const double nr = rng.gaussian();
    const double ni = rng.gaussian();
    p.subcarriers[slot] = v + ComplexValue(sigma * nr, sigma * ni);
  }

  if (rng.uniform() < s.spike_probability) {
    out.spiked = true;
    auto pos = static_cast<std::size_t>(rng.below(kFeatureLength - 1));
    if (pos >= kDcFeaturePosition) ++pos;
    const double mag = s.spike_threshold * rng.uniform(s.spike_factor_min, s.spike_factor_max);
    p.subcarriers[layout.extraction_slots()[pos]] = std::polar(mag, rng.uniform(-std::numbers::pi, std::numbers::pi));
  }

  const double d = ap_distance(s.ap(loc.ap_id), loc.x, loc.y);
  const double rssi = s.rssi.reference_dbm - 10.0 * s.rssi.exponent * std::log10(d) + s.rssi.jitter_db * rng.gaussian();
  p.rssi_dbm = round_to_float(std::clamp(rssi, -120.0, 0.0));

  // Values are stored as 32-bit floats on disk; quantise now so a saved and
  // reloaded dataset is bitwise identical to the generated one.
  for (auto& v : p.subcarriers) v = ComplexValue(round_to_float(v.real()), round_to_float(v.imag()));
  p.sequence_no = packet_index;
  p.capture_timestamp_us = s.start_timestamp_us + static_cast<std::int64_t>(packet_index) * s.packet_interval_us;
  p.ap_id = loc.ap_id;
  p.location_id = loc.id;
  return out;
}

const LocationTruth* GroundTruth::find(const std::string& id) const {
  for (const auto& l : locations) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

SynthDataset generate_radio_map(const SynthScenario& s, std::size_t packets_per_rp, std::size_t packets_per_tp,
                                std::size_t threads) {
  s.validate();
  SynthDataset out;
  out.truth.seed = s.seed;
  for (const auto& a : s.aps) out.map.aps.push_back({a.id});
  out.map.metadata = {{"generator", "csiloc synth"}, {"seed", std::to_string(s.seed)}};
  out.map.locations.resize(s.locations.size());
  out.truth.locations.resize(s.locations.size());

  parallel_for(s.locations.size(), threads, [&](std::size_t i, std::size_t) {
    const auto& src = s.locations[i];
    auto& loc = out.map.locations[i];
    auto& truth = out.truth.locations[i];
    loc.id = src.id;
    loc.role = src.role;
    loc.x = src.x;
    loc.y = src.y;
    loc.ap_id = src.ap_id;
    truth.id = src.id;
    truth.pattern_count = location_patterns(s, i).size();
    const auto n = src.role == LocationRole::reference ? packets_per_rp : packets_per_tp;
    loc.packets.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      auto sp = generate_packet(s, i, static_cast<std::uint32_t>(k));
      truth.packet_patterns.push_back(sp.pattern);
      if (sp.spiked) truth.spiked_sequences.push_back(sp.packet.sequence_no);
      loc.packets.push_back(std::move(sp.packet));
    }
  });
  return out;
}

void save_ground_truth(const GroundTruth& truth, const std::filesystem::path& directory) {
  nlohmann::json locs = nlohmann::json::array();
  for (const auto& l : truth.locations) {
    locs.push_back({{"id", l.id},
                    {"pattern_count", l.pattern_count},
                    {"packet_patterns", l.packet_patterns},
                    {"spiked_sequences", l.spiked_sequences}});
  }
  const nlohmann::json root = {{"seed", truth.seed}, {"locations", locs}};
  const auto text = root.dump() + "\n";
  std::filesystem::create_directories(directory);
  io::write_file(directory / kGroundTruthFile, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

GroundTruth load_ground_truth(const std::filesystem::path& directory) {
  const auto bytes = io::read_file(directory / kGroundTruthFile);
  GroundTruth truth;
  try {
    const auto root = nlohmann::json::parse(bytes.begin(), bytes.end());
    truth.seed = root.at("seed").get<std::uint64_t>();
    for (const auto& l : root.at("locations")) {
      truth.locations.push_back({l.at("id").get<std::string>(), l.at("pattern_count").get<std::size_t>(),
                                 l.at("packet_patterns").get<std::vector<std::size_t>>(),
                                 l.at("spiked_sequences").get<std::vector<std::uint32_t>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((directory / kGroundTruthFile).string() + ": " + e.what());
  }
  return truth;
}

}  // namespace csiloc::synth
