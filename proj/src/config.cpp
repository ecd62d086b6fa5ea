#include "csiloc/config.hpp"

#include <fstream>
#include <set>
#include <thread>

#include "csiloc/checksum.hpp"
#include "csiloc/error.hpp"

namespace csiloc {
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& context) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

void read_range(const json& j, const char* key, double& lo, double& hi, const std::string& context) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError(context + "." + key + ": expected [min, max]");
  }
  lo = v[0].get<double>();
  hi = v[1].get<double>();
}

synth::PathComponent parse_path(const json& j, const std::string& ctx) {
  reject_unknown(j, {"gain", "delay_ns", "phase_offset_rad"}, ctx);
  synth::PathComponent p;
  read(j, "gain", p.gain, ctx);
  read(j, "delay_ns", p.delay_ns, ctx);
  read(j, "phase_offset_rad", p.phase_offset_rad, ctx);
  return p;
}

void parse_explicit_layout(const json& j, synth::SynthScenario& s, const std::string& ctx) {
  if (!j.contains("aps") || !j.contains("locations")) throw ConfigError(ctx + ": explicit layout needs aps and locations");
  s.aps.clear();
  s.locations.clear();
  for (const auto& a : j.at("aps")) {
    reject_unknown(a, {"id", "x", "y"}, ctx + ".aps[]");
    synth::SynthAp ap;
    read(a, "id", ap.id, ctx + ".aps[]");
    read(a, "x", ap.x, ctx + ".aps[]");
    read(a, "y", ap.y, ctx + ".aps[]");
    s.aps.push_back(ap);
  }
  for (const auto& l : j.at("locations")) {
    const auto lctx = ctx + ".locations[]";
    reject_unknown(l, {"id", "role", "x", "y", "ap_id", "patterns"}, lctx);
    synth::SynthLocation loc;
    read(l, "id", loc.id, lctx);
    std::string role = "reference";
    read(l, "role", role, lctx);
    try {
      loc.role = parse_role(role);
    } catch (const FormatError& e) {
      throw ConfigError(lctx + ": " + e.what());
    }
    read(l, "x", loc.x, lctx);
    read(l, "y", loc.y, lctx);
    read(l, "ap_id", loc.ap_id, lctx);
    if (l.contains("patterns")) {
      for (const auto& p : l.at("patterns")) {
        reject_unknown(p, {"probability", "paths"}, lctx + ".patterns[]");
        synth::PatternDefinition def;
        read(p, "probability", def.probability, lctx + ".patterns[]");
        if (p.contains("paths")) {
          for (const auto& c : p.at("paths")) def.paths.push_back(parse_path(c, lctx + ".patterns[].paths[]"));
        }
        loc.patterns.push_back(std::move(def));
      }
    }
    s.locations.push_back(std::move(loc));
  }
}

json scenario_json(const RunConfig& c, const std::string& layout, const synth::GridLayout& grid) {
  const auto& s = c.scenario;
  json j = {{"layout", layout},
            {"packets_per_rp", c.packets_per_rp},
            {"packets_per_tp", c.packets_per_tp},
            {"csi_scale", s.csi_scale},
            {"noise_std", s.noise_std},
            {"spike_probability", s.spike_probability},
            {"spike_factor_range", {s.spike_factor_min, s.spike_factor_max}},
            {"agc_gain_range", {s.agc_min, s.agc_max}},
            {"rssi", {{"reference_dbm", s.rssi.reference_dbm}, {"exponent", s.rssi.exponent}, {"jitter_db", s.rssi.jitter_db}}},
            {"patterns_per_location", s.patterns_per_location},
            {"paths_per_pattern", s.paths_per_pattern},
            {"pattern_probabilities", s.pattern_probabilities},
            {"max_excess_delay_ns", s.max_excess_delay_ns}};
  if (layout == "grid") {
    j["grid"] = {{"cols", grid.cols}, {"rows", grid.rows}, {"spacing_m", grid.spacing_m}, {"aps", grid.aps},
                 {"tps_per_ap", grid.tps_per_ap}};
  } else {
    json aps = json::array();
    for (const auto& a : s.aps) aps.push_back({{"id", a.id}, {"x", a.x}, {"y", a.y}});
    json locs = json::array();
    for (const auto& l : s.locations) {
      json pats = json::array();
      for (const auto& p : l.patterns) {
        json paths = json::array();
        for (const auto& c2 : p.paths) {
          paths.push_back({{"gain", c2.gain}, {"delay_ns", c2.delay_ns}, {"phase_offset_rad", c2.phase_offset_rad}});
        }
        pats.push_back({{"probability", p.probability}, {"paths", paths}});
      }
      locs.push_back({{"id", l.id}, {"role", to_string(l.role)}, {"x", l.x}, {"y", l.y}, {"ap_id", l.ap_id}, {"patterns", pats}});
    }
    j["aps"] = aps;
    j["locations"] = locs;
  }
  return j;
}

std::string unwrap_name(UnwrapMode m) { return m == UnwrapMode::cumulative ? "cumulative" : "single_step"; }
std::string optimizer_name(nn::OptimizerKind k) { return k == nn::OptimizerKind::adam ? "adam" : "sgd"; }

}  // namespace

std::uint64_t RunConfig::require_seed(const std::string& command) const {
  if (!seed) throw ConfigError(command + ": a seed is required (config key 'seed' or --seed)");
  return *seed;
}

std::size_t RunConfig::worker_threads() const {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

json default_config_json() {
  RunConfig c;
  c.effective = json::object();
  const synth::GridLayout grid;
  synth::apply_grid_layout(c.scenario, grid);
  return {{"threads", c.threads},
          {"synth", scenario_json(c, "grid", grid)},
          {"preprocess",
           {{"spike_threshold", c.denoise.spike_threshold},
            {"psi", c.denoise.psi},
            {"chi", c.denoise.chi},
            {"k_min", c.k_min},
            {"k_max", c.k_max},
            {"unwrap", unwrap_name(c.unwrap)}}},
          {"train",
           {{"batch_size", c.train.batch_size},
            {"max_epochs", c.train.max_epochs},
            {"learning_rate", c.train.learning_rate},
            {"optimizer", optimizer_name(c.train.optimizer)},
            {"beta1", c.train.beta1},
            {"beta2", c.train.beta2},
            {"epsilon", c.train.epsilon},
            {"early_stop_patience", c.train.early_stop_patience},
            {"val_fraction", c.train.val_fraction}}},
          {"evaluate", {{"draws", c.draws}}},
          {"bench", {{"iterations", c.bench_iterations}, {"warmup", c.bench_warmup}}}};
}

RunConfig parse_run_config(const json& root) {
  reject_unknown(root, {"seed", "threads", "synth", "preprocess", "train", "evaluate", "bench"}, "config");
  RunConfig c;
  if (root.contains("seed")) {
    const auto& v = root.at("seed");
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) throw ConfigError("config.seed: expected a non-negative integer");
    c.seed = root.at("seed").get<std::uint64_t>();
  }
  read(root, "threads", c.threads, "config");

  std::string layout = "grid";
  synth::GridLayout grid;
  if (root.contains("synth")) {
    const auto& j = root.at("synth");
    const std::string ctx = "config.synth";
    reject_unknown(j,
                   {"layout", "grid", "aps", "locations", "packets_per_rp", "packets_per_tp", "csi_scale", "noise_std",
                    "spike_probability", "spike_factor_range", "agc_gain_range", "rssi", "patterns_per_location",
                    "paths_per_pattern", "pattern_probabilities", "max_excess_delay_ns"},
                   ctx);
    read(j, "layout", layout, ctx);
    if (layout != "grid" && layout != "explicit") throw ConfigError(ctx + ".layout: expected 'grid' or 'explicit'");
    if (layout == "grid" && (j.contains("aps") || j.contains("locations"))) {
      throw ConfigError(ctx + ": aps/locations require layout 'explicit'");
    }
    if (j.contains("grid")) {
      if (layout != "grid") throw ConfigError(ctx + ".grid: only valid with layout 'grid'");
      const auto& g = j.at("grid");
      reject_unknown(g, {"cols", "rows", "spacing_m", "aps", "tps_per_ap"}, ctx + ".grid");
      read(g, "cols", grid.cols, ctx + ".grid");
      read(g, "rows", grid.rows, ctx + ".grid");
      read(g, "spacing_m", grid.spacing_m, ctx + ".grid");
      read(g, "aps", grid.aps, ctx + ".grid");
      read(g, "tps_per_ap", grid.tps_per_ap, ctx + ".grid");
    }
    read(j, "packets_per_rp", c.packets_per_rp, ctx);
    read(j, "packets_per_tp", c.packets_per_tp, ctx);
    auto& s = c.scenario;
    read(j, "csi_scale", s.csi_scale, ctx);
    read(j, "noise_std", s.noise_std, ctx);
    read(j, "spike_probability", s.spike_probability, ctx);
    read_range(j, "spike_factor_range", s.spike_factor_min, s.spike_factor_max, ctx);
    read_range(j, "agc_gain_range", s.agc_min, s.agc_max, ctx);
    if (j.contains("rssi")) {
      const auto& r = j.at("rssi");
      reject_unknown(r, {"reference_dbm", "exponent", "jitter_db"}, ctx + ".rssi");
      read(r, "reference_dbm", s.rssi.reference_dbm, ctx + ".rssi");
      read(r, "exponent", s.rssi.exponent, ctx + ".rssi");
      read(r, "jitter_db", s.rssi.jitter_db, ctx + ".rssi");
    }
    read(j, "patterns_per_location", s.patterns_per_location, ctx);
    read(j, "paths_per_pattern", s.paths_per_pattern, ctx);
    read(j, "pattern_probabilities", s.pattern_probabilities, ctx);
    read(j, "max_excess_delay_ns", s.max_excess_delay_ns, ctx);
    if (layout == "explicit") parse_explicit_layout(j, s, ctx);
  }
  if (layout == "grid") synth::apply_grid_layout(c.scenario, grid);

  if (root.contains("preprocess")) {
    const auto& j = root.at("preprocess");
    const std::string ctx = "config.preprocess";
    reject_unknown(j, {"spike_threshold", "psi", "chi", "k_min", "k_max", "unwrap"}, ctx);
    read(j, "spike_threshold", c.denoise.spike_threshold, ctx);
    read(j, "psi", c.denoise.psi, ctx);
    read(j, "chi", c.denoise.chi, ctx);
    read(j, "k_min", c.k_min, ctx);
    read(j, "k_max", c.k_max, ctx);
    std::string unwrap = "cumulative";
    read(j, "unwrap", unwrap, ctx);
    if (unwrap == "cumulative") {
      c.unwrap = UnwrapMode::cumulative;
    } else if (unwrap == "single_step") {
      c.unwrap = UnwrapMode::single_step;
    } else {
      throw ConfigError(ctx + ".unwrap: expected 'cumulative' or 'single_step'");
    }
  }
  c.denoise.validate();
  if (c.k_min < 2 || c.k_max < c.k_min) throw ConfigError("config.preprocess: need 2 <= k_min <= k_max");
  c.scenario.spike_threshold = c.denoise.spike_threshold;

  if (root.contains("train")) {
    const auto& j = root.at("train");
    const std::string ctx = "config.train";
    reject_unknown(j,
                   {"batch_size", "max_epochs", "learning_rate", "optimizer", "beta1", "beta2", "epsilon",
                    "early_stop_patience", "val_fraction"},
                   ctx);
    read(j, "batch_size", c.train.batch_size, ctx);
    read(j, "max_epochs", c.train.max_epochs, ctx);
    read(j, "learning_rate", c.train.learning_rate, ctx);
    std::string opt = "adam";
    read(j, "optimizer", opt, ctx);
    if (opt == "adam") {
      c.train.optimizer = nn::OptimizerKind::adam;
    } else if (opt == "sgd") {
      c.train.optimizer = nn::OptimizerKind::sgd;
    } else {
      throw ConfigError(ctx + ".optimizer: expected 'adam' or 'sgd'");
    }
    read(j, "beta1", c.train.beta1, ctx);
    read(j, "beta2", c.train.beta2, ctx);
    read(j, "epsilon", c.train.epsilon, ctx);
    read(j, "early_stop_patience", c.train.early_stop_patience, ctx);
    read(j, "val_fraction", c.train.val_fraction, ctx);
  }
  c.train.validate();

  if (root.contains("evaluate")) {
    reject_unknown(root.at("evaluate"), {"draws"}, "config.evaluate");
    read(root.at("evaluate"), "draws", c.draws, "config.evaluate");
  }
  if (c.draws == 0) throw ConfigError("config.evaluate.draws must be > 0");
  if (root.contains("bench")) {
    reject_unknown(root.at("bench"), {"iterations", "warmup"}, "config.bench");
    read(root.at("bench"), "iterations", c.bench_iterations, "config.bench");
    read(root.at("bench"), "warmup", c.bench_warmup, "config.bench");
  }
  if (c.bench_iterations < 100) throw ConfigError("config.bench.iterations must be >= 100");

  c.scenario.seed = c.seed.value_or(0);
  c.scenario.validate();

  c.effective = {{"threads", c.threads},
                 {"synth", scenario_json(c, layout, grid)},
                 {"preprocess",
                  {{"spike_threshold", c.denoise.spike_threshold},
                   {"psi", c.denoise.psi},
                   {"chi", c.denoise.chi},
                   {"k_min", c.k_min},
                   {"k_max", c.k_max},
                   {"unwrap", unwrap_name(c.unwrap)}}},
                 {"train",
                  {{"batch_size", c.train.batch_size},
                   {"max_epochs", c.train.max_epochs},
                   {"learning_rate", c.train.learning_rate},
                   {"optimizer", optimizer_name(c.train.optimizer)},
                   {"beta1", c.train.beta1},
                   {"beta2", c.train.beta2},
                   {"epsilon", c.train.epsilon},
                   {"early_stop_patience", c.train.early_stop_patience},
                   {"val_fraction", c.train.val_fraction}}},
                 {"evaluate", {{"draws", c.draws}}},
                 {"bench", {{"iterations", c.bench_iterations}, {"warmup", c.bench_warmup}}}};
  if (c.seed) set_seed(c, *c.seed);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(root);
}

RunConfig default_run_config() { return parse_run_config(json::object()); }

void set_seed(RunConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.scenario.seed = seed;
  config.train.seed = seed;
  config.effective["seed"] = seed;
}

std::string config_checksum(const RunConfig& config) {
  // The thread count never changes results, so it is not part of the identity.
  auto identity = config.effective;
  identity.erase("threads");
  return sha256_hex(identity.dump());
}

}  // namespace csiloc
