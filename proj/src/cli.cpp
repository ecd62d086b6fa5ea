#include "csiloc/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "csiloc/binary_io.hpp"
#include "csiloc/checksum.hpp"
#include "csiloc/config.hpp"
#include "csiloc/dataset.hpp"
#include "csiloc/error.hpp"
#include "csiloc/eval.hpp"
#include "csiloc/nn.hpp"
#include "csiloc/parallel.hpp"
#include "csiloc/preprocess.hpp"
#include "csiloc/rng.hpp"
#include "csiloc/synth.hpp"
#include "json.hpp"

namespace csiloc::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

inline constexpr const char* kAuditFile = "audit.jsonl";

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool single_thread = false;
};

RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig config = opts.config_path.empty() ? default_run_config() : load_run_config(opts.config_path);
  if (opts.seed) set_seed(config, *opts.seed);
  if (opts.single_thread) config.threads = 1;
  return config;
}

void require_directory(const fs::path& dir, const std::string& what) {
  if (!fs::is_directory(dir)) throw DatasetError(what + " directory not found: " + dir.string());
}

std::string model_file_name(const std::string& ap_id) { return "model_" + ap_id + ".csim"; }

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOptions& opts, const fs::path& out_dir, std::ostream& out) {
  auto config = resolve_config(opts);
  config.require_seed("synth");
  auto data = synth::generate_radio_map(config.scenario, config.packets_per_rp, config.packets_per_tp,
                                        config.worker_threads());
  data.map.metadata["config_sha256"] = config_checksum(config);
  fs::create_directories(out_dir);
  const auto manifest = save_radio_map(data.map, out_dir);
  synth::save_ground_truth(data.truth, out_dir);
  for (const auto& e : manifest.locations) {
    out << e.id << '\t' << to_string(e.role) << '\t' << e.ap_id << '\t' << e.packet_count << '\n';
  }
  out << "wrote " << manifest.locations.size() << " locations to " << out_dir.string()
      << "\ndataset_sha256 " << dataset_checksum(out_dir) << '\n';
  return kOk;
}

json audit_record(const ProcessedLocation& loc, const LocationAudit& a) {
  json clusters = json::array();
  for (const auto& c : a.clusters) {
    clusters.push_back({{"cluster", c.cluster_id}, {"size", c.size}, {"after_cc", c.after_cc}, {"after_rmse", c.after_rmse}});
  }
  return {{"location", loc.id},
          {"role", to_string(loc.role)},
          {"ap_id", loc.ap_id},
          {"input_packets", a.input_packets},
          {"spikes_removed", a.spikes_removed},
          {"spike_sequences", a.spike_sequences},
          {"denoised", a.denoised},
          {"k", a.k},
          {"silhouette", a.silhouette},
          {"clusters", clusters},
          {"dropped_patterns", a.dropped_patterns},
          {"median_rssi_dbm", a.median_rssi_dbm},
          {"scale_factor", a.scale_factor},
          {"output_packets", a.output_packets}};
}

int cmd_preprocess(const CommonOptions& opts, const fs::path& in_dir, const fs::path& out_dir, std::ostream& out) {
  auto config = resolve_config(opts);
  const auto seed = config.require_seed("preprocess");
  require_directory(in_dir, "dataset");
  const auto map = load_radio_map(in_dir);

  FeatureSet set;
  set.aps = map.aps;
  set.source_checksum = dataset_checksum(in_dir);
  set.config_checksum = config_checksum(config);
  set.locations.resize(map.locations.size());
  std::vector<LocationAudit> audits(map.locations.size());

  parallel_for(map.locations.size(), config.worker_threads(), [&](std::size_t i, std::size_t) {
    const auto& loc = map.locations[i];
    PipelineOptions po;
    po.denoise = config.denoise;
    po.k_min = config.k_min;
    po.k_max = config.k_max;
    po.seed = derive_key({seed, fnv1a64(loc.id)});
    po.unwrap = config.unwrap;
    po.denoise_patterns = loc.role == LocationRole::reference;
    LocationResult r;
    try {
      r = preprocess_location(loc.packets, po);
    } catch (const std::exception& e) {
      throw DatasetError("location '" + loc.id + "', " + e.what());
    }
    if (loc.role == LocationRole::reference && r.features.empty()) {
      throw DatasetError("location '" + loc.id + "', stage 'denoising': no packets retained");
    }
    auto& p = set.locations[i];
    p.id = loc.id;
    p.role = loc.role;
    p.x = loc.x;
    p.y = loc.y;
    p.ap_id = loc.ap_id;
    p.scale_factor = r.audit.scale_factor;
    p.features = std::move(r.features);
    audits[i] = std::move(r.audit);
  });

  fs::create_directories(out_dir);
  save_feature_set(set, out_dir);
  std::ofstream audit(out_dir / kAuditFile, std::ios::binary);
  if (!audit) throw DatasetError("cannot write " + (out_dir / kAuditFile).string());
  audit << json{{"record", "provenance"},
                {"seed", seed},
                {"dataset_sha256", set.source_checksum},
                {"config_sha256", set.config_checksum}}
               .dump()
        << '\n';
  for (std::size_t i = 0; i < audits.size(); ++i) {
    auto rec = audit_record(set.locations[i], audits[i]);
    rec["record"] = "location";
    audit << rec.dump() << '\n';
    out << set.locations[i].id << "\tk=" << audits[i].k << "\tspikes=" << audits[i].spikes_removed
        << "\tkept=" << audits[i].output_packets << "/" << audits[i].input_packets << "\tS=" << audits[i].scale_factor
        << '\n';
  }
  if (!audit) throw DatasetError("failed writing audit log");
  return kOk;
}

std::vector<nn::TrainingSet> training_sets(const FeatureSet& set) {
  std::vector<nn::TrainingSet> sets;
  for (const auto& ap : set.aps) {
    nn::TrainingSet ts;
    ts.ap_id = ap.id;
    for (const auto& loc : set.locations) {
      if (loc.role != LocationRole::reference || loc.ap_id != ap.id) continue;
      ts.rps.push_back({{loc.id, loc.x, loc.y}, loc.features});
    }
    if (!ts.rps.empty()) sets.push_back(std::move(ts));
  }
  return sets;
}

int cmd_train(const CommonOptions& opts, const fs::path& in_dir, const fs::path& out_dir, std::ostream& out,
              std::ostream& err) {
  auto config = resolve_config(opts);
  const auto seed = config.require_seed("train");
  require_directory(in_dir, "processed feature");
  const auto set = load_feature_set(in_dir);
  const auto sets = training_sets(set);
  if (sets.empty()) throw DatasetError("no reference locations in " + in_dir.string());

  const json provenance = {{"seed", seed},
                           {"dataset_sha256", set.source_checksum},
                           {"features_config_sha256", set.config_checksum},
                           {"config_sha256", config_checksum(config)}};
  fs::create_directories(out_dir);
  for (const auto& ts : sets) {
    auto tc = config.train;
    tc.seed = derive_key({seed, fnv1a64(ts.ap_id)});
    tc.threads = config.worker_threads();
    auto result = nn::train(ts, tc);
    for (const auto& w : result.warnings) err << "warning: " << ts.ap_id << ": " << w << '\n';
    result.model.provenance = provenance.dump();
    nn::save_model(result.model, out_dir / model_file_name(ts.ap_id));

    std::ofstream hist(out_dir / ("history_" + ts.ap_id + ".tsv"), std::ios::binary);
    hist << "# seed=" << seed << "\n# dataset_sha256=" << set.source_checksum
         << "\n# config_sha256=" << provenance["config_sha256"].get<std::string>() << '\n'
         << "epoch\ttrain_loss\tval_loss\tval_accuracy\n";
    hist.precision(17);
    for (const auto& e : result.history) {
      hist << e.epoch << '\t' << e.train_loss << '\t' << e.val_loss << '\t' << e.val_accuracy << '\n';
    }
    const auto& best = result.history.at(result.best_epoch - 1);
    out << ts.ap_id << "\tclasses=" << ts.rps.size() << "\tepochs=" << result.history.size()
        << "\tbest_epoch=" << best.epoch << "\tval_accuracy=" << best.val_accuracy << '\n';
  }
  return kOk;
}

std::map<std::string, nn::ModelBundle> load_models(const fs::path& dir, const std::vector<ApRecord>& aps) {
  require_directory(dir, "model");
  std::map<std::string, nn::ModelBundle> models;
  for (const auto& ap : aps) {
    const auto path = dir / model_file_name(ap.id);
    if (fs::exists(path)) models.emplace(ap.id, nn::load_model(path));
  }
  return models;
}

int cmd_evaluate(const CommonOptions& opts, const fs::path& in_dir, const fs::path& model_dir, const fs::path& out_dir,
                 std::ostream& out) {
  auto config = resolve_config(opts);
  const auto seed = config.require_seed("evaluate");
  require_directory(in_dir, "processed feature");
  const auto set = load_feature_set(in_dir);
  const auto models = load_models(model_dir, set.aps);

  std::vector<eval::TestPoint> tps;
  for (const auto& loc : set.locations) {
    if (loc.role != LocationRole::test) continue;
    tps.push_back({loc.id, loc.ap_id, {loc.x, loc.y}, loc.features});
  }
  if (tps.empty()) throw DatasetError("no test locations in " + in_dir.string());
  for (const auto& tp : tps) {
    if (!models.count(tp.ap_id)) {
      throw ConfigError("no model for AP '" + tp.ap_id + "' in " + model_dir.string() + " (expected " +
                        model_file_name(tp.ap_id) + ")");
    }
  }
  const auto report = eval::evaluate(models, tps, config.draws, seed, config.worker_threads());
  eval::export_report(report, {seed, set.source_checksum, config_checksum(config)}, out_dir);

  for (const auto& [ap, s] : report.per_ap) {
    out << ap << "\tmean_error_m=" << s.mean_error_m << "\thit_rate=" << s.hit_rate << '\n';
  }
  out << "overall\tmean_error_m=" << report.overall_mean_m << "\thit_rate=" << report.overall_hit_rate
      << "\tdraws=" << report.draw_count << '\n';
  return kOk;
}

std::string provenance_field(const nn::ModelBundle& model, const char* key) {
  try {
    const auto j = json::parse(model.provenance);
    if (j.contains(key)) return j.at(key).is_string() ? j.at(key).get<std::string>() : j.at(key).dump();
  } catch (const json::exception&) {
  }
  return "unknown";
}

int cmd_predict(const CommonOptions& opts, const fs::path& model_path, const fs::path& packet_path, std::size_t index,
                std::ostream& out) {
  const auto config = resolve_config(opts);
  const auto model = nn::load_model(model_path);
  const auto bytes = io::read_file(packet_path);
  const auto packets = decode_packets(bytes, packet_path.string());
  if (index >= packets.size()) {
    throw DatasetError(packet_path.string() + ": packet index " + std::to_string(index) + " out of range (" +
                       std::to_string(packets.size()) + " packets)");
  }
  const auto p = nn::predict_packet(model, packets[index], config.denoise, config.unwrap);
  out.precision(17);
  out << p.rp_id << '\t' << p.x << '\t' << p.y << '\t' << p.probability << '\n';
  return kOk;
}

int cmd_bench(const CommonOptions& opts, const fs::path& model_path, const fs::path& out_path, std::ostream& out) {
  const auto config = resolve_config(opts);
  const auto model = nn::load_model(model_path);
  const auto report = eval::latency_bench(model, config.bench_iterations, config.bench_warmup);
  eval::Provenance prov;
  prov.seed = config.seed.value_or(0);
  prov.dataset_checksum = provenance_field(model, "dataset_sha256");
  prov.config_checksum = config_checksum(config);
  if (!out_path.empty()) {
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    eval::write_latency_report(report, prov, out_path);
  }
  out << "iterations " << report.iterations << "\nmean_ms " << report.mean_ms << "\np50_ms " << report.p50_ms
      << "\np99_ms " << report.p99_ms << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CSI fingerprinting localization pipeline", "csiloc"};
  app.require_subcommand(1);

  CommonOptions common;
  std::uint64_t seed_value = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_value, "seed override");
    sub->add_flag("--single-thread", common.single_thread, "force serial execution");
  };

  std::string in_dir, out_dir, model_dir, model_path, packet_path;
  std::size_t packet_index = 0;

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic radio map");
  add_common(synth_cmd);
  synth_cmd->add_option("--out", out_dir, "output dataset directory")->required();

  auto* pre_cmd = app.add_subcommand("preprocess", "spike removal, clustering, denoising and calibration");
  add_common(pre_cmd);
  pre_cmd->add_option("--in", in_dir, "dataset directory")->required();
  pre_cmd->add_option("--out", out_dir, "processed feature directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train one classifier per AP");
  add_common(train_cmd);
  train_cmd->add_option("--in", in_dir, "processed feature directory")->required();
  train_cmd->add_option("--out", out_dir, "model directory")->required();

  auto* predict_cmd = app.add_subcommand("predict", "classify one raw packet");
  add_common(predict_cmd);
  predict_cmd->add_option("--model", model_path, "model file")->required();
  predict_cmd->add_option("--packet", packet_path, "packet file (.csi)")->required();
  predict_cmd->add_option("--index", packet_index, "record index within the packet file");

  auto* eval_cmd = app.add_subcommand("evaluate", "score the test points");
  add_common(eval_cmd);
  eval_cmd->add_option("--in", in_dir, "processed feature directory")->required();
  eval_cmd->add_option("--models", model_dir, "model directory")->required();
  eval_cmd->add_option("--out", out_dir, "report directory")->required();

  auto* bench_cmd = app.add_subcommand("bench", "single-sample inference latency");
  add_common(bench_cmd);
  bench_cmd->add_option("--model", model_path, "model file")->required();
  bench_cmd->add_option("--out", out_dir, "latency report file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed")) common.seed = seed_value;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(common, out_dir, out);
    if (pre_cmd->parsed()) return cmd_preprocess(common, in_dir, out_dir, out);
    if (train_cmd->parsed()) return cmd_train(common, in_dir, out_dir, out, err);
    if (predict_cmd->parsed()) return cmd_predict(common, model_path, packet_path, packet_index, out);
    if (eval_cmd->parsed()) return cmd_evaluate(common, in_dir, model_dir, out_dir, out);
    if (bench_cmd->parsed()) return cmd_bench(common, model_path, out_dir, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const RejectedSample& e) {
    err << "rejected sample: " << e.what() << '\n';
    return kRejectedSample;
  } catch (const DatasetError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ValidationError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace csiloc::cli
