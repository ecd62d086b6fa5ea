#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csiloc/csi_core.hpp"
#include "csiloc/nn.hpp"

namespace csiloc::eval {

struct Coordinates {
  double x = 0.0;
  double y = 0.0;
};

/// Euclidean distance in the floor plane, meters.
double distance_error(Coordinates predicted, Coordinates truth);

struct TestPoint {
  std::string id;
  std::string ap_id;
  Coordinates truth;
  std::vector<FeatureVector> samples;  // preprocessed online samples
};

/// One prediction of one drawn sample.
struct DrawRecord {
  std::string tp_id;
  std::string ap_id;
  std::size_t draw = 0;
  std::size_t sample_index = 0;
  std::string predicted_rp;
  Coordinates predicted;
  Coordinates truth;
  double probability = 0.0;
  double error_m = 0.0;
};

struct ApSummary {
  double mean_error_m = 0.0;
  std::vector<double> errors_m;  // ascending
  /// (error, fraction of errors <= error) at each distinct error value.
  std::vector<std::pair<double, double>> cdf_points;
  /// Fraction of draws predicted exactly at the TP's coordinates (1 mm).
  double hit_rate = 0.0;
};

struct EvaluationReport {
  std::map<std::string, ApSummary> per_ap;
  double overall_mean_m = 0.0;
  double overall_hit_rate = 0.0;
  std::size_t draw_count = 0;
  std::vector<DrawRecord> records;
};

/// Pure aggregation of per-draw records into per-AP and overall statistics.
EvaluationReport aggregate(std::vector<DrawRecord> records);

/// CDF value at x: (errors <= x) / total, read off the stored points.
double cdf_at(const ApSummary& summary, double x);

using Predictor = std::function<nn::Prediction(const std::string& ap_id, const FeatureVector& sample)>;

/// Draws `draws` samples per TP without replacement and scores each
/// prediction. Draws are keyed by (seed, TP id).
EvaluationReport evaluate(const Predictor& predictor, std::span<const TestPoint> tps, std::size_t draws,
                          std::uint64_t seed, std::size_t threads = 1);

/// Model-backed evaluation. Throws ConfigError if any TP's AP lacks a model.
EvaluationReport evaluate(const std::map<std::string, nn::ModelBundle>& models, std::span<const TestPoint> tps,
                          std::size_t draws, std::uint64_t seed, std::size_t threads = 1);

struct LatencyReport {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p99_ms = 0.0;
  std::size_t iterations = 0;
};

/// Times single-sample inference on one thread after `warmup` untimed runs.
/// Throws InvalidArgument for fewer than 100 iterations.
LatencyReport latency_bench(const nn::ModelBundle& model, std::size_t iterations = 1000, std::size_t warmup = 100);

struct Provenance {
  std::uint64_t seed = 0;
  std::string dataset_checksum;
  std::string config_checksum;
};

/// Writes summary.tsv (one row per AP plus "overall"), cdf_<ap>.tsv per AP and
/// draws.tsv. Each file opens with '#' provenance lines then a header row.
std::vector<std::filesystem::path> export_report(const EvaluationReport& report, const Provenance& provenance,
                                                 const std::filesystem::path& directory);

/// Parses a cdf_<ap>.tsv file back into (error, fraction) points.
std::vector<std::pair<double, double>> read_cdf_file(const std::filesystem::path& path);

void write_latency_report(const LatencyReport& report, const Provenance& provenance, const std::filesystem::path& path);

}  // namespace csiloc::eval
