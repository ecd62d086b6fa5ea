#include "csiloc/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csiloc/dataset.hpp"
#include "csiloc/error.hpp"
#include "csiloc/parallel.hpp"
#include "csiloc/rng.hpp"

namespace csiloc::eval {
namespace fs = std::filesystem;

namespace {

constexpr double kHitToleranceM = 1e-3;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_header(std::ostream& out, const Provenance& p) {
  out << "# seed=" << p.seed << "\n";
  out << "# dataset_sha256=" << p.dataset_checksum << "\n";
  out << "# config_sha256=" << p.config_checksum << "\n";
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

ApSummary summarize(std::vector<double> errors, std::size_t hits) {
  ApSummary s;
  std::sort(errors.begin(), errors.end());
  s.errors_m = std::move(errors);
  const auto n = s.errors_m.size();
  if (n == 0) return s;
  double sum = 0.0;
  for (double e : s.errors_m) sum += e;
  s.mean_error_m = sum / static_cast<double>(n);
  s.hit_rate = static_cast<double>(hits) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 < n && s.errors_m[i + 1] == s.errors_m[i]) continue;
    s.cdf_points.emplace_back(s.errors_m[i], static_cast<double>(i + 1) / static_cast<double>(n));
  }
  return s;
}

}  // namespace

double distance_error(Coordinates predicted, Coordinates truth) {
  return std::hypot(predicted.x - truth.x, predicted.y - truth.y);
}

EvaluationReport aggregate(std::vector<DrawRecord> records) {
  EvaluationReport report;
  std::map<std::string, std::vector<double>> errors;
  std::map<std::string, std::size_t> hits;
  double total = 0.0;
  std::size_t total_hits = 0;
  for (const auto& r : records) {
    errors[r.ap_id].push_back(r.error_m);
    const bool hit = r.error_m <= kHitToleranceM;
    hits[r.ap_id] += hit ? 1 : 0;
    total_hits += hit ? 1 : 0;
    total += r.error_m;
  }
  for (auto& [ap, errs] : errors) report.per_ap[ap] = summarize(std::move(errs), hits[ap]);
  report.draw_count = records.size();
  if (!records.empty()) {
    report.overall_mean_m = total / static_cast<double>(records.size());
    report.overall_hit_rate = static_cast<double>(total_hits) / static_cast<double>(records.size());
  }
  report.records = std::move(records);
  return report;
}

double cdf_at(const ApSummary& summary, double x) {
  double value = 0.0;
  for (const auto& [e, f] : summary.cdf_points) {
    if (e > x) break;
    value = f;
  }
  return value;
}

EvaluationReport evaluate(const Predictor& predictor, std::span<const TestPoint> tps, std::size_t draws,
                          std::uint64_t seed, std::size_t threads) {
  std::vector<std::vector<DrawRecord>> per_tp(tps.size());
  parallel_for(tps.size(), threads, [&](std::size_t i, std::size_t) {
    const auto& tp = tps[i];
    const auto picks = draw_test_samples(tp.samples.size(), draws, derive_key({seed, fnv1a64(tp.id)}));
    for (std::size_t d = 0; d < picks.size(); ++d) {
      const auto pred = predictor(tp.ap_id, tp.samples[picks[d]]);
      DrawRecord r;
      r.tp_id = tp.id;
      r.ap_id = tp.ap_id;
      r.draw = d;
      r.sample_index = picks[d];
      r.predicted_rp = pred.rp_id;
      r.predicted = {pred.x, pred.y};
      r.truth = tp.truth;
      r.probability = pred.probability;
      r.error_m = distance_error(r.predicted, r.truth);
      per_tp[i].push_back(std::move(r));
    }
  });
  std::vector<DrawRecord> records;
  for (auto& v : per_tp) {
    for (auto& r : v) records.push_back(std::move(r));
  }
  return aggregate(std::move(records));
}

EvaluationReport evaluate(const std::map<std::string, nn::ModelBundle>& models, std::span<const TestPoint> tps,
                          std::size_t draws, std::uint64_t seed, std::size_t threads) {
  for (const auto& tp : tps) {
    if (!models.count(tp.ap_id)) throw ConfigError("evaluate: no model for AP '" + tp.ap_id + "' (TP " + tp.id + ")");
  }
  const Predictor predictor = [&](const std::string& ap, const FeatureVector& fv) {
    return nn::predict(models.at(ap), fv);
  };
  return evaluate(predictor, tps, draws, seed, threads);
}

LatencyReport latency_bench(const nn::ModelBundle& model, std::size_t iterations, std::size_t warmup) {
  if (iterations < 100) throw InvalidArgument("latency_bench: at least 100 iterations required");
  using clock = std::chrono::steady_clock;

  // Probe input: a deterministic pseudo-random feature vector.
  FeatureVector probe;
  CounterRng rng{0x62656E6368ULL};
  for (std::size_t i = 0; i < kFeatureLength; ++i) {
    probe.magnitude[i] = model.norm.mean[0] + model.norm.stddev[0] * rng.gaussian();
    probe.phase_rad[i] = model.norm.mean[1] + model.norm.stddev[1] * rng.gaussian();
  }

  volatile double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) sink = sink + nn::predict(model, probe).probability;

  std::vector<double> ms(iterations);
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = clock::now();
    sink = sink + nn::predict(model, probe).probability;
    const auto t1 = clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }

  LatencyReport r;
  r.iterations = iterations;
  double sum = 0.0;
  for (double v : ms) sum += v;
  r.mean_ms = sum / static_cast<double>(iterations);
  std::sort(ms.begin(), ms.end());
  // Nearest-rank percentiles.
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(iterations)));
    return ms[std::clamp<std::size_t>(k, 1, iterations) - 1];
  };
  r.p50_ms = rank(0.50);
  r.p99_ms = rank(0.99);
  return r;
}

std::vector<fs::path> export_report(const EvaluationReport& report, const Provenance& provenance,
                                    const fs::path& directory) {
  fs::create_directories(directory);
  std::vector<fs::path> written;

  const auto summary_path = directory / "summary.tsv";
  {
    auto out = open_out(summary_path);
    write_header(out, provenance);
    out << "ap_id\tdraws\tmean_error_m\thit_rate\n";
    for (const auto& [ap, s] : report.per_ap) {
      out << ap << '\t' << s.errors_m.size() << '\t' << fmt_double(s.mean_error_m) << '\t' << fmt_double(s.hit_rate)
          << '\n';
    }
    out << "overall\t" << report.draw_count << '\t' << fmt_double(report.overall_mean_m) << '\t'
        << fmt_double(report.overall_hit_rate) << '\n';
  }
  written.push_back(summary_path);

  for (const auto& [ap, s] : report.per_ap) {
    const auto path = directory / ("cdf_" + ap + ".tsv");
    auto out = open_out(path);
    write_header(out, provenance);
    out << "error_m\tcumulative_fraction\n";
    for (const auto& [e, f] : s.cdf_points) out << fmt_double(e) << '\t' << fmt_double(f) << '\n';
    written.push_back(path);
  }

  const auto draws_path = directory / "draws.tsv";
  {
    auto out = open_out(draws_path);
    write_header(out, provenance);
    out << "tp_id\tap_id\tdraw\tsample_index\tpredicted_rp\tpredicted_x\tpredicted_y\ttrue_x\ttrue_y\tprobability\terror_m\n";
    for (const auto& r : report.records) {
      out << r.tp_id << '\t' << r.ap_id << '\t' << r.draw << '\t' << r.sample_index << '\t' << r.predicted_rp << '\t'
          << fmt_double(r.predicted.x) << '\t' << fmt_double(r.predicted.y) << '\t' << fmt_double(r.truth.x) << '\t'
          << fmt_double(r.truth.y) << '\t' << fmt_double(r.probability) << '\t' << fmt_double(r.error_m) << '\n';
    }
  }
  written.push_back(draws_path);
  return written;
}

std::vector<std::pair<double, double>> read_cdf_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::pair<double, double>> points;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "error_m\tcumulative_fraction") throw FormatError(path.string() + ": unexpected header");
      header_seen = true;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ": malformed row");
    points.emplace_back(std::strtod(line.substr(0, tab).c_str(), nullptr), std::strtod(line.substr(tab + 1).c_str(), nullptr));
  }
  return points;
}

void write_latency_report(const LatencyReport& report, const Provenance& provenance, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto out = open_out(path);
  write_header(out, provenance);
  out << "iterations\tmean_ms\tp50_ms\tp99_ms\n";
  out << report.iterations << '\t' << fmt_double(report.mean_ms) << '\t' << fmt_double(report.p50_ms) << '\t'
      << fmt_double(report.p99_ms) << '\n';
}

}  // namespace csiloc::eval
