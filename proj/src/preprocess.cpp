#include "csiloc/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "csiloc/error.hpp"
#include "csiloc/rng.hpp"

namespace csiloc {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double distance(std::span<const double> a, std::span<const double> b) { return std::sqrt(squared_distance(a, b)); }

void check_dimensions(std::span<const Sample> data) {
  if (data.empty()) return;
  const auto dim = data.front().size();
  for (const auto& s : data) {
    if (s.size() != dim) throw InvalidArgument("clustering: samples have inconsistent dimension");
  }
}

std::size_t nearest_centroid(const Sample& point, const std::vector<Sample>& centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(point, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<Sample> farthest_point_seeds(std::span<const Sample> data, std::size_t k, std::uint64_t seed) {
  CounterRng rng{seed, 0x6B6D65616E73ULL};
  const std::size_t n = data.size();
  std::vector<bool> chosen(n, false);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<Sample> centres;
  centres.reserve(k);

  std::size_t next = static_cast<std::size_t>(rng.below(n));
  while (centres.size() < k) {
    chosen[next] = true;
    centres.push_back(data[next]);
    if (centres.size() == k) break;
    double far_d = -1.0;
    std::size_t far = n;
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], squared_distance(data[i], centres.back()));
      if (!chosen[i] && min_d[i] > far_d) {
        far_d = min_d[i];
        far = i;
      }
    }
    next = far;
  }
  return centres;
}

std::vector<Sample> cluster_means(std::span<const Sample> data, std::span<const std::size_t> assignments,
                                  std::size_t k, std::vector<std::size_t>& counts) {
  const std::size_t dim = data.empty() ? 0 : data.front().size();
  std::vector<Sample> means(k, Sample(dim, 0.0));
  counts.assign(k, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& m = means[assignments[i]];
    for (std::size_t d = 0; d < dim; ++d) m[d] += data[i][d];
    ++counts[assignments[i]];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (auto& v : means[c]) v /= static_cast<double>(counts[c]);
  }
  return means;
}

}  // namespace

void DenoiseConfig::validate() const {
  if (!(spike_threshold > 0.0)) throw ConfigError("spike_threshold must be > 0");
  if (!(psi >= -1.0 && psi <= 1.0)) throw ConfigError("psi must lie in [-1, 1]");
  if (!(chi > 0.0)) throw ConfigError("chi must be > 0");
}

bool has_spike(const FeatureVector& fv, double threshold) {
  return std::any_of(fv.magnitude.begin(), fv.magnitude.end(), [&](double m) { return m > threshold; });
}

SpikeFilterResult remove_abnormal(std::span<const FeatureVector> packets, double threshold) {
  if (!(threshold > 0.0)) throw InvalidArgument("spike threshold must be > 0");
  SpikeFilterResult out;
  for (std::size_t i = 0; i < packets.size(); ++i) {
    if (has_spike(packets[i], threshold)) {
      out.removed_indices.push_back(i);
    } else {
      out.retained.push_back(packets[i]);
      out.retained_indices.push_back(i);
    }
  }
  return out;
}

std::vector<Sample> magnitude_samples(std::span<const FeatureVector> packets) {
  std::vector<Sample> out;
  out.reserve(packets.size());
  for (const auto& p : packets) out.emplace_back(p.magnitude.begin(), p.magnitude.end());
  return out;
}

KMeansResult kmeans(std::span<const Sample> data, std::size_t k, std::uint64_t seed, int max_iterations) {
  if (k < 2) throw InvalidArgument("kmeans: k must be >= 2");
  if (k > data.size()) {
    throw InvalidArgument("kmeans: k = " + std::to_string(k) + " exceeds data size " + std::to_string(data.size()));
  }
  check_dimensions(data);

  KMeansResult r;
  r.centroids = farthest_point_seeds(data, k, seed);
  r.assignments.assign(data.size(), k);  // sentinel so the first pass always counts as a change

  std::vector<std::size_t> counts;
  for (r.iterations = 0; r.iterations < max_iterations;) {
    bool changed = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto c = nearest_centroid(data[i], r.centroids);
      if (c != r.assignments[i]) {
        r.assignments[i] = c;
        changed = true;
      }
    }
    ++r.iterations;
    if (!changed) {
      r.converged = true;
      break;
    }
    r.centroids = cluster_means(data, r.assignments, k, counts);

    // An emptied cluster takes over the point farthest from its own centroid.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (counts[r.assignments[i]] <= 1) continue;
        const double d = squared_distance(data[i], r.centroids[r.assignments[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[r.assignments[far]];
      r.assignments[far] = c;
      counts[c] = 1;
      r.centroids = cluster_means(data, r.assignments, k, counts);
    }
  }
  return r;
}

double silhouette_score(std::span<const Sample> data, std::span<const std::size_t> assignments, std::size_t k) {
  if (k < 2) throw InvalidArgument("silhouette_score: k must be >= 2");
  if (assignments.size() != data.size()) throw InvalidArgument("silhouette_score: assignment count mismatch");
  check_dimensions(data);

  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] >= k) throw InvalidArgument("silhouette_score: assignment out of range");
    members[assignments[i]].push_back(i);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (members[c].empty()) throw DegenerateClustering("silhouette_score: cluster " + std::to_string(c) + " is empty");
  }

  std::vector<std::size_t> counts;
  const auto centroids = cluster_means(data, assignments, k, counts);

  double inter_sum = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) inter_sum += distance(centroids[a], centroids[b]);
  }
  const double d_inter = inter_sum / static_cast<double>(k * (k - 1) / 2);

  double total = 0.0;
  for (const auto& m : members) {
    if (m.size() == 1) continue;  // singleton: D_intra undefined, term is 0
    double intra_sum = 0.0;
    for (std::size_t a = 0; a < m.size(); ++a) {
      for (std::size_t b = a + 1; b < m.size(); ++b) intra_sum += distance(data[m[a]], data[m[b]]);
    }
    const double pairs = static_cast<double>(m.size() * (m.size() - 1) / 2);
    const double d_intra = intra_sum / pairs;
    const double denom = std::max(d_intra, d_inter);
    total += denom > 0.0 ? (d_inter - d_intra) / denom : 0.0;
  }
  return total / static_cast<double>(k);
}

ClusterSelection select_cluster_count(std::span<const Sample> data, std::size_t k_min, std::size_t k_max,
                                      std::uint64_t seed) {
  if (k_min < 2 || k_min > k_max || k_max > data.size()) {
    throw InvalidArgument("select_cluster_count: need 2 <= k_min <= k_max <= data size (got " + std::to_string(k_min) +
                          ", " + std::to_string(k_max) + ", " + std::to_string(data.size()) + ")");
  }
  ClusterSelection sel;
  sel.score = -std::numeric_limits<double>::infinity();
  for (std::size_t k = k_min; k <= k_max; ++k) {
    auto clustering = kmeans(data, k, derive_key({seed, k}));
    const double score = silhouette_score(data, clustering.assignments, k);
    sel.per_k_scores[k] = score;
    if (score > sel.score + 1e-12) {
      sel.k = k;
      sel.score = score;
      sel.clustering = std::move(clustering);
    }
  }
  return sel;
}

PacketBudget determine_packet_budget(const PacketStream& stream, std::size_t window, std::uint64_t seed,
                                     std::size_t k_min, std::size_t k_max, std::size_t initial_packets) {
  if (window == 0) throw InvalidArgument("packet budget: window must be > 0");
  PacketBudget out;
  std::vector<Sample> working;
  bool exhausted = false;

  auto consume = [&](std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      auto next = stream();
      if (!next) {
        exhausted = true;
        return;
      }
      working.emplace_back(next->magnitude.begin(), next->magnitude.end());
    }
  };

  consume(initial_packets > 0 ? initial_packets : window);
  std::optional<std::size_t> previous_k;
  while (true) {
    if (working.size() >= k_min) {
      const auto sel = select_cluster_count(working, k_min, std::min(k_max, working.size()), seed);
      out.trace.emplace_back(working.size(), sel.k);
      out.k = sel.k;
      out.packets = working.size();
      if (previous_k && *previous_k == sel.k && !exhausted) {
        out.stabilized = true;
        return out;
      }
      previous_k = sel.k;
    }
    if (exhausted) {
      out.packets = working.size();
      return out;
    }
    const auto before = working.size();
    consume(window);
    if (exhausted && working.size() == before) {
      out.packets = working.size();
      return out;
    }
  }
}

double correlation_coefficient(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("correlation_coefficient: length mismatch");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double rmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("rmse: length mismatch");
  return std::sqrt(squared_distance(a, b) / static_cast<double>(a.size()));
}

std::array<double, kFeatureLength> mean_magnitude(std::span<const FeatureVector> packets) {
  std::array<double, kFeatureLength> mean{};
  if (packets.empty()) return mean;
  for (const auto& p : packets) {
    for (std::size_t i = 0; i < kFeatureLength; ++i) mean[i] += p.magnitude[i];
  }
  for (auto& v : mean) v /= static_cast<double>(packets.size());
  return mean;
}

DenoiseResult denoise_pattern(std::span<const FeatureVector> cluster_packets, const DenoiseConfig& config) {
  if (cluster_packets.empty()) throw InvalidArgument("denoise_pattern: cluster is empty");
  config.validate();

  DenoiseResult r;
  r.mean_sequence = mean_magnitude(cluster_packets);

  std::vector<std::size_t> after_cc;
  for (std::size_t i = 0; i < cluster_packets.size(); ++i) {
    if (correlation_coefficient(cluster_packets[i].magnitude, r.mean_sequence) < config.psi) {
      r.removed_indices.push_back(i);
      ++r.removed_by_cc;
    } else {
      after_cc.push_back(i);
    }
  }
  for (auto i : after_cc) {
    if (rmse(cluster_packets[i].magnitude, r.mean_sequence) > config.chi) {
      r.removed_indices.push_back(i);
      ++r.removed_by_rmse;
    } else {
      r.retained_indices.push_back(i);
      r.retained.push_back(cluster_packets[i]);
    }
  }
  std::sort(r.removed_indices.begin(), r.removed_indices.end());
  r.pattern_dropped = r.retained.empty();
  return r;
}

std::vector<std::size_t> filter_against_mean(std::span<const FeatureVector> packets,
                                             const std::array<double, kFeatureLength>& mean_sequence,
                                             const DenoiseConfig& config) {
  std::vector<std::size_t> removed;
  for (std::size_t i = 0; i < packets.size(); ++i) {
    if (correlation_coefficient(packets[i].magnitude, mean_sequence) < config.psi ||
        rmse(packets[i].magnitude, mean_sequence) > config.chi) {
      removed.push_back(i);
    }
  }
  return removed;
}

double lower_median(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty set");
  std::vector<double> v(values.begin(), values.end());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double rssi_scale_factor(double rssi_dbm) { return std::sqrt(std::pow(10.0, rssi_dbm / 10.0)); }

std::vector<CsiPacket> calibrate(std::span<const CsiPacket> packets, std::span<const double> rssi_values) {
  if (rssi_values.empty()) throw InvalidArgument("calibrate: no RSSI values");
  for (double v : rssi_values) {
    if (!std::isfinite(v)) throw ValidationError("calibrate: non-finite RSSI value");
  }
  const double s = rssi_scale_factor(lower_median(rssi_values));
  std::vector<CsiPacket> out(packets.begin(), packets.end());
  for (auto& p : out) {
    for (auto& v : p.subcarriers) v = ComplexValue(v.real() * s, v.imag() * s);
  }
  return out;
}

namespace {

LocationResult run_pipeline(std::span<const CsiPacket> packets, const PipelineOptions& options, const char*& stage) {
  stage = "configuration";
  options.denoise.validate();
  const auto layout = SubcarrierLayout::ieee80211_20mhz();

  LocationResult result;
  auto& audit = result.audit;
  audit.input_packets = packets.size();
  audit.denoised = options.denoise_patterns;
  if (packets.empty()) return result;

  stage = "extraction";
  std::vector<FeatureVector> features;
  features.reserve(packets.size());
  for (const auto& p : packets) features.push_back(extract_features(p, layout, options.unwrap));

  stage = "spike removal";
  auto spikes = remove_abnormal(features, options.denoise.spike_threshold);
  audit.spikes_removed = spikes.removed_indices.size();
  for (auto i : spikes.removed_indices) audit.spike_sequences.push_back(packets[i].sequence_no);

  // Positions (into `packets`) that survive every stage.
  std::vector<std::size_t> kept;
  const auto& survivors = spikes.retained;
  if (!options.denoise_patterns) {
    kept = spikes.retained_indices;
  } else if (!survivors.empty()) {
    stage = "clustering";
    std::vector<std::vector<std::size_t>> clusters;
    if (survivors.size() >= std::max<std::size_t>(options.k_min, 2)) {
      const auto samples = magnitude_samples(survivors);
      const auto sel = select_cluster_count(samples, options.k_min, std::min(options.k_max, samples.size()),
                                            options.seed);
      audit.k = sel.k;
      audit.silhouette = sel.score;
      clusters.resize(sel.k);
      for (std::size_t i = 0; i < survivors.size(); ++i) clusters[sel.clustering.assignments[i]].push_back(i);
    } else {
      audit.k = 1;
      clusters.emplace_back(survivors.size());
      std::iota(clusters.back().begin(), clusters.back().end(), std::size_t{0});
    }

    stage = "denoising";
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      std::vector<FeatureVector> members;
      members.reserve(clusters[c].size());
      for (auto i : clusters[c]) members.push_back(survivors[i]);
      const auto dn = denoise_pattern(members, options.denoise);
      audit.clusters.push_back({c, members.size(), members.size() - dn.removed_by_cc, dn.retained.size()});
      if (dn.pattern_dropped) ++audit.dropped_patterns;
      for (auto i : dn.retained_indices) kept.push_back(spikes.retained_indices[clusters[c][i]]);
    }
    std::sort(kept.begin(), kept.end());
  }

  stage = "calibration";
  std::vector<double> rssi;
  rssi.reserve(packets.size());
  for (const auto& p : packets) rssi.push_back(p.rssi_dbm);
  audit.median_rssi_dbm = lower_median(rssi);
  audit.scale_factor = rssi_scale_factor(audit.median_rssi_dbm);

  std::vector<CsiPacket> kept_packets;
  kept_packets.reserve(kept.size());
  for (auto i : kept) kept_packets.push_back(packets[i]);
  const auto calibrated = calibrate(kept_packets, rssi);
  result.features.reserve(calibrated.size());
  for (const auto& p : calibrated) result.features.push_back(extract_features(p, layout, options.unwrap));
  audit.output_packets = result.features.size();
  return result;
}

}  // namespace

LocationResult preprocess_location(std::span<const CsiPacket> packets, const PipelineOptions& options) {
  const char* stage = "start";
  try {
    return run_pipeline(packets, options, stage);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw DatasetError(std::string("stage '") + stage + "': " + e.what());
  }
}

}  // namespace csiloc
