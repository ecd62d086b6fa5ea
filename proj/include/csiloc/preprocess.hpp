#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csiloc/csi_core.hpp"

namespace csiloc {

struct DenoiseConfig {
  double spike_threshold = 2000.0;
  double psi = 0.9;    // minimum Pearson correlation with the pattern mean
  double chi = 125.0;  // maximum RMSE against the pattern mean

  void validate() const;
};

// ---------------------------------------------------------------------------
// Spike removal

struct SpikeFilterResult {
  std::vector<FeatureVector> retained;
  std::vector<std::size_t> retained_indices;  // original positions, ascending
  std::vector<std::size_t> removed_indices;
};

bool has_spike(const FeatureVector& fv, double threshold);

/// Drops every packet with any magnitude entry above `threshold`.
SpikeFilterResult remove_abnormal(std::span<const FeatureVector> packets, double threshold);

// ---------------------------------------------------------------------------
// Clustering

using Sample = std::vector<double>;

std::vector<Sample> magnitude_samples(std::span<const FeatureVector> packets);

struct KMeansResult {
  std::vector<std::size_t> assignments;
  std::vector<Sample> centroids;
  int iterations = 0;
  bool converged = false;
};

inline constexpr int kKMeansIterationCap = 300;

/// Lloyd's algorithm with farthest-point seeding: the first centre is drawn
/// with `seed`, each further centre is the point farthest from the centres
/// chosen so far. Stops when assignments no longer change.
KMeansResult kmeans(std::span<const Sample> data, std::size_t k, std::uint64_t seed,
                    int max_iterations = kKMeansIterationCap);

/// Averaged silhouette variant: mean over clusters of
/// (D_inter - D_intra_i) / max(D_intra_i, D_inter), where D_intra_i is the
/// mean pairwise distance inside cluster i and D_inter the mean pairwise
/// distance between cluster centroids. A singleton cluster contributes 0.
/// Throws DegenerateClustering when a cluster is empty.
double silhouette_score(std::span<const Sample> data, std::span<const std::size_t> assignments, std::size_t k);

struct ClusterSelection {
  std::size_t k = 0;
  double score = 0.0;
  std::map<std::size_t, double> per_k_scores;
  KMeansResult clustering;  // clustering at the selected k
};

inline constexpr std::size_t kDefaultKMin = 2;
inline constexpr std::size_t kDefaultKMax = 15;

/// Scores every k in [k_min, k_max] and keeps the best; scores equal within
/// 1e-12 resolve toward the smaller k.
ClusterSelection select_cluster_count(std::span<const Sample> data, std::size_t k_min, std::size_t k_max,
                                      std::uint64_t seed);

struct PacketBudget {
  std::size_t packets = 0;
  std::size_t k = 0;
  bool stabilized = false;
  std::vector<std::pair<std::size_t, std::size_t>> trace;  // (packets consumed, selected k)
};

/// Yields the next packet, or nullopt once the stream is exhausted.
using PacketStream = std::function<std::optional<FeatureVector>()>;

/// Grows the working set `window` packets at a time and re-selects the
/// cluster count after each step. Stops once k is unchanged across one full
/// additional window. `initial_packets` lets a survey carry the budget of a
/// previous location forward (0 means start at one window).
PacketBudget determine_packet_budget(const PacketStream& stream, std::size_t window, std::uint64_t seed,
                                     std::size_t k_min = kDefaultKMin, std::size_t k_max = kDefaultKMax,
                                     std::size_t initial_packets = 0);

// ---------------------------------------------------------------------------
// Pattern-wise denoising

struct PatternCluster {
  std::size_t cluster_id = 0;
  std::vector<std::size_t> member_indices;
  std::array<double, kFeatureLength> mean_sequence{};
};

/// Pearson correlation; 0 when either sequence has zero variance.
double correlation_coefficient(std::span<const double> a, std::span<const double> b);
double rmse(std::span<const double> a, std::span<const double> b);

std::array<double, kFeatureLength> mean_magnitude(std::span<const FeatureVector> packets);

struct DenoiseResult {
  std::vector<FeatureVector> retained;
  std::vector<std::size_t> retained_indices;  // positions within the cluster input
  std::vector<std::size_t> removed_indices;
  std::size_t removed_by_cc = 0;
  std::size_t removed_by_rmse = 0;
  std::array<double, kFeatureLength> mean_sequence{};
  bool pattern_dropped = false;  // every packet was removed
};

/// Stage 1: mean sequence; stage 2: drop CC < psi; stage 3: drop RMSE > chi.
DenoiseResult denoise_pattern(std::span<const FeatureVector> cluster_packets, const DenoiseConfig& config);

/// Re-applies stages 2 and 3 against a fixed mean sequence.
std::vector<std::size_t> filter_against_mean(std::span<const FeatureVector> packets,
                                             const std::array<double, kFeatureLength>& mean_sequence,
                                             const DenoiseConfig& config);

// ---------------------------------------------------------------------------
// RSSI calibration

/// Lower median (element at (n-1)/2 after sorting). Throws on empty input.
double lower_median(std::span<const double> values);

/// Amplitude scale factor sqrt(10^(rssi/10)).
double rssi_scale_factor(double rssi_dbm);

/// Multiplies real and imaginary parts of every packet by the scale factor of
/// the median RSSI.
std::vector<CsiPacket> calibrate(std::span<const CsiPacket> packets, std::span<const double> rssi_values);

// ---------------------------------------------------------------------------
// Per-location pipeline

struct ClusterAudit {
  std::size_t cluster_id = 0;
  std::size_t size = 0;
  std::size_t after_cc = 0;
  std::size_t after_rmse = 0;
};

struct LocationAudit {
  std::size_t input_packets = 0;
  std::size_t spikes_removed = 0;
  std::vector<std::uint32_t> spike_sequences;
  bool denoised = false;
  std::size_t k = 0;
  double silhouette = 0.0;
  std::vector<ClusterAudit> clusters;
  std::size_t dropped_patterns = 0;
  double scale_factor = 1.0;
  double median_rssi_dbm = 0.0;
  std::size_t output_packets = 0;
};

struct PipelineOptions {
  DenoiseConfig denoise;
  std::size_t k_min = kDefaultKMin;
  std::size_t k_max = kDefaultKMax;
  std::uint64_t seed = 0;
  UnwrapMode unwrap = UnwrapMode::cumulative;
  /// Reference points run the full pipeline; test points skip denoising.
  bool denoise_patterns = true;
};

struct LocationResult {
  std::vector<FeatureVector> features;  // calibrated, in input order
  LocationAudit audit;
};

/// Spike removal -> clustering -> denoising -> calibration for one location.
/// The RSSI median is taken over every received packet.
LocationResult preprocess_location(std::span<const CsiPacket> packets, const PipelineOptions& options);

}  // namespace csiloc
