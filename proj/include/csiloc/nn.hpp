#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csiloc/csi_core.hpp"
#include "csiloc/network.hpp"
#include "csiloc/preprocess.hpp"

namespace csiloc::nn {

/// Per-channel z-score statistics (channel 0 magnitude, channel 1 phase).
struct NormStats {
  std::array<double, kInputChannels> mean{0.0, 0.0};
  std::array<double, kInputChannels> stddev{1.0, 1.0};
};

struct RpLabel {
  std::string rp_id;
  double x = 0.0;
  double y = 0.0;
};

struct ModelBundle {
  std::string ap_id;
  Network<float> network;
  NormStats norm;
  std::vector<RpLabel> labels;  // class index -> RP
  std::string provenance;       // free-form, embedded in the model file

  std::size_t n_classes() const { return network.n_classes(); }
};

/// Parameters of the network for `n_classes` outputs: 10752 + 33 * n_classes.
std::size_t parameter_count(std::size_t n_classes);

/// Deterministically initialised model with identity normalisation and
/// placeholder labels. Throws InvalidArgument for n_classes < 2.
ModelBundle build_model(std::size_t n_classes, std::uint64_t seed);

/// Statistics over every position of each channel. Zero-variance channels
/// keep a unit standard deviation.
NormStats compute_norm_stats(std::span<const FeatureVector> samples);

std::array<float, kInputSize> normalize_input(const NormStats& norm, const FeatureVector& fv);
template <typename T>
std::array<T, kInputSize> to_input(const FeatureVector& fv) {
  std::array<T, kInputSize> out{};
  for (std::size_t i = 0; i < kInputLength; ++i) {
    out[i] = static_cast<T>(fv.magnitude[i]);
    out[kInputLength + i] = static_cast<T>(fv.phase_rad[i]);
  }
  return out;
}

/// Softmax output for an already normalised input. With `dropout_key` set,
/// dropout is applied as in training.
std::vector<float> forward(const ModelBundle& model, std::span<const float> normalized_input,
                           std::optional<std::uint64_t> dropout_key = std::nullopt);

struct LossAndGradients {
  double loss = 0.0;  // mean cross-entropy
  Network<double> gradients;
};

/// Batch loss and gradients in double precision (dropout disabled). Inputs
/// are raw channel-major arrays; labels index classes.
LossAndGradients compute_loss_and_gradients(const Network<double>& net, std::span<const std::array<double, kInputSize>> inputs,
                                            std::span<const std::size_t> labels);

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::size_t early_stop_patience = 15;
  double val_fraction = 0.1;
  /// Worker threads for per-sample gradients. Results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
};

struct RpSamples {
  RpLabel label;
  std::vector<FeatureVector> samples;
};

struct TrainingSet {
  std::string ap_id;
  std::vector<RpSamples> rps;  // class index = position
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  ModelBundle model;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 1-based, matches EpochStats::epoch
  std::vector<std::string> warnings;
};

/// Stratified 9:1 split, z-score statistics from the training split, mini-batch
/// training with early stopping on validation loss. Returns the weights of the
/// best validation epoch. Throws DatasetError naming any RP without samples.
TrainResult train(const TrainingSet& set, const TrainConfig& config);

struct Prediction {
  std::size_t class_index = 0;
  std::string rp_id;
  double x = 0.0;
  double y = 0.0;
  double probability = 0.0;
};

/// Classifies one preprocessed (calibrated) feature vector. Ties resolve to
/// the lower class index.
Prediction predict(const ModelBundle& model, const FeatureVector& fv);

/// Online path for a single raw packet: spike check, extraction, unwrapping
/// and calibration with the packet's own RSSI, then classification. Throws
/// RejectedSample when the packet carries a spike.
Prediction predict_packet(const ModelBundle& model, const CsiPacket& packet, const DenoiseConfig& config,
                          UnwrapMode unwrap = UnwrapMode::cumulative);

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<unsigned char> encode_model(const ModelBundle& model);
ModelBundle decode_model(std::span<const unsigned char> bytes, const std::string& context = "model");
void save_model(const ModelBundle& model, const std::filesystem::path& path);
/// Throws FormatError on bad magic, version, truncation or inconsistent shapes.
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace csiloc::nn
