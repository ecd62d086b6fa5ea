#include "csiloc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "csiloc/binary_io.hpp"
#include "csiloc/dataset.hpp"
#include "csiloc/error.hpp"
#include "csiloc/parallel.hpp"
#include "csiloc/rng.hpp"

namespace csiloc::nn {
namespace {

constexpr std::string_view kModelMagic = "CSILOCNN";

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::uint64_t step = 0;
};

void apply_update(Network<float>& net, const Network<float>& grad, const TrainConfig& cfg, AdamState& state) {
  auto& params = net.tensors();
  const auto& grads = grad.tensors();
  if (cfg.optimizer == OptimizerKind::sgd) {
    const auto lr = static_cast<float>(cfg.learning_rate);
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t i = 0; i < params[t].size(); ++i) params[t].values[i] -= lr * grads[t].values[i];
    }
    return;
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0f);
      state.v.emplace_back(p.size(), 0.0f);
    }
  }
  ++state.step;
  const auto b1 = static_cast<float>(cfg.beta1);
  const auto b2 = static_cast<float>(cfg.beta2);
  const auto correction1 = static_cast<float>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const auto correction2 = static_cast<float>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto eps = static_cast<float>(cfg.epsilon);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& w = params[t].values;
    const auto& g = grads[t].values;
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const float mhat = m[i] / correction1;
      const float vhat = v[i] / correction2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

struct Dataset {
  std::vector<std::array<float, kInputSize>> inputs;
  std::vector<std::size_t> labels;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate_set(const Network<float>& net, const Dataset& data, std::size_t threads) {
  std::vector<double> losses(data.inputs.size());
  std::vector<char> correct(data.inputs.size());
  std::vector<Activations<float>> scratch(std::max<std::size_t>(threads, 1));
  parallel_for(data.inputs.size(), threads, [&](std::size_t i, std::size_t w) {
    auto& a = scratch[w];
    forward<float>(net, data.inputs[i], a);
    losses[i] = cross_entropy(a, data.labels[i]);
    const auto best = static_cast<std::size_t>(std::max_element(a.probs.begin(), a.probs.end()) - a.probs.begin());
    correct[i] = best == data.labels[i];
  });
  EvalResult r;
  if (data.inputs.empty()) return r;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    r.loss += losses[i];
    r.accuracy += correct[i] ? 1.0 : 0.0;
  }
  r.loss /= static_cast<double>(losses.size());
  r.accuracy /= static_cast<double>(losses.size());
  return r;
}

void check_model_shapes(const Network<float>& net, const std::string& context) {
  const Network<float> expected(net.n_classes());
  if (net.tensors().size() != expected.tensors().size()) throw FormatError(context + ": wrong tensor count");
  for (std::size_t i = 0; i < expected.tensors().size(); ++i) {
    const auto& a = net.tensors()[i];
    const auto& b = expected.tensors()[i];
    if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size()) {
      throw FormatError(context + ": tensor '" + a.name + "' does not match the expected layout for " +
                        std::to_string(net.n_classes()) + " classes");
    }
  }
}

}  // namespace

std::vector<LayerSpec> architecture(std::size_t n_classes) {
  std::vector<LayerSpec> layers;
  for (const auto& s : kConvShapes) {
    layers.push_back({LayerKind::conv1d, s.out_channels, s.kernel, 1, 0.0});
    layers.push_back({LayerKind::dropout, 0, 0, 0, kDropoutRate});
  }
  layers.push_back({LayerKind::global_avg_pool, kPooledWidth, conv_output_lengths().back(), 0, 0.0});
  layers.push_back({LayerKind::dense_softmax, n_classes, 0, 0, 0.0});
  return layers;
}

std::size_t parameter_count(std::size_t n_classes) { return Network<float>(n_classes).parameter_count(); }

ModelBundle build_model(std::size_t n_classes, std::uint64_t seed) {
  if (n_classes < 2) throw InvalidArgument("build_model: n_classes must be >= 2");
  ModelBundle m;
  m.network = Network<float>(n_classes);
  m.network.initialize(seed);
  m.labels.resize(n_classes);
  for (std::size_t i = 0; i < n_classes; ++i) m.labels[i].rp_id = "class_" + std::to_string(i);
  return m;
}

NormStats compute_norm_stats(std::span<const FeatureVector> samples) {
  NormStats s;
  if (samples.empty()) return s;
  const double count = static_cast<double>(samples.size() * kInputLength);
  std::array<double, 2> sum{0.0, 0.0};
  for (const auto& f : samples) {
    for (std::size_t i = 0; i < kInputLength; ++i) {
      sum[0] += f.magnitude[i];
      sum[1] += f.phase_rad[i];
    }
  }
  s.mean = {sum[0] / count, sum[1] / count};
  std::array<double, 2> sq{0.0, 0.0};
  for (const auto& f : samples) {
    for (std::size_t i = 0; i < kInputLength; ++i) {
      const double a = f.magnitude[i] - s.mean[0];
      const double b = f.phase_rad[i] - s.mean[1];
      sq[0] += a * a;
      sq[1] += b * b;
    }
  }
  for (std::size_t c = 0; c < 2; ++c) {
    const double sd = std::sqrt(sq[c] / count);
    s.stddev[c] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

std::array<float, kInputSize> normalize_input(const NormStats& norm, const FeatureVector& fv) {
  std::array<float, kInputSize> out{};
  for (std::size_t i = 0; i < kInputLength; ++i) {
    out[i] = static_cast<float>((fv.magnitude[i] - norm.mean[0]) / norm.stddev[0]);
    out[kInputLength + i] = static_cast<float>((fv.phase_rad[i] - norm.mean[1]) / norm.stddev[1]);
  }
  return out;
}

std::vector<float> forward(const ModelBundle& model, std::span<const float> normalized_input,
                           std::optional<std::uint64_t> dropout_key) {
  Activations<float> a;
  forward<float>(model.network, normalized_input, a, dropout_key);
  return a.probs;
}

LossAndGradients compute_loss_and_gradients(const Network<double>& net,
                                            std::span<const std::array<double, kInputSize>> inputs,
                                            std::span<const std::size_t> labels) {
  if (inputs.size() != labels.size() || inputs.empty()) {
    throw InvalidArgument("compute_loss_and_gradients: need one label per input");
  }
  LossAndGradients out{0.0, Network<double>(net.n_classes())};
  Network<double> sample_grad(net.n_classes());
  Activations<double> a;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    forward<double>(net, inputs[i], a);
    out.loss += backward(net, a, labels[i], sample_grad);
    out.gradients.add(sample_grad);
  }
  const double inv = 1.0 / static_cast<double>(inputs.size());
  out.loss *= inv;
  out.gradients.scale(inv);
  return out;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be > 0");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
  if (val_fraction != 0.1) throw ConfigError("train: val_fraction is fixed at 0.1");
}

TrainResult train(const TrainingSet& set, const TrainConfig& config) {
  config.validate();
  const std::size_t n_classes = set.rps.size();
  if (n_classes < 2) throw InvalidArgument("train: AP " + set.ap_id + " needs at least 2 RPs");
  std::vector<std::size_t> counts;
  for (const auto& rp : set.rps) {
    if (rp.samples.empty()) throw DatasetError("train: RP " + rp.label.rp_id + " has no samples");
    counts.push_back(rp.samples.size());
  }

  TrainResult result;
  TrainValSplit split;
  try {
    split = split_train_val(counts, derive_key({config.seed, 0x73706C6974ULL}));
  } catch (const DatasetError& e) {
    throw DatasetError("train: AP " + set.ap_id + ": " + e.what());
  }
  result.warnings = split.warnings;

  std::vector<FeatureVector> train_samples;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (auto i : split.train[c]) train_samples.push_back(set.rps[c].samples[i]);
  }

  ModelBundle model = build_model(n_classes, derive_key({config.seed, 0x696E6974ULL}));
  model.ap_id = set.ap_id;
  model.norm = compute_norm_stats(train_samples);
  for (std::size_t c = 0; c < n_classes; ++c) model.labels[c] = set.rps[c].label;

  Dataset train_data, val_data;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (auto i : split.train[c]) {
      train_data.inputs.push_back(normalize_input(model.norm, set.rps[c].samples[i]));
      train_data.labels.push_back(c);
    }
    for (auto i : split.val[c]) {
      val_data.inputs.push_back(normalize_input(model.norm, set.rps[c].samples[i]));
      val_data.labels.push_back(c);
    }
  }

  const std::size_t threads = std::max<std::size_t>(config.threads, 1);
  const std::size_t batch = std::min(config.batch_size, train_data.inputs.size());
  std::vector<Network<float>> sample_grads(batch, Network<float>(n_classes));
  std::vector<float> sample_loss(batch);
  std::vector<Activations<float>> scratch(threads);
  Network<float> batch_grad(n_classes);
  AdamState adam;

  Network<float> best = model.network;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::uint64_t step = 0;

  std::vector<std::size_t> order(train_data.inputs.size());
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle{config.seed, 0x73687566ULL, epoch};
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t b = std::min(batch, order.size() - start);
      ++step;
      parallel_for(b, threads, [&](std::size_t j, std::size_t w) {
        const auto idx = order[start + j];
        auto& a = scratch[w];
        forward<float>(model.network, train_data.inputs[idx], a, derive_key({config.seed, 0x64726F70ULL, step, j}));
        sample_loss[j] = backward(model.network, a, train_data.labels[idx], sample_grads[j]);
      });
      // Ordered reduction keeps the result independent of the worker count.
      batch_grad.fill(0.0f);
      for (std::size_t j = 0; j < b; ++j) {
        batch_grad.add(sample_grads[j]);
        epoch_loss += sample_loss[j];
      }
      batch_grad.scale(1.0f / static_cast<float>(b));
      apply_update(model.network, batch_grad, config, adam);
    }

    const auto val = evaluate_set(model.network, val_data, threads);
    result.history.push_back({epoch, epoch_loss / static_cast<double>(order.size()), val.loss, val.accuracy});
    if (val.loss < best_val) {
      best_val = val.loss;
      best = model.network;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }

  model.network = std::move(best);
  result.model = std::move(model);
  return result;
}

Prediction predict(const ModelBundle& model, const FeatureVector& fv) {
  const auto input = normalize_input(model.norm, fv);
  const auto probs = forward(model, input);
  // max_element returns the first maximum, i.e. the lower class index on ties.
  const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  Prediction p;
  p.class_index = best;
  p.probability = probs[best];
  if (best < model.labels.size()) {
    p.rp_id = model.labels[best].rp_id;
    p.x = model.labels[best].x;
    p.y = model.labels[best].y;
  }
  return p;
}

Prediction predict_packet(const ModelBundle& model, const CsiPacket& packet, const DenoiseConfig& config,
                          UnwrapMode unwrap) {
  const auto layout = SubcarrierLayout::ieee80211_20mhz();
  const auto raw = extract_features(packet, layout, unwrap);
  if (has_spike(raw, config.spike_threshold)) {
    throw RejectedSample("packet " + std::to_string(packet.sequence_no) + " exceeds the spike threshold");
  }
  const double rssi[] = {packet.rssi_dbm};
  const auto calibrated = calibrate(std::span(&packet, 1), rssi);
  return predict(model, extract_features(calibrated.front(), layout, unwrap));
}

std::vector<unsigned char> encode_model(const ModelBundle& model) {
  io::ByteWriter out;
  out.raw(kModelMagic);
  out.u32(kModelFormatVersion);
  out.str(model.ap_id);
  out.str(model.provenance);
  out.u32(static_cast<std::uint32_t>(model.n_classes()));
  for (double v : model.norm.mean) out.f64(v);
  for (double v : model.norm.stddev) out.f64(v);
  out.u32(static_cast<std::uint32_t>(model.labels.size()));
  for (const auto& l : model.labels) {
    out.str(l.rp_id);
    out.f64(l.x);
    out.f64(l.y);
  }
  const auto& tensors = model.network.tensors();
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    out.str(t.name);
    out.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) out.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values) out.f32(v);
  }
  return out.take();
}

ModelBundle decode_model(std::span<const unsigned char> bytes, const std::string& context) {
  io::ByteReader in(bytes, context);
  if (in.raw(kModelMagic.size()) != kModelMagic) throw FormatError(context + ": not a model file (bad magic)");
  const auto version = in.u32();
  if (version != kModelFormatVersion) throw FormatError(context + ": unsupported model version " + std::to_string(version));

  ModelBundle m;
  m.ap_id = in.str();
  m.provenance = in.str();
  const auto n_classes = in.u32();
  if (n_classes < 2 || n_classes > 1 << 16) throw FormatError(context + ": implausible class count");
  for (auto& v : m.norm.mean) v = in.f64();
  for (auto& v : m.norm.stddev) v = in.f64();
  const auto n_labels = in.u32();
  if (n_labels != n_classes) {
    throw FormatError(context + ": " + std::to_string(n_labels) + " labels for " + std::to_string(n_classes) + " classes");
  }
  m.labels.resize(n_labels);
  for (auto& l : m.labels) {
    l.rp_id = in.str();
    l.x = in.f64();
    l.y = in.f64();
  }

  m.network = Network<float>(n_classes);
  const auto n_tensors = in.u32();
  if (n_tensors != m.network.tensors().size()) throw FormatError(context + ": wrong tensor count");
  for (auto& t : m.network.tensors()) {
    const auto name = in.str();
    const auto ndim = in.u32();
    if (ndim > 8) throw FormatError(context + ": tensor '" + name + "' has too many dimensions");
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = in.u32();
    if (name != t.name || shape != t.shape) {
      throw FormatError(context + ": tensor '" + name + "' does not match the layout declared by " +
                        std::to_string(n_classes) + " classes");
    }
    for (auto& v : t.values) v = in.f32();
  }
  if (in.remaining() != 0) throw FormatError(context + ": trailing bytes after model payload");
  check_model_shapes(m.network, context);
  return m;
}

void save_model(const ModelBundle& model, const std::filesystem::path& path) {
  io::write_file(path, encode_model(model));
}

ModelBundle load_model(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_model(bytes, path.string());
}

}  // namespace csiloc::nn
