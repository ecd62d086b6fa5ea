#pragma once

// Two-channel 1D CNN used as the per-AP location classifier.
//
//   input 2x57
//   conv 16@21 -> ReLU -> dropout   (2x57  -> 16x37)
//   conv 16@13 -> ReLU -> dropout   (16x37 -> 16x25)
//   conv 32@7  -> ReLU -> dropout   (16x25 -> 32x19)
//   conv 32@3  -> ReLU -> dropout   (32x19 -> 32x17)
//   global average pooling          (32x17 -> 32)
//   dense + softmax                 (32    -> N)
//
// Convolutions are valid (no padding), stride 1. Dropout is inverted so
// inference needs no rescaling. Everything here is templated on the scalar
// so the same code trains in float and is gradient-checked in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csiloc/csi_core.hpp"
#include "csiloc/error.hpp"
#include "csiloc/rng.hpp"

namespace csiloc::nn {

inline constexpr std::size_t kInputChannels = 2;
inline constexpr std::size_t kInputLength = kFeatureLength;
inline constexpr std::size_t kInputSize = kInputChannels * kInputLength;
inline constexpr double kDropoutRate = 0.25;
inline constexpr std::size_t kConvLayers = 4;
inline constexpr std::size_t kPooledWidth = 32;

enum class LayerKind { conv1d, dropout, global_avg_pool, dense_softmax };

struct LayerSpec {
  LayerKind kind;
  std::size_t filter_count = 0;
  std::size_t kernel_size = 0;
  std::size_t stride = 0;
  double dropout_rate = 0.0;
};

/// The fixed layer sequence; the dense layer's filter_count is the class count.
std::vector<LayerSpec> architecture(std::size_t n_classes);

struct ConvShape {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;
};

inline constexpr std::array<ConvShape, kConvLayers> kConvShapes{{{2, 16, 21}, {16, 16, 13}, {16, 32, 7}, {32, 32, 3}}};

/// Output length of every convolution: 37, 25, 19, 17.
inline constexpr std::array<std::size_t, kConvLayers> conv_output_lengths() {
  std::array<std::size_t, kConvLayers> out{};
  std::size_t len = kInputLength;
  for (std::size_t l = 0; l < kConvLayers; ++l) {
    len = len - kConvShapes[l].kernel + 1;
    out[l] = len;
  }
  return out;
}

template <typename T>
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> values;

  std::size_t size() const { return values.size(); }
};

/// Parameters in a fixed order: conv{0..3}.{weight,bias}, dense.{weight,bias}.
/// Conv weights are [out][in][kernel], dense weights [classes][32].
template <typename T>
class Network {
 public:
  static constexpr std::size_t kTensorCount = 2 * kConvLayers + 2;

  Network() = default;

  explicit Network(std::size_t n_classes) : n_classes_(n_classes) {
    if (n_classes < 2) throw InvalidArgument("network needs at least 2 classes");
    for (std::size_t l = 0; l < kConvLayers; ++l) {
      const auto& s = kConvShapes[l];
      const auto prefix = "conv" + std::to_string(l);
      tensors_.push_back({prefix + ".weight", {s.out_channels, s.in_channels, s.kernel},
                          std::vector<T>(s.out_channels * s.in_channels * s.kernel, T(0))});
      tensors_.push_back({prefix + ".bias", {s.out_channels}, std::vector<T>(s.out_channels, T(0))});
    }
    tensors_.push_back({"dense.weight", {n_classes, kPooledWidth}, std::vector<T>(n_classes * kPooledWidth, T(0))});
    tensors_.push_back({"dense.bias", {n_classes}, std::vector<T>(n_classes, T(0))});
  }

  std::size_t n_classes() const { return n_classes_; }

  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  const Tensor<T>& conv_weight(std::size_t l) const { return tensors_[2 * l]; }
  const Tensor<T>& conv_bias(std::size_t l) const { return tensors_[2 * l + 1]; }
  const Tensor<T>& dense_weight() const { return tensors_[2 * kConvLayers]; }
  const Tensor<T>& dense_bias() const { return tensors_[2 * kConvLayers + 1]; }
  Tensor<T>& conv_weight(std::size_t l) { return tensors_[2 * l]; }
  Tensor<T>& conv_bias(std::size_t l) { return tensors_[2 * l + 1]; }
  Tensor<T>& dense_weight() { return tensors_[2 * kConvLayers]; }
  Tensor<T>& dense_bias() { return tensors_[2 * kConvLayers + 1]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  void fill(T v) {
    for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), v);
  }

  /// He-uniform convolutions, Glorot-uniform dense layer, zero biases.
  void initialize(std::uint64_t seed) {
    CounterRng rng{seed, 0x696E6974ULL};
    for (std::size_t l = 0; l < kConvLayers; ++l) {
      const auto& s = kConvShapes[l];
      const double limit = std::sqrt(6.0 / static_cast<double>(s.in_channels * s.kernel));
      for (auto& w : conv_weight(l).values) w = static_cast<T>(rng.uniform(-limit, limit));
      std::fill(conv_bias(l).values.begin(), conv_bias(l).values.end(), T(0));
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(kPooledWidth + n_classes_));
    for (auto& w : dense_weight().values) w = static_cast<T>(rng.uniform(-limit, limit));
    std::fill(dense_bias().values.begin(), dense_bias().values.end(), T(0));
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out(n_classes_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      auto& dst = out.tensors()[i].values;
      std::transform(tensors_[i].values.begin(), tensors_[i].values.end(), dst.begin(),
                     [](T v) { return static_cast<U>(v); });
    }
    return out;
  }

  /// this += other (same shapes).
  void add(const Network& other) {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      auto& a = tensors_[i].values;
      const auto& b = other.tensors_[i].values;
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
    }
  }

  void scale(T s) {
    for (auto& t : tensors_) {
      for (auto& v : t.values) v *= s;
    }
  }

 private:
  std::size_t n_classes_ = 0;
  std::vector<Tensor<T>> tensors_;
};

/// Everything the backward pass needs from a forward pass.
template <typename T>
struct Activations {
  std::array<std::vector<T>, kConvLayers + 1> act;  // act[0] input, act[l+1] conv l after ReLU+dropout
  std::array<std::vector<T>, kConvLayers> pre;      // conv l before ReLU
  std::array<std::vector<T>, kConvLayers> mask;     // dropout multipliers, empty at inference
  std::vector<T> pooled;
  std::vector<T> logits;
  std::vector<T> probs;

  std::array<std::size_t, kConvLayers> lengths{};
};

namespace detail {

template <typename T>
void conv_forward(const Tensor<T>& w, const Tensor<T>& b, const ConvShape& s, std::size_t in_len,
                  const std::vector<T>& in, std::vector<T>& out) {
  const std::size_t out_len = in_len - s.kernel + 1;
  out.assign(s.out_channels * out_len, T(0));
  for (std::size_t o = 0; o < s.out_channels; ++o) {
    T* y = out.data() + o * out_len;
    std::fill(y, y + out_len, b.values[o]);
    for (std::size_t i = 0; i < s.in_channels; ++i) {
      const T* wk = w.values.data() + (o * s.in_channels + i) * s.kernel;
      for (std::size_t j = 0; j < s.kernel; ++j) {
        const T wv = wk[j];
        const T* x = in.data() + i * in_len + j;
        for (std::size_t t = 0; t < out_len; ++t) y[t] += wv * x[t];
      }
    }
  }
}

/// Accumulates dW, db from dz; writes din when non-null.
template <typename T>
void conv_backward(const Tensor<T>& w, const ConvShape& s, std::size_t in_len, const std::vector<T>& in,
                   const std::vector<T>& dz, Tensor<T>& dw, Tensor<T>& db, std::vector<T>* din) {
  const std::size_t out_len = in_len - s.kernel + 1;
  if (din) din->assign(s.in_channels * in_len, T(0));
  for (std::size_t o = 0; o < s.out_channels; ++o) {
    const T* g = dz.data() + o * out_len;
    T bsum = T(0);
    for (std::size_t t = 0; t < out_len; ++t) bsum += g[t];
    db.values[o] += bsum;
    for (std::size_t i = 0; i < s.in_channels; ++i) {
      const std::size_t base = (o * s.in_channels + i) * s.kernel;
      for (std::size_t j = 0; j < s.kernel; ++j) {
        const T* x = in.data() + i * in_len + j;
        T acc = T(0);
        for (std::size_t t = 0; t < out_len; ++t) acc += g[t] * x[t];
        dw.values[base + j] += acc;
        if (din) {
          const T wv = w.values[base + j];
          T* dx = din->data() + i * in_len + j;
          for (std::size_t t = 0; t < out_len; ++t) dx[t] += wv * g[t];
        }
      }
    }
  }
}

}  // namespace detail

/// Forward pass over one channel-major input (magnitude row then phase row).
/// When `dropout_key` is set, dropout is active with masks drawn from a
/// stream keyed by it; otherwise the pass is deterministic inference.
template <typename T>
void forward(const Network<T>& net, std::span<const T> input, Activations<T>& a,
             std::optional<std::uint64_t> dropout_key = std::nullopt) {
  if (input.size() != kInputSize) {
    throw InvalidArgument("forward: expected " + std::to_string(kInputSize) + " inputs, got " +
                          std::to_string(input.size()));
  }
  if (net.tensors().size() != Network<T>::kTensorCount) throw InvalidArgument("forward: network has no parameters");

  a.act[0].assign(input.begin(), input.end());
  std::size_t len = kInputLength;
  std::optional<CounterRng> rng;
  if (dropout_key) rng.emplace(*dropout_key);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - kDropoutRate));

  for (std::size_t l = 0; l < kConvLayers; ++l) {
    const auto& s = kConvShapes[l];
    detail::conv_forward(net.conv_weight(l), net.conv_bias(l), s, len, a.act[l], a.pre[l]);
    len = len - s.kernel + 1;
    a.lengths[l] = len;
    auto& out = a.act[l + 1];
    out.resize(a.pre[l].size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.pre[l][i], T(0));
    if (rng) {
      auto& m = a.mask[l];
      m.resize(out.size());
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = rng->uniform() < kDropoutRate ? T(0) : keep_scale;
        out[i] *= m[i];
      }
    } else {
      a.mask[l].clear();
    }
  }

  const auto& last = a.act[kConvLayers];
  a.pooled.assign(kPooledWidth, T(0));
  for (std::size_t c = 0; c < kPooledWidth; ++c) {
    T sum = T(0);
    for (std::size_t t = 0; t < len; ++t) sum += last[c * len + t];
    a.pooled[c] = sum / static_cast<T>(len);
  }

  const std::size_t n = net.n_classes();
  const auto& dw = net.dense_weight().values;
  const auto& dbias = net.dense_bias().values;
  a.logits.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    T z = dbias[k];
    for (std::size_t c = 0; c < kPooledWidth; ++c) z += dw[k * kPooledWidth + c] * a.pooled[c];
    a.logits[k] = z;
  }
  const T zmax = *std::max_element(a.logits.begin(), a.logits.end());
  a.probs.resize(n);
  T total = T(0);
  for (std::size_t k = 0; k < n; ++k) {
    a.probs[k] = std::exp(a.logits[k] - zmax);
    total += a.probs[k];
  }
  for (auto& p : a.probs) p /= total;
}

/// Cross-entropy of the forward pass against `label`, via log-sum-exp.
template <typename T>
T cross_entropy(const Activations<T>& a, std::size_t label) {
  const T zmax = *std::max_element(a.logits.begin(), a.logits.end());
  T total = T(0);
  for (auto z : a.logits) total += std::exp(z - zmax);
  return zmax + std::log(total) - a.logits[label];
}

/// Gradient of the single-sample cross-entropy loss. `grad` must have the
/// network's shape; it is overwritten. Returns the loss.
template <typename T>
T backward(const Network<T>& net, const Activations<T>& a, std::size_t label, Network<T>& grad) {
  const std::size_t n = net.n_classes();
  if (label >= n) throw InvalidArgument("backward: label out of range");
  grad.fill(T(0));

  std::vector<T> dlogit(a.probs);
  dlogit[label] -= T(1);

  auto& gdw = grad.dense_weight().values;
  auto& gdb = grad.dense_bias().values;
  const auto& dw = net.dense_weight().values;
  std::vector<T> dpooled(kPooledWidth, T(0));
  for (std::size_t k = 0; k < n; ++k) {
    gdb[k] = dlogit[k];
    for (std::size_t c = 0; c < kPooledWidth; ++c) {
      gdw[k * kPooledWidth + c] = dlogit[k] * a.pooled[c];
      dpooled[c] += dw[k * kPooledWidth + c] * dlogit[k];
    }
  }

  std::size_t len = a.lengths[kConvLayers - 1];
  std::vector<T> dact(kPooledWidth * len);
  for (std::size_t c = 0; c < kPooledWidth; ++c) {
    const T g = dpooled[c] / static_cast<T>(len);
    std::fill(dact.begin() + static_cast<std::ptrdiff_t>(c * len),
              dact.begin() + static_cast<std::ptrdiff_t>((c + 1) * len), g);
  }

  std::vector<T> dz, din;
  for (std::size_t l = kConvLayers; l-- > 0;) {
    const auto& pre = a.pre[l];
    const auto& mask = a.mask[l];
    dz.resize(dact.size());
    for (std::size_t i = 0; i < dz.size(); ++i) {
      const T m = mask.empty() ? T(1) : mask[i];
      dz[i] = pre[i] > T(0) ? dact[i] * m : T(0);
    }
    const std::size_t in_len = l == 0 ? kInputLength : a.lengths[l - 1];
    detail::conv_backward(net.conv_weight(l), kConvShapes[l], in_len, a.act[l], dz, grad.conv_weight(l),
                          grad.conv_bias(l), l > 0 ? &din : nullptr);
    if (l > 0) dact.swap(din);
  }
  return cross_entropy(a, label);
}

}  // namespace csiloc::nn
