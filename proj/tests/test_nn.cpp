#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "csiloc/binary_io.hpp"
#include "csiloc/error.hpp"
#include "csiloc/nn.hpp"
#include "csiloc/rng.hpp"
#include "gradcheck.hpp"

using namespace csiloc;
using namespace csiloc::nn;

namespace {

FeatureVector constant_fv(double mag, double phase) {
  FeatureVector fv;
  fv.magnitude.fill(mag);
  fv.phase_rad.fill(phase);
  return fv;
}

FeatureVector noisy_fv(const FeatureVector& base, CounterRng& rng, double sigma) {
  auto fv = base;
  for (auto& m : fv.magnitude) m += sigma * rng.gaussian();
  for (auto& p : fv.phase_rad) p += 0.1 * sigma * rng.gaussian();
  return fv;
}

std::size_t enumerate_parameters(std::size_t n) {
  std::size_t total = 0;
  const Network<float> net(n);
  for (const auto& t : net.tensors()) {
    total += std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
  }
  return total;
}

TrainingSet separable_set(std::size_t classes, std::size_t per_class, double sigma, std::uint64_t seed) {
  CounterRng rng{seed};
  TrainingSet set;
  set.ap_id = "ap";
  for (std::size_t c = 0; c < classes; ++c) {
    RpSamples rp;
    rp.label = {"rp" + std::to_string(c), double(c), 0.0};
    FeatureVector base;
    for (std::size_t i = 0; i < kFeatureLength; ++i) {
      base.magnitude[i] = 100 + 80 * std::sin(0.2 * double(i) * double(c + 1));
      base.phase_rad[i] = 0.05 * double(i) * double(c + 1);
    }
    for (std::size_t k = 0; k < per_class; ++k) rp.samples.push_back(noisy_fv(base, rng, sigma));
    set.rps.push_back(std::move(rp));
  }
  return set;
}

}  // namespace

TEST(BuildModel, ParameterCounts) {
  EXPECT_EQ(build_model(16, 1).network.parameter_count(), 11280u);
  EXPECT_EQ(build_model(56, 1).network.parameter_count(), 12600u);
  EXPECT_EQ(build_model(2, 1).network.parameter_count(), 10818u);
  EXPECT_EQ(enumerate_parameters(2), 10818u);
}

TEST(BuildModelProperty, FormulaHoldsForAllClassCounts) {
  for (std::size_t n = 2; n <= 128; ++n) {
    EXPECT_EQ(enumerate_parameters(n), 10752 + 33 * n);
    EXPECT_EQ(parameter_count(n), 10752 + 33 * n);
  }
}

TEST(BuildModel, RejectsSingleClass) {
  EXPECT_THROW(build_model(1, 0), InvalidArgument);
  EXPECT_THROW(build_model(0, 0), InvalidArgument);
}

TEST(BuildModel, ArchitectureSequence) {
  const auto arch = architecture(7);
  ASSERT_EQ(arch.size(), 10u);
  const std::size_t filters[] = {16, 16, 32, 32};
  const std::size_t kernels[] = {21, 13, 7, 3};
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(arch[2 * l].kind, LayerKind::conv1d);
    EXPECT_EQ(arch[2 * l].filter_count, filters[l]);
    EXPECT_EQ(arch[2 * l].kernel_size, kernels[l]);
    EXPECT_EQ(arch[2 * l].stride, 1u);
    EXPECT_EQ(arch[2 * l + 1].kind, LayerKind::dropout);
    EXPECT_DOUBLE_EQ(arch[2 * l + 1].dropout_rate, 0.25);
  }
  EXPECT_EQ(arch[8].kind, LayerKind::global_avg_pool);
  EXPECT_EQ(arch[9].kind, LayerKind::dense_softmax);
  EXPECT_EQ(arch[9].filter_count, 7u);
}

TEST(BuildModel, SameSeedSameWeights) {
  const auto a = build_model(5, 42), b = build_model(5, 42), c = build_model(5, 43);
  for (std::size_t t = 0; t < a.network.tensors().size(); ++t) {
    EXPECT_EQ(a.network.tensors()[t].values, b.network.tensors()[t].values);
  }
  EXPECT_NE(a.network.conv_weight(0).values, c.network.conv_weight(0).values);
}

TEST(Forward, IntermediateLengths) {
  const auto model = build_model(4, 3);
  Activations<float> a;
  std::vector<float> in(kInputSize, 0.5f);
  forward<float>(model.network, in, a);
  EXPECT_EQ(a.lengths, (std::array<std::size_t, 4>{37, 25, 19, 17}));
  EXPECT_EQ(a.act[1].size(), 16u * 37);
  EXPECT_EQ(a.act[2].size(), 16u * 25);
  EXPECT_EQ(a.act[3].size(), 32u * 19);
  EXPECT_EQ(a.act[4].size(), 32u * 17);
  EXPECT_EQ(a.pooled.size(), 32u);
  EXPECT_EQ(conv_output_lengths(), (std::array<std::size_t, 4>{37, 25, 19, 17}));
}

TEST(ForwardProperty, SoftmaxIsADistribution) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto model = build_model(2 + s % 20, s);
    CounterRng rng{s, 2};
    std::vector<float> in(kInputSize);
    for (auto& v : in) v = static_cast<float>(3 * rng.gaussian());
    for (bool train : {false, true}) {
      const auto p = forward(model, in, train ? std::optional<std::uint64_t>(s) : std::nullopt);
      ASSERT_EQ(p.size(), model.n_classes());
      double total = 0;
      for (float v : p) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Forward, ZeroWeightsGiveUniformOutput) {
  auto model = build_model(8, 1);
  model.network.fill(0.0f);
  std::vector<float> in(kInputSize, 0.0f);
  for (float p : forward(model, in)) EXPECT_FLOAT_EQ(p, 1.0f / 8);
}

TEST(Forward, InferenceIsDeterministicDropoutIsKeyed) {
  const auto model = build_model(6, 9);
  std::vector<float> in(kInputSize, 0.3f);
  EXPECT_EQ(forward(model, in), forward(model, in));
  EXPECT_EQ(forward(model, in, 5), forward(model, in, 5));
  Activations<float> a;
  forward<float>(model.network, in, a, 5);
  std::size_t dropped = 0, total = 0;
  for (const auto& m : a.mask) {
    for (float v : m) {
      dropped += v == 0.0f;
      if (v != 0.0f) {
        EXPECT_FLOAT_EQ(v, 1.0f / 0.75f);
      }
      ++total;
    }
  }
  EXPECT_NEAR(double(dropped) / double(total), 0.25, 0.03);
}

TEST(Forward, WrongInputSizeThrows) {
  const auto model = build_model(3, 1);
  std::vector<float> in(kInputSize - 1, 0.0f);
  EXPECT_THROW(forward(model, in), InvalidArgument);
}

TEST(Loss, PerfectAndUniformPredictions) {
  Network<double> net(5);
  net.fill(0.0);
  std::vector<std::array<double, kInputSize>> inputs(3);
  for (auto& in : inputs) in.fill(0.0);
  std::vector<std::size_t> labels{0, 3, 4};
  EXPECT_NEAR(compute_loss_and_gradients(net, inputs, labels).loss, std::log(5.0), 1e-12);

  // A huge bias on the true class drives the loss to 0.
  net.dense_bias().values[2] = 800.0;
  std::vector<std::size_t> twos{2, 2, 2};
  EXPECT_NEAR(compute_loss_and_gradients(net, inputs, twos).loss, 0.0, 1e-12);
}

TEST(Gradients, MatchCentralDifferences) {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto probe = gradcheck::make_probe(1000 + s, 4, 2);
    const auto r = gradcheck::check(probe, 15, 1e-4, s);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
    EXPECT_GT(r.checked, 100u);
    EXPECT_EQ(r.tensors_checked.size(), 10u);
  }
}

TEST(Normalization, TrainingSetIsStandardised) {
  CounterRng rng{3};
  std::vector<FeatureVector> samples;
  for (int i = 0; i < 200; ++i) samples.push_back(noisy_fv(constant_fv(300, 1.0), rng, 25));
  const auto norm = compute_norm_stats(samples);
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  std::size_t n = 0;
  for (const auto& s : samples) {
    const auto in = normalize_input(norm, s);
    for (std::size_t i = 0; i < kInputLength; ++i) {
      sum[0] += in[i];
      sum[1] += in[kInputLength + i];
      sq[0] += double(in[i]) * in[i];
      sq[1] += double(in[kInputLength + i]) * in[kInputLength + i];
    }
    n += kInputLength;
  }
  for (int c = 0; c < 2; ++c) {
    const double mean = sum[c] / double(n);
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_NEAR(std::sqrt(sq[c] / double(n) - mean * mean), 1.0, 1e-5);
  }
}

TEST(Normalization, ZeroVarianceChannelKeepsUnitStd) {
  std::vector<FeatureVector> samples(10, constant_fv(5, 0));
  const auto norm = compute_norm_stats(samples);
  EXPECT_EQ(norm.stddev[0], 1.0);
  EXPECT_EQ(norm.stddev[1], 1.0);
}

TEST(Train, SeparableTwoClassReachesFullAccuracy) {
  TrainingSet set;
  set.ap_id = "ap";
  set.rps.push_back({{"a", 0, 0}, std::vector<FeatureVector>(30, constant_fv(100, 0.5))});
  set.rps.push_back({{"b", 2, 0}, std::vector<FeatureVector>(30, constant_fv(400, -0.5))});
  TrainConfig cfg;
  cfg.seed = 5;
  cfg.max_epochs = 50;
  const auto r = train(set, cfg);
  double best = 0;
  for (const auto& e : r.history) best = std::max(best, e.val_accuracy);
  EXPECT_EQ(best, 1.0);
  EXPECT_EQ(predict(r.model, set.rps[0].samples[0]).rp_id, "a");
  EXPECT_EQ(predict(r.model, set.rps[1].samples[0]).rp_id, "b");
}

TEST(Train, SmallLearningRateLossTrendsDown) {
  const auto set = separable_set(4, 40, 5, 8);
  TrainConfig cfg;
  cfg.seed = 2;
  cfg.learning_rate = 1e-4;
  cfg.max_epochs = 15;
  cfg.early_stop_patience = 100;
  const auto r = train(set, cfg);
  ASSERT_EQ(r.history.size(), 15u);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(Train, BitwiseReproducibleAndThreadIndependent) {
  const auto set = separable_set(3, 25, 8, 4);
  TrainConfig cfg;
  cfg.seed = 77;
  cfg.max_epochs = 4;
  const auto a = train(set, cfg);
  const auto b = train(set, cfg);
  cfg.threads = 3;
  const auto c = train(set, cfg);
  EXPECT_EQ(encode_model(a.model), encode_model(b.model));
  EXPECT_EQ(encode_model(a.model), encode_model(c.model));
}

TEST(Train, EmptyRpNamed) {
  auto set = separable_set(3, 10, 1, 1);
  set.rps[1].samples.clear();
  try {
    train(set, TrainConfig{});
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("rp1"), std::string::npos) << e.what();
  }
}

TEST(TrainConfig, ValFractionFixed) {
  TrainConfig cfg;
  cfg.val_fraction = 0.2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.val_fraction = 0.1;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Predict, ZeroModelTiesToClassZero) {
  auto model = build_model(5, 1);
  model.network.fill(0.0f);
  for (std::size_t i = 0; i < 5; ++i) model.labels[i] = {"rp" + std::to_string(i), double(i), 1.0};
  const auto p = predict(model, constant_fv(10, 0.2));
  EXPECT_EQ(p.class_index, 0u);
  EXPECT_EQ(p.rp_id, "rp0");
  EXPECT_NEAR(p.probability, 0.2, 1e-6);
}

TEST(Predict, SpikedPacketRejected) {
  const auto model = build_model(3, 1);
  CsiPacket p;
  p.subcarriers.fill({100, 0});
  p.rssi_dbm = -40;
  EXPECT_NO_THROW(predict_packet(model, p, DenoiseConfig{}));
  p.subcarriers[40] = {4000, 0};
  EXPECT_THROW(predict_packet(model, p, DenoiseConfig{}), RejectedSample);
}

TEST(ModelFile, RoundTripIsExact) {
  auto model = build_model(6, 12);
  model.ap_id = "ap7";
  model.norm = {{1.5, -0.25}, {3.0, 0.5}};
  model.provenance = "{\"seed\":1}";
  const auto bytes = encode_model(model);
  const auto back = decode_model(bytes);
  EXPECT_EQ(back.ap_id, "ap7");
  EXPECT_EQ(back.provenance, model.provenance);
  EXPECT_EQ(back.norm.mean, model.norm.mean);
  EXPECT_EQ(back.norm.stddev, model.norm.stddev);
  EXPECT_EQ(back.labels.size(), 6u);
  EXPECT_EQ(back.network.parameter_count(), model.network.parameter_count());
  std::vector<float> in(kInputSize, 0.7f);
  EXPECT_EQ(forward(back, in), forward(model, in));
  EXPECT_EQ(encode_model(back), bytes);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "CSILOCNN");

  const auto path = std::filesystem::temp_directory_path() / "csiloc_model_roundtrip.csim";
  save_model(model, path);
  EXPECT_EQ(encode_model(load_model(path)), bytes);
  std::filesystem::remove(path);
}

TEST(ModelFile, TruncationIsFormatError) {
  const auto bytes = encode_model(build_model(4, 1));
  for (std::size_t cut : {std::size_t{0}, std::size_t{7}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<unsigned char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_model(part), FormatError) << "cut " << cut;
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_model(extra), FormatError);
}

namespace {

// Offset of the tensor-count field, i.e. the end of the header and label table.
std::size_t tensor_section_offset(const std::vector<unsigned char>& bytes) {
  io::ByteReader r(bytes, "probe");
  r.raw(8);
  r.u32();
  r.str();
  r.str();
  const auto n = r.u32();
  for (int i = 0; i < 4; ++i) r.f64();
  r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    r.str();
    r.f64();
    r.f64();
  }
  return r.position();
}

}  // namespace

TEST(ModelFile, DeclaredClassCountMismatchIsFormatError) {
  // Header and labels of a 5-class model followed by a 4-class model's tensors.
  const auto five = encode_model(build_model(5, 1));
  const auto four = encode_model(build_model(4, 1));
  std::vector<unsigned char> spliced(five.begin(), five.begin() + static_cast<std::ptrdiff_t>(tensor_section_offset(five)));
  spliced.insert(spliced.end(), four.begin() + static_cast<std::ptrdiff_t>(tensor_section_offset(four)), four.end());
  try {
    decode_model(spliced);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("dense"), std::string::npos) << e.what();
  }
}

TEST(ModelFile, WrongVersionIsFormatError) {
  auto bytes = encode_model(build_model(3, 1));
  bytes[8] = 99;
  EXPECT_THROW(decode_model(bytes), FormatError);
}
