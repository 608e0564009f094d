#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>

#include "capsed/model.hpp"
#include "support/configs.hpp"
#include "support/gradcheck.hpp"

using namespace capsed;
using capsed::testing::gradient_check;
using capsed::testing::random_tensor;
using capsed::testing::tiny_config;

namespace {

void set_identity_stats(CapsuleSed& model) {
  for (auto& s : model.batchnorm_stats()) {
    s.mean.assign(model.config().conv_channels, 0.0);
    s.var.assign(model.config().conv_channels, 1.0);
    s.initialized = true;
  }
}

EventRoll random_roll(std::size_t k, std::size_t t, Rng& rng) {
  std::bernoulli_distribution on(0.4);
  EventRoll r(k, t);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < t; ++b) r.set(a, b, on(rng));
  return r;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(ModelConfig, DefaultsAndValidation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.pooled_bands(), 5u);
  EXPECT_EQ(c.primary_capsules(), 160u);
  c.bands = 72;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.primary_channels = 16;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.conv_kernel = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(CapsuleSed(ModelConfig{.bands = 81}, 1), std::invalid_argument);
}

TEST(Model, DefaultConfigShapeContract) {
  CapsuleSed model(ModelConfig{}, 7);
  Rng rng(1);
  auto x = random_tensor({1, 1, 80, 128}, rng, -1, 1, false);
  NoGradGuard no_grad;
  auto out = model.forward(x, Mode::Train, rng);
  EXPECT_EQ(out.features.shape(), (Shape{1, 256, 5, 128}));
  EXPECT_EQ(out.primary.shape(), (Shape{128, 160, 8}));
  EXPECT_EQ(out.capsules.shape(), (Shape{1, 16, 16, 128}));
  EXPECT_EQ(out.lengths.shape(), (Shape{1, 16, 128}));
  EXPECT_EQ(out.hidden.shape(), (Shape{1, 128, 512}));
  EXPECT_EQ(out.probabilities.shape(), (Shape{1, 16, 128}));
  for (double p : out.probabilities.data()) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  for (double l : out.lengths.data()) {
    EXPECT_GE(l, 0.0);
    EXPECT_LT(l, 1.0);
  }
}

TEST(Model, WrongInputShapeRejected) {
  CapsuleSed model(tiny_config(), 1);
  Rng rng(1);
  EXPECT_THROW(model.forward(Tensor::zeros({1, 1, 15, 8}), Mode::Train, rng), ShapeError);
  EXPECT_THROW(model.forward(Tensor::zeros({1, 2, 16, 8}), Mode::Train, rng), ShapeError);
}

TEST(Model, ZeroInputGivesZeroFeaturesAndCapsules) {
  CapsuleSed model(tiny_config(), 2);
  set_identity_stats(model);
  Rng rng(1);
  auto h = model.feature_detector(Tensor::zeros({2, 1, 16, 8}), Mode::Eval, rng);
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
  auto u = model.primary_caps(h);
  EXPECT_EQ(u.shape(), (Shape{16, 2, 4}));
  for (double v : u.data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, FeatureDetectorIsTimeShiftEquivariant) {
  auto config = tiny_config();
  config.frames = 24;
  CapsuleSed model(config, 3);
  set_identity_stats(model);
  Rng rng(2);
  auto x = random_tensor({1, 1, 16, 24}, rng, -1, 1, false);
  std::vector<double> shifted(x.numel(), 0.0);
  for (std::size_t f = 0; f < 16; ++f)
    for (std::size_t t = 1; t < 24; ++t) shifted[f * 24 + t] = x.data()[f * 24 + t - 1];
  auto a = model.feature_detector(x, Mode::Eval, rng);
  auto b = model.feature_detector(Tensor::from({1, 1, 16, 24}, shifted), Mode::Eval, rng);
  // four 3x3 layers see two frames past each side; stay clear of both edges
  for (std::size_t m = 0; m < 8; ++m)
    for (std::size_t t = 6; t < 18; ++t) EXPECT_NEAR(b.at({0, m, 0, t + 1}), a.at({0, m, 0, t}), 1e-12);
}

TEST(Model, PrimaryCapsuleOrderingIsBandThenChannel) {
  auto config = tiny_config();
  config.bands = 32;  // two pooled bands
  CapsuleSed model(config, 4);
  Rng rng(3);
  auto h = random_tensor({1, 8, 2, 8}, rng, -1, 1, false);
  auto u = model.primary_caps(h);
  auto p = conv2d(h, model.parameter("primary.weight"), model.parameter("primary.bias"));
  // capsule i = band * C + channel holds maps channel * D .. channel * D + D - 1
  const std::size_t band = 1, channel = 1, frame = 5, i = band * 2 + channel;
  std::vector<double> s(4);
  double sq = 0;
  for (std::size_t d = 0; d < 4; ++d) {
    s[d] = p.at({0, channel * 4 + d, band, frame});
    sq += s[d] * s[d];
  }
  for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(u.at({frame, i, d}), s[d] * std::sqrt(sq) / (1 + sq), 1e-12);
}

TEST(Model, EventCapsRouteFramesIndependently) {
  CapsuleSed model(tiny_config(), 5);
  Rng rng(4);
  auto u = squash(random_tensor({6, 2, 4}, rng, -1, 1, false));
  auto full = model.event_caps(u).outputs;
  std::vector<double> only(u.numel(), 0.0);
  const std::size_t t = 3, per = 2 * 4;
  std::copy_n(u.data().begin() + t * per, per, only.begin() + t * per);
  auto isolated = model.event_caps(Tensor::from({6, 2, 4}, only)).outputs;
  const std::size_t out_per = 3 * 16;
  for (std::size_t i = 0; i < out_per; ++i) EXPECT_EQ(isolated.data()[t * out_per + i], full.data()[t * out_per + i]);

  std::vector<double> twin(u.data().begin(), u.data().end());
  std::copy_n(u.data().begin() + t * per, per, twin.begin() + (t + 1) * per);
  auto dup = model.event_caps(Tensor::from({6, 2, 4}, twin)).outputs;
  for (std::size_t i = 0; i < out_per; ++i) EXPECT_EQ(dup.data()[t * out_per + i], dup.data()[(t + 1) * out_per + i]);
}

TEST(Model, LengthsMatchRecomputedNorms) {
  CapsuleSed model(tiny_config(), 6);
  Rng rng(5);
  auto out = model.forward(random_tensor({2, 1, 16, 8}, rng, -1, 1, false), Mode::Train, rng);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t t = 0; t < 8; ++t) {
        double sq = 0;
        for (std::size_t d = 0; d < 16; ++d) sq += std::pow(out.capsules.at({b, d, k, t}), 2);
        EXPECT_NEAR(out.lengths.at({b, k, t}), std::sqrt(sq + kNormEpsilon), 1e-15);
        EXPECT_LT(out.lengths.at({b, k, t}), 1.0);
      }
}

TEST(Gru, MatchesScalarEquations) {
  Rng rng(6);
  const std::size_t in = 3, h = 2, steps = 3;
  GruWeights w{random_tensor({3 * h, in}, rng), random_tensor({3 * h, h}, rng), random_tensor({3 * h}, rng),
               random_tensor({3 * h}, rng)};
  auto x = random_tensor({1, steps, in}, rng);
  auto y = gru(x, w);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> state(h, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    auto gate = [&](std::size_t row, bool input_side) {
      double acc = input_side ? w.b_ih.data()[row] : w.b_hh.data()[row];
      if (input_side)
        for (std::size_t j = 0; j < in; ++j) acc += w.w_ih.at({row, j}) * x.at({0, t, j});
      else
        for (std::size_t j = 0; j < h; ++j) acc += w.w_hh.at({row, j}) * state[j];
      return acc;
    };
    std::vector<double> next(h);
    for (std::size_t u = 0; u < h; ++u) {
      const double r = sig(gate(u, true) + gate(u, false));
      const double z = sig(gate(h + u, true) + gate(h + u, false));
      const double n = std::tanh(gate(2 * h + u, true) + r * gate(2 * h + u, false));
      next[u] = (1 - z) * n + z * state[u];
    }
    state = next;
    for (std::size_t u = 0; u < h; ++u) EXPECT_NEAR(y.at({0, t, u}), state[u], 1e-12);
  }
}

TEST(Gru, BidirectionalSymmetry) {
  Rng rng(7);
  const std::size_t in = 5, h = 3, steps = 6;
  auto make = [&] {
    return GruWeights{random_tensor({3 * h, in}, rng), random_tensor({3 * h, h}, rng), random_tensor({3 * h}, rng),
                      random_tensor({3 * h}, rng)};
  };
  auto fwd = make(), bwd = make();
  auto x = random_tensor({2, steps, in}, rng);
  std::vector<double> rev(x.numel());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < in; ++j) rev[(b * steps + t) * in + j] = x.at({b, steps - 1 - t, j});
  auto a = bidirectional_gru(x, fwd, bwd);
  auto r = bidirectional_gru(Tensor::from({2, steps, in}, rev), bwd, fwd);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t u = 0; u < h; ++u) {
        EXPECT_NEAR(r.at({b, steps - 1 - t, u}), a.at({b, t, h + u}), 1e-12);
        EXPECT_NEAR(r.at({b, steps - 1 - t, h + u}), a.at({b, t, u}), 1e-12);
      }
}

TEST(JointLoss, PerfectPredictionIsNearZero) {
  auto config = tiny_config();
  EventRoll y(3, 4);
  y.set(0, 1);
  y.set(2, 3);
  std::vector<double> p(12), l(12);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t t = 0; t < 4; ++t) {
      p[k * 4 + t] = y.active(k, t) ? 1.0 : 0.0;
      l[k * 4 + t] = y.active(k, t) ? 0.9 : 0.1;
    }
  std::vector<EventRoll> targets{y};
  auto loss = joint_loss(Tensor::from({1, 3, 4}, p), Tensor::from({1, 3, 4}, l), targets, {}, config);
  EXPECT_LE(loss.total.item(), 1e-5);
  EXPECT_EQ(loss.margin, 0.0);
}

TEST(JointLoss, HalfProbabilitiesGiveLogTwo) {
  auto config = tiny_config();
  Rng rng(8);
  std::vector<EventRoll> targets{random_roll(3, 5, rng), random_roll(3, 5, rng)};
  auto lengths = random_tensor({2, 3, 5}, rng, 0.0, 1.0, false);
  auto loss = joint_loss(Tensor::full({2, 3, 5}, 0.5), lengths, targets, {}, config);
  EXPECT_NEAR(loss.bce, std::numbers::ln2, 1e-12);
  EXPECT_NEAR(loss.total.item(), 0.7 * std::numbers::ln2 + 0.3 * loss.margin, 1e-12);
}

TEST(JointLoss, WeightsDegenerateToStandaloneTerms) {
  Rng rng(9);
  std::vector<EventRoll> targets{random_roll(3, 6, rng)};
  auto probs = random_tensor({1, 3, 6}, rng, 0.01, 0.99, false);
  auto lengths = random_tensor({1, 3, 6}, rng, 0.0, 0.99, false);
  auto config = tiny_config();
  config.bce_weight = 1.0;
  config.margin_weight = 0.0;
  const double bce_only = joint_loss(probs, lengths, targets, {}, config).total.item();
  config.bce_weight = 0.0;
  config.margin_weight = 1.0;
  const double margin_only = joint_loss(probs, lengths, targets, {}, config).total.item();

  double bce = 0, margin = 0;
  for (std::size_t t = 0; t < 6; ++t) {
    std::vector<double> lk, yk;
    for (std::size_t k = 0; k < 3; ++k) {
      const double p = probs.at({0, k, t}), y = targets[0].active(k, t);
      bce -= y * std::log(p) + (1 - y) * std::log(1 - p);
      lk.push_back(lengths.at({0, k, t}));
      yk.push_back(y);
    }
    margin += margin_loss(Tensor::from({3}, lk), yk).item();
  }
  EXPECT_NEAR(bce_only, bce / 18, 1e-12);
  EXPECT_NEAR(margin_only, margin / 6, 1e-12);
}

TEST(JointLoss, MaskedFramesExcluded) {
  Rng rng(10);
  auto config = tiny_config();
  std::vector<EventRoll> targets{random_roll(3, 6, rng)};
  auto probs = random_tensor({1, 3, 6}, rng, 0.01, 0.99, false);
  auto lengths = random_tensor({1, 3, 6}, rng, 0.0, 0.99, false);
  std::vector<FrameMask> masks{{1, 1, 1, 1, 0, 0}};
  const double masked = joint_loss(probs, lengths, targets, masks, config).total.item();

  auto first4 = [](const Tensor& t) { return slice(t, 2, 0, 4); };
  EventRoll y4(3, 4);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t t = 0; t < 4; ++t) y4.set(k, t, targets[0].active(k, t));
  std::vector<EventRoll> t4{y4};
  EXPECT_NEAR(masked, joint_loss(first4(probs), first4(lengths), t4, {}, config).total.item(), 1e-12);

  std::vector<FrameMask> none{FrameMask(6, 0)};
  EXPECT_THROW(joint_loss(probs, lengths, targets, none, config), std::invalid_argument);
}

TEST(Model, EndToEndGradientCheck) {
  const auto start = std::chrono::steady_clock::now();
  CapsuleSed model(tiny_config(), 11);
  Rng data_rng(12);
  auto x = random_tensor({2, 1, 16, 8}, data_rng, -1, 1, false);
  std::vector<EventRoll> targets{random_roll(3, 8, data_rng), random_roll(3, 8, data_rng)};
  std::vector<FrameMask> masks{FrameMask(8, 1), FrameMask{1, 1, 1, 1, 1, 1, 0, 0}};
  auto loss = [&] {
    Rng dropout_rng(13);  // same dropout mask on every evaluation
    auto out = model.forward(x, Mode::Train, dropout_rng);
    return joint_loss(out.probabilities, out.lengths, targets, masks, model.config()).total;
  };
  Rng pick(14);
  std::size_t checked = 0;
  for (auto& p : model.parameters()) {
    auto report = gradient_check(loss, {p.value}, 4, pick);
    EXPECT_LE(report.max_relative_error, 1e-3) << p.name;
    checked += report.checked;
  }
  EXPECT_GE(checked, 50u);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::minutes(2));
}

TEST(Model, SeedDeterminism) {
  CapsuleSed a(tiny_config(), 21), b(tiny_config(), 21), c(tiny_config(), 22);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(values(a.parameters()[i].value), values(b.parameters()[i].value));
  }
  EXPECT_NE(values(a.parameter("event.weight")), values(c.parameter("event.weight")));
  Rng r1(1), r2(1), data(2);
  auto x = random_tensor({2, 1, 16, 8}, data, -1, 1, false);
  EXPECT_EQ(values(a.forward(x, Mode::Train, r1).probabilities), values(b.forward(x, Mode::Train, r2).probabilities));
}
