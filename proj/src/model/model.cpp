#include "capsed/model.hpp"

#include <cmath>
#include <stdexcept>

namespace capsed {

namespace {

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

void expect_frames(const Tensor& t, std::size_t axis, std::size_t frames, const char* where) {
  if (t.dim(axis) != frames) {
    throw std::logic_error(std::string(where) + ": time axis changed to " + std::to_string(t.dim(axis)) +
                           " from " + std::to_string(frames));
  }
}

}  // namespace

std::size_t ModelConfig::pooled_bands() const {
  std::size_t f = bands;
  for (auto p : pools) f /= p;
  return f;
}

std::size_t ModelConfig::primary_capsules() const { return pooled_bands() * primary_channels; }

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw std::invalid_argument(std::string("model config: ") + what + " must be positive");
  };
  positive(bands, "bands");
  positive(frames, "frames");
  positive(conv_channels, "conv_channels");
  positive(primary_channels, "primary_channels");
  positive(primary_dim, "primary_dim");
  positive(classes, "classes");
  positive(event_dim, "event_dim");
  positive(routing_iterations, "routing_iterations");
  positive(gru_hidden, "gru_hidden");
  positive(fc_hidden, "fc_hidden");
  if (pools.empty()) throw std::invalid_argument("model config: at least one conv layer required");
  std::size_t total_pool = 1;
  for (auto p : pools) {
    positive(p, "pool");
    total_pool *= p;
  }
  if (bands % total_pool != 0) {
    throw std::invalid_argument("model config: " + std::to_string(bands) + " bands not divisible by total pool " +
                                std::to_string(total_pool));
  }
  if (conv_kernel % 2 == 0 || primary_kernel % 2 == 0) {
    throw std::invalid_argument("model config: kernel sizes must be odd");
  }
  if (primary_channels * primary_dim != conv_channels) {
    throw std::invalid_argument("model config: primary channels x dim (" +
                                std::to_string(primary_channels * primary_dim) + ") must equal conv channels (" +
                                std::to_string(conv_channels) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must lie in [0, 1)");
  if (!(bce_weight >= 0.0 && margin_weight >= 0.0 && bce_weight + margin_weight > 0.0)) {
    throw std::invalid_argument("model config: loss weights must be nonnegative and not both zero");
  }
  margin.validate();
}

CapsuleSed::CapsuleSed(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  std::size_t in = 1;
  for (std::size_t l = 0; l < c.pools.size(); ++l) {
    const auto tag = std::to_string(l + 1);
    const double fan_in = static_cast<double>(in * c.conv_kernel * c.conv_kernel);
    params_.push_back({"conv" + tag + ".weight",
                       normal_param({c.conv_channels, in, c.conv_kernel, c.conv_kernel}, std::sqrt(2.0 / fan_in), rng)});
    params_.push_back({"conv" + tag + ".bias", Tensor::zeros({c.conv_channels}, true)});
    params_.push_back({"bn" + tag + ".scale", Tensor::full({c.conv_channels}, 1.0, true)});
    params_.push_back({"bn" + tag + ".shift", Tensor::zeros({c.conv_channels}, true)});
    in = c.conv_channels;
  }
  bn_stats_.resize(c.pools.size());

  const std::size_t maps = c.primary_channels * c.primary_dim;
  const double primary_fan = static_cast<double>(in * c.primary_kernel * c.primary_kernel);
  params_.push_back({"primary.weight", normal_param({maps, in, c.primary_kernel, c.primary_kernel},
                                                    std::sqrt(1.0 / primary_fan), rng)});
  params_.push_back({"primary.bias", Tensor::zeros({maps}, true)});

  params_.push_back({"event.weight", normal_param({c.primary_capsules(), c.classes, c.event_dim, c.primary_dim},
                                                  std::sqrt(2.0 / static_cast<double>(c.primary_dim + c.event_dim)),
                                                  rng)});

  const std::size_t h = c.gru_hidden, gru_in = c.classes * c.event_dim;
  const double gb = 1.0 / std::sqrt(static_cast<double>(h));
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = std::string("gru.") + dir;
    params_.push_back({p + ".w_ih", uniform_param({3 * h, gru_in}, gb, rng)});
    params_.push_back({p + ".w_hh", uniform_param({3 * h, h}, gb, rng)});
    params_.push_back({p + ".b_ih", uniform_param({3 * h}, gb, rng)});
    params_.push_back({p + ".b_hh", uniform_param({3 * h}, gb, rng)});
  }
  const double f1 = 1.0 / std::sqrt(static_cast<double>(2 * h));
  params_.push_back({"fc1.weight", uniform_param({c.fc_hidden, 2 * h}, f1, rng)});
  params_.push_back({"fc1.bias", uniform_param({c.fc_hidden}, f1, rng)});
  const double f2 = 1.0 / std::sqrt(static_cast<double>(c.fc_hidden));
  params_.push_back({"fc2.weight", uniform_param({c.classes, c.fc_hidden}, f2, rng)});
  params_.push_back({"fc2.bias", uniform_param({c.classes}, f2, rng)});
}

Tensor& CapsuleSed::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named " + name);
}

const Tensor& CapsuleSed::parameter(const std::string& name) const {
  return const_cast<CapsuleSed*>(this)->parameter(name);
}

GruWeights CapsuleSed::gru_weights(bool backward_direction) const {
  const std::string p = backward_direction ? "gru.bwd" : "gru.fwd";
  return {parameter(p + ".w_ih"), parameter(p + ".w_hh"), parameter(p + ".b_ih"), parameter(p + ".b_hh")};
}

void CapsuleSed::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Tensor CapsuleSed::feature_detector(const Tensor& x, Mode mode, Rng& rng) {
  const auto& c = config_;
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != c.bands) {
    throw ShapeError("feature_detector: expected [B x 1 x " + std::to_string(c.bands) + " x T], got " +
                     to_string(x.shape()));
  }
  const std::size_t frames = x.dim(3);
  Tensor h = x;
  for (std::size_t l = 0; l < c.pools.size(); ++l) {
    const auto tag = std::to_string(l + 1);
    h = conv2d(h, parameter("conv" + tag + ".weight"), parameter("conv" + tag + ".bias"));
    h = batchnorm(h, parameter("bn" + tag + ".scale"), parameter("bn" + tag + ".shift"), bn_stats_[l], mode);
    h = relu(h);
    if (c.pools[l] > 1) h = maxpool_freq(h, c.pools[l]);
    h = dropout(h, c.dropout, mode, rng);
    expect_frames(h, 3, frames, "feature_detector");
  }
  return h;
}

Tensor CapsuleSed::primary_caps(const Tensor& h) const {
  const auto& c = config_;
  if (h.rank() != 4 || h.dim(1) != c.conv_channels || h.dim(2) != c.pooled_bands()) {
    throw ShapeError("primary_caps: expected [B x " + std::to_string(c.conv_channels) + " x " +
                     std::to_string(c.pooled_bands()) + " x T], got " + to_string(h.shape()));
  }
  const std::size_t b = h.dim(0), fp = h.dim(2), t = h.dim(3);
  Tensor p = conv2d(h, parameter("primary.weight"), parameter("primary.bias"));
  p = reshape(p, {b, c.primary_channels, c.primary_dim, fp, t});
  p = permute(p, {0, 4, 3, 1, 2});
  return squash(reshape(p, {b * t, fp * c.primary_channels, c.primary_dim}));
}

RoutingResult CapsuleSed::event_caps(const Tensor& u, bool keep_trace) const {
  return route(predict_vectors(u, parameter("event.weight")), config_.routing_iterations, keep_trace);
}

std::pair<Tensor, Tensor> CapsuleSed::recurrent_head(const Tensor& v, std::size_t batch) const {
  const auto& c = config_;
  if (v.rank() != 3 || v.dim(1) != c.classes || v.dim(2) != c.event_dim || batch == 0 || v.dim(0) % batch != 0) {
    throw ShapeError("recurrent_head: unexpected capsule tensor " + to_string(v.shape()));
  }
  const std::size_t t = v.dim(0) / batch;
  Tensor m = reshape(v, {batch, t, c.classes * c.event_dim});
  Tensor hidden = bidirectional_gru(m, gru_weights(false), gru_weights(true));
  Tensor f = reshape(hidden, {batch * t, 2 * c.gru_hidden});
  f = relu(linear(f, parameter("fc1.weight"), parameter("fc1.bias")));
  f = sigmoid(linear(f, parameter("fc2.weight"), parameter("fc2.bias")));
  return {hidden, permute(reshape(f, {batch, t, c.classes}), {0, 2, 1})};
}

ModelOutput CapsuleSed::forward(const Tensor& x, Mode mode, Rng& rng, bool keep_trace) {
  const auto& c = config_;
  ModelOutput out;
  const std::size_t b = x.dim(0), t = x.dim(3);
  out.features = feature_detector(x, mode, rng);
  out.primary = primary_caps(out.features);
  auto routed = event_caps(out.primary, keep_trace);
  const Tensor& v = routed.outputs;
  out.routing = std::move(routed.trace);
  out.capsules = permute(reshape(v, {b, t, c.classes, c.event_dim}), {0, 3, 2, 1});
  out.lengths = permute(reshape(capsule_lengths(v), {b, t, c.classes}), {0, 2, 1});
  std::tie(out.hidden, out.probabilities) = recurrent_head(v, b);
  expect_frames(out.probabilities, 2, t, "forward");
  return out;
}

Tensor gru(const Tensor& x, const GruWeights& w, bool reverse) {
  if (x.rank() != 3) throw ShapeError("gru: expected [B x T x in], got " + to_string(x.shape()));
  const std::size_t b = x.dim(0), t = x.dim(1), in = x.dim(2), h = w.w_hh.dim(1);
  if (w.w_ih.dim(0) != 3 * h || w.w_ih.dim(1) != in || w.w_hh.dim(0) != 3 * h) {
    throw ShapeError("gru: weights do not match input width " + std::to_string(in));
  }
  Tensor gi = reshape(linear(reshape(x, {b * t, in}), w.w_ih, w.b_ih), {b, t, 3 * h});
  Tensor state = Tensor::zeros({b, h});
  std::vector<Tensor> outs(t);
  for (std::size_t s = 0; s < t; ++s) {
    const std::size_t step = reverse ? t - 1 - s : s;
    Tensor gx = reshape(slice(gi, 1, step, 1), {b, 3 * h});
    Tensor gh = linear(state, w.w_hh, w.b_hh);
    Tensor r = sigmoid(add(slice(gx, 1, 0, h), slice(gh, 1, 0, h)));
    Tensor z = sigmoid(add(slice(gx, 1, h, h), slice(gh, 1, h, h)));
    Tensor n = tanh(add(slice(gx, 1, 2 * h, h), mul(r, slice(gh, 1, 2 * h, h))));
    state = add(n, mul(z, sub(state, n)));
    outs[step] = state;
  }
  return stack(outs, 1);
}

Tensor bidirectional_gru(const Tensor& x, const GruWeights& forward, const GruWeights& backward) {
  return concat({gru(x, forward, false), gru(x, backward, true)}, 2);
}

LossBreakdown joint_loss(const Tensor& probabilities, const Tensor& lengths, std::span<const EventRoll> targets,
                         std::span<const FrameMask> masks, const ModelConfig& config) {
  if (probabilities.rank() != 3 || probabilities.shape() != lengths.shape()) {
    throw ShapeError("joint_loss: probabilities " + to_string(probabilities.shape()) + " and lengths " +
                     to_string(lengths.shape()) + " must both be [B x K x T]");
  }
  const std::size_t b = probabilities.dim(0), k = probabilities.dim(1), t = probabilities.dim(2);
  if (targets.size() != b) throw std::invalid_argument("joint_loss: one target roll per sample required");
  if (!masks.empty() && masks.size() != b) throw std::invalid_argument("joint_loss: one mask per sample required");

  std::vector<double> y(b * k * t), valid(b * k * t);
  std::size_t valid_frames = 0;
  for (std::size_t s = 0; s < b; ++s) {
    if (targets[s].classes() != k || targets[s].frames() != t) {
      throw ShapeError("joint_loss: target roll shape differs from the model output");
    }
    const bool masked = !masks.empty() && !masks[s].empty();
    if (masked && masks[s].size() != t) throw ShapeError("joint_loss: mask length differs from frame count");
    for (std::size_t f = 0; f < t; ++f) {
      const bool ok = !masked || masks[s][f] != 0;
      valid_frames += ok;
      for (std::size_t c = 0; c < k; ++c) {
        y[(s * k + c) * t + f] = targets[s].active(c, f) ? 1.0 : 0.0;
        valid[(s * k + c) * t + f] = ok ? 1.0 : 0.0;
      }
    }
  }
  if (valid_frames == 0) throw std::invalid_argument("joint_loss: every frame is masked");

  const double cells = static_cast<double>(valid_frames * k);
  std::vector<double> w_pos(y.size()), w_neg(y.size()), w_margin(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    w_pos[i] = -y[i] * valid[i] / cells;
    w_neg[i] = -(1.0 - y[i]) * valid[i] / cells;
    w_margin[i] = valid[i] / static_cast<double>(valid_frames);
  }
  const Tensor p = clamp(probabilities, kProbabilityClamp, 1.0 - kProbabilityClamp);
  const Tensor bce = add(weighted_sum(log(p), w_pos), weighted_sum(log(add_scalar(scale(p, -1.0), 1.0)), w_neg));
  const Tensor margin = weighted_sum(margin_loss_terms(lengths, y, config.margin), w_margin);

  LossBreakdown out;
  out.bce = bce.item();
  out.margin = margin.item();
  out.total = add(scale(bce, config.bce_weight), scale(margin, config.margin_weight));
  return out;
}

}  // namespace capsed
