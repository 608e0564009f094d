#include <cmath>

#include "capsed/tensor.hpp"

namespace capsed {

namespace {

struct ChannelLayout {
  std::size_t outer, channels, inner;
  std::size_t per_channel() const { return outer * inner; }
  std::size_t index(std::size_t o, std::size_t c, std::size_t i) const {
    return (o * channels + c) * inner + i;
  }
};

ChannelLayout channel_layout(const Tensor& x) {
  switch (x.rank()) {
    case 2:
      return {x.dim(0), x.dim(1), 1};
    case 3:
      return {1, x.dim(0), x.dim(1) * x.dim(2)};
    case 4:
      return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    default:
      throw ShapeError("batchnorm: unsupported input rank for " + to_string(x.shape()));
  }
}

}  // namespace

Tensor batchnorm(const Tensor& input, const Tensor& scale, const Tensor& shift,
                 RunningStats& stats, Mode mode) {
  const ChannelLayout L = channel_layout(input);
  const std::size_t C = L.channels;
  if (scale.numel() != C || shift.numel() != C) {
    throw ShapeError("batchnorm: scale/shift must have " + std::to_string(C) + " entries");
  }
  auto x = input.data();
  std::vector<double> mu(C), inv_std(C);
  if (mode == Mode::Train) {
    const double n = static_cast<double>(L.per_channel());
    std::vector<double> var(C);
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < L.outer; ++o)
        for (std::size_t i = 0; i < L.inner; ++i) s += x[L.index(o, c, i)];
      mu[c] = s / n;
      double v = 0.0;
      for (std::size_t o = 0; o < L.outer; ++o)
        for (std::size_t i = 0; i < L.inner; ++i) {
          const double d = x[L.index(o, c, i)] - mu[c];
          v += d * d;
        }
      var[c] = v / n;
      inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEpsilon);
    }
    if (!stats.initialized) {
      stats.mean = mu;
      stats.var = var;
      stats.initialized = true;
    } else {
      if (stats.mean.size() != C) throw ShapeError("batchnorm: running stats channel mismatch");
      for (std::size_t c = 0; c < C; ++c) {
        stats.mean[c] = (1.0 - kBatchNormMomentum) * stats.mean[c] + kBatchNormMomentum * mu[c];
        stats.var[c] = (1.0 - kBatchNormMomentum) * stats.var[c] + kBatchNormMomentum * var[c];
      }
    }
  } else {
    if (!stats.initialized) throw std::logic_error("batchnorm: eval mode needs initialized running statistics");
    if (stats.mean.size() != C) throw ShapeError("batchnorm: running stats channel mismatch");
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.mean[c];
      inv_std[c] = 1.0 / std::sqrt(stats.var[c] + kBatchNormEpsilon);
    }
  }

  auto gamma = scale.data();
  auto beta = shift.data();
  std::vector<double> xhat(x.size());
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < L.outer; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t k = L.index(o, c, i);
        xhat[k] = (x[k] - mu[c]) * inv_std[c];
        out[k] = gamma[c] * xhat[k] + beta[c];
      }

  const bool batch_stats = mode == Mode::Train;
  return Tensor::record(
      input.shape(), std::move(out), {input, scale, shift},
      [L, scale, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g, GradInputs gi) {
        auto gamma = scale.data();
        const double n = static_cast<double>(L.per_channel());
        for (std::size_t c = 0; c < L.channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t o = 0; o < L.outer; ++o)
            for (std::size_t i = 0; i < L.inner; ++i) {
              const std::size_t k = L.index(o, c, i);
              sum_g += g[k];
              sum_gx += g[k] * xhat[k];
            }
          if (gi[1]) gi[1][c] += sum_gx;
          if (gi[2]) gi[2][c] += sum_g;
          if (!gi[0]) continue;
          const double f = gamma[c] * inv_std[c];
          for (std::size_t o = 0; o < L.outer; ++o)
            for (std::size_t i = 0; i < L.inner; ++i) {
              const std::size_t k = L.index(o, c, i);
              if (batch_stats) {
                gi[0][k] += f * (g[k] - sum_g / n - xhat[k] * sum_gx / n);
              } else {
                gi[0][k] += f * g[k];
              }
            }
        }
      });
}

Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) return input;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto x = input.data();
  std::vector<double> mask(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = uniform(rng) < rate ? 0.0 : keep_scale;
    out[i] = x[i] * mask[i];
  }
  return Tensor::record(input.shape(), std::move(out), {input},
                        [mask = std::move(mask)](std::span<const double> g, GradInputs gi) {
                          for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * mask[i];
                        });
}

}  // namespace capsed
