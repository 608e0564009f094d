#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "capsed/features.hpp"

namespace capsed {

NormalizationStats fit_normalizer(std::span<const FeatureMatrix> train) {
  if (train.empty()) throw std::invalid_argument("fit_normalizer: no training features");
  const std::size_t bands = train.front().bands;
  std::vector<double> sum(bands, 0.0);
  std::size_t count = 0;
  for (const auto& m : train) {
    if (m.bands != bands) throw std::invalid_argument("fit_normalizer: band count differs between clips");
    for (std::size_t f = 0; f < bands; ++f)
      for (std::size_t t = 0; t < m.frames; ++t) sum[f] += m.at(f, t);
    count += m.frames;
  }
  if (count == 0) throw std::invalid_argument("fit_normalizer: no frames");
  NormalizationStats stats{std::vector<double>(bands), std::vector<double>(bands)};
  for (std::size_t f = 0; f < bands; ++f) stats.mean[f] = sum[f] / static_cast<double>(count);
  // second pass keeps the variance accurate for large offsets
  std::vector<double> sq(bands, 0.0);
  for (const auto& m : train)
    for (std::size_t f = 0; f < bands; ++f)
      for (std::size_t t = 0; t < m.frames; ++t) {
        const double d = m.at(f, t) - stats.mean[f];
        sq[f] += d * d;
      }
  for (std::size_t f = 0; f < bands; ++f) {
    stats.std[f] = std::max(std::sqrt(sq[f] / static_cast<double>(count)), kStdFloor);
  }
  return stats;
}

FeatureMatrix apply_normalizer(const NormalizationStats& stats, const FeatureMatrix& features) {
  if (stats.mean.size() != features.bands || stats.std.size() != features.bands) {
    throw std::invalid_argument("apply_normalizer: statistics cover " + std::to_string(stats.mean.size()) +
                                " bands, features have " + std::to_string(features.bands));
  }
  FeatureMatrix out = features;
  for (std::size_t f = 0; f < out.bands; ++f)
    for (std::size_t t = 0; t < out.frames; ++t) out.at(f, t) = (out.at(f, t) - stats.mean[f]) / stats.std[f];
  return out;
}

}  // namespace capsed
