#include <algorithm>
#include <stdexcept>
#include <string>

#include "capsed/features.hpp"

namespace capsed {

namespace {

Sample cut(const FeatureMatrix& features, const EventRoll& targets, std::size_t start, std::size_t window) {
  Sample s;
  s.start = start;
  s.features = FeatureMatrix(features.bands, window);
  s.targets = EventRoll(targets.classes(), window);
  s.mask.assign(window, 0);
  const std::size_t end = std::min(features.frames, start + window);
  for (std::size_t t = start; t < end; ++t) {
    const std::size_t local = t - start;
    s.mask[local] = 1;
    for (std::size_t f = 0; f < features.bands; ++f) s.features.at(f, local) = features.at(f, t);
    for (std::size_t k = 0; k < targets.classes(); ++k) s.targets.set(k, local, targets.active(k, t));
  }
  return s;
}

}  // namespace

std::vector<Sample> windowize(const FeatureMatrix& features, const EventRoll& targets, std::size_t window,
                              Mode mode, std::size_t hop) {
  const std::size_t total = features.frames;
  if (total < 1) throw std::invalid_argument("windowize: clip has no frames");
  if (targets.frames() != total) {
    throw std::invalid_argument("windowize: " + std::to_string(total) + " feature frames but " +
                                std::to_string(targets.frames()) + " target frames");
  }
  if (window < 1) throw std::invalid_argument("windowize: window length must be positive");
  if (mode == Mode::Eval && hop != window) throw std::invalid_argument("windowize: eval hop must equal the window");
  if (hop < 1 || hop > window) throw std::invalid_argument("windowize: hop must lie in [1, window]");

  std::vector<Sample> out;
  if (mode == Mode::Eval || total <= window) {
    for (std::size_t start = 0; start < total; start += window) out.push_back(cut(features, targets, start, window));
    return out;
  }
  std::size_t start = 0;
  for (; start + window <= total; start += hop) out.push_back(cut(features, targets, start, window));
  if (out.back().start + window < total) out.push_back(cut(features, targets, total - window, window));
  return out;
}

Tensor batch_features(std::span<const Sample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("batch_features: empty batch");
  const std::size_t f = samples.front()->features.bands, t = samples.front()->features.frames;
  std::vector<double> values;
  values.reserve(samples.size() * f * t);
  for (const Sample* s : samples) {
    if (s->features.bands != f || s->features.frames != t) {
      throw ShapeError("batch_features: samples differ in shape");
    }
    values.insert(values.end(), s->features.values.begin(), s->features.values.end());
  }
  return Tensor::from({samples.size(), 1, f, t}, std::move(values));
}

}  // namespace capsed
