#include "capsed/thresholding.hpp"

#include <limits>
#include <string>

#include "capsed/metrics.hpp"

namespace capsed {

ThresholdConfig ThresholdConfig::default_grid() {
  ThresholdConfig config;
  for (int step = 0; step <= 8; ++step) config.candidates.push_back((50.0 + 5.0 * step) / 100.0);
  return config;
}

void ThresholdConfig::validate() const {
  if (candidates.empty()) throw std::invalid_argument("threshold candidates must not be empty");
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!(candidates[i] >= kMinThreshold && candidates[i] <= kMaxThreshold)) {
      throw std::invalid_argument("threshold candidate " + std::to_string(candidates[i]) +
                                  " outside [0.5, 0.9]");
    }
    if (i > 0 && !(candidates[i] > candidates[i - 1])) {
      throw std::invalid_argument("threshold candidates must be strictly ascending");
    }
  }
}

EventRoll binarize(const ActivityProbabilities& probs, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("binarize: threshold must lie in (0, 1)");
  }
  EventRoll roll(probs.classes, probs.frames);
  for (std::size_t k = 0; k < probs.classes; ++k)
    for (std::size_t t = 0; t < probs.frames; ++t)
      if (probs.at(k, t) >= threshold) roll.set(k, t);
  return roll;
}

ThresholdChoice select_threshold(std::span<const ActivityProbabilities> probs, std::span<const EventRoll> references,
                                 const ThresholdConfig& config, std::span<const FrameMask> masks) {
  config.validate();
  if (probs.empty()) throw std::invalid_argument("select_threshold: empty validation set");
  if (probs.size() != references.size()) {
    throw std::invalid_argument("select_threshold: probability and reference clip counts differ");
  }
  constexpr double kUndefined = std::numeric_limits<double>::infinity();
  ThresholdChoice best;
  double best_er = kUndefined;
  bool have_best = false;
  for (double c : config.candidates) {
    std::vector<EventRoll> predictions;
    predictions.reserve(probs.size());
    for (const auto& p : probs) predictions.push_back(binarize(p, c));
    const SegmentScore s = evaluate(references, predictions, 1, masks);
    const double er = s.error_rate.value_or(kUndefined);
    // candidates ascend, so keeping the first of equals prefers the lower threshold
    if (!have_best || er < best_er || (er == best_er && s.f1 > best.f1)) {
      best = {c, s.error_rate, s.f1};
      best_er = er;
      have_best = true;
    }
  }
  return best;
}

}  // namespace capsed
