#pragma once

#include <optional>
#include <span>
#include <vector>

#include "capsed/types.hpp"

namespace capsed {

inline constexpr double kMinThreshold = 0.5;
inline constexpr double kMaxThreshold = 0.9;

/// Candidate thresholds for the validation search.
struct ThresholdConfig {
  std::vector<double> candidates;

  /// 0.50, 0.55, ..., 0.90
  static ThresholdConfig default_grid();
  /// Throws unless the list is nonempty, strictly ascending and inside [0.5, 0.9].
  void validate() const;
};

/// Cell is active iff probability >= threshold.
EventRoll binarize(const ActivityProbabilities& probs, double threshold);

struct ThresholdChoice {
  double threshold = kMinThreshold;
  std::optional<double> error_rate;  // frame-level ER at the chosen threshold
  double f1 = 0.0;                   // frame-level F1 at the chosen threshold
};

/// Picks the candidate minimizing frame-level ER on the validation clips;
/// ties go to higher frame F1, then to the lower threshold.
ThresholdChoice select_threshold(std::span<const ActivityProbabilities> probs, std::span<const EventRoll> references,
                                 const ThresholdConfig& config = ThresholdConfig::default_grid(),
                                 std::span<const FrameMask> masks = {});

}  // namespace capsed
