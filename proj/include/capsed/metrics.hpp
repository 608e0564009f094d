#pragma once

#include <iosfwd>
#include <optional>
#include <span>

#include "capsed/types.hpp"

namespace capsed {

/// One second at the 40 ms frame duration.
inline constexpr std::size_t kSecondSegmentFrames = 25;

/// Counts accumulated over segments. S, D and I are summed per segment:
/// S = min(FN, FP), D = max(0, FN - FP), I = max(0, FP - FN).
struct SegmentStats {
  std::size_t tp = 0, fp = 0, fn = 0;
  std::size_t reference_active = 0;  // N
  std::size_t substitutions = 0, deletions = 0, insertions = 0;
  std::size_t segments = 0;

  static SegmentStats of_segment(std::size_t tp, std::size_t fp, std::size_t fn);
  SegmentStats& operator+=(const SegmentStats& other);
  friend bool operator==(const SegmentStats&, const SegmentStats&) = default;
};

struct SegmentScore {
  SegmentStats totals;
  /// Empty when the reference has no active cells (ER undefined).
  std::optional<double> error_rate;
  double f1 = 0.0;
  /// Set when 2TP + FP + FN = 0; f1 is then reported as 1.
  bool f1_degenerate = false;
};

SegmentScore score(const SegmentStats& totals);

/// A class is active in a segment iff it is active in at least one valid
/// frame of it. The trailing partial segment is kept; segments made only of
/// masked frames are dropped. An empty mask means every frame is valid.
EventRoll segment_rollup(const EventRoll& roll, std::size_t segment_frames, std::span<const std::uint8_t> mask = {});

SegmentStats accumulate(const EventRoll& reference, const EventRoll& prediction, std::size_t segment_frames,
                        std::span<const std::uint8_t> mask = {});

SegmentScore evaluate(const EventRoll& reference, const EventRoll& prediction, std::size_t segment_frames,
                      std::span<const std::uint8_t> mask = {});

/// Micro-average over many clips: statistics are summed over every segment
/// of every clip before a single division. `masks` may be empty.
SegmentScore evaluate(std::span<const EventRoll> references, std::span<const EventRoll> predictions,
                      std::size_t segment_frames, std::span<const FrameMask> masks = {});

struct MetricReport {
  SegmentScore frame;
  SegmentScore second;
};

MetricReport evaluate_report(std::span<const EventRoll> references, std::span<const EventRoll> predictions,
                             std::span<const FrameMask> masks = {});

/// Human-readable summary, F1 as percent.
void write_report(std::ostream& os, const MetricReport& report, std::optional<double> threshold = std::nullopt);
/// Tab-separated "metric value segment_length" rows with a header.
void write_report_table(std::ostream& os, const MetricReport& report);

}  // namespace capsed
