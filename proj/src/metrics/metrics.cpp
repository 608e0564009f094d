#include "capsed/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace capsed {

namespace {

void require_same_shape(const EventRoll& a, const EventRoll& b) {
  if (a.classes() != b.classes() || a.frames() != b.frames()) {
    throw std::invalid_argument("evaluate: reference is " + std::to_string(a.classes()) + "x" +
                                std::to_string(a.frames()) + " but prediction is " +
                                std::to_string(b.classes()) + "x" + std::to_string(b.frames()));
  }
}

bool valid(std::span<const std::uint8_t> mask, std::size_t t) { return mask.empty() || mask[t] != 0; }

}  // namespace

SegmentStats SegmentStats::of_segment(std::size_t tp, std::size_t fp, std::size_t fn) {
  SegmentStats s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.reference_active = tp + fn;
  s.substitutions = std::min(fn, fp);
  s.deletions = fn > fp ? fn - fp : 0;
  s.insertions = fp > fn ? fp - fn : 0;
  s.segments = 1;
  return s;
}

SegmentStats& SegmentStats::operator+=(const SegmentStats& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  reference_active += o.reference_active;
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  segments += o.segments;
  return *this;
}

SegmentScore score(const SegmentStats& t) {
  SegmentScore s;
  s.totals = t;
  if (t.reference_active > 0) {
    s.error_rate = static_cast<double>(t.substitutions + t.deletions + t.insertions) /
                   static_cast<double>(t.reference_active);
  }
  const std::size_t denom = 2 * t.tp + t.fp + t.fn;
  if (denom == 0) {
    s.f1 = 1.0;
    s.f1_degenerate = true;
  } else {
    s.f1 = static_cast<double>(2 * t.tp) / static_cast<double>(denom);
  }
  return s;
}

EventRoll segment_rollup(const EventRoll& roll, std::size_t segment_frames, std::span<const std::uint8_t> mask) {
  if (segment_frames < 1) throw std::invalid_argument("segment_rollup: segment length must be >= 1");
  if (!mask.empty() && mask.size() != roll.frames()) {
    throw std::invalid_argument("segment_rollup: mask length does not match frame count");
  }
  std::vector<std::size_t> kept;
  const std::size_t total = (roll.frames() + segment_frames - 1) / segment_frames;
  for (std::size_t seg = 0; seg < total; ++seg) {
    const std::size_t end = std::min(roll.frames(), (seg + 1) * segment_frames);
    for (std::size_t t = seg * segment_frames; t < end; ++t) {
      if (valid(mask, t)) {
        kept.push_back(seg);
        break;
      }
    }
  }
  EventRoll out(roll.classes(), kept.size());
  for (std::size_t s = 0; s < kept.size(); ++s) {
    const std::size_t begin = kept[s] * segment_frames;
    const std::size_t end = std::min(roll.frames(), begin + segment_frames);
    for (std::size_t k = 0; k < roll.classes(); ++k)
      for (std::size_t t = begin; t < end; ++t)
        if (valid(mask, t) && roll.active(k, t)) {
          out.set(k, s);
          break;
        }
  }
  return out;
}

SegmentStats accumulate(const EventRoll& reference, const EventRoll& prediction, std::size_t segment_frames,
                        std::span<const std::uint8_t> mask) {
  require_same_shape(reference, prediction);
  const EventRoll ref = segment_rollup(reference, segment_frames, mask);
  const EventRoll est = segment_rollup(prediction, segment_frames, mask);
  SegmentStats total;
  for (std::size_t s = 0; s < ref.frames(); ++s) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < ref.classes(); ++k) {
      const bool r = ref.active(k, s), e = est.active(k, s);
      tp += r && e;
      fp += !r && e;
      fn += r && !e;
    }
    total += SegmentStats::of_segment(tp, fp, fn);
  }
  return total;
}

SegmentScore evaluate(const EventRoll& reference, const EventRoll& prediction, std::size_t segment_frames,
                      std::span<const std::uint8_t> mask) {
  return score(accumulate(reference, prediction, segment_frames, mask));
}

SegmentScore evaluate(std::span<const EventRoll> references, std::span<const EventRoll> predictions,
                      std::size_t segment_frames, std::span<const FrameMask> masks) {
  if (references.size() != predictions.size()) {
    throw std::invalid_argument("evaluate: reference and prediction clip counts differ");
  }
  if (!masks.empty() && masks.size() != references.size()) {
    throw std::invalid_argument("evaluate: mask count differs from clip count");
  }
  SegmentStats total;
  for (std::size_t c = 0; c < references.size(); ++c) {
    std::span<const std::uint8_t> mask;
    if (!masks.empty()) mask = masks[c];
    total += accumulate(references[c], predictions[c], segment_frames, mask);
  }
  return score(total);
}

MetricReport evaluate_report(std::span<const EventRoll> references, std::span<const EventRoll> predictions,
                             std::span<const FrameMask> masks) {
  return {evaluate(references, predictions, 1, masks),
          evaluate(references, predictions, kSecondSegmentFrames, masks)};
}

namespace {

std::string format_er(const SegmentScore& s) {
  if (!s.error_rate) return "undefined";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *s.error_rate;
  return os.str();
}

}  // namespace

void write_report(std::ostream& os, const MetricReport& report, std::optional<double> threshold) {
  auto line = [&](const char* name, const SegmentScore& s) {
    os << std::left << std::setw(10) << name << " ER " << std::setw(10) << format_er(s) << " F1 " << std::fixed
       << std::setprecision(2) << 100.0 * s.f1 << '%';
    if (s.f1_degenerate) os << " (no reference and no prediction)";
    os << '\n';
  };
  if (threshold) os << "threshold " << std::fixed << std::setprecision(2) << *threshold << '\n';
  line("frame", report.frame);
  line("second", report.second);
}

void write_report_table(std::ostream& os, const MetricReport& report) {
  os << "metric\tvalue\tsegment_length\n";
  auto f1 = [](const SegmentScore& s) {
    std::ostringstream v;
    v << std::setprecision(10) << s.f1;
    return v.str();
  };
  auto er = [](const SegmentScore& s) {
    if (!s.error_rate) return std::string("undefined");
    std::ostringstream v;
    v << std::setprecision(10) << *s.error_rate;
    return v.str();
  };
  os << "ER_frame\t" << er(report.frame) << "\tframe\n";
  os << "F1_frame\t" << f1(report.frame) << "\tframe\n";
  os << "ER_second\t" << er(report.second) << "\tsecond\n";
  os << "F1_second\t" << f1(report.second) << "\tsecond\n";
}

}  // namespace capsed
