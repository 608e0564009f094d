#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "capsed/types.hpp"

namespace capsed::testing {

/// Literal cell-by-cell counting over (segment, class), independent of the
/// library's rollup and accumulation code.
struct BruteCounts {
  long tp = 0, fp = 0, fn = 0, n = 0, s = 0, d = 0, i = 0;
};

inline BruteCounts brute_force_counts(const EventRoll& ref, const EventRoll& est, std::size_t seg,
                                      const std::vector<std::uint8_t>& mask = {}) {
  BruteCounts c;
  const std::size_t frames = ref.frames();
  for (std::size_t start = 0; start < frames; start += seg) {
    bool any_valid = false;
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < ref.classes(); ++k) {
      bool r = false, e = false;
      for (std::size_t t = start; t < start + seg && t < frames; ++t) {
        if (!mask.empty() && !mask[t]) continue;
        any_valid = true;
        r = r || ref.active(k, t);
        e = e || est.active(k, t);
      }
      if (r && e) ++tp;
      if (!r && e) ++fp;
      if (r && !e) ++fn;
    }
    if (!any_valid) continue;
    c.tp += tp;
    c.fp += fp;
    c.fn += fn;
    c.n += tp + fn;
    c.s += std::min(fn, fp);
    c.d += std::max(0L, fn - fp);
    c.i += std::max(0L, fp - fn);
  }
  return c;
}

inline EventRoll random_roll(std::size_t k, std::size_t t, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution on(p);
  EventRoll roll(k, t);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < t; ++b)
      if (on(rng)) roll.set(a, b);
  return roll;
}

}  // namespace capsed::testing
