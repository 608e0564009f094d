#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "capsed/metrics.hpp"
#include "support/metric_oracle.hpp"

using namespace capsed;
using capsed::testing::brute_force_counts;
using capsed::testing::random_roll;

namespace {

EventRoll roll_of(std::size_t k, std::size_t t, std::initializer_list<std::pair<int, int>> cells) {
  EventRoll r(k, t);
  for (auto [a, b] : cells) r.set(a, b);
  return r;
}

}  // namespace

TEST(SegmentRollup, UnitSegmentIsIdentity) {
  std::mt19937_64 rng(1);
  auto r = random_roll(3, 40, 0.3, rng);
  EXPECT_EQ(segment_rollup(r, 1), r);
}

TEST(SegmentRollup, AnyFrameActivatesSegment) {
  auto r = roll_of(1, 25, {{0, 3}});
  auto s = segment_rollup(r, 25);
  ASSERT_EQ(s.frames(), 1u);
  EXPECT_TRUE(s.active(0, 0));
}

TEST(SegmentRollup, PartialTrailingSegmentKept) {
  EventRoll r(2, 128);
  r.set(1, 127);
  auto s = segment_rollup(r, kSecondSegmentFrames);
  EXPECT_EQ(s.frames(), 6u);
  EXPECT_TRUE(s.active(1, 5));
}

TEST(SegmentRollup, FullyMaskedSegmentsDropped) {
  EventRoll r(1, 50);
  r.set(0, 30);
  FrameMask mask(50, 1);
  for (std::size_t t = 25; t < 50; ++t) mask[t] = 0;
  auto s = segment_rollup(r, 25, mask);
  ASSERT_EQ(s.frames(), 1u);
  EXPECT_FALSE(s.active(0, 0));
}

TEST(SegmentRollup, RejectsZeroLength) { EXPECT_THROW(segment_rollup(EventRoll(1, 4), 0), std::invalid_argument); }

TEST(Evaluate, PerfectMatch) {
  std::mt19937_64 rng(2);
  auto r = random_roll(4, 60, 0.4, rng);
  r.set(0, 0);
  auto s = evaluate(r, r, 1);
  ASSERT_TRUE(s.error_rate);
  EXPECT_EQ(*s.error_rate, 0.0);
  EXPECT_EQ(s.f1, 1.0);
}

TEST(Evaluate, SubstitutionCase) {
  auto ref = roll_of(2, 1, {{0, 0}});
  auto est = roll_of(2, 1, {{1, 0}});
  auto s = evaluate(ref, est, 1);
  EXPECT_EQ(s.totals.fn, 1u);
  EXPECT_EQ(s.totals.fp, 1u);
  EXPECT_EQ(s.totals.substitutions, 1u);
  EXPECT_EQ(s.totals.deletions, 0u);
  EXPECT_EQ(s.totals.insertions, 0u);
  EXPECT_EQ(s.totals.reference_active, 1u);
  EXPECT_EQ(*s.error_rate, 1.0);
  EXPECT_EQ(s.f1, 0.0);
}

TEST(Evaluate, InsertionCase) {
  auto ref = roll_of(2, 1, {{0, 0}});
  auto est = roll_of(2, 1, {{0, 0}, {1, 0}});
  auto s = evaluate(ref, est, 1);
  EXPECT_EQ(s.totals.tp, 1u);
  EXPECT_EQ(s.totals.insertions, 1u);
  EXPECT_EQ(*s.error_rate, 1.0);
  EXPECT_DOUBLE_EQ(s.f1, 2.0 / 3.0);
}

TEST(Evaluate, NoReferenceLeavesErrorRateUndefined) {
  EventRoll ref(2, 10);
  auto est = roll_of(2, 10, {{0, 4}});
  auto s = evaluate(ref, est, 1);
  EXPECT_FALSE(s.error_rate.has_value());
  EXPECT_EQ(s.f1, 0.0);
  EXPECT_FALSE(s.f1_degenerate);
}

TEST(Evaluate, EmptyCorpusHasDegenerateF1) {
  EventRoll empty(2, 10);
  auto s = evaluate(empty, empty, 1);
  EXPECT_FALSE(s.error_rate.has_value());
  EXPECT_EQ(s.f1, 1.0);
  EXPECT_TRUE(s.f1_degenerate);
}

TEST(Evaluate, ShapeMismatchRejected) {
  EXPECT_THROW(evaluate(EventRoll(2, 10), EventRoll(3, 10), 1), std::invalid_argument);
  EXPECT_THROW(evaluate(EventRoll(2, 10), EventRoll(2, 9), 1), std::invalid_argument);
}

TEST(Evaluate, DecompositionInvariantsPerSegment) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto ref = random_roll(4, 20, 0.4, rng);
    auto est = random_roll(4, 20, 0.4, rng);
    for (std::size_t seg : {1u, 3u, 25u}) {
      auto t = accumulate(ref, est, seg);
      EXPECT_EQ(t.tp + t.fn, t.reference_active);
      EXPECT_EQ(t.substitutions + t.deletions, t.fn);
      EXPECT_EQ(t.substitutions + t.insertions, t.fp);
    }
  }
}

TEST(Evaluate, MatchesBruteForceOracle) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> classes(1, 4), frames(1, 20), seg(1, 6);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = classes(rng), t = frames(rng), s = seg(rng);
    auto ref = random_roll(k, t, density(rng), rng);
    auto est = random_roll(k, t, density(rng), rng);
    FrameMask mask;
    if (trial % 3 == 0) {
      mask.assign(t, 1);
      for (auto& m : mask) m = density(rng) < 0.8;
    }
    const auto b = brute_force_counts(ref, est, s, mask);
    const auto got = evaluate(ref, est, s, mask);
    ASSERT_EQ(static_cast<long>(got.totals.tp), b.tp);
    ASSERT_EQ(static_cast<long>(got.totals.fp), b.fp);
    ASSERT_EQ(static_cast<long>(got.totals.fn), b.fn);
    ASSERT_EQ(static_cast<long>(got.totals.substitutions), b.s);
    ASSERT_EQ(static_cast<long>(got.totals.deletions), b.d);
    ASSERT_EQ(static_cast<long>(got.totals.insertions), b.i);
    if (b.n == 0) {
      ASSERT_FALSE(got.error_rate);
    } else {
      ASSERT_NEAR(*got.error_rate, static_cast<double>(b.s + b.d + b.i) / b.n, 1e-12);
    }
    const long denom = 2 * b.tp + b.fp + b.fn;
    ASSERT_NEAR(got.f1, denom == 0 ? 1.0 : 2.0 * b.tp / denom, 1e-12);
  }
}

TEST(Evaluate, UnitSegmentEqualsDirectFrameCounting) {
  std::mt19937_64 rng(5);
  auto ref = random_roll(3, 50, 0.3, rng);
  auto est = random_roll(3, 50, 0.3, rng);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t t = 0; t < 50; ++t) {
      tp += ref.active(k, t) && est.active(k, t);
      fp += !ref.active(k, t) && est.active(k, t);
      fn += ref.active(k, t) && !est.active(k, t);
    }
  auto s = evaluate(ref, est, 1);
  EXPECT_EQ(s.totals.tp, tp);
  EXPECT_EQ(s.totals.fp, fp);
  EXPECT_EQ(s.totals.fn, fn);
  EXPECT_EQ(s.totals.segments, 50u);
}

TEST(Evaluate, ClipListEqualsConcatenation) {
  std::mt19937_64 rng(6);
  std::vector<EventRoll> refs, ests;
  for (int c = 0; c < 4; ++c) {
    refs.push_back(random_roll(3, 25, 0.35, rng));
    ests.push_back(random_roll(3, 25, 0.35, rng));
  }
  EventRoll cat_ref(3, 100), cat_est(3, 100);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t t = 0; t < 25; ++t) {
        cat_ref.set(k, c * 25 + t, refs[c].active(k, t));
        cat_est.set(k, c * 25 + t, ests[c].active(k, t));
      }
  for (std::size_t seg : {1u, 25u}) {
    auto micro = evaluate(refs, ests, seg);
    auto joined = evaluate(cat_ref, cat_est, seg);
    EXPECT_EQ(micro.totals, joined.totals);
    EXPECT_EQ(*micro.error_rate, *joined.error_rate);
    EXPECT_EQ(micro.f1, joined.f1);
  }
}

TEST(Evaluate, MicroAverageDiffersFromMeanOfClipErrorRates) {
  // clip A: one reference cell, missed; clip B: four reference cells, all hit
  std::vector<EventRoll> refs{roll_of(1, 4, {{0, 0}}), roll_of(1, 4, {{0, 0}, {0, 1}, {0, 2}, {0, 3}})};
  std::vector<EventRoll> ests{EventRoll(1, 4), refs[1]};
  auto micro = evaluate(refs, ests, 1);
  EXPECT_DOUBLE_EQ(*micro.error_rate, 1.0 / 5.0);
  const double mean_of_clips = (*evaluate(refs[0], ests[0], 1).error_rate + *evaluate(refs[1], ests[1], 1).error_rate) / 2;
  EXPECT_DOUBLE_EQ(mean_of_clips, 0.5);
  EXPECT_NE(*micro.error_rate, mean_of_clips);
}

TEST(Evaluate, FlippingCorrectCellNeverLowersErrorRate) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> pick_k(0, 2), pick_t(0, 29);
  for (int trial = 0; trial < 300; ++trial) {
    auto ref = random_roll(3, 30, 0.4, rng);
    ref.set(0, 0);
    auto est = random_roll(3, 30, 0.4, rng);
    const std::size_t k = pick_k(rng), t = pick_t(rng);
    est.set(k, t, ref.active(k, t));
    auto worse = est;
    worse.set(k, t, !ref.active(k, t));
    EXPECT_GE(*evaluate(ref, worse, 1).error_rate, *evaluate(ref, est, 1).error_rate);
  }
}

TEST(Report, FrameAndSecondLevels) {
  std::vector<EventRoll> refs{roll_of(1, 50, {{0, 0}})};
  std::vector<EventRoll> ests{roll_of(1, 50, {{0, 1}})};
  auto r = evaluate_report(refs, ests);
  EXPECT_EQ(*r.frame.error_rate, 2.0);
  EXPECT_EQ(*r.second.error_rate, 0.0);
  EXPECT_EQ(r.second.f1, 1.0);
}

TEST(Report, TableHasExactlyFourMetrics) {
  std::vector<EventRoll> refs{roll_of(2, 30, {{0, 0}, {1, 5}})};
  auto r = evaluate_report(refs, refs);
  std::ostringstream os;
  write_report_table(os, r);
  EXPECT_EQ(os.str(),
            "metric\tvalue\tsegment_length\n"
            "ER_frame\t0\tframe\n"
            "F1_frame\t1\tframe\n"
            "ER_second\t0\tsecond\n"
            "F1_second\t1\tsecond\n");
}

TEST(Report, UndefinedErrorRateIsFlagged) {
  std::vector<EventRoll> empty{EventRoll(1, 10)};
  auto r = evaluate_report(empty, empty);
  std::ostringstream table, human;
  write_report_table(table, r);
  write_report(human, r, 0.65);
  EXPECT_NE(table.str().find("ER_frame\tundefined"), std::string::npos);
  EXPECT_NE(human.str().find("threshold 0.65"), std::string::npos);
  EXPECT_NE(human.str().find("no reference and no prediction"), std::string::npos);
}
