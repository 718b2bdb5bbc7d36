// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "pruneopd/error.hpp"
#include "pruneopd/reliability.hpp"
#include "support/fixtures.hpp"

namespace pruneopd {
namespace {

using Events = std::vector<std::uint8_t>;

TEST(CumulativeDrift, PrefixSums) {
  EXPECT_EQ(cumulative_drift(Events{0, 0, 1, 0, 1}), (std::vector<std::int64_t>{0, 0, 1, 1, 2}));
  EXPECT_EQ(cumulative_drift(Events{0, 0, 0, 0, 0}), (std::vector<std::int64_t>(5, 0)));
  EXPECT_EQ(cumulative_drift(Events{1, 1, 1}), (std::vector<std::int64_t>{1, 2, 3}));
}

TEST(RawReliability, ClippedDecayAndPadding) {
  const std::vector<std::int64_t> c{30, 150, 0};
  const Events valid{1, 1, 0};
  const auto r = raw_reliability(c, 0.01, valid);
  EXPECT_DOUBLE_EQ(r[0], 0.7);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 0.0);
}

TEST(LossWeights, FloorOnValidZeroOnPadding) {
  const std::vector<double> raw{0.0, 1.0, 1.0};
  const auto l = loss_weights(raw, 0.5, Events{1, 1, 0});
  EXPECT_EQ(l, (std::vector<double>{0.5, 1.5, 0.0}));
}

TEST(ScaleRewards, BroadcastsPerRow) {
  const RewardTensor r(2, 2, {2, -1, 4, 4});
  const std::vector<double> l{1.0, 0.5};
  EXPECT_EQ(scale_rewards(r, l).values(), (std::vector<double>{2, -1, 2, 2}));
  const std::vector<double> pad{1.0, 0.0};
  EXPECT_EQ(scale_rewards(r, pad).values(), (std::vector<double>{2, -1, 0, 0}));
}

TEST(ScaleRewards, DisabledReturnsInput) {
  const RewardTensor r(2, 2, {2, -1, 4, 4});
  ReliabilityConfig cfg;
  cfg.enabled = false;
  const std::vector<double> l{0.0, 0.0};
  EXPECT_EQ(scale_rewards(r, l, cfg), r);
}

TEST(EffectiveLength, StrictEpsilon) {
  EXPECT_EQ(effective_length(std::vector<double>{1, 1, 0.5, 0, 0}, 1e-6), 3u);
  EXPECT_EQ(effective_length(std::vector<double>{0, 0, 0}, 1e-6), 0u);
  EXPECT_EQ(effective_length(std::vector<double>{1e-6}, 1e-6), 0u);
}

RolloutTrace trace_with_events(const std::vector<bool>& drift) {
  // k = 2; drift positions get a disjoint teacher slice.
  RolloutTrace tr;
  tr.rewards = RewardTensor(drift.size(), 2);
  for (std::size_t t = 0; t < drift.size(); ++t) {
    PositionRecord rec;
    rec.student = {{0, 1}, {0.5, 0.5}};
    rec.teacher = drift[t] ? TopKSlice{{2, 3}, {0.5, 0.5}} : rec.student;
    tr.records.push_back(rec);
    tr.response.push_back(0);
    tr.rewards(t, 0) = 1.0;
    tr.rewards(t, 1) = -2.0;
  }
  return tr;
}

TEST(ProcessRollout, ComposedProfile) {
  const auto tr = trace_with_events({false, false, true, false, true, false});
  CompatConfig compat;
  compat.k = 2;
  ReliabilityConfig rel;
  rel.w_drop = 0.3;
  rel.w_base = 0.1;
  const auto [p, scaled] = process_rollout(tr, compat, rel);
  const std::vector<double> r{1, 1, 0.7, 0.7, 0.4, 0.4};
  const std::vector<double> l{1.1, 1.1, 0.8, 0.8, 0.5, 0.5};
  for (std::size_t t = 0; t < 6; ++t) {
    EXPECT_DOUBLE_EQ(p.raw[t], r[t]);
    EXPECT_DOUBLE_EQ(p.loss_weight[t], l[t]);
    EXPECT_DOUBLE_EQ(scaled(t, 1), -2.0 * l[t]);
  }
  EXPECT_EQ(p.effective_length, 6u);
}

TEST(ProcessRollout, NoDrift) {
  const auto tr = trace_with_events(std::vector<bool>(7, false));
  CompatConfig compat;
  compat.k = 2;
  const auto [p, scaled] = process_rollout(tr, compat, ReliabilityConfig{});
  for (double r : p.raw) EXPECT_EQ(r, 1.0);
  for (double l : p.loss_weight) EXPECT_EQ(l, 1.5);
  EXPECT_EQ(p.effective_length, 7u);
}

TEST(ProcessRollout, EveryPositionDrifts) {
  const auto tr = trace_with_events(std::vector<bool>(150, true));
  CompatConfig compat;
  compat.k = 2;
  const auto [p, scaled] = process_rollout(tr, compat, ReliabilityConfig{});
  // Scalar reference: position t (0-based) has C = t + 1.
  for (std::size_t t = 0; t < 150; ++t) {
    double expect = 1.0 - 0.01 * static_cast<double>(t + 1);
    if (expect < 0.0) expect = 0.0;
    EXPECT_EQ(p.raw[t], expect) << t;
  }
  EXPECT_EQ(p.raw[99], 0.0);
  EXPECT_GT(p.raw[98], 0.0);
  EXPECT_EQ(p.effective_length, 99u);
}

TEST(ProcessRollout, PaddingNeverFiresOrCounts) {
  auto tr = trace_with_events({true, true, true});
  tr.records[1].valid = false;
  CompatConfig compat;
  compat.k = 2;
  const auto [p, scaled] = process_rollout(tr, compat, ReliabilityConfig{});
  EXPECT_EQ(p.events, (Events{1, 0, 1}));
  EXPECT_EQ(p.cumulative, (std::vector<std::int64_t>{1, 1, 2}));
  EXPECT_EQ(p.loss_weight[1], 0.0);
  EXPECT_EQ(scaled(1, 0), 0.0);
}

TEST(ProcessRollout, MatchesScalarReferenceOnRandomTraces) {
  Rng rng(99);
  for (int i = 0; i < 300; ++i) {
    const auto tr = testing::random_trace(rng, i);
    CompatConfig compat;
    compat.k = static_cast<int>(tr.rewards.cols());
    compat.gamma = rng.uniform();
    ReliabilityConfig rel;
    rel.w_drop = 0.2 * rng.uniform();
    rel.w_base = rng.uniform();
    const auto [p, scaled] = process_rollout(tr, compat, rel);
    Events events;
    for (const auto& rec : tr.records) {
      events.push_back(rec.valid && testing::ref_overlap(rec.student, rec.teacher, compat.k) < compat.gamma ? 1 : 0);
    }
    const auto ref = testing::ref_profile(events, tr.valid_mask(), tr.rewards.values(), tr.rewards.cols(), rel.w_drop,
                                          rel.w_base, rel.epsilon);
    EXPECT_EQ(p.events, events);
    EXPECT_EQ(p.cumulative, ref.cumulative);
    EXPECT_EQ(p.raw, ref.raw);
    EXPECT_EQ(p.loss_weight, ref.loss_weight);
    EXPECT_EQ(p.effective_length, ref.effective_length);
    EXPECT_EQ(scaled.values(), ref.scaled);
  }
}

TEST(Validate, RejectsOutOfRangeConfig) {
  ReliabilityConfig cfg;
  cfg.w_drop = -0.1;
  EXPECT_THROW(validate(cfg), Error);
  cfg = {};
  cfg.w_base = -1.0;
  EXPECT_THROW(validate(cfg), Error);
}

TEST(ProcessRollout, RejectsRewardShapeMismatch) {
  auto tr = trace_with_events({false, false});
  tr.rewards = RewardTensor(3, 2);
  EXPECT_THROW(process_rollout(tr, CompatConfig{}, ReliabilityConfig{}), Error);
}

}  // namespace
}  // namespace pruneopd
