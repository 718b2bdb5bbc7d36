// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "pruneopd/compat_metrics.hpp"
#include "pruneopd/error.hpp"
#include "support/fixtures.hpp"

namespace pruneopd {
namespace {

TopKSlice slice(std::vector<TokenId> ids, std::vector<double> probs) { return {std::move(ids), std::move(probs)}; }

TopKSlice uniform_ids(TokenId first, int n) {
  TopKSlice s;
  for (int i = 0; i < n; ++i) {
    s.token_ids.push_back(first + i);
    s.probs.push_back(1.0 / n);
  }
  return s;
}

TEST(TopkOverlap, IdenticalDisjointAndPartial) {
  EXPECT_EQ(topk_overlap(uniform_ids(0, 16), uniform_ids(0, 16), 16), 1.0);
  EXPECT_EQ(topk_overlap(uniform_ids(0, 16), uniform_ids(16, 16), 16), 0.0);
  EXPECT_EQ(topk_overlap(uniform_ids(0, 16), uniform_ids(4, 16), 16), 0.75);
}

TEST(TopkOverlap, MatchesBruteForceOnRandomSlices) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const int k = 1 + static_cast<int>(rng.below(16));
    const int vocab = k + static_cast<int>(rng.below(20));
    const auto a = testing::random_slice(rng, vocab, k);
    const auto b = testing::random_slice(rng, vocab, k);
    EXPECT_EQ(topk_overlap(a, b, k), testing::ref_overlap(a, b, k));
  }
}

TEST(TopkOverlap, RejectsDuplicatesAndOversizedSlices) {
  const auto dup = slice({3, 3}, {0.5, 0.4});
  EXPECT_THROW(topk_overlap(dup, uniform_ids(0, 2), 2), Error);
  EXPECT_THROW(topk_overlap(uniform_ids(0, 3), uniform_ids(0, 2), 2), Error);
  EXPECT_THROW(topk_overlap(uniform_ids(0, 2), uniform_ids(0, 2), 0), Error);
}

TEST(TopPAccept, NucleusBoundaries) {
  const auto t = slice({10, 11, 12, 13}, {0.6, 0.3, 0.05, 0.05});
  EXPECT_TRUE(top_p_accept(11, t, 0.95));
  EXPECT_TRUE(top_p_accept(12, t, 0.95));
  EXPECT_FALSE(top_p_accept(13, t, 0.95));
  EXPECT_FALSE(top_p_accept(99, t, 0.95));
}

TEST(TopPAccept, ShortMassKeepsWholeSlice) {
  const auto t = slice({1, 2, 3, 4}, {0.4, 0.2, 0.1, 0.1});
  EXPECT_TRUE(top_p_accept(4, t, 0.95));
  EXPECT_FALSE(top_p_accept(5, t, 1.0));
}

TEST(TopPAccept, MatchesScanOnRandomSlices) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const int k = 1 + static_cast<int>(rng.below(16));
    const auto t = testing::random_slice(rng, 40, k);
    const auto sampled = static_cast<TokenId>(rng.below(40));
    const double p = 0.05 + 0.95 * rng.uniform();
    EXPECT_EQ(top_p_accept(sampled, t, p), testing::ref_top_p(sampled, t, p));
  }
}

TEST(DriftEvent, StrictThreshold) {
  CompatConfig cfg;
  cfg.k = 100;
  cfg.gamma = 0.7;
  EXPECT_EQ(drift_event(uniform_ids(0, 100), uniform_ids(31, 100), 0, cfg), 1);  // 0.69
  EXPECT_EQ(drift_event(uniform_ids(0, 100), uniform_ids(30, 100), 0, cfg), 0);  // 0.70
}

TEST(DriftEvent, TopPKind) {
  CompatConfig cfg;
  cfg.metric_kind = MetricKind::TeacherTopPAccept;
  cfg.p = 0.9;
  const auto t = slice({1, 2, 3}, {0.5, 0.3, 0.2});
  EXPECT_EQ(drift_event(t, t, 1, cfg), 0);
  EXPECT_EQ(drift_event(t, t, 3, cfg), 0);
  EXPECT_EQ(drift_event(t, t, 7, cfg), 1);
}

TEST(DriftEvent, GammaAboveOneAlwaysFires) {
  CompatConfig cfg;
  cfg.k = 4;
  cfg.gamma = 1.5;
  EXPECT_EQ(drift_event(uniform_ids(0, 4), uniform_ids(0, 4), 0, cfg), 1);
}

TEST(EntropyGap, HandComputedValues) {
  EXPECT_EQ(entropy_gap(slice({1, 2}, {0.5, 0.5}), slice({3, 4}, {0.5, 0.5})), 0.0);
  EXPECT_NEAR(entropy_gap(slice({1}, {1.0}), uniform_ids(0, 4)), std::log(4.0), 1e-12);
  // Direct summation oracle for 0.1308.
  const double h_student = -(0.5 * std::log(0.5) + 0.5 * std::log(0.5));
  const double h_teacher = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  const double gap = entropy_gap(slice({1, 2}, {0.5, 0.5}), slice({1, 2}, {0.75, 0.25}));
  EXPECT_NEAR(gap, std::abs(h_student - h_teacher), 1e-12);
  EXPECT_NEAR(gap, 0.1308, 5e-5);
}

TEST(EntropyGap, RenormalizesVisibleMass) {
  EXPECT_NEAR(entropy_gap(slice({1, 2}, {0.25, 0.25}), slice({1, 2}, {0.5, 0.5})), 0.0, 1e-15);
}

TEST(Validate, RejectsMalformedSlices) {
  EXPECT_THROW(validate(slice({1, 2}, {0.5})), Error);
  EXPECT_THROW(validate(slice({1, 2}, {0.2, 0.5})), Error);
  EXPECT_THROW(validate(slice({1, 2}, {0.7, 0.6})), Error);
  EXPECT_THROW(validate(slice({1}, {0.0})), Error);
  EXPECT_NO_THROW(validate(slice({5, 1}, {0.5, 0.5})));
}

TEST(Validate, ConfigDomains) {
  CompatConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  cfg.k = 0;
  EXPECT_THROW(validate(cfg), Error);
  cfg = {};
  cfg.p = 0.0;
  EXPECT_THROW(validate(cfg), Error);
}

TEST(MeanOverlap, AveragesValidPositions) {
  RolloutTrace tr;
  tr.response = {0, 0, 0};
  tr.rewards = RewardTensor(3, 2);
  tr.records.push_back({uniform_ids(0, 2), uniform_ids(0, 2), 0, true});
  tr.records.push_back({uniform_ids(0, 2), uniform_ids(1, 2), 0, true});
  tr.records.push_back({uniform_ids(0, 2), uniform_ids(5, 2), 0, false});
  const std::vector<RolloutTrace> traces{tr};
  EXPECT_EQ(mean_overlap(traces, 2), 0.75);
  tr.records[0].valid = tr.records[1].valid = false;
  const std::vector<RolloutTrace> empty{tr};
  EXPECT_THROW(mean_overlap(empty, 2), Error);
}

}  // namespace
}  // namespace pruneopd
