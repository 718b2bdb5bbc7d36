// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Desk-scale student/teacher pairs.
//
// A TabularPolicy is an order-n Markov softmax policy whose context is the
// last `context_order` tokens (left-padded with the symbol `vocab_size`)
// tagged with a position band. Bands are indexed by absolute prefix length,
// which lets a scenario pin the teacher/student compatibility per depth.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "pruneopd/compat_metrics.hpp"
#include "pruneopd/trace.hpp"

namespace pruneopd {

struct TabularPolicy {
  int vocab_size = 0;
  int context_order = 0;
  double temperature = 1.0;
  // Absolute prefix lengths at which a new band begins; front() == 0.
  std::vector<std::int64_t> band_starts{0};
  // Row-major [num_contexts, vocab_size].
  std::vector<double> logits;

  std::size_t contexts_per_band() const;
  std::size_t num_contexts() const { return band_starts.size() * contexts_per_band(); }
  std::size_t context_index(std::span<const TokenId> prefix) const;
  std::span<const double> row(std::size_t context) const;
  std::span<double> row(std::size_t context);

  friend bool operator==(const TabularPolicy&, const TabularPolicy&) = default;
};

/// Zero-logit policy with the given shape.
TabularPolicy make_policy(int vocab_size, int context_order, std::vector<std::int64_t> band_starts,
                          double temperature = 1.0);

void validate(const TabularPolicy& policy);

std::vector<double> next_dist(const TabularPolicy& policy, std::span<const TokenId> prefix);
std::vector<double> next_log_dist(const TabularPolicy& policy, std::span<const TokenId> prefix);

/// k most probable tokens of `dist`, ties broken by ascending id.
TopKSlice topk_from_dist(std::span<const double> dist, int k);
TopKSlice topk_of(const TabularPolicy& policy, std::span<const TokenId> prefix, int k);

/// r_j = w_j * (log q(v_j) - log p(v_j)), w_j = student probability
/// renormalized over the slice.
std::vector<double> opd_reward(const TopKSlice& student_slice, std::span<const double> teacher_logprobs_at_ids);

/// Samples `max_length` tokens from the student; records both top-k slices
/// and the raw reward row at every position.
RolloutTrace sample_rollout(const TabularPolicy& student, const TabularPolicy& teacher,
                            std::span<const TokenId> prompt, std::int64_t max_length, int k,
                            std::uint64_t seed, std::int64_t rollout_id = 0);

/// KL(student || teacher) at `prefix`. +infinity when the teacher assigns
/// zero probability to a token the student can emit.
double reverse_kl(const TabularPolicy& student, const TabularPolicy& teacher, std::span<const TokenId> prefix);

/// Token-mean surrogate J = (1/N) sum_{valid t} sum_j r[t][j] * log p(v_j | prefix_t),
/// with N the number of valid positions and r taken from trace.rewards
/// (treated as constants).
double surrogate_objective(const TabularPolicy& student, std::span<const RolloutTrace> traces);

/// dJ/dlogits, same layout as student.logits.
std::vector<double> surrogate_gradient(const TabularPolicy& student, std::span<const RolloutTrace> traces);

/// One ascent step on the surrogate with the traces' (scaled) rewards as
/// token-level advantages.
TabularPolicy train_step(TabularPolicy student, std::span<const RolloutTrace> traces, double learning_rate);

struct CurveKnot {
  std::int64_t position = 0;
  double target = 1.0;
  friend bool operator==(const CurveKnot&, const CurveKnot&) = default;
};

struct DriftScenario {
  std::uint64_t seed = 0;
  std::int64_t prompt_length = 4;
  std::int64_t max_length = 256;
  // Piecewise-linear target overlap over response positions, held constant
  // outside the knots.
  std::vector<CurveKnot> curve{{0, 1.0}};
  int k = 16;
  int vocab_size = 64;
  int context_order = 1;
  // Response positions where the student's parameter bands begin.
  std::vector<std::int64_t> student_band_starts{0};
  // Teacher bands are this many positions wide, so the teacher varies
  // faster than the student can represent.
  std::int64_t teacher_segment = 4;
  // Before this position the teacher only changes at student band starts.
  std::int64_t teacher_segment_from = 0;
  double logit_scale = 2.0;

  friend bool operator==(const DriftScenario&, const DriftScenario&) = default;
};

void validate(const DriftScenario& scenario);

double target_overlap(const DriftScenario& scenario, double position);

/// Random student; the teacher copies each student row, keeps the top-j
/// candidates (j = round(k * target)) and swaps the other k - j with tokens
/// from outside the student's top-k.
std::pair<TabularPolicy, TabularPolicy> build_drift_pair(const DriftScenario& scenario);

std::vector<TokenId> sample_prompt(const DriftScenario& scenario, std::uint64_t seed);

}  // namespace pruneopd
