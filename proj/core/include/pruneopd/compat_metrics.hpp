// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Per-position student/teacher compatibility signals.
//
// Every function here is pure. Slices are the observable interface of a
// scoring pass: token ids with their probabilities, sorted by probability
// (non-increasing, ties by ascending id).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pruneopd {

using TokenId = std::int32_t;

struct TopKSlice {
  std::vector<TokenId> token_ids;
  std::vector<double> probs;

  std::size_t size() const noexcept { return token_ids.size(); }
  bool empty() const noexcept { return token_ids.empty(); }
  friend bool operator==(const TopKSlice&, const TopKSlice&) = default;
};

enum class MetricKind { OverlapRatio, TeacherTopPAccept };

struct CompatConfig {
  MetricKind metric_kind = MetricKind::OverlapRatio;
  double gamma = 0.7;
  double p = 0.95;
  int k = 16;
};

// Throws InvalidConfig when gamma/p/k fall outside their domains.
void validate(const CompatConfig& cfg);

// Throws InvalidRecord on length mismatch, duplicate ids, probabilities
// outside (0, 1], unsorted probabilities or total mass above 1 + 1e-9.
void validate(const TopKSlice& slice);

/// |ids(student) ∩ ids(teacher)| / k.
double topk_overlap(const TopKSlice& student, const TopKSlice& teacher, int k);

/// True when `sampled` lies in the smallest teacher prefix whose cumulative
/// mass reaches p. If the returned mass never reaches p the whole returned
/// set counts as the nucleus.
bool top_p_accept(TokenId sampled, const TopKSlice& teacher, double p);

/// Prefix-drift indicator: 1 when the configured compatibility test fails.
std::uint8_t drift_event(const TopKSlice& student, const TopKSlice& teacher, TokenId sampled,
                         const CompatConfig& cfg);

/// |H(teacher) - H(student)| in nats over top-k masses renormalized to 1.
/// Only the returned top-k is observable, so this approximates the
/// full-vocabulary entropy gap.
double entropy_gap(const TopKSlice& student, const TopKSlice& teacher);

struct RolloutTrace;

/// Mean per-position overlap over every valid position of every trace.
double mean_overlap(std::span<const RolloutTrace> traces, int k);

}  // namespace pruneopd
