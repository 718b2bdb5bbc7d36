// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reliability-aware scaling of dense distillation rewards.
//
// Drift events accumulate along a rollout into a clipped linear decay
//   R = clip(1 - w_drop * C, 0, 1),   L = R + w_base  (0 on padding)
// and every candidate reward at a position is multiplied by L. The
// effective length counts positions with R > epsilon; the base floor never
// counts as reliable length.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "pruneopd/compat_metrics.hpp"
#include "pruneopd/trace.hpp"

namespace pruneopd {

struct ReliabilityConfig {
  double w_drop = 0.01;
  double w_base = 0.5;
  double epsilon = 1e-6;
  bool enabled = true;
};

void validate(const ReliabilityConfig& cfg);

struct ReliabilityProfile {
  std::vector<std::uint8_t> events;
  std::vector<std::int64_t> cumulative;
  std::vector<double> raw;
  std::vector<double> loss_weight;
  std::size_t effective_length = 0;
  std::vector<std::uint8_t> valid_mask;

  friend bool operator==(const ReliabilityProfile&, const ReliabilityProfile&) = default;
};

std::vector<std::int64_t> cumulative_drift(std::span<const std::uint8_t> events);

std::vector<double> raw_reliability(std::span<const std::int64_t> cumulative, double w_drop,
                                    std::span<const std::uint8_t> valid_mask);

std::vector<double> loss_weights(std::span<const double> raw, double w_base,
                                 std::span<const std::uint8_t> valid_mask);

RewardTensor scale_rewards(const RewardTensor& rewards, std::span<const double> loss_weight);

// Returns `rewards` untouched when cfg.enabled is false.
RewardTensor scale_rewards(const RewardTensor& rewards, std::span<const double> loss_weight,
                           const ReliabilityConfig& cfg);

std::size_t effective_length(std::span<const double> raw, double epsilon);

// Padding positions never fire and never advance the cumulative count.
std::vector<std::uint8_t> drift_events(const RolloutTrace& trace, const CompatConfig& cfg);

std::pair<ReliabilityProfile, RewardTensor> process_rollout(const RolloutTrace& trace,
                                                            const CompatConfig& compat_cfg,
                                                            const ReliabilityConfig& rel_cfg);

}  // namespace pruneopd
