// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

namespace pruneopd {

// Batch-global rollout budget. Expands by `delta` whenever the hit ratio
// reaches `rho`; contracts by `delta` once the ratio has stayed below `rho`
// for `patience` consecutive steps. Both branches reset the low-hit streak.
struct BudgetConfig {
  std::int64_t m_init = 2048;
  std::int64_t m_min = 1024;
  std::int64_t m_max = 12288;
  std::int64_t delta = 100;
  std::int64_t margin = 100;
  double rho = 0.1;
  std::int64_t patience = 3;
};

struct BudgetState {
  std::int64_t m_current = 0;
  std::int64_t low_hit_streak = 0;
  std::int64_t step_index = 0;

  friend bool operator==(const BudgetState&, const BudgetState&) = default;
};

void validate(const BudgetConfig& cfg);

BudgetState init(const BudgetConfig& cfg);

/// Fraction of samples with effective length >= m_current - margin.
double hit_ratio(std::span<const std::int64_t> effective_lengths, std::int64_t m_current, std::int64_t margin);

/// Successor state; the returned m_current is the budget for the next step.
BudgetState step(const BudgetState& state, double h, const BudgetConfig& cfg);

}  // namespace pruneopd
