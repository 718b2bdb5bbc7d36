// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/budget_controller.hpp"

#include <algorithm>

#include "pruneopd/error.hpp"

namespace pruneopd {

void validate(const BudgetConfig& cfg) {
  if (!(cfg.m_min <= cfg.m_init && cfg.m_init <= cfg.m_max)) {
    fail(ErrorKind::InvalidConfig, "budget requires m_min <= m_init <= m_max");
  }
  if (cfg.m_min < 1) fail(ErrorKind::InvalidConfig, "budget.m_min must be >= 1");
  if (cfg.delta <= 0) fail(ErrorKind::InvalidConfig, "budget.delta must be > 0");
  if (cfg.margin < 0) fail(ErrorKind::InvalidConfig, "budget.margin must be >= 0");
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) fail(ErrorKind::InvalidConfig, "budget.rho must lie in [0, 1]");
  if (cfg.patience < 1) fail(ErrorKind::InvalidConfig, "budget.patience must be >= 1");
}

BudgetState init(const BudgetConfig& cfg) {
  validate(cfg);
  return BudgetState{cfg.m_init, 0, 0};
}

double hit_ratio(std::span<const std::int64_t> effective_lengths, std::int64_t m_current, std::int64_t margin) {
  if (effective_lengths.empty()) fail(ErrorKind::EmptyInput, "hit ratio needs a non-empty batch");
  const std::int64_t threshold = m_current - margin;
  const auto hits = std::count_if(effective_lengths.begin(), effective_lengths.end(),
                                  [threshold](std::int64_t e) { return e >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(effective_lengths.size());
}

BudgetState step(const BudgetState& state, double h, const BudgetConfig& cfg) {
  if (!(h >= 0.0 && h <= 1.0)) fail(ErrorKind::InvalidRecord, "hit ratio outside [0, 1]");
  BudgetState next = state;
  next.step_index = state.step_index + 1;
  if (h >= cfg.rho) {
    next.m_current = std::min(state.m_current + cfg.delta, cfg.m_max);
    next.low_hit_streak = 0;
    return next;
  }
  next.low_hit_streak = state.low_hit_streak + 1;
  if (next.low_hit_streak >= cfg.patience) {
    next.m_current = std::max(state.m_current - cfg.delta, cfg.m_min);
    next.low_hit_streak = 0;
  }
  return next;
}

}  // namespace pruneopd
