// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pruneopd/error.hpp"

namespace pruneopd {

namespace {

void check_length(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    fail(ErrorKind::InvalidRecord,
         std::string(what) + " length " + std::to_string(got) + " != " + std::to_string(want));
  }
}

}  // namespace

void validate(const ReliabilityConfig& cfg) {
  if (!(cfg.w_drop >= 0.0) || !std::isfinite(cfg.w_drop)) fail(ErrorKind::InvalidConfig, "reliability.w_drop must be >= 0");
  if (!(cfg.w_base >= 0.0) || !std::isfinite(cfg.w_base)) fail(ErrorKind::InvalidConfig, "reliability.w_base must be >= 0");
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon < 1.0)) fail(ErrorKind::InvalidConfig, "reliability.epsilon must lie in [0, 1)");
}

std::vector<std::int64_t> cumulative_drift(std::span<const std::uint8_t> events) {
  std::vector<std::int64_t> out(events.size());
  std::int64_t running = 0;
  for (std::size_t t = 0; t < events.size(); ++t) {
    if (events[t] > 1) fail(ErrorKind::InvalidRecord, "drift events must be 0 or 1");
    running += events[t];
    out[t] = running;
  }
  return out;
}

std::vector<double> raw_reliability(std::span<const std::int64_t> cumulative, double w_drop,
                                    std::span<const std::uint8_t> valid_mask) {
  if (!(w_drop >= 0.0)) fail(ErrorKind::InvalidConfig, "w_drop must be >= 0");
  check_length(valid_mask.size(), cumulative.size(), "valid mask");
  std::vector<double> out(cumulative.size(), 0.0);
  for (std::size_t t = 0; t < cumulative.size(); ++t) {
    if (!valid_mask[t]) continue;
    // One multiply per position; no accumulated subtraction error.
    out[t] = std::clamp(1.0 - w_drop * static_cast<double>(cumulative[t]), 0.0, 1.0);
  }
  return out;
}

std::vector<double> loss_weights(std::span<const double> raw, double w_base,
                                 std::span<const std::uint8_t> valid_mask) {
  if (!(w_base >= 0.0)) fail(ErrorKind::InvalidConfig, "w_base must be >= 0");
  check_length(valid_mask.size(), raw.size(), "valid mask");
  std::vector<double> out(raw.size(), 0.0);
  for (std::size_t t = 0; t < raw.size(); ++t) {
    if (!(raw[t] >= 0.0 && raw[t] <= 1.0)) fail(ErrorKind::InvalidRecord, "raw reliability outside [0, 1]");
    if (valid_mask[t]) out[t] = raw[t] + w_base;
  }
  return out;
}

RewardTensor scale_rewards(const RewardTensor& rewards, std::span<const double> loss_weight) {
  check_length(loss_weight.size(), rewards.rows(), "loss weight");
  RewardTensor out = rewards;
  for (std::size_t t = 0; t < out.rows(); ++t) {
    for (double& r : out.row(t)) r *= loss_weight[t];
  }
  return out;
}

RewardTensor scale_rewards(const RewardTensor& rewards, std::span<const double> loss_weight,
                           const ReliabilityConfig& cfg) {
  if (!cfg.enabled) return rewards;
  return scale_rewards(rewards, loss_weight);
}

std::size_t effective_length(std::span<const double> raw, double epsilon) {
  return static_cast<std::size_t>(std::count_if(raw.begin(), raw.end(), [epsilon](double r) { return r > epsilon; }));
}

std::vector<std::uint8_t> drift_events(const RolloutTrace& trace, const CompatConfig& cfg) {
  std::vector<std::uint8_t> events(trace.records.size(), 0);
  for (std::size_t t = 0; t < trace.records.size(); ++t) {
    const auto& rec = trace.records[t];
    if (!rec.valid) continue;
    events[t] = drift_event(rec.student, rec.teacher, rec.sampled_token, cfg);
  }
  return events;
}

std::pair<ReliabilityProfile, RewardTensor> process_rollout(const RolloutTrace& trace,
                                                            const CompatConfig& compat_cfg,
                                                            const ReliabilityConfig& rel_cfg) {
  validate(rel_cfg);
  if (trace.rewards.rows() != trace.records.size()) {
    fail(ErrorKind::InvalidRecord, "rollout " + std::to_string(trace.rollout_id) +
                                       ": reward rows do not match record count");
  }
  ReliabilityProfile profile;
  profile.valid_mask = trace.valid_mask();
  profile.events = drift_events(trace, compat_cfg);
  profile.cumulative = cumulative_drift(profile.events);
  profile.raw = raw_reliability(profile.cumulative, rel_cfg.w_drop, profile.valid_mask);
  profile.loss_weight = loss_weights(profile.raw, rel_cfg.w_base, profile.valid_mask);
  profile.effective_length = effective_length(profile.raw, rel_cfg.epsilon);
  RewardTensor scaled = scale_rewards(trace.rewards, profile.loss_weight, rel_cfg);
  return {std::move(profile), std::move(scaled)};
}

}  // namespace pruneopd
