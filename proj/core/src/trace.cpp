// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/trace.hpp"

#include <cmath>
#include <string>

#include "pruneopd/error.hpp"

namespace pruneopd {

RewardTensor::RewardTensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    fail(ErrorKind::InvalidRecord, "reward tensor holds " + std::to_string(values_.size()) +
                                       " values, shape needs " + std::to_string(rows_ * cols_));
  }
}

std::vector<std::uint8_t> RolloutTrace::valid_mask() const {
  std::vector<std::uint8_t> mask(records.size());
  for (std::size_t t = 0; t < records.size(); ++t) mask[t] = records[t].valid ? 1 : 0;
  return mask;
}

void validate(const RolloutTrace& trace) {
  const std::size_t T = trace.records.size();
  if (trace.response.size() != T) {
    fail(ErrorKind::InvalidRecord, "rollout " + std::to_string(trace.rollout_id) + ": response length " +
                                       std::to_string(trace.response.size()) + " != record count " +
                                       std::to_string(T));
  }
  if (trace.rewards.rows() != T) {
    fail(ErrorKind::InvalidRecord, "rollout " + std::to_string(trace.rollout_id) + ": reward rows " +
                                       std::to_string(trace.rewards.rows()) + " != record count " +
                                       std::to_string(T));
  }
  for (double v : trace.rewards.values()) {
    if (!std::isfinite(v)) fail(ErrorKind::InvalidRecord, "rollout " + std::to_string(trace.rollout_id) + ": non-finite reward");
  }
  for (std::size_t t = 0; t < T; ++t) {
    const auto& rec = trace.records[t];
    if (rec.sampled_token != trace.response[t]) {
      fail(ErrorKind::InvalidRecord, "rollout " + std::to_string(trace.rollout_id) + " position " +
                                         std::to_string(t) + ": sampled token disagrees with response");
    }
    if (!rec.valid) continue;
    validate(rec.student);
    validate(rec.teacher);
  }
}

}  // namespace pruneopd
