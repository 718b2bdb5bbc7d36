// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pruneopd/compat_metrics.hpp"

namespace pruneopd {

// Dense per-position, per-candidate reward rows, row-major [T, k].
class RewardTensor {
 public:
  RewardTensor() = default;
  RewardTensor(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}
  RewardTensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t t, std::size_t j) { return values_[t * cols_ + j]; }
  double operator()(std::size_t t, std::size_t j) const { return values_[t * cols_ + j]; }

  std::span<double> row(std::size_t t) { return {values_.data() + t * cols_, cols_}; }
  std::span<const double> row(std::size_t t) const { return {values_.data() + t * cols_, cols_}; }

  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  friend bool operator==(const RewardTensor&, const RewardTensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct PositionRecord {
  TopKSlice student;
  TopKSlice teacher;
  TokenId sampled_token = 0;
  bool valid = true;

  friend bool operator==(const PositionRecord&, const PositionRecord&) = default;
};

// One student rollout. records[t] was computed on prompt + response[0..t).
struct RolloutTrace {
  std::int64_t rollout_id = 0;
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
  std::vector<PositionRecord> records;
  RewardTensor rewards;

  std::size_t length() const noexcept { return records.size(); }
  std::vector<std::uint8_t> valid_mask() const;

  friend bool operator==(const RolloutTrace&, const RolloutTrace&) = default;
};

// Structural checks: lengths agree, rewards finite, every slice valid.
void validate(const RolloutTrace& trace);

}  // namespace pruneopd
