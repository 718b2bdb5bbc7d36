// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/compat_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pruneopd/error.hpp"
#include "pruneopd/trace.hpp"

namespace pruneopd {

namespace {

std::vector<TokenId> sorted_unique_ids(const TopKSlice& slice, const char* which) {
  std::vector<TokenId> ids = slice.token_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    fail(ErrorKind::InvalidRecord, std::string(which) + " slice has duplicate token ids");
  }
  return ids;
}

void check_sorted(const TopKSlice& slice, const char* which) {
  if (slice.probs.size() != slice.token_ids.size()) {
    fail(ErrorKind::InvalidRecord, std::string(which) + " slice ids/probs length mismatch");
  }
  for (std::size_t i = 1; i < slice.probs.size(); ++i) {
    if (slice.probs[i] > slice.probs[i - 1]) {
      fail(ErrorKind::InvalidRecord, std::string(which) + " slice probabilities are not sorted non-increasing");
    }
  }
}

double renormalized_entropy(const TopKSlice& slice, const char* which) {
  double mass = 0.0;
  for (double q : slice.probs) {
    if (!(q >= 0.0) || !std::isfinite(q)) {
      fail(ErrorKind::InvalidRecord, std::string(which) + " slice has a negative or non-finite probability");
    }
    mass += q;
  }
  if (!(mass > 0.0)) fail(ErrorKind::InvalidRecord, std::string(which) + " slice has zero total mass");
  double h = 0.0;
  for (double q : slice.probs) {
    if (q > 0.0) {
      const double w = q / mass;
      h -= w * std::log(w);
    }
  }
  return h;
}

}  // namespace

void validate(const CompatConfig& cfg) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) fail(ErrorKind::InvalidConfig, "compat.gamma must lie in [0, 1]");
  if (!(cfg.p > 0.0 && cfg.p <= 1.0)) fail(ErrorKind::InvalidConfig, "compat.p must lie in (0, 1]");
  if (cfg.k < 1) fail(ErrorKind::InvalidConfig, "compat.k must be >= 1");
}

void validate(const TopKSlice& slice) {
  check_sorted(slice, "top-k");
  sorted_unique_ids(slice, "top-k");
  double mass = 0.0;
  for (double q : slice.probs) {
    if (!(q > 0.0 && q <= 1.0)) fail(ErrorKind::InvalidRecord, "top-k probability outside (0, 1]");
    mass += q;
  }
  if (mass > 1.0 + 1e-9) fail(ErrorKind::InvalidRecord, "top-k probabilities sum above 1");
}

double topk_overlap(const TopKSlice& student, const TopKSlice& teacher, int k) {
  if (k <= 0) fail(ErrorKind::InvalidConfig, "overlap requires k >= 1");
  const auto s = sorted_unique_ids(student, "student");
  const auto t = sorted_unique_ids(teacher, "teacher");
  if (s.size() > static_cast<std::size_t>(k) || t.size() > static_cast<std::size_t>(k)) {
    fail(ErrorKind::InvalidRecord, "slice holds more than k candidates");
  }
  std::size_t shared = 0;
  auto a = s.begin();
  auto b = t.begin();
  while (a != s.end() && b != t.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++shared;
      ++a;
      ++b;
    }
  }
  return static_cast<double>(shared) / static_cast<double>(k);
}

bool top_p_accept(TokenId sampled, const TopKSlice& teacher, double p) {
  if (teacher.empty()) fail(ErrorKind::InvalidRecord, "teacher slice is empty");
  check_sorted(teacher, "teacher");
  double mass = 0.0;
  for (std::size_t m = 0; m < teacher.size(); ++m) {
    if (teacher.token_ids[m] == sampled) return true;
    mass += teacher.probs[m];
    if (mass >= p) return false;
  }
  return false;
}

std::uint8_t drift_event(const TopKSlice& student, const TopKSlice& teacher, TokenId sampled,
                         const CompatConfig& cfg) {
  // gamma is compared literally; range checks belong to config loading.
  switch (cfg.metric_kind) {
    case MetricKind::OverlapRatio:
      return topk_overlap(student, teacher, cfg.k) < cfg.gamma ? 1 : 0;
    case MetricKind::TeacherTopPAccept:
      if (!(cfg.p > 0.0 && cfg.p <= 1.0)) fail(ErrorKind::InvalidConfig, "compat.p must lie in (0, 1]");
      return top_p_accept(sampled, teacher, cfg.p) ? 0 : 1;
  }
  return 0;
}

double entropy_gap(const TopKSlice& student, const TopKSlice& teacher) {
  return std::abs(renormalized_entropy(teacher, "teacher") - renormalized_entropy(student, "student"));
}

double mean_overlap(std::span<const RolloutTrace> traces, int k) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& trace : traces) {
    for (const auto& rec : trace.records) {
      if (!rec.valid) continue;
      total += topk_overlap(rec.student, rec.teacher, k);
      ++count;
    }
  }
  if (count == 0) fail(ErrorKind::EmptyInput, "no valid positions to average overlap over");
  return total / static_cast<double>(count);
}

}  // namespace pruneopd
