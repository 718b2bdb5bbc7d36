// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// On-disk forms of rollout traces and metric streams.
//
// Traces are JSON lines: a header object {"schema": "prune-opd-trace/1"}
// followed by one object per (rollout_id, position). Doubles are written in
// shortest round-trip decimal; strict mode adds "*_hex" hex-float arrays that
// take precedence on read and must agree with the decimal fields.
//
// Metrics are CSV with a fixed column order. The first column carries the
// schema tag "prune-opd-metrics/1" on every row.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pruneopd/trace.hpp"

namespace pruneopd {

inline constexpr std::string_view kTraceSchema = "prune-opd-trace/1";
inline constexpr std::string_view kMetricsSchema = "prune-opd-metrics/1";

struct TraceWriteOptions {
  bool hex_floats = false;
};

std::size_t write_traces(std::span<const RolloutTrace> traces, std::ostream& out, const TraceWriteOptions& opts = {});
std::size_t write_traces(std::span<const RolloutTrace> traces, const std::filesystem::path& path,
                         const TraceWriteOptions& opts = {});

std::vector<RolloutTrace> read_traces(std::istream& in);
std::vector<RolloutTrace> read_traces(const std::filesystem::path& path);

struct MetricsRow {
  std::int64_t step_index = 0;
  double mean_overlap = 0.0;
  double mean_effective_length = 0.0;
  std::int64_t m_current = 0;
  double hit_ratio = 0.0;
  std::int64_t tokens_generated = 0;
  std::int64_t tokens_scored = 0;
  // Sum of |raw reward| over scored positions; reference for mass-matched pruning.
  double reward_mass_scored = 0.0;
  std::vector<double> mean_loss_weight_by_band;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

void validate(const MetricsRow& row);

std::string metrics_header(std::size_t bands);
std::string format_metrics_row(const MetricsRow& row);
MetricsRow parse_metrics_row(std::string_view line, std::size_t bands);

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path, bool jsonl_mirror = false);
void append_metrics(const MetricsRow& row, const std::filesystem::path& path, bool jsonl_mirror = false);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Sibling path with the .jsonl extension used for the optional mirror.
std::filesystem::path jsonl_mirror_path(const std::filesystem::path& csv_path);

// Locale-independent shortest round-trip formatting used by every writer.
std::string format_double(double v);
double parse_double(std::string_view text);
std::string format_hex(double v);
double parse_hex(std::string_view text);

}  // namespace pruneopd
