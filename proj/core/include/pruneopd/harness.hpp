// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// End-to-end experiment runner: samples student rollouts on a drift
// scenario, scores them against the teacher, applies the selected reward
// treatment, updates the student and (for prune_opd) steps the rollout
// budget. Every random draw derives from the run seed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pruneopd/budget_controller.hpp"
#include "pruneopd/compat_metrics.hpp"
#include "pruneopd/policy_sim.hpp"
#include "pruneopd/reliability.hpp"

namespace pruneopd {

enum class RunMode { OpdBaseline, FixedTruncate, RandomPruneTokens, RandomPruneMass, PruneOpd };

std::string_view to_string(RunMode mode) noexcept;
RunMode parse_run_mode(std::string_view text);

struct ExperimentConfig {
  std::string scenario_preset = "collapse";
  DriftScenario scenario;
  RunMode mode = RunMode::PruneOpd;
  CompatConfig compat;
  ReliabilityConfig reliability;
  BudgetConfig budget;
  // When false, prune_opd rolls out at scenario.max_length every step.
  bool budget_enabled = true;
  std::int64_t truncate_length = 0;
  // Random pruning targets: per-step values from a reference run's metrics,
  // or a constant fraction of each step's tokens / reward mass.
  std::filesystem::path random_prune_reference;
  std::optional<double> random_prune_fraction;
  std::int64_t batch_size = 4;
  std::int64_t rollouts_per_prompt = 4;
  std::int64_t steps = 300;
  double learning_rate = 1.0;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  std::int64_t eval_rollouts = 16;
  std::int64_t band_width = 32;
  std::int64_t profile_stride = 10;
  bool metrics_jsonl = false;
};

// Flat dotted-key view of a configuration file. Values keep their source
// text (JSON scalars are dumped, arrays kept as JSON).
using ConfigMap = std::map<std::string, std::string>;

/// Accepts either a JSON document (nested objects flatten to dotted keys) or
/// `key = value` lines with `#` comments.
ConfigMap parse_config_text(std::string_view text);
ConfigMap load_config_file(const std::filesystem::path& path);

/// Applies `scenario.preset` first, then scenario-relative budget defaults,
/// then every explicit key. Unknown or malformed keys are reported together.
ExperimentConfig make_experiment_config(const ConfigMap& values);
ConfigMap to_config_map(const ExperimentConfig& cfg);
void validate(const ExperimentConfig& cfg);

/// Named synthetic scenarios: "collapse", "high_compat", "no_drift".
DriftScenario scenario_preset(std::string_view name);

/// Stable hash of everything that shapes the scenario and its random streams.
std::string scenario_fingerprint(const ExperimentConfig& cfg);

struct RunSummary {
  std::string mode;
  std::string scenario_fingerprint;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  std::int64_t tokens_generated = 0;
  std::int64_t tokens_scored = 0;
  double initial_kl = 0.0;
  std::vector<double> initial_kl_by_band;
  double final_kl = 0.0;
  std::int64_t band_width = 0;
  std::vector<double> final_kl_by_band;
  std::int64_t final_budget = 0;
  std::string metrics_file = "metrics.csv";
  std::string profiles_file = "profiles.csv";
};

/// Executes the configured run and writes metrics.csv, profiles.csv,
/// config.json and summary.json into cfg.output_dir.
RunSummary run(const ExperimentConfig& cfg);

RunSummary read_summary(const std::filesystem::path& run_dir);

struct ComparisonRow {
  std::string run;
  std::string mode;
  double final_kl = 0.0;
  std::int64_t tokens_scored = 0;
  double reduction_pct = 0.0;
};

/// Reduction is relative to the first run. Requires at least two runs that
/// share scenario fingerprint and seed.
std::vector<ComparisonRow> compare(std::span<const std::filesystem::path> run_dirs);
std::string render_comparison(std::span<const ComparisonRow> rows);
void write_comparison_csv(std::span<const ComparisonRow> rows, const std::filesystem::path& path);

struct WeightProfile {
  std::vector<std::int64_t> steps;
  std::vector<std::int64_t> band_starts;
  // curves[s][b]: mean applied loss weight of band b at steps[s]; empty when
  // no position of that band was generated.
  std::vector<std::vector<std::optional<double>>> curves;
};

/// Per-band mean loss-weight curves from a run's profile dumps at steps that
/// are multiples of `step_stride`.
WeightProfile emit_weight_profile(const std::filesystem::path& run_dir, std::int64_t step_stride,
                                  std::int64_t band_width = 8);
void write_weight_profile(const WeightProfile& profile, std::ostream& out);

// Fixed-length bands used by metrics rows.
std::size_t band_count(std::int64_t max_length, std::int64_t band_width);

}  // namespace pruneopd
