// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

// prune-opd: run experiments, compare runs, dump weight profiles, and scale
// externally produced trace files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "pruneopd/error.hpp"
#include "pruneopd/harness.hpp"
#include "pruneopd/logging.hpp"
#include "pruneopd/reliability.hpp"
#include "pruneopd/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace pruneopd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::EmptyInput:
      return kExitConfig;
    default:
      return kExitIo;
  }
}

ConfigMap gather_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  ConfigMap values;
  if (!config_path.empty()) values = load_config_file(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::InvalidConfig, "--set expects key=value, got '" + kv + "'");
    const auto extra = parse_config_text(kv);
    for (const auto& [k, v] : extra) values[k] = v;
  }
  return values;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging_from_env();
  CLI::App app{"Reliability-aware pruning of on-policy distillation rewards"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;

  auto* run_cmd = app.add_subcommand("run", "Run one configured experiment");
  run_cmd->add_option("--config", config_path, "Config file (JSON or key = value)")->required();
  run_cmd->add_option("--out", out_path, "Output directory")->required();
  auto* seed_opt = run_cmd->add_option("--seed", seed, "Override the run seed");
  run_cmd->add_option("--set", overrides, "Extra key=value overrides");

  std::vector<std::string> run_dirs;
  auto* cmp_cmd = app.add_subcommand("compare", "Compare finished runs against the first one");
  cmp_cmd->add_option("runs", run_dirs, "Run directories")->required();
  cmp_cmd->add_option("--out", out_path, "Comparison CSV")->required();

  std::string weight_dir;
  std::int64_t stride = 0;
  std::int64_t band_width = 8;
  auto* w_cmd = app.add_subcommand("weights", "Per-band loss-weight curves at strided steps");
  w_cmd->add_option("run", weight_dir, "Run directory")->required();
  w_cmd->add_option("--stride", stride, "Step stride")->required();
  w_cmd->add_option("--band-width", band_width, "Positions per band");
  w_cmd->add_option("--out", out_path, "Output CSV (default stdout)");

  std::string traces_path;
  std::string profile_path;
  bool hex = false;
  auto* s_cmd = app.add_subcommand("scale", "Scale the rewards of a trace file");
  s_cmd->add_option("--traces", traces_path, "Input trace file")->required();
  s_cmd->add_option("--config", config_path, "Config file for compat.* and reliability.* keys");
  s_cmd->add_option("--set", overrides, "Extra key=value overrides");
  s_cmd->add_option("--out", out_path, "Scaled trace file")->required();
  s_cmd->add_option("--profile", profile_path, "Per-rollout reliability profile (JSONL)");
  s_cmd->add_flag("--hex", hex, "Also write exact hex-float arrays");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run_cmd->parsed()) {
      auto values = gather_config(config_path, overrides);
      values["output_dir"] = out_path;
      if (seed_opt->count() > 0) values["seed"] = std::to_string(seed);
      const auto cfg = make_experiment_config(values);
      const auto summary = run(cfg);
      std::printf("%s: final_kl=%.6g tokens_generated=%lld tokens_scored=%lld\n", summary.mode.c_str(),
                  summary.final_kl, static_cast<long long>(summary.tokens_generated),
                  static_cast<long long>(summary.tokens_scored));
    } else if (cmp_cmd->parsed()) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      const auto rows = compare(dirs);
      write_comparison_csv(rows, out_path);
      std::fputs(render_comparison(rows).c_str(), stdout);
    } else if (w_cmd->parsed()) {
      const auto profile = emit_weight_profile(weight_dir, stride, band_width);
      if (out_path.empty()) {
        write_weight_profile(profile, std::cout);
      } else {
        auto out = open_out(out_path);
        write_weight_profile(profile, out);
        if (!out) fail(ErrorKind::Io, "failed writing " + out_path);
      }
    } else if (s_cmd->parsed()) {
      const auto cfg = make_experiment_config(gather_config(config_path, overrides));
      auto traces = read_traces(fs::path(traces_path));
      std::ofstream prof;
      if (!profile_path.empty()) prof = open_out(profile_path);
      for (auto& trace : traces) {
        auto [profile, scaled] = process_rollout(trace, cfg.compat, cfg.reliability);
        trace.rewards = std::move(scaled);
        if (prof.is_open()) {
          const nlohmann::json line{{"schema", "prune-opd-profile/1"},
                                    {"rollout_id", trace.rollout_id},
                                    {"events", profile.events},
                                    {"cumulative", profile.cumulative},
                                    {"raw", profile.raw},
                                    {"loss_weight", profile.loss_weight},
                                    {"effective_length", profile.effective_length}};
          prof << line.dump() << '\n';
        }
      }
      if (prof.is_open() && !prof) fail(ErrorKind::Io, "failed writing " + profile_path);
      write_traces(traces, fs::path(out_path), TraceWriteOptions{hex});
      spdlog::info("scaled {} rollouts", traces.size());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "prune-opd: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "prune-opd: io error: %s\n", e.what());
    return kExitIo;
  }
  return kExitOk;
}
