// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "pruneopd/error.hpp"
#include "pruneopd/rng.hpp"
#include "pruneopd/tensor_io.hpp"

namespace pruneopd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kProfileHeader = "step,position,mean_loss_weight,mean_raw,count";

struct EvalSet {
  std::vector<std::vector<TokenId>> tokens;
  std::size_t prompt_length = 0;
};

EvalSet make_eval_set(const ExperimentConfig& cfg, const TabularPolicy& student, const TabularPolicy& teacher) {
  EvalSet set;
  set.prompt_length = static_cast<std::size_t>(cfg.scenario.prompt_length);
  for (std::int64_t i = 0; i < cfg.eval_rollouts; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    const auto prompt = sample_prompt(cfg.scenario, derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Eval),
                                                                           static_cast<std::uint64_t>(Stream::Prompt), ui}));
    const auto trace = sample_rollout(student, teacher, prompt, cfg.scenario.max_length, cfg.scenario.k,
                                      derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Eval),
                                                             static_cast<std::uint64_t>(Stream::Sample), ui}));
    std::vector<TokenId> tokens = trace.prompt;
    tokens.insert(tokens.end(), trace.response.begin(), trace.response.end());
    set.tokens.push_back(std::move(tokens));
  }
  return set;
}

// Mean reverse KL per metrics band over the held-out prefixes.
std::vector<double> eval_kl_by_band(const EvalSet& set, const TabularPolicy& student, const TabularPolicy& teacher,
                                    std::int64_t max_length, std::int64_t band_width, double& overall) {
  const std::size_t bands = band_count(max_length, band_width);
  std::vector<double> sum(bands, 0.0);
  std::vector<double> cnt(bands, 0.0);
  double total = 0.0;
  double n = 0.0;
  for (const auto& tokens : set.tokens) {
    for (std::int64_t t = 0; t < max_length; ++t) {
      const std::span<const TokenId> prefix(tokens.data(), set.prompt_length + static_cast<std::size_t>(t));
      const double kl = reverse_kl(student, teacher, prefix);
      const auto b = static_cast<std::size_t>(t / band_width);
      sum[b] += kl;
      cnt[b] += 1.0;
      total += kl;
      n += 1.0;
    }
  }
  overall = n > 0 ? total / n : 0.0;
  for (std::size_t b = 0; b < bands; ++b) sum[b] = cnt[b] > 0 ? sum[b] / cnt[b] : 0.0;
  return sum;
}

double row_mass(const RewardTensor& rewards, std::size_t t) {
  double m = 0.0;
  for (double r : rewards.row(t)) m += std::abs(r);
  return m;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

json summary_to_json(const RunSummary& s) {
  return json{{"mode", s.mode},
              {"scenario_fingerprint", s.scenario_fingerprint},
              {"seed", s.seed},
              {"steps", s.steps},
              {"tokens_generated", s.tokens_generated},
              {"tokens_scored", s.tokens_scored},
              {"initial_kl", s.initial_kl},
              {"initial_kl_by_band", s.initial_kl_by_band},
              {"final_kl", s.final_kl},
              {"band_width", s.band_width},
              {"final_kl_by_band", s.final_kl_by_band},
              {"final_budget", s.final_budget},
              {"metrics_file", s.metrics_file},
              {"profiles_file", s.profiles_file}};
}

struct ProfileLine {
  std::int64_t step = 0;
  std::int64_t position = 0;
  double mean_loss_weight = 0.0;
  double count = 0.0;
};

std::vector<ProfileLine> read_profiles(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "run has no profile dumps: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kProfileHeader) {
    fail(ErrorKind::Parse, path.string() + " line 1: unexpected profile header");
  }
  std::vector<ProfileLine> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) fail(ErrorKind::Parse, path.string() + " line " + std::to_string(line_no) + ": expected 5 fields");
    try {
      out.push_back({static_cast<std::int64_t>(parse_double(cells[0])), static_cast<std::int64_t>(parse_double(cells[1])),
                     parse_double(cells[2]), parse_double(cells[4])});
    } catch (const Error& e) {
      fail(ErrorKind::Parse, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::size_t band_count(std::int64_t max_length, std::int64_t band_width) {
  if (band_width < 1) fail(ErrorKind::InvalidConfig, "band width must be >= 1");
  return static_cast<std::size_t>((max_length + band_width - 1) / band_width);
}

RunSummary run(const ExperimentConfig& cfg) {
  validate(cfg);
  const auto& sc = cfg.scenario;
  const bool random_prune = cfg.mode == RunMode::RandomPruneTokens || cfg.mode == RunMode::RandomPruneMass;
  const bool dynamic_budget = cfg.mode == RunMode::PruneOpd && cfg.budget_enabled;
  const bool scale = cfg.mode == RunMode::PruneOpd && cfg.reliability.enabled;

  std::vector<MetricsRow> reference;
  if (random_prune && !cfg.random_prune_reference.empty()) {
    reference = read_metrics(cfg.random_prune_reference / "metrics.csv");
    if (static_cast<std::int64_t>(reference.size()) < cfg.steps) {
      fail(ErrorKind::InvalidConfig, "random_prune.reference has " + std::to_string(reference.size()) +
                                         " metric rows, run needs " + std::to_string(cfg.steps));
    }
  }

  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + cfg.output_dir.string() + ": " + ec.message());
  const fs::path metrics_path = cfg.output_dir / "metrics.csv";
  const fs::path profiles_path = cfg.output_dir / "profiles.csv";
  fs::remove(metrics_path, ec);
  fs::remove(jsonl_mirror_path(metrics_path), ec);
  {
    json resolved = json::object();
    for (const auto& [k, v] : to_config_map(cfg)) resolved[k] = v;
    write_text_file(cfg.output_dir / "config.json", resolved.dump(2) + "\n");
  }
  std::ofstream profiles(profiles_path, std::ios::binary | std::ios::trunc);
  if (!profiles) fail(ErrorKind::Io, "cannot open " + profiles_path.string() + " for writing");
  profiles << kProfileHeader << '\n';

  auto [student, teacher] = build_drift_pair(sc);
  const EvalSet eval_set = make_eval_set(cfg, student, teacher);

  RunSummary summary;
  summary.mode = std::string(to_string(cfg.mode));
  summary.scenario_fingerprint = scenario_fingerprint(cfg);
  summary.seed = cfg.seed;
  summary.steps = cfg.steps;
  summary.band_width = cfg.band_width;
  summary.initial_kl_by_band =
      eval_kl_by_band(eval_set, student, teacher, sc.max_length, cfg.band_width, summary.initial_kl);

  BudgetState budget = init(cfg.budget);
  const std::size_t bands = band_count(sc.max_length, cfg.band_width);
  const auto B = static_cast<std::size_t>(cfg.batch_size * cfg.rollouts_per_prompt);

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    const auto ustep = static_cast<std::uint64_t>(step);
    std::int64_t budget_now = sc.max_length;
    if (dynamic_budget) budget_now = budget.m_current;
    if (cfg.mode == RunMode::FixedTruncate) budget_now = cfg.truncate_length;
    const std::int64_t length = std::min(budget_now, sc.max_length);
    const auto T = static_cast<std::size_t>(length);

    std::vector<RolloutTrace> traces;
    traces.reserve(B);
    for (std::int64_t p = 0; p < cfg.batch_size; ++p) {
      const auto prompt = sample_prompt(
          sc, derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Prompt), ustep, static_cast<std::uint64_t>(p)}));
      for (std::int64_t r = 0; r < cfg.rollouts_per_prompt; ++r) {
        const auto b = static_cast<std::uint64_t>(p * cfg.rollouts_per_prompt + r);
        traces.push_back(sample_rollout(student, teacher, prompt, length, sc.k,
                                        derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Sample), ustep, b}),
                                        static_cast<std::int64_t>(ustep * B + b)));
      }
    }

    MetricsRow row;
    row.step_index = step;
    row.m_current = budget_now;
    row.mean_overlap = mean_overlap(traces, cfg.compat.k);

    std::vector<std::int64_t> effective(B);
    std::vector<std::vector<double>> weights(B, std::vector<double>(T, 1.0));
    std::vector<std::vector<double>> raws(B);
    for (std::size_t b = 0; b < B; ++b) {
      auto [profile, scaled] = process_rollout(traces[b], cfg.compat, cfg.reliability);
      effective[b] = static_cast<std::int64_t>(profile.effective_length);
      raws[b] = std::move(profile.raw);
      if (scale) {
        weights[b] = std::move(profile.loss_weight);
        traces[b].rewards = std::move(scaled);
      }
    }

    if (random_prune) {
      std::vector<std::pair<std::size_t, std::size_t>> positions;
      positions.reserve(B * T);
      double total_mass = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
          positions.emplace_back(b, t);
          total_mass += row_mass(traces[b].rewards, t);
        }
      }
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::Prune), ustep}));
      for (std::size_t i = positions.size(); i > 1; --i) std::swap(positions[i - 1], positions[rng.below(i)]);
      std::vector<std::vector<std::uint8_t>> keep(B, std::vector<std::uint8_t>(T, 0));
      if (cfg.mode == RunMode::RandomPruneTokens) {
        const double target = reference.empty() ? *cfg.random_prune_fraction * static_cast<double>(positions.size())
                                                : static_cast<double>(reference[ustep].tokens_scored);
        const auto n = std::min(positions.size(), static_cast<std::size_t>(std::llround(target)));
        for (std::size_t i = 0; i < n; ++i) keep[positions[i].first][positions[i].second] = 1;
      } else {
        const double target =
            reference.empty() ? *cfg.random_prune_fraction * total_mass : reference[ustep].reward_mass_scored;
        double kept = 0.0;
        for (const auto& [b, t] : positions) {
          if (kept >= target) break;
          keep[b][t] = 1;
          kept += row_mass(traces[b].rewards, t);
        }
      }
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
          if (keep[b][t]) continue;
          weights[b][t] = 0.0;
          traces[b].records[t].valid = false;
          for (double& r : traces[b].rewards.row(t)) r = 0.0;
        }
      }
    }

    std::vector<double> band_sum(bands, 0.0);
    std::vector<double> band_cnt(bands, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) {
        const double w = weights[b][t];
        const auto band = t / static_cast<std::size_t>(cfg.band_width);
        band_sum[band] += w;
        band_cnt[band] += 1.0;
        if (traces[b].records[t].valid && w > 0.0) {
          ++row.tokens_scored;
          row.reward_mass_scored += row_mass(traces[b].rewards, t) / (scale ? w : 1.0);
        }
      }
    }
    row.tokens_generated = static_cast<std::int64_t>(B * T);
    for (std::size_t band = 0; band < bands; ++band) {
      row.mean_loss_weight_by_band.push_back(band_cnt[band] > 0 ? band_sum[band] / band_cnt[band] : 0.0);
    }
    double e_sum = 0.0;
    for (auto e : effective) e_sum += static_cast<double>(e);
    row.mean_effective_length = e_sum / static_cast<double>(B);
    row.hit_ratio = hit_ratio(effective, budget_now, cfg.budget.margin);

    if (step % cfg.profile_stride == 0) {
      for (std::size_t t = 0; t < T; ++t) {
        double w = 0.0;
        double r = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          w += weights[b][t];
          r += raws[b][t];
        }
        profiles << step << ',' << t << ',' << format_double(w / static_cast<double>(B)) << ','
                 << format_double(r / static_cast<double>(B)) << ',' << B << '\n';
      }
      if (!profiles) fail(ErrorKind::Io, "failed writing " + profiles_path.string());
    }

    student = train_step(std::move(student), traces, cfg.learning_rate);
    append_metrics(row, metrics_path, cfg.metrics_jsonl);
    summary.tokens_generated += row.tokens_generated;
    summary.tokens_scored += row.tokens_scored;

    if (dynamic_budget) budget = pruneopd::step(budget, row.hit_ratio, cfg.budget);
    SPDLOG_DEBUG("step {} M={} h={:.3f} E={:.1f} overlap={:.3f}", step, budget_now, row.hit_ratio,
                 row.mean_effective_length, row.mean_overlap);
    if ((step + 1) % 50 == 0) spdlog::info("step {}/{} budget {} scored {}", step + 1, cfg.steps, budget_now, summary.tokens_scored);
  }
  profiles.close();

  summary.final_budget = sc.max_length;
  if (dynamic_budget) summary.final_budget = budget.m_current;
  if (cfg.mode == RunMode::FixedTruncate) summary.final_budget = std::min(cfg.truncate_length, sc.max_length);
  summary.final_kl_by_band = eval_kl_by_band(eval_set, student, teacher, sc.max_length, cfg.band_width, summary.final_kl);
  write_text_file(cfg.output_dir / "summary.json", summary_to_json(summary).dump(2) + "\n");
  return summary;
}

RunSummary read_summary(const fs::path& run_dir) {
  const fs::path path = run_dir / "summary.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  try {
    const json j = json::parse(in);
    RunSummary s;
    s.mode = j.at("mode").get<std::string>();
    s.scenario_fingerprint = j.at("scenario_fingerprint").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.steps = j.at("steps").get<std::int64_t>();
    s.tokens_generated = j.at("tokens_generated").get<std::int64_t>();
    s.tokens_scored = j.at("tokens_scored").get<std::int64_t>();
    s.initial_kl = j.at("initial_kl").get<double>();
    s.initial_kl_by_band = j.at("initial_kl_by_band").get<std::vector<double>>();
    s.final_kl = j.at("final_kl").get<double>();
    s.band_width = j.at("band_width").get<std::int64_t>();
    s.final_kl_by_band = j.at("final_kl_by_band").get<std::vector<double>>();
    s.final_budget = j.at("final_budget").get<std::int64_t>();
    s.metrics_file = j.at("metrics_file").get<std::string>();
    s.profiles_file = j.at("profiles_file").get<std::string>();
    return s;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

std::vector<ComparisonRow> compare(std::span<const fs::path> run_dirs) {
  if (run_dirs.size() < 2) fail(ErrorKind::InvalidConfig, "compare needs at least two run directories");
  std::vector<RunSummary> summaries;
  for (const auto& dir : run_dirs) summaries.push_back(read_summary(dir));
  const auto& first = summaries.front();
  for (std::size_t i = 1; i < summaries.size(); ++i) {
    if (summaries[i].scenario_fingerprint != first.scenario_fingerprint || summaries[i].seed != first.seed) {
      fail(ErrorKind::InvalidConfig, "run " + run_dirs[i].string() + " uses a different scenario or seed than " +
                                         run_dirs[0].string());
    }
  }
  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    ComparisonRow row;
    row.run = run_dirs[i].filename().empty() ? run_dirs[i].parent_path().filename().string() : run_dirs[i].filename().string();
    row.mode = summaries[i].mode;
    row.final_kl = summaries[i].final_kl;
    row.tokens_scored = summaries[i].tokens_scored;
    row.reduction_pct = first.tokens_scored == 0
                            ? 0.0
                            : 100.0 * static_cast<double>(first.tokens_scored - summaries[i].tokens_scored) /
                                  static_cast<double>(first.tokens_scored);
    rows.push_back(row);
  }
  return rows;
}

std::string render_comparison(std::span<const ComparisonRow> rows) {
  std::vector<std::array<std::string, 5>> cells;
  cells.push_back({"run", "mode", "final_kl", "tokens_scored", "reduction_pct"});
  for (const auto& r : rows) {
    char kl[32];
    char red[32];
    std::snprintf(kl, sizeof(kl), "%.6g", r.final_kl);
    std::snprintf(red, sizeof(red), "%.2f", r.reduction_pct);
    cells.push_back({r.run, r.mode, kl, std::to_string(r.tokens_scored), red});
  }
  std::array<std::size_t, 5> width{};
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 5; ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 5; ++c) {
      const bool left = c < 2;
      const std::string pad(width[c] - row[c].size(), ' ');
      out += left ? row[c] + pad : pad + row[c];
      out += c + 1 < 5 ? "  " : "\n";
    }
  }
  return out;
}

void write_comparison_csv(std::span<const ComparisonRow> rows, const fs::path& path) {
  std::string text = "run,mode,final_kl,tokens_scored,reduction_pct\n";
  for (const auto& r : rows) {
    text += r.run + ',' + r.mode + ',' + format_double(r.final_kl) + ',' + std::to_string(r.tokens_scored) + ',' +
            format_double(r.reduction_pct) + '\n';
  }
  write_text_file(path, text);
}

WeightProfile emit_weight_profile(const fs::path& run_dir, std::int64_t step_stride, std::int64_t band_width) {
  if (step_stride < 1) fail(ErrorKind::InvalidConfig, "stride must be >= 1");
  if (band_width < 1) fail(ErrorKind::InvalidConfig, "band width must be >= 1");
  const auto lines = read_profiles(run_dir / "profiles.csv");
  if (lines.empty()) fail(ErrorKind::Io, "run " + run_dir.string() + " has no profile dumps");

  WeightProfile out;
  std::int64_t max_position = 0;
  for (const auto& l : lines) {
    max_position = std::max(max_position, l.position);
    if (l.step % step_stride == 0 && (out.steps.empty() || out.steps.back() != l.step)) {
      if (std::find(out.steps.begin(), out.steps.end(), l.step) == out.steps.end()) out.steps.push_back(l.step);
    }
  }
  std::sort(out.steps.begin(), out.steps.end());
  if (out.steps.empty()) fail(ErrorKind::Io, "no profile dumps at a multiple of stride " + std::to_string(step_stride));
  const auto bands = static_cast<std::size_t>(max_position / band_width + 1);
  for (std::size_t b = 0; b < bands; ++b) out.band_starts.push_back(static_cast<std::int64_t>(b) * band_width);

  std::vector<std::vector<double>> sum(out.steps.size(), std::vector<double>(bands, 0.0));
  std::vector<std::vector<double>> cnt(out.steps.size(), std::vector<double>(bands, 0.0));
  for (const auto& l : lines) {
    const auto it = std::lower_bound(out.steps.begin(), out.steps.end(), l.step);
    if (it == out.steps.end() || *it != l.step) continue;
    const auto s = static_cast<std::size_t>(it - out.steps.begin());
    const auto b = static_cast<std::size_t>(l.position / band_width);
    sum[s][b] += l.mean_loss_weight * l.count;
    cnt[s][b] += l.count;
  }
  out.curves.assign(out.steps.size(), std::vector<std::optional<double>>(bands));
  for (std::size_t s = 0; s < out.steps.size(); ++s) {
    for (std::size_t b = 0; b < bands; ++b) {
      if (cnt[s][b] > 0) out.curves[s][b] = sum[s][b] / cnt[s][b];
    }
  }
  return out;
}

void write_weight_profile(const WeightProfile& profile, std::ostream& out) {
  out << "band_start";
  for (auto s : profile.steps) out << ",step_" << s;
  out << '\n';
  for (std::size_t b = 0; b < profile.band_starts.size(); ++b) {
    out << profile.band_starts[b];
    for (std::size_t s = 0; s < profile.steps.size(); ++s) {
      out << ',';
      if (profile.curves[s][b]) out << format_double(*profile.curves[s][b]);
    }
    out << '\n';
  }
}

}  // namespace pruneopd
