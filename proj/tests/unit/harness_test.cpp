// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "pruneopd/error.hpp"
#include "pruneopd/harness.hpp"
#include "pruneopd/tensor_io.hpp"

namespace pruneopd {
namespace {

namespace fs = std::filesystem;

fs::path run_root() {
  static const fs::path root = [] {
    const auto p = fs::temp_directory_path() / "pruneopd_harness_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// Short collapse-style scenario that runs in well under a second.
ConfigMap small(std::string mode, std::string name) {
  return {{"scenario.preset", "collapse"},
          {"scenario.max_length", "96"},
          {"scenario.curve", "0:0.95,24:0.95,32:0.3"},
          {"scenario.student_bands", "0,24"},
          {"mode", std::move(mode)},
          {"steps", "6"},
          {"batch_size", "2"},
          {"rollouts_per_prompt", "2"},
          {"eval.rollouts", "2"},
          {"metrics.band_width", "16"},
          {"profile.stride", "1"},
          {"output_dir", (run_root() / name).string()}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunSummary run_map(const ConfigMap& m) { return run(make_experiment_config(m)); }

TEST(Run, ByteIdenticalAcrossRepeats) {
  run_map(small("prune_opd", "rep_a"));
  run_map(small("prune_opd", "rep_b"));
  EXPECT_EQ(slurp(run_root() / "rep_a" / "metrics.csv"), slurp(run_root() / "rep_b" / "metrics.csv"));
  EXPECT_EQ(slurp(run_root() / "rep_a" / "profiles.csv"), slurp(run_root() / "rep_b" / "profiles.csv"));
  EXPECT_EQ(slurp(run_root() / "rep_a" / "summary.json"), slurp(run_root() / "rep_b" / "summary.json"));
}

TEST(Run, DisabledPruneMatchesBaseline) {
  run_map(small("opd_baseline", "id_base"));
  auto m = small("prune_opd", "id_prune");
  m["reliability.enabled"] = "false";
  m["budget.enabled"] = "false";
  run_map(m);
  EXPECT_EQ(slurp(run_root() / "id_base" / "metrics.csv"), slurp(run_root() / "id_prune" / "metrics.csv"));
  EXPECT_EQ(read_summary(run_root() / "id_base").final_kl, read_summary(run_root() / "id_prune").final_kl);
}

TEST(Run, SummaryRecordsTotals) {
  const auto s = run_map(small("prune_opd", "totals"));
  const auto rows = read_metrics(run_root() / "totals" / "metrics.csv");
  ASSERT_EQ(rows.size(), 6u);
  std::int64_t gen = 0;
  std::int64_t scored = 0;
  for (const auto& r : rows) {
    gen += r.tokens_generated;
    scored += r.tokens_scored;
    EXPECT_EQ(r.tokens_generated, 4 * r.m_current);
  }
  EXPECT_EQ(s.tokens_generated, gen);
  EXPECT_EQ(s.tokens_scored, scored);
  EXPECT_EQ(read_summary(run_root() / "totals").tokens_scored, scored);
}

TEST(Run, FixedTruncateClampsLength) {
  auto m = small("fixed_truncate", "trunc");
  m["truncate.length"] = "40";
  const auto s = run_map(m);
  EXPECT_EQ(s.tokens_generated, 6 * 4 * 40);
}

TEST(Run, RandomPruneMatchesReferenceTokens) {
  const auto ref = run_map(small("prune_opd", "rp_ref"));
  auto m = small("random_prune_tokens", "rp_tokens");
  m["random_prune.reference"] = (run_root() / "rp_ref").string();
  const auto s = run_map(m);
  EXPECT_LE(std::abs(static_cast<double>(s.tokens_scored - ref.tokens_scored)), 0.01 * ref.tokens_scored);
}

TEST(Run, RandomPruneMatchesReferenceMass) {
  run_map(small("prune_opd", "rpm_ref"));
  auto m = small("random_prune_mass", "rp_mass");
  m["random_prune.reference"] = (run_root() / "rpm_ref").string();
  run_map(m);
  const auto ref = read_metrics(run_root() / "rpm_ref" / "metrics.csv");
  const auto got = read_metrics(run_root() / "rp_mass" / "metrics.csv");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_GE(got[i].reward_mass_scored, ref[i].reward_mass_scored * (1 - 1e-12));
    EXPECT_LE(got[i].reward_mass_scored, ref[i].reward_mass_scored * 1.05 + 1.0);
  }
}

TEST(Run, RandomPruneFraction) {
  auto m = small("random_prune_tokens", "rp_frac");
  m["random_prune.fraction"] = "0.25";
  const auto s = run_map(m);
  EXPECT_EQ(s.tokens_scored, s.tokens_generated / 4);
}

TEST(Run, ShortReferenceRejected) {
  run_map(small("prune_opd", "short_ref"));
  auto m = small("random_prune_tokens", "short_use");
  m["steps"] = "10";
  m["random_prune.reference"] = (run_root() / "short_ref").string();
  EXPECT_THROW(run_map(m), Error);
}

TEST(Run, LossWeightDecaysBeyondCollapse) {
  auto m = small("prune_opd", "decay");
  m["budget.enabled"] = "false";
  m["steps"] = "1";
  run_map(m);
  const auto row = read_metrics(run_root() / "decay" / "metrics.csv").front();
  const auto& lw = row.mean_loss_weight_by_band;
  // Bands of 16 positions; the overlap collapses from position 32.
  for (std::size_t b = 3; b < lw.size(); ++b) {
    if (lw[b - 1] > 0.5) {
      EXPECT_LT(lw[b], lw[b - 1]) << b;
    } else {
      EXPECT_EQ(lw[b], 0.5) << b;
    }
  }
  EXPECT_LT(lw.back(), lw.front());
}

TEST(Compare, SelfIsZeroReduction) {
  run_map(small("opd_baseline", "cmp_a"));
  const std::vector<fs::path> dirs{run_root() / "cmp_a", run_root() / "cmp_a"};
  const auto rows = compare(dirs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].reduction_pct, 0.0);
  EXPECT_EQ(rows[0].final_kl, rows[1].final_kl);
  EXPECT_NE(render_comparison(rows).find("reduction_pct"), std::string::npos);
}

TEST(Compare, RefusesMismatchedScenarios) {
  run_map(small("opd_baseline", "mm_a"));
  auto m = small("opd_baseline", "mm_b");
  m["seed"] = "99";
  run_map(m);
  const std::vector<fs::path> dirs{run_root() / "mm_a", run_root() / "mm_b"};
  EXPECT_THROW(compare(dirs), Error);
  const std::vector<fs::path> one{run_root() / "mm_a"};
  EXPECT_THROW(compare(one), Error);
}

TEST(WeightProfile, StrideEqualToStepsGivesOneCurve) {
  run_map(small("prune_opd", "wp_one"));
  const auto p = emit_weight_profile(run_root() / "wp_one", 6);
  EXPECT_EQ(p.steps, (std::vector<std::int64_t>{0}));
  std::stringstream ss;
  write_weight_profile(p, ss);
  EXPECT_EQ(ss.str().rfind("band_start,step_0\n", 0), 0u);
}

TEST(WeightProfile, NoDriftIsFlat) {
  auto m = small("prune_opd", "wp_flat");
  m["scenario.preset"] = "no_drift";
  m.erase("scenario.curve");
  m.erase("scenario.student_bands");
  run_map(m);
  const auto p = emit_weight_profile(run_root() / "wp_flat", 2);
  ASSERT_EQ(p.steps.size(), 3u);
  for (const auto& curve : p.curves) {
    for (const auto& v : curve) {
      if (v) EXPECT_EQ(*v, 1.5);
    }
  }
}

TEST(WeightProfile, HigherGammaNeverRaisesCurves) {
  auto lo = small("prune_opd", "wp_g06");
  auto hi = small("prune_opd", "wp_g08");
  lo["compat.gamma"] = "0.6";
  hi["compat.gamma"] = "0.8";
  lo["budget.enabled"] = hi["budget.enabled"] = "false";
  run_map(lo);
  run_map(hi);
  const auto a = emit_weight_profile(run_root() / "wp_g06", 1);
  const auto b = emit_weight_profile(run_root() / "wp_g08", 1);
  ASSERT_EQ(a.steps, b.steps);
  for (std::size_t s = 0; s < a.steps.size(); ++s) {
    for (std::size_t band = 0; band < a.band_starts.size(); ++band) {
      if (a.curves[s][band] && b.curves[s][band]) EXPECT_LE(*b.curves[s][band], *a.curves[s][band]);
    }
  }
}

TEST(WeightProfile, MissingDumpsDiagnosed) {
  fs::create_directories(run_root() / "empty");
  EXPECT_THROW(emit_weight_profile(run_root() / "empty", 1), Error);
  run_map(small("prune_opd", "wp_stride"));
  EXPECT_THROW(emit_weight_profile(run_root() / "wp_stride", 0), Error);
}

}  // namespace
}  // namespace pruneopd
