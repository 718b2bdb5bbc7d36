// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <benchmark/benchmark.h>

#include "pruneopd/budget_controller.hpp"
#include "pruneopd/harness.hpp"
#include "pruneopd/policy_sim.hpp"
#include "pruneopd/reliability.hpp"
#include "pruneopd/tensor_io.hpp"

namespace {

using namespace pruneopd;

std::vector<RolloutTrace> collapse_batch(int n) {
  const auto sc = scenario_preset("collapse");
  const auto [s, t] = build_drift_pair(sc);
  std::vector<RolloutTrace> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(sample_rollout(s, t, sample_prompt(sc, static_cast<std::uint64_t>(i)), sc.max_length, sc.k,
                                 static_cast<std::uint64_t>(100 + i), i));
  }
  return out;
}

void BM_TopkOverlap(benchmark::State& state) {
  const auto tr = collapse_batch(1).front();
  std::size_t t = 0;
  for (auto _ : state) {
    const auto& rec = tr.records[t++ % tr.length()];
    benchmark::DoNotOptimize(topk_overlap(rec.student, rec.teacher, 16));
  }
}
BENCHMARK(BM_TopkOverlap);

void BM_ProcessRollout(benchmark::State& state) {
  const auto tr = collapse_batch(1).front();
  const CompatConfig compat;
  const ReliabilityConfig rel;
  for (auto _ : state) benchmark::DoNotOptimize(process_rollout(tr, compat, rel));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(tr.length()));
}
BENCHMARK(BM_ProcessRollout);

void BM_ControllerStep(benchmark::State& state) {
  const BudgetConfig cfg;
  BudgetState s = init(cfg);
  double h = 0.0;
  for (auto _ : state) {
    s = step(s, h, cfg);
    h = h > 0.5 ? 0.0 : h + 0.07;
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_ControllerStep);

void BM_SampleRollout(benchmark::State& state) {
  const auto sc = scenario_preset("collapse");
  const auto [s, t] = build_drift_pair(sc);
  const auto prompt = sample_prompt(sc, 1);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sample_rollout(s, t, prompt, sc.max_length, sc.k, seed++));
  state.SetItemsProcessed(state.iterations() * sc.max_length);
}
BENCHMARK(BM_SampleRollout);

void BM_TrainStep(benchmark::State& state) {
  const auto sc = scenario_preset("collapse");
  auto student = build_drift_pair(sc).first;
  const auto batch = collapse_batch(16);
  for (auto _ : state) student = train_step(std::move(student), batch, 1e-6);
  state.SetItemsProcessed(state.iterations() * 16 * sc.max_length);
}
BENCHMARK(BM_TrainStep);

void BM_TraceRoundTrip(benchmark::State& state) {
  const auto batch = collapse_batch(4);
  for (auto _ : state) {
    std::stringstream ss;
    write_traces(batch, ss);
    benchmark::DoNotOptimize(read_traces(ss));
  }
  state.SetItemsProcessed(state.iterations() * 4 * 256);
}
BENCHMARK(BM_TraceRoundTrip);

}  // namespace

BENCHMARK_MAIN();
