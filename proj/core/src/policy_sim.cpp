// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/policy_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "pruneopd/error.hpp"
#include "pruneopd/rng.hpp"

namespace pruneopd {

namespace {

constexpr std::size_t kMaxTableEntries = std::size_t{1} << 27;

void log_softmax_into(std::span<const double> logits, double temperature, std::vector<double>& out) {
  out.resize(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / temperature);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l / temperature - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lse;
}

void softmax_into(std::span<const double> logits, double temperature, std::vector<double>& out) {
  out.resize(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - mx);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
}

TokenId sample_index(std::span<const double> dist, double u) {
  double acc = 0.0;
  TokenId last_positive = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    last_positive = static_cast<TokenId>(i);
    acc += dist[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return last_positive;
}

std::vector<std::int64_t> absolute_band_starts(std::span<const std::int64_t> response_starts,
                                               std::int64_t prompt_length) {
  std::vector<std::int64_t> out{0};
  for (std::size_t i = 1; i < response_starts.size(); ++i) out.push_back(prompt_length + response_starts[i]);
  return out;
}

// Full prefix (prompt + response[0..t)) for every position of a trace.
class PrefixView {
 public:
  explicit PrefixView(const RolloutTrace& trace) : tokens_(trace.prompt) {
    tokens_.insert(tokens_.end(), trace.response.begin(), trace.response.end());
    prompt_len_ = trace.prompt.size();
  }
  std::span<const TokenId> at(std::size_t t) const { return {tokens_.data(), prompt_len_ + t}; }

 private:
  std::vector<TokenId> tokens_;
  std::size_t prompt_len_ = 0;
};

void check_trace_shape(const RolloutTrace& trace) {
  if (trace.response.size() < trace.records.size() || trace.rewards.rows() != trace.records.size()) {
    fail(ErrorKind::InvalidRecord, "rollout " + std::to_string(trace.rollout_id) + ": reward/record shape mismatch");
  }
  for (const auto& rec : trace.records) {
    if (rec.valid && rec.student.size() != trace.rewards.cols()) {
      fail(ErrorKind::InvalidRecord, "rollout " + std::to_string(trace.rollout_id) +
                                         ": reward columns do not match student candidates");
    }
  }
}

}  // namespace

std::size_t TabularPolicy::contexts_per_band() const {
  std::size_t n = 1;
  for (int i = 0; i < context_order; ++i) n *= static_cast<std::size_t>(vocab_size) + 1;
  return n;
}

std::size_t TabularPolicy::context_index(std::span<const TokenId> prefix) const {
  const auto len = static_cast<std::int64_t>(prefix.size());
  const auto band = static_cast<std::size_t>(std::upper_bound(band_starts.begin(), band_starts.end(), len) -
                                             band_starts.begin() - 1);
  std::size_t idx = 0;
  std::size_t radix = 1;
  for (int i = 0; i < context_order; ++i) {
    std::size_t digit = static_cast<std::size_t>(vocab_size);
    if (static_cast<std::size_t>(i) < prefix.size()) {
      const TokenId tok = prefix[prefix.size() - 1 - static_cast<std::size_t>(i)];
      if (tok < 0 || tok >= vocab_size) {
        fail(ErrorKind::InvalidRecord, "token " + std::to_string(tok) + " outside vocabulary of size " +
                                           std::to_string(vocab_size));
      }
      digit = static_cast<std::size_t>(tok);
    }
    idx += digit * radix;
    radix *= static_cast<std::size_t>(vocab_size) + 1;
  }
  return band * contexts_per_band() + idx;
}

std::span<const double> TabularPolicy::row(std::size_t context) const {
  return {logits.data() + context * static_cast<std::size_t>(vocab_size), static_cast<std::size_t>(vocab_size)};
}

std::span<double> TabularPolicy::row(std::size_t context) {
  return {logits.data() + context * static_cast<std::size_t>(vocab_size), static_cast<std::size_t>(vocab_size)};
}

TabularPolicy make_policy(int vocab_size, int context_order, std::vector<std::int64_t> band_starts,
                          double temperature) {
  TabularPolicy policy;
  policy.vocab_size = vocab_size;
  policy.context_order = context_order;
  policy.temperature = temperature;
  policy.band_starts = std::move(band_starts);
  if (vocab_size < 1 || context_order < 0 || context_order > 6 || policy.band_starts.empty()) {
    fail(ErrorKind::InvalidConfig, "policy needs vocab_size >= 1, 0 <= context_order <= 6 and at least one band");
  }
  const double entries = static_cast<double>(policy.band_starts.size()) *
                         std::pow(static_cast<double>(vocab_size) + 1.0, context_order) * vocab_size;
  if (entries > static_cast<double>(kMaxTableEntries)) {
    fail(ErrorKind::InvalidConfig, "policy table too large");
  }
  policy.logits.assign(policy.num_contexts() * static_cast<std::size_t>(vocab_size), 0.0);
  validate(policy);
  return policy;
}

void validate(const TabularPolicy& policy) {
  if (policy.vocab_size < 1) fail(ErrorKind::InvalidConfig, "policy vocab_size must be >= 1");
  if (policy.context_order < 0) fail(ErrorKind::InvalidConfig, "policy context_order must be >= 0");
  if (!(policy.temperature > 0.0) || !std::isfinite(policy.temperature)) {
    fail(ErrorKind::InvalidConfig, "policy temperature must be positive");
  }
  if (policy.band_starts.empty() || policy.band_starts.front() != 0) {
    fail(ErrorKind::InvalidConfig, "policy bands must start at prefix length 0");
  }
  for (std::size_t i = 1; i < policy.band_starts.size(); ++i) {
    if (policy.band_starts[i] <= policy.band_starts[i - 1]) {
      fail(ErrorKind::InvalidConfig, "policy band starts must be strictly increasing");
    }
  }
  if (policy.logits.size() != policy.num_contexts() * static_cast<std::size_t>(policy.vocab_size)) {
    fail(ErrorKind::InvalidConfig, "policy logit table has the wrong size");
  }
}

std::vector<double> next_dist(const TabularPolicy& policy, std::span<const TokenId> prefix) {
  std::vector<double> out;
  softmax_into(policy.row(policy.context_index(prefix)), policy.temperature, out);
  return out;
}

std::vector<double> next_log_dist(const TabularPolicy& policy, std::span<const TokenId> prefix) {
  std::vector<double> out;
  log_softmax_into(policy.row(policy.context_index(prefix)), policy.temperature, out);
  return out;
}

TopKSlice topk_from_dist(std::span<const double> dist, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > dist.size()) {
    fail(ErrorKind::InvalidConfig, "top-k size " + std::to_string(k) + " outside [1, " +
                                       std::to_string(dist.size()) + "]");
  }
  std::vector<TokenId> ids(dist.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](TokenId a, TokenId b) {
    if (dist[static_cast<std::size_t>(a)] != dist[static_cast<std::size_t>(b)]) {
      return dist[static_cast<std::size_t>(a)] > dist[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  TopKSlice slice;
  slice.token_ids.assign(ids.begin(), ids.begin() + k);
  slice.probs.reserve(static_cast<std::size_t>(k));
  for (TokenId id : slice.token_ids) slice.probs.push_back(dist[static_cast<std::size_t>(id)]);
  return slice;
}

TopKSlice topk_of(const TabularPolicy& policy, std::span<const TokenId> prefix, int k) {
  return topk_from_dist(next_dist(policy, prefix), k);
}

namespace {

void reward_row(const TopKSlice& slice, std::span<const double> lp, std::span<const double> lq, std::span<double> out) {
  double mass = 0.0;
  for (double p : slice.probs) mass += p;
  if (!(mass > 0.0)) fail(ErrorKind::InvalidRecord, "student slice has zero mass");
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (!std::isfinite(lq[j]) || !std::isfinite(lp[j])) fail(ErrorKind::InvalidRecord, "non-finite log-probability in reward");
    out[j] = (slice.probs[j] / mass) * (lq[j] - lp[j]);
  }
}

}  // namespace

std::vector<double> opd_reward(const TopKSlice& student_slice, std::span<const double> teacher_logprobs_at_ids) {
  if (teacher_logprobs_at_ids.size() != student_slice.size() || student_slice.probs.size() != student_slice.size()) {
    fail(ErrorKind::InvalidRecord, "teacher log-probabilities must align with the student candidates");
  }
  std::vector<double> lp(student_slice.size());
  for (std::size_t j = 0; j < lp.size(); ++j) lp[j] = std::log(student_slice.probs[j]);
  std::vector<double> row(student_slice.size());
  reward_row(student_slice, lp, teacher_logprobs_at_ids, row);
  return row;
}

RolloutTrace sample_rollout(const TabularPolicy& student, const TabularPolicy& teacher,
                            std::span<const TokenId> prompt, std::int64_t max_length, int k,
                            std::uint64_t seed, std::int64_t rollout_id) {
  if (max_length < 1) fail(ErrorKind::InvalidConfig, "max_length must be >= 1");
  if (student.vocab_size != teacher.vocab_size) fail(ErrorKind::InvalidConfig, "student and teacher vocabularies differ");
  if (k < 1 || k > student.vocab_size) fail(ErrorKind::InvalidConfig, "k must lie in [1, vocab_size]");

  Rng rng(seed);
  RolloutTrace trace;
  trace.rollout_id = rollout_id;
  trace.prompt.assign(prompt.begin(), prompt.end());
  const auto T = static_cast<std::size_t>(max_length);
  trace.records.reserve(T);
  trace.response.reserve(T);
  trace.rewards = RewardTensor(T, static_cast<std::size_t>(k));

  std::vector<TokenId> prefix(prompt.begin(), prompt.end());
  prefix.reserve(prompt.size() + T);
  std::vector<double> sdist;
  std::vector<double> slog;
  std::vector<double> tdist;
  std::vector<double> tlog;
  std::vector<double> lp(static_cast<std::size_t>(k));
  std::vector<double> lq(static_cast<std::size_t>(k));
  for (std::size_t t = 0; t < T; ++t) {
    const auto srow = student.row(student.context_index(prefix));
    const auto trow = teacher.row(teacher.context_index(prefix));
    softmax_into(srow, student.temperature, sdist);
    log_softmax_into(srow, student.temperature, slog);
    softmax_into(trow, teacher.temperature, tdist);
    log_softmax_into(trow, teacher.temperature, tlog);

    PositionRecord rec;
    rec.student = topk_from_dist(sdist, k);
    rec.teacher = topk_from_dist(tdist, k);
    for (std::size_t j = 0; j < lq.size(); ++j) {
      const auto id = static_cast<std::size_t>(rec.student.token_ids[j]);
      lp[j] = slog[id];
      lq[j] = tlog[id];
    }
    reward_row(rec.student, lp, lq, trace.rewards.row(t));

    rec.sampled_token = sample_index(sdist, rng.uniform());
    rec.valid = true;
    prefix.push_back(rec.sampled_token);
    trace.response.push_back(rec.sampled_token);
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

double reverse_kl(const TabularPolicy& student, const TabularPolicy& teacher, std::span<const TokenId> prefix) {
  if (student.vocab_size != teacher.vocab_size) fail(ErrorKind::InvalidConfig, "student and teacher vocabularies differ");
  const auto lp = next_log_dist(student, prefix);
  const auto lq = next_log_dist(teacher, prefix);
  double kl = 0.0;
  for (std::size_t v = 0; v < lp.size(); ++v) {
    const double p = std::exp(lp[v]);
    if (p == 0.0) continue;
    if (lq[v] == -std::numeric_limits<double>::infinity()) return std::numeric_limits<double>::infinity();
    kl += p * (lp[v] - lq[v]);
  }
  return std::max(kl, 0.0);
}

double surrogate_objective(const TabularPolicy& student, std::span<const RolloutTrace> traces) {
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> lp;
  for (const auto& trace : traces) {
    check_trace_shape(trace);
    const PrefixView prefixes(trace);
    for (std::size_t t = 0; t < trace.records.size(); ++t) {
      const auto& rec = trace.records[t];
      if (!rec.valid) continue;
      ++count;
      log_softmax_into(student.row(student.context_index(prefixes.at(t))), student.temperature, lp);
      const auto r = trace.rewards.row(t);
      for (std::size_t j = 0; j < r.size(); ++j) total += r[j] * lp[static_cast<std::size_t>(rec.student.token_ids[j])];
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

std::vector<double> surrogate_gradient(const TabularPolicy& student, std::span<const RolloutTrace> traces) {
  std::vector<double> grad(student.logits.size(), 0.0);
  std::size_t count = 0;
  std::vector<double> p;
  const auto V = static_cast<std::size_t>(student.vocab_size);
  for (const auto& trace : traces) {
    check_trace_shape(trace);
    const PrefixView prefixes(trace);
    for (std::size_t t = 0; t < trace.records.size(); ++t) {
      const auto& rec = trace.records[t];
      if (!rec.valid) continue;
      ++count;
      const auto r = trace.rewards.row(t);
      double reward_sum = 0.0;
      for (double x : r) reward_sum += x;
      bool all_zero = true;
      for (double x : r) all_zero = all_zero && x == 0.0;
      if (all_zero) continue;
      const std::size_t ctx = student.context_index(prefixes.at(t));
      softmax_into(student.row(ctx), student.temperature, p);
      double* g = grad.data() + ctx * V;
      const double inv_temp = 1.0 / student.temperature;
      for (std::size_t j = 0; j < r.size(); ++j) g[rec.student.token_ids[j]] += r[j] * inv_temp;
      for (std::size_t i = 0; i < V; ++i) g[i] -= p[i] * reward_sum * inv_temp;
    }
  }
  if (count > 0) {
    const double inv = 1.0 / static_cast<double>(count);
    for (double& g : grad) g *= inv;
  }
  return grad;
}

TabularPolicy train_step(TabularPolicy student, std::span<const RolloutTrace> traces, double learning_rate) {
  if (!std::isfinite(learning_rate)) fail(ErrorKind::InvalidConfig, "learning rate must be finite");
  const auto grad = surrogate_gradient(student, traces);
  for (std::size_t i = 0; i < grad.size(); ++i) student.logits[i] += learning_rate * grad[i];
  return student;
}

void validate(const DriftScenario& s) {
  if (s.max_length < 1) fail(ErrorKind::InvalidConfig, "scenario.max_length must be >= 1");
  if (s.prompt_length < 0) fail(ErrorKind::InvalidConfig, "scenario.prompt_length must be >= 0");
  if (s.vocab_size < 1) fail(ErrorKind::InvalidConfig, "scenario.vocab_size must be >= 1");
  if (s.k < 1 || s.k > s.vocab_size) fail(ErrorKind::InvalidConfig, "scenario.k must lie in [1, vocab_size]");
  if (s.context_order < 0) fail(ErrorKind::InvalidConfig, "scenario.context_order must be >= 0");
  if (s.teacher_segment < 1) fail(ErrorKind::InvalidConfig, "scenario.teacher_segment must be >= 1");
  if (s.teacher_segment_from < 0) fail(ErrorKind::InvalidConfig, "scenario.teacher_segment_from must be >= 0");
  if (!(s.logit_scale >= 0.0) || !std::isfinite(s.logit_scale)) {
    fail(ErrorKind::InvalidConfig, "scenario.logit_scale must be >= 0");
  }
  if (s.curve.empty()) fail(ErrorKind::InvalidConfig, "scenario.curve needs at least one knot");
  for (std::size_t i = 0; i < s.curve.size(); ++i) {
    if (!(s.curve[i].target >= 0.0 && s.curve[i].target <= 1.0)) {
      fail(ErrorKind::InvalidConfig, "scenario.curve target outside [0, 1] at knot " + std::to_string(i));
    }
    if (i > 0 && s.curve[i].position <= s.curve[i - 1].position) {
      fail(ErrorKind::InvalidConfig, "scenario.curve positions must be strictly increasing");
    }
  }
  if (s.student_band_starts.empty() || s.student_band_starts.front() != 0) {
    fail(ErrorKind::InvalidConfig, "scenario.student_bands must start at 0");
  }
  for (std::size_t i = 1; i < s.student_band_starts.size(); ++i) {
    if (s.student_band_starts[i] <= s.student_band_starts[i - 1]) {
      fail(ErrorKind::InvalidConfig, "scenario.student_bands must be strictly increasing");
    }
  }
}

double target_overlap(const DriftScenario& s, double position) {
  const auto& c = s.curve;
  if (position <= static_cast<double>(c.front().position)) return c.front().target;
  if (position >= static_cast<double>(c.back().position)) return c.back().target;
  for (std::size_t i = 1; i < c.size(); ++i) {
    const auto x1 = static_cast<double>(c[i].position);
    if (position <= x1) {
      const auto x0 = static_cast<double>(c[i - 1].position);
      const double a = (position - x0) / (x1 - x0);
      return c[i - 1].target + a * (c[i].target - c[i - 1].target);
    }
  }
  return c.back().target;
}

std::pair<TabularPolicy, TabularPolicy> build_drift_pair(const DriftScenario& s) {
  validate(s);
  TabularPolicy student =
      make_policy(s.vocab_size, s.context_order, absolute_band_starts(s.student_band_starts, s.prompt_length));
  Rng student_rng(derive_seed(s.seed, {static_cast<std::uint64_t>(Stream::Student)}));
  for (double& l : student.logits) l = s.logit_scale * student_rng.normal();

  std::vector<std::int64_t> teacher_starts;
  teacher_starts.push_back(0);
  for (std::int64_t p = 0; p < s.max_length; p += s.teacher_segment) {
    if (p >= s.teacher_segment_from) teacher_starts.push_back(p);
  }
  for (std::int64_t p : s.student_band_starts) teacher_starts.push_back(p);
  std::sort(teacher_starts.begin(), teacher_starts.end());
  teacher_starts.erase(std::unique(teacher_starts.begin(), teacher_starts.end()), teacher_starts.end());

  TabularPolicy teacher =
      make_policy(s.vocab_size, s.context_order, absolute_band_starts(teacher_starts, s.prompt_length));
  const std::size_t per_band = student.contexts_per_band();
  const auto V = static_cast<std::size_t>(s.vocab_size);
  const auto k = static_cast<std::size_t>(s.k);

  std::vector<TokenId> order(V);
  for (std::size_t b = 0; b < teacher_starts.size(); ++b) {
    const std::int64_t begin = teacher_starts[b];
    const std::int64_t end = b + 1 < teacher_starts.size() ? teacher_starts[b + 1] : std::max(s.max_length, begin + 1);
    const double target = target_overlap(s, 0.5 * static_cast<double>(begin + end - 1));
    const auto shared = static_cast<std::size_t>(std::lround(static_cast<double>(k) * target));
    const std::size_t swaps = k - shared;
    if (swaps > V - k) {
      fail(ErrorKind::InvalidConfig, "target overlap " + std::to_string(target) + " is unachievable with vocab " +
                                         std::to_string(V) + " and k " + std::to_string(k));
    }
    const auto student_band = static_cast<std::size_t>(
        std::upper_bound(s.student_band_starts.begin(), s.student_band_starts.end(), begin) -
        s.student_band_starts.begin() - 1);
    for (std::size_t c = 0; c < per_band; ++c) {
      const auto src = student.row(student_band * per_band + c);
      auto dst = teacher.row(b * per_band + c);
      std::copy(src.begin(), src.end(), dst.begin());
      if (swaps == 0) continue;
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](TokenId a, TokenId z) {
        if (src[static_cast<std::size_t>(a)] != src[static_cast<std::size_t>(z)]) {
          return src[static_cast<std::size_t>(a)] > src[static_cast<std::size_t>(z)];
        }
        return a < z;
      });
      // order[k..V) is the outside pool; draw `swaps` of them without replacement.
      Rng rng(derive_seed(s.seed, {static_cast<std::uint64_t>(Stream::Teacher), b, c}));
      for (std::size_t i = 0; i < swaps; ++i) {
        const std::size_t pick = k + i + rng.below(V - k - i);
        std::swap(order[k + i], order[pick]);
        const auto demoted = static_cast<std::size_t>(order[shared + i]);
        const auto promoted = static_cast<std::size_t>(order[k + i]);
        std::swap(dst[demoted], dst[promoted]);
      }
    }
  }
  return {std::move(student), std::move(teacher)};
}

std::vector<TokenId> sample_prompt(const DriftScenario& scenario, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenId> prompt(static_cast<std::size_t>(scenario.prompt_length));
  for (auto& tok : prompt) tok = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(scenario.vocab_size)));
  return prompt;
}

}  // namespace pruneopd
