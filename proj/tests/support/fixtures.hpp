// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Random trace generators and scalar reference loops shared by the unit and
// acceptance tests. References are written position by position, without
// calling into the library.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "pruneopd/budget_controller.hpp"
#include "pruneopd/rng.hpp"
#include "pruneopd/trace.hpp"

namespace pruneopd::testing {

inline TopKSlice random_slice(Rng& rng, int vocab, int k) {
  std::vector<TokenId> pool(static_cast<std::size_t>(vocab));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(vocab - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  std::vector<double> w(static_cast<std::size_t>(k));
  double total = 0.0;
  for (double& x : w) total += (x = 0.05 + rng.uniform());
  // Visible mass somewhere in (0.5, 1].
  const double mass = 0.5 + 0.5 * rng.uniform() + 1e-12;
  std::vector<std::pair<double, TokenId>> items;
  for (int i = 0; i < k; ++i) items.emplace_back(std::min(1.0, w[static_cast<std::size_t>(i)] / total * std::min(mass, 1.0)), pool[static_cast<std::size_t>(i)]);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  TopKSlice s;
  for (const auto& [p, id] : items) {
    s.token_ids.push_back(id);
    s.probs.push_back(p);
  }
  return s;
}

// Half of the positions give the teacher a perturbed copy of the student
// slice, the rest an unrelated one. A random suffix is padding.
inline RolloutTrace random_trace(Rng& rng, std::int64_t id, int max_t = 64, int max_k = 16) {
  const int T = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_t)));
  const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_k)));
  const int vocab = k + 1 + static_cast<int>(rng.below(48));
  const int valid_len = static_cast<int>(rng.below(static_cast<std::uint64_t>(T) + 1));
  RolloutTrace tr;
  tr.rollout_id = id;
  tr.prompt = {0, 1};
  tr.rewards = RewardTensor(static_cast<std::size_t>(T), static_cast<std::size_t>(k));
  for (int t = 0; t < T; ++t) {
    PositionRecord rec;
    rec.student = random_slice(rng, vocab, k);
    if (rng.uniform() < 0.5) {
      rec.teacher = rec.student;
      // Replace a few ids with unused ones.
      const auto swaps = rng.below(static_cast<std::uint64_t>(k) + 1);
      std::set<TokenId> used(rec.student.token_ids.begin(), rec.student.token_ids.end());
      for (std::uint64_t s = 0; s < swaps; ++s) {
        TokenId fresh = 0;
        while (used.count(fresh) != 0) ++fresh;
        if (fresh >= vocab) break;
        used.insert(fresh);
        rec.teacher.token_ids[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(k)))] = fresh;
      }
      std::set<TokenId> check(rec.teacher.token_ids.begin(), rec.teacher.token_ids.end());
      if (check.size() != rec.teacher.token_ids.size()) rec.teacher = rec.student;
    } else {
      rec.teacher = random_slice(rng, vocab, k);
    }
    rec.sampled_token = rng.uniform() < 0.7 ? rec.student.token_ids[rng.below(static_cast<std::uint64_t>(k))]
                                             : static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
    rec.valid = t < valid_len;
    tr.response.push_back(rec.sampled_token);
    tr.records.push_back(std::move(rec));
    for (int j = 0; j < k; ++j) {
      tr.rewards(static_cast<std::size_t>(t), static_cast<std::size_t>(j)) = t < valid_len ? rng.normal() : 0.0;
    }
  }
  return tr;
}

// Reference overlap by brute force: count every pair.
inline double ref_overlap(const TopKSlice& s, const TopKSlice& t, int k) {
  int shared = 0;
  for (TokenId a : s.token_ids) {
    for (TokenId b : t.token_ids) shared += a == b ? 1 : 0;
  }
  return static_cast<double>(shared) / static_cast<double>(k);
}

// Reference nucleus test by scanning the teacher slice.
inline bool ref_top_p(TokenId sampled, const TopKSlice& t, double p) {
  double cum = 0.0;
  for (std::size_t m = 0; m < t.size(); ++m) {
    if (t.token_ids[m] == sampled) return true;
    cum += t.probs[m];
    if (cum >= p) return false;
  }
  return false;
}

struct RefProfile {
  std::vector<std::int64_t> cumulative;
  std::vector<double> raw;
  std::vector<double> loss_weight;
  std::size_t effective_length = 0;
  std::vector<double> scaled;
};

inline RefProfile ref_profile(const std::vector<std::uint8_t>& events, const std::vector<std::uint8_t>& valid,
                              const std::vector<double>& rewards, std::size_t cols, double w_drop, double w_base,
                              double eps) {
  RefProfile out;
  std::int64_t c = 0;
  for (std::size_t t = 0; t < events.size(); ++t) {
    c += events[t];
    out.cumulative.push_back(c);
    double r = 0.0;
    if (valid[t]) {
      r = 1.0 - w_drop * static_cast<double>(c);
      if (r < 0.0) r = 0.0;
      if (r > 1.0) r = 1.0;
    }
    out.raw.push_back(r);
    out.loss_weight.push_back(valid[t] ? r + w_base : 0.0);
    if (r > eps) ++out.effective_length;
    for (std::size_t j = 0; j < cols; ++j) out.scaled.push_back(out.loss_weight.back() * rewards[t * cols + j]);
  }
  return out;
}

// Budget controller written out as a plain state machine.
struct RefController {
  std::int64_t m;
  std::int64_t low = 0;
  void feed(double h, const BudgetConfig& cfg) {
    if (h >= cfg.rho) {
      m = m + cfg.delta;
      if (m > cfg.m_max) m = cfg.m_max;
      low = 0;
      return;
    }
    low = low + 1;
    if (low >= cfg.patience) {
      m = m - cfg.delta;
      if (m < cfg.m_min) m = cfg.m_min;
      low = 0;
    }
  }
};

}  // namespace pruneopd::testing
