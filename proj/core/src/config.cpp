// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "pruneopd/error.hpp"
#include "pruneopd/harness.hpp"
#include "pruneopd/tensor_io.hpp"

namespace pruneopd {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

void flatten(const json& node, const std::string& prefix, ConfigMap& out) {
  if (node.is_object()) {
    for (const auto& [key, value] : node.items()) flatten(value, prefix.empty() ? key : prefix + "." + key, out);
    return;
  }
  out[prefix] = node.is_string() ? node.get<std::string>() : node.dump();
}

std::int64_t to_int(const std::string& text) {
  std::int64_t v = 0;
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size()) throw std::invalid_argument("expected an integer, got '" + text + "'");
  return v;
}

double to_real(const std::string& text) {
  try {
    return parse_double(trim(text));
  } catch (const Error&) {
    throw std::invalid_argument("expected a number, got '" + text + "'");
  }
}

bool to_bool(const std::string& text) {
  std::string t = trim(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + text + "'");
}

std::vector<std::int64_t> to_int_list(const std::string& text) {
  const std::string t = trim(text);
  std::vector<std::int64_t> out;
  if (!t.empty() && t.front() == '[') {
    for (const auto& v : json::parse(t)) out.push_back(v.get<std::int64_t>());
    return out;
  }
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(item));
  return out;
}

std::vector<CurveKnot> to_curve(const std::string& text) {
  const std::string t = trim(text);
  std::vector<CurveKnot> out;
  if (!t.empty() && t.front() == '[') {
    for (const auto& knot : json::parse(t)) {
      if (!knot.is_array() || knot.size() != 2) throw std::invalid_argument("curve knots must be [position, target] pairs");
      out.push_back({knot[0].get<std::int64_t>(), knot[1].get<double>()});
    }
    return out;
  }
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("curve knots must look like position:target");
    out.push_back({to_int(item.substr(0, colon)), to_real(item.substr(colon + 1))});
  }
  return out;
}

std::string int_list_text(const std::vector<std::int64_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::string curve_text(const std::vector<CurveKnot>& knots) {
  std::string s;
  for (std::size_t i = 0; i < knots.size(); ++i) {
    s += (i ? "," : "") + std::to_string(knots[i].position) + ":" + format_double(knots[i].target);
  }
  return s;
}

MetricKind parse_metric_kind(const std::string& text) {
  const std::string t = trim(text);
  if (t == "overlap_ratio") return MetricKind::OverlapRatio;
  if (t == "teacher_top_p_accept") return MetricKind::TeacherTopPAccept;
  throw std::invalid_argument("expected overlap_ratio or teacher_top_p_accept, got '" + text + "'");
}

// Budget defaults scale with the rollout horizon: bounds [max/4, max],
// step and margin max/32, start at the lower bound.
BudgetConfig scaled_budget(const DriftScenario& s, std::string_view preset) {
  BudgetConfig b;
  b.m_max = s.max_length;
  // Reference budgets (init/min 1024, 6144 for high_compat, max 12288) scaled to max_length.
  const auto scaled = [&](std::int64_t ref_tokens) {
    return std::max<std::int64_t>(1, (ref_tokens * s.max_length + 6144) / 12288);
  };
  b.m_min = scaled(1024);
  b.m_init = preset == "high_compat" ? scaled(6144) : b.m_min;
  b.delta = std::max<std::int64_t>(1, s.max_length / 64);
  b.margin = b.delta;
  b.rho = 0.1;
  b.patience = 3;
  return b;
}

}  // namespace

std::string_view to_string(RunMode mode) noexcept {
  switch (mode) {
    case RunMode::OpdBaseline: return "opd_baseline";
    case RunMode::FixedTruncate: return "fixed_truncate";
    case RunMode::RandomPruneTokens: return "random_prune_tokens";
    case RunMode::RandomPruneMass: return "random_prune_mass";
    case RunMode::PruneOpd: return "prune_opd";
  }
  return "unknown";
}

RunMode parse_run_mode(std::string_view text) {
  for (RunMode m : {RunMode::OpdBaseline, RunMode::FixedTruncate, RunMode::RandomPruneTokens,
                    RunMode::RandomPruneMass, RunMode::PruneOpd}) {
    if (to_string(m) == text) return m;
  }
  fail(ErrorKind::InvalidConfig, "unknown mode '" + std::string(text) + "'");
}

DriftScenario scenario_preset(std::string_view name) {
  DriftScenario s;
  s.seed = 7;
  s.prompt_length = 4;
  s.max_length = 256;
  s.k = 16;
  s.vocab_size = 64;
  s.context_order = 1;
  s.teacher_segment = 4;
  s.logit_scale = 2.0;
  if (name == "collapse") {
    s.curve = {{0, 0.95}, {64, 0.95}, {80, 0.3}};
    s.student_band_starts = {0, 64};
    s.teacher_segment_from = 64;
  } else if (name == "high_compat") {
    s.curve = {{0, 0.94}};
    s.student_band_starts = {0};
  } else if (name == "no_drift") {
    s.curve = {{0, 1.0}};
    s.student_band_starts = {0};
  } else {
    fail(ErrorKind::InvalidConfig, "unknown scenario preset '" + std::string(name) + "'");
  }
  return s;
}

ConfigMap parse_config_text(std::string_view text) {
  ConfigMap out;
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    json doc;
    try {
      doc = json::parse(body);
    } catch (const json::parse_error& e) {
      fail(ErrorKind::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
    }
    flatten(doc, "", out);
    return out;
  }
  std::stringstream ss{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::InvalidConfig, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out[trim(t.substr(0, eq))] = value;
  }
  return out;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

ExperimentConfig make_experiment_config(const ConfigMap& values) {
  ExperimentConfig cfg;
  std::vector<std::string> errors;

  auto lookup = [&](const std::string& key) -> const std::string* {
    const auto it = values.find(key);
    return it == values.end() ? nullptr : &it->second;
  };

  if (const auto* preset = lookup("scenario.preset")) cfg.scenario_preset = trim(*preset);
  try {
    cfg.scenario = scenario_preset(cfg.scenario_preset);
  } catch (const Error& e) {
    errors.push_back(std::string("scenario.preset: ") + e.what());
    cfg.scenario = scenario_preset("collapse");
  }

  using Setter = std::function<void(const std::string&)>;
  std::vector<std::pair<std::string, Setter>> scenario_fields = {
      {"scenario.seed", [&](const std::string& v) { cfg.scenario.seed = static_cast<std::uint64_t>(to_int(v)); }},
      {"scenario.prompt_length", [&](const std::string& v) { cfg.scenario.prompt_length = to_int(v); }},
      {"scenario.max_length", [&](const std::string& v) { cfg.scenario.max_length = to_int(v); }},
      {"scenario.curve", [&](const std::string& v) { cfg.scenario.curve = to_curve(v); }},
      {"scenario.k", [&](const std::string& v) { cfg.scenario.k = static_cast<int>(to_int(v)); }},
      {"scenario.vocab_size", [&](const std::string& v) { cfg.scenario.vocab_size = static_cast<int>(to_int(v)); }},
      {"scenario.context_order", [&](const std::string& v) { cfg.scenario.context_order = static_cast<int>(to_int(v)); }},
      {"scenario.student_bands", [&](const std::string& v) { cfg.scenario.student_band_starts = to_int_list(v); }},
      {"scenario.teacher_segment", [&](const std::string& v) { cfg.scenario.teacher_segment = to_int(v); }},
      {"scenario.teacher_segment_from", [&](const std::string& v) { cfg.scenario.teacher_segment_from = to_int(v); }},
      {"scenario.logit_scale", [&](const std::string& v) { cfg.scenario.logit_scale = to_real(v); }},
  };
  std::vector<std::pair<std::string, Setter>> fields = {
      {"mode", [&](const std::string& v) { cfg.mode = parse_run_mode(trim(v)); }},
      {"compat.metric", [&](const std::string& v) { cfg.compat.metric_kind = parse_metric_kind(v); }},
      {"compat.gamma", [&](const std::string& v) { cfg.compat.gamma = to_real(v); }},
      {"compat.p", [&](const std::string& v) { cfg.compat.p = to_real(v); }},
      {"compat.k", [&](const std::string& v) { cfg.compat.k = static_cast<int>(to_int(v)); }},
      {"reliability.w_drop", [&](const std::string& v) { cfg.reliability.w_drop = to_real(v); }},
      {"reliability.w_base", [&](const std::string& v) { cfg.reliability.w_base = to_real(v); }},
      {"reliability.epsilon", [&](const std::string& v) { cfg.reliability.epsilon = to_real(v); }},
      {"reliability.enabled", [&](const std::string& v) { cfg.reliability.enabled = to_bool(v); }},
      {"budget.m_init", [&](const std::string& v) { cfg.budget.m_init = to_int(v); }},
      {"budget.m_min", [&](const std::string& v) { cfg.budget.m_min = to_int(v); }},
      {"budget.m_max", [&](const std::string& v) { cfg.budget.m_max = to_int(v); }},
      {"budget.delta", [&](const std::string& v) { cfg.budget.delta = to_int(v); }},
      {"budget.margin", [&](const std::string& v) { cfg.budget.margin = to_int(v); }},
      {"budget.rho", [&](const std::string& v) { cfg.budget.rho = to_real(v); }},
      {"budget.patience", [&](const std::string& v) { cfg.budget.patience = to_int(v); }},
      {"budget.enabled", [&](const std::string& v) { cfg.budget_enabled = to_bool(v); }},
      {"truncate.length", [&](const std::string& v) { cfg.truncate_length = to_int(v); }},
      {"random_prune.reference", [&](const std::string& v) { cfg.random_prune_reference = trim(v); }},
      {"random_prune.fraction", [&](const std::string& v) { cfg.random_prune_fraction = to_real(v); }},
      {"batch_size", [&](const std::string& v) { cfg.batch_size = to_int(v); }},
      {"rollouts_per_prompt", [&](const std::string& v) { cfg.rollouts_per_prompt = to_int(v); }},
      {"steps", [&](const std::string& v) { cfg.steps = to_int(v); }},
      {"learning_rate", [&](const std::string& v) { cfg.learning_rate = to_real(v); }},
      {"seed", [&](const std::string& v) { cfg.seed = static_cast<std::uint64_t>(to_int(v)); }},
      {"output_dir", [&](const std::string& v) { cfg.output_dir = trim(v); }},
      {"eval.rollouts", [&](const std::string& v) { cfg.eval_rollouts = to_int(v); }},
      {"metrics.band_width", [&](const std::string& v) { cfg.band_width = to_int(v); }},
      {"metrics.jsonl", [&](const std::string& v) { cfg.metrics_jsonl = to_bool(v); }},
      {"profile.stride", [&](const std::string& v) { cfg.profile_stride = to_int(v); }},
  };

  auto apply = [&](const std::vector<std::pair<std::string, Setter>>& table) {
    for (const auto& [key, setter] : table) {
      const auto* v = lookup(key);
      if (v == nullptr) continue;
      try {
        setter(*v);
      } catch (const std::exception& e) {
        errors.push_back(key + ": " + e.what());
      }
    }
  };

  apply(scenario_fields);
  cfg.budget = scaled_budget(cfg.scenario, cfg.scenario_preset);
  cfg.compat.k = cfg.scenario.k;
  cfg.truncate_length = std::max<std::int64_t>(1, cfg.scenario.max_length / 2);
  apply(fields);

  for (const auto& [key, value] : values) {
    if (key == "scenario.preset") continue;
    const auto known = [&](const auto& table) {
      return std::any_of(table.begin(), table.end(), [&](const auto& kv) { return kv.first == key; });
    };
    if (!known(scenario_fields) && !known(fields)) errors.push_back(key + ": unknown key");
  }

  if (errors.empty()) {
    try {
      validate(cfg);
    } catch (const Error& e) {
      errors.push_back(e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg;
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorKind::InvalidConfig, "configuration rejected:" + msg);
  }
  return cfg;
}

ConfigMap to_config_map(const ExperimentConfig& cfg) {
  ConfigMap m;
  const auto& s = cfg.scenario;
  m["scenario.preset"] = cfg.scenario_preset;
  m["scenario.seed"] = std::to_string(s.seed);
  m["scenario.prompt_length"] = std::to_string(s.prompt_length);
  m["scenario.max_length"] = std::to_string(s.max_length);
  m["scenario.curve"] = curve_text(s.curve);
  m["scenario.k"] = std::to_string(s.k);
  m["scenario.vocab_size"] = std::to_string(s.vocab_size);
  m["scenario.context_order"] = std::to_string(s.context_order);
  m["scenario.student_bands"] = int_list_text(s.student_band_starts);
  m["scenario.teacher_segment"] = std::to_string(s.teacher_segment);
  m["scenario.teacher_segment_from"] = std::to_string(s.teacher_segment_from);
  m["scenario.logit_scale"] = format_double(s.logit_scale);
  m["mode"] = std::string(to_string(cfg.mode));
  m["compat.metric"] = cfg.compat.metric_kind == MetricKind::OverlapRatio ? "overlap_ratio" : "teacher_top_p_accept";
  m["compat.gamma"] = format_double(cfg.compat.gamma);
  m["compat.p"] = format_double(cfg.compat.p);
  m["compat.k"] = std::to_string(cfg.compat.k);
  m["reliability.w_drop"] = format_double(cfg.reliability.w_drop);
  m["reliability.w_base"] = format_double(cfg.reliability.w_base);
  m["reliability.epsilon"] = format_double(cfg.reliability.epsilon);
  m["reliability.enabled"] = cfg.reliability.enabled ? "true" : "false";
  m["budget.m_init"] = std::to_string(cfg.budget.m_init);
  m["budget.m_min"] = std::to_string(cfg.budget.m_min);
  m["budget.m_max"] = std::to_string(cfg.budget.m_max);
  m["budget.delta"] = std::to_string(cfg.budget.delta);
  m["budget.margin"] = std::to_string(cfg.budget.margin);
  m["budget.rho"] = format_double(cfg.budget.rho);
  m["budget.patience"] = std::to_string(cfg.budget.patience);
  m["budget.enabled"] = cfg.budget_enabled ? "true" : "false";
  m["truncate.length"] = std::to_string(cfg.truncate_length);
  if (!cfg.random_prune_reference.empty()) m["random_prune.reference"] = cfg.random_prune_reference.string();
  if (cfg.random_prune_fraction) m["random_prune.fraction"] = format_double(*cfg.random_prune_fraction);
  m["batch_size"] = std::to_string(cfg.batch_size);
  m["rollouts_per_prompt"] = std::to_string(cfg.rollouts_per_prompt);
  m["steps"] = std::to_string(cfg.steps);
  m["learning_rate"] = format_double(cfg.learning_rate);
  m["seed"] = std::to_string(cfg.seed);
  m["output_dir"] = cfg.output_dir.string();
  m["eval.rollouts"] = std::to_string(cfg.eval_rollouts);
  m["metrics.band_width"] = std::to_string(cfg.band_width);
  m["metrics.jsonl"] = cfg.metrics_jsonl ? "true" : "false";
  m["profile.stride"] = std::to_string(cfg.profile_stride);
  return m;
}

void validate(const ExperimentConfig& cfg) {
  validate(cfg.scenario);
  validate(cfg.compat);
  validate(cfg.reliability);
  validate(cfg.budget);
  if (cfg.compat.k != cfg.scenario.k) fail(ErrorKind::InvalidConfig, "compat.k must equal scenario.k");
  if (cfg.batch_size < 1) fail(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  if (cfg.rollouts_per_prompt < 1) fail(ErrorKind::InvalidConfig, "rollouts_per_prompt must be >= 1");
  if (cfg.steps < 1) fail(ErrorKind::InvalidConfig, "steps must be >= 1");
  if (!std::isfinite(cfg.learning_rate) || cfg.learning_rate < 0.0) fail(ErrorKind::InvalidConfig, "learning_rate must be >= 0");
  if (cfg.eval_rollouts < 1) fail(ErrorKind::InvalidConfig, "eval.rollouts must be >= 1");
  if (cfg.band_width < 1) fail(ErrorKind::InvalidConfig, "metrics.band_width must be >= 1");
  if (cfg.profile_stride < 1) fail(ErrorKind::InvalidConfig, "profile.stride must be >= 1");
  if (cfg.mode == RunMode::FixedTruncate && cfg.truncate_length < 1) {
    fail(ErrorKind::InvalidConfig, "fixed_truncate requires truncate.length >= 1");
  }
  if (cfg.mode == RunMode::RandomPruneTokens || cfg.mode == RunMode::RandomPruneMass) {
    if (cfg.random_prune_reference.empty() == !cfg.random_prune_fraction.has_value()) {
      fail(ErrorKind::InvalidConfig, "random pruning requires exactly one of random_prune.reference or random_prune.fraction");
    }
    if (cfg.random_prune_fraction && !(*cfg.random_prune_fraction >= 0.0 && *cfg.random_prune_fraction <= 1.0)) {
      fail(ErrorKind::InvalidConfig, "random_prune.fraction must lie in [0, 1]");
    }
  }
}

std::string scenario_fingerprint(const ExperimentConfig& cfg) {
  const auto m = to_config_map(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [key, value] : m) {
    if (key.rfind("scenario.", 0) != 0 || key == "scenario.preset") continue;
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  mix("seed=" + std::to_string(cfg.seed));
  char buf[17];
  const auto [ptr, ec] = std::to_chars(buf, buf + 16, h, 16);
  return std::string(static_cast<std::size_t>(16 - (ptr - buf)), '0') + std::string(buf, ptr);
}

}  // namespace pruneopd
