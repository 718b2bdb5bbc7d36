// Copyright 2026 The pruneopd Authors
// SPDX-License-Identifier: Apache-2.0

#include "pruneopd/tensor_io.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "pruneopd/error.hpp"

namespace pruneopd {

using nlohmann::json;

namespace {

[[noreturn]] void line_error(ErrorKind kind, std::size_t line_no, const std::string& what) {
  fail(kind, "line " + std::to_string(line_no) + ": " + what);
}

json hex_array(std::span<const double> xs) {
  json arr = json::array();
  for (double x : xs) arr.push_back(format_hex(x));
  return arr;
}

template <typename T>
T get_field(const json& obj, const char* key, std::size_t line_no) {
  const auto it = obj.find(key);
  if (it == obj.end()) line_error(ErrorKind::Parse, line_no, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    line_error(ErrorKind::Parse, line_no, std::string("field '") + key + "' has the wrong type");
  }
}

std::vector<double> get_doubles(const json& obj, const char* key, std::size_t line_no) {
  auto values = get_field<std::vector<double>>(obj, key, line_no);
  const std::string hex_key = std::string(key) + "_hex";
  const auto it = obj.find(hex_key);
  if (it == obj.end()) return values;
  std::vector<std::string> hex;
  try {
    hex = it->get<std::vector<std::string>>();
  } catch (const json::exception&) {
    line_error(ErrorKind::Parse, line_no, "field '" + hex_key + "' has the wrong type");
  }
  if (hex.size() != values.size()) line_error(ErrorKind::Validation, line_no, "field '" + hex_key + "' length differs");
  for (std::size_t i = 0; i < hex.size(); ++i) {
    double exact = 0.0;
    try {
      exact = parse_hex(hex[i]);
    } catch (const Error&) {
      line_error(ErrorKind::Parse, line_no, "field '" + hex_key + "' holds a malformed hex float");
    }
    if (std::memcmp(&exact, &values[i], sizeof(double)) != 0) {
      line_error(ErrorKind::Validation, line_no, "field '" + hex_key + "' disagrees with '" + key + "'");
    }
    values[i] = exact;
  }
  return values;
}

json record_to_json(const RolloutTrace& trace, std::size_t t, const TraceWriteOptions& opts) {
  const auto& rec = trace.records[t];
  json line = json::object();
  line["rollout_id"] = trace.rollout_id;
  line["position"] = t;
  if (t == 0 && !trace.prompt.empty()) line["prompt"] = trace.prompt;
  line["student_ids"] = rec.student.token_ids;
  line["student_probs"] = rec.student.probs;
  line["teacher_ids"] = rec.teacher.token_ids;
  line["teacher_probs"] = rec.teacher.probs;
  line["sampled_token"] = rec.sampled_token;
  line["valid"] = rec.valid;
  const auto rewards = trace.rewards.row(t);
  line["raw_rewards"] = std::vector<double>(rewards.begin(), rewards.end());
  if (opts.hex_floats) {
    line["student_probs_hex"] = hex_array(rec.student.probs);
    line["teacher_probs_hex"] = hex_array(rec.teacher.probs);
    line["raw_rewards_hex"] = hex_array(rewards);
  }
  return line;
}

void check_finite(std::span<const double> xs, const char* field, std::int64_t rollout, std::size_t t) {
  for (double x : xs) {
    if (!std::isfinite(x)) {
      fail(ErrorKind::Validation, "rollout " + std::to_string(rollout) + " position " + std::to_string(t) +
                                      ": non-finite value in '" + field + "'");
    }
  }
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::int64_t parse_int(std::string_view text) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    fail(ErrorKind::Parse, "malformed integer '" + std::string(text) + "'");
  }
  return v;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

json metrics_to_json(const MetricsRow& row) {
  return json{{"schema", kMetricsSchema},
              {"step_index", row.step_index},
              {"mean_overlap", row.mean_overlap},
              {"mean_effective_length", row.mean_effective_length},
              {"m_current", row.m_current},
              {"hit_ratio", row.hit_ratio},
              {"tokens_generated", row.tokens_generated},
              {"tokens_scored", row.tokens_scored},
              {"reward_mass_scored", row.reward_mass_scored},
              {"mean_loss_weight_by_band", row.mean_loss_weight_by_band}};
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) fail(ErrorKind::Validation, "cannot format double");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    fail(ErrorKind::Parse, "malformed number '" + std::string(text) + "'");
  }
  return v;
}

std::string format_hex(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  if (ec != std::errc{}) fail(ErrorKind::Validation, "cannot format hex double");
  return std::string(buf, ptr);
}

double parse_hex(std::string_view text) {
  bool negative = false;
  if (!text.empty() && text.front() == '-') {
    negative = true;
    text.remove_prefix(1);
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v, std::chars_format::hex);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    fail(ErrorKind::Parse, "malformed hex float '" + std::string(text) + "'");
  }
  return negative ? -v : v;
}

std::size_t write_traces(std::span<const RolloutTrace> traces, std::ostream& out, const TraceWriteOptions& opts) {
  std::size_t bytes = 0;
  auto emit = [&](const json& line) {
    const std::string text = line.dump();
    out << text << '\n';
    bytes += text.size() + 1;
  };
  emit(json{{"schema", kTraceSchema}});
  for (const auto& trace : traces) {
    if (trace.rewards.rows() != trace.records.size() || trace.response.size() != trace.records.size()) {
      fail(ErrorKind::Validation, "rollout " + std::to_string(trace.rollout_id) + ": 'raw_rewards' shape mismatch");
    }
    for (std::size_t t = 0; t < trace.records.size(); ++t) {
      const auto& rec = trace.records[t];
      check_finite(rec.student.probs, "student_probs", trace.rollout_id, t);
      check_finite(rec.teacher.probs, "teacher_probs", trace.rollout_id, t);
      check_finite(trace.rewards.row(t), "raw_rewards", trace.rollout_id, t);
      emit(record_to_json(trace, t, opts));
    }
  }
  if (!out) fail(ErrorKind::Io, "failed writing traces");
  return bytes;
}

std::size_t write_traces(std::span<const RolloutTrace> traces, const std::filesystem::path& path,
                         const TraceWriteOptions& opts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  const auto bytes = write_traces(traces, out, opts);
  out.flush();
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
  return bytes;
}

std::vector<RolloutTrace> read_traces(std::istream& in) {
  std::vector<RolloutTrace> traces;
  std::map<std::int64_t, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      line_error(ErrorKind::Parse, line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) line_error(ErrorKind::Parse, line_no, "expected a JSON object");
    if (!have_header) {
      const auto schema = get_field<std::string>(obj, "schema", line_no);
      if (schema != kTraceSchema) line_error(ErrorKind::Parse, line_no, "unsupported schema '" + schema + "'");
      have_header = true;
      continue;
    }

    const auto rollout_id = get_field<std::int64_t>(obj, "rollout_id", line_no);
    const auto position = get_field<std::int64_t>(obj, "position", line_no);
    PositionRecord rec;
    rec.student.token_ids = get_field<std::vector<TokenId>>(obj, "student_ids", line_no);
    rec.student.probs = get_doubles(obj, "student_probs", line_no);
    rec.teacher.token_ids = get_field<std::vector<TokenId>>(obj, "teacher_ids", line_no);
    rec.teacher.probs = get_doubles(obj, "teacher_probs", line_no);
    rec.sampled_token = get_field<TokenId>(obj, "sampled_token", line_no);
    rec.valid = get_field<bool>(obj, "valid", line_no);
    const auto rewards = get_doubles(obj, "raw_rewards", line_no);

    auto [it, inserted] = index.try_emplace(rollout_id, traces.size());
    if (inserted) {
      traces.emplace_back();
      traces.back().rollout_id = rollout_id;
    }
    RolloutTrace& trace = traces[it->second];
    const auto expected = static_cast<std::int64_t>(trace.records.size());
    if (position < expected) {
      line_error(ErrorKind::Validation, line_no, "field 'position': duplicate (rollout_id, position) = (" +
                                                     std::to_string(rollout_id) + ", " + std::to_string(position) + ")");
    }
    if (position != expected) {
      line_error(ErrorKind::Validation, line_no, "field 'position': expected " + std::to_string(expected) + ", got " +
                                                     std::to_string(position));
    }
    if (position == 0) {
      if (const auto p = obj.find("prompt"); p != obj.end()) trace.prompt = get_field<std::vector<TokenId>>(obj, "prompt", line_no);
    }
    if (position > 0 && rewards.size() != trace.rewards.cols()) {
      line_error(ErrorKind::Validation, line_no, "field 'raw_rewards': length differs from earlier positions");
    }
    for (double r : rewards) {
      if (!std::isfinite(r)) line_error(ErrorKind::Validation, line_no, "field 'raw_rewards': non-finite value");
    }
    if (rec.valid) {
      try {
        validate(rec.student);
      } catch (const Error& e) {
        line_error(ErrorKind::Validation, line_no, std::string("field 'student_probs': ") + e.what());
      }
      try {
        validate(rec.teacher);
      } catch (const Error& e) {
        line_error(ErrorKind::Validation, line_no, std::string("field 'teacher_probs': ") + e.what());
      }
    }

    std::vector<double> values = std::move(trace.rewards.values());
    values.insert(values.end(), rewards.begin(), rewards.end());
    trace.rewards = RewardTensor(trace.records.size() + 1, rewards.size(), std::move(values));
    trace.response.push_back(rec.sampled_token);
    trace.records.push_back(std::move(rec));
  }
  if (!have_header) fail(ErrorKind::Parse, "line 1: missing trace header");
  return traces;
}

std::vector<RolloutTrace> read_traces(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return read_traces(in);
}

void validate(const MetricsRow& row) {
  const double reals[] = {row.mean_overlap, row.mean_effective_length, row.hit_ratio, row.reward_mass_scored};
  for (double x : reals) {
    if (!std::isfinite(x)) fail(ErrorKind::Validation, "metrics row " + std::to_string(row.step_index) + ": non-finite value");
  }
  for (double x : row.mean_loss_weight_by_band) {
    if (!std::isfinite(x)) fail(ErrorKind::Validation, "metrics row " + std::to_string(row.step_index) + ": non-finite band weight");
  }
  if (!(row.mean_overlap >= 0.0 && row.mean_overlap <= 1.0)) fail(ErrorKind::Validation, "mean_overlap outside [0, 1]");
  if (!(row.hit_ratio >= 0.0 && row.hit_ratio <= 1.0)) fail(ErrorKind::Validation, "hit_ratio outside [0, 1]");
  if (row.tokens_scored < 0 || row.tokens_generated < 0 || row.tokens_scored > row.tokens_generated) {
    fail(ErrorKind::Validation, "tokens_scored must lie in [0, tokens_generated]");
  }
}

std::string metrics_header(std::size_t bands) {
  std::string h =
      "schema,step_index,mean_overlap,mean_effective_length,m_current,hit_ratio,tokens_generated,tokens_scored,"
      "reward_mass_scored";
  for (std::size_t b = 0; b < bands; ++b) h += ",lw_band_" + std::to_string(b);
  return h;
}

std::string format_metrics_row(const MetricsRow& row) {
  validate(row);
  std::string s(kMetricsSchema);
  s += ',' + std::to_string(row.step_index);
  s += ',' + format_double(row.mean_overlap);
  s += ',' + format_double(row.mean_effective_length);
  s += ',' + std::to_string(row.m_current);
  s += ',' + format_double(row.hit_ratio);
  s += ',' + std::to_string(row.tokens_generated);
  s += ',' + std::to_string(row.tokens_scored);
  s += ',' + format_double(row.reward_mass_scored);
  for (double w : row.mean_loss_weight_by_band) s += ',' + format_double(w);
  return s;
}

MetricsRow parse_metrics_row(std::string_view line, std::size_t bands) {
  const auto cells = split_csv(line);
  if (cells.size() != 9 + bands) {
    fail(ErrorKind::Validation, "metrics row has " + std::to_string(cells.size()) + " fields, expected " +
                                    std::to_string(9 + bands));
  }
  if (cells[0] != kMetricsSchema) fail(ErrorKind::Parse, "unsupported metrics schema '" + std::string(cells[0]) + "'");
  MetricsRow row;
  row.step_index = parse_int(cells[1]);
  row.mean_overlap = parse_double(cells[2]);
  row.mean_effective_length = parse_double(cells[3]);
  row.m_current = parse_int(cells[4]);
  row.hit_ratio = parse_double(cells[5]);
  row.tokens_generated = parse_int(cells[6]);
  row.tokens_scored = parse_int(cells[7]);
  row.reward_mass_scored = parse_double(cells[8]);
  for (std::size_t b = 0; b < bands; ++b) row.mean_loss_weight_by_band.push_back(parse_double(cells[9 + b]));
  validate(row);
  return row;
}

std::filesystem::path jsonl_mirror_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".jsonl");
  return p;
}

void write_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path, bool jsonl_mirror) {
  const std::size_t bands = rows.empty() ? 0 : rows.front().mean_loss_weight_by_band.size();
  std::string text = metrics_header(bands) + '\n';
  std::string mirror;
  for (const auto& row : rows) {
    if (row.mean_loss_weight_by_band.size() != bands) {
      fail(ErrorKind::Validation, "metrics row " + std::to_string(row.step_index) + " is partial: band count differs");
    }
    text += format_metrics_row(row) + '\n';
    if (jsonl_mirror) mirror += metrics_to_json(row).dump() + '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
  if (jsonl_mirror) {
    std::ofstream m(jsonl_mirror_path(path), std::ios::binary | std::ios::trunc);
    m << mirror;
    if (!m) fail(ErrorKind::Io, "failed writing " + jsonl_mirror_path(path).string());
  }
}

void append_metrics(const MetricsRow& row, const std::filesystem::path& path, bool jsonl_mirror) {
  const std::string header = metrics_header(row.mean_loss_weight_by_band.size());
  const std::string formatted = format_metrics_row(row);
  bool need_header = true;
  if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) {
    std::ifstream in(path, std::ios::binary);
    std::string first;
    std::getline(in, first);
    if (strip_cr(first) != header) {
      fail(ErrorKind::Validation, "metrics row " + std::to_string(row.step_index) + " does not match the header of " +
                                      path.string());
    }
    need_header = false;
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for appending");
  if (need_header) out << header << '\n';
  out << formatted << '\n';
  if (!out) fail(ErrorKind::Io, "failed appending to " + path.string());
  if (jsonl_mirror) {
    std::ofstream m(jsonl_mirror_path(path), std::ios::binary | std::ios::app);
    m << metrics_to_json(row).dump() << '\n';
    if (!m) fail(ErrorKind::Io, "failed appending to " + jsonl_mirror_path(path).string());
  }
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Parse, path.string() + " line 1: missing header");
  line = strip_cr(std::move(line));
  const auto cells = split_csv(line);
  if (cells.size() < 9) fail(ErrorKind::Parse, path.string() + " line 1: header too short");
  const std::size_t bands = cells.size() - 9;
  if (line != metrics_header(bands)) fail(ErrorKind::Parse, path.string() + " line 1: unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    try {
      rows.push_back(parse_metrics_row(line, bands));
    } catch (const Error& e) {
      fail(e.kind(), path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace pruneopd
