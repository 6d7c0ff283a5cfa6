#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wind/base.hpp"
#include "wind/experiments.hpp"
#include "wind/game.hpp"
#include "wind/solvers.hpp"

namespace wind {

namespace detail {

inline std::string csv_escape(const std::string& field) {
  bool needs_quotes = field.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quotes) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  f.flush();
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw std::runtime_error("read failed: " + path);
  return content;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double_token(const std::string& s, const std::string& where,
                                 const std::string& key) {
  const char* b = s.data();
  const char* e = b + s.size();
  double v = 0.0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw std::invalid_argument(where + ": invalid number for key '" + key + "': " + s);
  return v;
}

inline long long parse_int_token(const std::string& s, const std::string& where,
                                 const std::string& key) {
  const char* b = s.data();
  const char* e = b + s.size();
  long long v = 0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw std::invalid_argument(where + ": invalid integer for key '" + key + "': " + s);
  return v;
}

inline uint64_t parse_u64_token(const std::string& s, const std::string& where,
                                const std::string& key) {
  const char* b = s.data();
  const char* e = b + s.size();
  uint64_t v = 0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw std::invalid_argument(where + ": invalid unsigned integer for key '" + key + "': " + s);
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] inline void range_violation(const std::string& where, const std::string& key,
                                         const std::string& what) {
  throw std::invalid_argument(where + ": range violation for key '" + key + "' (" + what + ")");
}

}  // namespace detail

// ----------------------------------------------------------------------------
// CSV emission (RFC 4180: comma-separated, CRLF row endings, header row,
// floats as shortest round-trip decimals)
// ----------------------------------------------------------------------------

// one trace as CSV; metadata keys listed in meta_cols become constant columns
inline std::string trace_csv(const Trace& trace, const std::string& iter_name,
                             const std::vector<std::string>& meta_cols = {}) {
  std::string out = detail::csv_escape(iter_name);
  for (const auto& m : trace.metric_names()) out += "," + detail::csv_escape(m);
  for (const auto& c : meta_cols) out += "," + detail::csv_escape(c);
  out += "\r\n";
  std::vector<std::string> meta_vals;
  for (const auto& c : meta_cols) {
    auto it = trace.metadata().find(c);
    if (it == trace.metadata().end())
      throw std::invalid_argument("trace_csv: trace has no metadata key '" + c + "'");
    meta_vals.push_back(it->second);
  }
  for (const auto& row : trace.rows()) {
    out += std::to_string(row.iter);
    for (double v : row.values) out += "," + fmt_double(v);
    for (const auto& mv : meta_vals) out += "," + detail::csv_escape(mv);
    out += "\r\n";
  }
  return out;
}

// several traces with identical metric columns stacked into one CSV
inline std::string stacked_trace_csv(const std::vector<Trace>& traces,
                                     const std::string& iter_name,
                                     const std::vector<std::string>& meta_cols = {}) {
  if (traces.empty()) throw std::invalid_argument("stacked_trace_csv: no traces");
  for (const auto& t : traces)
    if (t.metric_names() != traces.front().metric_names())
      throw std::invalid_argument("stacked_trace_csv: traces disagree on metric names");
  std::string out;
  for (size_t i = 0; i < traces.size(); ++i) {
    std::string one = trace_csv(traces[i], iter_name, meta_cols);
    if (i == 0) {
      out = one;
    } else {
      out += one.substr(one.find("\r\n") + 2);  // drop the repeated header
    }
  }
  return out;
}

inline std::string summary_csv(const SummaryTable& summary) {
  std::string out;
  for (size_t i = 0; i < summary.columns.size(); ++i) {
    if (i) out += ",";
    out += detail::csv_escape(summary.columns[i]);
  }
  out += "\r\n";
  for (const auto& row : summary.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      out += fmt_double(row[i]);
    }
    out += "\r\n";
  }
  return out;
}

inline void write_trace_csv(const Trace& trace, const std::string& path,
                            const std::string& iter_name,
                            const std::vector<std::string>& meta_cols = {}) {
  detail::write_text_file(path, trace_csv(trace, iter_name, meta_cols));
}

inline void write_stacked_trace_csv(const std::vector<Trace>& traces, const std::string& path,
                                    const std::string& iter_name,
                                    const std::vector<std::string>& meta_cols = {}) {
  detail::write_text_file(path, stacked_trace_csv(traces, iter_name, meta_cols));
}

inline void write_summary_csv(const SummaryTable& summary, const std::string& path) {
  detail::write_text_file(path, summary_csv(summary));
}

// ----------------------------------------------------------------------------
// plot data: whitespace x/y columns, '#'-prefixed series headers, one blank
// line between series; directly consumable by gnuplot-style tools
// ----------------------------------------------------------------------------

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

inline std::string plot_data_text(const std::vector<PlotSeries>& series, bool log_y_hint) {
  if (series.empty()) throw std::invalid_argument("plot_data_text: no series");
  std::string out;
  if (log_y_hint) out += "# yscale: log\n";
  for (size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.x.size() != s.y.size())
      throw std::invalid_argument("plot_data_text: series '" + s.name + "' has ragged columns");
    if (i) out += "\n";
    out += "# series: " + s.name + "\n";
    for (size_t j = 0; j < s.x.size(); ++j)
      out += fmt_double(s.x[j]) + " " + fmt_double(s.y[j]) + "\n";
  }
  return out;
}

inline void emit_plot_data(const std::vector<PlotSeries>& series, const std::string& path,
                           bool log_y_hint) {
  detail::write_text_file(path, plot_data_text(series, log_y_hint));
}

// both per-iteration distance curves of the first run, for the convergence
// figure (distances shrink over many decades, hence the log-axis hint)
inline std::vector<PlotSeries> no_mixing_plot(const ExperimentResult& result) {
  if (result.traces.empty()) throw std::invalid_argument("no_mixing_plot: empty result");
  const Trace& t = result.traces.front();
  std::vector<double> iters;
  iters.reserve(t.rows().size());
  for (const auto& r : t.rows()) iters.push_back(static_cast<double>(r.iter));
  return {PlotSeries{"ibon", iters, t.column("d_l1_ibon")},
          PlotSeries{"wind", iters, t.column("d_l1_wind")}};
}

// per-beta mean of the final distances across seeds, in grid order
inline std::vector<PlotSeries> sweep_plot(const ExperimentResult& result) {
  const SummaryTable& s = result.summary;
  int bcol = s.column_index("beta"), dcol = s.column_index("d_l1_final");
  std::vector<double> betas, means;
  for (const auto& row : s.rows) {
    double b = row[bcol];
    size_t i = 0;
    while (i < betas.size() && betas[i] != b) ++i;
    if (i == betas.size()) {
      betas.push_back(b);
      means.push_back(0.0);
    }
  }
  std::vector<int> counts(betas.size(), 0);
  for (const auto& row : s.rows) {
    size_t i = 0;
    while (betas[i] != row[bcol]) ++i;
    means[i] += row[dcol];
    counts[i] += 1;
  }
  for (size_t i = 0; i < betas.size(); ++i) means[i] /= counts[i];
  return {PlotSeries{"d_l1_mean", std::move(betas), std::move(means)}};
}

// ----------------------------------------------------------------------------
// checksums and the run manifest (flat key = value text)
// ----------------------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string checksum_hex(const std::string& bytes) {
  uint64_t h = fnv1a64(bytes.data(), bytes.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string file_checksum(const std::string& path) {
  return checksum_hex(detail::read_text_file(path));
}

struct RunManifest {
  std::string run_id;
  std::string subcommand;
  std::map<std::string, std::string> config;                  // fully resolved
  std::vector<std::pair<std::string, std::string>> artifacts;  // (filename, checksum)
};

// timestamped identifier carrying a hash of the resolved config and seed
inline std::string make_run_id(const std::map<std::string, std::string>& config) {
  std::string blob;
  for (const auto& [k, v] : config) blob += k + "=" + v + ";";
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(now.time_since_epoch()).count() %
            1000000000;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d%02d%02dT%02d%02d%02d.%09lldZ-%s", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<long long>(ns), checksum_hex(blob).c_str());
  return std::string(buf);
}

inline std::string manifest_text(const RunManifest& m) {
  std::string out;
  out += "run_id = " + m.run_id + "\n";
  out += "subcommand = " + m.subcommand + "\n";
  for (const auto& [k, v] : m.config) out += k + " = " + v + "\n";
  for (const auto& [name, sum] : m.artifacts) out += "artifact." + name + " = " + sum + "\n";
  return out;
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
  detail::write_text_file(path, manifest_text(m));
}

inline RunManifest read_manifest(const std::string& path) {
  RunManifest m;
  std::string text = detail::read_text_file(path);
  int lineno = 0;
  for (const auto& raw : detail::split(text, '\n')) {
    ++lineno;
    std::string line = detail::trim(raw);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key == "run_id") {
      m.run_id = value;
    } else if (key == "subcommand") {
      m.subcommand = value;
    } else if (key.rfind("artifact.", 0) == 0) {
      m.artifacts.emplace_back(key.substr(9), value);
    } else {
      m.config[key] = value;
    }
  }
  return m;
}

// ----------------------------------------------------------------------------
// run options: per-subcommand defaults overlaid by config file then flags
// ----------------------------------------------------------------------------

// "LO:HI:COUNT" (inclusive linear grid) or a comma-separated list of values
inline std::vector<double> parse_grid_token(const std::string& s, const std::string& where) {
  std::vector<double> out;
  if (s.find(':') != std::string::npos) {
    auto parts = detail::split(s, ':');
    if (parts.size() != 3)
      throw std::invalid_argument(where + ": grid must be LO:HI:COUNT, got '" + s + "'");
    double lo = detail::parse_double_token(detail::trim(parts[0]), where, "grid");
    double hi = detail::parse_double_token(detail::trim(parts[1]), where, "grid");
    long long count = detail::parse_int_token(detail::trim(parts[2]), where, "grid");
    if (count < 1) detail::range_violation(where, "grid", "COUNT must be >= 1");
    if (!(hi >= lo)) detail::range_violation(where, "grid", "HI must be >= LO");
    if (count == 1) {
      out.push_back(lo);
    } else {
      for (long long i = 0; i < count; ++i)
        out.push_back(lo + static_cast<double>(i) * (hi - lo) / static_cast<double>(count - 1));
    }
  } else {
    for (const auto& tok : detail::split(s, ','))
      out.push_back(detail::parse_double_token(detail::trim(tok), where, "grid"));
  }
  if (out.empty()) detail::range_violation(where, "grid", "grid must be nonempty");
  for (double v : out)
    if (!(v >= 0.0) || !std::isfinite(v))
      detail::range_violation(where, "grid", "values must be finite and >= 0");
  return out;
}

struct RunOptions {
  ExperimentSpec spec;
  uint64_t seed = 1;
  double tol_residual = 1e-10;
  std::string out_dir;
  // order (the exact selection law) is the default: the power-form
  // approximation can take thousands of rounds to recover an optimal response
  // that the initialization starved, so out of the box every subcommand runs
  // the operator that actually converges; --mode paper selects the power form
  std::string mode_token_value = "order";

  // resolve the operator variant from the token; Monte Carlo draws as many
  // samples per prompt as the configured batch size
  void finalize() {
    if (mode_token_value == "paper") {
      spec.bon_mode = BonMode::power_form();
    } else if (mode_token_value == "order") {
      spec.bon_mode = BonMode::order_statistics();
    } else if (mode_token_value == "mc") {
      spec.bon_mode = BonMode::monte_carlo(spec.m_ladder.front());
    } else {
      throw std::invalid_argument("mode must be one of paper|order|mc, got '" +
                                  mode_token_value + "'");
    }
  }

  // the fully resolved configuration echoed into the manifest; feeding these
  // lines back as a config file reproduces the run
  std::map<std::string, std::string> resolved() const {
    std::map<std::string, std::string> m;
    m["num_prompts"] = std::to_string(spec.num_prompts);
    m["num_responses"] = std::to_string(spec.num_responses);
    m["seeds"] = detail::join_u64(spec.seeds);
    m["grid"] = detail::join_double(spec.grid);
    m["T"] = std::to_string(spec.T);
    m["eta"] = fmt_double(spec.eta);
    m["n"] = std::to_string(spec.n);
    m["init"] = init_name(spec.init);
    m["mode"] = mode_token_value;
    m["m_ladder"] = detail::join_int(spec.m_ladder);
    m["loss"] = loss_name(spec.loss);
    m["judge_delta"] = fmt_double(spec.judge_delta);
    m["nce_p"] = fmt_double(spec.nce_p);
    m["inner_steps"] = std::to_string(spec.inner_steps);
    if (spec.inner_lr) m["inner_lr"] = fmt_double(*spec.inner_lr);
    m["seed"] = std::to_string(seed);
    m["tol_residual"] = fmt_double(tol_residual);
    return m;
  }
};

// apply one key = value override; `where` names the source (file:line or
// flag) for error messages
inline void apply_option(RunOptions& opt, const std::string& key, const std::string& value,
                         const std::string& where) {
  using detail::parse_double_token;
  using detail::parse_int_token;
  using detail::parse_u64_token;
  using detail::range_violation;
  if (key == "beta") {
    double v = parse_double_token(value, where, key);
    if (!(v >= 0.0) || !std::isfinite(v)) range_violation(where, key, "beta must be >= 0");
    opt.spec.grid = {v};
  } else if (key == "eta") {
    double v = parse_double_token(value, where, key);
    if (!(v > 0.0) || !std::isfinite(v)) range_violation(where, key, "eta must be > 0");
    opt.spec.eta = v;
  } else if (key == "n") {
    long long v = parse_int_token(value, where, key);
    if (v < 2) range_violation(where, key, "n must be >= 2");
    opt.spec.n = static_cast<int>(v);
  } else if (key == "T") {
    long long v = parse_int_token(value, where, key);
    if (v < 1) range_violation(where, key, "T must be >= 1");
    opt.spec.T = static_cast<int>(v);
  } else if (key == "M") {
    long long v = parse_int_token(value, where, key);
    if (v < 1) range_violation(where, key, "M must be >= 1");
    opt.spec.m_ladder = {static_cast<int>(v)};
  } else if (key == "m_ladder") {
    std::vector<int> ladder;
    for (const auto& tok : detail::split(value, ',')) {
      long long v = parse_int_token(detail::trim(tok), where, key);
      if (v < 1) range_violation(where, key, "entries must be >= 1");
      ladder.push_back(static_cast<int>(v));
    }
    if (ladder.empty()) range_violation(where, key, "must be nonempty");
    opt.spec.m_ladder = std::move(ladder);
  } else if (key == "loss") {
    if (value == "sq") {
      opt.spec.loss = LossKind::kSq;
    } else if (value == "kl") {
      opt.spec.loss = LossKind::kKl;
    } else if (value == "nce") {
      opt.spec.loss = LossKind::kNce;
    } else {
      range_violation(where, key, "must be one of sq|kl|nce");
    }
  } else if (key == "nce_p") {
    double v = parse_double_token(value, where, key);
    if (!(v > 0.0 && v < 1.0)) range_violation(where, key, "nce_p must lie in (0,1)");
    opt.spec.nce_p = v;
  } else if (key == "grid") {
    opt.spec.grid = parse_grid_token(value, where);
  } else if (key == "seed") {
    opt.seed = parse_u64_token(value, where, key);
  } else if (key == "seeds") {
    std::vector<uint64_t> seeds;
    for (const auto& tok : detail::split(value, ','))
      seeds.push_back(parse_u64_token(detail::trim(tok), where, key));
    if (seeds.empty()) range_violation(where, key, "must be nonempty");
    opt.spec.seeds = std::move(seeds);
  } else if (key == "num_prompts") {
    long long v = parse_int_token(value, where, key);
    if (v < 1) range_violation(where, key, "must be >= 1");
    opt.spec.num_prompts = static_cast<int>(v);
  } else if (key == "num_responses") {
    long long v = parse_int_token(value, where, key);
    if (v < 1) range_violation(where, key, "must be >= 1");
    opt.spec.num_responses = static_cast<int>(v);
  } else if (key == "init") {
    if (value == "uniform") {
      opt.spec.init = InitKind::kUniformRef;
    } else if (value == "dirichlet") {
      opt.spec.init = InitKind::kDirichletOnes;
    } else {
      range_violation(where, key, "must be uniform|dirichlet");
    }
  } else if (key == "judge_delta") {
    double v = parse_double_token(value, where, key);
    if (!(v >= 0.0 && v < 0.5)) range_violation(where, key, "must lie in [0, 1/2)");
    opt.spec.judge_delta = v;
  } else if (key == "inner_steps") {
    long long v = parse_int_token(value, where, key);
    if (v < 1) range_violation(where, key, "must be >= 1");
    opt.spec.inner_steps = static_cast<int>(v);
  } else if (key == "inner_lr") {
    double v = parse_double_token(value, where, key);
    if (!(v > 0.0)) range_violation(where, key, "must be > 0");
    opt.spec.inner_lr = v;
  } else if (key == "tol_residual") {
    double v = parse_double_token(value, where, key);
    if (!(v > 0.0)) range_violation(where, key, "must be > 0");
    opt.tol_residual = v;
  } else if (key == "mode") {
    if (value != "paper" && value != "order" && value != "mc")
      range_violation(where, key, "must be one of paper|order|mc");
    opt.mode_token_value = value;
  } else if (key == "out") {
    opt.out_dir = value;
  } else {
    throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

// flat `key = value` file with '#' comments; malformed lines are reported
// with their line number
inline void apply_config_file(RunOptions& opt, const std::string& path) {
  std::string text = detail::read_text_file(path);
  int lineno = 0;
  for (const auto& raw : detail::split(text, '\n')) {
    ++lineno;
    std::string line = raw;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(lineno);
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(where + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(where + ": empty key");
    apply_option(opt, key, value, where);
  }
}

}  // namespace wind
