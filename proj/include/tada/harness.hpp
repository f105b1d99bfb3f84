#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tada/error.hpp"
#include "tada/io.hpp"
#include "tada/selection.hpp"
#include "tada/stats.hpp"
#include "tada/synthdata.hpp"
#include "tada/theoremcheck.hpp"

namespace tada {

inline constexpr const char* kToolName = "tada_lab";
inline constexpr const char* kVersion = "0.1.0";

enum class Experiment { GenData, Train, Select, SweepK, Compare, Verify, Report };

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::GenData: return "gen-data";
    case Experiment::Train: return "train";
    case Experiment::Select: return "select";
    case Experiment::SweepK: return "sweep-k";
    case Experiment::Compare: return "compare";
    case Experiment::Verify: return "verify";
    case Experiment::Report: return "report";
  }
  return "verify";
}

inline Experiment parse_experiment(const std::string& s) {
  for (auto e : {Experiment::GenData, Experiment::Train, Experiment::Select, Experiment::SweepK, Experiment::Compare,
                 Experiment::Verify, Experiment::Report})
    if (to_string(e) == s) return e;
  throw Error(ErrorKind::ConfigError, "unknown experiment: " + s);
}

enum class OutputFormat { Csv, Json, Both };

inline std::string to_string(OutputFormat f) {
  return f == OutputFormat::Csv ? "csv" : f == OutputFormat::Json ? "json" : "both";
}

inline OutputFormat parse_format(const std::string& s) {
  if (s == "csv") return OutputFormat::Csv;
  if (s == "json") return OutputFormat::Json;
  if (s == "both") return OutputFormat::Both;
  throw Error(ErrorKind::ConfigError, "unknown format: " + s);
}

struct RunConfig {
  Experiment experiment = Experiment::Verify;
  std::string preset;  // empty: use `check` as given
  CheckConfig check;
  std::vector<std::string> checks;  // verify only; empty runs the preset's plan
  std::size_t k = 0;                // train only; 0 trains on the base set
  AugmentMode mode = AugmentMode::Generate;
  std::uint64_t master_seed = 0;
  std::string output_dir = "out";
  OutputFormat format = OutputFormat::Both;
  bool plots = false;
  int threads = 0;

  bool operator==(const RunConfig&) const = default;

  bool wants_csv() const { return format != OutputFormat::Json; }
  bool wants_json() const { return format != OutputFormat::Csv; }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"experiment", to_string(c.experiment)},
          {"preset", c.preset},
          {"check", check_config_to_json(c.check)},
          {"checks", c.checks},
          {"k", c.k},
          {"mode", to_string(c.mode)},
          {"master_seed", c.master_seed},
          {"output_dir", c.output_dir},
          {"format", to_string(c.format)},
          {"plots", c.plots},
          {"threads", c.threads}};
}

// Keys absent from the document keep the values of `c`; a preset named in the
// document is applied before the nested check config.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "config must be a JSON object");
  try {
    if (j.contains("experiment")) c.experiment = parse_experiment(j["experiment"].get<std::string>());
    c.preset = j.value("preset", c.preset);
    if (!c.preset.empty() && !j.contains("check")) c.check = preset(c.preset);
    if (j.contains("check")) c.check = check_config_from_json(j["check"], c.preset.empty() ? c.check : preset(c.preset));
    if (j.contains("checks")) c.checks = j["checks"].get<std::vector<std::string>>();
    c.k = j.value("k", c.k);
    if (j.contains("mode")) c.mode = parse_augment_mode(j["mode"].get<std::string>());
    c.master_seed = j.value("master_seed", c.master_seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("format")) c.format = parse_format(j["format"].get<std::string>());
    c.plots = j.value("plots", c.plots);
    c.threads = j.value("threads", c.threads);
    c.check.threads = c.threads;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, std::string("bad config: ") + e.what());
  }
  return c;
}

// ---- manifest -----------------------------------------------------------------

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::IoError, "SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

struct ManifestEntry {
  std::string path;  // relative to the output directory, '/' separated
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  nlohmann::json config;
  std::string version = kVersion;
  std::string timestamp;
  std::vector<ManifestEntry> files;

  nlohmann::json to_json() const {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& e : files) f.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
    return {{"tool", kToolName}, {"version", version}, {"timestamp", timestamp}, {"config", config}, {"files", f}};
  }
};

// UTC ISO-8601. SOURCE_DATE_EPOCH pins the value for reproducible runs.
inline std::string run_timestamp() {
  std::time_t t = 0;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline constexpr const char* kManifestName = "manifest.json";

// Hashes every regular file under `dir` except the manifest itself, in path order.
inline RunManifest build_manifest(const std::filesystem::path& dir, const nlohmann::json& config) {
  RunManifest m;
  m.config = config;
  m.timestamp = run_timestamp();
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string rel = std::filesystem::relative(entry.path(), dir).generic_string();
    if (rel == kManifestName) continue;
    std::string bytes = io::read_text(entry.path());
    m.files.push_back({rel, sha256_hex(bytes), static_cast<std::uintmax_t>(bytes.size())});
  }
  std::sort(m.files.begin(), m.files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return m;
}

inline RunManifest write_manifest(const std::filesystem::path& dir, const nlohmann::json& config) {
  RunManifest m = build_manifest(dir, config);
  io::write_text(dir / kManifestName, m.to_json().dump(2) + "\n");
  return m;
}

// ---- tables ---------------------------------------------------------------------

struct SweepRow {
  std::size_t k = 1;
  AugmentMode mode = AugmentMode::Upsample;
  double mean_err = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t seeds = 0;
};

inline std::vector<SweepRow> sweep_rows(const std::vector<SweepCell>& cells) {
  std::vector<SweepRow> rows;
  for (const auto& c : cells) {
    auto ci = stats::ci95(c.errors());
    rows.push_back({c.k, c.mode, ci.mean, ci.lo, ci.hi, c.runs.size()});
  }
  return rows;
}

inline std::vector<SweepRow> run_sweep_k(const CheckConfig& cfg) { return sweep_rows(sweep_k(cfg)); }

// Columns: k, mode, mean_err, ci_lo, ci_hi, seeds.
inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "k,mode,mean_err,ci_lo,ci_hi,seeds\n";
  for (const auto& r : rows)
    out << r.k << ',' << to_string(r.mode) << ',' << io::format_double(r.mean_err) << ','
        << io::format_double(r.ci_lo) << ',' << io::format_double(r.ci_hi) << ',' << r.seeds << "\n";
  return out.str();
}

inline nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"k", r.k},
                   {"mode", to_string(r.mode)},
                   {"mean_err", r.mean_err},
                   {"ci_lo", r.ci_lo},
                   {"ci_hi", r.ci_hi},
                   {"seeds", r.seeds}});
  return arr;
}

struct CompareRow {
  Strategy strategy = Strategy::Cluster2;
  double mean_err = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double selected_fraction = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  std::size_t seeds = 0;
};

inline std::vector<CompareRow> run_compare_selection(const CheckConfig& cfg) {
  std::vector<CompareRow> rows;
  for (const auto& o : compare_selection(cfg)) {
    auto ci = stats::ci95(o.errors);
    rows.push_back({o.strategy, ci.mean, ci.lo, ci.hi, stats::mean(o.fractions), stats::mean(o.recalls),
                    stats::mean(o.precisions), o.errors.size()});
  }
  return rows;
}

// Columns: strategy, mean_err, ci_lo, ci_hi, selected_fraction, recall, precision, seeds.
inline std::string compare_to_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << "strategy,mean_err,ci_lo,ci_hi,selected_fraction,recall,precision,seeds\n";
  for (const auto& r : rows)
    out << to_string(r.strategy) << ',' << io::format_double(r.mean_err) << ',' << io::format_double(r.ci_lo) << ','
        << io::format_double(r.ci_hi) << ',' << io::format_double(r.selected_fraction) << ','
        << io::format_double(r.recall) << ',' << io::format_double(r.precision) << ',' << r.seeds << "\n";
  return out.str();
}

inline nlohmann::json compare_to_json(const std::vector<CompareRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"strategy", to_string(r.strategy)},
                   {"mean_err", r.mean_err},
                   {"ci_lo", r.ci_lo},
                   {"ci_hi", r.ci_hi},
                   {"selected_fraction", r.selected_fraction},
                   {"recall", r.recall},
                   {"precision", r.precision},
                   {"seeds", r.seeds}});
  return arr;
}

// Columns: check, key, value.
inline std::string reports_to_csv(const std::vector<CheckReport>& reports) {
  std::ostringstream out;
  out << "check,key,value\n";
  for (const auto& r : reports) {
    out << r.name << ",passed," << (r.passed ? 1 : 0) << "\n";
    out << r.name << ",regime_ok," << (r.regime_ok ? 1 : 0) << "\n";
    for (const auto& [k, v] : r.measured) out << r.name << ',' << k << ',' << io::format_double(v) << "\n";
  }
  return out.str();
}

// ---- plots ----------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> lo;  // optional band, same length as y
  std::vector<double> hi;
};

struct PlotStyle {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 400;
};

namespace detail {

inline std::string fixed(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
  return std::string(buf, res.ptr);
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

}  // namespace detail

inline std::string render_svg(const std::vector<Series>& series, const PlotStyle& style) {
  if (series.empty()) throw Error(ErrorKind::InvalidArgument, "plot needs at least one series");
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size() || s.x.empty())
      throw Error(ErrorKind::ShapeError, "series x and y must be nonempty and equally long");
    const bool band = !s.lo.empty();
    if (band && (s.lo.size() != s.y.size() || s.hi.size() != s.y.size()))
      throw Error(ErrorKind::ShapeError, "band must match the series length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min({y0, s.y[i], band ? s.lo[i] : s.y[i]});
      y1 = std::max({y1, s.y[i], band ? s.hi[i] : s.y[i]});
    }
  }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double left = 60, right = 20, top = 30, bottom = 45;
  const double pw = style.width - left - right, ph = style.height - top - bottom;
  auto px = [&](double x) { return detail::fixed(left + (x - x0) / (x1 - x0) * pw); };
  auto py = [&](double y) { return detail::fixed(top + (1.0 - (y - y0) / (y1 - y0)) * ph); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << style.width << "\" height=\"" << style.height
      << "\" viewBox=\"0 0 " << style.width << ' ' << style.height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << style.width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">"
      << detail::xml_escape(style.title) << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << style.height - 8 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << detail::xml_escape(style.x_label) << "</text>\n";
  out << "<text x=\"14\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
      << top + ph / 2 << ")\">" << detail::xml_escape(style.y_label) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4.0, xv = x0 + (x1 - x0) * t / 4.0;
    out << "<text x=\"" << left - 4 << "\" y=\"" << py(yv) << "\" text-anchor=\"end\" font-size=\"10\">"
        << io::format_double(std::round(yv * 1e4) / 1e4) << "</text>\n";
    out << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
        << io::format_double(std::round(xv * 1e4) / 1e4) << "</text>\n";
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = palette[si % 6];
    if (!s.lo.empty()) {
      out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) out << px(s.x[i]) << ',' << py(s.hi[i]) << ' ';
      for (std::size_t i = s.x.size(); i-- > 0;) out << px(s.x[i]) << ',' << py(s.lo[i]) << (i ? " " : "");
      out << "\"/>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) out << (i ? " " : "") << px(s.x[i]) << ',' << py(s.y[i]);
    out << "\"/>\n";
    out << "<text x=\"" << left + pw - 4 << "\" y=\"" << top + 14 + 14 * static_cast<int>(si)
        << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">" << detail::xml_escape(s.name)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

inline std::filesystem::path emit_plot(const std::vector<Series>& series, const PlotStyle& style,
                                       const std::filesystem::path& path) {
  io::write_text(path, render_svg(series, style));
  return path;
}

inline std::vector<Series> sweep_series(const std::vector<SweepRow>& rows) {
  Series up{"upsample", {}, {}, {}, {}}, gen{"generate", {}, {}, {}, {}};
  for (const auto& r : rows) {
    Series& s = r.mode == AugmentMode::Upsample ? up : gen;
    s.x.push_back(static_cast<double>(r.k));
    s.y.push_back(r.mean_err);
    s.lo.push_back(r.ci_lo);
    s.hi.push_back(r.ci_hi);
  }
  return {up, gen};
}

// ---- experiments ------------------------------------------------------------------

namespace detail {

inline void emit_table(const RunConfig& rc, const std::filesystem::path& dir, const std::string& stem,
                       const std::string& csv, const nlohmann::json& json) {
  if (rc.wants_csv()) io::write_text(dir / (stem + ".csv"), csv);
  if (rc.wants_json()) io::write_text(dir / (stem + ".json"), json.dump(2) + "\n");
}

inline Dataset run_dataset(const RunConfig& rc, const Dataset& base) {
  if (rc.k <= 1) return base;
  return augmented(base, rc.k, rc.mode, rc.check.gen, trial_seed(rc.check, 0));
}

inline int run_gen_data(const RunConfig& rc, const std::filesystem::path& dir) {
  const std::uint64_t seed = trial_seed(rc.check, 0);
  Dataset base = base_for(rc.check, seed);
  save_dataset(base, dir / "dataset_base.json");
  for (std::size_t k : rc.check.k_values) {
    if (k < 2) continue;
    save_dataset(upsample(base, k), dir / ("dataset_upsample_k" + std::to_string(k) + ".json"));
    save_dataset(augmented(base, k, AugmentMode::Generate, rc.check.gen, seed),
                 dir / ("dataset_generate_k" + std::to_string(k) + ".json"));
  }
  return 0;
}

inline int run_train(const RunConfig& rc, const std::filesystem::path& dir) {
  const std::uint64_t seed = trial_seed(rc.check, 0);
  Dataset base = base_for(rc.check, seed);
  Dataset ds = run_dataset(rc, base);
  Dataset test = test_for(rc.check, base.basis, seed);
  TrainOptions opts;
  opts.seed = derive_seed(seed, "sgd");
  opts.eval_set = &test;
  auto [m, rec] = train(init_for(rc.check, seed), ds, rc.check.optim, base.basis, opts);
  save_model(m, dir / "model.json");
  if (rc.wants_csv()) io::write_text(dir / "train.csv", rec.to_csv());
  nlohmann::json summary = {{"size", ds.size()},
                            {"steps", rec.steps.size() - 1},
                            {"final_loss", rec.steps.back().loss},
                            {"test_error", rec.steps.back().test_error.value_or(0.0)},
                            {"terminated_early", rec.terminated_early},
                            {"termination_reason", rec.termination_reason}};
  if (rc.wants_json()) io::write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  if (rc.plots) {
    Series loss{"train loss", {}, {}, {}, {}}, err{"test error", {}, {}, {}, {}};
    for (const auto& s : rec.steps) {
      loss.x.push_back(static_cast<double>(s.t));
      loss.y.push_back(s.loss);
      err.x.push_back(static_cast<double>(s.t));
      err.y.push_back(s.test_error.value_or(0.0));
    }
    emit_plot({loss, err}, {"Training", "step", "value"}, dir / "train.svg");
  }
  return 0;
}

inline int run_select(const RunConfig& rc, const std::filesystem::path& dir) {
  const std::uint64_t seed = trial_seed(rc.check, 0);
  Dataset base = base_for(rc.check, seed);
  CnnModel early = run_gd(init_for(rc.check, seed), base, rc.check.optim.eta, rc.check.selection.early_steps);
  auto sel = identify_slow(early, base, rc.check.selection);
  io::write_text(dir / "selection.json", selection_to_json(sel).dump(2) + "\n");
  return 0;
}

inline int run_verify(const RunConfig& rc, const std::filesystem::path& dir) {
  std::vector<std::pair<std::string, CheckConfig>> plan;
  if (!rc.preset.empty() && rc.checks.empty()) {
    plan = preset_plan(rc.preset, rc.master_seed);
    // Explicit config overrides (threads) carry over to every planned check.
    for (auto& [name, cfg] : plan) cfg.threads = rc.check.threads;
  } else {
    auto names = rc.checks.empty() ? check_names() : rc.checks;
    for (const auto& n : names) plan.emplace_back(n, rc.check);
  }
  if (plan.empty()) throw Error(ErrorKind::ConfigError, "no checks selected");
  std::vector<CheckReport> reports;
  bool ok = true;
  for (const auto& [name, cfg] : plan) {
    reports.push_back(run_check(name, cfg));
    const auto& r = reports.back();
    ok = ok && r.passed && r.regime_ok;
    std::cerr << (r.passed && r.regime_ok ? "PASS " : "FAIL ") << r.name << "\n";
  }
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  io::write_text(dir / "verify.json", arr.dump(2) + "\n");
  if (rc.wants_csv()) io::write_text(dir / "verify.csv", reports_to_csv(reports));
  if (rc.plots) {
    for (const auto& r : reports) {
      if (r.name != "variance_inflation" && r.name != "convergence_and_generalization") continue;
      const bool var = r.name == "variance_inflation";
      Series up{"upsample", {}, {}, {}, {}}, gen{"generate", {}, {}, {}, {}};
      for (std::size_t k : plan.front().second.k_values) {
        const std::string ks = "_k" + std::to_string(k);
        auto a = r.measured.find(var ? "variance_up" + ks : "test_error_up" + ks);
        auto b = r.measured.find(var ? "variance_gen" + ks : "test_error_gen" + ks);
        if (a == r.measured.end() || b == r.measured.end()) continue;
        up.x.push_back(static_cast<double>(k));
        up.y.push_back(a->second);
        gen.x.push_back(static_cast<double>(k));
        gen.y.push_back(b->second);
      }
      if (up.x.empty()) continue;
      emit_plot({up, gen},
                {var ? "Mini-batch gradient variance" : "Test error", "k", var ? "E||g_B - g||^2" : "error"},
                dir / (r.name + ".svg"));
    }
  }
  return ok ? 0 : 1;
}

inline int run_sweep(const RunConfig& rc, const std::filesystem::path& dir) {
  auto rows = run_sweep_k(rc.check);
  emit_table(rc, dir, "sweep_k", sweep_to_csv(rows), sweep_to_json(rows));
  if (rc.plots) emit_plot(sweep_series(rows), {"Test error vs k", "k", "test error"}, dir / "sweep_k.svg");
  return 0;
}

inline int run_compare(const RunConfig& rc, const std::filesystem::path& dir) {
  auto rows = run_compare_selection(rc.check);
  emit_table(rc, dir, "compare_selection", compare_to_csv(rows), compare_to_json(rows));
  return 0;
}

// Summarizes whatever verify / sweep / compare outputs already sit in the
// output directory.
inline int run_report(const RunConfig& rc, const std::filesystem::path& dir) {
  std::ostringstream md;
  md << "# tada_lab report\n\n";
  bool any = false;
  if (std::filesystem::exists(dir / "verify.json")) {
    any = true;
    auto arr = nlohmann::json::parse(io::read_text(dir / "verify.json"));
    md << "## Checks\n\n| check | passed | regime ok |\n|---|---|---|\n";
    for (const auto& r : arr)
      md << "| " << r["name"].get<std::string>() << " | " << (r["passed"].get<bool>() ? "yes" : "no") << " | "
         << (r["regime_ok"].get<bool>() ? "yes" : "no") << " |\n";
    md << "\n";
  }
  if (std::filesystem::exists(dir / "sweep_k.json")) {
    any = true;
    auto arr = nlohmann::json::parse(io::read_text(dir / "sweep_k.json"));
    md << "## k sweep\n\n| k | mode | mean error | 95% CI |\n|---|---|---|---|\n";
    std::vector<SweepRow> rows;
    for (const auto& r : arr) {
      rows.push_back({r["k"].get<std::size_t>(), parse_augment_mode(r["mode"].get<std::string>()),
                      r["mean_err"].get<double>(), r["ci_lo"].get<double>(), r["ci_hi"].get<double>(),
                      r["seeds"].get<std::size_t>()});
      md << "| " << rows.back().k << " | " << to_string(rows.back().mode) << " | "
         << io::format_double(rows.back().mean_err) << " | [" << io::format_double(rows.back().ci_lo) << ", "
         << io::format_double(rows.back().ci_hi) << "] |\n";
    }
    md << "\n";
    if (rc.plots && !rows.empty())
      emit_plot(sweep_series(rows), {"Test error vs k", "k", "test error"}, dir / "report_sweep_k.svg");
  }
  if (std::filesystem::exists(dir / "compare_selection.json")) {
    any = true;
    auto arr = nlohmann::json::parse(io::read_text(dir / "compare_selection.json"));
    md << "## Selection strategies\n\n| strategy | mean error | selected fraction |\n|---|---|---|\n";
    for (const auto& r : arr)
      md << "| " << r["strategy"].get<std::string>() << " | " << io::format_double(r["mean_err"].get<double>())
         << " | " << io::format_double(r["selected_fraction"].get<double>()) << " |\n";
    md << "\n";
  }
  if (!any) md << "No verify, sweep-k or compare outputs found.\n";
  io::write_text(dir / "report.md", md.str());
  return 0;
}

}  // namespace detail

// Runs one experiment into rc.output_dir and writes the manifest. Returns the
// process exit code: 0 success, 1 check failure.
inline int run_experiment(const RunConfig& rc) {
  rc.check.validate();
  const std::filesystem::path dir = rc.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw Error(ErrorKind::IoError, "cannot create " + dir.string());
  int code = 0;
  switch (rc.experiment) {
    case Experiment::GenData: code = detail::run_gen_data(rc, dir); break;
    case Experiment::Train: code = detail::run_train(rc, dir); break;
    case Experiment::Select: code = detail::run_select(rc, dir); break;
    case Experiment::SweepK: code = detail::run_sweep(rc, dir); break;
    case Experiment::Compare: code = detail::run_compare(rc, dir); break;
    case Experiment::Verify: code = detail::run_verify(rc, dir); break;
    case Experiment::Report: code = detail::run_report(rc, dir); break;
  }
  io::write_text(dir / "config.json", run_config_to_json(rc).dump(2) + "\n");
  write_manifest(dir, run_config_to_json(rc));
  return code;
}

// ---- command line -----------------------------------------------------------------

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Targeted-augmentation simulation lab"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);

  struct Flags {
    std::string config, preset, out, format, mode;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::size_t> k;
    std::vector<std::string> checks;
    bool plots = false;
  } f;

  const std::vector<std::pair<Experiment, std::string>> subs = {
      {Experiment::GenData, "Sample a base dataset and its augmented versions"},
      {Experiment::Train, "Train one model and record its trajectory"},
      {Experiment::Select, "Early training followed by slow-example selection"},
      {Experiment::SweepK, "Test error of upsampling vs generation over k"},
      {Experiment::Compare, "Compare selection strategies end to end"},
      {Experiment::Verify, "Run verification checks"},
      {Experiment::Report, "Summarize outputs already in the output directory"}};
  std::vector<std::pair<Experiment, CLI::App*>> cmds;
  for (const auto& [e, help] : subs) {
    CLI::App* sub = app.add_subcommand(to_string(e), help);
    sub->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--preset", f.preset, "Named preset")
        ->check(CLI::IsMember(preset_names()));
    sub->add_option("--seed", f.seed, "Master seed");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--threads", f.threads, "Worker threads (default: TADA_LAB_THREADS or all cores)");
    sub->add_option("--format", f.format, "Table format")->check(CLI::IsMember({"csv", "json", "both"}));
    sub->add_flag("--plots", f.plots, "Also write SVG plots");
    if (e == Experiment::Verify) sub->add_option("--check", f.checks, "Check name (repeatable)")->check(CLI::IsMember(check_names()));
    if (e == Experiment::Train) {
      sub->add_option("--k", f.k, "Augmentation factor (1 trains on the base set)");
      sub->add_option("--mode", f.mode, "Augmentation mode")->check(CLI::IsMember({"upsample", "generate"}));
    }
    cmds.emplace_back(e, sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig rc;
    for (const auto& [e, sub] : cmds)
      if (sub->parsed()) rc.experiment = e;
    if (!f.config.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(io::read_text(f.config));
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::ConfigError, std::string("config is not valid JSON: ") + ex.what());
      }
      const Experiment chosen = rc.experiment;
      rc = run_config_from_json(j, rc);
      rc.experiment = chosen;
    }
    if (!f.preset.empty()) {
      rc.preset = f.preset;
      rc.check = preset(f.preset);
    }
    if (f.seed) rc.master_seed = *f.seed;
    rc.check.master_seed = rc.master_seed;
    if (!f.out.empty()) rc.output_dir = f.out;
    if (f.threads) rc.threads = *f.threads;
    rc.check.threads = rc.threads;
    if (!f.format.empty()) rc.format = parse_format(f.format);
    if (f.plots) rc.plots = true;
    if (!f.checks.empty()) rc.checks = f.checks;
    if (f.k) rc.k = *f.k;
    if (!f.mode.empty()) rc.mode = parse_augment_mode(f.mode);
    return run_experiment(rc);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace tada
