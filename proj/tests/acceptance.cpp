// Acceptance suite: one PASS/FAIL line per criterion. With --criterion N only
// that criterion runs; the exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>

#include "tada/harness.hpp"

using namespace tada;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits, fixed here.
constexpr double kFdRelTol = 1e-6;
constexpr double kExactRelTol = 1e-12;
constexpr double kViolationFraction = 1e-3;
constexpr double kHalfLo = 0.47, kHalfHi = 0.53;
constexpr double kWinFraction = 0.8;
constexpr double kRecall = 0.9, kPrecision = 0.8;
constexpr double kLimitGradient = 30, kLimitThm1 = 300, kLimitThm2 = 600, kLimitCor1 = 1200;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

CheckConfig planned(const std::string& preset_name, const std::string& check) {
  for (auto& [name, cfg] : preset_plan(preset_name, 0))
    if (name == check) return cfg;
  throw Error(ErrorKind::ConfigError, "no " + check + " in " + preset_name);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome gradient_oracle() {
  auto t0 = std::chrono::steady_clock::now();
  CheckConfig c = planned("grad_default", "gradient_oracle");
  c.threads = 1;
  auto r = check_gradient_oracle(c);
  const double dt = seconds_since(t0), err = r.measured["max_relative_error"];
  return {err <= kFdRelTol && r.measured["configs"] == 100 && dt <= kLimitGradient,
          "max rel err " + fmt(err) + " over 100 configs, " + fmt(dt) + " s single-threaded"};
}

Outcome amplification() {
  CheckConfig c = planned("thm2_default", "upsample_amplification");
  c.k_values = {2, 3, 5};
  auto r = check_upsample_amplification(c);
  const double up = r.measured["max_relative_error_upsampled"];
  return {r.regime_ok && up <= kExactRelTol && r.measured["max_relative_error_generated"] <= kExactRelTol,
          "k in {2,3,5}: max rel err " + fmt(up) + " (upsampled), " + fmt(r.measured["max_relative_error_generated"]) +
              " (generated)"};
}

Outcome set_equivalence() {
  auto r = run_check("noise_set_equivalence", planned("thm1_default", "noise_set_equivalence"));
  const double states = r.measured["states"];
  return {r.seeds == 20 && r.measured["states_below_rho_bound"] == states && r.measured["states_sets_equal"] == states,
          "rho = 0.5 x runtime bound; sets equal in " + fmt(r.measured["states_sets_equal"]) + "/" + fmt(states) +
              " states over 20 seeds"};
}

Outcome theorem1() {
  auto t0 = std::chrono::steady_clock::now();
  auto a = check_inert_noises(planned("thm1_default", "inert_noises"));
  CheckConfig sc = planned("thm1_default", "sam_vs_gd_noisealign");
  sc.rho = 0.01;
  auto b = check_sam_vs_gd_noisealign(sc);
  auto c = check_init_half_split(planned("thm1_default", "init_half_split"));
  const double dt = seconds_since(t0);
  const bool pa = a.regime_ok && a.measured["violation_fraction"] <= kViolationFraction && a.measured["set_changes"] == 0;
  const bool pb = b.regime_ok && b.measured["seeds_all_strict"] == 20 && b.seeds == 20;
  const bool pc = c.measured["min_plus_fraction"] >= kHalfLo && c.measured["max_plus_fraction"] <= kHalfHi;
  return {pa && pb && pc && dt <= kLimitThm1,
          "(a) violations " + fmt(a.measured["violation_fraction"]) + " of " + fmt(a.measured["triples"]) +
              " triples, eta " + fmt(a.measured["eta"]) + " < bound " + fmt(a.measured["eta_bound_min"]) +
              "; (b) strict on " + fmt(b.measured["seeds_all_strict"]) + "/20 seeds; (c) plus fraction in [" +
              fmt(c.measured["min_plus_fraction"]) + ", " + fmt(c.measured["max_plus_fraction"]) + "]; " + fmt(dt) +
              " s"};
}

Outcome theorem2() {
  auto t0 = std::chrono::steady_clock::now();
  auto r = check_gen_vs_up_expectation(planned("thm2_default", "gen_vs_up_expectation"));
  const double dt = seconds_since(t0);
  const bool sep = r.measured["noisealign_gen_ci_hi"] < r.measured["noisealign_up_ci_lo"];
  return {r.seeds == 200 && r.measured["k"] == 3 && r.regime_ok && sep && dt <= kLimitThm2,
          "G " + fmt(r.measured["noisealign_gen_mean"]) + " [" + fmt(r.measured["noisealign_gen_ci_lo"]) + ", " +
              fmt(r.measured["noisealign_gen_ci_hi"]) + "] vs U " + fmt(r.measured["noisealign_up_mean"]) + " [" +
              fmt(r.measured["noisealign_up_ci_lo"]) + ", " + fmt(r.measured["noisealign_up_ci_hi"]) +
              "], smallness ratio " + fmt(r.measured["smallness_ratio"]) + "; " + fmt(dt) + " s"};
}

Outcome theorem3() {
  CheckConfig c = planned("thm3_default", "variance_inflation");
  auto r = check_variance_inflation(c);
  std::string d = "ratios";
  for (std::size_t k = 1; k <= 5; ++k) d += " k" + std::to_string(k) + "=" + fmt(r.measured["ratio_k" + std::to_string(k)]);
  d += ", spearman " + fmt(r.measured["spearman_ratio_vs_k"]) + ", bound factor k2 " + fmt(r.measured["bound_factor_k2"]);
  const bool ref = std::abs(r.measured["bound_factor_k2"] - 1.1111) < 1e-4;
  return {r.passed && ref && c.variance_trials == 10000, d};
}

Outcome corollary1() {
  auto t0 = std::chrono::steady_clock::now();
  auto r = check_convergence_and_generalization(planned("cor1_default", "convergence_and_generalization"));
  const double dt = seconds_since(t0);
  const bool win = r.measured["win_fraction_at_eval_k"] >= kWinFraction;
  const bool arg = r.measured["argmin_k_up"] <= 2 && r.measured["argmin_k_gen"] > 2;
  return {win && arg && dt <= kLimitCor1,
          "G beats U at k=4 in " + fmt(r.measured["win_fraction_at_eval_k"]) + " of seeds; argmin k: upsample " +
              fmt(r.measured["argmin_k_up"]) + ", generate " + fmt(r.measured["argmin_k_gen"]) + "; " + fmt(dt) + " s"};
}

Outcome selection() {
  auto r = check_selection_pipeline(planned("sel_default", "selection_pipeline"));
  const bool pr = r.measured["recall_min"] >= kRecall && r.measured["precision_min"] >= kPrecision;
  const bool order = r.measured["test_error_cluster2"] <= r.measured["test_error_high_loss"];
  return {pr && order,
          "recall min " + fmt(r.measured["recall_min"]) + ", precision min " + fmt(r.measured["precision_min"]) +
              "; test error cluster2 " + fmt(r.measured["test_error_cluster2"]) + " vs high_loss " +
              fmt(r.measured["test_error_high_loss"])};
}

bool same_outputs(const fs::path& a, const fs::path& b, std::string& why) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto ext = e.path().extension();
    if (ext != ".csv" && ext != ".json") continue;
    ++n;
    const auto other = b / e.path().filename();
    if (!fs::exists(other) || io::read_text(e.path()) != io::read_text(other)) {
      why = e.path().filename().string() + " differs";
      return false;
    }
  }
  why = std::to_string(n) + " files identical";
  return n > 0;
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "tada_lab_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  const std::string bin = TADA_LAB_BINARY;
  // Both repeats write to the same path, which is recorded in config.json.
  auto run = [&](const std::string& args, const std::string& out) {
    const int rc = std::system((bin + " " + args + " --out " + (root / "run").string() + " > /dev/null 2>&1").c_str());
    fs::rename(root / "run", root / out);
    return rc;
  };
  RunConfig sweep;
  sweep.check = cor1_default();
  sweep.check.seeds = 3;
  sweep.check.k_values = {1, 3};
  sweep.check.eval_k = 3;
  sweep.check.test_size = 2000;
  io::write_text(root / "sweep.json", run_config_to_json(sweep).dump(2));
  const std::string sweep_args = "sweep-k --config " + (root / "sweep.json").string() + " --seed 7 --plots";
  const std::string verify_args = "verify --preset thm1_default --seed 3";
  bool ok = run(verify_args, "v1") == 0 && run(verify_args, "v2") == 0 && run(sweep_args, "s1") == 0 &&
            run(sweep_args, "s2") == 0;
  std::string why_v, why_s;
  ok = ok && same_outputs(root / "v1", root / "v2", why_v) && same_outputs(root / "s1", root / "s2", why_s);
  unsetenv("SOURCE_DATE_EPOCH");
  return {ok, "verify: " + why_v + "; sweep-k: " + why_s};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>> kCriteria = {
    {"gradient oracle", gradient_oracle},
    {"upsampling amplification exactness", amplification},
    {"noise set equivalence under SAM", set_equivalence},
    {"inert noises, SAM noise alignment, half split", theorem1},
    {"generation overfits noise less in expectation", theorem2},
    {"mini-batch variance inflation", theorem3},
    {"matched-budget training and k sweep", corollary1},
    {"selection pipeline", selection},
    {"reproducibility", reproducibility}};

}  // namespace

int main(int argc, char** argv) {
  std::size_t only = 0;
  if (argc == 3 && std::string(argv[1]) == "--criterion") only = std::stoul(argv[2]);
  int failures = 0;
  for (std::size_t i = 0; i < kCriteria.size(); ++i) {
    if (only && only != i + 1) continue;
    Outcome o;
    try {
      o = kCriteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "CRITERION " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << kCriteria[i].first << ": "
              << o.detail << std::endl;
    if (!o.pass) ++failures;
  }
  return failures;
}
