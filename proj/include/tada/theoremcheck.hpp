#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tada/analysis.hpp"
#include "tada/cnn.hpp"
#include "tada/error.hpp"
#include "tada/optim.hpp"
#include "tada/parallel.hpp"
#include "tada/rng.hpp"
#include "tada/selection.hpp"
#include "tada/stats.hpp"
#include "tada/synthdata.hpp"

namespace tada {

struct CheckReport {
  std::string name;
  bool passed = false;
  bool regime_ok = true;
  bool robustness_probe = false;
  std::size_t seeds = 0;
  std::map<std::string, double> measured;
  std::vector<std::string> notes;

  nlohmann::json to_json() const {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : measured) m[k] = v;
    return {{"name", name},   {"passed", passed}, {"regime_ok", regime_ok}, {"robustness_probe", robustness_probe},
            {"seeds", seeds}, {"measured", m},    {"notes", notes}};
  }
};

struct Tolerances {
  double exact = 1e-12;             // relative, exactness checks
  double projection = 1e-9;         // closed form vs projected full gradient, scale-relative
  double finite_difference = 1e-6;  // relative, gradient oracle
  double violation_fraction = 1e-3;
  double drift_floor = 1e-6;
  double max_logit_drift = 0.05;
  double half_lo = 0.47;
  double half_hi = 0.53;
  double faster_fraction = 0.7;
  double win_fraction = 0.8;
  double recall = 0.9;
  double precision = 0.8;

  bool operator==(const Tolerances&) const = default;

  void validate() const {
    for (double v : {exact, projection, finite_difference, violation_fraction, drift_floor, max_logit_drift, half_lo,
                     half_hi, faster_fraction, win_fraction, recall, precision})
      if (!(v > 0.0)) throw Error(ErrorKind::ConfigError, "tolerances must be positive");
    if (!(half_lo < half_hi)) throw Error(ErrorKind::ConfigError, "half-split band is empty");
  }
};

struct CheckConfig {
  std::string preset = "custom";
  DistributionParams data;
  BasisMode basis = BasisMode::RandomOrthogonal;
  InitConfig init;  // the seed is replaced per trial
  std::size_t filters = 10;
  OptimizerConfig optim;
  std::size_t seeds = 10;
  std::uint64_t master_seed = 0;

  double rho = 0.01;
  double rho_bound_fraction = 0.0;  // > 0 replaces rho by this fraction of the runtime bound
  std::size_t warm_steps = 5;       // GD steps before the second SAM probe / before measuring noise alignment

  std::vector<std::size_t> k_values{3};
  GenerationNoiseParams gen;
  double probe_sigma_ratio = 2.0;  // sigma_gamma / sigma_p for the smallness-violating probe
  std::size_t variance_trials = 10000;
  std::size_t premise_trials = 1000;
  std::size_t test_size = 10000;
  std::size_t eval_k = 4;
  double threshold_quantile = 0.25;

  SelectionConfig selection;
  std::vector<Strategy> strategies{Strategy::Cluster2, Strategy::HighLoss, Strategy::Misclassified, Strategy::Oracle};

  std::size_t oracle_configs = 100;
  double fd_step = 1e-5;

  Tolerances tol;
  int threads = 0;

  bool operator==(const CheckConfig&) const = default;

  void validate() const {
    data.validate();
    tol.validate();
    gen.validate();
    if (filters < 1) throw Error(ErrorKind::ConfigError, "filters must be positive");
    if (seeds < 1) throw Error(ErrorKind::ConfigError, "seeds must be positive");
    if (k_values.empty()) throw Error(ErrorKind::ConfigError, "k list is empty");
    for (auto k : k_values)
      if (k < 1) throw Error(ErrorKind::InvalidFactor, "k must be at least 1");
    if (!(rho >= 0.0)) throw Error(ErrorKind::ConfigError, "rho must be non-negative");
    if (!(fd_step > 0.0)) throw Error(ErrorKind::ConfigError, "fd_step must be positive");
    if (!(threshold_quantile > 0.0 && threshold_quantile < 1.0))
      throw Error(ErrorKind::ConfigError, "threshold quantile must lie in (0, 1)");
  }
};

// ---- config serialization -------------------------------------------------

inline nlohmann::json optimizer_to_json(const OptimizerConfig& o) {
  return {{"method", to_string(o.method)},
          {"eta", o.eta},
          {"rho", o.rho},
          {"batch", o.batch},
          {"sampling", to_string(o.sampling)},
          {"rounding", to_string(o.rounding)},
          {"steps", o.steps},
          {"decay", {{"every", o.decay.every}, {"factor", o.decay.factor}}}};
}

inline OptimizerConfig optimizer_from_json(const nlohmann::json& j, OptimizerConfig o = {}) {
  if (j.contains("method")) o.method = parse_method(j["method"].get<std::string>());
  o.eta = j.value("eta", o.eta);
  o.rho = j.value("rho", o.rho);
  o.batch = j.value("batch", o.batch);
  if (j.contains("sampling")) o.sampling = parse_sampling(j["sampling"].get<std::string>());
  if (j.contains("rounding")) o.rounding = parse_rounding(j["rounding"].get<std::string>());
  o.steps = j.value("steps", o.steps);
  if (j.contains("decay")) {
    o.decay.every = j["decay"].value("every", o.decay.every);
    o.decay.factor = j["decay"].value("factor", o.decay.factor);
  }
  return o;
}

inline nlohmann::json selection_config_to_json(const SelectionConfig& s) {
  return {{"strategy", to_string(s.strategy)},
          {"quantile", s.quantile},
          {"early_steps", s.early_steps},
          {"per_class", s.per_class},
          {"cluster_on_loss", s.cluster_on_loss}};
}

inline SelectionConfig selection_config_from_json(const nlohmann::json& j, SelectionConfig s = {}) {
  if (j.contains("strategy")) s.strategy = parse_strategy(j["strategy"].get<std::string>());
  s.quantile = j.value("quantile", s.quantile);
  s.early_steps = j.value("early_steps", s.early_steps);
  s.per_class = j.value("per_class", s.per_class);
  s.cluster_on_loss = j.value("cluster_on_loss", s.cluster_on_loss);
  return s;
}

inline nlohmann::json tolerances_to_json(const Tolerances& t) {
  return {{"exact", t.exact},
          {"projection", t.projection},
          {"finite_difference", t.finite_difference},
          {"violation_fraction", t.violation_fraction},
          {"drift_floor", t.drift_floor},
          {"max_logit_drift", t.max_logit_drift},
          {"half_lo", t.half_lo},
          {"half_hi", t.half_hi},
          {"faster_fraction", t.faster_fraction},
          {"win_fraction", t.win_fraction},
          {"recall", t.recall},
          {"precision", t.precision}};
}

inline Tolerances tolerances_from_json(const nlohmann::json& j, Tolerances t = {}) {
  t.exact = j.value("exact", t.exact);
  t.projection = j.value("projection", t.projection);
  t.finite_difference = j.value("finite_difference", t.finite_difference);
  t.violation_fraction = j.value("violation_fraction", t.violation_fraction);
  t.drift_floor = j.value("drift_floor", t.drift_floor);
  t.max_logit_drift = j.value("max_logit_drift", t.max_logit_drift);
  t.half_lo = j.value("half_lo", t.half_lo);
  t.half_hi = j.value("half_hi", t.half_hi);
  t.faster_fraction = j.value("faster_fraction", t.faster_fraction);
  t.win_fraction = j.value("win_fraction", t.win_fraction);
  t.recall = j.value("recall", t.recall);
  t.precision = j.value("precision", t.precision);
  return t;
}

inline nlohmann::json check_config_to_json(const CheckConfig& c) {
  nlohmann::json strategies = nlohmann::json::array();
  for (auto s : c.strategies) strategies.push_back(to_string(s));
  return {{"preset", c.preset},
          {"data", params_to_json(c.data)},
          {"basis", to_string(c.basis)},
          {"sigma_0", c.init.sigma_0},
          {"filters", c.filters},
          {"optimizer", optimizer_to_json(c.optim)},
          {"seeds", c.seeds},
          {"master_seed", c.master_seed},
          {"rho", c.rho},
          {"rho_bound_fraction", c.rho_bound_fraction},
          {"warm_steps", c.warm_steps},
          {"k_values", c.k_values},
          {"generation", {{"sigma_gamma", c.gen.sigma_gamma}, {"orthogonalize", c.gen.orthogonalize}}},
          {"probe_sigma_ratio", c.probe_sigma_ratio},
          {"variance_trials", c.variance_trials},
          {"premise_trials", c.premise_trials},
          {"test_size", c.test_size},
          {"eval_k", c.eval_k},
          {"threshold_quantile", c.threshold_quantile},
          {"selection", selection_config_to_json(c.selection)},
          {"strategies", strategies},
          {"oracle_configs", c.oracle_configs},
          {"fd_step", c.fd_step},
          {"tolerances", tolerances_to_json(c.tol)}};
}

inline CheckConfig check_config_from_json(const nlohmann::json& j, CheckConfig c = {}) {
  c.preset = j.value("preset", c.preset);
  if (j.contains("data")) c.data = params_from_json(j["data"], c.data);
  if (j.contains("basis")) c.basis = parse_basis_mode(j["basis"].get<std::string>());
  c.init.sigma_0 = j.value("sigma_0", c.init.sigma_0);
  c.filters = j.value("filters", c.filters);
  if (j.contains("optimizer")) c.optim = optimizer_from_json(j["optimizer"], c.optim);
  c.seeds = j.value("seeds", c.seeds);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.rho = j.value("rho", c.rho);
  c.rho_bound_fraction = j.value("rho_bound_fraction", c.rho_bound_fraction);
  c.warm_steps = j.value("warm_steps", c.warm_steps);
  if (j.contains("k_values")) c.k_values = j["k_values"].get<std::vector<std::size_t>>();
  if (j.contains("generation")) {
    c.gen.sigma_gamma = j["generation"].value("sigma_gamma", c.gen.sigma_gamma);
    c.gen.orthogonalize = j["generation"].value("orthogonalize", c.gen.orthogonalize);
  }
  c.probe_sigma_ratio = j.value("probe_sigma_ratio", c.probe_sigma_ratio);
  c.variance_trials = j.value("variance_trials", c.variance_trials);
  c.premise_trials = j.value("premise_trials", c.premise_trials);
  c.test_size = j.value("test_size", c.test_size);
  c.eval_k = j.value("eval_k", c.eval_k);
  c.threshold_quantile = j.value("threshold_quantile", c.threshold_quantile);
  if (j.contains("selection")) c.selection = selection_config_from_json(j["selection"], c.selection);
  if (j.contains("strategies")) {
    c.strategies.clear();
    for (const auto& s : j["strategies"]) c.strategies.push_back(parse_strategy(s.get<std::string>()));
  }
  c.oracle_configs = j.value("oracle_configs", c.oracle_configs);
  c.fd_step = j.value("fd_step", c.fd_step);
  if (j.contains("tolerances")) c.tol = tolerances_from_json(j["tolerances"], c.tol);
  return c;
}

// ---- presets ----------------------------------------------------------------
// Desk-scale parameter choices, calibrated once against direct simulation.

inline CheckConfig thm1_default() {
  CheckConfig c;
  c.preset = "thm1_default";
  c.data.dim = 500;
  c.data.n = 200;
  c.data.alpha = 0.8;
  c.data.beta_e = 1.5;
  c.data.beta_d = 1.0;
  c.data.sigma_p = 1.0;
  c.init.sigma_0 = 0.01;
  c.filters = 10;
  c.optim.method = Method::GD;
  c.optim.eta = 0.1;
  c.optim.steps = 50;
  c.seeds = 10;
  c.rho = 0.01;
  return c;
}

inline CheckConfig thm2_default() {
  CheckConfig c = thm1_default();
  c.preset = "thm2_default";
  c.k_values = {2, 3, 5};
  c.gen.sigma_gamma = c.data.sigma_p;
  c.seeds = 200;
  c.warm_steps = 20;
  return c;
}

inline CheckConfig thm3_default() {
  CheckConfig c;
  c.preset = "thm3_default";
  c.data.dim = 300;
  c.data.n = 100;
  c.data.alpha = 0.5;
  c.data.beta_e = 1.0;
  c.data.beta_d = 0.5;
  c.data.sigma_p = 2.0;
  c.data.noise_mode = NoiseMode::FeatureOrthogonal;
  c.init.sigma_0 = 0.1;
  c.filters = 10;
  c.optim.method = Method::GD;
  c.optim.eta = 0.5;
  c.optim.steps = 30;
  c.optim.batch = 25;
  c.optim.sampling = Sampling::Stratified;
  c.optim.rounding = StrataRounding::Randomized;
  c.k_values = {1, 2, 3, 4, 5};
  c.gen.sigma_gamma = c.data.sigma_p;
  c.seeds = 5;
  c.variance_trials = 10000;
  return c;
}

inline CheckConfig cor1_default() {
  CheckConfig c;
  c.preset = "cor1_default";
  c.data.dim = 200;
  c.data.n = 200;
  c.data.alpha = 0.8;
  c.data.beta_e = 2.0;
  c.data.beta_d = 0.5;
  c.data.sigma_p = 2.0;
  c.data.noise_mode = NoiseMode::FeatureOrthogonal;
  c.init.sigma_0 = 0.05;
  c.filters = 10;
  c.optim.method = Method::SGD;
  c.optim.eta = 2.0;
  c.optim.steps = 200;
  c.optim.batch = 20;
  c.optim.sampling = Sampling::Stratified;
  c.optim.rounding = StrataRounding::Randomized;
  c.k_values = {1, 2, 3, 4, 5};
  c.gen.sigma_gamma = c.data.sigma_p;
  c.eval_k = 4;
  c.seeds = 20;
  return c;
}

inline CheckConfig sel_default() {
  CheckConfig c;
  c.preset = "sel_default";
  c.data.dim = 200;
  c.data.n = 1000;
  c.data.alpha = 0.8;
  c.data.beta_e = 2.0;
  c.data.beta_d = 0.5;
  c.data.sigma_p = 1.0;
  c.data.noise_mode = NoiseMode::FeatureOrthogonal;
  c.init.sigma_0 = 0.05;
  c.filters = 10;
  c.optim.method = Method::GD;
  c.optim.eta = 0.5;
  c.optim.steps = 100;
  c.selection.early_steps = 30;
  c.k_values = {3};
  c.gen.sigma_gamma = c.data.sigma_p;
  c.seeds = 10;
  return c;
}

inline CheckConfig grad_default() {
  CheckConfig c;
  c.preset = "grad_default";
  c.seeds = 1;
  c.oracle_configs = 100;
  c.fd_step = 1e-5;
  return c;
}

inline std::vector<std::string> preset_names() {
  return {"grad_default", "thm1_default", "thm2_default", "thm3_default", "cor1_default", "sel_default"};
}

inline CheckConfig preset(const std::string& name) {
  if (name == "thm1_default") return thm1_default();
  if (name == "thm2_default") return thm2_default();
  if (name == "thm3_default") return thm3_default();
  if (name == "cor1_default") return cor1_default();
  if (name == "sel_default") return sel_default();
  if (name == "grad_default") return grad_default();
  throw Error(ErrorKind::ConfigError, "unknown preset: " + name);
}

// ---- shared pieces ----------------------------------------------------------

namespace detail {

inline std::uint64_t trial_seed(const CheckConfig& c, std::size_t s) { return derive_seed(c.master_seed, "seed", s); }

inline Dataset base_for(const CheckConfig& c, std::uint64_t seed) {
  return sample_dataset(c.data, make_feature_basis(c.data.dim, c.basis, derive_seed(seed, "basis")),
                        derive_seed(seed, "base"));
}

inline CnnModel init_for(const CheckConfig& c, std::uint64_t seed) {
  return init_model(c.data.dim, c.filters, {c.init.sigma_0, derive_seed(seed, "init")});
}

// Fresh draw from the same distribution; Idealized mode cannot hold that many
// mutually orthogonal noises, so the test set falls back to feature-orthogonal.
inline Dataset test_for(const CheckConfig& c, const FeatureBasis& basis, std::uint64_t seed) {
  DistributionParams p = c.data;
  p.n = c.test_size;
  if (p.noise_mode == NoiseMode::Idealized) p.noise_mode = NoiseMode::FeatureOrthogonal;
  return sample_dataset(p, basis, derive_seed(seed, "test"), false);
}

inline Dataset augmented(const Dataset& base, std::size_t k, AugmentMode mode, const GenerationNoiseParams& gen,
                         std::uint64_t seed) {
  return mode == AugmentMode::Upsample ? upsample(base, k) : generate(base, k, gen, derive_seed(seed, "generate"));
}

inline CnnModel run_gd(CnnModel m, const Dataset& ds, double eta, std::size_t steps) {
  for (std::size_t t = 0; t < steps; ++t) m = gd_step(m, ds, eta);
  return m;
}

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::size_t argmin(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

struct TrainingOutcome {
  double test_error = 0.0;
  double final_loss = 0.0;
  std::vector<double> losses;  // training loss per step, t = 0..T
  std::size_t size = 0;
  bool terminated_early = false;
  CnnModel model;
};

// Base draw, augmentation with factor k, training from the shared init, and
// evaluation on a fresh sample. Every random stream is tagged by role, so U and
// G runs for the same seed share their base, init, batch and test streams.
inline TrainingOutcome run_augmented_training(const CheckConfig& c, std::uint64_t seed, std::size_t k,
                                              AugmentMode mode) {
  Dataset base = detail::base_for(c, seed);
  Dataset ds = detail::augmented(base, k, mode, c.gen, seed);
  Dataset test = detail::test_for(c, base.basis, seed);
  TrainOptions opts;
  opts.seed = derive_seed(seed, "sgd");
  auto [m, rec] = train(detail::init_for(c, seed), ds, c.optim, base.basis, opts);
  TrainingOutcome out;
  out.test_error = error_rate(m, test);
  for (const auto& s : rec.steps) out.losses.push_back(s.loss);
  out.final_loss = out.losses.back();
  out.size = ds.size();
  out.terminated_early = rec.terminated_early;
  out.model = std::move(m);
  return out;
}

struct SweepCell {
  std::size_t k = 1;
  AugmentMode mode = AugmentMode::Upsample;
  std::vector<TrainingOutcome> runs;  // one per seed

  std::vector<double> errors() const {
    std::vector<double> e;
    for (const auto& r : runs) e.push_back(r.test_error);
    return e;
  }
};

// Every (k, mode) cell over cfg.seeds, cells ordered by k then mode.
inline std::vector<SweepCell> sweep_k(const CheckConfig& c) {
  c.validate();
  const std::size_t S = c.seeds;
  const std::size_t cells = c.k_values.size() * 2;
  auto runs = parallel_map(cells * S, resolve_threads(c.threads), [&](std::size_t task) {
    const std::size_t cell = task / S, s = task % S;
    const AugmentMode mode = cell % 2 == 0 ? AugmentMode::Upsample : AugmentMode::Generate;
    return run_augmented_training(c, detail::trial_seed(c, s), c.k_values[cell / 2], mode);
  });
  std::vector<SweepCell> out;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    SweepCell sc;
    sc.k = c.k_values[cell / 2];
    sc.mode = cell % 2 == 0 ? AugmentMode::Upsample : AugmentMode::Generate;
    sc.runs.assign(runs.begin() + static_cast<std::ptrdiff_t>(cell * S),
                   runs.begin() + static_cast<std::ptrdiff_t>((cell + 1) * S));
    out.push_back(std::move(sc));
  }
  return out;
}

struct StrategyOutcome {
  Strategy strategy = Strategy::Cluster2;
  std::vector<double> errors;
  std::vector<double> fractions;
  std::vector<double> recalls;
  std::vector<double> precisions;
  std::size_t fallbacks = 0;
};

// Early training, selection, generation with factor k, retraining from the
// same init and evaluation, for each strategy and seed.
inline std::vector<StrategyOutcome> compare_selection(const CheckConfig& c) {
  c.validate();
  if (c.strategies.empty()) throw Error(ErrorKind::ConfigError, "strategy list is empty");
  const std::size_t S = c.seeds;
  struct Trial {
    std::vector<double> error, fraction, recall, precision;
    std::vector<bool> fallback;
  };
  auto trials = parallel_map(S, resolve_threads(c.threads), [&](std::size_t s) {
    const std::uint64_t seed = detail::trial_seed(c, s);
    Dataset base = detail::base_for(c, seed);
    Dataset test = detail::test_for(c, base.basis, seed);
    CnnModel m0 = detail::init_for(c, seed);
    CnnModel early = detail::run_gd(m0, base, c.optim.eta, c.selection.early_steps);
    auto oracle = slow_indices(base);
    Trial tr;
    for (Strategy st : c.strategies) {
      SelectionConfig sc = c.selection;
      sc.strategy = st;
      auto sel = identify_slow(early, base, sc);
      std::vector<std::size_t> hit;
      std::set_intersection(sel.indices.begin(), sel.indices.end(), oracle.begin(), oracle.end(),
                            std::back_inserter(hit));
      tr.recall.push_back(oracle.empty() ? 1.0 : static_cast<double>(hit.size()) / static_cast<double>(oracle.size()));
      tr.precision.push_back(sel.indices.empty() ? 1.0
                                                 : static_cast<double>(hit.size()) /
                                                       static_cast<double>(sel.indices.size()));
      tr.fraction.push_back(sel.fraction);
      tr.fallback.push_back(sel.degenerate_fallback);
      Dataset aug = build_augmented_from_selection(base, sel, c.k_values.front(), AugmentMode::Generate, c.gen,
                                                   derive_seed(seed, "generate"));
      TrainOptions opts;
      opts.seed = derive_seed(seed, "sgd");
      auto m = train(m0, aug, c.optim, base.basis, opts).first;
      tr.error.push_back(error_rate(m, test));
    }
    return tr;
  });
  std::vector<StrategyOutcome> out;
  for (std::size_t a = 0; a < c.strategies.size(); ++a) {
    StrategyOutcome o;
    o.strategy = c.strategies[a];
    for (const auto& tr : trials) {
      o.errors.push_back(tr.error[a]);
      o.fractions.push_back(tr.fraction[a]);
      o.recalls.push_back(tr.recall[a]);
      o.precisions.push_back(tr.precision[a]);
      if (tr.fallback[a]) ++o.fallbacks;
    }
    out.push_back(std::move(o));
  }
  return out;
}

// ---- checks -----------------------------------------------------------------

// Closed-form full gradient against central differences on random small
// instances.
inline CheckReport check_gradient_oracle(const CheckConfig& c) {
  c.tol.validate();
  CheckReport r;
  r.name = "gradient_oracle";
  r.seeds = c.oracle_configs;
  auto errs = parallel_map(c.oracle_configs, resolve_threads(c.threads), [&](std::size_t i) {
    Rng rng = Rng::derive(c.master_seed, "oracle-config", i);
    DistributionParams p;
    p.dim = 3 + rng.index(30);
    p.n = 1 + rng.index(64);
    p.alpha = rng.uniform();
    p.beta_e = 0.5 + 1.5 * rng.uniform();
    p.beta_d = p.beta_e * rng.uniform();
    p.sigma_p = 0.5 + 1.5 * rng.uniform();
    p.noise_mode = NoiseMode::Raw;
    const std::size_t J = 1 + rng.index(8);
    const double s0 = 0.1 + 0.9 * rng.uniform();
    auto ds = sample_dataset(p, make_feature_basis(p.dim, BasisMode::RandomOrthogonal, rng.engine()()),
                             rng.engine()(), false);
    auto m = init_model(p.dim, J, {s0, rng.engine()()});
    Eigen::MatrixXd g = grad_full(m, ds).columns;
    Eigen::MatrixXd fd = grad_finite_difference(m, ds, c.fd_step).columns;
    return (g - fd).norm() / std::max(fd.norm(), std::numeric_limits<double>::min());
  });
  double worst = errs.empty() ? 0.0 : *std::max_element(errs.begin(), errs.end());
  r.measured["max_relative_error"] = worst;
  r.measured["configs"] = static_cast<double>(c.oracle_configs);
  r.passed = worst <= c.tol.finite_difference;
  return r;
}

// Replicated noises of D_U carry k times the single-copy closed form; every
// other noise, and every noise of D_G, carries exactly one copy's worth.
inline CheckReport check_upsample_amplification(const CheckConfig& c) {
  c.validate();
  CheckReport r;
  r.name = "upsample_amplification";
  r.seeds = c.seeds;
  r.regime_ok = c.data.noise_mode == NoiseMode::Idealized;
  if (!r.regime_ok) r.notes.push_back("projection identity needs mutually orthogonal noises (idealized mode)");
  struct Worst {
    double up = 0.0, gen = 0.0, proj = 0.0, ratio_min = 1e300, ratio_max = 0.0;
  };
  auto per_seed = parallel_map(c.seeds, resolve_threads(c.threads), [&](std::size_t s) {
    const std::uint64_t seed = detail::trial_seed(c, s);
    Dataset base = detail::base_for(c, seed);
    CnnModel m = detail::run_gd(detail::init_for(c, seed), base, c.optim.eta, c.warm_steps);
    Worst w;
    for (std::size_t k : c.k_values) {
      for (AugmentMode mode : {AugmentMode::Upsample, AugmentMode::Generate}) {
        Dataset ds = detail::augmented(base, k, mode, c.gen, seed);
        Eigen::MatrixXd ng = noise_gradients(m, ds);
        Eigen::VectorXd l = logits(m, ds);
        Eigen::MatrixXd a = m.weights.transpose() * ds.noise;
        Eigen::MatrixXd proj = grad_full(m, ds).columns.transpose() * ds.noise;
        const double M = static_cast<double>(ds.size());
        const double scale = ng.cwiseAbs().maxCoeff();
        for (std::size_t i = 0; i < ds.size(); ++i) {
          const auto q = static_cast<Eigen::Index>(ds.points[i].noise_id);
          const double norm2 = ds.noise.col(q).squaredNorm();
          const bool replicated = mode == AugmentMode::Upsample && ds.points[i].feature == FeatureKind::Slow;
          const double expected = replicated ? static_cast<double>(k) : 1.0;
          for (Eigen::Index j = 0; j < ng.rows(); ++j) {
            const double single = 3.0 / M * l(static_cast<Eigen::Index>(i)) * a(j, q) * a(j, q) * norm2;
            if (single == 0.0) continue;
            const double ratio = std::abs(ng(j, static_cast<Eigen::Index>(i))) / single;
            const double err = std::abs(ratio - expected) / expected;
            (mode == AugmentMode::Upsample ? w.up : w.gen) = std::max(mode == AugmentMode::Upsample ? w.up : w.gen, err);
            if (replicated && k == c.k_values.front()) {
              w.ratio_min = std::min(w.ratio_min, ratio);
              w.ratio_max = std::max(w.ratio_max, ratio);
            }
            if (scale > 0.0) w.proj = std::max(w.proj, std::abs(proj(j, q) - ng(j, static_cast<Eigen::Index>(i))) / scale);
          }
        }
      }
    }
    return w;
  });
  Worst all;
  for (const auto& w : per_seed) {
    all.up = std::max(all.up, w.up);
    all.gen = std::max(all.gen, w.gen);
    all.proj = std::max(all.proj, w.proj);
    all.ratio_min = std::min(all.ratio_min, w.ratio_min);
    all.ratio_max = std::max(all.ratio_max, w.ratio_max);
  }
  r.measured["max_relative_error_upsampled"] = all.up;
  r.measured["max_relative_error_generated"] = all.gen;
  r.measured["max_projection_error"] = all.proj;
  if (all.ratio_max > 0.0) {
    r.measured["replicated_ratio_min"] = all.ratio_min;
    r.measured["replicated_ratio_max"] = all.ratio_max;
  }
  r.passed = r.regime_ok && all.up <= c.tol.exact && all.gen <= c.tol.exact && all.proj <= c.tol.projection;
  return r;
}

// One SAM perturbation against the plain gradient at the same weights, at the
// fresh init and after warm_steps GD steps: noise sets are preserved, each
// noise gradient shrinks by the predicted squared factor up to logit drift, and
// the plus-set NoiseAlign strictly drops (or is unchanged when rho = 0).
inline CheckReport check_sam_vs_gd_noisealign(const CheckConfig& c) {
  c.validate();
  CheckReport r;
  r.name = "sam_vs_gd_noisealign";
  r.seeds = c.seeds;
  struct State {
    double rho = 0.0, bound = 0.0, min_plus_factor = 1.0, drift = 0.0, excess = 0.0, na_sam = 0.0, na_gd = 0.0;
    double max_rel = 0.0, pointwise = -1e300;
    bool sets_equal = true, skipped = false;
    std::size_t strict = 0, filters = 0;
  };
  auto per_seed = parallel_map(c.seeds, resolve_threads(c.threads), [&](std::size_t s) {
    const std::uint64_t seed = detail::trial_seed(c, s);
    Dataset ds = detail::base_for(c, seed);
    CnnModel m0 = detail::init_for(c, seed);
    std::vector<State> out;
    for (const CnnModel& m : {m0, detail::run_gd(m0, ds, c.optim.eta, c.warm_steps)}) {
      State st;
      GradientMatrix g = grad_full(m, ds);
      st.bound = rho_bound(m, ds);
      st.rho = c.rho_bound_fraction > 0.0 ? c.rho_bound_fraction * st.bound : c.rho;
      if (!(g.frobenius_norm > 0.0)) {
        st.skipped = true;
        out.push_back(st);
        continue;
      }
      const double rho_t = st.rho / g.frobenius_norm;
      CnnModel pert = m;
      pert.weights += rho_t * g.columns;
      auto parts = partition_all(m, ds);
      auto parts_e = partition_all(m, ds, &pert);
      for (std::size_t j = 0; j < parts.size(); ++j) st.sets_equal = st.sets_equal && same_sets(parts[j], parts_e[j]);

      Eigen::VectorXd l0 = logits(m, ds), l1 = logits(pert, ds);
      Eigen::MatrixXd ng0 = noise_gradients(m, ds), ng1 = noise_gradients(pert, ds);
      Eigen::MatrixXd a = m.weights.transpose() * ds.noise;
      auto mult = ds.noise_multiplicity();
      const double M = static_cast<double>(ds.size());
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const auto q = ds.points[i].noise_id;
        const auto qq = static_cast<Eigen::Index>(q);
        const double drift = std::abs(l1(ii) / l0(ii) - 1.0);
        st.drift = std::max(st.drift, drift);
        for (Eigen::Index j = 0; j < a.rows(); ++j) {
          const double factor = 1.0 - rho_t * 3.0 * static_cast<double>(mult[q]) / M * l0(ii) *
                                          ds.points[i].label * a(j, qq) * ds.noise.col(qq).squaredNorm();
          if (ds.points[i].label * a(j, qq) > 0.0) st.min_plus_factor = std::min(st.min_plus_factor, factor);
          const double predicted = std::abs(ng0(j, ii)) * factor * factor;
          if (predicted == 0.0) continue;
          const double rel = std::abs(std::abs(ng1(j, ii)) - predicted) / predicted;
          st.max_rel = std::max(st.max_rel, rel);
          st.pointwise = std::max(st.pointwise, rel - drift);
        }
      }
      st.excess = st.max_rel - std::max(c.tol.drift_floor, st.drift);
      for (const auto& p : parts) {
        if (p.plus.empty()) continue;
        const double sam = noise_align(pert, ds, p, Side::Plus), gd = noise_align(m, ds, p, Side::Plus);
        st.na_sam += sam;
        st.na_gd += gd;
        ++st.filters;
        if (st.rho > 0.0 ? sam < gd : sam == gd) ++st.strict;
      }
      out.push_back(st);
    }
    return out;
  });

  double rho_min = 1e300, bound_min = 1e300, min_factor = 1.0, drift = 0.0, excess = -1e300, na_sam = 0.0, na_gd = 0.0;
  double max_rel = 0.0, pointwise = -1e300;
  std::size_t states = 0, equal_states = 0, below_bound = 0, strict = 0, filters = 0, all_strict_seeds = 0,
              skipped = 0;
  for (const auto& seed_states : per_seed) {
    bool seed_strict = true;
    for (const auto& st : seed_states) {
      if (st.skipped) {
        ++skipped;
        continue;
      }
      ++states;
      rho_min = std::min(rho_min, st.rho);
      bound_min = std::min(bound_min, st.bound);
      if (st.rho < st.bound) ++below_bound;
      if (st.sets_equal) ++equal_states;
      min_factor = std::min(min_factor, st.min_plus_factor);
      drift = std::max(drift, st.drift);
      excess = std::max(excess, st.excess);
      max_rel = std::max(max_rel, st.max_rel);
      pointwise = std::max(pointwise, st.pointwise);
      na_sam += st.na_sam;
      na_gd += st.na_gd;
      strict += st.strict;
      filters += st.filters;
      seed_strict = seed_strict && st.strict == st.filters;
    }
    if (seed_strict) ++all_strict_seeds;
  }
  r.measured["rho"] = states ? rho_min : 0.0;
  r.measured["rho_bound_min"] = states ? bound_min : 0.0;
  r.measured["states_below_rho_bound"] = static_cast<double>(below_bound);
  r.measured["states"] = static_cast<double>(states);
  r.measured["states_sets_equal"] = static_cast<double>(equal_states);
  r.measured["min_plus_factor"] = min_factor;
  r.measured["max_logit_drift"] = drift;
  r.measured["identity_max_excess"] = states ? excess : 0.0;
  r.measured["identity_max_relative_error"] = max_rel;
  r.measured["identity_pointwise_excess"] = states ? pointwise : 0.0;
  r.measured["noisealign_sam"] = filters ? na_sam / static_cast<double>(filters) : 0.0;
  r.measured["noisealign_gd"] = filters ? na_gd / static_cast<double>(filters) : 0.0;
  r.measured["strict_filters"] = static_cast<double>(strict);
  r.measured["filters"] = static_cast<double>(filters);
  r.measured["seeds_all_strict"] = static_cast<double>(all_strict_seeds);
  if (skipped) r.notes.push_back(std::to_string(skipped) + " state(s) skipped at zero gradient");

  // The direct condition for sign preservation is that every plus-set factor
  // stays in (0, 1]; the lemma's radius bound is sufficient and often far
  // smaller, so it is reported rather than required.
  r.regime_ok = c.data.noise_mode == NoiseMode::Idealized && min_factor > 0.0 && drift <= c.tol.max_logit_drift;
  if (below_bound < states) r.notes.push_back("rho exceeds the radius bound in some states; sign preservation checked directly");
  const bool sets_ok = equal_states == states;
  const bool identity_ok = states == 0 || excess <= c.tol.projection;
  const bool order_ok = strict == filters;
  r.passed = r.regime_ok && sets_ok && identity_ok && order_ok;
  return r;
}

// GD from the fresh init: minus-set alignments never grow, plus-set alignments
// strictly grow, and no noise changes set while t <= T.
inline CheckReport check_inert_noises(const CheckConfig& c) {
  c.validate();
  CheckReport r;
  r.name = "inert_noises";
  r.seeds = c.seeds;
  struct Count {
    std::size_t triples = 0, violations = 0, changes = 0;
    double eta_bound = 0.0;
  };
  auto per_seed = parallel_map(c.seeds, resolve_threads(c.threads), [&](std::size_t s) {
    const std::uint64_t seed = detail::trial_seed(c, s);
    Dataset ds = detail::base_for(c, seed);
    CnnModel m0 = detail::init_for(c, seed);
    Count cnt;
    cnt.eta_bound = eta_bound(m0, ds, partition_all(m0, ds));
    OptimizerConfig gd = c.optim;
    gd.method = Method::GD;
    TrainOptions opts;
    opts.record_noise = true;
    auto rec = train(m0, ds, gd, ds.basis, opts).second;
    const Eigen::MatrixXd& a0 = rec.steps.front().noise_align;
    for (std::size_t t = 0; t + 1 < rec.steps.size(); ++t) {
      const Eigen::MatrixXd& a = rec.steps[t].noise_align;
      const Eigen::MatrixXd& b = rec.steps[t + 1].noise_align;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto q = static_cast<Eigen::Index>(ds.points[i].noise_id);
        const int y = ds.points[i].label;
        for (Eigen::Index j = 0; j < a.rows(); ++j) {
          ++cnt.triples;
          const bool plus = y * a0(j, q) > 0.0;
          const bool ok = plus ? std::abs(b(j, q)) > std::abs(a(j, q)) : std::abs(b(j, q)) <= std::abs(a(j, q)) + 1e-12;
          if (!ok) ++cnt.violations;
          if ((y * b(j, q) > 0.0) != plus) ++cnt.changes;
        }
      }
    }
    return cnt;
  });
  Count all;
  all.eta_bound = std::numeric_limits<double>::infinity();
  for (const auto& cnt : per_seed) {
    all.triples += cnt.triples;
    all.violations += cnt.violations;
    all.changes += cnt.changes;
    all.eta_bound = std::min(all.eta_bound, cnt.eta_bound);
  }
  const double frac = all.triples ? static_cast<double>(all.violations) / static_cast<double>(all.triples) : 0.0;
  r.measured["eta"] = c.optim.eta;
  r.measured["eta_bound_min"] = all.eta_bound;
  r.measured["triples"] = static_cast<double>(all.triples);
  r.measured["violation_count"] = static_cast<double>(all.violations);
  r.measured["violation_fraction"] = frac;
  r.measured["set_changes"] = static_cast<double>(all.changes);
  r.regime_ok = c.optim.eta < all.eta_bound;
  if (!r.regime_ok) r.notes.push_back("step size above the monotonicity bound");
  r.passed = r.regime_ok && frac <= c.tol.violation_fraction && all.changes == 0;
  return r;
}

// At a fresh Gaussian init about half of the noises sit in each filter's plus set.
inline CheckReport check_init_half_split(const CheckConfig& c) {
  c.validate();
  CheckReport r;
  r.name = "init_half_split";
  r.seeds = c.seeds;
  auto fracs = parallel_map(c.seeds, resolve_threads(c.threads), [&](std::size_t s) {
    const std::uint64_t seed = detail::trial_seed(c, s);
    Dataset ds = detail::base_for(c, seed);
    CnnModel m = detail::init_for(c, seed);
    std::vector<double> f;
    for (const auto& p : partition_all(m, ds))
      f.push_back(static_cast<double>(p.plus.size()) / static_cast<double>(ds.size()));
    return f;
  });
  std::vector<double> all;
  for (const auto& f : fracs) all.insert(all.end(), f.begin(), f.end());
  const double lo = *std::min_element(all.begin(), all.end()), hi = *std::max_element(all.begin(), all.end());
  r.measured["min_plus_fraction"] = lo;
  r.measured["max_plus_fraction"] = hi;
  r.measured["mean_plus_fraction"] = stats::mean(all);
  r.passed = lo >= c.tol.half_lo && hi <= c.tol.half_hi;
  return r;
}

// Each of D_U and D_G trained by GD for warm_steps from the same init; the
// plus-set NoiseAlign of D_G is compared with D_U's over seeds, first for the
// configured synthetic noise scale and then for a scale meant to break the
// smallness condition.
inline CheckReport check_gen_vs_up_expectation(const CheckConfig& c) {
  c.validate();
  CheckReport r;
  r.name = "gen_vs_up_expectation";
  r.seeds = c.seeds;
  const std::size_t k = c.k_values.size() == 1 ? c.k_values.front() : 3;
  GenerationNoiseParams probe = c.gen;
  probe.sigma_gamma = c.probe_sigma_ratio * c.data.sigma_p;
  struct Trial {
    double up = 0.0, gen = 0.0, probe = 0.0, term_gamma = 0.0, term_xi = 0.0, probe_gamma = 0.0, probe_xi = 0.0;
  };
  auto mean_plus_align = [](const CnnModel& m, const Dataset& ds) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& p : partition_all(m, ds)) {
      if (p.plus.empty()) continue;
      s += noise_align(m, ds, p, Side::Plus);
      ++n;
    }
    return n ? s / static_cast<double>(n) : 0.0;
  };
  // Mean of l <w, noise>^2 ||noise||^2 over generated points and over the
  // original slow points.
  auto terms = [](const CnnModel& m, const Dataset& ds) {
    Eigen::VectorXd l = logits(m, ds);
    Eigen::MatrixXd a = m.weights.transpose() * ds.noise;
    double g = 0.0, x = 0.0;
    std::size_t ng = 0, nx = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& p = ds.points[i];
      if (p.feature != FeatureKind::Slow) continue;
      const auto q = static_cast<Eigen::Index>(p.noise_id);
      const double v = l(static_cast<Eigen::Index>(i)) * a.col(q).squaredNorm() * ds.noise.col(q).squaredNorm();
      if (p.provenance == Provenance::Generated) {
        g += v;
        ++ng;
      } else {
        x += v;
        ++nx;
      }
    }
    return std::pair<double, double>{ng ? g / static_cast<double>(ng) : 0.0, nx ? x / static_cast<double>(nx) : 0.0};
  };
  auto trials = parallel_map(c.seeds, resolve_threads(c.threads), [&](std::size_t s) {
    const std::uint64_t seed = detail::trial_seed(c, s);
    Dataset base = detail::base_for(c, seed);
    CnnModel m0 = detail::init_for(c, seed);
    Dataset up = upsample(base, k);
    Dataset gen = generate(base, k, c.gen, derive_seed(seed, "generate"));
    Dataset gen_probe = generate(base, k, probe, derive_seed(seed, "generate"));
    CnnModel mu = detail::run_gd(m0, up, c.optim.eta, c.warm_steps);
    CnnModel mg = detail::run_gd(m0, gen, c.optim.eta, c.warm_steps);
    CnnModel mp = detail::run_gd(m0, gen_probe, c.optim.eta, c.warm_steps);
    Trial t;
    t.up = mean_plus_align(mu, up);
    t.gen = mean_plus_align(mg, gen);
    t.probe = mean_plus_align(mp, gen_probe);
    std::tie(t.term_gamma, t.term_xi) = terms(mg, gen);
    std::tie(t.probe_gamma, t.probe_xi) = terms(mp, gen_probe);
    return t;
  });
  std::vector<double> up, gen, prb, tg, tx, pg, px;
  for (const auto& t : trials) {
    up.push_back(t.up);
    gen.push_back(t.gen);
    prb.push_back(t.probe);
    tg.push_back(t.term_gamma);
    tx.push_back(t.term_xi);
    pg.push_back(t.probe_gamma);
    px.push_back(t.probe_xi);
  }
  const auto ciu = stats::ci95(up), cig = stats::ci95(gen), cip = stats::ci95(prb);
  r.measured["k"] = static_cast<double>(k);
  r.measured["noisealign_up_mean"] = ciu.mean;
  r.measured["noisealign_up_ci_lo"] = ciu.lo;
  r.measured["noisealign_up_ci_hi"] = ciu.hi;
  r.measured["noisealign_gen_mean"] = cig.mean;
  r.measured["noisealign_gen_ci_lo"] = cig.lo;
  r.measured["noisealign_gen_ci_hi"] = cig.hi;
  r.measured["noisealign_probe_mean"] = cip.mean;
  r.measured["probe_sigma_gamma"] = probe.sigma_gamma;
  const double ratio = stats::mean(tg) / stats::mean(tx);
  const double probe_ratio = stats::mean(pg) / stats::mean(px);
  r.measured["smallness_ratio"] = ratio;
  r.measured["probe_smallness_ratio"] = probe_ratio;
  r.measured["probe_inequality_holds"] = cip.mean < ciu.mean ? 1.0 : 0.0;
  r.notes.push_back("CI: mean +/- 1.96 standard errors over seeds (normal approximation)");
  r.regime_ok = ratio < static_cast<double>(k + 1);
  if (!r.regime_ok) r.notes.push_back("smallness condition not met at the configured synthetic noise scale");
  if (k == 1) {
    r.passed = r.regime_ok && std::abs(ciu.mean - cig.mean) <= 1e-12 * std::max(1.0, ciu.mean);
  } else {
    r.passed = r.regime_ok && cig.hi < ciu.lo;
  }
  return r;
}

// Stratified mini-batch variance of D_U against D_G, each at its own model
// after optim.steps GD steps from the shared init.
inline CheckReport check_variance_inflation(const CheckConfig& c) {
  c.validate();
  CheckReport r;
  r.name = "variance_inflation";
  r.seeds = c.seeds;
  const std::size_t K = c.k_values.size();
  struct Cell {
    VarianceEstimate up, gen;
  };
  auto cells = parallel_map(c.seeds * K, resolve_threads(c.threads), [&](std::size_t task) {
    const std::size_t s = task / K, ki = task % K;
    const std::size_t k = c.k_values[ki];
    const std::uint64_t seed = detail::trial_seed(c, s);
    Dataset base = detail::base_for(c, seed);
    CnnModel m0 = detail::init_for(c, seed);
    Cell cell;
    for (AugmentMode mode : {AugmentMode::Upsample, AugmentMode::Generate}) {
      Dataset ds = detail::augmented(base, k, mode, c.gen, seed);
      CnnModel m = detail::run_gd(m0, ds, c.optim.eta, c.optim.steps);
      auto est = estimate_minibatch_variance(m, ds, c.optim.batch, Sampling::Stratified, c.variance_trials,
                                             derive_seed(seed, "variance", k), c.optim.rounding);
      (mode == AugmentMode::Upsample ? cell.up : cell.gen) = est;
    }
    return cell;
  });
  bool agree_at_one = true, separated = true;
  std::vector<double> ks, ratios;
  for (std::size_t ki = 0; ki < K; ++ki) {
    const std::size_t k = c.k_values[ki];
    std::vector<double> ratio_k, up_k, gen_k;
    std::size_t sep = 0;
    for (std::size_t s = 0; s < c.seeds; ++s) {
      const Cell& cell = cells[s * K + ki];
      ratio_k.push_back(cell.up.mean_sq_dev / cell.gen.mean_sq_dev);
      up_k.push_back(cell.up.mean_sq_dev);
      gen_k.push_back(cell.gen.mean_sq_dev);
      const double z = stats::kZ95;
      if (cell.up.mean_sq_dev - z * cell.up.std_error > cell.gen.mean_sq_dev + z * cell.gen.std_error) ++sep;
      if (k == 1 && std::abs(cell.up.mean_sq_dev - cell.gen.mean_sq_dev) >
                        2.0 * std::hypot(cell.up.std_error, cell.gen.std_error))
        agree_at_one = false;
    }
    const std::string key = "k" + std::to_string(k);
    r.measured["ratio_" + key] = stats::mean(ratio_k);
    r.measured["variance_up_" + key] = stats::mean(up_k);
    r.measured["variance_gen_" + key] = stats::mean(gen_k);
    r.measured["bound_factor_" + key] = variance_bound_factor(k, c.data.alpha, c.optim.batch, c.data.n);
    if (k >= 2) {
      r.measured["separated_seeds_" + key] = static_cast<double>(sep);
      separated = separated && sep == c.seeds;
    }
    ks.push_back(static_cast<double>(k));
    ratios.push_back(stats::mean(ratio_k));
  }
  const double rho = ks.size() >= 2 ? stats::spearman(ks, ratios) : 0.0;
  r.measured["spearman_ratio_vs_k"] = rho;
  r.notes.push_back("CI: Monte Carlo mean +/- 1.96 standard errors per seed; separation required in every seed");
  r.passed = agree_at_one && separated && (ks.size() < 2 || rho > 0.0);
  return r;
}

// Matched-budget training on D_U and D_G over a k sweep.
inline CheckReport check_convergence_and_generalization(const CheckConfig& c) {
  c.validate();
  CheckReport r;
  r.name = "convergence_and_generalization";
  r.seeds = c.seeds;
  auto cells = sweep_k(c);
  auto cell_of = [&](std::size_t k, AugmentMode mode) -> const SweepCell* {
    for (const auto& sc : cells)
      if (sc.k == k && sc.mode == mode) return &sc;
    return nullptr;
  };
  std::vector<double> up_curve, gen_curve;
  for (std::size_t k : c.k_values) {
    up_curve.push_back(stats::mean(cell_of(k, AugmentMode::Upsample)->errors()));
    gen_curve.push_back(stats::mean(cell_of(k, AugmentMode::Generate)->errors()));
    r.measured["test_error_up_k" + std::to_string(k)] = up_curve.back();
    r.measured["test_error_gen_k" + std::to_string(k)] = gen_curve.back();
  }
  const std::size_t arg_up = c.k_values[detail::argmin(up_curve)];
  const std::size_t arg_gen = c.k_values[detail::argmin(gen_curve)];
  r.measured["argmin_k_up"] = static_cast<double>(arg_up);
  r.measured["argmin_k_gen"] = static_cast<double>(arg_gen);
  const bool sweep_ok = arg_up <= 2 && arg_gen > 2;

  const SweepCell* cu = cell_of(c.eval_k, AugmentMode::Upsample);
  const SweepCell* cg = cell_of(c.eval_k, AugmentMode::Generate);
  if (!cu || !cg) throw Error(ErrorKind::ConfigError, "eval_k must be one of k_values");
  std::size_t wins = 0;
  for (std::size_t s = 0; s < c.seeds; ++s)
    if (cg->runs[s].test_error < cu->runs[s].test_error) ++wins;
  const double win_frac = static_cast<double>(wins) / static_cast<double>(c.seeds);
  r.measured["win_fraction_at_eval_k"] = win_frac;

  // Loss threshold at the chosen quantile of all final losses at eval_k.
  std::vector<double> finals;
  for (std::size_t s = 0; s < c.seeds; ++s) {
    finals.push_back(cu->runs[s].final_loss);
    finals.push_back(cg->runs[s].final_loss);
  }
  const double thr = detail::quantile(finals, c.threshold_quantile);
  auto steps_to = [&](const TrainingOutcome& o) {
    for (std::size_t t = 0; t < o.losses.size(); ++t)
      if (o.losses[t] <= thr) return t;
    return o.losses.size();
  };
  std::size_t faster = 0;
  for (std::size_t s = 0; s < c.seeds; ++s)
    if (steps_to(cg->runs[s]) <= steps_to(cu->runs[s])) ++faster;
  const double faster_frac = static_cast<double>(faster) / static_cast<double>(c.seeds);
  r.measured["loss_threshold"] = thr;
  r.measured["faster_fraction_at_eval_k"] = faster_frac;

  // Premise: per-seed mini-batch variance of D_G vs D_U at the shared init,
  // so only the datasets differ. Final models are not comparable here since
  // D_U has usually memorized its slow points by then.
  auto premise = parallel_map(c.seeds, resolve_threads(c.threads), [&](std::size_t s) {
    const std::uint64_t seed = detail::trial_seed(c, s);
    Dataset base = detail::base_for(c, seed);
    CnnModel m0 = detail::init_for(c, seed);
    std::array<double, 2> v{};
    for (AugmentMode mode : {AugmentMode::Upsample, AugmentMode::Generate}) {
      Dataset ds = detail::augmented(base, c.eval_k, mode, c.gen, seed);
      v[mode == AugmentMode::Upsample ? 0 : 1] =
          estimate_minibatch_variance(m0, ds, c.optim.batch, c.optim.sampling, c.premise_trials,
                                      derive_seed(seed, "premise"), c.optim.rounding)
              .mean_sq_dev;
    }
    return v;
  });
  double vu = 0.0, vg = 0.0;
  for (const auto& v : premise) {
    vu += v[0];
    vg += v[1];
  }
  const bool premise_ok = vg <= vu;
  r.measured["premise_variance_up"] = vu / static_cast<double>(c.seeds);
  r.measured["premise_variance_gen"] = vg / static_cast<double>(c.seeds);
  r.measured["premise_held"] = premise_ok ? 1.0 : 0.0;
  bool conv_ok = true;
  if (premise_ok) {
    conv_ok = faster_frac >= c.tol.faster_fraction;
  } else {
    r.notes.push_back("variance premise did not hold; convergence-speed part not gated");
  }
  r.passed = conv_ok && win_frac >= c.tol.win_fraction && sweep_ok;
  return r;
}

// Cluster2 against the ground-truth slow set, and downstream error against HighLoss.
inline CheckReport check_selection_pipeline(const CheckConfig& c) {
  CheckConfig cc = c;
  for (Strategy s : {Strategy::Cluster2, Strategy::HighLoss})
    if (std::find(cc.strategies.begin(), cc.strategies.end(), s) == cc.strategies.end()) cc.strategies.push_back(s);
  CheckReport r;
  r.name = "selection_pipeline";
  r.seeds = c.seeds;
  auto outcomes = compare_selection(cc);
  const StrategyOutcome *cl = nullptr, *hl = nullptr;
  for (const auto& o : outcomes) {
    const std::string key = to_string(o.strategy);
    r.measured["test_error_" + key] = stats::mean(o.errors);
    r.measured["fraction_" + key] = stats::mean(o.fractions);
    if (o.strategy == Strategy::Cluster2) cl = &o;
    if (o.strategy == Strategy::HighLoss) hl = &o;
  }
  const double rec_min = *std::min_element(cl->recalls.begin(), cl->recalls.end());
  const double prec_min = *std::min_element(cl->precisions.begin(), cl->precisions.end());
  r.measured["recall_min"] = rec_min;
  r.measured["recall_mean"] = stats::mean(cl->recalls);
  r.measured["precision_min"] = prec_min;
  r.measured["precision_mean"] = stats::mean(cl->precisions);
  r.measured["cluster_fallbacks"] = static_cast<double>(cl->fallbacks);
  const bool order_ok = stats::mean(cl->errors) <= stats::mean(hl->errors);
  r.passed = rec_min >= c.tol.recall && prec_min >= c.tol.precision && order_ok;
  return r;
}

// ---- dispatch -----------------------------------------------------------------

inline std::vector<std::string> check_names() {
  return {"gradient_oracle",      "upsample_amplification", "sam_vs_gd_noisealign",     "noise_set_equivalence",
          "inert_noises",         "init_half_split",        "gen_vs_up_expectation",    "variance_inflation",
          "convergence_and_generalization", "selection_pipeline"};
}

inline CheckReport run_check(const std::string& name, const CheckConfig& c) {
  if (name == "gradient_oracle") return check_gradient_oracle(c);
  if (name == "upsample_amplification") return check_upsample_amplification(c);
  if (name == "sam_vs_gd_noisealign") return check_sam_vs_gd_noisealign(c);
  if (name == "noise_set_equivalence") {
    CheckConfig cc = c;
    if (!(cc.rho_bound_fraction > 0.0)) cc.rho_bound_fraction = 0.5;
    auto r = check_sam_vs_gd_noisealign(cc);
    r.name = name;
    r.regime_ok = r.measured["states_below_rho_bound"] == r.measured["states"];
    r.passed = r.regime_ok && r.measured["states_sets_equal"] == r.measured["states"];
    return r;
  }
  if (name == "inert_noises") return check_inert_noises(c);
  if (name == "init_half_split") return check_init_half_split(c);
  if (name == "gen_vs_up_expectation") return check_gen_vs_up_expectation(c);
  if (name == "variance_inflation") return check_variance_inflation(c);
  if (name == "convergence_and_generalization") return check_convergence_and_generalization(c);
  if (name == "selection_pipeline") return check_selection_pipeline(c);
  throw Error(ErrorKind::ConfigError, "unknown check: " + name);
}

// The checks a preset drives, each with its per-check adjustments.
inline std::vector<std::pair<std::string, CheckConfig>> preset_plan(const std::string& name, std::uint64_t seed) {
  CheckConfig base = preset(name);
  base.master_seed = seed;
  std::vector<std::pair<std::string, CheckConfig>> plan;
  if (name == "grad_default") {
    plan.emplace_back("gradient_oracle", base);
  } else if (name == "thm1_default") {
    plan.emplace_back("inert_noises", base);
    CheckConfig sam = base;
    sam.seeds = 20;
    plan.emplace_back("sam_vs_gd_noisealign", sam);
    CheckConfig sets = sam;
    sets.rho_bound_fraction = 0.5;
    plan.emplace_back("noise_set_equivalence", sets);
    CheckConfig half = base;
    half.seeds = 20;
    half.data.n = 4000;
    half.data.noise_mode = NoiseMode::FeatureOrthogonal;
    plan.emplace_back("init_half_split", half);
  } else if (name == "thm2_default") {
    CheckConfig amp = base;
    amp.seeds = 5;
    plan.emplace_back("upsample_amplification", amp);
    CheckConfig ex = base;
    ex.k_values = {3};
    plan.emplace_back("gen_vs_up_expectation", ex);
  } else if (name == "thm3_default") {
    plan.emplace_back("variance_inflation", base);
  } else if (name == "cor1_default") {
    plan.emplace_back("convergence_and_generalization", base);
  } else if (name == "sel_default") {
    plan.emplace_back("selection_pipeline", base);
  }
  return plan;
}

}  // namespace tada
