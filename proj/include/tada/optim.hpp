#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tada/cnn.hpp"
#include "tada/error.hpp"
#include "tada/io.hpp"
#include "tada/rng.hpp"
#include "tada/synthdata.hpp"

namespace tada {

enum class Method { GD, SAM, SGD };
enum class Sampling { WithoutReplacement, WithReplacement, Stratified };
// Exact rejects stratum sizes that are not integers. Randomized rounds the
// fast-stratum size up with probability equal to its fractional part, so the
// expected stratum sizes keep the exact proportions.
enum class StrataRounding { Exact, Randomized };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::GD: return "gd";
    case Method::SAM: return "sam";
    case Method::SGD: return "sgd";
  }
  return "gd";
}
inline std::string to_string(Sampling s) {
  switch (s) {
    case Sampling::WithoutReplacement: return "without_replacement";
    case Sampling::WithReplacement: return "with_replacement";
    case Sampling::Stratified: return "stratified";
  }
  return "without_replacement";
}
inline std::string to_string(StrataRounding r) { return r == StrataRounding::Exact ? "exact" : "randomized"; }

inline Method parse_method(const std::string& s) {
  if (s == "gd") return Method::GD;
  if (s == "sam") return Method::SAM;
  if (s == "sgd") return Method::SGD;
  throw Error(ErrorKind::ConfigError, "unknown method: " + s);
}
inline Sampling parse_sampling(const std::string& s) {
  if (s == "without_replacement") return Sampling::WithoutReplacement;
  if (s == "with_replacement") return Sampling::WithReplacement;
  if (s == "stratified") return Sampling::Stratified;
  throw Error(ErrorKind::ConfigError, "unknown sampling: " + s);
}
inline StrataRounding parse_rounding(const std::string& s) {
  if (s == "exact") return StrataRounding::Exact;
  if (s == "randomized") return StrataRounding::Randomized;
  throw Error(ErrorKind::ConfigError, "unknown strata rounding: " + s);
}

struct StepDecay {
  std::size_t every = 0;  // 0 disables
  double factor = 1.0;

  bool operator==(const StepDecay&) const = default;
};

struct OptimizerConfig {
  Method method = Method::GD;
  double eta = 0.1;
  double rho = 0.0;
  std::size_t batch = 1;
  Sampling sampling = Sampling::WithoutReplacement;
  StrataRounding rounding = StrataRounding::Exact;
  std::size_t steps = 50;
  StepDecay decay;

  bool operator==(const OptimizerConfig&) const = default;

  void validate(std::size_t dataset_size) const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw Error(ErrorKind::ConfigError, "eta must be positive");
    if (method == Method::SAM && !(rho > 0.0)) throw Error(ErrorKind::ConfigError, "SAM requires rho > 0");
    if (!(rho >= 0.0)) throw Error(ErrorKind::ConfigError, "rho must be non-negative");
    if (method == Method::SGD && (batch < 1 || batch > dataset_size))
      throw Error(ErrorKind::ConfigError, "SGD batch must lie in [1, dataset size]");
    if (decay.every > 0 && !(decay.factor > 0.0)) throw Error(ErrorKind::ConfigError, "decay factor must be positive");
  }

  double eta_at(std::size_t t) const {
    if (decay.every == 0) return eta;
    return eta * std::pow(decay.factor, static_cast<double>(t / decay.every));
  }
};

inline CnnModel gd_step(const CnnModel& m, const Dataset& ds, double eta) {
  if (!(eta > 0.0)) throw Error(ErrorKind::InvalidArgument, "eta must be positive");
  CnnModel out = m;
  out.weights -= eta * grad_full(m, ds).columns;
  return out;
}

struct SamStepTrace {
  double rho_t = 0.0;
  CnnModel perturbed;
  GradientMatrix perturbed_grad;
  GradientMatrix grad;
};

// Ascent along +rho_t g with rho_t = rho / ||g||_F over all filters jointly,
// then a descent step with the gradient taken at the perturbed weights.
inline std::pair<CnnModel, SamStepTrace> sam_step(const CnnModel& m, const Dataset& ds, double eta, double rho) {
  if (!(eta > 0.0)) throw Error(ErrorKind::InvalidArgument, "eta must be positive");
  if (!(rho > 0.0)) throw Error(ErrorKind::InvalidArgument, "rho must be positive");
  SamStepTrace trace;
  trace.grad = grad_full(m, ds);
  if (!(trace.grad.frobenius_norm > 0.0)) throw Error(ErrorKind::ZeroGradient, "SAM radius undefined at zero gradient");
  trace.rho_t = rho / trace.grad.frobenius_norm;
  trace.perturbed = m;
  trace.perturbed.weights += trace.rho_t * trace.grad.columns;
  trace.perturbed_grad = grad_full(trace.perturbed, ds);
  CnnModel out = m;
  out.weights -= eta * trace.perturbed_grad.columns;
  return {std::move(out), std::move(trace)};
}

struct Strata {
  std::vector<std::size_t> fast;       // points whose feature is fast
  std::vector<std::size_t> augmented;  // slow originals and their copies
  double fast_share = 0.0;             // batch * |fast| / M
};

inline Strata make_strata(const Dataset& ds, std::size_t batch) {
  Strata s;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (ds.points[i].feature == FeatureKind::Fast ? s.fast : s.augmented).push_back(i);
  s.fast_share = static_cast<double>(batch) * static_cast<double>(s.fast.size()) / static_cast<double>(ds.size());
  return s;
}

namespace detail {

// Uniform k-subset of pool via a partial Fisher-Yates shuffle.
inline void draw_subset(const std::vector<std::size_t>& pool, std::size_t k, Rng& rng, std::vector<std::size_t>& out) {
  std::vector<std::size_t> work = pool;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + rng.index(work.size() - i);
    std::swap(work[i], work[j]);
    out.push_back(work[i]);
  }
}

}  // namespace detail

// Indices of one mini-batch, sorted ascending. A full batch without
// replacement is therefore exactly 0..M-1 and reproduces grad_full.
inline std::vector<std::size_t> sample_batch(const Dataset& ds, std::size_t batch, Sampling sampling,
                                             StrataRounding rounding, std::uint64_t seed) {
  const std::size_t M = ds.size();
  if (batch < 1 || batch > M) throw Error(ErrorKind::InvalidArgument, "batch must lie in [1, dataset size]");
  Rng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(batch);
  switch (sampling) {
    case Sampling::WithoutReplacement: {
      if (batch == M) {
        out = all_indices(ds);
        break;
      }
      detail::draw_subset(all_indices(ds), batch, rng, out);
      break;
    }
    case Sampling::WithReplacement:
      for (std::size_t i = 0; i < batch; ++i) out.push_back(rng.index(M));
      break;
    case Sampling::Stratified: {
      Strata s = make_strata(ds, batch);
      double whole = std::floor(s.fast_share);
      double frac = s.fast_share - whole;
      std::size_t b1 = static_cast<std::size_t>(whole);
      if (frac > 1e-9 && frac < 1.0 - 1e-9) {
        if (rounding == StrataRounding::Exact)
          throw Error(ErrorKind::InvalidStrata, "stratum sizes are not integers for this batch size");
        if (rng.bernoulli(frac)) ++b1;
      } else if (frac >= 1.0 - 1e-9) {
        ++b1;
      }
      std::size_t b2 = batch - b1;
      if (b1 > s.fast.size() || b2 > s.augmented.size())
        throw Error(ErrorKind::InvalidStrata, "stratum larger than its block");
      detail::draw_subset(s.fast, b1, rng, out);
      detail::draw_subset(s.augmented, b2, rng, out);
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::pair<CnnModel, std::vector<std::size_t>> sgd_step(const CnnModel& m, const Dataset& ds, double eta,
                                                               std::size_t batch, Sampling sampling, std::uint64_t seed,
                                                               StrataRounding rounding = StrataRounding::Exact) {
  if (!(eta > 0.0)) throw Error(ErrorKind::InvalidArgument, "eta must be positive");
  auto idx = sample_batch(ds, batch, sampling, rounding, seed);
  CnnModel out = m;
  out.weights -= eta * grad_indices(m, ds, idx).columns;
  return {std::move(out), std::move(idx)};
}

struct TrainStep {
  std::size_t t = 0;
  double loss = 0.0;
  std::optional<double> test_error;
  std::vector<double> align_fast;  // <w_j, v_e>
  std::vector<double> align_slow;  // <w_j, v_d>
  Eigen::MatrixXd noise_align;     // J x Q of <w_j, xi_q>, empty unless requested
};

struct TrainRecord {
  std::vector<TrainStep> steps;
  std::uint64_t seed = 0;
  Method method = Method::GD;
  Sampling sampling = Sampling::WithoutReplacement;
  bool terminated_early = false;
  std::string termination_reason;

  // Columns: t, loss, test_error, align_ve_0..align_ve_{J-1}, align_vd_0..align_vd_{J-1}.
  // test_error is empty when no evaluation set was given.
  std::string to_csv() const {
    std::ostringstream out;
    std::size_t J = steps.empty() ? 0 : steps.front().align_fast.size();
    out << "t,loss,test_error";
    for (std::size_t j = 0; j < J; ++j) out << ",align_ve_" << j;
    for (std::size_t j = 0; j < J; ++j) out << ",align_vd_" << j;
    out << "\n";
    for (const auto& s : steps) {
      out << s.t << ',' << io::format_double(s.loss) << ',';
      if (s.test_error) out << io::format_double(*s.test_error);
      for (double a : s.align_fast) out << ',' << io::format_double(a);
      for (double a : s.align_slow) out << ',' << io::format_double(a);
      out << "\n";
    }
    return out.str();
  }
};

struct TrainOptions {
  bool record_noise = false;
  const Dataset* eval_set = nullptr;
  std::uint64_t seed = 0;  // mini-batch draws
};

inline TrainStep snapshot(const CnnModel& m, const Dataset& ds, const FeatureBasis& basis, std::size_t t,
                          const TrainOptions& opts) {
  TrainStep s;
  s.t = t;
  s.loss = loss(m, ds);
  Eigen::VectorXd af = m.weights.transpose() * basis.fast;
  Eigen::VectorXd ad = m.weights.transpose() * basis.slow;
  s.align_fast.assign(af.data(), af.data() + af.size());
  s.align_slow.assign(ad.data(), ad.data() + ad.size());
  if (opts.record_noise) s.noise_align = m.weights.transpose() * ds.noise;
  if (opts.eval_set) s.test_error = error_rate(m, *opts.eval_set);
  return s;
}

inline std::pair<CnnModel, TrainRecord> train(CnnModel m, const Dataset& ds, const OptimizerConfig& cfg,
                                              const FeatureBasis& basis, const TrainOptions& opts = {}) {
  cfg.validate(ds.size());
  TrainRecord rec;
  rec.seed = opts.seed;
  rec.method = cfg.method;
  rec.sampling = cfg.sampling;
  rec.steps.reserve(cfg.steps + 1);
  rec.steps.push_back(snapshot(m, ds, basis, 0, opts));
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const double eta = cfg.eta_at(t);
    switch (cfg.method) {
      case Method::GD:
        m = gd_step(m, ds, eta);
        break;
      case Method::SAM:
        try {
          m = sam_step(m, ds, eta, cfg.rho).first;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::ZeroGradient) throw;
          rec.terminated_early = true;
          rec.termination_reason = e.what();
          return {std::move(m), std::move(rec)};
        }
        break;
      case Method::SGD:
        m = sgd_step(m, ds, eta, cfg.batch, cfg.sampling, derive_seed(opts.seed, "sgd-batch", t), cfg.rounding).first;
        break;
    }
    rec.steps.push_back(snapshot(m, ds, basis, t + 1, opts));
  }
  return {std::move(m), std::move(rec)};
}

}  // namespace tada
