#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tada/cnn.hpp"
#include "tada/error.hpp"
#include "tada/io.hpp"
#include "tada/optim.hpp"
#include "tada/rng.hpp"
#include "tada/synthdata.hpp"

namespace tada {

enum class Side { Plus, Minus };

inline std::string to_string(Side s) { return s == Side::Plus ? "plus" : "minus"; }

// Point indices whose noise alignment with filter j agrees in sign with the
// label (plus) or not (minus). Replicas are listed once per occurrence.
struct NoiseSetPartition {
  std::size_t filter = 0;
  std::vector<std::size_t> plus;
  std::vector<std::size_t> minus;
  bool perturbed = false;
  std::size_t ties = 0;  // exact-zero alignments, placed in minus

  const std::vector<std::size_t>& side(Side s) const { return s == Side::Plus ? plus : minus; }
};

inline NoiseSetPartition partition_noise_sets(const CnnModel& m, const Dataset& ds, std::size_t j,
                                              const CnnModel* perturbed = nullptr) {
  const CnnModel& w = perturbed ? *perturbed : m;
  detail::check_shapes(w, ds);
  if (j >= w.filters()) throw Error(ErrorKind::IndexError, "filter index out of range");
  NoiseSetPartition p;
  p.filter = j;
  p.perturbed = perturbed != nullptr;
  Eigen::VectorXd a = ds.noise.transpose() * w.filter(j);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double v = a(static_cast<Eigen::Index>(ds.points[i].noise_id));
    if (v == 0.0) {
      ++p.ties;
      p.minus.push_back(i);
    } else if ((v > 0.0) == (ds.points[i].label > 0)) {
      p.plus.push_back(i);
    } else {
      p.minus.push_back(i);
    }
  }
  return p;
}

inline std::vector<NoiseSetPartition> partition_all(const CnnModel& m, const Dataset& ds,
                                                    const CnnModel* perturbed = nullptr) {
  std::vector<NoiseSetPartition> out;
  for (std::size_t j = 0; j < m.filters(); ++j) out.push_back(partition_noise_sets(m, ds, j, perturbed));
  return out;
}

inline bool same_sets(const NoiseSetPartition& a, const NoiseSetPartition& b) {
  return a.filter == b.filter && a.plus == b.plus && a.minus == b.minus;
}

// Mean over the chosen side of |<grad_{w_j} L(model_for_grad), xi_i>|,
// closed form, counting every replica occurrence.
inline double noise_align(const CnnModel& model_for_grad, const Dataset& ds, const NoiseSetPartition& part, Side side) {
  const auto& idx = part.side(side);
  if (idx.empty()) throw Error(ErrorKind::EmptySet, "NoiseAlign of an empty noise set");
  Eigen::MatrixXd g = noise_gradients(model_for_grad, ds);
  double s = 0.0;
  for (auto i : idx) s += std::abs(g(static_cast<Eigen::Index>(part.filter), static_cast<Eigen::Index>(i)));
  return s / static_cast<double>(idx.size());
}

// Same quantity from projecting grad_full onto each noise.
inline double noise_align_projected(const CnnModel& model_for_grad, const Dataset& ds, const NoiseSetPartition& part,
                                    Side side) {
  const auto& idx = part.side(side);
  if (idx.empty()) throw Error(ErrorKind::EmptySet, "NoiseAlign of an empty noise set");
  Eigen::VectorXd col = grad_full(model_for_grad, ds).columns.col(static_cast<Eigen::Index>(part.filter));
  double s = 0.0;
  for (auto i : idx) s += std::abs(col.dot(ds.noise_of(i)));
  return s / static_cast<double>(idx.size());
}

// ((1 - rho_t beta_d^3 a_d) / (1 - rho_t beta_e^3 a_e))^(2/3): the factor by
// which the SAM slow-feature gradient exceeds GD's.
inline double sam_factor(double align_d, double align_e, double rho_t, double beta_d, double beta_e) {
  const double num = 1.0 - rho_t * beta_d * beta_d * beta_d * align_d;
  const double den = 1.0 - rho_t * beta_e * beta_e * beta_e * align_e;
  if (den == 0.0) throw Error(ErrorKind::OutOfRegime, "sam_factor denominator is zero");
  const double base = num / den;
  if (!(base > 0.0)) throw Error(ErrorKind::OutOfRegime, "sam_factor base is not positive");
  return std::pow(base, 2.0 / 3.0);
}

inline double sam_factor_for(const CnnModel& m, const Dataset& ds, std::size_t j, double rho_t) {
  if (j >= m.filters()) throw Error(ErrorKind::IndexError, "filter index out of range");
  return sam_factor(m.filter(j).dot(ds.basis.slow), m.filter(j).dot(ds.basis.fast), rho_t, ds.params.beta_d,
                    ds.params.beta_e);
}

struct VarianceEstimate {
  double mean_sq_dev = 0.0;
  std::size_t trials = 0;
  double std_error = 0.0;
  double per_example_variance = 0.0;
};

// Monte Carlo estimate of E||g_batch - g_full||_F^2 at fixed weights.
inline VarianceEstimate estimate_minibatch_variance(const CnnModel& m, const Dataset& ds, std::size_t batch,
                                                    Sampling sampling, std::size_t trials, std::uint64_t seed,
                                                    StrataRounding rounding = StrataRounding::Exact) {
  if (trials < 100) throw Error(ErrorKind::InvalidArgument, "at least 100 trials are required");
  Eigen::MatrixXd g = per_example_gradients(m, ds);
  Eigen::VectorXd mean = g.rowwise().mean();
  VarianceEstimate est;
  est.trials = trials;
  double pev = 0.0;
  for (Eigen::Index i = 0; i < g.cols(); ++i) pev += (g.col(i) - mean).squaredNorm();
  est.per_example_variance = pev / static_cast<double>(g.cols());

  std::vector<double> dev(trials);
  Eigen::VectorXd acc(g.rows());
  for (std::size_t t = 0; t < trials; ++t) {
    auto idx = sample_batch(ds, batch, sampling, rounding, derive_seed(seed, "variance-trial", t));
    acc.setZero();
    for (auto i : idx) acc += g.col(static_cast<Eigen::Index>(i));
    acc /= static_cast<double>(idx.size());
    dev[t] = (acc - mean).squaredNorm();
  }
  double s = 0.0;
  for (double v : dev) s += v;
  est.mean_sq_dev = s / static_cast<double>(trials);
  double ss = 0.0;
  for (double v : dev) ss += (v - est.mean_sq_dev) * (v - est.mean_sq_dev);
  est.std_error = std::sqrt(ss / static_cast<double>(trials - 1) / static_cast<double>(trials));
  return est;
}

// 1 + k(k-1)(1-alpha) / (alpha + k(1-alpha))^2 * B/N.
inline double variance_bound_factor(std::size_t k, double alpha, std::size_t batch, std::size_t n) {
  if (k < 1) throw Error(ErrorKind::InvalidFactor, "k must be at least 1");
  const double kk = static_cast<double>(k);
  const double denom = alpha + kk * (1.0 - alpha);
  return 1.0 + kk * (kk - 1.0) * (1.0 - alpha) / (denom * denom) * static_cast<double>(batch) / static_cast<double>(n);
}

// Largest SAM radius for which no noise alignment can change sign:
// min_{j,i} |<w_j, xi_i>| / ||xi_i||.
inline double rho_bound(const CnnModel& m, const Dataset& ds) {
  detail::check_shapes(m, ds);
  Eigen::MatrixXd a = m.weights.transpose() * ds.noise;
  Eigen::VectorXd norms = ds.noise.colwise().norm().transpose();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index q = 0; q < a.cols(); ++q)
    for (Eigen::Index j = 0; j < a.rows(); ++j) best = std::min(best, std::abs(a(j, q)) / norms(q));
  return best;
}

// Step size below which inert alignments shrink monotonically without
// overshooting: min over minus-set entries of 1 / (C_i |<w_j, xi_i>|), with
// C_i = 3 m_i ||xi_i||^2 / M and m_i the multiplicity of the noise.
inline double eta_bound(const CnnModel& m, const Dataset& ds, const std::vector<NoiseSetPartition>& parts) {
  Eigen::MatrixXd a = m.weights.transpose() * ds.noise;
  Eigen::VectorXd norms = ds.noise.colwise().squaredNorm().transpose();
  auto mult = ds.noise_multiplicity();
  const double M = static_cast<double>(ds.size());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : parts)
    for (auto i : p.minus) {
      auto q = ds.points[i].noise_id;
      double c = 3.0 * static_cast<double>(mult[q]) * norms(static_cast<Eigen::Index>(q)) / M;
      double v = std::abs(a(static_cast<Eigen::Index>(p.filter), static_cast<Eigen::Index>(q)));
      if (v > 0.0) best = std::min(best, 1.0 / (c * v));
    }
  return best;
}

// Counts (i, j) pairs violating ||grad||_F >= (3/M) l_i <w_j, xi_i>^2 ||xi_i||.
inline std::size_t gradient_norm_bound_violations(const CnnModel& m, const Dataset& ds) {
  double gnorm = grad_full(m, ds).frobenius_norm;
  Eigen::VectorXd l = logits(m, ds);
  Eigen::MatrixXd a = m.weights.transpose() * ds.noise;
  const double M = static_cast<double>(ds.size());
  std::size_t bad = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto q = static_cast<Eigen::Index>(ds.points[i].noise_id);
    double nrm = ds.noise.col(q).norm();
    for (Eigen::Index j = 0; j < a.rows(); ++j) {
      double rhs = 3.0 / M * l(static_cast<Eigen::Index>(i)) * a(j, q) * a(j, q) * nrm;
      if (gnorm < rhs * (1.0 - 1e-12)) ++bad;
    }
  }
  return bad;
}

// ---- export ---------------------------------------------------------------

struct AnalysisRecord {
  std::string metric;
  std::size_t filter = 0;
  std::string side;  // "plus", "minus" or "" when not applicable
  std::uint64_t seed = 0;
  double value = 0.0;
};

inline nlohmann::json analysis_to_json(const std::vector<AnalysisRecord>& recs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : recs)
    arr.push_back({{"metric", r.metric}, {"filter", r.filter}, {"side", r.side}, {"seed", r.seed}, {"value", r.value}});
  return arr;
}

// Columns: metric, filter, side, seed, value.
inline std::string analysis_to_csv(const std::vector<AnalysisRecord>& recs) {
  std::ostringstream out;
  out << "metric,filter,side,seed,value\n";
  for (const auto& r : recs)
    out << r.metric << ',' << r.filter << ',' << r.side << ',' << r.seed << ',' << io::format_double(r.value) << "\n";
  return out.str();
}

}  // namespace tada
