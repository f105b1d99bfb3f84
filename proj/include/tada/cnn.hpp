#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "tada/error.hpp"
#include "tada/io.hpp"
#include "tada/rng.hpp"
#include "tada/synthdata.hpp"

namespace tada {

struct InitConfig {
  double sigma_0 = 0.01;
  std::uint64_t seed = 0;

  bool operator==(const InitConfig&) const = default;
};

struct CnnModel {
  Eigen::MatrixXd weights;  // dim x filters, column j is w_j
  double sigma_0 = 0.0;
  std::uint64_t seed = 0;

  std::size_t dim() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t filters() const { return static_cast<std::size_t>(weights.cols()); }
  auto filter(std::size_t j) const { return weights.col(static_cast<Eigen::Index>(j)); }

  bool operator==(const CnnModel& o) const {
    return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() && weights == o.weights &&
           sigma_0 == o.sigma_0 && seed == o.seed;
  }
};

struct GradientMatrix {
  Eigen::MatrixXd columns;
  double frobenius_norm = 0.0;

  static GradientMatrix from(Eigen::MatrixXd g) {
    GradientMatrix out;
    out.frobenius_norm = g.norm();
    out.columns = std::move(g);
    return out;
  }
};

inline CnnModel init_model(std::size_t dim, std::size_t filters, const InitConfig& init) {
  if (dim < 1 || filters < 1) throw Error(ErrorKind::ShapeError, "model needs positive dim and filter count");
  if (!(init.sigma_0 >= 0.0) || !std::isfinite(init.sigma_0))
    throw Error(ErrorKind::InvalidArgument, "sigma_0 must be finite and non-negative");
  CnnModel m;
  m.sigma_0 = init.sigma_0;
  m.seed = init.seed;
  m.weights.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(filters));
  Rng rng = Rng::derive(init.seed, "init");
  for (Eigen::Index j = 0; j < m.weights.cols(); ++j)
    for (Eigen::Index r = 0; r < m.weights.rows(); ++r) m.weights(r, j) = init.sigma_0 * rng.normal();
  return m;
}

// sigmoid(z) without overflow for large |z|.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(-m)) for margin m = y f.
inline double logistic_loss(double margin) {
  return std::max(-margin, 0.0) + std::log1p(std::exp(-std::abs(margin)));
}

namespace detail {

inline void check_shapes(const CnnModel& m, const Dataset& ds) {
  if (m.dim() != ds.dim()) throw Error(ErrorKind::ShapeError, "model and dataset dimensions differ");
}

inline double cube_sum(const Eigen::Ref<const Eigen::VectorXd>& z) { return z.array().cube().sum(); }

}  // namespace detail

// f(x; W) = sum_j sum_p <w_j, x_p>^3 for explicit patches.
inline double forward_patches(const CnnModel& m, std::span<const Eigen::VectorXd> patches) {
  double f = 0.0;
  for (const auto& x : patches) {
    if (static_cast<std::size_t>(x.size()) != m.dim()) throw Error(ErrorKind::ShapeError, "patch dimension mismatch");
    f += detail::cube_sum(m.weights.transpose() * x);
  }
  return f;
}

inline double forward(const CnnModel& m, const Dataset& ds, std::size_t i) {
  detail::check_shapes(m, ds);
  if (i >= ds.size()) throw Error(ErrorKind::IndexError, "point index out of range");
  Eigen::VectorXd zf = m.weights.transpose() * ds.feature_patch(i);
  Eigen::VectorXd zn = m.weights.transpose() * ds.noise_of(i);
  return detail::cube_sum(zf) + detail::cube_sum(zn);
}

// Projections of every filter onto the two scaled features and every distinct
// noise. All per-point quantities are read off these.
struct Projections {
  Eigen::MatrixXd feature;  // J x 2: column 0 = <w_j, beta_e v_e>, column 1 = <w_j, beta_d v_d>
  Eigen::MatrixXd noise;    // J x Q: <w_j, xi_q>

  static Projections compute(const CnnModel& m, const Dataset& ds) {
    detail::check_shapes(m, ds);
    Projections p;
    Eigen::MatrixXd f(static_cast<Eigen::Index>(ds.dim()), 2);
    f.col(0) = ds.params.beta_e * ds.basis.fast;
    f.col(1) = ds.params.beta_d * ds.basis.slow;
    p.feature = m.weights.transpose() * f;
    p.noise = m.weights.transpose() * ds.noise;
    return p;
  }

  double output(const Dataset& ds, std::size_t i) const {
    const auto& pt = ds.points[i];
    const Eigen::Index c = pt.feature == FeatureKind::Fast ? 0 : 1;
    const double y = pt.label;
    double f = 0.0;
    for (Eigen::Index j = 0; j < feature.rows(); ++j) {
      double a = y * feature(j, c);
      double b = noise(j, static_cast<Eigen::Index>(pt.noise_id));
      f += a * a * a + b * b * b;
    }
    return f;
  }
};

inline Eigen::VectorXd outputs(const CnnModel& m, const Dataset& ds) {
  Projections p = Projections::compute(m, ds);
  Eigen::VectorXd f(static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) f(static_cast<Eigen::Index>(i)) = p.output(ds, i);
  return f;
}

// l_i = sigmoid(-y_i f_i).
inline double logit(const CnnModel& m, const Dataset& ds, std::size_t i) {
  return sigmoid(-ds.points.at(i).label * forward(m, ds, i));
}

inline Eigen::VectorXd logits(const CnnModel& m, const Dataset& ds) {
  Eigen::VectorXd f = outputs(m, ds);
  for (std::size_t i = 0; i < ds.size(); ++i)
    f(static_cast<Eigen::Index>(i)) = sigmoid(-ds.points[i].label * f(static_cast<Eigen::Index>(i)));
  return f;
}

inline Eigen::VectorXd per_example_losses(const CnnModel& m, const Dataset& ds) {
  Eigen::VectorXd f = outputs(m, ds);
  for (std::size_t i = 0; i < ds.size(); ++i)
    f(static_cast<Eigen::Index>(i)) = logistic_loss(ds.points[i].label * f(static_cast<Eigen::Index>(i)));
  return f;
}

inline double loss(const CnnModel& m, const Dataset& ds) {
  if (ds.size() == 0) throw Error(ErrorKind::EmptyDataset, "loss of empty dataset");
  Eigen::VectorXd l = per_example_losses(m, ds);
  double s = 0.0;
  for (Eigen::Index i = 0; i < l.size(); ++i) s += l(i);
  return s / static_cast<double>(ds.size());
}

// 0-1 error of sign(f) against y; f = 0 counts as an error.
inline double error_rate(const CnnModel& m, const Dataset& ds) {
  if (ds.size() == 0) throw Error(ErrorKind::EmptyDataset, "error rate of empty dataset");
  Eigen::VectorXd f = outputs(m, ds);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!(ds.points[i].label * f(static_cast<Eigen::Index>(i)) > 0.0)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

// Averaged loss gradient over the listed points (duplicates allowed):
//   -(1/|idx|) sum_i l_i y_i sum_p 3 <w_j, x_i^p>^2 x_i^p   per filter j.
// Accumulation runs over idx in the given order; the result is assembled from
// per-noise coefficients, so replicas sharing a noise simply add up.
inline GradientMatrix grad_indices(const CnnModel& m, const Dataset& ds, std::span<const std::size_t> idx) {
  detail::check_shapes(m, ds);
  if (idx.empty()) throw Error(ErrorKind::EmptyDataset, "gradient over empty index set");
  const Eigen::Index J = m.weights.cols();
  const Eigen::Index d = m.weights.rows();

  // Distinct noise columns in order of first appearance.
  std::vector<Eigen::Index> slot(ds.noise_count(), -1);
  std::vector<Eigen::Index> used;
  for (auto i : idx) {
    if (i >= ds.size()) throw Error(ErrorKind::IndexError, "point index out of range");
    auto q = ds.points[i].noise_id;
    if (slot[q] < 0) {
      slot[q] = static_cast<Eigen::Index>(used.size());
      used.push_back(static_cast<Eigen::Index>(q));
    }
  }
  bool identity = used.size() == ds.noise_count();
  for (std::size_t u = 0; identity && u < used.size(); ++u) identity = used[u] == static_cast<Eigen::Index>(u);
  Eigen::MatrixXd gathered;
  if (!identity) {
    gathered.resize(d, static_cast<Eigen::Index>(used.size()));
    for (std::size_t u = 0; u < used.size(); ++u) gathered.col(static_cast<Eigen::Index>(u)) = ds.noise.col(used[u]);
  }
  const Eigen::MatrixXd& noise = identity ? ds.noise : gathered;

  Eigen::MatrixXd fpool(d, 2);
  fpool.col(0) = ds.params.beta_e * ds.basis.fast;
  fpool.col(1) = ds.params.beta_d * ds.basis.slow;
  Eigen::MatrixXd zf = m.weights.transpose() * fpool;  // J x 2
  Eigen::MatrixXd zn = m.weights.transpose() * noise;  // J x U

  Eigen::MatrixXd cf = Eigen::MatrixXd::Zero(2, J);
  Eigen::MatrixXd cn = Eigen::MatrixXd::Zero(noise.cols(), J);
  const double scale = 1.0 / static_cast<double>(idx.size());
  for (auto i : idx) {
    const auto& pt = ds.points[i];
    const Eigen::Index c = pt.feature == FeatureKind::Fast ? 0 : 1;
    const Eigen::Index u = slot[pt.noise_id];
    const double y = pt.label;
    double f = 0.0;
    for (Eigen::Index j = 0; j < J; ++j) {
      double a = y * zf(j, c);
      double b = zn(j, u);
      f += a * a * a + b * b * b;
    }
    const double coef = -3.0 * scale * sigmoid(-y * f) * y;
    for (Eigen::Index j = 0; j < J; ++j) {
      // Feature patch is y * beta * v, so <w, x>^2 x = zf^2 * y * (beta v).
      cf(c, j) += coef * y * zf(j, c) * zf(j, c);
      cn(u, j) += coef * zn(j, u) * zn(j, u);
    }
  }
  return GradientMatrix::from(fpool * cf + noise * cn);
}

inline std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

inline GradientMatrix grad_full(const CnnModel& m, const Dataset& ds) {
  if (ds.size() == 0) throw Error(ErrorKind::EmptyDataset, "gradient of empty dataset");
  auto idx = all_indices(ds);
  return grad_indices(m, ds, idx);
}

inline GradientMatrix grad_finite_difference(const CnnModel& m, const Dataset& ds, double step) {
  if (!(step > 0.0)) throw Error(ErrorKind::InvalidArgument, "finite-difference step must be positive");
  CnnModel probe = m;
  Eigen::MatrixXd g(m.weights.rows(), m.weights.cols());
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double w = m.weights(r, j);
      probe.weights(r, j) = w + step;
      double up = loss(probe, ds);
      probe.weights(r, j) = w - step;
      double down = loss(probe, ds);
      probe.weights(r, j) = w;
      g(r, j) = (up - down) / (2.0 * step);
    }
  return GradientMatrix::from(std::move(g));
}

// Per-example loss gradients, one column per point, each the vec of a
// dim x J matrix (column-major). Their mean is grad_full.
inline Eigen::MatrixXd per_example_gradients(const CnnModel& m, const Dataset& ds) {
  Projections p = Projections::compute(m, ds);
  const Eigen::Index d = m.weights.rows(), J = m.weights.cols();
  Eigen::MatrixXd out(d * J, static_cast<Eigen::Index>(ds.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& pt = ds.points[i];
    const Eigen::Index c = pt.feature == FeatureKind::Fast ? 0 : 1;
    const auto q = static_cast<Eigen::Index>(pt.noise_id);
    const double y = pt.label;
    const double coef = -3.0 * sigmoid(-y * p.output(ds, i)) * y;
    const double beta = ds.feature_strength(pt.feature);
    const Eigen::VectorXd& v = ds.feature_direction(pt.feature);
    Eigen::Map<Eigen::MatrixXd> g(out.col(static_cast<Eigen::Index>(i)).data(), d, J);
    for (Eigen::Index j = 0; j < J; ++j) {
      double zf = p.feature(j, c), zn = p.noise(j, q);
      g.col(j) = (coef * y * zf * zf * beta) * v + (coef * zn * zn) * ds.noise.col(q);
    }
  }
  return out;
}

// Closed-form <grad_{w_j} L, v> for one feature:
//   -(3 beta^3 / M) <w_j, v>^2 sum_{i of that kind} l_i.
inline double feature_gradient(const CnnModel& m, const Dataset& ds, std::size_t j, FeatureKind which) {
  detail::check_shapes(m, ds);
  if (j >= m.filters()) throw Error(ErrorKind::IndexError, "filter index out of range");
  const double beta = ds.feature_strength(which);
  const double a = m.filter(j).dot(ds.feature_direction(which));
  Eigen::VectorXd l = logits(m, ds);
  double s = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.points[i].feature == which) s += l(static_cast<Eigen::Index>(i));
  return -3.0 * beta * beta * beta * a * a * s / static_cast<double>(ds.size());
}

// Closed-form <grad_{w_j} L, xi> for the noise of point i, summed over every
// point carrying that noise:
//   -(3/M) <w_j, xi>^2 ||xi||^2 sum_{r shares xi} l_r y_r.
inline double noise_gradient(const CnnModel& m, const Dataset& ds, std::size_t j, std::size_t i) {
  detail::check_shapes(m, ds);
  if (j >= m.filters()) throw Error(ErrorKind::IndexError, "filter index out of range");
  if (i >= ds.size()) throw Error(ErrorKind::IndexError, "point index out of range");
  const auto q = ds.points[i].noise_id;
  const auto xi = ds.noise.col(static_cast<Eigen::Index>(q));
  const double a = m.filter(j).dot(xi);
  Eigen::VectorXd l = logits(m, ds);
  double s = 0.0;
  for (std::size_t r = 0; r < ds.size(); ++r)
    if (ds.points[r].noise_id == q) s += l(static_cast<Eigen::Index>(r)) * ds.points[r].label;
  return -3.0 * a * a * xi.squaredNorm() * s / static_cast<double>(ds.size());
}

// Same quantity for every (filter, point) at once: J x M.
inline Eigen::MatrixXd noise_gradients(const CnnModel& m, const Dataset& ds) {
  Projections p = Projections::compute(m, ds);
  const Eigen::Index J = m.weights.cols();
  std::vector<double> weight(ds.noise_count(), 0.0);
  for (std::size_t r = 0; r < ds.size(); ++r)
    weight[ds.points[r].noise_id] += sigmoid(-ds.points[r].label * p.output(ds, r)) * ds.points[r].label;
  Eigen::VectorXd norms = ds.noise.colwise().squaredNorm().transpose();
  Eigen::MatrixXd out(J, static_cast<Eigen::Index>(ds.size()));
  const double scale = -3.0 / static_cast<double>(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto q = static_cast<Eigen::Index>(ds.points[i].noise_id);
    for (Eigen::Index j = 0; j < J; ++j) {
      double a = p.noise(j, q);
      out(j, static_cast<Eigen::Index>(i)) = scale * a * a * norms(q) * weight[static_cast<std::size_t>(q)];
    }
  }
  return out;
}

// ---- persistence ----------------------------------------------------------

inline std::filesystem::path save_model(const CnnModel& m, const std::filesystem::path& path) {
  std::filesystem::path blob = path;
  blob.replace_extension(".bin");
  std::vector<double> values(m.weights.data(), m.weights.data() + m.weights.size());
  io::write_f64_blob(blob, values);
  nlohmann::json j = {{"format", "tada-lab-model"}, {"version", 1},      {"dim", m.dim()},
                      {"filters", m.filters()},     {"sigma_0", m.sigma_0}, {"seed", m.seed},
                      {"blob", {{"file", blob.filename().string()}, {"dtype", "float64-le"}, {"layout", "column-major by filter"}}}};
  io::write_text(path, j.dump(2) + "\n");
  return blob;
}

inline CnnModel load_model(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::IoError, std::string("malformed model header: ") + e.what());
  }
  CnnModel m;
  m.sigma_0 = j.at("sigma_0").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  auto d = j.at("dim").get<Eigen::Index>(), J = j.at("filters").get<Eigen::Index>();
  auto values = io::read_f64_blob(path.parent_path() / j.at("blob").at("file").get<std::string>());
  if (static_cast<Eigen::Index>(values.size()) != d * J) throw Error(ErrorKind::IoError, "model blob size mismatch");
  m.weights = Eigen::Map<const Eigen::MatrixXd>(values.data(), d, J);
  return m;
}

}  // namespace tada
