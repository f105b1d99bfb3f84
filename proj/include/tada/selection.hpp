#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "tada/cnn.hpp"
#include "tada/error.hpp"
#include "tada/synthdata.hpp"

namespace tada {

struct KMeans2 {
  std::vector<int> assignment;  // 0 = cluster around the lower center
  std::array<double, 2> centers{0.0, 0.0};
  std::size_t iterations = 0;
  bool converged = false;
};

// Lloyd's algorithm with two clusters on scalars, centers seeded at the
// minimum and maximum. Points equidistant from both centers go to cluster 0.
// The seed is accepted for interface symmetry; the initialization is
// deterministic.
inline KMeans2 kmeans2_scalar(const std::vector<double>& values, std::uint64_t /*seed*/ = 0,
                              std::size_t max_iter = 100) {
  if (values.size() < 2) throw Error(ErrorKind::DegenerateClustering, "need at least two values");
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) throw Error(ErrorKind::DegenerateClustering, "all values identical");
  KMeans2 km;
  km.centers = {*lo, *hi};
  km.assignment.assign(values.size(), -1);
  for (km.iterations = 1; km.iterations <= max_iter; ++km.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      int c = std::abs(values[i] - km.centers[1]) < std::abs(values[i] - km.centers[0]) ? 1 : 0;
      if (c != km.assignment[i]) {
        km.assignment[i] = c;
        changed = true;
      }
    }
    if (!changed) {
      km.converged = true;
      break;
    }
    std::array<double, 2> sum{0.0, 0.0};
    std::array<std::size_t, 2> cnt{0, 0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      sum[km.assignment[i]] += values[i];
      ++cnt[km.assignment[i]];
    }
    for (int c = 0; c < 2; ++c)
      if (cnt[c] > 0) km.centers[c] = sum[c] / static_cast<double>(cnt[c]);
  }
  km.iterations = std::min(km.iterations, max_iter);
  return km;
}

enum class Strategy { Cluster2, HighLoss, Misclassified, Oracle, None };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Cluster2: return "cluster2";
    case Strategy::HighLoss: return "high_loss";
    case Strategy::Misclassified: return "misclassified";
    case Strategy::Oracle: return "oracle";
    case Strategy::None: return "none";
  }
  return "none";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "cluster2") return Strategy::Cluster2;
  if (s == "high_loss") return Strategy::HighLoss;
  if (s == "misclassified") return Strategy::Misclassified;
  if (s == "oracle") return Strategy::Oracle;
  if (s == "none") return Strategy::None;
  throw Error(ErrorKind::ConfigError, "unknown selection strategy: " + s);
}

struct SelectionConfig {
  Strategy strategy = Strategy::Cluster2;
  double quantile = 0.5;  // HighLoss only
  std::size_t early_steps = 30;
  bool per_class = true;
  bool cluster_on_loss = false;  // cluster per-example loss instead of f(x; W)

  bool operator==(const SelectionConfig&) const = default;

  void validate() const {
    if (strategy == Strategy::HighLoss && !(quantile > 0.0 && quantile < 1.0))
      throw Error(ErrorKind::ConfigError, "HighLoss quantile must lie in (0, 1)");
  }
};

struct ClusterStats {
  int label = 0;  // 0 when clustering both labels together
  std::array<double, 2> centers{0.0, 0.0};
  std::array<double, 2> mean_loss{0.0, 0.0};
  std::array<std::size_t, 2> sizes{0, 0};
  int selected = 1;
  bool tie = false;
};

struct SelectionResult {
  std::vector<std::size_t> indices;
  double fraction = 0.0;
  std::vector<ClusterStats> cluster_stats;
  SelectionConfig config;
  bool degenerate_fallback = false;  // clustering impossible, HighLoss(0.5) used instead
  bool zero_output = false;          // some f(x) == 0 counted as misclassified
};

namespace detail {

inline std::vector<std::size_t> top_by_loss(const Eigen::VectorXd& losses, const std::vector<std::size_t>& pool,
                                            double q) {
  std::vector<std::size_t> order = pool;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return losses(static_cast<Eigen::Index>(a)) > losses(static_cast<Eigen::Index>(b));
  });
  std::size_t take = static_cast<std::size_t>(std::ceil(q * static_cast<double>(pool.size()) - 1e-12));
  order.resize(std::min(take, order.size()));
  return order;
}

}  // namespace detail

inline SelectionResult identify_slow(const CnnModel& m, const Dataset& ds, const SelectionConfig& cfg) {
  cfg.validate();
  if (ds.size() == 0) throw Error(ErrorKind::EmptyDataset, "selection on empty dataset");
  SelectionResult res;
  res.config = cfg;
  Eigen::VectorXd f = outputs(m, ds);
  Eigen::VectorXd losses(f.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    losses(static_cast<Eigen::Index>(i)) = logistic_loss(ds.points[i].label * f(static_cast<Eigen::Index>(i)));
  std::vector<std::size_t> everyone = all_indices(ds);

  switch (cfg.strategy) {
    case Strategy::None:
      break;
    case Strategy::Oracle:
      res.indices = slow_indices(ds);
      break;
    case Strategy::Misclassified:
      for (std::size_t i = 0; i < ds.size(); ++i) {
        double fi = f(static_cast<Eigen::Index>(i));
        if (fi == 0.0) res.zero_output = true;
        if (!(ds.points[i].label * fi > 0.0)) res.indices.push_back(i);
      }
      break;
    case Strategy::HighLoss:
      res.indices = detail::top_by_loss(losses, everyone, cfg.quantile);
      break;
    case Strategy::Cluster2: {
      std::vector<std::vector<std::size_t>> groups;
      std::vector<int> group_label;
      if (cfg.per_class) {
        for (int y : {-1, 1}) {
          std::vector<std::size_t> g;
          for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.points[i].label == y) g.push_back(i);
          if (!g.empty()) {
            groups.push_back(std::move(g));
            group_label.push_back(y);
          }
        }
      } else {
        groups.push_back(everyone);
        group_label.push_back(0);
      }
      try {
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          const auto& g = groups[gi];
          std::vector<double> vals;
          for (auto i : g) vals.push_back(cfg.cluster_on_loss ? losses(static_cast<Eigen::Index>(i)) : f(static_cast<Eigen::Index>(i)));
          KMeans2 km = kmeans2_scalar(vals);
          ClusterStats cs;
          cs.label = group_label[gi];
          cs.centers = km.centers;
          for (std::size_t r = 0; r < g.size(); ++r) {
            cs.mean_loss[km.assignment[r]] += losses(static_cast<Eigen::Index>(g[r]));
            ++cs.sizes[km.assignment[r]];
          }
          for (int c = 0; c < 2; ++c)
            if (cs.sizes[c] > 0) cs.mean_loss[c] /= static_cast<double>(cs.sizes[c]);
          if (cs.mean_loss[0] == cs.mean_loss[1]) {
            cs.tie = true;
            cs.selected = cs.sizes[1] < cs.sizes[0] ? 1 : 0;
          } else {
            cs.selected = cs.mean_loss[1] > cs.mean_loss[0] ? 1 : 0;
          }
          for (std::size_t r = 0; r < g.size(); ++r)
            if (km.assignment[r] == cs.selected) res.indices.push_back(g[r]);
          res.cluster_stats.push_back(cs);
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateClustering) throw;
        res.degenerate_fallback = true;
        res.cluster_stats.clear();
        res.indices = detail::top_by_loss(losses, everyone, 0.5);
      }
      break;
    }
  }
  std::sort(res.indices.begin(), res.indices.end());
  res.fraction = static_cast<double>(res.indices.size()) / static_cast<double>(ds.size());
  return res;
}

inline Dataset build_augmented_from_selection(const Dataset& base, const SelectionResult& sel, std::size_t k,
                                              AugmentMode mode, const GenerationNoiseParams& gen, std::uint64_t seed) {
  return augment(base, sel.indices, k, mode, gen, seed);
}

inline nlohmann::json selection_to_json(const SelectionResult& r) {
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& c : r.cluster_stats)
    stats.push_back({{"label", c.label},
                     {"centers", {c.centers[0], c.centers[1]}},
                     {"mean_loss", {c.mean_loss[0], c.mean_loss[1]}},
                     {"sizes", {c.sizes[0], c.sizes[1]}},
                     {"selected_cluster", c.selected},
                     {"tie", c.tie}});
  return {{"strategy",
           {{"name", to_string(r.config.strategy)},
            {"quantile", r.config.quantile},
            {"early_steps", r.config.early_steps},
            {"per_class", r.config.per_class},
            {"cluster_on_loss", r.config.cluster_on_loss}}},
          {"indices", r.indices},
          {"fraction", r.fraction},
          {"cluster_stats", stats},
          {"flags", {{"degenerate_fallback", r.degenerate_fallback}, {"zero_output", r.zero_output}}}};
}

}  // namespace tada
