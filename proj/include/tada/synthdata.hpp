#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tada/error.hpp"
#include "tada/io.hpp"
#include "tada/rng.hpp"

namespace tada {

enum class FeatureKind { Fast, Slow };
enum class Provenance { Original, UpsampledCopy, Generated };
enum class BasisMode { Canonical, RandomOrthogonal };
enum class AugmentMode { Upsample, Generate };

// Idealized: each noise is orthogonal to both features and to every other
// noise already in the dataset, rescaled to its drawn norm. This removes the
// noise cross-terms exactly, so the closed-form gradients hold to rounding.
// FeatureOrthogonal: projected off the two features only.
// Raw: plain Gaussian draws.
enum class NoiseMode { Idealized, FeatureOrthogonal, Raw };

inline std::string to_string(FeatureKind k) { return k == FeatureKind::Fast ? "fast" : "slow"; }
inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Original: return "original";
    case Provenance::UpsampledCopy: return "upsampled_copy";
    case Provenance::Generated: return "generated";
  }
  return "original";
}
inline std::string to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::Idealized: return "idealized";
    case NoiseMode::FeatureOrthogonal: return "feature_orthogonal";
    case NoiseMode::Raw: return "raw";
  }
  return "idealized";
}
inline std::string to_string(AugmentMode m) { return m == AugmentMode::Upsample ? "upsample" : "generate"; }
inline std::string to_string(BasisMode m) { return m == BasisMode::Canonical ? "canonical" : "random_orthogonal"; }

inline FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "fast") return FeatureKind::Fast;
  if (s == "slow") return FeatureKind::Slow;
  throw Error(ErrorKind::ConfigError, "unknown feature kind: " + s);
}
inline Provenance parse_provenance(const std::string& s) {
  if (s == "original") return Provenance::Original;
  if (s == "upsampled_copy") return Provenance::UpsampledCopy;
  if (s == "generated") return Provenance::Generated;
  throw Error(ErrorKind::ConfigError, "unknown provenance: " + s);
}
inline NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "idealized") return NoiseMode::Idealized;
  if (s == "feature_orthogonal") return NoiseMode::FeatureOrthogonal;
  if (s == "raw") return NoiseMode::Raw;
  throw Error(ErrorKind::ConfigError, "unknown noise mode: " + s);
}
inline AugmentMode parse_augment_mode(const std::string& s) {
  if (s == "upsample") return AugmentMode::Upsample;
  if (s == "generate") return AugmentMode::Generate;
  throw Error(ErrorKind::ConfigError, "unknown augmentation mode: " + s);
}
inline BasisMode parse_basis_mode(const std::string& s) {
  if (s == "canonical") return BasisMode::Canonical;
  if (s == "random_orthogonal") return BasisMode::RandomOrthogonal;
  throw Error(ErrorKind::ConfigError, "unknown basis mode: " + s);
}

struct DistributionParams {
  double beta_e = 1.5;
  double beta_d = 1.0;
  double alpha = 0.8;
  double sigma_p = 1.0;
  std::size_t dim = 500;
  std::size_t patches = 2;
  std::size_t n = 200;
  NoiseMode noise_mode = NoiseMode::Idealized;

  bool operator==(const DistributionParams&) const = default;

  void validate() const {
    if (dim < 3) throw Error(ErrorKind::InvalidDimension, "dim must be at least 3");
    if (patches != 2) throw Error(ErrorKind::ConfigError, "only two patches per point are supported");
    if (n < 1) throw Error(ErrorKind::InvalidArgument, "dataset size must be positive");
    if (!(beta_e > 0.0) || !std::isfinite(beta_e)) throw Error(ErrorKind::InvalidArgument, "beta_e must be positive");
    if (!(beta_d >= 0.0) || !(beta_d < beta_e))
      throw Error(ErrorKind::InvalidArgument, "beta_d must satisfy 0 <= beta_d < beta_e");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::InvalidAlpha, "alpha must lie in [0, 1]");
    if (!(sigma_p > 0.0) || !std::isfinite(sigma_p)) throw Error(ErrorKind::InvalidArgument, "sigma_p must be positive");
  }

  // Number of slow points under the exact-alpha convention; throws when
  // (1 - alpha) n is not an integer.
  std::size_t exact_slow_count() const {
    double slow = (1.0 - alpha) * static_cast<double>(n);
    double r = std::round(slow);
    if (std::abs(slow - r) > 1e-9 * std::max(1.0, static_cast<double>(n)))
      throw Error(ErrorKind::InvalidAlpha, "(1 - alpha) * n is not an integer");
    return static_cast<std::size_t>(r);
  }
};

struct FeatureBasis {
  Eigen::VectorXd fast;  // v_e
  Eigen::VectorXd slow;  // v_d

  std::size_t dim() const { return static_cast<std::size_t>(fast.size()); }
  bool operator==(const FeatureBasis& o) const { return fast == o.fast && slow == o.slow; }
};

struct DataPoint {
  int label = 1;
  FeatureKind feature = FeatureKind::Fast;
  std::size_t noise_id = 0;
  Provenance provenance = Provenance::Original;
  std::size_t source = 0;  // index in the base dataset this point descends from

  bool operator==(const DataPoint&) const = default;
};

struct GenerationNoiseParams {
  double sigma_gamma = 1.0;
  // true: generated noise follows the base dataset's noise mode (always at
  // least orthogonal to both features); false: raw Gaussian draws.
  bool orthogonalize = true;

  bool operator==(const GenerationNoiseParams&) const = default;

  void validate() const {
    if (!(sigma_gamma > 0.0) || !std::isfinite(sigma_gamma))
      throw Error(ErrorKind::InvalidArgument, "sigma_gamma must be finite and positive");
  }
};

struct DatasetKind {
  enum class Tag { Base, Upsampled, Generated };
  Tag tag = Tag::Base;
  std::size_t k = 1;

  bool operator==(const DatasetKind&) const = default;
  bool is_base() const { return tag == Tag::Base; }
};

inline std::string to_string(DatasetKind::Tag t) {
  switch (t) {
    case DatasetKind::Tag::Base: return "base";
    case DatasetKind::Tag::Upsampled: return "upsampled";
    case DatasetKind::Tag::Generated: return "generated";
  }
  return "base";
}

inline DatasetKind::Tag parse_dataset_tag(const std::string& s) {
  if (s == "base") return DatasetKind::Tag::Base;
  if (s == "upsampled") return DatasetKind::Tag::Upsampled;
  if (s == "generated") return DatasetKind::Tag::Generated;
  throw Error(ErrorKind::ConfigError, "unknown dataset kind: " + s);
}

// Points reference noise vectors by id; replicas share a column of `noise`.
struct Dataset {
  DistributionParams params;
  FeatureBasis basis;
  std::uint64_t seed = 0;
  DatasetKind kind;
  std::vector<DataPoint> points;
  Eigen::MatrixXd noise;  // dim x (number of distinct noises)
  std::size_t base_size = 0;
  std::vector<std::size_t> augmented_sources;  // base indices that received copies
  std::optional<GenerationNoiseParams> generation;

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return params.dim; }
  std::size_t noise_count() const { return static_cast<std::size_t>(noise.cols()); }

  double feature_strength(FeatureKind k) const { return k == FeatureKind::Fast ? params.beta_e : params.beta_d; }
  const Eigen::VectorXd& feature_direction(FeatureKind k) const { return k == FeatureKind::Fast ? basis.fast : basis.slow; }

  Eigen::VectorXd feature_patch(std::size_t i) const {
    const auto& p = points.at(i);
    return (feature_strength(p.feature) * p.label) * feature_direction(p.feature);
  }

  auto noise_of(std::size_t i) const { return noise.col(static_cast<Eigen::Index>(points.at(i).noise_id)); }

  // Patch p of point i: p = 0 is the feature patch, p = 1 the noise patch.
  Eigen::VectorXd patch(std::size_t i, std::size_t p) const {
    if (p == 0) return feature_patch(i);
    if (p == 1) return noise_of(i);
    throw Error(ErrorKind::IndexError, "patch index out of range");
  }

  // Occurrences of each noise id across the point list.
  std::vector<std::size_t> noise_multiplicity() const {
    std::vector<std::size_t> m(noise_count(), 0);
    for (const auto& p : points) ++m[p.noise_id];
    return m;
  }

  std::size_t count(FeatureKind k) const {
    return static_cast<std::size_t>(std::count_if(points.begin(), points.end(),
                                                  [k](const DataPoint& p) { return p.feature == k; }));
  }
};

inline bool operator==(const Dataset& a, const Dataset& b) {
  return a.params == b.params && a.basis == b.basis && a.seed == b.seed && a.kind == b.kind &&
         a.points == b.points && a.noise.rows() == b.noise.rows() && a.noise.cols() == b.noise.cols() &&
         a.noise == b.noise && a.base_size == b.base_size && a.augmented_sources == b.augmented_sources &&
         a.generation == b.generation;
}

inline FeatureBasis make_feature_basis(std::size_t dim, BasisMode mode, std::uint64_t seed) {
  if (dim < 3) throw Error(ErrorKind::InvalidDimension, "dim must be at least 3");
  FeatureBasis b;
  const auto d = static_cast<Eigen::Index>(dim);
  if (mode == BasisMode::Canonical) {
    b.fast = Eigen::VectorXd::Unit(d, 0);
    b.slow = Eigen::VectorXd::Unit(d, 1);
    return b;
  }
  Rng rng = Rng::derive(seed, "feature-basis");
  Eigen::VectorXd a(d), c(d);
  for (Eigen::Index i = 0; i < d; ++i) a(i) = rng.normal();
  for (Eigen::Index i = 0; i < d; ++i) c(i) = rng.normal();
  b.fast = a / a.norm();
  for (int pass = 0; pass < 2; ++pass) c -= b.fast.dot(c) * b.fast;
  b.slow = c / c.norm();
  return b;
}

namespace detail {

// Orthonormal frame used to project new noise draws.
class NoiseProjector {
 public:
  NoiseProjector(const FeatureBasis& basis, NoiseMode mode, std::size_t expected)
      : mode_(mode), dim_(static_cast<Eigen::Index>(basis.dim())) {
    if (mode_ == NoiseMode::Raw) return;
    std::size_t cap = mode_ == NoiseMode::Idealized ? expected + 2 : 2;
    frame_.resize(dim_, static_cast<Eigen::Index>(std::min<std::size_t>(cap, basis.dim())));
    push_unit(basis.fast);
    push_unit(basis.slow);
  }

  void add_existing(const Eigen::VectorXd& v) {
    if (mode_ != NoiseMode::Idealized) return;
    double n = v.norm();
    if (n > 0.0) push_unit(v / n);
  }

  Eigen::VectorXd project(Eigen::VectorXd g) {
    if (mode_ == NoiseMode::Raw) return g;
    if (mode_ == NoiseMode::Idealized && used_ >= dim_)
      throw Error(ErrorKind::NoiseCapacity, "idealized noise needs at most dim - 2 distinct noises");
    const double drawn = g.norm();
    auto q = frame_.leftCols(used_);
    for (int pass = 0; pass < 2; ++pass) g -= q * (q.transpose() * g);
    if (mode_ == NoiseMode::Idealized) {
      double r = g.norm();
      g *= drawn / r;
      add_existing(g);
    }
    return g;
  }

 private:
  void push_unit(const Eigen::VectorXd& u) {
    if (used_ >= frame_.cols()) {
      Eigen::Index grow = std::min<Eigen::Index>(dim_, std::max<Eigen::Index>(2 * frame_.cols(), 4));
      if (grow <= used_) throw Error(ErrorKind::NoiseCapacity, "idealized noise needs at most dim - 2 distinct noises");
      frame_.conservativeResize(Eigen::NoChange, grow);
    }
    frame_.col(used_++) = u;
  }

  NoiseMode mode_;
  Eigen::Index dim_;
  Eigen::MatrixXd frame_;
  Eigen::Index used_ = 0;
};

inline Eigen::VectorXd gaussian_vector(Rng& rng, std::size_t dim, double scale) {
  Eigen::VectorXd g(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = scale * rng.normal();
  return g;
}

}  // namespace detail

// exact_alpha = true puts exactly (1 - alpha) n slow points in a block after
// the fast points; false draws each point's feature independently.
inline Dataset sample_dataset(const DistributionParams& params, const FeatureBasis& basis, std::uint64_t seed,
                              bool exact_alpha = true) {
  params.validate();
  if (basis.dim() != params.dim) throw Error(ErrorKind::ShapeError, "basis dimension does not match params.dim");
  Dataset ds;
  ds.params = params;
  ds.basis = basis;
  ds.seed = seed;
  ds.base_size = params.n;
  ds.points.resize(params.n);

  Rng labels = Rng::derive(seed, "labels");
  if (exact_alpha) {
    std::size_t n_slow = params.exact_slow_count();
    std::size_t n_fast = params.n - n_slow;
    for (std::size_t i = 0; i < params.n; ++i) ds.points[i].feature = i < n_fast ? FeatureKind::Fast : FeatureKind::Slow;
  } else {
    Rng kinds = Rng::derive(seed, "kinds");
    for (auto& p : ds.points) p.feature = kinds.bernoulli(params.alpha) ? FeatureKind::Fast : FeatureKind::Slow;
  }
  for (std::size_t i = 0; i < params.n; ++i) {
    auto& p = ds.points[i];
    p.label = labels.rademacher();
    p.noise_id = i;
    p.provenance = Provenance::Original;
    p.source = i;
  }

  if (params.noise_mode == NoiseMode::Idealized && params.n + 2 > params.dim)
    throw Error(ErrorKind::NoiseCapacity, "idealized noise needs n <= dim - 2");
  const double scale = params.sigma_p / std::sqrt(static_cast<double>(params.dim));
  detail::NoiseProjector proj(basis, params.noise_mode, params.n);
  ds.noise.resize(static_cast<Eigen::Index>(params.dim), static_cast<Eigen::Index>(params.n));
  for (std::size_t i = 0; i < params.n; ++i) {
    Rng rng = Rng::derive(seed, "noise", i);
    ds.noise.col(static_cast<Eigen::Index>(i)) = proj.project(detail::gaussian_vector(rng, params.dim, scale));
  }
  return ds;
}

// Gives each source point k - 1 extra copies. Upsample copies share the
// source's noise id; Generate copies get fresh noise of scale sigma_gamma.
// Copies are appended after the originals, grouped by source.
inline Dataset augment(const Dataset& base, std::vector<std::size_t> sources, std::size_t k, AugmentMode mode,
                       const GenerationNoiseParams& gen, std::uint64_t seed) {
  if (k == 0) throw Error(ErrorKind::InvalidFactor, "augmentation factor must be at least 1");
  if (!base.kind.is_base()) throw Error(ErrorKind::AlreadyAugmented, "dataset is already augmented");
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
  for (auto s : sources)
    if (s >= base.size()) throw Error(ErrorKind::IndexError, "selection index out of range");
  if (mode == AugmentMode::Generate) gen.validate();

  Dataset out = base;
  out.kind = {mode == AugmentMode::Upsample ? DatasetKind::Tag::Upsampled : DatasetKind::Tag::Generated, k};
  out.augmented_sources = sources;
  if (mode == AugmentMode::Generate) out.generation = gen;
  const std::size_t extra = sources.size() * (k - 1);
  out.points.reserve(base.size() + extra);

  if (mode == AugmentMode::Upsample) {
    for (auto s : sources)
      for (std::size_t r = 1; r < k; ++r) {
        DataPoint p = base.points[s];
        p.provenance = Provenance::UpsampledCopy;
        p.source = s;
        out.points.push_back(p);
      }
    return out;
  }

  NoiseMode gmode = !gen.orthogonalize ? NoiseMode::Raw
                    : base.params.noise_mode == NoiseMode::Idealized ? NoiseMode::Idealized
                                                                      : NoiseMode::FeatureOrthogonal;
  if (gmode == NoiseMode::Idealized && base.noise_count() + extra + 2 > base.dim())
    throw Error(ErrorKind::NoiseCapacity, "idealized noise needs at most dim - 2 distinct noises");
  detail::NoiseProjector proj(base.basis, gmode, base.noise_count() + extra);
  for (Eigen::Index q = 0; q < base.noise.cols(); ++q) proj.add_existing(base.noise.col(q));

  const double scale = gen.sigma_gamma / std::sqrt(static_cast<double>(base.dim()));
  const auto first = static_cast<Eigen::Index>(base.noise_count());
  out.noise.conservativeResize(Eigen::NoChange, first + static_cast<Eigen::Index>(extra));
  std::size_t g = 0;
  for (auto s : sources)
    for (std::size_t r = 1; r < k; ++r, ++g) {
      Rng rng = Rng::derive(seed, "generate", g);
      out.noise.col(first + static_cast<Eigen::Index>(g)) = proj.project(detail::gaussian_vector(rng, base.dim(), scale));
      DataPoint p = base.points[s];
      p.provenance = Provenance::Generated;
      p.source = s;
      p.noise_id = static_cast<std::size_t>(first) + g;
      out.points.push_back(p);
    }
  return out;
}

inline std::vector<std::size_t> slow_indices(const Dataset& ds) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.points[i].feature == FeatureKind::Slow) idx.push_back(i);
  return idx;
}

inline Dataset upsample(const Dataset& base, std::size_t k) {
  return augment(base, slow_indices(base), k, AugmentMode::Upsample, {}, 0);
}

inline Dataset generate(const Dataset& base, std::size_t k, const GenerationNoiseParams& gen, std::uint64_t seed) {
  if (!base.kind.is_base()) throw Error(ErrorKind::AlreadyAugmented, "dataset is already augmented");
  return augment(base, slow_indices(base), k, AugmentMode::Generate, gen, seed);
}

// ---- persistence ----------------------------------------------------------

inline nlohmann::json params_to_json(const DistributionParams& p) {
  return {{"beta_e", p.beta_e}, {"beta_d", p.beta_d}, {"alpha", p.alpha},  {"sigma_p", p.sigma_p},
          {"dim", p.dim},       {"patches", p.patches}, {"n", p.n}, {"noise_mode", to_string(p.noise_mode)}};
}

inline DistributionParams params_from_json(const nlohmann::json& j, DistributionParams p = {}) {
  p.beta_e = j.value("beta_e", p.beta_e);
  p.beta_d = j.value("beta_d", p.beta_d);
  p.alpha = j.value("alpha", p.alpha);
  p.sigma_p = j.value("sigma_p", p.sigma_p);
  p.dim = j.value("dim", p.dim);
  p.patches = j.value("patches", p.patches);
  p.n = j.value("n", p.n);
  if (j.contains("noise_mode")) p.noise_mode = parse_noise_mode(j.at("noise_mode").get<std::string>());
  return p;
}

inline std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline Eigen::VectorXd from_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json dataset_manifest(const Dataset& ds, const std::string& blob_name) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : ds.points)
    pts.push_back({{"label", p.label}, {"feature", to_string(p.feature)}, {"noise_id", p.noise_id},
                   {"provenance", to_string(p.provenance)}, {"source", p.source}});
  nlohmann::json j = {
      {"format", "tada-lab-dataset"},
      {"version", 1},
      {"params", params_to_json(ds.params)},
      {"basis", {{"fast", to_vector(ds.basis.fast)}, {"slow", to_vector(ds.basis.slow)}}},
      {"seed", ds.seed},
      {"kind", to_string(ds.kind.tag)},
      {"k", ds.kind.k},
      {"base_size", ds.base_size},
      {"augmented_sources", ds.augmented_sources},
      {"points", pts},
      {"blob", {{"file", blob_name}, {"dtype", "float64-le"}, {"layout", "row-major [point][patch][dim]"},
                {"points", ds.size()}, {"patches", ds.params.patches}, {"dim", ds.dim()}}},
  };
  if (ds.generation)
    j["generation"] = {{"sigma_gamma", ds.generation->sigma_gamma}, {"orthogonalize", ds.generation->orthogonalize}};
  return j;
}

inline std::vector<double> dataset_blob(const Dataset& ds) {
  std::vector<double> out;
  out.reserve(ds.size() * ds.params.patches * ds.dim());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Eigen::VectorXd f = ds.feature_patch(i);
    out.insert(out.end(), f.data(), f.data() + f.size());
    auto n = ds.noise_of(i);
    for (Eigen::Index r = 0; r < n.size(); ++r) out.push_back(n(r));
  }
  return out;
}

// Writes <path> (JSON manifest) and <path>.bin next to it; returns the blob path.
inline std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::filesystem::path blob = path;
  blob.replace_extension(".bin");
  io::write_f64_blob(blob, dataset_blob(ds));
  io::write_text(path, dataset_manifest(ds, blob.filename().string()).dump(2) + "\n");
  return blob;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::IoError, std::string("malformed dataset manifest: ") + e.what());
  }
  Dataset ds;
  ds.params = params_from_json(j.at("params"));
  ds.basis.fast = from_vector(j.at("basis").at("fast").get<std::vector<double>>());
  ds.basis.slow = from_vector(j.at("basis").at("slow").get<std::vector<double>>());
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.kind = {parse_dataset_tag(j.at("kind").get<std::string>()), j.at("k").get<std::size_t>()};
  ds.base_size = j.at("base_size").get<std::size_t>();
  ds.augmented_sources = j.at("augmented_sources").get<std::vector<std::size_t>>();
  if (j.contains("generation"))
    ds.generation = GenerationNoiseParams{j["generation"].at("sigma_gamma").get<double>(),
                                          j["generation"].at("orthogonalize").get<bool>()};
  std::size_t max_id = 0;
  for (const auto& pj : j.at("points")) {
    DataPoint p;
    p.label = pj.at("label").get<int>();
    p.feature = parse_feature_kind(pj.at("feature").get<std::string>());
    p.noise_id = pj.at("noise_id").get<std::size_t>();
    p.provenance = parse_provenance(pj.at("provenance").get<std::string>());
    p.source = pj.at("source").get<std::size_t>();
    max_id = std::max(max_id, p.noise_id);
    ds.points.push_back(p);
  }
  std::filesystem::path blob = path.parent_path() / j.at("blob").at("file").get<std::string>();
  auto values = io::read_f64_blob(blob);
  const std::size_t d = ds.params.dim, stride = ds.params.patches * d;
  if (values.size() != ds.size() * stride) throw Error(ErrorKind::IoError, "blob size does not match manifest");
  ds.noise = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), ds.points.empty() ? 0 : static_cast<Eigen::Index>(max_id + 1));
  std::vector<bool> seen(ds.noise_count(), false);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double* noise = values.data() + i * stride + d;
    auto col = ds.noise.col(static_cast<Eigen::Index>(ds.points[i].noise_id));
    if (!seen[ds.points[i].noise_id]) {
      for (std::size_t r = 0; r < d; ++r) col(static_cast<Eigen::Index>(r)) = noise[r];
      seen[ds.points[i].noise_id] = true;
    } else {
      for (std::size_t r = 0; r < d; ++r)
        if (col(static_cast<Eigen::Index>(r)) != noise[r])
          throw Error(ErrorKind::IoError, "replicas sharing a noise id differ in the blob");
    }
  }
  return ds;
}

}  // namespace tada
