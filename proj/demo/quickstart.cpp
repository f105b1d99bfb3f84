// Samples a small planted-feature dataset, builds its upsampled and generated
// versions, trains each with GD from the same init and prints the test error
// and mean plus-set NoiseAlign.

#include <cstdio>

#include "tada/analysis.hpp"
#include "tada/optim.hpp"

using namespace tada;

int main() {
  DistributionParams p;
  p.dim = 200;
  p.n = 100;
  p.alpha = 0.8;
  p.beta_e = 2.0;
  p.beta_d = 0.5;
  p.sigma_p = 1.0;
  p.noise_mode = NoiseMode::FeatureOrthogonal;
  FeatureBasis basis = make_feature_basis(p.dim, BasisMode::RandomOrthogonal, 1);
  Dataset base = sample_dataset(p, basis, 2);

  DistributionParams tp = p;
  tp.n = 5000;
  Dataset test = sample_dataset(tp, basis, 3, false);

  CnnModel init = init_model(p.dim, 8, {0.05, 4});
  OptimizerConfig cfg;
  cfg.eta = 0.5;
  cfg.steps = 60;

  const std::size_t k = 3;
  struct Arm {
    const char* name;
    Dataset ds;
  } arms[] = {{"base", base}, {"upsample", upsample(base, k)}, {"generate", generate(base, k, {1.0, true}, 5)}};

  std::printf("%-9s %5s %10s %12s %14s\n", "data", "size", "loss", "test error", "plus NoiseAlign");
  for (const auto& arm : arms) {
    auto [m, rec] = train(init, arm.ds, cfg, basis);
    double na = 0.0;
    std::size_t n = 0;
    for (const auto& part : partition_all(m, arm.ds)) {
      if (part.plus.empty()) continue;
      na += noise_align(m, arm.ds, part, Side::Plus);
      ++n;
    }
    std::printf("%-9s %5zu %10.4g %12.4f %14.4g\n", arm.name, arm.ds.size(), rec.steps.back().loss,
                error_rate(m, test), n ? na / static_cast<double>(n) : 0.0);
  }
}
