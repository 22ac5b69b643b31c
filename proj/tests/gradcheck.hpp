#pragma once

// Central finite-difference check of the generator objective on a miniature
// double-precision model pair.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cyclead/training.hpp"

namespace gradcheck {

using namespace cyclead;

struct Report {
  int checked = 0;
  int kinks = 0;  // samples skipped because [w-h, w+h] straddles a branch change
  int failures = 0;
  double worst_rel = 0;
  std::string worst;
};

inline GeneratorSpec mini_generator() {
  GeneratorSpec g;
  g.resolution = 8;
  g.base_width = 4;
  g.n_residual_blocks = 1;
  return g;
}

inline DiscriminatorSpec mini_discriminator() {
  DiscriminatorSpec d;
  d.widths = {4, 8};
  return d;
}

inline Tensor<double> random_images(int n, int c, int s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  Tensor<double> t(Shape{n, c, s, s});
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Perturbs randomly chosen scalar parameters of G and F until `n_samples` of
// them have been checked. The objective is piecewise smooth (ReLU, L1), so a
// draw whose two probes land on different branches has no valid central
// difference; it is counted in `kinks` and replaced by the next draw.
inline Report check_generator_objective(std::uint64_t seed, int n_samples, AdversarialMode mode,
                                        double h = 1e-5) {
  std::mt19937_64 rng(seed);
  auto models = ModelPair<double>::build(mini_generator(), mini_discriminator(), seed);
  models.D_X.parameters().set_requires_grad(false);
  models.D_Y.parameters().set_requires_grad(false);
  const auto X = Var<double>::constant(random_images(1, 3, 8, rng));
  const auto Y = Var<double>::constant(random_images(1, 3, 8, rng));
  const LossWeights weights;

  generator_pass(models, X, Y, mode, weights).total.backward();

  struct Slot {
    std::string name;
    Var<double> var;
  };
  std::vector<Slot> slots;
  for (auto& p : models.G.parameters().items()) slots.push_back({"G." + p.name, p.var});
  for (auto& p : models.F.parameters().items()) slots.push_back({"F." + p.name, p.var});
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < slots.size(); ++i)
    for (std::size_t j = 0; j < slots[i].var.value().size(); ++j) all.emplace_back(i, j);
  std::shuffle(all.begin(), all.end(), rng);

  auto objective = [&](std::vector<std::int8_t>& branches) {
    ops::BranchTrace trace;
    const double f = generator_pass(models, X, Y, mode, weights).total.item();
    branches = std::move(trace.codes);
    return f;
  };

  Report r;
  std::vector<std::int8_t> up_branches, down_branches;
  for (std::size_t k = 0; r.checked < n_samples && k < all.size(); ++k) {
    auto [i, j] = all[k];
    auto& var = slots[i].var;
    const double analytic = var.has_grad() ? var.grad()[j] : 0.0;
    double& w = var.mutable_value()[j];
    const double saved = w;
    w = saved + h;
    const double up = objective(up_branches);
    w = saved - h;
    const double down = objective(down_branches);
    w = saved;
    if (up_branches != down_branches) {
      ++r.kinks;
      continue;
    }
    const double numeric = (up - down) / (2 * h);
    ++r.checked;
    const double diff = std::abs(analytic - numeric);
    const double mag = std::max(std::abs(analytic), std::abs(numeric));
    bool ok;
    double rel = 0;
    if (std::abs(analytic) < 1e-6) {
      ok = diff <= 1e-6;
    } else {
      rel = diff / mag;
      ok = rel <= 1e-3;
    }
    if (rel > r.worst_rel) {
      r.worst_rel = rel;
      r.worst = slots[i].name + "[" + std::to_string(j) + "] analytic " + std::to_string(analytic) + " numeric " +
                std::to_string(numeric);
    }
    if (!ok) ++r.failures;
  }
  return r;
}

}  // namespace gradcheck
