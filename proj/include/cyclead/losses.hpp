#pragma once

// Adversarial, cycle-consistency and identity terms of the Cycle-GAN
// objective, plus their weighted composition.
//
// Reductions are means over pixels/patch units and the batch, so the loss
// weights keep the same meaning at every resolution.

#include <string>

#include "cyclead/autograd.hpp"

namespace cyclead {

enum class AdversarialMode { log, least_squares };
enum class Side { generator, discriminator };

std::string to_string(AdversarialMode m);
AdversarialMode adversarial_mode_from_string(const std::string& s);

inline constexpr double kLogEpsilon = 1e-7;

// least_squares: discriminator side 1/2[mean((D(real)-1)^2) + mean(D(fake)^2)],
//                generator side mean((D(fake)-1)^2). Scores are raw.
// log: scores must already be probabilities in (0,1). Discriminator side
//      returns the quantity the discriminator maximizes,
//      mean(log D(real)) + mean(log(1 - D(fake))); generator side is the
//      non-saturating -mean(log D(fake)). Logs are epsilon-clamped.
// `real` is ignored (may be undefined) on the generator side.
template <typename T>
Var<T> adversarial_loss(const Var<T>& real, const Var<T>& fake, AdversarialMode mode, Side side);

// The value a discriminator minimizes: the least-squares loss, or the negated
// log-form objective.
template <typename T>
Var<T> discriminator_loss(const Var<T>& real, const Var<T>& fake, AdversarialMode mode);

// mean|F(G(x)) - x| + mean|G(F(y)) - y|
template <typename T>
Var<T> cycle_loss(const Var<T>& x, const Var<T>& f_of_g_x, const Var<T>& y, const Var<T>& g_of_f_y);

// mean|F(x) - x| + mean|G(y) - y|
template <typename T>
Var<T> identity_loss(const Var<T>& x, const Var<T>& f_of_x, const Var<T>& y, const Var<T>& g_of_y);

struct LossWeights {
  double lambda_cyc = 10.0;
  double lambda_ide = 5.0;

  void validate() const;
};

// All terms are the values being minimized by their respective players.
struct LossBreakdown {
  double adv_G = 0;
  double adv_F = 0;
  double adv_DX = 0;
  double adv_DY = 0;
  double cyc = 0;
  double ide = 0;
  double total_generator = 0;
  double total_discriminator = 0;
};

struct LossComponents {
  double adv_G = 0;
  double adv_F = 0;
  double adv_DX = 0;
  double adv_DY = 0;
  double cyc = 0;
  double ide = 0;
};

// total_generator = adv_G + adv_F + lambda_cyc * cyc + lambda_ide * ide
// total_discriminator = adv_DX + adv_DY
LossBreakdown total_objective(const LossComponents& parts, const LossWeights& weights);

// Differentiable counterpart of total_generator.
template <typename T>
Var<T> generator_objective(const Var<T>& adv_G, const Var<T>& adv_F, const Var<T>& cyc,
                           const Var<T>& ide, const LossWeights& weights);

}  // namespace cyclead
