#include "cyclead/losses.hpp"

#include <cmath>

#include "cyclead/error.hpp"
#include "cyclead/ops.hpp"

namespace cyclead {

std::string to_string(AdversarialMode m) {
  return m == AdversarialMode::log ? "log" : "least_squares";
}

AdversarialMode adversarial_mode_from_string(const std::string& s) {
  if (s == "log") return AdversarialMode::log;
  if (s == "least_squares" || s == "lsgan") return AdversarialMode::least_squares;
  throw ConfigError("unknown adversarial mode '" + s + "' (expected log|least_squares)");
}

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  return ops::mean(ops::abs(ops::sub(a, b)));
}

}  // namespace

template <typename T>
Var<T> adversarial_loss(const Var<T>& real, const Var<T>& fake, AdversarialMode mode, Side side) {
  if (side == Side::discriminator) require_same_shape(real, fake, "adversarial_loss");
  if (mode == AdversarialMode::least_squares) {
    if (side == Side::generator) return ops::mean(ops::square(ops::add_scalar(fake, -1.0)));
    auto real_term = ops::mean(ops::square(ops::add_scalar(real, -1.0)));
    auto fake_term = ops::mean(ops::square(fake));
    return ops::scale(ops::add(real_term, fake_term), 0.5);
  }
  if (side == Side::generator) return ops::scale(ops::mean(ops::clamped_log(fake, kLogEpsilon)), -1.0);
  auto real_term = ops::mean(ops::clamped_log(real, kLogEpsilon));
  auto fake_term = ops::mean(ops::clamped_log(ops::add_scalar(ops::scale(fake, -1.0), 1.0), kLogEpsilon));
  return ops::add(real_term, fake_term);
}

template <typename T>
Var<T> discriminator_loss(const Var<T>& real, const Var<T>& fake, AdversarialMode mode) {
  auto v = adversarial_loss(real, fake, mode, Side::discriminator);
  return mode == AdversarialMode::log ? ops::scale(v, -1.0) : v;
}

template <typename T>
Var<T> cycle_loss(const Var<T>& x, const Var<T>& f_of_g_x, const Var<T>& y, const Var<T>& g_of_f_y) {
  require_same_shape(x, f_of_g_x, "cycle_loss");
  require_same_shape(y, g_of_f_y, "cycle_loss");
  return ops::add(mean_abs_diff(f_of_g_x, x), mean_abs_diff(g_of_f_y, y));
}

template <typename T>
Var<T> identity_loss(const Var<T>& x, const Var<T>& f_of_x, const Var<T>& y, const Var<T>& g_of_y) {
  require_same_shape(x, f_of_x, "identity_loss");
  require_same_shape(y, g_of_y, "identity_loss");
  return ops::add(mean_abs_diff(f_of_x, x), mean_abs_diff(g_of_y, y));
}

void LossWeights::validate() const {
  if (!std::isfinite(lambda_cyc) || !std::isfinite(lambda_ide) || lambda_cyc < 0 || lambda_ide < 0) {
    throw ConfigError("loss weights must be finite and non-negative (lambda_cyc=" +
                      std::to_string(lambda_cyc) + ", lambda_ide=" + std::to_string(lambda_ide) + ")");
  }
}

LossBreakdown total_objective(const LossComponents& p, const LossWeights& w) {
  w.validate();
  LossBreakdown b;
  b.adv_G = p.adv_G;
  b.adv_F = p.adv_F;
  b.adv_DX = p.adv_DX;
  b.adv_DY = p.adv_DY;
  b.cyc = p.cyc;
  b.ide = p.ide;
  b.total_generator = p.adv_G + p.adv_F + w.lambda_cyc * p.cyc + w.lambda_ide * p.ide;
  b.total_discriminator = p.adv_DX + p.adv_DY;
  return b;
}

template <typename T>
Var<T> generator_objective(const Var<T>& adv_G, const Var<T>& adv_F, const Var<T>& cyc,
                           const Var<T>& ide, const LossWeights& weights) {
  weights.validate();
  return ops::add(ops::add(ops::add(adv_G, adv_F), ops::scale(cyc, weights.lambda_cyc)),
                  ops::scale(ide, weights.lambda_ide));
}

#define CYCLEAD_INSTANTIATE_LOSSES(T)                                                           \
  template Var<T> adversarial_loss(const Var<T>&, const Var<T>&, AdversarialMode, Side);        \
  template Var<T> discriminator_loss(const Var<T>&, const Var<T>&, AdversarialMode);            \
  template Var<T> cycle_loss(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);       \
  template Var<T> identity_loss(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);    \
  template Var<T> generator_objective(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                      const LossWeights&);

CYCLEAD_INSTANTIATE_LOSSES(float)
CYCLEAD_INSTANTIATE_LOSSES(double)

}  // namespace cyclead
