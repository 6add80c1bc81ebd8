#pragma once

#include <functional>

#include "magfield/gan/model.hpp"

namespace magfield::gan {

enum class GpMode { double_backward, pair_difference };

/// Maps a (N, 3, H, W) plane batch to one score per element, (N, 1, 1, 1).
template <class T>
using CriticFn = std::function<Var<T>(const Var<T>&)>;

/// Mean over the batch of (||grad D(x_hat)||_2 - 1)^2 with
/// x_hat = u real + (1 - u) fake, u ~ U(0, 1) per element. pair_difference
/// replaces the gradient norm by |D(x2) - D(x1)| / ||x2 - x1|| for x2 a step
/// of `pair_radius` times the data RMS along the detached gradient direction.
template <class T>
Var<T> gradient_penalty(const CriticFn<T>& critic, const Var<T>& real, const Var<T>& fake, Rng& rng,
                        GpMode mode = GpMode::double_backward, double pair_radius = 1e-3);

/// E[D(fake)] - E[D(real)] + lambda_gp * gp (minimized by the critic).
template <class T>
Var<T> critic_loss(const Var<T>& scores_real, const Var<T>& scores_fake, const Var<T>& gp,
                   double lambda_gp);

struct Lambdas {
  double wgan = 0.001;
  double gp = 10.0;
  double match = 7.2;
  double mimic = 3.6;
  double div = 500.0;
  double curl = 30000.0;

  static Lambdas inpaint() { return {}; }
  static Lambdas outpaint() { return {0.001, 10.0, 10.0, 2.4, 120.0, 24000.0}; }
};

/// Everything the generator loss needs besides the network output. Planes
/// are in normalized units; `scale` converts them to tesla.
template <class T>
struct LossBatch {
  Var<T> truth;   ///< (N, 3, H, W)
  Var<T> input;   ///< truth on given pixels, 0 elsewhere
  /// d/dz of (Bx, By, Bz) times dx, from the flanking truth layers.
  Var<T> zterms;
  Mask mask;
  double dx_over_dy = 1.0;
  double scale = 1.0;
};

/// Raw terms in tesla: match and mimic are L1 sums per sample, div and curl
/// are per-pixel means in T/px, all averaged over the batch. adversarial is
/// -E[D(composed)].
struct LossTerms {
  double adversarial = 0.0;
  double match = 0.0;
  double mimic = 0.0;
  double div = 0.0;
  double curl = 0.0;
  double total = 0.0;
};

template <class T>
struct GeneratorLoss {
  Var<T> total;
  LossTerms terms;
};

/// input on given pixels, generated values on missing ones.
template <class T>
Var<T> compose(const Var<T>& input, const Var<T>& generated, const Mask& mask);

/// Per-pixel divergence times dx, (N, 1, H, W).
template <class T>
Var<T> divergence_px(const Var<T>& plane, const Var<T>& zterms, double dx_over_dy);
/// Per-pixel curl times dx, (N, 3, H, W).
template <class T>
Var<T> curl_px(const Var<T>& plane, const Var<T>& zterms, double dx_over_dy);

/// Weighted sum of the five generator terms. `fake_scores` are the critic
/// scores of the composed output. With physics off, div and curl are not
/// evaluated and report 0.
template <class T>
GeneratorLoss<T> generator_loss(const Var<T>& fine, const Var<T>& fake_scores,
                                const LossBatch<T>& batch, const Lambdas& lambdas,
                                bool physics = true);

}  // namespace magfield::gan
