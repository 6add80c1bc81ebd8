#include "magfield/gan/losses.hpp"

#include <cmath>

#include "magfield/error.hpp"

namespace magfield::gan {

using namespace magfield::nn;

namespace {

template <class T>
Var<T> per_element_sum(const Var<T>& x) {
  return reduce_to(x, Shape{x.shape().n, 1, 1, 1});
}

template <class T>
Var<T> interpolate(const Var<T>& real, const Var<T>& fake, Rng& rng) {
  const Shape s = real.shape();
  Tensor<T> x(s);
  const std::size_t per = s.size() / s.n;
  for (int n = 0; n < s.n; ++n) {
    const T u = static_cast<T>(uniform01(rng));
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      x.data[i] = u * real.value().data[i] + (T(1) - u) * fake.value().data[i];
    }
  }
  return Var<T>(std::move(x), true);
}

}  // namespace

template <class T>
Var<T> gradient_penalty(const CriticFn<T>& critic, const Var<T>& real, const Var<T>& fake, Rng& rng,
                        GpMode mode, double pair_radius) {
  if (!(real.shape() == fake.shape())) throw DimensionError("gradient_penalty: shape mismatch");
  const Shape s = real.shape();
  const Var<T> x1 = interpolate(real, fake, rng);

  if (mode == GpMode::double_backward) {
    const Var<T> g = grad(sum(critic(x1)), {x1}, true)[0];
    const Var<T> norm = pow(add_scalar(per_element_sum(mul(g, g)), 1e-12), 0.5);
    return mean(pow(add_scalar(norm, -1.0), 2.0));
  }

  Tensor<T> dir;
  {
    GradMode record(true);
    dir = grad(sum(critic(x1)), {x1}, false)[0].value();
  }
  double rms = 0.0;
  for (T v : real.value().data) rms += static_cast<double>(v) * v;
  rms = std::sqrt(rms / static_cast<double>(s.size()));
  const double step = pair_radius * (rms > 0.0 ? rms : 1.0);

  const std::size_t per = s.size() / s.n;
  Tensor<T> x2(s);
  std::vector<double> dist(s.n);
  for (int n = 0; n < s.n; ++n) {
    double norm = 0.0;
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) norm += static_cast<double>(dir.data[i]) * dir.data[i];
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) {
      // Flat critic: any direction gives the same difference quotient.
      for (std::size_t i = n * per; i < (n + 1) * per; ++i) dir.data[i] = static_cast<T>(uniform(rng, -1.0, 1.0));
      norm = 0.0;
      for (std::size_t i = n * per; i < (n + 1) * per; ++i) norm += static_cast<double>(dir.data[i]) * dir.data[i];
      norm = std::sqrt(norm);
    }
    double d2 = 0.0;
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      x2.data[i] = static_cast<T>(x1.value().data[i] + step * dir.data[i] / norm);
      const double d = static_cast<double>(x2.data[i]) - x1.value().data[i];
      d2 += d * d;
    }
    dist[n] = std::sqrt(d2);
    if (!(dist[n] > 0.0)) throw NumericalError("gradient_penalty: interpolate pair collapsed");
  }
  Tensor<T> inv_dist(Shape{s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n) inv_dist.data[n] = static_cast<T>(1.0 / dist[n]);

  const Var<T> x1c = x1.detach();
  const Var<T> quotient =
      mul(abs(sub(critic(constant(std::move(x2))), critic(x1c))), constant(std::move(inv_dist)));
  return mean(pow(add_scalar(quotient, -1.0), 2.0));
}

template <class T>
Var<T> critic_loss(const Var<T>& scores_real, const Var<T>& scores_fake, const Var<T>& gp,
                   double lambda_gp) {
  Var<T> loss = sub(mean(scores_fake), mean(scores_real));
  if (gp) loss = add(loss, scale(gp, lambda_gp));
  return loss;
}

template <class T>
Var<T> compose(const Var<T>& input, const Var<T>& generated, const Mask& mask) {
  const Shape s = input.shape();
  Tensor<T> miss = mask_tensor<T>(mask);
  Tensor<T> keep = miss;
  for (T& v : keep.data) v = T(1) - v;
  return add(mul(input, broadcast_to(constant(std::move(keep)), s)),
             mul(generated, broadcast_to(constant(std::move(miss)), s)));
}

template <class T>
Var<T> divergence_px(const Var<T>& plane, const Var<T>& zterms, double dx_over_dy) {
  const Var<T> bx = slice(plane, 1, 0, 1);
  const Var<T> by = slice(plane, 1, 1, 1);
  return add(add(diff(bx, true), scale(diff(by, false), dx_over_dy)), slice(zterms, 1, 2, 1));
}

template <class T>
Var<T> curl_px(const Var<T>& plane, const Var<T>& zterms, double dx_over_dy) {
  const Var<T> bx = slice(plane, 1, 0, 1);
  const Var<T> by = slice(plane, 1, 1, 1);
  const Var<T> bz = slice(plane, 1, 2, 1);
  const Var<T> cx = sub(scale(diff(bz, false), dx_over_dy), slice(zterms, 1, 1, 1));
  const Var<T> cy = sub(slice(zterms, 1, 0, 1), diff(bz, true));
  const Var<T> cz = sub(diff(by, true), scale(diff(bx, false), dx_over_dy));
  return concat(std::vector<Var<T>>{cx, cy, cz}, 1);
}

template <class T>
GeneratorLoss<T> generator_loss(const Var<T>& fine, const Var<T>& fake_scores,
                                const LossBatch<T>& b, const Lambdas& l, bool physics) {
  const Shape s = fine.shape();
  if (!(b.truth.shape() == s)) throw DimensionError("generator_loss: prediction/truth shape mismatch");
  const double per_batch = b.scale / s.n;
  const double per_pixel = b.scale / (static_cast<double>(s.n) * s.h * s.w);

  Tensor<T> miss = mask_tensor<T>(b.mask);
  Tensor<T> keep = miss;
  for (T& v : keep.data) v = T(1) - v;
  const Var<T> miss_v = broadcast_to(constant(std::move(miss)), s);
  const Var<T> keep_v = broadcast_to(constant(std::move(keep)), s);

  const Var<T> adv = scale(mean(fake_scores), -1.0);
  const Var<T> match = scale(sum(abs(mul(sub(fine, b.input), keep_v))), per_batch);
  const Var<T> mimic = scale(sum(abs(mul(sub(fine, b.truth), miss_v))), per_batch);

  GeneratorLoss<T> out;
  out.total = add(add(scale(adv, l.wgan), scale(match, l.match)), scale(mimic, l.mimic));
  out.terms.adversarial = adv.value().data[0];
  out.terms.match = match.value().data[0];
  out.terms.mimic = mimic.value().data[0];
  if (physics) {
    const Var<T> composed = add(mul(b.input, keep_v), mul(fine, miss_v));
    const Var<T> div = scale(sum(abs(divergence_px(composed, b.zterms, b.dx_over_dy))), per_pixel);
    const Var<T> curl = scale(sum(abs(curl_px(composed, b.zterms, b.dx_over_dy))), per_pixel);
    out.total = add(out.total, add(scale(div, l.div), scale(curl, l.curl)));
    out.terms.div = div.value().data[0];
    out.terms.curl = curl.value().data[0];
  }
  out.terms.total = out.total.value().data[0];
  return out;
}

#define MAGFIELD_INSTANTIATE(T)                                                                 \
  template Var<T> gradient_penalty<T>(const CriticFn<T>&, const Var<T>&, const Var<T>&, Rng&,   \
                                      GpMode, double);                                          \
  template Var<T> critic_loss<T>(const Var<T>&, const Var<T>&, const Var<T>&, double);          \
  template Var<T> compose<T>(const Var<T>&, const Var<T>&, const Mask&);                        \
  template Var<T> divergence_px<T>(const Var<T>&, const Var<T>&, double);                       \
  template Var<T> curl_px<T>(const Var<T>&, const Var<T>&, double);                             \
  template GeneratorLoss<T> generator_loss<T>(const Var<T>&, const Var<T>&, const LossBatch<T>&, \
                                              const Lambdas&, bool);
MAGFIELD_INSTANTIATE(float)
MAGFIELD_INSTANTIATE(double)
MAGFIELD_INSTANTIATE(long double)
#undef MAGFIELD_INSTANTIATE

}  // namespace magfield::gan
