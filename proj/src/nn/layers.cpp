#include "magfield/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "magfield/error.hpp"

namespace magfield::nn {

void LayerSpec::validate() const {
  if (kernel < 1 || kernel % 2 == 0) throw SpecError("layer kernel must be odd");
  if (dilation < 1) throw SpecError("layer dilation must be >= 1");
  if (stride < 1) throw SpecError("layer stride must be >= 1");
  if ((kind == LayerKind::conv || kind == LayerKind::dilated_conv ||
       kind == LayerKind::downsample) &&
      (in < 1 || out < 1)) {
    throw SpecError("layer channel counts must be positive");
  }
}

Tensor<double> init_uniform(Shape shape, int fan_in, Rng& rng) {
  Tensor<double> t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  for (double& v : t.data) v = uniform(rng, -bound, bound);
  return t;
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const LayerSpec& spec) {
  const Shape ws = weight.shape();
  if (x.shape().c != ws.c) {
    throw DimensionError("conv2d: input has " + std::to_string(x.shape().c) +
                         " channels, layer expects " + std::to_string(ws.c));
  }
  const int pad = spec.dilation * (ws.h - 1) / 2;
  Var<T> y = conv(reflect_pad(x, pad), weight, spec.stride, spec.dilation);
  if (bias) y = add(y, broadcast_to(bias, y.shape()));
  return y;
}

template <class T>
Var<T> activate(const Var<T>& x, Activation a) {
  return a == Activation::elu ? elu(x) : x;
}

template <class T>
Var<T> resample(const Var<T>& x, int factor, ResampleMode mode) {
  if (factor != 2 && factor != 4) throw DimensionError("resample: factor must be 2 or 4");
  return mode == ResampleMode::down_stride ? subsample(x, factor) : upsample_bilinear(x, factor);
}

FeatureMask pool_mask(const std::vector<std::uint8_t>& missing, int height, int width,
                      int factor) {
  if (factor < 1 || height % factor != 0 || width % factor != 0) {
    throw DimensionError("pool_mask: size not divisible by the factor");
  }
  FeatureMask m{height / factor, width / factor, {}};
  m.missing.assign(static_cast<std::size_t>(m.height) * m.width, 0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (missing[static_cast<std::size_t>(r) * width + c]) {
        m.missing[static_cast<std::size_t>(r / factor) * m.width + c / factor] = 1;
      }
    }
  }
  return m;
}

std::vector<std::pair<int, int>> known_patch_centers(const FeatureMask& mask, int patch_size) {
  const int r = patch_size / 2;
  std::vector<std::pair<int, int>> centers;
  for (int i = r; i + r < mask.height; ++i) {
    for (int j = r; j + r < mask.width; ++j) {
      bool known = true;
      for (int a = -r; a <= r && known; ++a) {
        for (int b = -r; b <= r && known; ++b) known = !mask.at(i + a, j + b);
      }
      if (known) centers.emplace_back(i, j);
    }
  }
  return centers;
}

template <class T>
Var<T> contextual_attention(const Var<T>& features, const FeatureMask& mask,
                            const AttentionConfig& cfg) {
  const Shape fs = features.shape();
  if (fs.h != mask.height || fs.w != mask.width) {
    throw DimensionError("contextual_attention: mask does not match the feature map");
  }
  const int k = cfg.patch_size;
  const auto centers = known_patch_centers(mask, k);
  if (centers.empty()) throw AttentionError("contextual_attention: no fully known patch");
  const int m = static_cast<int>(centers.size());
  const int pad = k / 2;

  Tensor<T> miss(Shape{1, 1, fs.h, fs.w});
  Tensor<T> keep(Shape{1, 1, fs.h, fs.w});
  for (int r = 0; r < fs.h; ++r) {
    for (int c = 0; c < fs.w; ++c) {
      miss.at(0, 0, r, c) = mask.at(r, c) ? T(1) : T(0);
      keep.at(0, 0, r, c) = mask.at(r, c) ? T(0) : T(1);
    }
  }
  const Shape plane{1, fs.c, fs.h, fs.w};
  const Var<T> miss_v = broadcast_to(constant(std::move(miss)), plane);
  const Var<T> keep_v = broadcast_to(constant(std::move(keep)), plane);
  const Var<T> ones = constant(Tensor<T>(Shape{1, fs.c, k, k}, T(1)));
  // Each pixel averages the windows that cover it; fewer do at the border.
  Tensor<T> inv_cover(Shape{1, 1, fs.h, fs.w});
  auto span = [pad](int i, int n) { return std::min(n - 1, i + pad) - std::max(0, i - pad) + 1; };
  for (int r = 0; r < fs.h; ++r) {
    for (int c = 0; c < fs.w; ++c) inv_cover.at(0, 0, r, c) = T(1) / T(span(r, fs.h) * span(c, fs.w));
  }
  const Var<T> inv_cover_v = broadcast_to(constant(std::move(inv_cover)), plane);

  std::vector<Var<T>> outs;
  for (int n = 0; n < fs.n; ++n) {
    const Var<T> f = fs.n == 1 ? features : slice(features, 0, n, 1);
    const Var<T> patches = gather_patches(f, centers, k);
    const Var<T> inv_pnorm =
        pow(add_scalar(reduce_to(mul(patches, patches), Shape{m, 1, 1, 1}), cfg.eps), -0.5);
    const Var<T> kernels = mul(patches, broadcast_to(inv_pnorm, patches.shape()));

    const Var<T> fp = reflect_pad(f, pad);
    const Var<T> raw = conv(fp, kernels);
    const Var<T> inv_fnorm = pow(add_scalar(conv(mul(fp, fp), ones), cfg.eps), -0.5);
    const Var<T> logits = scale(mul(raw, broadcast_to(inv_fnorm, raw.shape())), cfg.temperature);

    // The shift cancels in the softmax, so it is taken as a constant.
    Tensor<T> shift(Shape{1, 1, fs.h, fs.w}, -std::numeric_limits<T>::infinity());
    for (int j = 0; j < m; ++j) {
      for (int r = 0; r < fs.h; ++r) {
        for (int c = 0; c < fs.w; ++c) {
          shift.at(0, 0, r, c) = std::max(shift.at(0, 0, r, c), logits.value().at(0, j, r, c));
        }
      }
    }
    const Var<T> e =
        exp(sub(logits, broadcast_to(constant(std::move(shift)), logits.shape())));
    const Var<T> attn =
        mul(e, broadcast_to(pow(reduce_to(e, Shape{1, 1, fs.h, fs.w}), -1.0), e.shape()));

    const Var<T> spread = conv_input_grad(attn, patches, fp.shape(), 1, 1);
    const Var<T> recon = mul(crop(spread, pad, pad, fs.h, fs.w), inv_cover_v);
    outs.push_back(add(mul(f, keep_v), mul(recon, miss_v)));
  }
  return outs.size() == 1 ? outs[0] : concat(outs, 0);
}

namespace {

void require_finite(const Tensor<double>& t, const char* what) {
  for (double v : t.data) {
    if (!std::isfinite(v)) throw NumericalError(std::string("grad_check: non-finite ") + what);
  }
}

template <class T>
Tensor<T> cast_tensor(const Tensor<double>& t) {
  Tensor<T> c(t.shape);
  for (std::size_t k = 0; k < t.size(); ++k) c.data[k] = static_cast<T>(t.data[k]);
  return c;
}

/// sum(op(inputs) * weights) with each input entry perturbable.
template <class T, class Op>
struct Objective {
  const Op& op;
  const std::vector<Tensor<double>>& inputs;
  Var<T> weights;

  long double at(std::size_t i, std::size_t e, long double shift) const {
    // Probes keep recording so that ops which differentiate internally
    // (gradient penalties) see differentiable inputs.
    std::vector<Var<T>> shifted;
    for (const auto& t : inputs) shifted.emplace_back(cast_tensor<T>(t), true);
    T& x = shifted[i].mutable_value().data[e];
    x = static_cast<T>(static_cast<long double>(x) + shift);
    const long double v = sum(mul(op(shifted), weights)).value().data[0];
    if (!std::isfinite(static_cast<double>(v))) throw NumericalError("grad_check: non-finite intermediate");
    return v;
  }
};

template <class Ref>
double check_impl(const CheckedOp& op, const Ref& reference, const std::vector<Tensor<double>>& inputs,
                  const GradCheckOptions& opts) {
  using R = std::conditional_t<std::is_same_v<Ref, ReferenceOp>, long double, double>;
  if (!(opts.epsilon >= 1e-7 && opts.epsilon <= 1e-3)) {
    throw ContractError("grad_check: epsilon must lie in [1e-7, 1e-3]");
  }
  Rng rng = stream_rng(opts.seed, 0);

  std::vector<Var<double>> vars;
  for (const auto& t : inputs) {
    require_finite(t, "input");
    vars.emplace_back(t, true);
  }
  const Var<double> probe = op(vars);
  require_finite(probe.value(), "output");
  Tensor<double> weights(probe.shape());
  for (double& w : weights.data) w = uniform(rng, -1.0, 1.0);
  const auto analytic = grad(sum(mul(probe, constant(weights))), vars);

  const Objective<R, Ref> objective{reference, inputs, constant(cast_tensor<R>(weights))};
  double amax = 0.0;
  for (const auto& g : analytic) {
    require_finite(g.value(), "gradient");
    for (double v : g.value().data) amax = std::max(amax, std::abs(v));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& a = analytic[i].value();

    std::vector<std::size_t> entries(inputs[i].size());
    for (std::size_t e = 0; e < entries.size(); ++e) entries[e] = e;
    if (opts.max_entries != 0 && entries.size() > opts.max_entries) {
      for (std::size_t e = 0; e < opts.max_entries; ++e) {
        std::swap(entries[e], entries[e + uniform_index(rng, entries.size() - e)]);
      }
      entries.resize(opts.max_entries);
    }

    for (std::size_t e : entries) {
      const long double up = objective.at(i, e, opts.epsilon);
      const long double down = objective.at(i, e, -opts.epsilon);
      const double numeric = static_cast<double>((up - down) / (2.0L * opts.epsilon));
      const double an = a.data[e];
      const double denom = std::max({std::abs(an), std::abs(numeric), 1e-3 * amax, 1e-10});
      worst = std::max(worst, std::abs(an - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace

double grad_check(const CheckedOp& op, const std::vector<Tensor<double>>& inputs,
                  const GradCheckOptions& opts) {
  return check_impl(op, op, inputs, opts);
}

double grad_check(const CheckedOp& op, const ReferenceOp& reference,
                  const std::vector<Tensor<double>>& inputs, const GradCheckOptions& opts) {
  return check_impl(op, reference, inputs, opts);
}

#define MAGFIELD_INSTANTIATE(T)                                                              \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const LayerSpec&);  \
  template Var<T> activate<T>(const Var<T>&, Activation);                                    \
  template Var<T> resample<T>(const Var<T>&, int, ResampleMode);                             \
  template Var<T> contextual_attention<T>(const Var<T>&, const FeatureMask&,                 \
                                          const AttentionConfig&);
MAGFIELD_INSTANTIATE(float)
MAGFIELD_INSTANTIATE(double)
MAGFIELD_INSTANTIATE(long double)
#undef MAGFIELD_INSTANTIATE

}  // namespace magfield::nn
