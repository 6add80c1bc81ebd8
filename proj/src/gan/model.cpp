#include "magfield/gan/model.hpp"

#include <algorithm>
#include <string>

#include "magfield/error.hpp"

namespace magfield::gan {

namespace {

using nn::LayerKind;
using nn::LayerSpec;

class Builder {
 public:
  Builder(std::vector<nn::Parameter>& params, Rng& rng) : params_(params), rng_(rng) {}

  Layer conv(const std::string& name, int in, int out, int k, int stride = 1, int dilation = 1,
             nn::Activation act = nn::Activation::elu) {
    LayerSpec s;
    s.kind = stride > 1 ? LayerKind::downsample
                        : dilation > 1 ? LayerKind::dilated_conv : LayerKind::conv;
    s.in = in;
    s.out = out;
    s.kernel = k;
    s.stride = stride;
    s.dilation = dilation;
    s.activation = act;
    return add(name, s);
  }

  /// Bilinear x2 followed by a 3x3 convolution.
  Layer up(const std::string& name, int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::upsample;
    s.in = in;
    s.out = out;
    return add(name, s);
  }

  static Layer attention() {
    Layer l;
    l.spec.kind = LayerKind::attention;
    return l;
  }

 private:
  Layer add(const std::string& name, const LayerSpec& s) {
    s.validate();
    const int fan_in = s.in * s.kernel * s.kernel;
    Layer l{s, params_.size(), params_.size() + 1};
    params_.push_back({name + ".weight", nn::init_uniform(Shape{s.out, s.in, s.kernel, s.kernel},
                                                          fan_in, rng_)});
    params_.push_back({name + ".bias", nn::init_uniform(Shape{1, s.out, 1, 1}, fan_in, rng_)});
    return l;
  }

  std::vector<nn::Parameter>& params_;
  Rng& rng_;
};

int log2_exact(int f) {
  int n = 0;
  while ((1 << n) < f) ++n;
  if ((1 << n) != f) throw SpecError("downsample factor must be a power of two");
  return n;
}

/// Encoder shared by the coarse stage and both fine branches: 5x5 stem, then
/// per halving a stride-2 and a plain 3x3 convolution.
void encoder(Builder& b, Stack& s, const std::string& name, int in, int width, int downs) {
  s.push_back(b.conv(name + ".stem", in, width, 5));
  int c = width;
  for (int i = 0; i < downs; ++i) {
    s.push_back(b.conv(name + ".down" + std::to_string(i), c, 2 * c, 3, 2));
    c *= 2;
    s.push_back(b.conv(name + ".conv" + std::to_string(i), c, c, 3));
  }
}

void decoder(Builder& b, Stack& s, const std::string& name, int in, int width, int downs) {
  int c = in;
  for (int i = 0; i < downs; ++i) {
    s.push_back(b.up(name + ".up" + std::to_string(i), c, c / 2));
    c /= 2;
    s.push_back(b.conv(name + ".conv" + std::to_string(i), c, c, 3));
  }
  s.push_back(b.conv(name + ".narrow", c, std::max(width / 2, 1), 3));
  s.push_back(b.conv(name + ".out", std::max(width / 2, 1), kComponents, 3, 1, 1,
                     nn::Activation::none));
}

template <class T>
Var<T> run(const Stack& stack, Var<T> x, const std::vector<Var<T>>& pv,
           const nn::FeatureMask* fmask, const nn::AttentionConfig& attn) {
  for (const Layer& l : stack) {
    switch (l.spec.kind) {
      case LayerKind::attention:
        try {
          x = nn::contextual_attention(x, *fmask, attn);
        } catch (const AttentionError&) {
          // No fully known window at this resolution: features pass through.
        }
        break;
      case LayerKind::upsample:
        x = nn::upsample_bilinear(x, 2);
        x = nn::activate(nn::conv2d(x, pv[l.weight], pv[l.bias], l.spec), l.spec.activation);
        break;
      case LayerKind::activation:
        x = nn::activate(x, l.spec.activation);
        break;
      default:
        x = nn::activate(nn::conv2d(x, pv[l.weight], pv[l.bias], l.spec), l.spec.activation);
    }
  }
  return x;
}

std::size_t count(const std::vector<nn::Parameter>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

}  // namespace

std::size_t GeneratorParams::parameter_count() const { return count(params); }
std::size_t CriticParams::parameter_count() const { return count(params); }

GeneratorParams init_generator(const GeneratorArch& arch, Rng& rng) {
  if (arch.base_width < 1) throw SpecError("generator base width must be positive");
  const int downs = log2_exact(arch.downsample);
  GeneratorParams g;
  g.arch = arch;
  Builder b(g.params, rng);
  const int c = arch.base_width;
  const int deep = c << downs;
  const int in = kComponents + 1;

  encoder(b, g.coarse, "coarse", in, c, downs);
  for (int d : arch.dilations) {
    g.coarse.push_back(b.conv("coarse.dil" + std::to_string(d), deep, deep, 3, 1, d));
  }
  g.coarse.push_back(b.conv("coarse.mid", deep, deep, 3));
  decoder(b, g.coarse, "coarse", deep, c, downs);

  encoder(b, g.fine_conv, "fine_conv", in, c, downs);
  for (int d : arch.dilations) {
    g.fine_conv.push_back(b.conv("fine_conv.dil" + std::to_string(d), deep, deep, 3, 1, d));
  }

  encoder(b, g.fine_attention, "fine_attn", in, c, downs);
  g.fine_attention.push_back(Builder::attention());
  g.fine_attention.push_back(b.conv("fine_attn.post0", deep, deep, 3));
  g.fine_attention.push_back(b.conv("fine_attn.post1", deep, deep, 3));

  g.fine_merge.push_back(b.conv("fine_merge.join", 2 * deep, deep, 3));
  g.fine_merge.push_back(b.conv("fine_merge.mid", deep, deep, 3));
  decoder(b, g.fine_merge, "fine_merge", deep, c, downs);
  return g;
}

CriticParams init_critic(const CriticArch& arch, Rng& rng) {
  if (arch.base_width < 1 || arch.depth < 1) throw SpecError("critic width and depth must be positive");
  CriticParams d;
  d.arch = arch;
  Builder b(d.params, rng);
  for (const char* which : {"global", "local"}) {
    Stack& s = std::string(which) == "global" ? d.global : d.local;
    int c = kComponents;
    for (int i = 0; i < arch.depth; ++i) {
      const int out = arch.base_width * std::min(1 << i, 4);
      s.push_back(b.conv(std::string(which) + ".conv" + std::to_string(i), c, out, 5, 2));
      c = out;
    }
    Layer head = b.conv(std::string(which) + ".head", c, 1, 1, 1, 1, nn::Activation::none);
    (std::string(which) == "global" ? d.global_head : d.local_head) = head;
  }
  return d;
}

template <class T>
std::vector<Var<T>> bind_params(const std::vector<nn::Parameter>& params, bool requires_grad) {
  std::vector<Var<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    Tensor<T> t(p.value.shape);
    std::transform(p.value.data.begin(), p.value.data.end(), t.data.begin(),
                   [](double v) { return static_cast<T>(v); });
    out.emplace_back(std::move(t), requires_grad);
  }
  return out;
}

template <class T>
Tensor<T> mask_tensor(const Mask& mask) {
  Tensor<T> t(Shape{1, 1, mask.height(), mask.width()});
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) t.data[i] = bits[i] ? T(1) : T(0);
  return t;
}

template <class T>
Tensor<T> plane_tensor(const FieldPlane& plane) {
  Tensor<T> t(Shape{1, kComponents, plane.height(), plane.width()});
  const auto v = plane.values();
  std::transform(v.begin(), v.end(), t.data.begin(), [](double x) { return static_cast<T>(x); });
  return t;
}

template <class T>
FieldPlane tensor_plane(const Tensor<T>& t, int sample) {
  if (t.shape.c != kComponents) throw DimensionError("tensor_plane: expected 3 channels");
  FieldPlane p(t.shape.h, t.shape.w);
  const T* src = &t.data[t.offset(sample, 0, 0, 0)];
  std::copy(src, src + p.values().size(), p.values().begin());
  return p;
}

template <class T>
GeneratorOutput<T> generate(const GeneratorParams& g, const std::vector<Var<T>>& pv,
                            const Var<T>& input, const Mask& mask) {
  const Shape s = input.shape();
  if (s.c != kComponents) throw DimensionError("generate: input must have 3 channels");
  if (mask.height() != s.h || mask.width() != s.w) {
    throw DimensionError("generate: mask does not match the input plane");
  }
  const int f = g.arch.downsample;
  const int hp = (s.h + f - 1) / f * f;
  const int wp = (s.w + f - 1) / f * f;
  const int pad = std::max(hp - s.h, wp - s.w);

  // The plane keeps its origin; padding rows and columns count as missing.
  Mask padded_mask(hp, wp, 1);
  for (int r = 0; r < s.h; ++r) {
    for (int c = 0; c < s.w; ++c) padded_mask.set(r, c, mask.missing(r, c));
  }
  const Var<T> x = pad > 0 ? nn::crop(nn::reflect_pad(input, pad), pad, pad, hp, wp) : input;

  const Shape plane{s.n, 1, hp, wp};
  const Var<T> m = nn::broadcast_to(nn::constant(mask_tensor<T>(padded_mask)), plane);
  Tensor<T> keep_t = mask_tensor<T>(padded_mask);
  for (T& v : keep_t.data) v = T(1) - v;
  const Shape field{s.n, kComponents, hp, wp};
  const Var<T> m3 = nn::broadcast_to(nn::constant(mask_tensor<T>(padded_mask)), field);
  const Var<T> k3 = nn::broadcast_to(nn::constant(std::move(keep_t)), field);

  const auto& attn = g.arch.attention;
  const Var<T> coarse = run(g.coarse, nn::concat(std::vector<Var<T>>{x, m}, 1), pv, nullptr, attn);
  const Var<T> mixed = nn::add(nn::mul(coarse, m3), nn::mul(x, k3));
  const Var<T> fine_in = nn::concat(std::vector<Var<T>>{mixed, m}, 1);

  std::vector<std::uint8_t> bits(padded_mask.bits().begin(), padded_mask.bits().end());
  const nn::FeatureMask fmask = nn::pool_mask(bits, hp, wp, f);
  const Var<T> a = run(g.fine_conv, fine_in, pv, nullptr, attn);
  const Var<T> b = run(g.fine_attention, fine_in, pv, &fmask, attn);
  const Var<T> fine = run(g.fine_merge, nn::concat(std::vector<Var<T>>{a, b}, 1), pv, nullptr, attn);

  if (hp == s.h && wp == s.w) return {coarse, fine};
  return {nn::crop(coarse, 0, 0, s.h, s.w), nn::crop(fine, 0, 0, s.h, s.w)};
}

std::pair<FieldPlane, FieldPlane> generate(const GeneratorParams& g, const FieldPlane& input,
                                           const Mask& mask) {
  if (!mask.matches(input)) throw DimensionError("generate: mask does not match the input plane");
  nn::GradMode off(false);
  const auto pv = bind_params<double>(g.params, false);
  const auto out = generate<double>(g, pv, nn::constant(plane_tensor<double>(input)), mask);
  return {tensor_plane(out.coarse.value()), tensor_plane(out.fine.value())};
}

namespace {

template <class T>
Var<T> critic_stack(const Stack& s, const Layer& head, Var<T> x, const std::vector<Var<T>>& pv) {
  x = run(s, x, pv, nullptr, nn::AttentionConfig{});
  const Shape xs = x.shape();
  x = nn::scale(nn::reduce_to(x, Shape{xs.n, xs.c, 1, 1}), 1.0 / (xs.h * xs.w));
  return nn::conv2d(x, pv[head.weight], pv[head.bias], head.spec);
}

}  // namespace

template <class T>
CriticScores<T> critic_scores(const CriticParams& d, const std::vector<Var<T>>& pv,
                              const Var<T>& plane, const LocalPatchSet& patches) {
  if (patches.empty()) throw ContractError("critic_scores: empty local patch set");
  if (plane.shape().c != kComponents) throw DimensionError("critic_scores: expected 3 channels");
  CriticScores<T> out;
  out.global = critic_stack(d.global, d.global_head, plane, pv);
  Var<T> local;
  for (const PixelRect& r : patches) {
    const Var<T> s = critic_stack(d.local, d.local_head,
                                  nn::crop(plane, r.row0, r.col0, r.height, r.width), pv);
    local = local ? nn::add(local, s) : s;
  }
  out.local = nn::scale(local, 1.0 / static_cast<double>(patches.size()));
  out.combined = nn::add(out.global, out.local);
  return out;
}

#define MAGFIELD_INSTANTIATE(T)                                                                \
  template std::vector<Var<T>> bind_params<T>(const std::vector<nn::Parameter>&, bool);               \
  template Tensor<T> mask_tensor<T>(const Mask&);                                              \
  template Tensor<T> plane_tensor<T>(const FieldPlane&);                                       \
  template FieldPlane tensor_plane<T>(const Tensor<T>&, int);                                  \
  template GeneratorOutput<T> generate<T>(const GeneratorParams&, const std::vector<Var<T>>&, \
                                          const Var<T>&, const Mask&);                         \
  template CriticScores<T> critic_scores<T>(const CriticParams&, const std::vector<Var<T>>&,  \
                                            const Var<T>&, const LocalPatchSet&);
MAGFIELD_INSTANTIATE(float)
MAGFIELD_INSTANTIATE(double)
MAGFIELD_INSTANTIATE(long double)
#undef MAGFIELD_INSTANTIATE

}  // namespace magfield::gan
