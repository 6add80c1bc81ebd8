#include <doctest.h>

#include <cmath>
#include <vector>

#include "magfield/error.hpp"
#include "magfield/nn/autograd.hpp"
#include "magfield/nn/layers.hpp"
#include "magfield/nn/ops.hpp"
#include "magfield/rng.hpp"

using namespace magfield;
using namespace magfield::nn;

namespace {

Tensor<double> rand_t(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<double> t(s);
  for (double& v : t.data) v = uniform(rng, lo, hi);
  return t;
}

template <class T>
Tensor<T> cast(const Tensor<double>& t) {
  Tensor<T> o(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) o.data[i] = static_cast<T>(t.data[i]);
  return o;
}

constexpr double kTol = 1e-6;

LayerSpec conv_spec(int in, int out, int k, int stride = 1, int dilation = 1) {
  LayerSpec s;
  s.kind = dilation > 1 ? LayerKind::dilated_conv : LayerKind::conv;
  s.in = in;
  s.out = out;
  s.kernel = k;
  s.stride = stride;
  s.dilation = dilation;
  return s;
}

FeatureMask feature_mask(int h, int w, const std::vector<std::pair<int, int>>& known_centers) {
  FeatureMask m{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 1)};
  for (auto [r, c] : known_centers)
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b) m.missing[(r + a) * w + (c + b)] = 0;
  return m;
}

}  // namespace

TEST_CASE("autograd basics") {
  Var<double> x(rand_t({1, 1, 2, 3}, 1), true);
  const Var<double> y = sum(mul(x, x));
  const auto g = grad(y, {x});
  for (std::size_t i = 0; i < 6; ++i) CHECK(g[0].value().data[i] == doctest::Approx(2 * x.value().data[i]));

  SUBCASE("second order through the recorded backward") {
    const auto g1 = grad(sum(pow(x, 3.0)), {x}, true);
    const auto g2 = grad(sum(g1[0]), {x});
    for (std::size_t i = 0; i < 6; ++i) CHECK(g2[0].value().data[i] == doctest::Approx(6 * x.value().data[i]));
  }
  SUBCASE("unused inputs receive zeros") {
    Var<double> z(rand_t({1, 1, 1, 2}, 2), true);
    const auto gz = grad(y, {z});
    for (double v : gz[0].value().data) CHECK(v == 0.0);
  }
  SUBCASE("grad mode off records nothing") {
    GradMode off(false);
    CHECK_FALSE(mul(x, x).requires_grad());
  }
}

TEST_CASE("every op passes the finite-difference check in double precision") {
  const Shape s{2, 3, 5, 4};
  const Tensor<double> a = rand_t(s, 10);
  const Tensor<double> b = rand_t(s, 11);
  const Tensor<double> pos = rand_t(s, 12, 0.5, 2.0);
  auto check1 = [&](const char* name, const Tensor<double>& in, auto f) {
    CAPTURE(name);
    CHECK(grad_check([&](const std::vector<Var<double>>& v) { return f(v[0]); }, {in}) < kTol);
  };
  auto check2 = [&](const char* name, const Tensor<double>& x, const Tensor<double>& y, auto f) {
    CAPTURE(name);
    CHECK(grad_check([&](const std::vector<Var<double>>& v) { return f(v[0], v[1]); }, {x, y}) < kTol);
  };
  check2("add", a, b, [](auto x, auto y) { return add(x, y); });
  check2("sub", a, b, [](auto x, auto y) { return sub(x, y); });
  check2("mul", a, b, [](auto x, auto y) { return mul(x, y); });
  check1("scale", a, [](auto x) { return scale(x, -1.7); });
  check1("add_scalar", a, [](auto x) { return add_scalar(x, 0.3); });
  check1("exp", a, [](auto x) { return exp(x); });
  check1("pow", pos, [](auto x) { return pow(x, -0.5); });
  check1("abs", pos, [](auto x) { return abs(x); });
  check1("elu", a, [](auto x) { return elu(x); });
  check1("elu_derivative", a, [](auto x) { return elu_derivative(x, 1); });
  check1("sum", a, [](auto x) { return sum(x); });
  check1("mean", a, [](auto x) { return mean(x); });
  check1("broadcast_to", rand_t({2, 1, 5, 1}, 13), [&](auto x) { return broadcast_to(x, s); });
  check1("reduce_to", a, [](auto x) { return reduce_to(x, Shape{1, 3, 1, 4}); });
  check1("reflect_pad", a, [](auto x) { return reflect_pad(x, 2); });
  check1("reflect_fold", rand_t({2, 3, 9, 8}, 14), [](auto x) { return reflect_fold(x, 2); });
  check2("conv", rand_t({2, 3, 7, 6}, 15), rand_t({4, 3, 3, 3}, 16), [](auto x, auto w) { return conv(x, w); });
  check2("conv strided dilated", rand_t({1, 2, 11, 9}, 17), rand_t({3, 2, 3, 3}, 18),
         [](auto x, auto w) { return conv(x, w, 2, 2); });
  check2("conv_input_grad", rand_t({1, 3, 5, 4}, 19), rand_t({3, 2, 3, 3}, 20),
         [](auto g, auto w) { return conv_input_grad(g, w, Shape{1, 2, 7, 6}, 1, 1); });
  check2("conv_weight_grad", rand_t({1, 2, 7, 6}, 21), rand_t({1, 3, 5, 4}, 22),
         [](auto x, auto g) { return conv_weight_grad(x, g, Shape{3, 2, 3, 3}, 1, 1); });
  check1("subsample", rand_t({1, 2, 8, 6}, 23), [](auto x) { return subsample(x, 2); });
  check1("zero_insert", rand_t({1, 2, 4, 3}, 24), [](auto x) { return zero_insert(x, 2, Shape{1, 2, 8, 6}); });
  check1("upsample_bilinear", rand_t({1, 2, 3, 4}, 25), [](auto x) { return upsample_bilinear(x, 2); });
  check1("upsample_bilinear_adjoint", rand_t({1, 2, 8, 8}, 26),
         [](auto x) { return upsample_bilinear_adjoint(x, 4, Shape{1, 2, 2, 2}); });
  check1("slice", a, [](auto x) { return slice(x, 1, 1, 2); });
  check1("embed", a, [](auto x) { return embed(x, 1, 2, Shape{2, 6, 5, 4}); });
  check2("concat", a, b, [](auto x, auto y) { return concat(std::vector<Var<double>>{x, y}, 1); });
  check1("crop", a, [](auto x) { return crop(x, 1, 1, 3, 2); });
  check1("place", a, [](auto x) { return place(x, 2, 1, Shape{2, 3, 8, 6}); });
  const std::vector<std::pair<int, int>> centers{{1, 1}, {3, 2}};
  check1("gather_patches", rand_t({1, 2, 5, 4}, 27), [&](auto x) { return gather_patches(x, centers, 3); });
  check1("scatter_patches", rand_t({2, 2, 3, 3}, 28),
         [&](auto p) { return scatter_patches(p, centers, Shape{1, 2, 5, 4}); });
  check1("diff x", a, [](auto x) { return diff(x, true); });
  check1("diff y", a, [](auto x) { return diff(x, false); });
  check1("diff_adjoint", a, [](auto x) { return diff_adjoint(x, true); });
}

TEST_CASE("second derivatives of the penalty path") {
  // Gradient of a conv-ELU stack with respect to its input, differentiated
  // again with respect to the weights, as the gradient penalty needs.
  const Tensor<double> x = rand_t({1, 2, 6, 5}, 30);
  const Tensor<double> w = rand_t({3, 2, 3, 3}, 31);
  const double err = grad_check(
      [](const std::vector<Var<double>>& v) {
        const Var<double> y = sum(elu(conv(reflect_pad(v[0], 1), v[1])));
        const auto g = grad(y, {v[0]}, true);
        return mul(g[0], g[0]);
      },
      {x, w});
  CHECK(err < kTol);
}

TEST_CASE("conv2d") {
  SUBCASE("1x1 identity") {
    Tensor<double> w(Shape{3, 3, 1, 1});
    for (int i = 0; i < 3; ++i) w.at(i, i, 0, 0) = 1.0;
    const Tensor<double> x = rand_t({2, 3, 4, 5}, 40);
    const auto y = conv2d(Var<double>(x), Var<double>(w), Var<double>(), conv_spec(3, 3, 1));
    CHECK(y.value().data == x.data);
  }
  SUBCASE("zero weights give zero output and zero input gradient") {
    Var<double> x(rand_t({1, 2, 4, 4}, 41), true);
    const Var<double> w(Tensor<double>(Shape{3, 2, 3, 3}));
    const auto y = conv2d(x, w, Var<double>(), conv_spec(2, 3, 3));
    for (double v : y.value().data) CHECK(v == 0.0);
    const auto gx = grad(sum(y), {x});
    for (double v : gx[0].value().data) CHECK(v == 0.0);
  }
  SUBCASE("random 4x4 input, 3x3 kernel, finite differences") {
    const double err = grad_check(
        [](const std::vector<Var<double>>& v) { return conv2d(v[0], v[1], v[2], conv_spec(2, 3, 3)); },
        {rand_t({1, 2, 4, 4}, 42), rand_t({3, 2, 3, 3}, 43), rand_t({1, 3, 1, 1}, 44)});
    CHECK(err < kTol);
  }
  SUBCASE("strided and dilated variants") {
    for (auto spec : {conv_spec(2, 2, 5, 2), conv_spec(2, 2, 3, 1, 2), conv_spec(2, 2, 3, 1, 4)}) {
      const double err = grad_check(
          [&](const std::vector<Var<double>>& v) { return conv2d(v[0], v[1], v[2], spec); },
          {rand_t({1, 2, 8, 8}, 45), rand_t({2, 2, spec.kernel, spec.kernel}, 46), rand_t({1, 2, 1, 1}, 47)});
      CHECK(err < kTol);
    }
  }
  SUBCASE("linear in the input") {
    const Var<double> w(rand_t({2, 2, 3, 3}, 48));
    const Tensor<double> a = rand_t({1, 2, 5, 5}, 49), b = rand_t({1, 2, 5, 5}, 50);
    Tensor<double> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data[i] = 2 * a.data[i] - 3 * b.data[i];
    auto f = [&](const Tensor<double>& t) { return conv2d(Var<double>(t), w, Var<double>(), conv_spec(2, 2, 3)).value(); };
    const auto fa = f(a), fb = f(b), fc = f(c);
    for (std::size_t i = 0; i < fc.size(); ++i) CHECK(fc.data[i] == doctest::Approx(2 * fa.data[i] - 3 * fb.data[i]));
  }
  SUBCASE("shape polymorphic") {
    const Var<double> w(rand_t({2, 3, 3, 3}, 51));
    for (auto [h, wd] : {std::pair{5, 7}, std::pair{12, 9}}) {
      const auto y = conv2d(Var<double>(rand_t({1, 3, h, wd}, 52)), w, Var<double>(), conv_spec(3, 2, 3));
      CHECK(y.shape() == Shape{1, 2, h, wd});
    }
  }
  SUBCASE("even kernels are rejected") {
    CHECK_THROWS_AS(conv_spec(2, 2, 4).validate(), SpecError);
  }
}

TEST_CASE("resample") {
  SUBCASE("up after down keeps a constant plane") {
    const Var<double> x(Tensor<double>(Shape{1, 2, 8, 8}, 0.37));
    for (int f : {2, 4}) {
      const auto y = resample(resample(x, f, ResampleMode::down_stride), f, ResampleMode::up_interp);
      CHECK(y.shape() == x.shape());
      for (double v : y.value().data) CHECK(v == doctest::Approx(0.37));
    }
  }
  SUBCASE("2x2 upsampled by 2 matches hand-computed bilinear weights") {
    Tensor<double> t(Shape{1, 1, 2, 2});
    t.data = {1.0, 2.0, 3.0, 5.0};
    const auto y = resample(Var<double>(t), 2, ResampleMode::up_interp).value();
    // Half-pixel centres: output i samples input coordinate (i + 0.5) / 2 - 0.5,
    // clamped to [0, 1]: weights per axis are 1, 3/4, 1/4, 0 on the first sample.
    const double wx[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        double e = 0.0;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) e += wx[r][i] * wx[c][j] * t.at(0, 0, i, j);
        CHECK(y.at(0, 0, r, c) == doctest::Approx(e).epsilon(1e-15));
      }
  }
  SUBCASE("gradients") {
    for (auto mode : {ResampleMode::down_stride, ResampleMode::up_interp}) {
      const double err = grad_check(
          [&](const std::vector<Var<double>>& v) { return resample(v[0], 2, mode); }, {rand_t({1, 2, 4, 6}, 60)});
      CHECK(err < kTol);
    }
  }
  SUBCASE("non-divisible sizes and bad factors") {
    CHECK_THROWS_AS(resample(Var<double>(rand_t({1, 1, 5, 4}, 61)), 2, ResampleMode::down_stride), DimensionError);
    CHECK_THROWS_AS(resample(Var<double>(rand_t({1, 1, 8, 8}, 62)), 3, ResampleMode::up_interp), DimensionError);
  }
}

TEST_CASE("contextual attention") {
  SUBCASE("one known patch: missing features take the patch mean") {
    const FeatureMask m = feature_mask(8, 8, {{1, 1}});
    const Tensor<double> f = rand_t({1, 2, 8, 8}, 70);
    const auto y = contextual_attention(Var<double>(f), m).value();
    for (int ch = 0; ch < 2; ++ch) {
      double mean = 0.0;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) mean += f.at(0, ch, a, b) / 9.0;
      // Interior missing pixels are covered by nine windows, each contributing
      // one position of the single candidate patch.
      for (int r = 2; r < 7; ++r)
        for (int c = 4; c < 7; ++c) CHECK(y.at(0, ch, r, c) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
  SUBCASE("constant features stay constant") {
    const FeatureMask m = feature_mask(8, 8, {{1, 1}, {5, 6}});
    const auto y = contextual_attention(Var<double>(Tensor<double>(Shape{1, 3, 8, 8}, -0.8)), m).value();
    for (double v : y.data) CHECK(v == doctest::Approx(-0.8).epsilon(1e-12));
  }
  SUBCASE("known features pass through") {
    const FeatureMask m = feature_mask(8, 8, {{2, 2}, {5, 5}});
    const Tensor<double> f = rand_t({2, 2, 8, 8}, 71);
    const auto y = contextual_attention(Var<double>(f), m).value();
    for (int n = 0; n < 2; ++n)
      for (int ch = 0; ch < 2; ++ch)
        for (int r = 0; r < 8; ++r)
          for (int c = 0; c < 8; ++c)
            if (!m.at(r, c)) CHECK(y.at(n, ch, r, c) == f.at(n, ch, r, c));
  }
  SUBCASE("8x8 map, 2 known patches: brute-force cosine-softmax-deconvolution") {
    const int h = 8, w = 8, ch = 2;
    const std::vector<std::pair<int, int>> centers{{1, 1}, {5, 6}};
    const FeatureMask m = feature_mask(h, w, centers);
    REQUIRE(known_patch_centers(m, 3) == centers);
    const Tensor<double> f = rand_t({1, ch, h, w}, 72);
    const AttentionConfig cfg;
    const auto y = contextual_attention(Var<double>(f), m, cfg).value();

    auto refl = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
    auto window = [&](int r, int c, int ci, int a, int b) { return f.at(0, ci, refl(r + a, h), refl(c + b, w)); };
    // Softmax weights at every location.
    std::vector<std::vector<double>> attn(h * w, std::vector<double>(centers.size()));
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        std::vector<double> logit(centers.size());
        double fn = 0.0;
        for (int ci = 0; ci < ch; ++ci)
          for (int a = -1; a <= 1; ++a)
            for (int b = -1; b <= 1; ++b) fn += window(r, c, ci, a, b) * window(r, c, ci, a, b);
        for (std::size_t j = 0; j < centers.size(); ++j) {
          double dot = 0.0, pn = 0.0;
          for (int ci = 0; ci < ch; ++ci)
            for (int a = -1; a <= 1; ++a)
              for (int b = -1; b <= 1; ++b) {
                const double p = f.at(0, ci, centers[j].first + a, centers[j].second + b);
                dot += window(r, c, ci, a, b) * p;
                pn += p * p;
              }
          logit[j] = cfg.temperature * dot / std::sqrt(pn + cfg.eps) / std::sqrt(fn + cfg.eps);
        }
        double z = 0.0;
        for (double l : logit) z += std::exp(l);
        for (std::size_t j = 0; j < centers.size(); ++j) attn[r * w + c][j] = std::exp(logit[j]) / z;
      }
    // Every window covering a missing pixel votes with the matching position
    // of each candidate patch.
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        if (!m.at(r, c)) continue;
        for (int ci = 0; ci < ch; ++ci) {
          double acc = 0.0;
          int votes = 0;
          for (int a = -1; a <= 1; ++a)
            for (int b = -1; b <= 1; ++b) {
              const int qr = r - a, qc = c - b;
              if (qr < 0 || qr >= h || qc < 0 || qc >= w) continue;
              ++votes;
              for (std::size_t j = 0; j < centers.size(); ++j)
                acc += attn[qr * w + qc][j] * f.at(0, ci, centers[j].first + a, centers[j].second + b);
            }
          CHECK(y.at(0, ci, r, c) == doctest::Approx(acc / votes).epsilon(1e-10));
        }
      }
  }
  SUBCASE("gradient") {
    const FeatureMask m = feature_mask(7, 7, {{1, 1}, {5, 4}});
    const double err = grad_check(
        [&](const std::vector<Var<double>>& v) { return contextual_attention(v[0], m); }, {rand_t({1, 2, 7, 7}, 73)});
    CHECK(err < kTol);
  }
  SUBCASE("no known patch") {
    const FeatureMask m{6, 6, std::vector<std::uint8_t>(36, 1)};
    CHECK_THROWS_AS(contextual_attention(Var<double>(rand_t({1, 1, 6, 6}, 74)), m), AttentionError);
  }
  SUBCASE("mask pooling") {
    std::vector<std::uint8_t> bits(64, 0);
    bits[3 * 8 + 5] = 1;
    const FeatureMask p = pool_mask(bits, 8, 8, 4);
    CHECK(p.height == 2);
    CHECK(p.width == 2);
    CHECK(p.missing == std::vector<std::uint8_t>{0, 1, 0, 0});
  }
}

TEST_CASE("grad_check harness") {
  SUBCASE("linear op is exact to rounding") {
    const double err = grad_check([](const std::vector<Var<double>>& v) { return scale(v[0], 3.0); },
                                  {rand_t({1, 1, 4, 4}, 80)});
    CHECK(err < 1e-9);
  }
  SUBCASE("conv-activation stack") {
    const double err = grad_check(
        [](const std::vector<Var<double>>& v) {
          const auto h1 = activate(conv2d(v[0], v[1], v[2], conv_spec(2, 3, 3)), Activation::elu);
          return activate(conv2d(h1, v[3], Var<double>(), conv_spec(3, 2, 3, 1, 2)), Activation::elu);
        },
        {rand_t({2, 2, 6, 6}, 81), rand_t({3, 2, 3, 3}, 82), rand_t({1, 3, 1, 1}, 83), rand_t({2, 3, 3, 3}, 84)});
    CHECK(err < kTol);
  }
  SUBCASE("a broken backward is flagged") {
    const double err = grad_check(
        [](const std::vector<Var<double>>& v) {
          Tensor<double> out = v[0].value();
          for (double& x : out.data) x = x * x;
          const Var<double> in = v[0];
          // Wrong: should be 2x * g.
          return make_op<double>(std::move(out), {in}, [in](const Var<double>& g) {
            return std::vector<Var<double>>{mul(g, in)};
          });
        },
        {rand_t({1, 1, 3, 3}, 85, 0.5, 1.0)});
    CHECK(err > 1e-2);
  }
  SUBCASE("epsilon range and non-finite values") {
    const auto id = [](const std::vector<Var<double>>& v) { return v[0]; };
    GradCheckOptions o;
    o.epsilon = 1e-2;
    CHECK_THROWS_AS(grad_check(id, {rand_t({1, 1, 2, 2}, 86)}, o), ContractError);
    Tensor<double> bad = rand_t({1, 1, 2, 2}, 87);
    bad.data[1] = NAN;
    CHECK_THROWS_AS(grad_check(id, {bad}), NumericalError);
  }
}

TEST_CASE("single precision gradients agree with double within 1e-3") {
  const Tensor<double> x = rand_t({1, 2, 8, 8}, 90);
  const Tensor<double> w1 = rand_t({3, 2, 3, 3}, 91);
  const Tensor<double> w2 = rand_t({2, 3, 3, 3}, 92);
  auto run = [&](auto tag) {
    using T = decltype(tag);
    Var<T> xv(cast<T>(x), true), a(cast<T>(w1), true), b(cast<T>(w2), true);
    const auto h = elu(conv(reflect_pad(xv, 1), a));
    const auto y = sum(mul(elu(conv(reflect_pad(h, 2), b, 1, 2)), elu(conv(reflect_pad(h, 2), b, 1, 2))));
    return grad(y, {xv, a, b});
  };
  const auto gd = run(0.0);
  const auto gf = run(0.0f);
  for (std::size_t k = 0; k < 3; ++k) {
    double amax = 0.0, worst = 0.0;
    for (double v : gd[k].value().data) amax = std::max(amax, std::abs(v));
    for (std::size_t i = 0; i < gd[k].value().size(); ++i)
      worst = std::max(worst, std::abs(gd[k].value().data[i] - gf[k].value().data[i]) / amax);
    CHECK(worst < 1e-3);
  }
}
