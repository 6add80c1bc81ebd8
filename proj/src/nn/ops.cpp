#include "magfield/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <string>

#include "magfield/error.hpp"

namespace magfield::nn {

namespace {

template <class T>
using Grads = std::vector<Var<T>>;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string str(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) +
         "," + std::to_string(s.w) + ")";
}

void require_same(const Shape& a, const Shape& b, const char* who) {
  if (!(a == b)) throw DimensionError(std::string(who) + ": shape " + str(a) + " vs " + str(b));
}

template <class T, class F>
Tensor<T> map(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i >= n ? period - i : i;
}

int conv_out(int in, int k, int stride, int dilation) {
  const int span = dilation * (k - 1) + 1;
  if (in < span) return 0;
  return (in - span) / stride + 1;
}

}  // namespace

// ------------------------------------------------------------ elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] + b.value().data[i];
  return make_op<T>(std::move(out), {a, b}, [](const Var<T>& g) { return Grads<T>{g, g}; });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] - b.value().data[i];
  return make_op<T>(std::move(out), {a, b},
                    [](const Var<T>& g) { return Grads<T>{g, scale(g, -1.0)}; });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] * b.value().data[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g) {
    return Grads<T>{a.requires_grad() ? mul(g, b) : Var<T>(),
                    b.requires_grad() ? mul(g, a) : Var<T>()};
  });
}

template <class T>
Var<T> scale(const Var<T>& a, double s) {
  const T k = static_cast<T>(s);
  return make_op<T>(map(a.value(), [k](T v) { return k * v; }), {a},
                    [s](const Var<T>& g) { return Grads<T>{scale(g, s)}; });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, double s) {
  const T k = static_cast<T>(s);
  return make_op<T>(map(a.value(), [k](T v) { return v + k; }), {a},
                    [](const Var<T>& g) { return Grads<T>{g}; });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out(a.shape());
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  Eigen::Map<Arr>(out.data.data(), static_cast<Eigen::Index>(out.size())) =
      Eigen::Map<const Arr>(a.value().data.data(), static_cast<Eigen::Index>(out.size())).exp();
  return make_op<T>(std::move(out), {a},
                    [a](const Var<T>& g) { return Grads<T>{mul(g, exp(a))}; });
}

template <class T>
Var<T> pow(const Var<T>& a, double p) {
  const T e = static_cast<T>(p);
  return make_op<T>(map(a.value(), [e](T v) { return std::pow(v, e); }), {a},
                    [a, p](const Var<T>& g) {
                      if (p == 0.0) return Grads<T>{Var<T>()};
                      return Grads<T>{mul(g, scale(pow(a, p - 1.0), p))};
                    });
}

template <class T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> sign = map(a.value(), [](T v) { return v > T(0) ? T(1) : v < T(0) ? T(-1) : T(0); });
  return make_op<T>(map(a.value(), [](T v) { return std::abs(v); }), {a},
                    [sign = Var<T>(std::move(sign))](const Var<T>& g) {
                      return Grads<T>{mul(g, sign)};
                    });
}

template <class T>
Var<T> elu(const Var<T>& a) {
  Tensor<T> out(a.shape());
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Eigen::Map<const Arr> x(a.value().data.data(), static_cast<Eigen::Index>(a.value().size()));
  Eigen::Map<Arr>(out.data.data(), x.size()) = (x > T(0)).select(x, x.min(T(0)).exp() - T(1));
  return make_op<T>(std::move(out), {a},
                    [a](const Var<T>& g) { return Grads<T>{mul(g, elu_derivative(a, 1))}; });
}

template <class T>
Var<T> elu_derivative(const Var<T>& a, int k) {
  Tensor<T> out(a.shape());
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const Eigen::Map<const Arr> x(a.value().data.data(), static_cast<Eigen::Index>(a.value().size()));
  const T pos = k == 1 ? T(1) : T(0);
  Eigen::Map<Arr>(out.data.data(), x.size()) =
      (x > T(0)).select(Arr::Constant(x.size(), pos), x.min(T(0)).exp());
  return make_op<T>(std::move(out), {a}, [a, k](const Var<T>& g) {
    return Grads<T>{mul(g, elu_derivative(a, k + 1))};
  });
}

// ------------------------------------------------------------ reductions

template <class T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out(Shape{});
  std::common_type_t<T, double> s = 0.0;
  for (T v : a.value().data) s += v;
  out.data[0] = static_cast<T>(s);
  const Shape from = a.shape();
  return make_op<T>(std::move(out), {a},
                    [from](const Var<T>& g) { return Grads<T>{broadcast_to(g, from)}; });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.shape().size()));
}

template <class T>
Var<T> broadcast_to(const Var<T>& a, Shape to) {
  const Shape s = a.shape();
  for (int d = 0; d < 4; ++d) {
    if (s.dim(d) != to.dim(d) && s.dim(d) != 1) {
      throw DimensionError("broadcast_to: cannot expand " + str(s) + " to " + str(to));
    }
  }
  if (s == to) return a;
  Tensor<T> out(to);
  const Tensor<T>& in = a.value();
  for (int n = 0; n < to.n; ++n) {
    for (int c = 0; c < to.c; ++c) {
      for (int h = 0; h < to.h; ++h) {
        for (int w = 0; w < to.w; ++w) {
          out.at(n, c, h, w) = in.at(s.n == 1 ? 0 : n, s.c == 1 ? 0 : c, s.h == 1 ? 0 : h,
                                     s.w == 1 ? 0 : w);
        }
      }
    }
  }
  return make_op<T>(std::move(out), {a},
                    [s](const Var<T>& g) { return Grads<T>{reduce_to(g, s)}; });
}

template <class T>
Var<T> reduce_to(const Var<T>& a, Shape to) {
  const Shape s = a.shape();
  for (int d = 0; d < 4; ++d) {
    if (s.dim(d) != to.dim(d) && to.dim(d) != 1) {
      throw DimensionError("reduce_to: cannot reduce " + str(s) + " to " + str(to));
    }
  }
  if (s == to) return a;
  Tensor<T> out(to);
  const Tensor<T>& in = a.value();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int h = 0; h < s.h; ++h) {
        for (int w = 0; w < s.w; ++w) {
          out.at(to.n == 1 ? 0 : n, to.c == 1 ? 0 : c, to.h == 1 ? 0 : h, to.w == 1 ? 0 : w) +=
              in.at(n, c, h, w);
        }
      }
    }
  }
  return make_op<T>(std::move(out), {a},
                    [s](const Var<T>& g) { return Grads<T>{broadcast_to(g, s)}; });
}

// ------------------------------------------------------------ padding

template <class T>
Var<T> reflect_pad(const Var<T>& a, int pad) {
  if (pad < 0) throw DimensionError("reflect_pad: negative padding");
  if (pad == 0) return a;
  const Shape s = a.shape();
  const Shape to{s.n, s.c, s.h + 2 * pad, s.w + 2 * pad};
  Tensor<T> out(to);
  const Tensor<T>& in = a.value();
  std::vector<int> cols(to.w);
  for (int w = 0; w < to.w; ++w) cols[w] = mirror(w - pad, s.w);
  const bool fits = pad < s.w;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int h = 0; h < to.h; ++h) {
        const T* src = &in.data[in.offset(n, c, mirror(h - pad, s.h), 0)];
        T* dst = &out.data[out.offset(n, c, h, 0)];
        if (fits) {
          for (int w = 0; w < pad; ++w) dst[w] = src[cols[w]];
          std::copy(src, src + s.w, dst + pad);
          for (int w = pad + s.w; w < to.w; ++w) dst[w] = src[cols[w]];
        } else {
          for (int w = 0; w < to.w; ++w) dst[w] = src[cols[w]];
        }
      }
    }
  }
  return make_op<T>(std::move(out), {a},
                    [pad](const Var<T>& g) { return Grads<T>{reflect_fold(g, pad)}; });
}

template <class T>
Var<T> reflect_fold(const Var<T>& a, int pad) {
  if (pad == 0) return a;
  const Shape s = a.shape();
  const Shape to{s.n, s.c, s.h - 2 * pad, s.w - 2 * pad};
  if (to.h < 1 || to.w < 1) throw DimensionError("reflect_fold: padding exceeds the plane");
  Tensor<T> out(to);
  const Tensor<T>& in = a.value();
  std::vector<int> cols(s.w);
  for (int w = 0; w < s.w; ++w) cols[w] = mirror(w - pad, to.w);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int h = 0; h < s.h; ++h) {
        const T* src = &in.data[in.offset(n, c, h, 0)];
        T* dst = &out.data[out.offset(n, c, mirror(h - pad, to.h), 0)];
        for (int w = 0; w < s.w; ++w) dst[cols[w]] += src[w];
      }
    }
  }
  return make_op<T>(std::move(out), {a},
                    [pad](const Var<T>& g) { return Grads<T>{reflect_pad(g, pad)}; });
}

// ------------------------------------------------------------ convolution

namespace {

template <class T>
void im2col(const Tensor<T>& x, int n, int k, int stride, int dilation, int ho, int wo,
            RowMat<T>& cols) {
  const int c_in = x.shape.c;
  cols.resize(static_cast<Eigen::Index>(c_in) * k * k, static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols.row((c * k + ki) * k + kj).data();
        for (int oh = 0; oh < ho; ++oh) {
          const T* src = &x.data[x.offset(n, c, oh * stride + ki * dilation, kj * dilation)];
          if (stride == 1) {
            std::copy(src, src + wo, row + oh * wo);
          } else {
            for (int ow = 0; ow < wo; ++ow) row[oh * wo + ow] = src[ow * stride];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const RowMat<T>& cols, int n, int k, int stride, int dilation, int ho, int wo,
                Tensor<T>& x) {
  const int c_in = x.shape.c;
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols.row((c * k + ki) * k + kj).data();
        for (int oh = 0; oh < ho; ++oh) {
          T* dst = &x.data[x.offset(n, c, oh * stride + ki * dilation, kj * dilation)];
          const T* src = row + oh * wo;
          if (stride == 1) {
            for (int ow = 0; ow < wo; ++ow) dst[ow] += src[ow];
          } else {
            for (int ow = 0; ow < wo; ++ow) dst[ow * stride] += src[ow];
          }
        }
      }
    }
  }
}

void check_conv(const Shape& x, const Shape& w, int stride, int dilation) {
  if (w.h != w.w) throw DimensionError("conv: kernel must be square");
  if (x.c != w.c) {
    throw DimensionError("conv: input has " + std::to_string(x.c) + " channels, kernel expects " +
                         std::to_string(w.c));
  }
  if (stride < 1 || dilation < 1) throw DimensionError("conv: stride and dilation must be >= 1");
  if (conv_out(x.h, w.h, stride, dilation) < 1 || conv_out(x.w, w.w, stride, dilation) < 1) {
    throw DimensionError("conv: input " + str(x) + " smaller than the kernel span");
  }
}

}  // namespace

template <class T>
Var<T> conv(const Var<T>& x, const Var<T>& weight, int stride, int dilation) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  check_conv(xs, ws, stride, dilation);
  const int k = ws.h;
  const int ho = conv_out(xs.h, k, stride, dilation);
  const int wo = conv_out(xs.w, k, stride, dilation);
  Tensor<T> out(Shape{xs.n, ws.n, ho, wo});
  const Eigen::Map<const RowMat<T>> wm(weight.value().data.data(), ws.n,
                                       static_cast<Eigen::Index>(ws.c) * k * k);
  RowMat<T> cols;
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.value(), n, k, stride, dilation, ho, wo, cols);
    Eigen::Map<RowMat<T>> om(&out.data[out.offset(n, 0, 0, 0)], ws.n,
                             static_cast<Eigen::Index>(ho) * wo);
    om.noalias() = wm * cols;
  }
  return make_op<T>(std::move(out), {x, weight},
                    [x, weight, xs, ws, stride, dilation](const Var<T>& g) {
                      return Grads<T>{
                          x.requires_grad() ? conv_input_grad(g, weight, xs, stride, dilation)
                                            : Var<T>(),
                          weight.requires_grad() ? conv_weight_grad(x, g, ws, stride, dilation)
                                                 : Var<T>()};
                    });
}

template <class T>
Var<T> conv_input_grad(const Var<T>& gy, const Var<T>& weight, Shape xs, int stride,
                       int dilation) {
  const Shape ws = weight.shape();
  check_conv(xs, ws, stride, dilation);
  const int k = ws.h;
  const int ho = conv_out(xs.h, k, stride, dilation);
  const int wo = conv_out(xs.w, k, stride, dilation);
  require_same(gy.shape(), Shape{xs.n, ws.n, ho, wo}, "conv_input_grad");
  Tensor<T> out(xs);
  const Eigen::Map<const RowMat<T>> wm(weight.value().data.data(), ws.n,
                                       static_cast<Eigen::Index>(ws.c) * k * k);
  RowMat<T> cols;
  for (int n = 0; n < xs.n; ++n) {
    const Eigen::Map<const RowMat<T>> gm(&gy.value().data[gy.value().offset(n, 0, 0, 0)], ws.n,
                                         static_cast<Eigen::Index>(ho) * wo);
    cols.noalias() = wm.transpose() * gm;
    col2im_add(cols, n, k, stride, dilation, ho, wo, out);
  }
  return make_op<T>(std::move(out), {gy, weight},
                    [gy, weight, ws, stride, dilation](const Var<T>& g) {
                      return Grads<T>{
                          gy.requires_grad() ? conv(g, weight, stride, dilation) : Var<T>(),
                          weight.requires_grad() ? conv_weight_grad(g, gy, ws, stride, dilation)
                                                 : Var<T>()};
                    });
}

template <class T>
Var<T> conv_weight_grad(const Var<T>& x, const Var<T>& gy, Shape ws, int stride, int dilation) {
  const Shape xs = x.shape();
  check_conv(xs, ws, stride, dilation);
  const int k = ws.h;
  const int ho = conv_out(xs.h, k, stride, dilation);
  const int wo = conv_out(xs.w, k, stride, dilation);
  require_same(gy.shape(), Shape{xs.n, ws.n, ho, wo}, "conv_weight_grad");
  Tensor<T> out(ws);
  Eigen::Map<RowMat<T>> dw(out.data.data(), ws.n, static_cast<Eigen::Index>(ws.c) * k * k);
  RowMat<T> cols;
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.value(), n, k, stride, dilation, ho, wo, cols);
    const Eigen::Map<const RowMat<T>> gm(&gy.value().data[gy.value().offset(n, 0, 0, 0)], ws.n,
                                         static_cast<Eigen::Index>(ho) * wo);
    dw.noalias() += gm * cols.transpose();
  }
  return make_op<T>(std::move(out), {x, gy}, [x, gy, xs, stride, dilation](const Var<T>& g) {
    return Grads<T>{x.requires_grad() ? conv_input_grad(gy, g, xs, stride, dilation) : Var<T>(),
                    gy.requires_grad() ? conv(x, g, stride, dilation) : Var<T>()};
  });
}

// ------------------------------------------------------------ resampling

template <class T>
Var<T> subsample(const Var<T>& a, int factor) {
  const Shape s = a.shape();
  if (factor < 1 || s.h % factor != 0 || s.w % factor != 0) {
    throw DimensionError("subsample: size " + str(s) + " not divisible by " +
                         std::to_string(factor));
  }
  const Shape to{s.n, s.c, s.h / factor, s.w / factor};
  Tensor<T> out(to);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int h = 0; h < to.h; ++h) {
        for (int w = 0; w < to.w; ++w) out.at(n, c, h, w) = a.value().at(n, c, h * factor, w * factor);
      }
    }
  }
  return make_op<T>(std::move(out), {a}, [factor, s](const Var<T>& g) {
    return Grads<T>{zero_insert(g, factor, s)};
  });
}

template <class T>
Var<T> zero_insert(const Var<T>& a, int factor, Shape to) {
  const Shape s = a.shape();
  if (to.h != s.h * factor || to.w != s.w * factor || to.n != s.n || to.c != s.c) {
    throw DimensionError("zero_insert: target " + str(to) + " does not match " + str(s));
  }
  Tensor<T> out(to);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int h = 0; h < s.h; ++h) {
        for (int w = 0; w < s.w; ++w) out.at(n, c, h * factor, w * factor) = a.value().at(n, c, h, w);
      }
    }
  }
  return make_op<T>(std::move(out), {a},
                    [factor](const Var<T>& g) { return Grads<T>{subsample(g, factor)}; });
}

namespace {

struct Tap {
  int i0, i1;
  double w0, w1;
};

std::vector<Tap> bilinear_taps(int in, int factor) {
  std::vector<Tap> taps(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    const double s = (o + 0.5) / factor - 0.5;
    const int f = static_cast<int>(std::floor(s));
    const double t = s - f;
    taps[o] = {std::clamp(f, 0, in - 1), std::clamp(f + 1, 0, in - 1), 1.0 - t, t};
  }
  return taps;
}

template <class T>
void bilinear_apply(const Tensor<T>& in, Tensor<T>& out, int factor, bool adjoint) {
  const Shape small = adjoint ? out.shape : in.shape;
  const auto th = bilinear_taps(small.h, factor);
  const auto tw = bilinear_taps(small.w, factor);
  for (int n = 0; n < small.n; ++n) {
    for (int c = 0; c < small.c; ++c) {
      for (int oh = 0; oh < small.h * factor; ++oh) {
        const Tap& a = th[oh];
        for (int ow = 0; ow < small.w * factor; ++ow) {
          const Tap& b = tw[ow];
          if (!adjoint) {
            out.at(n, c, oh, ow) = static_cast<T>(
                a.w0 * (b.w0 * in.at(n, c, a.i0, b.i0) + b.w1 * in.at(n, c, a.i0, b.i1)) +
                a.w1 * (b.w0 * in.at(n, c, a.i1, b.i0) + b.w1 * in.at(n, c, a.i1, b.i1)));
          } else {
            const T g = in.at(n, c, oh, ow);
            out.at(n, c, a.i0, b.i0) += static_cast<T>(a.w0 * b.w0 * g);
            out.at(n, c, a.i0, b.i1) += static_cast<T>(a.w0 * b.w1 * g);
            out.at(n, c, a.i1, b.i0) += static_cast<T>(a.w1 * b.w0 * g);
            out.at(n, c, a.i1, b.i1) += static_cast<T>(a.w1 * b.w1 * g);
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Var<T> upsample_bilinear(const Var<T>& a, int factor) {
  if (factor < 1) throw DimensionError("upsample_bilinear: factor must be >= 1");
  const Shape s = a.shape();
  Tensor<T> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  bilinear_apply(a.value(), out, factor, false);
  return make_op<T>(std::move(out), {a}, [factor, s](const Var<T>& g) {
    return Grads<T>{upsample_bilinear_adjoint(g, factor, s)};
  });
}

template <class T>
Var<T> upsample_bilinear_adjoint(const Var<T>& a, int factor, Shape to) {
  const Shape s = a.shape();
  if (s.h != to.h * factor || s.w != to.w * factor || s.n != to.n || s.c != to.c) {
    throw DimensionError("upsample_bilinear_adjoint: target " + str(to) + " does not match " +
                         str(s));
  }
  Tensor<T> out(to);
  bilinear_apply(a.value(), out, factor, true);
  return make_op<T>(std::move(out), {a}, [factor](const Var<T>& g) {
    return Grads<T>{upsample_bilinear(g, factor)};
  });
}

// ------------------------------------------------------------ slicing

namespace {

// Splits a shape around `dim` into (outer, extent, inner) for block copies.
void split(const Shape& s, int dim, std::size_t& outer, std::size_t& extent, std::size_t& inner) {
  if (dim != 0 && dim != 1) throw DimensionError("slice: only batch and channel dims supported");
  outer = dim == 0 ? 1 : static_cast<std::size_t>(s.n);
  extent = static_cast<std::size_t>(s.dim(dim));
  inner = dim == 0 ? static_cast<std::size_t>(s.c) * s.h * s.w : static_cast<std::size_t>(s.h) * s.w;
}

Shape with_dim(Shape s, int dim, int v) {
  if (dim == 0) s.n = v;
  else s.c = v;
  return s;
}

}  // namespace

template <class T>
Var<T> slice(const Var<T>& a, int dim, int start, int len) {
  const Shape s = a.shape();
  std::size_t outer, extent, inner;
  split(s, dim, outer, extent, inner);
  if (start < 0 || len < 1 || static_cast<std::size_t>(start + len) > extent) {
    throw DimensionError("slice: range out of bounds for " + str(s));
  }
  const Shape to = with_dim(s, dim, len);
  Tensor<T> out(to);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = &a.value().data[(o * extent + start) * inner];
    std::copy(src, src + len * inner, &out.data[o * len * inner]);
  }
  return make_op<T>(std::move(out), {a}, [dim, start, s](const Var<T>& g) {
    return Grads<T>{embed(g, dim, start, s)};
  });
}

template <class T>
Var<T> embed(const Var<T>& a, int dim, int start, Shape to) {
  const Shape s = a.shape();
  std::size_t outer, extent, inner;
  split(to, dim, outer, extent, inner);
  const int len = s.dim(dim);
  if (!(with_dim(s, dim, to.dim(dim)) == to) || start < 0 ||
      static_cast<std::size_t>(start + len) > extent) {
    throw DimensionError("embed: " + str(s) + " does not fit " + str(to));
  }
  Tensor<T> out(to);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = &a.value().data[o * len * inner];
    std::copy(src, src + len * inner, &out.data[(o * extent + start) * inner]);
  }
  return make_op<T>(std::move(out), {a}, [dim, start, len](const Var<T>& g) {
    return Grads<T>{slice(g, dim, start, len)};
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int dim) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  Shape to = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (!(with_dim(p.shape(), dim, to.dim(dim)) == to)) {
      throw DimensionError("concat: mismatched part " + str(p.shape()));
    }
    total += p.shape().dim(dim);
  }
  to = with_dim(to, dim, total);
  std::size_t outer, extent, inner;
  split(to, dim, outer, extent, inner);
  Tensor<T> out(to);
  std::vector<int> starts;
  int start = 0;
  for (const auto& p : parts) {
    const int len = p.shape().dim(dim);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = &p.value().data[o * len * inner];
      std::copy(src, src + len * inner, &out.data[(o * extent + start) * inner]);
    }
    starts.push_back(start);
    start += len;
  }
  return make_op<T>(std::move(out), parts, [parts, starts, dim](const Var<T>& g) {
    Grads<T> gs;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      gs.push_back(parts[i].requires_grad()
                       ? slice(g, dim, starts[i], parts[i].shape().dim(dim))
                       : Var<T>());
    }
    return gs;
  });
}

template <class T>
Var<T> crop(const Var<T>& a, int r0, int c0, int h, int w) {
  const Shape s = a.shape();
  if (r0 < 0 || c0 < 0 || h < 1 || w < 1 || r0 + h > s.h || c0 + w > s.w) {
    throw DimensionError("crop: window outside " + str(s));
  }
  Tensor<T> out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int i = 0; i < h; ++i) {
        const T* src = &a.value().data[a.value().offset(n, c, r0 + i, c0)];
        std::copy(src, src + w, &out.data[out.offset(n, c, i, 0)]);
      }
    }
  }
  return make_op<T>(std::move(out), {a}, [r0, c0, s](const Var<T>& g) {
    return Grads<T>{place(g, r0, c0, s)};
  });
}

template <class T>
Var<T> place(const Var<T>& a, int r0, int c0, Shape to) {
  const Shape s = a.shape();
  if (s.n != to.n || s.c != to.c || r0 < 0 || c0 < 0 || r0 + s.h > to.h || c0 + s.w > to.w) {
    throw DimensionError("place: " + str(s) + " does not fit " + str(to));
  }
  Tensor<T> out(to);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int i = 0; i < s.h; ++i) {
        const T* src = &a.value().data[a.value().offset(n, c, i, 0)];
        std::copy(src, src + s.w, &out.data[out.offset(n, c, r0 + i, c0)]);
      }
    }
  }
  const int h = s.h;
  const int w = s.w;
  return make_op<T>(std::move(out), {a}, [r0, c0, h, w](const Var<T>& g) {
    return Grads<T>{crop(g, r0, c0, h, w)};
  });
}

template <class T>
Var<T> gather_patches(const Var<T>& a, const std::vector<std::pair<int, int>>& centers, int k) {
  const Shape s = a.shape();
  if (s.n != 1) throw DimensionError("gather_patches: expects a single sample");
  const int r = k / 2;
  Tensor<T> out(Shape{static_cast<int>(centers.size()), s.c, k, k});
  for (std::size_t m = 0; m < centers.size(); ++m) {
    const auto [cy, cx] = centers[m];
    if (cy - r < 0 || cx - r < 0 || cy + r >= s.h || cx + r >= s.w) {
      throw DimensionError("gather_patches: window leaves the plane");
    }
    for (int c = 0; c < s.c; ++c) {
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          out.at(static_cast<int>(m), c, i, j) = a.value().at(0, c, cy - r + i, cx - r + j);
        }
      }
    }
  }
  return make_op<T>(std::move(out), {a}, [centers, s](const Var<T>& g) {
    return Grads<T>{scatter_patches(g, centers, s)};
  });
}

template <class T>
Var<T> scatter_patches(const Var<T>& p, const std::vector<std::pair<int, int>>& centers,
                       Shape to) {
  const Shape ps = p.shape();
  if (to.n != 1 || ps.n != static_cast<int>(centers.size()) || ps.c != to.c || ps.h != ps.w) {
    throw DimensionError("scatter_patches: shape mismatch");
  }
  const int k = ps.h;
  const int r = k / 2;
  Tensor<T> out(to);
  for (std::size_t m = 0; m < centers.size(); ++m) {
    const auto [cy, cx] = centers[m];
    for (int c = 0; c < to.c; ++c) {
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          out.at(0, c, cy - r + i, cx - r + j) += p.value().at(static_cast<int>(m), c, i, j);
        }
      }
    }
  }
  return make_op<T>(std::move(out), {p}, [centers, k](const Var<T>& g) {
    return Grads<T>{gather_patches(g, centers, k)};
  });
}

// ------------------------------------------------------------ finite differences

namespace {

// y = D x along one axis of every line, or x = D^T y when transpose is set.
template <class T>
void diff_apply(const Tensor<T>& in, Tensor<T>& out, bool along_x, bool transpose) {
  const Shape s = in.shape;
  const int len = along_x ? s.w : s.h;
  if (len < 3) throw DimensionError("diff: need at least 3 samples along the axis");
  const std::size_t stride = along_x ? 1 : static_cast<std::size_t>(s.w);
  const int lines = along_x ? s.h : s.w;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int l = 0; l < lines; ++l) {
        const std::size_t base =
            along_x ? in.offset(n, c, l, 0) : in.offset(n, c, 0, l);
        const T* x = &in.data[base];
        T* y = &out.data[base];
        auto term = [&](int i, int j, T coef) {
          if (!transpose) {
            y[i * stride] += coef * x[j * stride];
          } else {
            y[j * stride] += coef * x[i * stride];
          }
        };
        term(0, 0, T(-1.5));
        term(0, 1, T(2));
        term(0, 2, T(-0.5));
        for (int i = 1; i + 1 < len; ++i) {
          term(i, i + 1, T(0.5));
          term(i, i - 1, T(-0.5));
        }
        term(len - 1, len - 1, T(1.5));
        term(len - 1, len - 2, T(-2));
        term(len - 1, len - 3, T(0.5));
      }
    }
  }
}

}  // namespace

template <class T>
Var<T> diff(const Var<T>& a, bool along_x) {
  Tensor<T> out(a.shape());
  diff_apply(a.value(), out, along_x, false);
  return make_op<T>(std::move(out), {a}, [along_x](const Var<T>& g) {
    return Grads<T>{diff_adjoint(g, along_x)};
  });
}

template <class T>
Var<T> diff_adjoint(const Var<T>& a, bool along_x) {
  Tensor<T> out(a.shape());
  diff_apply(a.value(), out, along_x, true);
  return make_op<T>(std::move(out), {a}, [along_x](const Var<T>& g) {
    return Grads<T>{diff(g, along_x)};
  });
}

#define MAGFIELD_INSTANTIATE(T)                                                               \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                       \
  template Var<T> scale<T>(const Var<T>&, double);                                            \
  template Var<T> add_scalar<T>(const Var<T>&, double);                                       \
  template Var<T> exp<T>(const Var<T>&);                                                      \
  template Var<T> pow<T>(const Var<T>&, double);                                              \
  template Var<T> abs<T>(const Var<T>&);                                                      \
  template Var<T> elu<T>(const Var<T>&);                                                      \
  template Var<T> elu_derivative<T>(const Var<T>&, int);                                      \
  template Var<T> sum<T>(const Var<T>&);                                                      \
  template Var<T> mean<T>(const Var<T>&);                                                     \
  template Var<T> broadcast_to<T>(const Var<T>&, Shape);                                      \
  template Var<T> reduce_to<T>(const Var<T>&, Shape);                                         \
  template Var<T> reflect_pad<T>(const Var<T>&, int);                                         \
  template Var<T> reflect_fold<T>(const Var<T>&, int);                                        \
  template Var<T> conv<T>(const Var<T>&, const Var<T>&, int, int);                            \
  template Var<T> conv_input_grad<T>(const Var<T>&, const Var<T>&, Shape, int, int);          \
  template Var<T> conv_weight_grad<T>(const Var<T>&, const Var<T>&, Shape, int, int);         \
  template Var<T> subsample<T>(const Var<T>&, int);                                           \
  template Var<T> zero_insert<T>(const Var<T>&, int, Shape);                                  \
  template Var<T> upsample_bilinear<T>(const Var<T>&, int);                                   \
  template Var<T> upsample_bilinear_adjoint<T>(const Var<T>&, int, Shape);                    \
  template Var<T> slice<T>(const Var<T>&, int, int, int);                                     \
  template Var<T> embed<T>(const Var<T>&, int, int, Shape);                                   \
  template Var<T> concat<T>(const std::vector<Var<T>>&, int);                                 \
  template Var<T> crop<T>(const Var<T>&, int, int, int, int);                                 \
  template Var<T> place<T>(const Var<T>&, int, int, Shape);                                   \
  template Var<T> gather_patches<T>(const Var<T>&, const std::vector<std::pair<int, int>>&,   \
                                    int);                                                     \
  template Var<T> scatter_patches<T>(const Var<T>&, const std::vector<std::pair<int, int>>&,  \
                                     Shape);                                                  \
  template Var<T> diff<T>(const Var<T>&, bool);                                               \
  template Var<T> diff_adjoint<T>(const Var<T>&, bool);
MAGFIELD_INSTANTIATE(float)
MAGFIELD_INSTANTIATE(double)
MAGFIELD_INSTANTIATE(long double)
#undef MAGFIELD_INSTANTIATE

}  // namespace magfield::nn
