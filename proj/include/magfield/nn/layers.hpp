#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "magfield/nn/ops.hpp"
#include "magfield/rng.hpp"

namespace magfield::nn {

enum class LayerKind { conv, dilated_conv, downsample, upsample, activation, attention };
enum class Activation { none, elu };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  Activation activation = Activation::elu;

  /// Throws SpecError on an even kernel, dilation < 1 or non-positive widths.
  void validate() const;
};

/// Named trainable tensor. Values are kept in double and cast per graph.
struct Parameter {
  std::string name;
  Tensor<double> value;
};

/// Convolution weight (out, in, k, k) and bias (1, out, 1, 1).
struct ConvParams {
  LayerSpec spec;
  std::size_t weight = 0;  ///< index into the owning parameter list
  std::size_t bias = 0;
};

/// Fan-in scaled uniform initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor<double> init_uniform(Shape shape, int fan_in, Rng& rng);

/// conv2d with mirror same-padding; stride 2 halves even sizes.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const LayerSpec& spec);

template <class T>
Var<T> activate(const Var<T>& x, Activation a);

enum class ResampleMode { down_stride, up_interp };

/// factor in {2, 4}; down keeps every factor-th pixel, up is bilinear.
template <class T>
Var<T> resample(const Var<T>& x, int factor, ResampleMode mode);

/// Binary mask at feature resolution, 1 = missing.
struct FeatureMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> missing;

  bool at(int r, int c) const { return missing[static_cast<std::size_t>(r) * width + c] != 0; }
};

/// A pixel of the pooled mask is missing when any pixel of its block is.
FeatureMask pool_mask(const std::vector<std::uint8_t>& missing, int height, int width,
                      int factor);

struct AttentionConfig {
  int patch_size = 3;
  double temperature = 10.0;
  double eps = 1e-6;
};

/// Centres of patch windows lying wholly in the known region.
std::vector<std::pair<int, int>> known_patch_centers(const FeatureMask& mask, int patch_size);

/// Copies known-region feature patches into the missing region, weighted by
/// a softmax over cosine similarities. Known features pass through.
/// Throws AttentionError when no patch window is fully known.
template <class T>
Var<T> contextual_attention(const Var<T>& features, const FeatureMask& mask,
                            const AttentionConfig& cfg = {});

/// Function of several differentiable inputs to a tensor.
using CheckedOp = std::function<Var<double>(const std::vector<Var<double>>&)>;
/// The same function evaluated in extended precision.
using ReferenceOp = std::function<Var<long double>(const std::vector<Var<long double>>&)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Entries probed per input; 0 probes every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 1;
};

/// Reduces op(inputs) with fixed random weights to a scalar, then compares
/// the analytic gradient with central differences on each probed entry.
/// Relative error is |a - n| / max(|a|, |n|, 1e-3 * max|a|, 1e-10) with the
/// maximum taken over every input's gradient; the worst value is returned.
/// Throws NumericalError on non-finite values.
double grad_check(const CheckedOp& op, const std::vector<Tensor<double>>& inputs,
                  const GradCheckOptions& opts = {});

/// As above, but the central differences are taken on `reference`, so that
/// rounding in deep double-precision graphs does not swamp small gradients.
double grad_check(const CheckedOp& op, const ReferenceOp& reference,
                  const std::vector<Tensor<double>>& inputs, const GradCheckOptions& opts = {});

}  // namespace magfield::nn
