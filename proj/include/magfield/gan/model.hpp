#pragma once

#include <string>
#include <vector>

#include "magfield/field.hpp"
#include "magfield/nn/layers.hpp"
#include "magfield/rng.hpp"
#include "magfield/tasks.hpp"

namespace magfield::gan {

using nn::Shape;
using nn::Tensor;
using nn::Var;

/// A conv-stack entry. Attention and plain upsampling entries own no
/// parameters; `weight` and `bias` index the owning parameter list.
struct Layer {
  nn::LayerSpec spec;
  std::size_t weight = 0;
  std::size_t bias = 0;
};

using Stack = std::vector<Layer>;

struct GeneratorArch {
  int base_width = 32;
  int downsample = 4;
  std::vector<int> dilations{2, 4, 8, 16};
  nn::AttentionConfig attention;
};

struct GeneratorParams {
  GeneratorArch arch;
  std::vector<nn::Parameter> params;
  Stack coarse;
  Stack fine_conv;
  Stack fine_attention;
  Stack fine_merge;

  std::size_t parameter_count() const;
};

struct CriticArch {
  int base_width = 32;
  int depth = 4;  ///< stride-2 5x5 convolutions before the spatial mean
};

struct CriticParams {
  CriticArch arch;
  std::vector<nn::Parameter> params;
  Stack global;
  Stack local;
  Layer global_head;  ///< 1x1 conv to one channel after the spatial mean
  Layer local_head;

  std::size_t parameter_count() const;
};

GeneratorParams init_generator(const GeneratorArch& arch, Rng& rng);
CriticParams init_critic(const CriticArch& arch, Rng& rng);

/// Parameter values as graph leaves in precision T.
template <class T>
std::vector<Var<T>> bind_params(const std::vector<nn::Parameter>& params, bool requires_grad);

/// Network input in normalized units: (N, 3, H, W) field and the shared mask.
template <class T>
struct GeneratorOutput {
  Var<T> coarse;
  Var<T> fine;
};

/// coarse = G_coarse(B_in, m); fine = G_fine(coarse*m + B_in*(1-m), m).
/// Any H, W; the planes are mirror-padded to a multiple of the downsample
/// factor internally and cropped back.
template <class T>
GeneratorOutput<T> generate(const GeneratorParams& g, const std::vector<Var<T>>& pv,
                            const Var<T>& input, const Mask& mask);

/// Plane-level convenience in double precision.
std::pair<FieldPlane, FieldPlane> generate(const GeneratorParams& g, const FieldPlane& input,
                                           const Mask& mask);

template <class T>
struct CriticScores {
  Var<T> global;    ///< (N, 1, 1, 1)
  Var<T> local;     ///< (N, 1, 1, 1), mean over patches
  Var<T> combined;  ///< global + local
};

/// Throws ContractError on an empty patch set.
template <class T>
CriticScores<T> critic_scores(const CriticParams& d, const std::vector<Var<T>>& pv,
                              const Var<T>& plane, const LocalPatchSet& patches);

/// (1, 1, H, W) tensor of the mask, 1 = missing.
template <class T>
Tensor<T> mask_tensor(const Mask& mask);

/// FieldPlane <-> (1, 3, H, W) tensor, values copied unchanged.
template <class T>
Tensor<T> plane_tensor(const FieldPlane& plane);
template <class T>
FieldPlane tensor_plane(const Tensor<T>& t, int sample = 0);

}  // namespace magfield::gan
