#pragma once

#include <array>
#include <vector>

#include "icmf/config.hpp"
#include "icmf/mask.hpp"
#include "icmf/parameters.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

/// One conv layer of a neck ladder.
struct NeckLayer {
  enum class Kind { TransposedUp2, Pointwise, StridedDown2 };
  Kind kind;
  Tensor weight;
  Tensor bias;
};

/// Four ladders turning the single-stride backbone grid into a pyramid at
/// grid x4, x2, x1 and x1/2. GELU sits between consecutive layers of a ladder.
struct NeckParams {
  std::array<std::vector<NeckLayer>, 4> levels;

  static NeckParams create(Initializer& init, const ModelConfig& cfg);
};

/// Segformer-style head: per-level unifiers, fusion over the concatenated
/// upsampled levels, and a single-channel predictor. All layers are 1x1.
struct HeadParams {
  std::array<Tensor, 4> unify_w;  // [head_channels, c_level, 1, 1]
  std::array<Tensor, 4> unify_b;
  Tensor fuse_w;  // [head_channels, 4*head_channels, 1, 1]
  Tensor fuse_b;
  Tensor pred_w;  // [1, head_channels, 1, 1]
  Tensor pred_b;  // [1]

  static HeadParams create(Initializer& init, const ModelConfig& cfg);
};

using FeaturePyramid = std::array<Tensor, 4>;

FeaturePyramid build_pyramid(const Tensor& grid, const NeckParams& p);

/// Pyramid -> foreground probability [1, output_side, output_side]. The
/// sigmoid map is computed at the finest level and bilinearly upsampled, so
/// `output_side` must be an integer multiple of the finest level side.
Tensor head_forward(const FeaturePyramid& pyramid, const HeadParams& p, std::size_t output_side);

/// Spatial sides of the pyramid levels for a configuration, without building anything.
std::array<std::size_t, 4> pyramid_sides(const ModelConfig& cfg);

/// mask[i] = prob[i] > threshold.
BitMask binarize(const Tensor& prob, double threshold = 0.5);

}  // namespace icmf
