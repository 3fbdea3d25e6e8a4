#pragma once

#include <vector>

#include "icmf/config.hpp"
#include "icmf/transformer.hpp"

namespace icmf {

/// Two-step cross-modality block. The guiding modality first attends to
/// itself; the target modality then queries the refined guide tokens.
struct CrossBlockParams {
  LayerNormParams guide_norm;
  AttentionParams guide_attn;
  LayerNormParams target_norm;
  LayerNormParams context_norm;
  AttentionParams cross_attn;  // W_q applied to target, W_k/W_v to guide
  LayerNormParams ffn_norm;
  FeedForwardParams ffn;

  static CrossBlockParams create(Initializer& init, const std::string& prefix, std::size_t dim,
                                 std::size_t heads, std::size_t hidden, double eps);
};

/// guide' = guide + SelfAttn(LN(guide))
/// out    = target + CrossAttn(Q: LN(target), K/V: LN(guide'))
/// out    = out + FFN(LN(out))
Tensor cross_modality_block(const Tensor& target, const Tensor& guide, const CrossBlockParams& p,
                            const ForwardContext& ctx = {});

struct BackboneParams {
  PatchEmbedParams image_embed;
  PatchEmbedParams click_embed;
  std::vector<TransformerBlockParams> shared_group;
  std::vector<CrossBlockParams> cross_blocks;
  std::vector<TransformerBlockParams> second_group;

  static BackboneParams create(Initializer& init, const ModelConfig& cfg);
};

/// Intermediate token sequences of one backbone pass, for inspection.
struct BackboneTrace {
  Tensor image_embedded;
  Tensor click_embedded;
  Tensor image_shared;   // image tokens after the shared group
  Tensor click_shared;   // click tokens entering the cross stage
  Tensor image_cross;    // image tokens leaving the cross stage
  Tensor click_cross;    // click tokens leaving the cross stage
  Tensor fused;
};

/// image, interaction: [3, side, side] -> feature grid [dim, side/p, side/p].
Tensor backbone_forward(const Tensor& image, const Tensor& interaction, const ModelConfig& cfg,
                        const BackboneParams& p, const ForwardContext& ctx = {},
                        BackboneTrace* trace = nullptr);

}  // namespace icmf
