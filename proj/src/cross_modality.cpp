#include "icmf/cross_modality.hpp"

namespace icmf {

CrossBlockParams CrossBlockParams::create(Initializer& init, const std::string& prefix,
                                          std::size_t dim, std::size_t heads, std::size_t hidden,
                                          double eps) {
  CrossBlockParams p;
  p.guide_norm = LayerNormParams::create(init, prefix + ".guide_norm", dim, eps);
  p.guide_attn = AttentionParams::create(init, prefix + ".guide_attn", dim, heads);
  p.target_norm = LayerNormParams::create(init, prefix + ".target_norm", dim, eps);
  p.context_norm = LayerNormParams::create(init, prefix + ".context_norm", dim, eps);
  p.cross_attn = AttentionParams::create(init, prefix + ".cross_attn", dim, heads);
  p.ffn_norm = LayerNormParams::create(init, prefix + ".ffn_norm", dim, eps);
  p.ffn = FeedForwardParams::create(init, prefix + ".mlp", dim, hidden);
  return p;
}

Tensor cross_modality_block(const Tensor& target, const Tensor& guide, const CrossBlockParams& p,
                            const ForwardContext& ctx) {
  if (target.shape() != guide.shape())
    throw ShapeError("cross_modality_block: target " + shape_str(target.shape()) + " vs guide " +
                     shape_str(guide.shape()));
  Tensor refined = add(guide, self_attention(apply_layer_norm(guide, p.guide_norm), p.guide_attn));
  Tensor out = add(target, multi_head_attention(apply_layer_norm(target, p.target_norm),
                                                apply_layer_norm(refined, p.context_norm),
                                                p.cross_attn));
  return add(out, feed_forward(apply_layer_norm(out, p.ffn_norm), p.ffn, ctx));
}

BackboneParams BackboneParams::create(Initializer& init, const ModelConfig& cfg) {
  cfg.validate();
  BackboneParams p;
  p.image_embed =
      PatchEmbedParams::create(init, "backbone.image_embed", 3, cfg.dim, cfg.patch_size, cfg.tokens());
  p.click_embed =
      PatchEmbedParams::create(init, "backbone.click_embed", 3, cfg.dim, cfg.patch_size, cfg.tokens());
  for (std::size_t i = 0; i < cfg.shared_depth; ++i)
    p.shared_group.push_back(TransformerBlockParams::create(
        init, "backbone.shared." + std::to_string(i), cfg.dim, cfg.heads, cfg.ffn_hidden, cfg.ln_eps));
  for (std::size_t i = 0; i < cfg.cross_depth; ++i)
    p.cross_blocks.push_back(CrossBlockParams::create(
        init, "backbone.cross." + std::to_string(i), cfg.dim, cfg.heads, cfg.ffn_hidden, cfg.ln_eps));
  for (std::size_t i = 0; i < cfg.second_depth; ++i)
    p.second_group.push_back(TransformerBlockParams::create(
        init, "backbone.second." + std::to_string(i), cfg.dim, cfg.heads, cfg.ffn_hidden, cfg.ln_eps));
  return p;
}

namespace {

Tensor run_group(Tensor x, const std::vector<TransformerBlockParams>& blocks,
                 const ForwardContext& ctx) {
  for (const auto& b : blocks) x = transformer_block(x, b, ctx);
  return x;
}

}  // namespace

Tensor backbone_forward(const Tensor& image, const Tensor& interaction, const ModelConfig& cfg,
                        const BackboneParams& p, const ForwardContext& ctx,
                        BackboneTrace* trace) {
  cfg.validate();
  if (image.shape() != interaction.shape())
    throw ShapeError("backbone: image " + shape_str(image.shape()) + " vs interaction " +
                     shape_str(interaction.shape()));
  const Shape expected{3, cfg.image_side, cfg.image_side};
  if (image.shape() != expected)
    throw ShapeError("backbone: expected input " + shape_str(expected) + ", got " +
                     shape_str(image.shape()));

  Tensor x = patch_embed(image, p.image_embed);
  Tensor y = patch_embed(interaction, p.click_embed);
  if (trace) {
    trace->image_embedded = x;
    trace->click_embedded = y;
  }

  const bool both = cfg.variant == WiringVariant::XYXtoY || cfg.variant == WiringVariant::XYYtoX;
  x = run_group(x, p.shared_group, ctx);
  if (both) y = run_group(y, p.shared_group, ctx);
  if (trace) {
    trace->image_shared = x;
    trace->click_shared = y;
  }

  // The guide branch passes through the cross stage unchanged.
  const bool image_guides =
      cfg.variant == WiringVariant::XYXtoY || cfg.variant == WiringVariant::XOnlyXtoY;
  for (const auto& block : p.cross_blocks) {
    if (image_guides)
      y = cross_modality_block(y, x, block, ctx);
    else
      x = cross_modality_block(x, y, block, ctx);
  }
  if (trace) {
    trace->image_cross = x;
    trace->click_cross = y;
  }

  Tensor fused = add(x, y);
  if (trace) trace->fused = fused;
  fused = run_group(fused, p.second_group, ctx);
  return tokens_to_grid(fused, cfg.grid_side(), cfg.grid_side());
}

}  // namespace icmf
