#include "icmf/model.hpp"

#include "icmf/rng.hpp"

namespace icmf {

ICMFormer::ICMFormer(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  Initializer init(params_, rng);
  backbone_ = BackboneParams::create(init, cfg_);
  neck_ = NeckParams::create(init, cfg_);
  head_ = HeadParams::create(init, cfg_);
}

Tensor ICMFormer::forward(const Tensor& image, const Tensor& interaction,
                          const ForwardContext& ctx, BackboneTrace* trace) const {
  ForwardContext c = ctx;
  c.dropout = cfg_.dropout;
  Tensor grid = backbone_forward(image, interaction, cfg_, backbone_, c, trace);
  return head_forward(build_pyramid(grid, neck_), head_, cfg_.image_side);
}

void ICMFormer::save_to(Checkpoint& ckpt) const {
  nlohmann::json cfg;
  to_json(cfg, cfg_);
  ckpt.meta["config"] = cfg;
  for (const auto& [name, t] : params_.entries()) ckpt.add("param/" + name, t.shape(), t.data());
}

void ICMFormer::load_from(const Checkpoint& ckpt) {
  if (ckpt.meta.contains("config")) {
    ModelConfig stored = cfg_;
    merge_json(ckpt.meta.at("config"), stored);
    nlohmann::json a, b;
    to_json(a, stored);
    to_json(b, cfg_);
    if (a != b)
      throw DataError("checkpoint config " + a.dump() + " does not match model config " + b.dump());
  }
  for (auto& [name, t] : params_.entries()) {
    const auto& e = ckpt.at("param/" + name);
    if (e.shape != t.shape())
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(e.shape) +
                      ", model expects " + shape_str(t.shape()));
    Tensor handle = t;
    std::copy(e.data.begin(), e.data.end(), handle.mutable_data().begin());
  }
}

std::unique_ptr<ICMFormer> load_model(const Checkpoint& ckpt) {
  ModelConfig cfg;
  if (!ckpt.meta.contains("config")) throw DataError("checkpoint has no model config");
  merge_json(ckpt.meta.at("config"), cfg);
  Rng rng(0);
  auto model = std::make_unique<ICMFormer>(cfg, rng);
  model->load_from(ckpt);
  return model;
}

Tensor ModelSegmenter::predict(const Tensor& image, const InteractionState& state,
                               const BitMask*) const {
  NoGradGuard no_grad;
  const auto& cfg = model_.config();
  Tensor interaction = encode_interaction(state, image.dim(1), image.dim(2), cfg.click_radius);
  return model_.forward(image, interaction);
}

Tensor OracleSegmenter::predict(const Tensor& image, const InteractionState&,
                                const BitMask* reference) const {
  if (!reference) throw ContractError("oracle segmenter needs a reference mask");
  if (reference->height != image.dim(1) || reference->width != image.dim(2))
    throw ShapeError("oracle segmenter: reference mask does not match the image");
  return reference->to_tensor();
}

Tensor EmptySegmenter::predict(const Tensor& image, const InteractionState&,
                               const BitMask*) const {
  return Tensor::zeros({1, image.dim(1), image.dim(2)});
}

Tensor QuadrantSegmenter::predict(const Tensor& image, const InteractionState& state,
                                  const BitMask*) const {
  const std::size_t h = image.dim(1), w = image.dim(2);
  const std::size_t k = std::min<std::size_t>(state.clicks.size(), 4);
  std::vector<double> v(h * w, 0.0);
  for (std::size_t q = 0; q < k; ++q) {
    const std::size_t r0 = (q / 2) * (h / 2), r1 = q / 2 ? h : h / 2;
    const std::size_t c0 = (q % 2) * (w / 2), c1 = q % 2 ? w : w / 2;
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) v[r * w + c] = 1.0;
  }
  return Tensor({1, h, w}, std::move(v));
}

}  // namespace icmf
