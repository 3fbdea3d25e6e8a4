#include "icmf/diagnostics.hpp"

#include "icmf/click_oracle.hpp"
#include "icmf/model.hpp"
#include "icmf/rng.hpp"
#include "icmf/training.hpp"

namespace icmf {

GradCheckReport gradcheck_model(const ModelConfig& cfg, const ModelGradcheckOptions& opts) {
  if (cfg.dim > 128) throw ContractError("gradcheck needs a tiny model (dim <= 128), got dim " + std::to_string(cfg.dim));
  cfg.validate();
  if (opts.n_params == 0) return {};

  Rng rng(opts.seed);
  ICMFormer model(cfg, rng);
  for (auto [name, t] : model.parameters().entries())  // Tensor is a shared handle
    for (double& v : t.mutable_data()) v += rng.uniform(-opts.perturb, opts.perturb);

  const SynthSample s = synth_dataset(1, cfg.image_side, opts.seed)[0];
  InteractionState state;
  state.add_click(first_click(s.gt), cfg.image_side, cfg.image_side);
  BitMask prev(cfg.image_side, cfg.image_side);
  for (auto& b : prev.bits) b = rng.bernoulli(0.3) ? 1 : 0;
  if (auto c = next_click(prev, s.gt, ClickPolicy::eval())) state.add_click(*c, cfg.image_side, cfg.image_side);
  state.prev_mask = prev;
  const Tensor interaction = encode_interaction(state, cfg.image_side, cfg.image_side, cfg.click_radius);

  // Summed over pixels rather than averaged: parameter gradients of the mean
  // are ~1e-4, where the max(1, |n|) error metric would be an absolute test
  // too loose to notice a wrong backward rule.
  const double pixels = static_cast<double>(cfg.image_side * cfg.image_side);
  auto loss = [&] { return scale(nfl_loss(model.forward(s.image, interaction), s.gt, 2.0, false), pixels); };
  return check_gradients(loss, sample_sites(model.parameters().entries(), opts.n_params, rng), opts.fd);
}

}  // namespace icmf
