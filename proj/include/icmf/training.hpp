#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "icmf/checkpoint.hpp"
#include "icmf/clicks.hpp"
#include "icmf/mask.hpp"
#include "icmf/rng.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

class ICMFormer;
class ParameterSet;

/// Normalized focal loss: sum(w * -log p_t) / sum(w), w = (1 - p_t)^gamma.
/// Probabilities are clamped to [1e-7, 1 - 1e-7]. With `detach_normalizer`
/// the denominator is treated as a constant in the backward pass.
Tensor nfl_loss(const Tensor& prob, const BitMask& gt, double gamma = 2.0,
                bool detach_normalizer = true);

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (missing gradients count as zero). Lazily sizes `state`.
void adam_step(ParameterSet& params, AdamState& state, const AdamConfig& cfg);

enum class ShapeKind { Ellipse, Rectangle, Triangle };
const char* to_string(ShapeKind k);

struct SynthSample {
  Tensor image;  // [3, side, side] in [0, 1]
  BitMask gt;
  ShapeKind shape_kind = ShapeKind::Ellipse;
};

/// Seeded synthetic shapes: one filled target on a noisy textured
/// background with up to two distractors drawn underneath it.
std::vector<SynthSample> synth_dataset(std::size_t n, std::size_t side, std::uint64_t seed);

struct AugmentParams {
  bool flip = false;   // horizontal
  int rotation = 0;    // quarter turns, clockwise
  double scale = 1.0;
  std::size_t offset_row = 0;  // crop offset when scaled up, paste offset when scaled down
  std::size_t offset_col = 0;

  bool is_identity() const { return !flip && rotation == 0 && scale == 1.0; }
};

AugmentParams draw_augment(std::size_t side, Rng& rng);
SynthSample apply_augment(const SynthSample& s, const AugmentParams& p);
/// Inverts the flip/rotation part of `p`; scale and offsets are ignored.
SynthSample invert_flip_rotation(const SynthSample& s, const AugmentParams& p);
/// Random flip, quarter turn and rescale in [0.75, 1.25] with crop/pad back to
/// the original side. Redraws up to 5 times if the gt becomes empty, then
/// returns the sample unchanged.
SynthSample augment(const SynthSample& s, Rng& rng);

struct TrainConfig {
  AdamConfig adam{};
  std::size_t batch_size = 24;
  std::size_t steps = 1000;
  std::size_t lr_drop_step = 800;  // lr is divided by lr_drop_factor from this step on
  double lr_drop_factor = 10.0;
  std::size_t max_init_clicks = 3;
  std::size_t max_iter_clicks = 3;
  double gamma = 2.0;
  double border_prob = 0.5;
  bool augment = true;
  std::uint64_t seed = 0;

  /// Desk-scale schedule for the tiny model: higher lr, small batches, no augmentation.
  static TrainConfig tiny();
  void validate() const;
  double lr_at(std::size_t step) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Overwrites fields present in `j`. Unknown keys throw ContractError.
void merge_json(const nlohmann::json& j, TrainConfig& c);

/// Initial clicks followed by feedback rounds without gradient tracking.
/// Returns the interaction state the final, tracked forward pass consumes.
InteractionState simulate_training_clicks(const SynthSample& sample, const ICMFormer& model,
                                          const TrainConfig& cfg, Rng& rng);

struct StepStats {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::size_t clicks_used = 0;
  std::size_t skipped = 0;
};

void to_json(nlohmann::json& j, const StepStats& s);

/// Forward, batch-mean loss, backward and one Adam update.
StepStats train_step(std::span<const SynthSample> batch, ICMFormer& model, const TrainConfig& cfg,
                     AdamState& adam, Rng& rng, double lr);

/// Owns the optimizer state, RNG stream and step counter of a training run.
class Trainer {
 public:
  Trainer(ICMFormer& model, TrainConfig cfg, std::vector<SynthSample> data);

  StepStats step();
  /// Runs until `cfg.steps`, writing one JSON line per step to `log` if given.
  void run(std::ostream* log = nullptr);

  std::size_t steps_done() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

  /// Model parameters, optimizer moments, step counter and RNG state.
  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

 private:
  ICMFormer& model_;
  TrainConfig cfg_;
  std::vector<SynthSample> data_;
  Rng rng_;
  AdamState adam_;
  std::size_t step_ = 0;
};

}  // namespace icmf
