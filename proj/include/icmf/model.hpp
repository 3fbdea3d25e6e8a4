#pragma once

#include <memory>
#include <string>

#include "icmf/checkpoint.hpp"
#include "icmf/clicks.hpp"
#include "icmf/config.hpp"
#include "icmf/cross_modality.hpp"
#include "icmf/parameters.hpp"
#include "icmf/seg_head.hpp"

namespace icmf {

class Rng;

/// Two-branch backbone, neck and head.
class ICMFormer {
 public:
  ICMFormer(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const BackboneParams& backbone() const { return backbone_; }
  const NeckParams& neck() const { return neck_; }
  const HeadParams& head() const { return head_; }

  /// image, interaction: [3, side, side] -> probability [1, side, side].
  Tensor forward(const Tensor& image, const Tensor& interaction, const ForwardContext& ctx = {},
                 BackboneTrace* trace = nullptr) const;

  /// Adds parameter tensors and the config to `ckpt`.
  void save_to(Checkpoint& ckpt) const;
  /// Copies parameter values from `ckpt`. The stored config must match.
  void load_from(const Checkpoint& ckpt);

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  BackboneParams backbone_;
  NeckParams neck_;
  HeadParams head_;
};

/// Builds a model whose configuration comes from a checkpoint.
std::unique_ptr<ICMFormer> load_model(const Checkpoint& ckpt);

/// Anything that maps (image, interaction state) to a foreground probability.
/// `reference` is a ground-truth mask that only oracle stubs consult.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual Tensor predict(const Tensor& image, const InteractionState& state,
                         const BitMask* reference) const = 0;
};

/// Runs the network without gradient tracking.
class ModelSegmenter : public Segmenter {
 public:
  explicit ModelSegmenter(const ICMFormer& model) : model_(model) {}
  Tensor predict(const Tensor& image, const InteractionState& state,
                 const BitMask* reference) const override;

 private:
  const ICMFormer& model_;
};

/// Returns the reference mask regardless of input.
class OracleSegmenter : public Segmenter {
 public:
  Tensor predict(const Tensor& image, const InteractionState& state,
                 const BitMask* reference) const override;
};

/// Always predicts background.
class EmptySegmenter : public Segmenter {
 public:
  Tensor predict(const Tensor& image, const InteractionState& state,
                 const BitMask* reference) const override;
};

/// Predicts the union of the first k image quadrants (TL, TR, BL, BR) after k clicks.
class QuadrantSegmenter : public Segmenter {
 public:
  Tensor predict(const Tensor& image, const InteractionState& state,
                 const BitMask* reference) const override;
};

}  // namespace icmf
