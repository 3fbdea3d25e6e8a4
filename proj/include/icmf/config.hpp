#pragma once

#include <array>
#include <cstddef>
#include <string>

#include <nlohmann/json.hpp>

namespace icmf {

/// Which branches get the shared first-group pass and which way guidance flows.
/// X is the image branch, Y the click branch. "AtoB" means A guides B: B
/// supplies the queries, A the keys and values.
enum class WiringVariant { XOnlyYtoX, XOnlyXtoY, XYYtoX, XYXtoY };

std::string to_string(WiringVariant v);
WiringVariant parse_variant(const std::string& s);

/// Everything needed to construct the network.
struct ModelConfig {
  std::size_t dim = 64;
  std::size_t patch_size = 8;
  std::size_t heads = 4;
  std::size_t shared_depth = 2;
  std::size_t cross_depth = 1;
  std::size_t second_depth = 2;
  std::size_t ffn_hidden = 128;
  WiringVariant variant = WiringVariant::XYXtoY;
  std::size_t image_side = 64;
  std::array<std::size_t, 4> neck_channels{16, 32, 64, 128};
  std::size_t head_channels = 32;
  int click_radius = 2;
  double dropout = 0.0;
  double ln_eps = 1e-6;
  bool hierarchical = false;

  static ModelConfig tiny();
  /// ViT-B sized network at 448x448 input.
  static ModelConfig vit_base();
  static ModelConfig preset(const std::string& name);

  std::size_t grid_side() const { return image_side / patch_size; }
  std::size_t tokens() const { return grid_side() * grid_side(); }

  /// Throws ContractError on an inconsistent configuration.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep the values already in `c`.
void merge_json(const nlohmann::json& j, ModelConfig& c);

/// Exact number of trainable scalars of the network `c` describes.
std::size_t count_parameters(const ModelConfig& c);

}  // namespace icmf
