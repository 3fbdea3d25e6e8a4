#include "icmf/config.hpp"

#include <algorithm>

#include "icmf/errors.hpp"

namespace icmf {

std::string to_string(WiringVariant v) {
  switch (v) {
    case WiringVariant::XOnlyYtoX: return "X_only_YtoX";
    case WiringVariant::XOnlyXtoY: return "X_only_XtoY";
    case WiringVariant::XYYtoX: return "XY_YtoX";
    case WiringVariant::XYXtoY: return "XY_XtoY";
  }
  return "?";
}

WiringVariant parse_variant(const std::string& s) {
  for (auto v : {WiringVariant::XOnlyYtoX, WiringVariant::XOnlyXtoY, WiringVariant::XYYtoX,
                 WiringVariant::XYXtoY})
    if (to_string(v) == s) return v;
  throw ContractError("unknown wiring variant '" + s +
                      "' (expected X_only_YtoX, X_only_XtoY, XY_YtoX or XY_XtoY)");
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::vit_base() {
  ModelConfig c;
  c.dim = 768;
  c.patch_size = 16;
  c.heads = 8;
  c.shared_depth = 6;
  c.cross_depth = 3;
  c.second_depth = 6;
  c.ffn_hidden = 3072;
  c.image_side = 448;
  c.neck_channels = {128, 256, 512, 1024};
  c.head_channels = 256;
  c.click_radius = 5;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "tiny") return tiny();
  if (name == "vit_base" || name == "full") return vit_base();
  throw ContractError("unknown model preset '" + name + "' (expected tiny or vit_base)");
}

void ModelConfig::validate() const {
  if (hierarchical)
    throw ContractError("hierarchical (Swin) backbone: unimplemented");
  if (dim == 0 || heads == 0 || dim % heads != 0)
    throw ContractError("dim " + std::to_string(dim) + " is not divisible by heads " +
                        std::to_string(heads));
  if (dim % 4 != 0) throw ContractError("dim must be a multiple of 4 for the neck ladders");
  if (patch_size == 0 || image_side == 0 || image_side % patch_size != 0)
    throw ContractError("image_side " + std::to_string(image_side) +
                        " is not divisible by patch_size " + std::to_string(patch_size));
  if (grid_side() % 2 != 0)
    throw ContractError("token grid side " + std::to_string(grid_side()) +
                        " must be even for the stride-2 pyramid level");
  if (patch_size % 4 != 0)
    throw ContractError("patch_size must be a multiple of 4 (finest pyramid level is grid x4)");
  if (cross_depth > 8) throw ContractError("cross_depth must be in [0, 8]");
  if (ffn_hidden == 0 || head_channels == 0) throw ContractError("zero-width layer in config");
  for (auto c : neck_channels)
    if (c == 0) throw ContractError("zero neck channel count");
  if (click_radius < 0) throw ContractError("click_radius must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ContractError("dropout must be in [0, 1)");
  if (!(ln_eps > 0.0)) throw ContractError("ln_eps must be > 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"dim", c.dim},
                     {"patch_size", c.patch_size},
                     {"heads", c.heads},
                     {"shared_depth", c.shared_depth},
                     {"cross_depth", c.cross_depth},
                     {"second_depth", c.second_depth},
                     {"ffn_hidden", c.ffn_hidden},
                     {"variant", to_string(c.variant)},
                     {"image_side", c.image_side},
                     {"neck_channels", c.neck_channels},
                     {"head_channels", c.head_channels},
                     {"click_radius", c.click_radius},
                     {"dropout", c.dropout},
                     {"ln_eps", c.ln_eps},
                     {"hierarchical", c.hierarchical}};
}

void merge_json(const nlohmann::json& j, ModelConfig& c) {
  static const char* known[] = {"dim",          "patch_size",    "heads",         "shared_depth",
                                "cross_depth",  "second_depth",  "ffn_hidden",    "variant",
                                "image_side",   "neck_channels", "head_channels", "click_radius",
                                "dropout",      "ln_eps",        "hierarchical"};
  if (!j.is_object()) throw ContractError("model config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw ContractError("unknown model config key '" + key + "'");
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("dim", c.dim);
  take("patch_size", c.patch_size);
  take("heads", c.heads);
  take("shared_depth", c.shared_depth);
  take("cross_depth", c.cross_depth);
  take("second_depth", c.second_depth);
  take("ffn_hidden", c.ffn_hidden);
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  take("image_side", c.image_side);
  take("neck_channels", c.neck_channels);
  take("head_channels", c.head_channels);
  take("click_radius", c.click_radius);
  take("dropout", c.dropout);
  take("ln_eps", c.ln_eps);
  take("hierarchical", c.hierarchical);
}

namespace {

std::size_t layer_norm_count(std::size_t d) { return 2 * d; }
std::size_t attention_count(std::size_t d) { return d * 3 * d + 3 * d + d * d + d; }
std::size_t ffn_count(std::size_t d, std::size_t h) { return d * h + h + h * d + d; }
std::size_t conv_count(std::size_t cin, std::size_t cout, std::size_t k) {
  return cout * cin * k * k + cout;
}

}  // namespace

std::size_t count_parameters(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.dim;
  const std::size_t embed = conv_count(3, d, c.patch_size) + c.tokens() * d;
  const std::size_t block = 2 * layer_norm_count(d) + attention_count(d) + ffn_count(d, c.ffn_hidden);
  const std::size_t cross =
      4 * layer_norm_count(d) + 2 * attention_count(d) + ffn_count(d, c.ffn_hidden);
  const auto& nc = c.neck_channels;
  const std::size_t neck = conv_count(d, d / 2, 2) + conv_count(d / 2, d / 4, 2) +
                           conv_count(d / 4, nc[0], 1) +                        // stride 4
                           conv_count(d, d / 2, 2) + conv_count(d / 2, nc[1], 1) +  // stride 8
                           conv_count(d, nc[2], 1) +                              // stride 16
                           conv_count(d, 2 * d, 2) + conv_count(2 * d, nc[3], 1);   // stride 32
  const std::size_t e = c.head_channels;
  std::size_t head = conv_count(4 * e, e, 1) + conv_count(e, 1, 1);
  for (auto ch : nc) head += conv_count(ch, e, 1);
  return 2 * embed + (c.shared_depth + c.second_depth) * block + c.cross_depth * cross + neck + head;
}

}  // namespace icmf
