#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "icmf/mask.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

struct Click {
  int row = 0;
  int col = 0;
  bool positive = true;
  int index = 0;

  friend bool operator==(const Click&, const Click&) = default;
};

/// {"row": int, "col": int, "positive": bool}; "index" is written but optional on input.
void to_json(nlohmann::json& j, const Click& c);
void from_json(const nlohmann::json& j, Click& c);

/// Ordered clicks plus the previous binarized prediction (absent before the first round).
struct InteractionState {
  std::vector<Click> clicks;
  std::optional<BitMask> prev_mask;

  /// Appends a click, assigning the next index. Throws ContractError if the
  /// click is outside an h x w image or the first click is negative.
  void add_click(Click c, std::size_t h, std::size_t w);
  void reset();
};

/// Pixel (r,c) is 1 iff some click of the requested polarity satisfies
/// (r-row)^2 + (c-col)^2 <= radius^2.
Tensor rasterize_disks(const std::vector<Click>& clicks, bool positive, std::size_t h,
                       std::size_t w, int radius);

/// Channels: positive disks, negative disks, previous mask (zeros when absent).
Tensor encode_interaction(const InteractionState& state, std::size_t h, std::size_t w, int radius);

}  // namespace icmf
