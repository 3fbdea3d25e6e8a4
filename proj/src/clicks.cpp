#include "icmf/clicks.hpp"

#include <algorithm>

namespace icmf {

void to_json(nlohmann::json& j, const Click& c) {
  j = nlohmann::json{{"row", c.row}, {"col", c.col}, {"positive", c.positive}, {"index", c.index}};
}

void from_json(const nlohmann::json& j, Click& c) {
  j.at("row").get_to(c.row);
  j.at("col").get_to(c.col);
  j.at("positive").get_to(c.positive);
  c.index = j.value("index", 0);
}

void InteractionState::add_click(Click c, std::size_t h, std::size_t w) {
  if (c.row < 0 || c.col < 0 || static_cast<std::size_t>(c.row) >= h ||
      static_cast<std::size_t>(c.col) >= w)
    throw ContractError("click (" + std::to_string(c.row) + ", " + std::to_string(c.col) +
                        ") is outside the " + std::to_string(h) + "x" + std::to_string(w) + " image");
  if (clicks.empty() && !c.positive) throw ContractError("first click must be positive");
  c.index = clicks.empty() ? 0 : clicks.back().index + 1;
  clicks.push_back(c);
}

void InteractionState::reset() {
  clicks.clear();
  prev_mask.reset();
}

namespace {

void paint_disks(const std::vector<Click>& clicks, bool positive, std::size_t h, std::size_t w,
                 int radius, double* out) {
  const long r2 = static_cast<long>(radius) * radius;
  for (const auto& c : clicks) {
    if (c.positive != positive) continue;
    const long r0 = std::max<long>(0, c.row - radius);
    const long r1 = std::min<long>(static_cast<long>(h) - 1, c.row + radius);
    const long c0 = std::max<long>(0, c.col - radius);
    const long c1 = std::min<long>(static_cast<long>(w) - 1, c.col + radius);
    for (long r = r0; r <= r1; ++r)
      for (long col = c0; col <= c1; ++col) {
        const long dr = r - c.row, dc = col - c.col;
        if (dr * dr + dc * dc <= r2) out[r * static_cast<long>(w) + col] = 1.0;
      }
  }
}

}  // namespace

Tensor rasterize_disks(const std::vector<Click>& clicks, bool positive, std::size_t h,
                       std::size_t w, int radius) {
  if (radius < 0) throw ContractError("disk radius must be >= 0");
  std::vector<double> v(h * w, 0.0);
  paint_disks(clicks, positive, h, w, radius, v.data());
  return Tensor({1, h, w}, std::move(v));
}

Tensor encode_interaction(const InteractionState& state, std::size_t h, std::size_t w, int radius) {
  if (radius < 0) throw ContractError("disk radius must be >= 0");
  std::vector<double> v(3 * h * w, 0.0);
  paint_disks(state.clicks, true, h, w, radius, v.data());
  paint_disks(state.clicks, false, h, w, radius, v.data() + h * w);
  if (state.prev_mask) {
    const auto& m = *state.prev_mask;
    if (m.height != h || m.width != w)
      throw ShapeError("encode_interaction: previous mask is " + std::to_string(m.height) + "x" +
                       std::to_string(m.width) + ", expected " + std::to_string(h) + "x" +
                       std::to_string(w));
    for (std::size_t i = 0; i < h * w; ++i) v[2 * h * w + i] = m.bits[i] ? 1.0 : 0.0;
  }
  return Tensor({3, h, w}, std::move(v));
}

}  // namespace icmf
