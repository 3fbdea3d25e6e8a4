#include "icmf/click_oracle.hpp"

#include <algorithm>
#include <limits>

#include "icmf/rng.hpp"

namespace icmf {

BitMask ErrorRegion::to_mask() const {
  BitMask m(height, width);
  for (const auto& p : pixels) m.set(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col));
  return m;
}

std::vector<ErrorRegion> error_regions(const BitMask& pred, const BitMask& gt) {
  if (!pred.same_shape(gt)) throw ShapeError("error_regions: prediction and ground truth differ in shape");
  const std::size_t h = gt.height, w = gt.width;
  std::vector<std::uint8_t> err(h * w);
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = (pred.bits[i] != 0) != (gt.bits[i] != 0);

  std::vector<std::uint8_t> seen(h * w, 0);
  std::vector<ErrorRegion> regions;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!err[start] || seen[start]) continue;
    ErrorRegion reg;
    reg.height = h;
    reg.width = w;
    reg.kind = gt.bits[start] ? ErrorKind::FalseNegative : ErrorKind::FalsePositive;
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t r = i / w, c = i % w;
      reg.pixels.push_back({static_cast<int>(r), static_cast<int>(c)});
      auto visit = [&](std::size_t j) {
        if (err[j] && !seen[j] && gt.bits[j] == gt.bits[start]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (r > 0) visit(i - w);
      if (r + 1 < h) visit(i + w);
      if (c > 0) visit(i - 1);
      if (c + 1 < w) visit(i + 1);
    }
    std::sort(reg.pixels.begin(), reg.pixels.end());
    regions.push_back(std::move(reg));
  }
  // Regions are discovered in row-major order of their first pixel, so a
  // stable sort on area keeps the tie rule.
  std::stable_sort(regions.begin(), regions.end(),
                   [](const ErrorRegion& a, const ErrorRegion& b) { return a.area() > b.area(); });
  return regions;
}

BitMask erode(const BitMask& mask, int iterations) {
  if (iterations < 0) throw ContractError("erode: iterations must be >= 0");
  BitMask cur = mask;
  const std::size_t h = mask.height, w = mask.width;
  for (int it = 0; it < iterations; ++it) {
    BitMask next(h, w);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const bool keep = cur.at(r, c) && r > 0 && cur.at(r - 1, c) && r + 1 < h &&
                          cur.at(r + 1, c) && c > 0 && cur.at(r, c - 1) && c + 1 < w &&
                          cur.at(r, c + 1);
        next.bits[r * w + c] = keep ? 1 : 0;
      }
    cur = std::move(next);
  }
  return cur;
}

namespace {

// 1-D squared distance transform of sampled function f (Felzenszwalb & Huttenlocher).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
            std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == inf) continue;
    if (f[v[k]] == inf) {  // only infinite parabolas so far
      v[k] = q;
      continue;
    }
    double s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
               (2.0 * (q - v[k]));
    while (s <= z[k]) {
      --k;
      s = ((f[q] + static_cast<double>(q) * q) - (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
          (2.0 * (q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = f[v[k]] == inf ? inf : dq * dq + f[v[k]];
  }
}

}  // namespace

std::vector<std::int64_t> squared_distance_transform(const BitMask& mask) {
  // Work on a one-pixel background frame so the image border acts as background.
  const std::size_t h = mask.height + 2, w = mask.width + 2;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(h * w, 0.0);
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c)
      grid[(r + 1) * w + c + 1] = mask.at(r, c) ? inf : 0.0;

  const std::size_t n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  f.resize(h);
  d.resize(h);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) f[r] = grid[r * w + c];
    edt_1d(f, d, v, z);
    for (std::size_t r = 0; r < h; ++r) grid[r * w + c] = d[r];
  }
  f.resize(w);
  d.resize(w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) f[c] = grid[r * w + c];
    edt_1d(f, d, v, z);
    for (std::size_t c = 0; c < w; ++c) grid[r * w + c] = d[c];
  }

  std::vector<std::int64_t> out(mask.height * mask.width);
  for (std::size_t r = 0; r < mask.height; ++r)
    for (std::size_t c = 0; c < mask.width; ++c)
      out[r * mask.width + c] = static_cast<std::int64_t>(grid[(r + 1) * w + c + 1] + 0.5);
  return out;
}

Pixel distance_argmax(const BitMask& mask) {
  const auto dt = squared_distance_transform(mask);
  std::int64_t best = 0;
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < dt.size(); ++i)
    if (dt[i] > best) {
      best = dt[i];
      best_i = i;
    }
  if (best == 0) throw ContractError("distance_argmax on an empty mask");
  return {static_cast<int>(best_i / mask.width), static_cast<int>(best_i % mask.width)};
}

Pixel region_center(const ErrorRegion& region) {
  if (region.pixels.empty()) throw ContractError("region_center on an empty region");
  return distance_argmax(region.to_mask());
}

std::optional<Click> next_click(const BitMask& pred, const BitMask& gt, const ClickPolicy& policy,
                                Rng* rng) {
  const auto regions = error_regions(pred, gt);
  if (regions.empty()) return std::nullopt;
  const ErrorRegion& target = regions.front();
  const BitMask region_mask = target.to_mask();
  BitMask area = erode(region_mask, policy.erosion_iterations);
  if (area.empty_mask()) area = region_mask;

  Pixel chosen;
  bool border_pick = false;
  if (policy.mode == ClickPolicy::Mode::TrainMixed) {
    if (!rng) throw ContractError("TrainMixed click policy needs an rng");
    border_pick = rng->bernoulli(policy.border_prob);
  }
  const auto dt = squared_distance_transform(area);
  if (border_pick) {
    const std::int64_t band2 = static_cast<std::int64_t>(policy.border_band) * policy.border_band;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < dt.size(); ++i)
      if (dt[i] > 0 && dt[i] <= band2) candidates.push_back(i);
    const std::size_t pick = candidates[rng->below(candidates.size())];
    chosen = {static_cast<int>(pick / gt.width), static_cast<int>(pick % gt.width)};
  } else {
    std::int64_t best = 0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < dt.size(); ++i)
      if (dt[i] > best) {
        best = dt[i];
        best_i = i;
      }
    chosen = {static_cast<int>(best_i / gt.width), static_cast<int>(best_i % gt.width)};
  }
  return Click{chosen.row, chosen.col, target.kind == ErrorKind::FalseNegative, 0};
}

Click first_click(const BitMask& gt) {
  if (gt.empty_mask()) throw ContractError("first_click needs a non-empty ground-truth mask");
  const Pixel p = distance_argmax(gt);
  return Click{p.row, p.col, true, 0};
}

}  // namespace icmf
