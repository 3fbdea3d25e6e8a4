#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "icmf/clicks.hpp"
#include "icmf/mask.hpp"

namespace icmf {

class Rng;

struct Pixel {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

enum class ErrorKind { FalseNegative, FalsePositive };

/// A 4-connected component of pred XOR gt. Pixels are sorted row-major.
struct ErrorRegion {
  std::vector<Pixel> pixels;
  ErrorKind kind = ErrorKind::FalseNegative;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t area() const { return pixels.size(); }
  BitMask to_mask() const;
};

/// Components sorted by area (descending), ties by smallest top-left pixel.
std::vector<ErrorRegion> error_regions(const BitMask& pred, const BitMask& gt);

/// Erosion with the 3x3 cross; pixels outside the image count as background.
BitMask erode(const BitMask& mask, int iterations);

/// Squared Euclidean distance from each foreground pixel to the nearest
/// background pixel, where everything outside the image is background.
/// Background pixels get 0. Exact (lower envelope of parabolas).
std::vector<std::int64_t> squared_distance_transform(const BitMask& mask);

/// Foreground pixel with the largest distance to the background; ties go to
/// the smallest (row, col). Throws ContractError on an empty mask.
Pixel distance_argmax(const BitMask& mask);

Pixel region_center(const ErrorRegion& region);

struct ClickPolicy {
  enum class Mode { EvalDeterministic, TrainMixed };
  Mode mode = Mode::EvalDeterministic;
  double border_prob = 0.5;
  int border_band = 2;          // near-border means distance <= border_band
  int erosion_iterations = 1;

  static ClickPolicy eval() { return {}; }
  static ClickPolicy train(double border_prob = 0.5) {
    return {Mode::TrainMixed, border_prob, 2, 1};
  }
};

/// Next simulated click against the largest error region, or nullopt when
/// pred == gt. TrainMixed needs an rng.
std::optional<Click> next_click(const BitMask& pred, const BitMask& gt, const ClickPolicy& policy,
                                Rng* rng = nullptr);

/// Positive click at the distance-transform maximum of the whole gt mask.
Click first_click(const BitMask& gt);

}  // namespace icmf
