#pragma once

#include <cstddef>
#include <cstdint>

#include "icmf/config.hpp"
#include "icmf/gradcheck.hpp"

namespace icmf {

struct ModelGradcheckOptions {
  std::size_t n_params = 20;  // sampled scalar parameters
  double perturb = 0.05;      // uniform noise added to every parameter first
  std::uint64_t seed = 0;
  GradCheckOptions fd{};
};

/// Finite-difference check of the full training loss (forward with a
/// two-click interaction and a previous mask, focal loss with its complete
/// derivative, summed over pixels) with respect to sampled model parameters.
///
/// The noise keeps biases and positional tables away from their zero
/// initialisation so every path carries gradient. Refuses dim > 128.
GradCheckReport gradcheck_model(const ModelConfig& cfg, const ModelGradcheckOptions& opts = {});

}  // namespace icmf
