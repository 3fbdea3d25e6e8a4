#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "icmf/tensor.hpp"

namespace icmf {

class Rng;

/// One scalar to probe: element `index` of `tensor`.
struct ProbeSite {
  Tensor tensor;
  std::size_t index = 0;
  std::string label;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_site;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
};

/// Compares reverse-mode gradients against central finite differences.
///
/// `loss_fn` must rebuild the loss from the current tensor values on every
/// call. The analytic pass runs under a fresh tape; the numeric passes run
/// with recording suspended. Error metric: |a - n| / max(1, |n|).
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<ProbeSite>& sites,
                                const GradCheckOptions& opts = {});

/// Every element of every tensor.
std::vector<ProbeSite> all_sites(const std::vector<Tensor>& tensors);

/// `count` sites drawn uniformly over the scalars of the named tensors.
std::vector<ProbeSite> sample_sites(const std::vector<std::pair<std::string, Tensor>>& tensors,
                                    std::size_t count, Rng& rng);

}  // namespace icmf
