#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "icmf/tensor.hpp"

namespace icmf {

class Rng;

/// Ordered, named collection of trainable leaf tensors.
class ParameterSet {
 public:
  /// Registers `t` under `name` and marks it as requiring gradients.
  Tensor add(std::string name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  /// Total number of trainable scalars.
  std::size_t scalar_count() const;
  Tensor get(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Initialisation conventions: truncated normal (std 0.02) for projections,
/// zeros for biases and positional tables, ones for norm gains.
class Initializer {
 public:
  Initializer(ParameterSet& params, Rng& rng) : params_(params), rng_(rng) {}

  Tensor normal(const std::string& name, Shape shape, double std_dev = 0.02);
  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);

 private:
  ParameterSet& params_;
  Rng& rng_;
};

}  // namespace icmf
