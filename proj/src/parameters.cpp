#include "icmf/parameters.hpp"

#include "icmf/rng.hpp"

namespace icmf {

Tensor ParameterSet::add(std::string name, Tensor t) {
  for (const auto& [existing, _] : entries_)
    if (existing == name) throw ContractError("duplicate parameter name '" + name + "'");
  t.set_requires_grad(true);
  entries_.emplace_back(std::move(name), t);
  return t;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

Tensor ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("no parameter named '" + name + "'");
}

void ParameterSet::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

Tensor Initializer::normal(const std::string& name, Shape shape, double std_dev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng_.truncated_normal(std_dev);
  return params_.add(name, Tensor(std::move(shape), std::move(v)));
}

Tensor Initializer::zeros(const std::string& name, Shape shape) {
  return params_.add(name, Tensor::zeros(std::move(shape)));
}

Tensor Initializer::ones(const std::string& name, Shape shape) {
  return params_.add(name, Tensor::ones(std::move(shape)));
}

}  // namespace icmf
