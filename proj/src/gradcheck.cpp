#include "icmf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "icmf/rng.hpp"

namespace icmf {

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<ProbeSite>& sites,
                                const GradCheckOptions& opts) {
  GradCheckReport report;
  for (const auto& s : sites) Tensor(s.tensor).zero_grad();

  std::vector<double> analytic(sites.size(), 0.0);
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const auto g = sites[i].tensor.grad();
      analytic[i] = g.empty() ? 0.0 : g[sites[i].index];
    }
  }

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    Tensor t = sites[i].tensor;
    auto data = t.mutable_data();
    const double original = data[sites[i].index];
    data[sites[i].index] = original + opts.step;
    const double up = loss_fn().item();
    data[sites[i].index] = original - opts.step;
    const double down = loss_fn().item();
    data[sites[i].index] = original;

    const double numeric = (up - down) / (2.0 * opts.step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    ++report.checked;
    if (!(err <= report.max_rel_error)) {
      report.max_rel_error = std::isnan(err) ? INFINITY : err;
      report.worst_site = sites[i].label + "[" + std::to_string(sites[i].index) + "]";
    }
  }
  report.passed = report.max_rel_error <= opts.tolerance;
  for (const auto& s : sites) Tensor(s.tensor).zero_grad();
  return report;
}

std::vector<ProbeSite> all_sites(const std::vector<Tensor>& tensors) {
  std::vector<ProbeSite> out;
  for (std::size_t t = 0; t < tensors.size(); ++t)
    for (std::size_t i = 0; i < tensors[t].numel(); ++i)
      out.push_back({tensors[t], i, "input" + std::to_string(t)});
  return out;
}

std::vector<ProbeSite> sample_sites(const std::vector<std::pair<std::string, Tensor>>& tensors,
                                    std::size_t count, Rng& rng) {
  std::size_t total = 0;
  for (const auto& [_, t] : tensors) total += t.numel();
  std::vector<ProbeSite> out;
  if (total == 0) return out;
  for (std::size_t c = 0; c < count; ++c) {
    std::size_t flat = rng.below(total);
    for (const auto& [name, t] : tensors) {
      if (flat < t.numel()) {
        out.push_back({t, flat, name});
        break;
      }
      flat -= t.numel();
    }
  }
  return out;
}

}  // namespace icmf
