#include "icmf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace icmf {

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero extent");
  if (shape_numel(shape) != data.size())
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }
Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}
Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return impl_->shape[axis];
}
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }
const std::vector<double>& Tensor::values() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

// ---------------------------------------------------------------- Tape

namespace {
thread_local Tape* g_current_tape = nullptr;

struct Fault {
  std::string op;
  double factor = 1.0;
};
Fault& fault() {
  static Fault f;
  return f;
}
}  // namespace

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }
Tape::~Tape() { g_current_tape = previous_; }
Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
  if (consumed_) throw ContractError("recording onto a tape that was already traversed");
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (nodes_.empty()) throw ContractError("backward on an empty tape");
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any tracked tensor");
  consumed_ = true;

  auto seed = grad_sink(loss);
  seed[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto& g = it->output.impl()->grad;
    if (g.empty()) continue;  // not on a path to the loss
    it->backward(it->output, g);
  }
  // Free intermediate buffers; leaves keep their gradients.
  for (auto& node : nodes_) {
    node.output.impl()->grad.clear();
    node.output.impl()->grad.shrink_to_fit();
  }
  nodes_.clear();
}

void backward(const Tensor& loss) {
  auto* tape = Tape::current();
  if (!tape) throw ContractError("backward without an installed tape");
  tape->backward(loss);
}

NoGradGuard::NoGradGuard() : saved_(g_current_tape) { g_current_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_current_tape = saved_; }

Tensor record_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                 Tape::BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data));
  auto* tape = Tape::current();
  if (!tape) return out;
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!tracked) return out;
  out.impl_->requires_grad = true;
  tape->record(std::move(inputs), out, std::move(fn));
  return out;
}

std::span<double> grad_sink(const Tensor& t) {
  if (!t.requires_grad()) return {};
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.impl()->data.size(), 0.0);
  return g;
}

void set_backward_fault(const std::string& op, double factor) {
  fault().op = op;
  fault().factor = op.empty() ? 1.0 : factor;
}

double backward_fault(const char* op) {
  const auto& f = fault();
  if (f.op.empty() || f.op != op) return 1.0;
  return f.factor;
}

// ---------------------------------------------------------------- elementwise

namespace {

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), full.rbegin());
}

void check_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (!is_suffix(a.shape(), b.shape()))
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                     shape_str(a.shape()));
}

template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return record_op(x.shape(), std::move(out), {x},
                   [x, df, name](const Tensor& y, std::span<const double> g) {
                     auto gx = grad_sink(x);
                     if (gx.empty()) return;
                     const double s = backward_fault(name);
                     const auto& xv = x.values();
                     const auto& yv = y.values();
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * g[i] * df(xv[i], yv[i]);
                   });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast("add", a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t nb = bv.size();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); i += nb)
    for (std::size_t j = 0; j < nb; ++j) out[i + j] = av[i + j] + bv[j];
  return record_op(a.shape(), std::move(out), {a, b},
                   [a, b](const Tensor&, std::span<const double> g) {
                     const double s = backward_fault("add");
                     if (auto ga = grad_sink(a); !ga.empty())
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                     if (auto gb = grad_sink(b); !gb.empty()) {
                       const std::size_t nb = gb.size();
                       for (std::size_t i = 0; i < g.size(); i += nb)
                         for (std::size_t j = 0; j < nb; ++j) gb[j] += s * g[i + j];
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return record_op(a.shape(), std::move(out), {a, b},
                   [a, b](const Tensor&, std::span<const double> g) {
                     if (auto ga = grad_sink(a); !ga.empty())
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     if (auto gb = grad_sink(b); !gb.empty())
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast("mul", a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t nb = bv.size();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); i += nb)
    for (std::size_t j = 0; j < nb; ++j) out[i + j] = av[i + j] * bv[j];
  return record_op(a.shape(), std::move(out), {a, b},
                   [a, b](const Tensor&, std::span<const double> g) {
                     const double s = backward_fault("mul");
                     const auto& av = a.values();
                     const auto& bv = b.values();
                     const std::size_t nb = bv.size();
                     if (auto ga = grad_sink(a); !ga.empty())
                       for (std::size_t i = 0; i < g.size(); i += nb)
                         for (std::size_t j = 0; j < nb; ++j) ga[i + j] += s * g[i + j] * bv[j];
                     if (auto gb = grad_sink(b); !gb.empty())
                       for (std::size_t i = 0; i < g.size(); i += nb)
                         for (std::size_t j = 0; j < nb; ++j) gb[j] += s * g[i + j] * av[i + j];
                   });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return record_op({1}, {acc}, {x}, [x](const Tensor&, std::span<const double> g) {
    auto gx = grad_sink(x);
    const double s = backward_fault("sum") * g[0];
    for (auto& v : gx) v += s;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace icmf
