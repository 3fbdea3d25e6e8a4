#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "icmf/errors.hpp"

namespace icmf {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

/// Dense row-major array of doubles with optional gradient tracking.
///
/// Tensor is a cheap handle; copies share storage. Data is only mutated by
/// the optimizer (through mutable_data on leaves) and by initialisers.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  const std::vector<double>& values() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const;
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values without gradient tracking.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend Tensor record_op(Shape, std::vector<double>, std::vector<Tensor>,
                          std::function<void(const Tensor&, std::span<const double>)>);
};

/// Ordered record of differentiable operations executed on one thread.
///
/// Constructing a Tape installs it as the thread's recording target; the
/// destructor restores the previously installed one. Operations whose inputs
/// require gradients append a node while a tape is installed.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& output, std::span<const double> grad_out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse traversal from a scalar loss. Accumulates into leaf gradients.
  /// A tape can be traversed once.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* current();

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

  std::vector<Node> nodes_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;

  friend Tensor record_op(Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
};

/// Suspends recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

/// Backward on the thread's current tape.
void backward(const Tensor& loss);

/// Builds an op result. If a tape is installed and any input requires
/// gradients, the result is tracked and `fn` is recorded as its backward rule.
Tensor record_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                 Tape::BackwardFn fn);

/// Gradient buffer of a tensor for accumulation inside a backward rule, or an
/// empty span if the tensor does not take gradients.
std::span<double> grad_sink(const Tensor& t);

/// Test hook: scales the backward rule of the named op by `factor`.
/// An empty name clears the fault.
void set_backward_fault(const std::string& op, double factor = 1.5);
double backward_fault(const char* op);

// ---------------------------------------------------------------- ops

Tensor add(const Tensor& a, const Tensor& b);  // b's shape may be a suffix of a's
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // b's shape may be a suffix of a's
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // swaps the last two axes
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor reshape(const Tensor& a, Shape shape);
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// x: [c_in, h, w]; weight: [c_out, c_in, k, k]; bias: [c_out] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
/// x: [c_in, h, w]; weight: [c_in, c_out, k, k]; output side (h-1)*stride + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride);
/// Bilinear resize by an integer factor, half-pixel centres (align_corners=false).
Tensor upsample_bilinear(const Tensor& x, std::size_t factor);

}  // namespace icmf
