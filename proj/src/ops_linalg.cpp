#include <algorithm>
#include <numeric>

#include "gemm.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

namespace {

Shape batch_of(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.shape()[a.rank() - 1] != b.shape()[b.rank() - 2])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const Shape ba = batch_of(a.shape());
  const Shape bb = batch_of(b.shape());
  if (!ba.empty() && !bb.empty() && ba != bb)
    throw ShapeError("matmul: batch dimensions differ in " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t n = b.shape()[b.rank() - 1];
  const Shape batch = ba.empty() ? bb : ba;
  const std::size_t nbatch = shape_numel(batch);
  const std::size_t sa = ba.empty() ? 0 : m * k;
  const std::size_t sb = bb.empty() ? 0 : k * n;

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nbatch * m * n, 0.0);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t t = 0; t < nbatch; ++t)
    detail::gemm_nn(m, n, k, ap + t * sa, bp + t * sb, out.data() + t * m * n);

  return record_op(std::move(out_shape), std::move(out), {a, b},
                   [a, b, m, n, k, nbatch, sa, sb](const Tensor&, std::span<const double> g) {
                     const double s = backward_fault("matmul");
                     std::vector<double> gs;
                     const double* gp = g.data();
                     if (s != 1.0) {
                       gs.assign(g.begin(), g.end());
                       for (auto& v : gs) v *= s;
                       gp = gs.data();
                     }
                     // dA = dC * B^T, dB = A^T * dC
                     if (auto ga = grad_sink(a); !ga.empty())
                       for (std::size_t t = 0; t < nbatch; ++t)
                         detail::gemm_nt(m, k, n, gp + t * m * n, b.values().data() + t * sb,
                                         ga.data() + t * sa);
                     if (auto gb = grad_sink(b); !gb.empty())
                       for (std::size_t t = 0; t < nbatch; ++t)
                         detail::gemm_tn(k, n, m, a.values().data() + t * sa, gp + t * m * n,
                                         gb.data() + t * sb);
                   });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  const auto& in_shape = a.shape();
  const std::size_t r = in_shape.size();
  if (order.size() != r) throw ShapeError("permute: order rank mismatch for " + shape_str(in_shape));
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    if (o >= r || seen[o]) throw ShapeError("permute: invalid axis order");
    seen[o] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[order[i]];

  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  // stride in the input for each output axis
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[order[i]];

  const std::size_t n = a.numel();
  std::vector<std::size_t> gather(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    gather[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }

  const auto& av = a.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[gather[i]];
  return record_op(std::move(out_shape), std::move(out), {a},
                   [a, gather = std::move(gather)](const Tensor&, std::span<const double> g) {
                     auto ga = grad_sink(a);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[gather[i]] += g[i];
                   });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> order(a.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[a.rank() - 1], order[a.rank() - 2]);
  return permute(a, order);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  return record_op(std::move(shape), a.values(), {a},
                   [a](const Tensor&, std::span<const double> g) {
                     auto ga = grad_sink(a);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   });
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = a.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis])
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                     " of " + shape_str(s));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t extent = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(outer * length * inner);
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.begin() + (o * extent + start) * inner, length * inner,
                out.begin() + o * length * inner);
  return record_op(std::move(out_shape), std::move(out), {a},
                   [a, outer, inner, extent, start, length](const Tensor&,
                                                            std::span<const double> g) {
                     auto ga = grad_sink(a);
                     for (std::size_t o = 0; o < outer; ++o)
                       for (std::size_t i = 0; i < length * inner; ++i)
                         ga[(o * extent + start) * inner + i] += g[o * length * inner + i];
                   });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of no tensors");
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(s0));
    total += s[axis];
  }
  const std::size_t outer = shape_numel(Shape(s0.begin(), s0.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s0.begin() + axis + 1, s0.end()));
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::vector<double> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis] * inner;
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * len, len, out.begin() + o * total * inner + off);
    offsets.push_back(off);
    off += len;
  }
  return record_op(std::move(out_shape), std::move(out), parts,
                   [parts, offsets, outer, inner, total, axis](const Tensor&,
                                                               std::span<const double> g) {
                     for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                       auto gp = grad_sink(parts[pi]);
                       if (gp.empty()) continue;
                       const std::size_t len = parts[pi].shape()[axis] * inner;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < len; ++i)
                           gp[o * len + i] += g[o * total * inner + offsets[pi] + i];
                     }
                   });
}

}  // namespace icmf
