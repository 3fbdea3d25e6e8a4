#include <algorithm>
#include <cmath>

#include "gemm.hpp"
#include "icmf/rng.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " for " + shape_str(s));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t extent = s[axis];
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * extent * inner + i;
      double mx = xv[base];
      for (std::size_t e = 1; e < extent; ++e) mx = std::max(mx, xv[base + e * inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < extent; ++e) {
        const double v = std::exp(xv[base + e * inner] - mx);
        out[base + e * inner] = v;
        total += v;
      }
      const double inv = 1.0 / total;
      for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] *= inv;
    }
  }
  return record_op(s, std::move(out), {x},
                   [x, outer, extent, inner](const Tensor& y, std::span<const double> g) {
                     auto gx = grad_sink(x);
                     const double sc = backward_fault("softmax");
                     const auto& yv = y.values();
                     for (std::size_t o = 0; o < outer; ++o) {
                       for (std::size_t i = 0; i < inner; ++i) {
                         const std::size_t base = o * extent * inner + i;
                         double dot = 0.0;
                         for (std::size_t e = 0; e < extent; ++e)
                           dot += g[base + e * inner] * yv[base + e * inner];
                         for (std::size_t e = 0; e < extent; ++e) {
                           const std::size_t idx = base + e * inner;
                           gx[idx] += sc * yv[idx] * (g[idx] - dot);
                         }
                       }
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " for input " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return record_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tensor&, std::span<const double> g) {
        const double sc = backward_fault("layer_norm");
        const auto& gv = gamma.values();
        auto gg = grad_sink(gamma);
        auto gb = grad_sink(beta);
        auto gx = grad_sink(x);
        std::vector<double> gh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* hr = xhat.data() + r * d;
          if (!gg.empty())
            for (std::size_t j = 0; j < d; ++j) gg[j] += sc * gr[j] * hr[j];
          if (!gb.empty())
            for (std::size_t j = 0; j < d; ++j) gb[j] += sc * gr[j];
          if (gx.empty()) continue;
          double mean_gh = 0.0, mean_ghh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            gh[j] = gr[j] * gv[j];
            mean_gh += gh[j];
            mean_ghh += gh[j] * hr[j];
          }
          mean_gh /= static_cast<double>(d);
          mean_ghh /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += sc * inv_std[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
        }
      });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * mask[i];
  return record_op(x.shape(), std::move(out), {x},
                   [x, mask = std::move(mask)](const Tensor&, std::span<const double> g) {
                     auto gx = grad_sink(x);
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                   });
}

// ---------------------------------------------------------------- convolution

namespace {

struct ConvGeom {
  std::size_t cin, h, w, k, stride, pad, hout, wout;
};

void im2col(const double* x, const ConvGeom& c, double* cols) {
  const std::size_t pix = c.hout * c.wout;
  for (std::size_t ci = 0; ci < c.cin; ++ci)
    for (std::size_t ki = 0; ki < c.k; ++ki)
      for (std::size_t kj = 0; kj < c.k; ++kj) {
        double* row = cols + ((ci * c.k + ki) * c.k + kj) * pix;
        for (std::size_t oh = 0; oh < c.hout; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * c.stride + ki) -
                          static_cast<std::ptrdiff_t>(c.pad);
          for (std::size_t ow = 0; ow < c.wout; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * c.stride + kj) -
                            static_cast<std::ptrdiff_t>(c.pad);
            const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(c.h) &&
                                iw < static_cast<std::ptrdiff_t>(c.w);
            row[oh * c.wout + ow] = inside ? x[(ci * c.h + ih) * c.w + iw] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvGeom& c, double* gx) {
  const std::size_t pix = c.hout * c.wout;
  for (std::size_t ci = 0; ci < c.cin; ++ci)
    for (std::size_t ki = 0; ki < c.k; ++ki)
      for (std::size_t kj = 0; kj < c.k; ++kj) {
        const double* row = cols + ((ci * c.k + ki) * c.k + kj) * pix;
        for (std::size_t oh = 0; oh < c.hout; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * c.stride + ki) -
                          static_cast<std::ptrdiff_t>(c.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(c.h)) continue;
          for (std::size_t ow = 0; ow < c.wout; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * c.stride + kj) -
                            static_cast<std::ptrdiff_t>(c.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(c.w)) continue;
            gx[(ci * c.h + ih) * c.w + iw] += row[oh * c.wout + ow];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) ||
      weight.dim(2) != weight.dim(3))
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " with weight " +
                     shape_str(weight.shape()));
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t cout = weight.dim(0);
  if (bias.defined() && bias.numel() != cout)
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(cout) +
                     " output channels");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), weight.dim(2), stride, padding, 0, 0};
  const std::size_t span_h = g.h + 2 * padding;
  const std::size_t span_w = g.w + 2 * padding;
  if (span_h < g.k || span_w < g.k || (span_h - g.k) % stride != 0 || (span_w - g.k) % stride != 0)
    throw ShapeError("conv2d: kernel " + std::to_string(g.k) + " stride " +
                     std::to_string(stride) + " padding " + std::to_string(padding) +
                     " does not tile input " + shape_str(x.shape()));
  g.hout = (span_h - g.k) / stride + 1;
  g.wout = (span_w - g.k) / stride + 1;
  const std::size_t kk = g.cin * g.k * g.k;
  const std::size_t pix = g.hout * g.wout;

  std::vector<double> cols(kk * pix);
  im2col(x.values().data(), g, cols.data());
  std::vector<double> out(cout * pix, 0.0);
  if (bias.defined())
    for (std::size_t co = 0; co < cout; ++co)
      std::fill_n(out.begin() + co * pix, pix, bias.values()[co]);
  detail::gemm_nn(cout, pix, kk, weight.values().data(), cols.data(), out.data());

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record_op({cout, g.hout, g.wout}, std::move(out), std::move(inputs),
                   [x, weight, bias, g, cout, kk, pix, cols = std::move(cols)](
                       const Tensor&, std::span<const double> gout) {
                     const double sc = backward_fault("conv2d");
                     std::vector<double> gs(gout.begin(), gout.end());
                     if (sc != 1.0)
                       for (auto& v : gs) v *= sc;
                     if (auto gw = grad_sink(weight); !gw.empty())
                       detail::gemm_nt(cout, kk, pix, gs.data(), cols.data(), gw.data());
                     if (bias.defined())
                       if (auto gb = grad_sink(bias); !gb.empty())
                         for (std::size_t co = 0; co < cout; ++co)
                           for (std::size_t p = 0; p < pix; ++p) gb[co] += gs[co * pix + p];
                     if (auto gx = grad_sink(x); !gx.empty()) {
                       std::vector<double> gcols(kk * pix, 0.0);
                       detail::gemm_tn(kk, pix, cout, weight.values().data(), gs.data(),
                                       gcols.data());
                       col2im(gcols.data(), g, gx.data());
                     }
                   });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != x.dim(0) ||
      weight.dim(2) != weight.dim(3))
    throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) + " with weight " +
                     shape_str(weight.shape()));
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  if (bias.defined() && bias.numel() != cout)
    throw ShapeError("conv_transpose2d: bias " + shape_str(bias.shape()));
  const std::size_t hout = (h - 1) * stride + k;
  const std::size_t wout = (w - 1) * stride + k;
  const std::size_t rows = cout * k * k;
  const std::size_t hw = h * w;

  // cols[(co,ki,kj), (ih,iw)] = sum_ci W[ci,(co,ki,kj)] x[ci,(ih,iw)]
  std::vector<double> cols(rows * hw, 0.0);
  detail::gemm_tn(rows, hw, cin, weight.values().data(), x.values().data(), cols.data());
  std::vector<double> out(cout * hout * wout, 0.0);
  for (std::size_t co = 0; co < cout; ++co) {
    const double b = bias.defined() ? bias.values()[co] : 0.0;
    std::fill_n(out.begin() + co * hout * wout, hout * wout, b);
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols.data() + ((co * k + ki) * k + kj) * hw;
        for (std::size_t ih = 0; ih < h; ++ih)
          for (std::size_t iw = 0; iw < w; ++iw)
            out[(co * hout + ih * stride + ki) * wout + iw * stride + kj] += row[ih * w + iw];
      }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record_op(
      {cout, hout, wout}, std::move(out), std::move(inputs),
      [x, weight, bias, cin, h, w, cout, k, stride, hout, wout, rows, hw](
          const Tensor&, std::span<const double> gout) {
        const double sc = backward_fault("conv_transpose2d");
        std::vector<double> gcols(rows * hw);
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
              double* row = gcols.data() + ((co * k + ki) * k + kj) * hw;
              for (std::size_t ih = 0; ih < h; ++ih)
                for (std::size_t iw = 0; iw < w; ++iw)
                  row[ih * w + iw] =
                      sc * gout[(co * hout + ih * stride + ki) * wout + iw * stride + kj];
            }
        if (bias.defined())
          if (auto gb = grad_sink(bias); !gb.empty())
            for (std::size_t co = 0; co < cout; ++co)
              for (std::size_t p = 0; p < hout * wout; ++p) gb[co] += sc * gout[co * hout * wout + p];
        if (auto gx = grad_sink(x); !gx.empty())
          detail::gemm_nn(cin, hw, rows, weight.values().data(), gcols.data(), gx.data());
        if (auto gw = grad_sink(weight); !gw.empty())
          detail::gemm_nt(cin, rows, hw, x.values().data(), gcols.data(), gw.data());
      });
}

// ---------------------------------------------------------------- resize

namespace {

struct Tap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<Tap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double l = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t factor) {
  if (x.rank() != 3) throw ShapeError("upsample_bilinear expects [c,h,w], got " + shape_str(x.shape()));
  if (factor == 0) throw ContractError("upsample factor must be >= 1");
  if (factor == 1) return reshape(x, x.shape());
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ho = h * factor, wo = w * factor;
  auto ty = bilinear_taps(h, factor);
  auto tx = bilinear_taps(w, factor);
  const auto& xv = x.values();
  std::vector<double> out(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * h * w;
    double* dst = out.data() + ch * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const auto& a = ty[oy];
      const double* r0 = src + a.i0 * w;
      const double* r1 = src + a.i1 * w;
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const auto& b = tx[ox];
        dst[oy * wo + ox] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                            a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
      }
    }
  }
  return record_op({c, ho, wo}, std::move(out), {x},
                   [x, c, h, w, ho, wo, ty = std::move(ty), tx = std::move(tx)](
                       const Tensor&, std::span<const double> g) {
                     auto gx = grad_sink(x);
                     const double sc = backward_fault("upsample_bilinear");
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       double* dst = gx.data() + ch * h * w;
                       const double* go = g.data() + ch * ho * wo;
                       for (std::size_t oy = 0; oy < ho; ++oy) {
                         const auto& a = ty[oy];
                         for (std::size_t ox = 0; ox < wo; ++ox) {
                           const auto& b = tx[ox];
                           const double v = sc * go[oy * wo + ox];
                           dst[a.i0 * w + b.i0] += v * a.w0 * b.w0;
                           dst[a.i0 * w + b.i1] += v * a.w0 * b.w1;
                           dst[a.i1 * w + b.i0] += v * a.w1 * b.w0;
                           dst[a.i1 * w + b.i1] += v * a.w1 * b.w1;
                         }
                       }
                     }
                   });
}

}  // namespace icmf
