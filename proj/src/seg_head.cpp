#include "icmf/seg_head.hpp"

namespace icmf {

namespace {

NeckLayer make_layer(Initializer& init, const std::string& name, NeckLayer::Kind kind,
                     std::size_t cin, std::size_t cout) {
  NeckLayer l{kind, {}, {}};
  switch (kind) {
    case NeckLayer::Kind::TransposedUp2:
      l.weight = init.normal(name + ".weight", {cin, cout, 2, 2});
      break;
    case NeckLayer::Kind::Pointwise:
      l.weight = init.normal(name + ".weight", {cout, cin, 1, 1});
      break;
    case NeckLayer::Kind::StridedDown2:
      l.weight = init.normal(name + ".weight", {cout, cin, 2, 2});
      break;
  }
  l.bias = init.zeros(name + ".bias", {cout});
  return l;
}

Tensor apply_layer(const Tensor& x, const NeckLayer& l) {
  switch (l.kind) {
    case NeckLayer::Kind::TransposedUp2: return conv_transpose2d(x, l.weight, l.bias, 2);
    case NeckLayer::Kind::Pointwise: return conv2d(x, l.weight, l.bias, 1, 0);
    case NeckLayer::Kind::StridedDown2: return conv2d(x, l.weight, l.bias, 2, 0);
  }
  return x;
}

}  // namespace

NeckParams NeckParams::create(Initializer& init, const ModelConfig& cfg) {
  using K = NeckLayer::Kind;
  const std::size_t d = cfg.dim;
  const auto& c = cfg.neck_channels;
  NeckParams p;
  p.levels[0] = {make_layer(init, "neck.0.0", K::TransposedUp2, d, d / 2),
                 make_layer(init, "neck.0.1", K::TransposedUp2, d / 2, d / 4),
                 make_layer(init, "neck.0.2", K::Pointwise, d / 4, c[0])};
  p.levels[1] = {make_layer(init, "neck.1.0", K::TransposedUp2, d, d / 2),
                 make_layer(init, "neck.1.1", K::Pointwise, d / 2, c[1])};
  p.levels[2] = {make_layer(init, "neck.2.0", K::Pointwise, d, c[2])};
  p.levels[3] = {make_layer(init, "neck.3.0", K::StridedDown2, d, 2 * d),
                 make_layer(init, "neck.3.1", K::Pointwise, 2 * d, c[3])};
  return p;
}

HeadParams HeadParams::create(Initializer& init, const ModelConfig& cfg) {
  const std::size_t e = cfg.head_channels;
  HeadParams p;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto name = "head.unify." + std::to_string(i);
    p.unify_w[i] = init.normal(name + ".weight", {e, cfg.neck_channels[i], 1, 1});
    p.unify_b[i] = init.zeros(name + ".bias", {e});
  }
  p.fuse_w = init.normal("head.fuse.weight", {e, 4 * e, 1, 1});
  p.fuse_b = init.zeros("head.fuse.bias", {e});
  p.pred_w = init.normal("head.pred.weight", {1, e, 1, 1});
  p.pred_b = init.zeros("head.pred.bias", {1});
  return p;
}

FeaturePyramid build_pyramid(const Tensor& grid, const NeckParams& p) {
  if (grid.rank() != 3) throw ShapeError("build_pyramid: expected [dim,h,w], got " + shape_str(grid.shape()));
  if (grid.dim(1) % 2 != 0 || grid.dim(2) % 2 != 0)
    throw ShapeError("build_pyramid: grid " + shape_str(grid.shape()) +
                     " cannot be halved for the coarsest level");
  FeaturePyramid out;
  for (std::size_t lvl = 0; lvl < 4; ++lvl) {
    Tensor x = grid;
    const auto& ladder = p.levels[lvl];
    for (std::size_t i = 0; i < ladder.size(); ++i) {
      if (i > 0) x = gelu(x);
      x = apply_layer(x, ladder[i]);
    }
    out[lvl] = x;
  }
  return out;
}

Tensor head_forward(const FeaturePyramid& pyramid, const HeadParams& p, std::size_t output_side) {
  const std::size_t fine = pyramid[0].dim(1);
  std::vector<Tensor> unified;
  for (std::size_t lvl = 0; lvl < 4; ++lvl) {
    const auto& f = pyramid[lvl];
    if (f.dim(1) * (std::size_t{1} << lvl) != fine || f.dim(2) * (std::size_t{1} << lvl) != fine)
      throw ShapeError("head_forward: level " + std::to_string(lvl) + " has shape " +
                       shape_str(f.shape()) + ", finest level side is " + std::to_string(fine));
    Tensor u = conv2d(f, p.unify_w[lvl], p.unify_b[lvl], 1, 0);
    unified.push_back(upsample_bilinear(u, std::size_t{1} << lvl));
  }
  Tensor fused = relu(conv2d(concat(unified, 0), p.fuse_w, p.fuse_b, 1, 0));
  Tensor prob = sigmoid(conv2d(fused, p.pred_w, p.pred_b, 1, 0));
  if (output_side % fine != 0)
    throw ShapeError("head_forward: output side " + std::to_string(output_side) +
                     " is not a multiple of " + std::to_string(fine));
  return upsample_bilinear(prob, output_side / fine);
}

std::array<std::size_t, 4> pyramid_sides(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t g = cfg.grid_side();
  return {4 * g, 2 * g, g, g / 2};
}

BitMask binarize(const Tensor& prob, double threshold) {
  if (prob.rank() != 3 || prob.dim(0) != 1)
    throw ShapeError("binarize: expected [1,h,w], got " + shape_str(prob.shape()));
  if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("binarize threshold must be in (0,1)");
  BitMask m(prob.dim(1), prob.dim(2));
  const auto& v = prob.values();
  for (std::size_t i = 0; i < v.size(); ++i) m.bits[i] = v[i] > threshold ? 1 : 0;
  return m;
}

}  // namespace icmf
