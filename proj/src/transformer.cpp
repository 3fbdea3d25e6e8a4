#include "icmf/transformer.hpp"

#include <cmath>

namespace icmf {

LayerNormParams LayerNormParams::create(Initializer& init, const std::string& prefix,
                                        std::size_t dim, double eps) {
  return {init.ones(prefix + ".gamma", {dim}), init.zeros(prefix + ".beta", {dim}), eps};
}

AttentionParams AttentionParams::create(Initializer& init, const std::string& prefix,
                                        std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0)
    throw ContractError("attention dim " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
  AttentionParams p;
  p.qkv_w = init.normal(prefix + ".qkv.weight", {dim, 3 * dim});
  p.qkv_b = init.zeros(prefix + ".qkv.bias", {3 * dim});
  p.proj_w = init.normal(prefix + ".proj.weight", {dim, dim});
  p.proj_b = init.zeros(prefix + ".proj.bias", {dim});
  p.heads = heads;
  return p;
}

FeedForwardParams FeedForwardParams::create(Initializer& init, const std::string& prefix,
                                            std::size_t dim, std::size_t hidden) {
  return {init.normal(prefix + ".fc1.weight", {dim, hidden}),
          init.zeros(prefix + ".fc1.bias", {hidden}),
          init.normal(prefix + ".fc2.weight", {hidden, dim}),
          init.zeros(prefix + ".fc2.bias", {dim})};
}

TransformerBlockParams TransformerBlockParams::create(Initializer& init, const std::string& prefix,
                                                      std::size_t dim, std::size_t heads,
                                                      std::size_t hidden, double eps) {
  TransformerBlockParams p;
  p.norm1 = LayerNormParams::create(init, prefix + ".norm1", dim, eps);
  p.attn = AttentionParams::create(init, prefix + ".attn", dim, heads);
  p.norm2 = LayerNormParams::create(init, prefix + ".norm2", dim, eps);
  p.ffn = FeedForwardParams::create(init, prefix + ".mlp", dim, hidden);
  return p;
}

PatchEmbedParams PatchEmbedParams::create(Initializer& init, const std::string& prefix,
                                          std::size_t in_channels, std::size_t dim,
                                          std::size_t patch, std::size_t tokens) {
  PatchEmbedParams p;
  p.proj_w = init.normal(prefix + ".proj.weight", {dim, in_channels, patch, patch});
  p.proj_b = init.zeros(prefix + ".proj.bias", {dim});
  p.pos = init.zeros(prefix + ".pos_embed", {tokens, dim});
  p.patch = patch;
  return p;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gamma, p.beta, p.eps);
}

Tensor patch_embed(const Tensor& image, const PatchEmbedParams& p) {
  if (image.rank() != 3 || image.dim(1) % p.patch != 0 || image.dim(2) % p.patch != 0)
    throw ShapeError("patch_embed: image " + shape_str(image.shape()) +
                     " is not divisible into patches of " + std::to_string(p.patch));
  const std::size_t n = (image.dim(1) / p.patch) * (image.dim(2) / p.patch);
  if (p.pos.dim(0) != n)
    throw ShapeError("patch_embed: " + std::to_string(n) + " patches but positional table has " +
                     std::to_string(p.pos.dim(0)) + " rows");
  Tensor grid = conv2d(image, p.proj_w, p.proj_b, p.patch, 0);
  return add(grid_to_tokens(grid), p.pos);
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& context,
                            const AttentionParams& p, AttentionTrace* trace) {
  const std::size_t d = p.dim();
  if (queries.rank() != 2 || context.rank() != 2 || queries.dim(1) != d || context.dim(1) != d)
    throw ShapeError("attention: token shapes " + shape_str(queries.shape()) + " and " +
                     shape_str(context.shape()) + " for dim " + std::to_string(d));
  const std::size_t h = p.heads;
  const std::size_t hd = d / h;
  const std::size_t nq = queries.dim(0);
  const std::size_t nk = context.dim(0);

  Tensor q, k, v;
  if (queries.same_storage(context)) {
    Tensor qkv = linear(queries, p.qkv_w, p.qkv_b);  // [n, 3d]
    q = narrow(qkv, 1, 0, d);
    k = narrow(qkv, 1, d, d);
    v = narrow(qkv, 1, 2 * d, d);
  } else {
    q = linear(queries, narrow(p.qkv_w, 1, 0, d), narrow(p.qkv_b, 0, 0, d));
    Tensor kv = linear(context, narrow(p.qkv_w, 1, d, 2 * d), narrow(p.qkv_b, 0, d, 2 * d));
    k = narrow(kv, 1, 0, d);
    v = narrow(kv, 1, d, d);
  }
  Tensor qh = permute(reshape(q, {nq, h, hd}), {1, 0, 2});   // [h, nq, hd]
  Tensor kt = permute(reshape(k, {nk, h, hd}), {1, 2, 0});   // [h, hd, nk]
  Tensor vh = permute(reshape(v, {nk, h, hd}), {1, 0, 2});   // [h, nk, hd]
  Tensor scores = scale(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor weights = softmax(scores, 2);
  if (trace) trace->weights = weights;
  Tensor heads_out = matmul(weights, vh);                     // [h, nq, hd]
  Tensor merged = reshape(permute(heads_out, {1, 0, 2}), {nq, d});
  return linear(merged, p.proj_w, p.proj_b);
}

Tensor self_attention(const Tensor& x, const AttentionParams& p, AttentionTrace* trace) {
  return multi_head_attention(x, x, p, trace);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p, const ForwardContext& ctx) {
  const bool drop = ctx.rng && ctx.training && ctx.dropout > 0.0;
  Tensor hidden = relu(linear(x, p.w1, p.b1));
  if (drop) hidden = dropout(hidden, ctx.dropout, *ctx.rng, true);
  Tensor out = linear(hidden, p.w2, p.b2);
  if (drop) out = dropout(out, ctx.dropout, *ctx.rng, true);
  return out;
}

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p,
                         const ForwardContext& ctx) {
  Tensor h = add(x, self_attention(apply_layer_norm(x, p.norm1), p.attn));
  return add(h, feed_forward(apply_layer_norm(h, p.norm2), p.ffn, ctx));
}

Tensor tokens_to_grid(const Tensor& tokens, std::size_t h, std::size_t w) {
  if (tokens.rank() != 2 || tokens.dim(0) != h * w)
    throw ShapeError("tokens_to_grid: " + shape_str(tokens.shape()) + " cannot fill a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid");
  return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

Tensor grid_to_tokens(const Tensor& grid) {
  if (grid.rank() != 3) throw ShapeError("grid_to_tokens: expected [dim,h,w], got " + shape_str(grid.shape()));
  const std::size_t d = grid.dim(0);
  return transpose(reshape(grid, {d, grid.dim(1) * grid.dim(2)}));
}

}  // namespace icmf
