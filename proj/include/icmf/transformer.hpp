#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "icmf/parameters.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

class Rng;

/// Dropout settings for a forward pass. A null rng or rate 0 disables dropout.
struct ForwardContext {
  double dropout = 0.0;
  Rng* rng = nullptr;
  bool training = false;
};

struct LayerNormParams {
  Tensor gamma;  // [dim]
  Tensor beta;   // [dim]
  double eps = 1e-6;

  static LayerNormParams create(Initializer& init, const std::string& prefix, std::size_t dim,
                                double eps);
};

/// Query/key/value projections kept fused as one [dim, 3*dim] matrix; the
/// column blocks [0,d), [d,2d), [2d,3d) are W_q, W_k, W_v.
struct AttentionParams {
  Tensor qkv_w;   // [dim, 3*dim]
  Tensor qkv_b;   // [3*dim]
  Tensor proj_w;  // [dim, dim]
  Tensor proj_b;  // [dim]
  std::size_t heads = 1;

  std::size_t dim() const { return proj_w.dim(0); }
  std::size_t head_dim() const { return dim() / heads; }

  static AttentionParams create(Initializer& init, const std::string& prefix, std::size_t dim,
                                std::size_t heads);
};

struct FeedForwardParams {
  Tensor w1;  // [dim, hidden]
  Tensor b1;  // [hidden]
  Tensor w2;  // [hidden, dim]
  Tensor b2;  // [dim]

  static FeedForwardParams create(Initializer& init, const std::string& prefix, std::size_t dim,
                                  std::size_t hidden);
};

struct TransformerBlockParams {
  LayerNormParams norm1;
  AttentionParams attn;
  LayerNormParams norm2;
  FeedForwardParams ffn;

  static TransformerBlockParams create(Initializer& init, const std::string& prefix,
                                       std::size_t dim, std::size_t heads, std::size_t hidden,
                                       double eps);
};

struct PatchEmbedParams {
  Tensor proj_w;  // [dim, in_channels, patch, patch]
  Tensor proj_b;  // [dim]
  Tensor pos;     // [tokens, dim]
  std::size_t patch = 1;

  static PatchEmbedParams create(Initializer& init, const std::string& prefix,
                                 std::size_t in_channels, std::size_t dim, std::size_t patch,
                                 std::size_t tokens);
};

/// Attention weights of the last forward, one [heads, n_q, n_kv] tensor.
struct AttentionTrace {
  Tensor weights;
};

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& p);

/// image [c, h, w] -> tokens [(h/p)*(w/p), dim], positional table added.
Tensor patch_embed(const Tensor& image, const PatchEmbedParams& p);

/// Multi-head attention with queries from `queries` and keys/values from
/// `context`: per head softmax(Q K^T / sqrt(head_dim)) V, heads concatenated
/// and passed through the output projection.
Tensor multi_head_attention(const Tensor& queries, const Tensor& context,
                            const AttentionParams& p, AttentionTrace* trace = nullptr);

Tensor self_attention(const Tensor& x, const AttentionParams& p, AttentionTrace* trace = nullptr);

/// ReLU MLP with dropout after each linear layer.
Tensor feed_forward(const Tensor& x, const FeedForwardParams& p, const ForwardContext& ctx);

/// Pre-norm block: x + Attn(LN(x)), then + FFN(LN(.)).
Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p,
                         const ForwardContext& ctx = {});

/// tokens [h*w, dim] -> grid [dim, h, w], row-major token order.
Tensor tokens_to_grid(const Tensor& tokens, std::size_t h, std::size_t w);
/// grid [dim, h, w] -> tokens [h*w, dim].
Tensor grid_to_tokens(const Tensor& grid);

}  // namespace icmf
