#pragma once

// Network layers. Each layer holds pointers into a ParameterStore and is a
// plain value type; calling it records ops on a Tape.

#include <random>
#include <string>
#include <utility>

#include "icseg/autodiff.hpp"
#include "icseg/params.hpp"

namespace icseg {

using ad::Tape;
using ad::Var;

enum class Init { trunc_normal, he, zero };

namespace detail {

template <typename S>
Matrix<S> init_weight(Init init, Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  switch (init) {
    case Init::trunc_normal:
      return truncated_normal<S>(rows, cols, 0.02, rng);
    case Init::he:
      return he_normal<S>(rows, cols, rows, rng);
    case Init::zero:
      break;
  }
  return Matrix<S>::Zero(rows, cols);
}

}  // namespace detail

/// y = x W + b with W stored as in x out. Doubles as a 1x1 convolution on
/// (H*W) x C feature maps.
template <typename S>
struct Linear {
  Parameter<S>* weight = nullptr;
  Parameter<S>* bias = nullptr;

  static Linear make(ParameterStore<S>& store, const std::string& path, int in, int out, Init init,
                     std::mt19937_64& rng, bool with_bias = true) {
    Linear l;
    l.weight = &store.add(path + ".weight", detail::init_weight<S>(init, in, out, rng));
    if (with_bias) l.bias = &store.add(path + ".bias", Matrix<S>::Zero(1, out));
    return l;
  }

  int in() const { return static_cast<int>(weight->value.rows()); }
  int out() const { return static_cast<int>(weight->value.cols()); }

  Var<S> operator()(Tape<S>& t, Var<S> x) const {
    if (x.cols() != weight->value.rows())
      throw std::invalid_argument("linear: expected " + std::to_string(weight->value.rows()) + " input channels, got " +
                                  std::to_string(x.cols()));
    Var<S> y = ad::matmul(x, t.param(*weight));
    return bias ? ad::add_rowwise(y, t.param(*bias)) : y;
  }
};

template <typename S>
struct LayerNorm {
  Parameter<S>* gamma = nullptr;
  Parameter<S>* beta = nullptr;

  static LayerNorm make(ParameterStore<S>& store, const std::string& path, int dim) {
    return {&store.add(path + ".gamma", Matrix<S>::Ones(1, dim)), &store.add(path + ".beta", Matrix<S>::Zero(1, dim))};
  }

  Var<S> operator()(Tape<S>& t, Var<S> x) const { return ad::layer_norm(x, t.param(*gamma), t.param(*beta)); }
};

/// Multi-head attention with query/key/value/output projections.
template <typename S>
struct MultiHeadAttention {
  Linear<S> q, k, v, out;
  int heads = 1;

  static MultiHeadAttention make(ParameterStore<S>& store, const std::string& path, int dim, int heads,
                                 std::mt19937_64& rng) {
    MultiHeadAttention m;
    m.q = Linear<S>::make(store, path + ".q", dim, dim, Init::trunc_normal, rng);
    m.k = Linear<S>::make(store, path + ".k", dim, dim, Init::trunc_normal, rng);
    m.v = Linear<S>::make(store, path + ".v", dim, dim, Init::trunc_normal, rng);
    m.out = Linear<S>::make(store, path + ".out", dim, dim, Init::trunc_normal, rng);
    m.heads = heads;
    return m;
  }

  Var<S> operator()(Tape<S>& t, Var<S> xq, Var<S> xkv, ad::AttentionWeights<S>* record = nullptr) const {
    if (xq.cols() != xkv.cols()) throw std::invalid_argument("attention: query and key/value widths differ");
    return out(t, ad::multi_head_attention(q(t, xq), k(t, xkv), v(t, xkv), heads, record));
  }
};

template <typename S>
struct FeedForward {
  Linear<S> fc1, fc2;
  double dropout = 0.0;

  static FeedForward make(ParameterStore<S>& store, const std::string& path, int dim, int ratio, double dropout,
                          std::mt19937_64& rng) {
    return {Linear<S>::make(store, path + ".fc1", dim, dim * ratio, Init::trunc_normal, rng),
            Linear<S>::make(store, path + ".fc2", dim * ratio, dim, Init::trunc_normal, rng), dropout};
  }

  Var<S> operator()(Tape<S>& t, Var<S> x) const {
    Var<S> h = ad::dropout(ad::relu(fc1(t, x)), dropout);
    return ad::dropout(fc2(t, h), dropout);
  }
};

namespace detail {

template <typename S>
void require_finite(const Var<S>& x, const char* what) {
  if (!x.value().allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input tokens");
}

}  // namespace detail

/// Pre-norm transformer block: x + MHA(LN(x)), then + FFN(LN(.)).
template <typename S>
struct SelfAttentionBlock {
  LayerNorm<S> norm1, norm2;
  MultiHeadAttention<S> attn;
  FeedForward<S> ffn;

  static SelfAttentionBlock make(ParameterStore<S>& store, const std::string& path, int dim, int heads, int ratio,
                                 double dropout, std::mt19937_64& rng) {
    SelfAttentionBlock b;
    b.norm1 = LayerNorm<S>::make(store, path + ".norm1", dim);
    b.attn = MultiHeadAttention<S>::make(store, path + ".attn", dim, heads, rng);
    b.norm2 = LayerNorm<S>::make(store, path + ".norm2", dim);
    b.ffn = FeedForward<S>::make(store, path + ".ffn", dim, ratio, dropout, rng);
    return b;
  }

  Var<S> operator()(Tape<S>& t, Var<S> x, ad::AttentionWeights<S>* record = nullptr) const {
    detail::require_finite(x, "self_attention_block");
    const Var<S> n = norm1(t, x);
    x = ad::add(x, ad::dropout(attn(t, n, n, record), ffn.dropout));
    return ad::add(x, ffn(t, norm2(t, x)));
  }
};

/// q + MHA(LN(q), LN(kv)) with keys and values from kv, then + FFN(LN(.)).
template <typename S>
struct CrossAttentionBlock {
  LayerNorm<S> norm_q, norm_kv, norm2;
  MultiHeadAttention<S> attn;
  FeedForward<S> ffn;

  static CrossAttentionBlock make(ParameterStore<S>& store, const std::string& path, int dim, int heads, int ratio,
                                  double dropout, std::mt19937_64& rng) {
    CrossAttentionBlock b;
    b.norm_q = LayerNorm<S>::make(store, path + ".norm_q", dim);
    b.norm_kv = LayerNorm<S>::make(store, path + ".norm_kv", dim);
    b.attn = MultiHeadAttention<S>::make(store, path + ".attn", dim, heads, rng);
    b.norm2 = LayerNorm<S>::make(store, path + ".norm2", dim);
    b.ffn = FeedForward<S>::make(store, path + ".ffn", dim, ratio, dropout, rng);
    return b;
  }

  Var<S> operator()(Tape<S>& t, Var<S> q, Var<S> kv, ad::AttentionWeights<S>* record = nullptr) const {
    if (q.cols() != kv.cols()) throw std::invalid_argument("cross_attention_block: token widths differ");
    detail::require_finite(q, "cross_attention_block");
    detail::require_finite(kv, "cross_attention_block");
    Var<S> x = ad::add(q, ad::dropout(attn(t, norm_q(t, q), norm_kv(t, kv), record), ffn.dropout));
    return ad::add(x, ffn(t, norm2(t, x)));
  }
};

/// Two attention steps: self-attention over the click tokens, then
/// cross-attention with queries from the image tokens and keys/values from the
/// updated click tokens, then FFN. Returns (image tokens, click tokens).
template <typename S>
struct CrossModalityBlock {
  LayerNorm<S> norm_y, norm_x, norm_y2, norm2;
  MultiHeadAttention<S> self_attn, cross_attn;
  FeedForward<S> ffn;

  static CrossModalityBlock make(ParameterStore<S>& store, const std::string& path, int dim, int heads, int ratio,
                                 double dropout, std::mt19937_64& rng) {
    CrossModalityBlock b;
    b.norm_y = LayerNorm<S>::make(store, path + ".norm_y", dim);
    b.self_attn = MultiHeadAttention<S>::make(store, path + ".self_attn", dim, heads, rng);
    b.norm_x = LayerNorm<S>::make(store, path + ".norm_x", dim);
    b.norm_y2 = LayerNorm<S>::make(store, path + ".norm_y2", dim);
    b.cross_attn = MultiHeadAttention<S>::make(store, path + ".cross_attn", dim, heads, rng);
    b.norm2 = LayerNorm<S>::make(store, path + ".norm2", dim);
    b.ffn = FeedForward<S>::make(store, path + ".ffn", dim, ratio, dropout, rng);
    return b;
  }

  std::pair<Var<S>, Var<S>> operator()(Tape<S>& t, Var<S> image_tokens, Var<S> click_tokens) const {
    if (image_tokens.cols() != click_tokens.cols()) throw std::invalid_argument("cross_modality_block: token widths differ");
    const Var<S> ny = norm_y(t, click_tokens);
    const Var<S> y = ad::add(click_tokens, ad::dropout(self_attn(t, ny, ny), ffn.dropout));
    Var<S> x = ad::add(image_tokens, ad::dropout(cross_attn(t, norm_x(t, image_tokens), norm_y2(t, y)), ffn.dropout));
    x = ad::add(x, ffn(t, norm2(t, x)));
    return {x, y};
  }
};

/// Non-overlapping patches projected to D plus a learned positional embedding.
template <typename S>
struct PatchEmbed {
  Linear<S> proj;
  Parameter<S>* pos = nullptr;
  int image_size = 0;
  int patch = 0;
  int channels = 0;

  static PatchEmbed make(ParameterStore<S>& store, const std::string& path, int image_size, int patch, int channels,
                         int dim, std::mt19937_64& rng) {
    PatchEmbed p;
    p.proj = Linear<S>::make(store, path + ".proj", patch * patch * channels, dim, Init::trunc_normal, rng);
    const int n = (image_size / patch) * (image_size / patch);
    p.pos = &store.add(path + ".pos", truncated_normal<S>(n, dim, 0.02, rng));
    p.image_size = image_size;
    p.patch = patch;
    p.channels = channels;
    return p;
  }

  /// stack: (H*W) x C raster with H = W = image_size.
  Var<S> operator()(Tape<S>& t, Var<S> stack, int height, int width) const {
    if (height != image_size || width != image_size)
      throw std::invalid_argument("patch_embed: expected " + std::to_string(image_size) + "x" +
                                  std::to_string(image_size) + " input, got " + std::to_string(height) + "x" +
                                  std::to_string(width));
    if (stack.cols() != channels)
      throw std::invalid_argument("patch_embed: expected " + std::to_string(channels) + " channels, got " +
                                  std::to_string(stack.cols()));
    return ad::add(proj(t, ad::patchify(stack, height, width, patch)), t.param(*pos));
  }
};

/// k x k convolution as im2col followed by a matrix product.
template <typename S>
struct Conv2d {
  Linear<S> lin;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  static Conv2d make(ParameterStore<S>& store, const std::string& path, int in, int out, int kernel, int stride,
                     int pad, Init init, std::mt19937_64& rng) {
    return {Linear<S>::make(store, path, kernel * kernel * in, out, init, rng), kernel, stride, pad};
  }

  Var<S> operator()(Tape<S>& t, Var<S> x, int height, int width, int* out_h, int* out_w) const {
    if (height < kernel - 2 * pad || width < kernel - 2 * pad)
      throw std::invalid_argument("conv2d: spatial size smaller than the kernel");
    return lin(t, ad::im2col(x, height, width, kernel, stride, pad, out_h, out_w));
  }
};

template <typename S>
struct DepthwiseConv3x3 {
  Parameter<S>* weight = nullptr;
  Parameter<S>* bias = nullptr;

  static DepthwiseConv3x3 make(ParameterStore<S>& store, const std::string& path, int channels, std::mt19937_64& rng) {
    return {&store.add(path + ".weight", he_normal<S>(9, channels, 9, rng)),
            &store.add(path + ".bias", Matrix<S>::Zero(1, channels))};
  }

  Var<S> operator()(Tape<S>& t, Var<S> x, int height, int width) const {
    return ad::depthwise_conv3x3(x, height, width, t.param(*weight), t.param(*bias));
  }
};

/// 2x2 stride-2 transposed convolution: doubles each spatial side.
template <typename S>
struct TransposedConv2x2 {
  Parameter<S>* weight = nullptr;  ///< in x (4*out), columns ordered (dy, dx, out)
  Parameter<S>* bias = nullptr;    ///< 1 x out

  static TransposedConv2x2 make(ParameterStore<S>& store, const std::string& path, int in, int out,
                                std::mt19937_64& rng) {
    return {&store.add(path + ".weight", he_normal<S>(in, 4 * out, in, rng)),
            &store.add(path + ".bias", Matrix<S>::Zero(1, out))};
  }

  Var<S> operator()(Tape<S>& t, Var<S> x, int height, int width) const {
    Var<S> up = ad::pixel_shuffle2(ad::matmul(x, t.param(*weight)), height, width);
    return ad::add_rowwise(up, t.param(*bias));
  }
};

}  // namespace icseg
