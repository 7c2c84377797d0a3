#pragma once

#include <optional>
#include <vector>

#include "patchalign/params.hpp"
#include "patchalign/tensor.hpp"

namespace patchalign {

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // 1 x out
  static Linear create(ParameterStore& store, const std::string& prefix, int in,
                       int out, Init weight_init, Rng& rng);
  Tensor operator()(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
  int in_features() const { return w.rows(); }
  int out_features() const { return w.cols(); }
};

struct LayerNorm {
  Tensor gain;  // 1 x width
  Tensor bias;  // 1 x width
  static LayerNorm create(ParameterStore& store, const std::string& prefix, int width,
                          Rng& rng);
  Tensor operator()(const Tensor& x) const { return layer_norm_rows(x, gain, bias); }
};

struct MultiHeadAttention {
  int heads = 1;
  Linear q, k, v, o;
  static MultiHeadAttention create(ParameterStore& store, const std::string& prefix,
                                   int width, int heads, Rng& rng);
  // queries_in: Rq x d, keys_in: Rk x d. key_valid masks key columns (text
  // padding); probs_out, when given, receives one Rq x Rk matrix per head.
  Tensor attend(const Tensor& queries_in, const Tensor& keys_in,
                const std::vector<uint8_t>* key_valid,
                std::vector<Mat>* probs_out) const;
};

struct FeedForward {
  Linear fc1, fc2;
  static FeedForward create(ParameterStore& store, const std::string& prefix, int width,
                            int mult, Rng& rng);
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

// Pre-norm transformer block: x += attn(ln1(x)); x += ffn(ln2(x)).
struct EncoderBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;
  static EncoderBlock create(ParameterStore& store, const std::string& prefix, int width,
                             int heads, int ffn_mult, Rng& rng);
  Tensor operator()(const Tensor& x, const std::vector<uint8_t>* self_valid) const;
};

// Pre-norm block with an extra cross-attention sublayer between self
// attention and the feed-forward.
struct CrossBlock {
  LayerNorm ln1, ln_cross, ln2;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;
  static CrossBlock create(ParameterStore& store, const std::string& prefix, int width,
                           int heads, int ffn_mult, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& memory,
                 const std::vector<uint8_t>* self_valid,
                 std::vector<Mat>* cross_probs) const;
};

inline Tensor row(const Tensor& a, int i) { return gather_rows(a, {i}); }

}  // namespace patchalign
