#include "patchalign/nn.hpp"

#include <cmath>

namespace patchalign {

Linear Linear::create(ParameterStore& store, const std::string& prefix, int in, int out,
                      Init weight_init, Rng& rng) {
  Linear l;
  l.w = store.create(prefix + ".w", in, out, weight_init, rng);
  l.b = store.create(prefix + ".b", 1, out, Init::zeros, rng);
  return l;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& prefix, int width,
                            Rng& rng) {
  LayerNorm n;
  n.gain = store.create(prefix + ".g", 1, width, Init::ones, rng);
  n.bias = store.create(prefix + ".b", 1, width, Init::zeros, rng);
  return n;
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store,
                                              const std::string& prefix, int width,
                                              int heads, Rng& rng) {
  if (width % heads != 0) fail(ErrorKind::config, "attention width not divisible by heads");
  MultiHeadAttention a;
  a.heads = heads;
  a.q = Linear::create(store, prefix + ".q", width, width, Init::fan_in, rng);
  a.k = Linear::create(store, prefix + ".k", width, width, Init::fan_in, rng);
  a.v = Linear::create(store, prefix + ".v", width, width, Init::fan_in, rng);
  a.o = Linear::create(store, prefix + ".o", width, width, Init::fan_in, rng);
  return a;
}

Tensor MultiHeadAttention::attend(const Tensor& queries_in, const Tensor& keys_in,
                                  const std::vector<uint8_t>* key_valid,
                                  std::vector<Mat>* probs_out) const {
  const int width = q.out_features();
  const int dh = width / heads;
  const real inv_scale = 1.0 / std::sqrt(static_cast<real>(dh));
  Tensor Q = q(queries_in);
  Tensor K = k(keys_in);
  Tensor V = v(keys_in);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = col_slice(Q, h * dh, dh);
    Tensor kh = col_slice(K, h * dh, dh);
    Tensor vh = col_slice(V, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_scale);
    Tensor probs = key_valid ? softmax_rows_masked(scores, *key_valid)
                             : softmax_rows(scores);
    if (probs_out) probs_out->push_back(probs.to_mat());
    head_out.push_back(matmul(probs, vh));
  }
  return o(concat_cols(head_out));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& prefix,
                                int width, int mult, Rng& rng) {
  FeedForward f;
  f.fc1 = Linear::create(store, prefix + ".fc1", width, width * mult, Init::fan_in, rng);
  f.fc2 = Linear::create(store, prefix + ".fc2", width * mult, width, Init::fan_in, rng);
  return f;
}

EncoderBlock EncoderBlock::create(ParameterStore& store, const std::string& prefix,
                                  int width, int heads, int ffn_mult, Rng& rng) {
  EncoderBlock b;
  b.ln1 = LayerNorm::create(store, prefix + ".ln1", width, rng);
  b.ln2 = LayerNorm::create(store, prefix + ".ln2", width, rng);
  b.attn = MultiHeadAttention::create(store, prefix + ".attn", width, heads, rng);
  b.ffn = FeedForward::create(store, prefix + ".ffn", width, ffn_mult, rng);
  return b;
}

Tensor EncoderBlock::operator()(const Tensor& x,
                                const std::vector<uint8_t>* self_valid) const {
  Tensor h = ln1(x);
  Tensor y = add(x, attn.attend(h, h, self_valid, nullptr));
  return add(y, ffn(ln2(y)));
}

CrossBlock CrossBlock::create(ParameterStore& store, const std::string& prefix, int width,
                              int heads, int ffn_mult, Rng& rng) {
  CrossBlock b;
  b.ln1 = LayerNorm::create(store, prefix + ".ln1", width, rng);
  b.ln_cross = LayerNorm::create(store, prefix + ".lnx", width, rng);
  b.ln2 = LayerNorm::create(store, prefix + ".ln2", width, rng);
  b.self_attn = MultiHeadAttention::create(store, prefix + ".self", width, heads, rng);
  b.cross_attn = MultiHeadAttention::create(store, prefix + ".cross", width, heads, rng);
  b.ffn = FeedForward::create(store, prefix + ".ffn", width, ffn_mult, rng);
  return b;
}

Tensor CrossBlock::forward(const Tensor& x, const Tensor& memory,
                           const std::vector<uint8_t>* self_valid,
                           std::vector<Mat>* cross_probs) const {
  Tensor h = ln1(x);
  Tensor y = add(x, self_attn.attend(h, h, self_valid, nullptr));
  Tensor z = add(y, cross_attn.attend(ln_cross(y), memory, nullptr, cross_probs));
  return add(z, ffn(ln2(z)));
}

}  // namespace patchalign
