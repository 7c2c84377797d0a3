#include "patchalign/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace patchalign {

int mask_count(real pi, int patches) {
  if (pi < 0.0 || pi > 1.0) fail(ErrorKind::usage, "mask ratio must lie in [0,1]");
  if (patches < 1) fail(ErrorKind::usage, "need at least one patch");
  int mu = static_cast<int>(std::floor(pi * patches + 0.5));
  return std::max(1, std::min(mu, patches));
}

std::vector<real> aggregate_attention(const AttentionRecord& record, TokenReduce reduce,
                                      Rng* rng) {
  if (record.attn.empty() || record.attn[0].empty())
    fail(ErrorKind::usage, "empty attention record");
  const int patches = record.patches;
  const int tokens = record.attn[0][0].rows;
  if (static_cast<int>(record.token_valid.size()) != tokens)
    fail(ErrorKind::shape, "token mask length mismatch in attention record");
  std::vector<int> live;
  for (int t = 0; t < tokens; ++t)
    if (record.token_valid[t]) live.push_back(t);
  if (live.empty()) fail(ErrorKind::usage, "attention record has only pad tokens");

  // Per-token salience averaged over layers and heads first.
  int cells = 0;
  Mat per_token(tokens, patches);
  for (const auto& layer : record.attn)
    for (const Mat& head : layer) {
      if (head.rows != tokens || head.cols != patches)
        fail(ErrorKind::shape, "inconsistent attention record shapes");
      for (int t = 0; t < tokens; ++t)
        for (int p = 0; p < patches; ++p) per_token.at(t, p) += head.at(t, p);
      ++cells;
    }
  for (real& v : per_token.v) v /= cells;

  std::vector<real> salience(patches, 0.0);
  switch (reduce) {
    case TokenReduce::mean_tokens:
      for (int t : live)
        for (int p = 0; p < patches; ++p) salience[p] += per_token.at(t, p);
      for (real& v : salience) v /= static_cast<real>(live.size());
      break;
    case TokenReduce::max_tokens:
      for (int p = 0; p < patches; ++p) {
        real m = per_token.at(live[0], p);
        for (int t : live) m = std::max(m, per_token.at(t, p));
        salience[p] = m;
      }
      break;
    case TokenReduce::random_token: {
      if (!rng) fail(ErrorKind::usage, "random_token reduction needs an RNG");
      int t = live[rng->below(static_cast<int>(live.size()))];
      for (int p = 0; p < patches; ++p) salience[p] = per_token.at(t, p);
      break;
    }
  }
  return salience;
}

MaskMatrix select_mask(const std::vector<real>& salience, real pi) {
  const int patches = static_cast<int>(salience.size());
  for (real v : salience)
    if (!std::isfinite(v)) fail(ErrorKind::usage, "non-finite salience");
  const int mu = mask_count(pi, patches);
  std::vector<int> order(patches);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (salience[a] != salience[b]) return salience[a] > salience[b];
    return a < b;
  });
  MaskMatrix m;
  m.pi = pi;
  m.mu = mu;
  m.masked.assign(patches, 0);
  for (int i = 0; i < mu; ++i) m.masked[order[i]] = 1;
  for (int p = 0; p < patches; ++p)
    (m.masked[p] ? m.masked_idx : m.visible_idx).push_back(p);
  return m;
}

MaskMatrix uniform_random_mask(int patches, real pi, Rng& rng) {
  std::vector<real> salience(patches);
  for (real& v : salience) v = rng.uniform();
  return select_mask(salience, pi);
}

MaskedDecoder MaskedDecoder::create(ParameterStore& store, const ModelConfig& m,
                                    const DecoderConfig& d, Rng& rng) {
  MaskedDecoder dec;
  const int width = d.resolved_width(m);
  dec.patches = m.patches();
  dec.pixels_per_patch = m.patch_pixels();
  dec.in_proj = Linear::create(store, "decoder.in_proj", m.vit_width, width, Init::fan_in, rng);
  dec.mask_token = store.create("mask_embed.token", 1, width, Init::normal, rng);
  dec.pos = store.create("decoder.pos", dec.patches, width, Init::normal, rng);
  for (int i = 0; i < d.depth; ++i)
    dec.blocks.push_back(EncoderBlock::create(store, strformat("decoder.block%d", i),
                                              width, d.heads, m.ffn_mult, rng));
  dec.final_ln = LayerNorm::create(store, "decoder.ln", width, rng);
  dec.pixel_head = Linear::create(store, "decoder.pixel_head", width,
                                  dec.pixels_per_patch, Init::fan_in, rng);
  return dec;
}

Tensor MaskedDecoder::decode(const Tensor& visible_states, const MaskMatrix& mask) const {
  if (mask.patches() != patches)
    fail(ErrorKind::shape, "mask length does not match decoder patch count");
  if (visible_states.rows() != static_cast<int>(mask.visible_idx.size()))
    fail(ErrorKind::shape, "visible state rows do not match mask");
  Tensor x = assemble_rows(in_proj(visible_states), mask.visible_idx, mask_token, patches);
  x = add(x, pos);
  for (const auto& block : blocks) x = block(x, nullptr);
  x = final_ln(x);
  Tensor pix = pixel_head(x);
  return gather_rows(pix, mask.masked_idx);
}

}  // namespace patchalign
