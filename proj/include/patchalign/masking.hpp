#pragma once

#include <vector>

#include "patchalign/config.hpp"
#include "patchalign/nn.hpp"

namespace patchalign {

// Cross-attention probabilities captured from the fusion stack during the
// matching pass: one tokens x patches matrix per (layer, head). Values are
// detached copies; mask selection never receives gradient.
struct AttentionRecord {
  int patches = 0;
  std::vector<std::vector<Mat>> attn;  // [fusion_layer][head]
  std::vector<uint8_t> token_valid;    // 1 = real token, 0 = pad
};

struct MaskMatrix {
  std::vector<uint8_t> masked;  // length = patches
  std::vector<int> masked_idx;  // ascending
  std::vector<int> visible_idx; // ascending
  int mu = 0;
  real pi = 0.0;

  int patches() const { return static_cast<int>(masked.size()); }
};

// mu = max(1, round-half-up(pi * patches)).
int mask_count(real pi, int patches);

// Mean over fusion layers and heads, then the chosen token reduction over
// non-pad tokens. random_token draws from rng (required for that strategy).
std::vector<real> aggregate_attention(const AttentionRecord& record, TokenReduce reduce,
                                      Rng* rng = nullptr);

// Top-mu salience patches, ties broken by ascending patch index.
MaskMatrix select_mask(const std::vector<real>& salience, real pi);

// Ablation: ignore attention entirely.
MaskMatrix uniform_random_mask(int patches, real pi, Rng& rng);

// Transformer decoder that reconstructs pixels of masked patches from the
// visible-pass encoder states.
struct MaskedDecoder {
  int patches = 0;
  int pixels_per_patch = 0;
  Linear in_proj;
  Tensor mask_token;  // 1 x width, group "mask_embed"
  Tensor pos;         // patches x width
  std::vector<EncoderBlock> blocks;
  LayerNorm final_ln;
  Linear pixel_head;

  static MaskedDecoder create(ParameterStore& store, const ModelConfig& m,
                              const DecoderConfig& d, Rng& rng);
  // visible_states: (patches - mu) x vit_width, rows in original order.
  // Returns mu x pixels_per_patch predictions for the masked patches.
  Tensor decode(const Tensor& visible_states, const MaskMatrix& mask) const;
};

}  // namespace patchalign
