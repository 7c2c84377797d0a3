#pragma once

#include <optional>
#include <string>
#include <vector>

#include "patchalign/adapter.hpp"
#include "patchalign/config.hpp"
#include "patchalign/image.hpp"
#include "patchalign/masking.hpp"
#include "patchalign/nn.hpp"

namespace patchalign {

// Token ids with an explicit pad mask (valid[i] = 1 for real tokens).
// Reserved ids: 0 pad, 1 bos, 2 eos, 3 unk.
struct Tokens {
  std::vector<int> ids;
  std::vector<uint8_t> valid;

  static Tokens of(std::vector<int> ids_);  // valid = (id != 0)
  int length() const { return static_cast<int>(ids.size()); }
  int live_count() const;
};

struct VitEncoder {
  Linear patch_embed;
  Tensor pos;  // patches x width
  std::vector<EncoderBlock> blocks;
  LayerNorm final_ln;

  static VitEncoder create(ParameterStore& store, const ModelConfig& m, Rng& rng);
  struct Result {
    std::vector<Tensor> layer_states;  // block outputs, layers 1..m
    Tensor final;                      // final_ln(layer_states.back())
  };
  // visible_idx == nullptr runs the full grid; otherwise only those rows
  // (positional embeddings follow the original indices).
  Result forward(const Mat& patch_rows, const std::vector<int>* visible_idx) const;
};

struct TextEncoder {
  Tensor tok_embed;  // vocab x width
  Tensor pos;        // max_tokens x width
  std::vector<EncoderBlock> blocks;
  LayerNorm final_ln;
  int vocab = 0;
  int max_tokens = 0;

  static TextEncoder create(ParameterStore& store, const ModelConfig& m, Rng& rng);
  Tensor forward(const Tokens& t) const;  // tokens x width
};

struct FusionEncoder {
  std::vector<CrossBlock> blocks;
  LayerNorm final_ln;

  static FusionEncoder create(ParameterStore& store, const ModelConfig& m, Rng& rng);
  struct Result {
    Tensor states;           // tokens x width
    AttentionRecord record;  // per layer, per head cross-attention
  };
  Result forward(const Tensor& text_states, const Tokens& t,
                 const Tensor& image_states) const;
};

class Model {
 public:
  Model(const Settings& cfg, uint64_t init_seed);

  const Settings& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  bool has_adapter() const { return adapter_.has_value(); }
  const MultiScaleAdapter& adapter() const;
  const MaskedDecoder& decoder() const { return decoder_; }

  struct ImageEncode {
    std::vector<Tensor> layer_states;
    Tensor vit_final;  // before the adapter residual
    Tensor final;      // adapter residual applied when requested
  };
  ImageEncode encode_image(const Image& img, bool use_adapter = true) const;
  ImageEncode encode_image_visible(const Image& img, const MaskMatrix& mask,
                                   bool use_adapter = true) const;
  Tensor encode_text(const Tokens& t) const;
  FusionEncoder::Result fuse(const Tensor& text_states, const Tokens& t,
                             const Tensor& image_final) const;
  Tensor itm_logits(const Tensor& fused_states) const;  // 1x2 (match, mismatch)
  // First (BOS) multimodal token state, the pooling used by every head.
  Tensor pooled(const Tensor& fused_states) const { return row(fused_states, 0); }

  // Candidate context encoder (temporal embeddings + transformer + head).
  Tensor candidate_logits(const std::vector<Tensor>& pooled_candidates) const;  // 1xM

  // Mean-pooled unimodal embeddings used by hard-negative mining.
  std::vector<real> image_embedding(const Image& img, bool use_adapter = true) const;
  std::vector<real> text_embedding(const Tokens& t) const;

  Tensor decode_masked(const Tensor& visible_final, const MaskMatrix& mask) const {
    return decoder_.decode(visible_final, mask);
  }

 private:
  void check_image(const Image& img) const;

  Settings cfg_;
  ParameterStore params_;
  VitEncoder vit_;
  TextEncoder text_;
  FusionEncoder fusion_;
  Linear scorer_;
  std::optional<MultiScaleAdapter> adapter_;
  MaskedDecoder decoder_;
  // candidate context encoder
  Tensor temporal_;  // max_candidates x width
  std::vector<EncoderBlock> inter_blocks_;
  LayerNorm inter_ln_;
  Linear inter_head_;
};

Tensor retrieval_loss(const Tensor& logits_1xM, int golden);
int predict(const std::vector<real>& logits);  // argmax, ties to lowest index

}  // namespace patchalign
