#include "patchalign/model.hpp"

#include <algorithm>

namespace patchalign {

Tokens Tokens::of(std::vector<int> ids_) {
  Tokens t;
  t.ids = std::move(ids_);
  t.valid.resize(t.ids.size());
  for (size_t i = 0; i < t.ids.size(); ++i) t.valid[i] = t.ids[i] != 0;
  return t;
}

int Tokens::live_count() const {
  int n = 0;
  for (uint8_t v : valid) n += v != 0;
  return n;
}

VitEncoder VitEncoder::create(ParameterStore& store, const ModelConfig& m, Rng& rng) {
  VitEncoder e;
  e.patch_embed = Linear::create(store, "vit.patch_embed", m.patch_pixels(), m.vit_width,
                                 Init::fan_in, rng);
  e.pos = store.create("vit.pos", m.patches(), m.vit_width, Init::normal, rng);
  for (int i = 0; i < m.vit_depth; ++i)
    e.blocks.push_back(EncoderBlock::create(store, strformat("vit.block%d", i),
                                            m.vit_width, m.vit_heads, m.ffn_mult, rng));
  e.final_ln = LayerNorm::create(store, "vit.ln", m.vit_width, rng);
  return e;
}

VitEncoder::Result VitEncoder::forward(const Mat& patch_rows,
                                       const std::vector<int>* visible_idx) const {
  Tensor patches = Tensor::from_mat(patch_rows);
  Tensor pos_rows = pos;
  if (visible_idx) {
    patches = gather_rows(patches, *visible_idx);
    pos_rows = gather_rows(pos, *visible_idx);
  }
  Tensor x = add(patch_embed(patches), pos_rows);
  Result r;
  for (const auto& block : blocks) {
    x = block(x, nullptr);
    r.layer_states.push_back(x);
  }
  r.final = final_ln(x);
  return r;
}

TextEncoder TextEncoder::create(ParameterStore& store, const ModelConfig& m, Rng& rng) {
  TextEncoder e;
  e.vocab = m.text_vocab;
  e.max_tokens = m.max_tokens;
  e.tok_embed = store.create("text.tok_embed", m.text_vocab, m.vit_width, Init::normal, rng);
  e.pos = store.create("text.pos", m.max_tokens, m.vit_width, Init::normal, rng);
  for (int i = 0; i < m.text_depth; ++i)
    e.blocks.push_back(EncoderBlock::create(store, strformat("text.block%d", i),
                                            m.vit_width, m.vit_heads, m.ffn_mult, rng));
  e.final_ln = LayerNorm::create(store, "text.ln", m.vit_width, rng);
  return e;
}

Tensor TextEncoder::forward(const Tokens& t) const {
  if (t.ids.empty()) fail(ErrorKind::usage, "empty token sequence");
  if (t.length() > max_tokens)
    fail(ErrorKind::usage, strformat("sequence length %d exceeds max tokens %d",
                                     t.length(), max_tokens));
  if (t.live_count() == 0) fail(ErrorKind::usage, "token sequence is all padding");
  for (int id : t.ids)
    if (id < 0 || id >= vocab)
      fail(ErrorKind::vocab, strformat("token id %d outside vocabulary of %d", id, vocab));
  std::vector<int> pos_idx(t.ids.size());
  for (size_t i = 0; i < t.ids.size(); ++i) pos_idx[i] = static_cast<int>(i);
  Tensor x = add(gather_rows(tok_embed, t.ids), gather_rows(pos, pos_idx));
  for (const auto& block : blocks) x = block(x, &t.valid);
  return final_ln(x);
}

FusionEncoder FusionEncoder::create(ParameterStore& store, const ModelConfig& m, Rng& rng) {
  FusionEncoder e;
  for (int i = 0; i < m.fusion_depth; ++i)
    e.blocks.push_back(CrossBlock::create(store, strformat("fusion.block%d", i),
                                          m.vit_width, m.vit_heads, m.ffn_mult, rng));
  e.final_ln = LayerNorm::create(store, "fusion.ln", m.vit_width, rng);
  return e;
}

FusionEncoder::Result FusionEncoder::forward(const Tensor& text_states, const Tokens& t,
                                             const Tensor& image_states) const {
  Result r;
  r.record.patches = image_states.rows();
  r.record.token_valid = t.valid;
  Tensor x = text_states;
  for (const auto& block : blocks) {
    std::vector<Mat> probs;
    x = block.forward(x, image_states, &t.valid, &probs);
    r.record.attn.push_back(std::move(probs));
  }
  r.states = final_ln(x);
  return r;
}

Model::Model(const Settings& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  vit_ = VitEncoder::create(params_, cfg_.model, rng);
  text_ = TextEncoder::create(params_, cfg_.model, rng);
  fusion_ = FusionEncoder::create(params_, cfg_.model, rng);
  scorer_ = Linear::create(params_, "scorer.head", cfg_.model.vit_width, 2, Init::zeros, rng);
  if (cfg_.adapter.enabled)
    adapter_ = MultiScaleAdapter::create(params_, cfg_.model, cfg_.adapter, rng);
  decoder_ = MaskedDecoder::create(params_, cfg_.model, cfg_.decoder, rng);
  temporal_ = params_.create("intercontext.temporal", cfg_.inter.max_candidates,
                             cfg_.model.vit_width, Init::normal, rng);
  for (int i = 0; i < cfg_.inter.depth; ++i)
    inter_blocks_.push_back(EncoderBlock::create(params_, strformat("intercontext.block%d", i),
                                                 cfg_.model.vit_width, cfg_.inter.heads,
                                                 cfg_.model.ffn_mult, rng));
  inter_ln_ = LayerNorm::create(params_, "intercontext.ln", cfg_.model.vit_width, rng);
  inter_head_ = Linear::create(params_, "intercontext.head", cfg_.model.vit_width, 1,
                               Init::zeros, rng);
}

const MultiScaleAdapter& Model::adapter() const {
  if (!adapter_) fail(ErrorKind::usage, "model was built without the adapter");
  return *adapter_;
}

void Model::check_image(const Image& img) const {
  const auto& m = cfg_.model;
  if (img.h != m.image_height || img.w != m.image_width || img.c != m.channels)
    fail(ErrorKind::config,
         strformat("image %dx%dx%d does not match configured %dx%dx%d", img.h, img.w,
                   img.c, m.image_height, m.image_width, m.channels));
  for (real v : img.px)
    if (!(v >= 0.0 && v <= 1.0))
      fail(ErrorKind::config, "pixel values must lie in [0,1]");
}

Model::ImageEncode Model::encode_image(const Image& img, bool use_adapter) const {
  check_image(img);
  auto vr = vit_.forward(patchify(img, cfg_.model.patch_size), nullptr);
  ImageEncode out;
  out.layer_states = std::move(vr.layer_states);
  out.vit_final = vr.final;
  if (use_adapter && adapter_)
    out.final = adapted_output(out.vit_final, adapter_->forward(out.layer_states));
  else
    out.final = out.vit_final;
  return out;
}

Model::ImageEncode Model::encode_image_visible(const Image& img, const MaskMatrix& mask,
                                               bool use_adapter) const {
  check_image(img);
  if (mask.patches() != cfg_.model.patches())
    fail(ErrorKind::shape, "mask length does not match patch grid");
  auto vr = vit_.forward(patchify(img, cfg_.model.patch_size), &mask.visible_idx);
  ImageEncode out;
  out.layer_states = std::move(vr.layer_states);
  out.vit_final = vr.final;
  if (use_adapter && adapter_)
    out.final = adapted_output(out.vit_final, adapter_->forward(out.layer_states));
  else
    out.final = out.vit_final;
  return out;
}

Tensor Model::encode_text(const Tokens& t) const { return text_.forward(t); }

FusionEncoder::Result Model::fuse(const Tensor& text_states, const Tokens& t,
                                  const Tensor& image_final) const {
  if (text_states.cols() != image_final.cols())
    fail(ErrorKind::shape, "text and image states disagree on width");
  return fusion_.forward(text_states, t, image_final);
}

Tensor Model::itm_logits(const Tensor& fused_states) const {
  return scorer_(pooled(fused_states));
}

Tensor Model::candidate_logits(const std::vector<Tensor>& pooled_candidates) const {
  const int M = static_cast<int>(pooled_candidates.size());
  if (M < 2) fail(ErrorKind::usage, "need at least two candidates");
  if (M > cfg_.inter.max_candidates)
    fail(ErrorKind::config,
         strformat("%d candidates exceed temporal table of %d", M,
                   cfg_.inter.max_candidates));
  std::vector<Tensor> rows;
  rows.reserve(M);
  for (int k = 0; k < M; ++k)
    rows.push_back(add(pooled_candidates[k], row(temporal_, k)));
  Tensor x = concat_rows(rows);
  for (const auto& block : inter_blocks_) x = block(x, nullptr);
  x = inter_ln_(x);
  Tensor per_candidate = inter_head_(x);       // M x 1
  return reshape(per_candidate, 1, M);
}

std::vector<real> Model::image_embedding(const Image& img, bool use_adapter) const {
  auto enc = encode_image(img, use_adapter);
  return mean_rows(enc.final).value();
}

std::vector<real> Model::text_embedding(const Tokens& t) const {
  Tensor states = encode_text(t);
  std::vector<int> live;
  for (int i = 0; i < t.length(); ++i)
    if (t.valid[i]) live.push_back(i);
  return mean_rows(gather_rows(states, live)).value();
}

Tensor retrieval_loss(const Tensor& logits_1xM, int golden) {
  if (golden < 0 || golden >= logits_1xM.cols())
    fail(ErrorKind::usage, "golden index out of range");
  return softmax_cross_entropy(logits_1xM, golden);
}

int predict(const std::vector<real>& logits) {
  if (logits.size() < 2) fail(ErrorKind::usage, "need at least two candidates");
  return argmax_tie_low(logits);
}

}  // namespace patchalign
