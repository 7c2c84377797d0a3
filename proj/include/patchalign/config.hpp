#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "patchalign/common.hpp"

namespace patchalign {

enum class Aggregation { concat, add };
enum class TokenReduce { mean_tokens, max_tokens, random_token };

struct ModelConfig {
  int image_height = 16;
  int image_width = 16;
  int channels = 3;
  int patch_size = 4;
  int vit_depth = 3;
  int vit_width = 32;
  int vit_heads = 4;
  int text_vocab = 32;
  int text_depth = 1;
  int fusion_depth = 1;
  int max_tokens = 8;
  int ffn_mult = 4;
  std::string activation = "gelu";  // pinned; tests assert the config value

  int grid_h() const { return image_height / patch_size; }
  int grid_w() const { return image_width / patch_size; }
  int patches() const { return grid_h() * grid_w(); }
  int patch_pixels() const { return patch_size * patch_size * channels; }
  void validate() const;
};

struct AdapterConfig {
  bool enabled = true;
  std::vector<int> layers;  // 1-based insertion layers; empty => evenly spaced quarters
  int delta = 2;            // downsampling rate; reduced width = vit_width / delta
  Aggregation agg = Aggregation::concat;

  std::vector<int> resolved_layers(int vit_depth) const;
  void validate(const ModelConfig& m) const;
};

struct DecoderConfig {
  int depth = 2;
  int heads = 4;
  int width = 0;  // 0 => vit_width
  int resolved_width(const ModelConfig& m) const { return width > 0 ? width : m.vit_width; }
  void validate(const ModelConfig& m) const;
};

struct CandidateEncoderConfig {
  int depth = 2;
  int heads = 4;
  int max_candidates = 10;
  void validate(const ModelConfig& m) const;
};

struct TrainSettings {
  int batch_pairs = 8;  // N: positive pairs per step in stages 0-1
  int batch_sets = 4;   // candidate sets per step in stages 2-3
  int epochs[4] = {5, 10, 10, 3};
  real base_lr = 3e-4;
  real warmup_lr = 1e-6;
  int warmup_steps = 50;
  real weight_decay = 1e-4;           // stages 0-1 (decoupled)
  real finetune_weight_decay = 1e-2;  // stages 2-3 (coupled)
  real backbone_lr = 1e-4;
  real head_lr = 1e-3;
  real lr_decay_gamma = 0.95;  // per-epoch, stages 2-3
  real min_lr = 1e-6;
  real adam_beta1 = 0.9;
  real adam_beta2 = 0.999;
  real adam_eps = 1e-8;
  real clip_norm = 1.0;
  real mask_ratio = 0.25;
  TokenReduce reduce = TokenReduce::mean_tokens;
  bool random_mask = false;          // ablation: ignore attention, mask random patches
  bool stage1_train_scorer = false;  // ablation: unfreeze scorer in stage 1
  bool sampled_negatives = false;    // similarity-proportional sampling instead of argmax
  uint64_t seed = 42;
};

struct DataSettings {
  int sets = 64;
  int candidates = 10;  // M
  real video_fraction = 0.5;
  real noise = 0.02;
  std::vector<std::string> cue_kinds = {"patch_recolor", "patch_blur_stripe",
                                        "object_count", "position_shift"};
};

struct Settings {
  ModelConfig model;
  AdapterConfig adapter;
  DecoderConfig decoder;
  CandidateEncoderConfig inter;
  TrainSettings train;
  DataSettings data;

  void validate() const;
  // Canonical sorted key=value form; feeds the config fingerprint and the
  // checkpoint header snapshot.
  std::string serialize() const;
  uint64_t fingerprint() const { return fnv1a(serialize()); }

  static Settings parse_text(const std::string& text);
  static Settings load_file(const std::string& path);
  void apply_line(const std::string& key, const std::string& value);
};

// Paper-reported hyperparameter tables, stored verbatim as named presets
// ("pretrain", "finetune"). They describe full-scale runs; desk-scale
// defaults live in the struct initializers above.
Settings preset(const std::string& name);

const char* to_string(Aggregation a);
const char* to_string(TokenReduce r);
Aggregation aggregation_from(const std::string& s);
TokenReduce token_reduce_from(const std::string& s);

}  // namespace patchalign
