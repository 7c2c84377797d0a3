#include "patchalign/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace patchalign {

void ModelConfig::validate() const {
  if (image_height <= 0 || image_width <= 0 || channels <= 0 || patch_size <= 0)
    fail(ErrorKind::config, "image dimensions must be positive");
  if (image_height % patch_size != 0 || image_width % patch_size != 0)
    fail(ErrorKind::config,
         strformat("image %dx%d not divisible by patch size %d", image_height,
                   image_width, patch_size));
  if (vit_width % vit_heads != 0)
    fail(ErrorKind::config, strformat("vit width %d not divisible by %d heads",
                                      vit_width, vit_heads));
  if (vit_depth < 1 || text_depth < 1 || fusion_depth < 1)
    fail(ErrorKind::config, "all depths must be >= 1");
  if (text_vocab < 4)
    fail(ErrorKind::config, "vocab must reserve pad/bos/eos/unk (>= 4)");
  if (max_tokens < 1) fail(ErrorKind::config, "max_tokens must be >= 1");
  if (activation != "gelu") fail(ErrorKind::config, "unknown activation: " + activation);
}

std::vector<int> AdapterConfig::resolved_layers(int vit_depth) const {
  if (!layers.empty()) return layers;
  // Evenly spaced quarter depths, e.g. {3,6,9,12} for a 12-layer stack.
  std::vector<int> out;
  for (int q = 1; q <= 4; ++q) {
    int l = vit_depth * q / 4;
    if (l >= 1 && (out.empty() || out.back() != l)) out.push_back(l);
  }
  return out;
}

void AdapterConfig::validate(const ModelConfig& m) const {
  if (!enabled) return;
  if (delta <= 0 || m.vit_width % delta != 0)
    fail(ErrorKind::config,
         strformat("downsampling rate %d must divide vit width %d", delta, m.vit_width));
  auto ls = resolved_layers(m.vit_depth);
  if (ls.empty()) fail(ErrorKind::config, "adapter insertion set is empty");
  for (size_t i = 0; i < ls.size(); ++i) {
    if (ls[i] < 1 || ls[i] > m.vit_depth)
      fail(ErrorKind::config, strformat("insertion layer %d outside 1..%d", ls[i], m.vit_depth));
    if (i > 0 && ls[i] <= ls[i - 1])
      fail(ErrorKind::config, "insertion layers must be strictly increasing");
  }
}

void DecoderConfig::validate(const ModelConfig& m) const {
  int w = resolved_width(m);
  if (depth < 1) fail(ErrorKind::config, "decoder depth must be >= 1");
  if (w % heads != 0)
    fail(ErrorKind::config, strformat("decoder width %d not divisible by %d heads", w, heads));
}

void CandidateEncoderConfig::validate(const ModelConfig& m) const {
  if (depth < 1) fail(ErrorKind::config, "candidate encoder depth must be >= 1");
  if (m.vit_width % heads != 0)
    fail(ErrorKind::config, "candidate encoder heads must divide vit width");
  if (max_candidates < 2) fail(ErrorKind::config, "need at least 2 candidates");
}

void Settings::validate() const {
  model.validate();
  adapter.validate(model);
  decoder.validate(model);
  inter.validate(model);
  if (train.batch_pairs < 2)
    fail(ErrorKind::config, "batch size must be >= 2 (negative mining needs it)");
  if (train.base_lr <= 0 || train.backbone_lr <= 0 || train.head_lr <= 0)
    fail(ErrorKind::config, "learning rates must be positive");
  if (train.mask_ratio < 0.0 || train.mask_ratio > 1.0)
    fail(ErrorKind::config, "mask ratio must lie in [0,1]");
  if (data.candidates < 2) fail(ErrorKind::config, "candidate count must be >= 2");
  if (data.candidates > inter.max_candidates)
    fail(ErrorKind::config, "candidate count exceeds temporal embedding table");
}

namespace {

std::string fmt_real(real v) { return strformat("%.17g", v); }

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += v[i];
  }
  return s;
}

}  // namespace

const char* to_string(Aggregation a) {
  return a == Aggregation::concat ? "concat" : "add";
}

const char* to_string(TokenReduce r) {
  switch (r) {
    case TokenReduce::mean_tokens: return "mean_tokens";
    case TokenReduce::max_tokens: return "max_tokens";
    case TokenReduce::random_token: return "random_token";
  }
  return "?";
}

Aggregation aggregation_from(const std::string& s) {
  if (s == "concat") return Aggregation::concat;
  if (s == "add") return Aggregation::add;
  fail(ErrorKind::config, "unknown aggregation: " + s);
}

TokenReduce token_reduce_from(const std::string& s) {
  if (s == "mean_tokens") return TokenReduce::mean_tokens;
  if (s == "max_tokens") return TokenReduce::max_tokens;
  if (s == "random_token") return TokenReduce::random_token;
  fail(ErrorKind::config, "unknown token reduction: " + s);
}

std::string Settings::serialize() const {
  std::map<std::string, std::string> kv;
  kv["image_height"] = std::to_string(model.image_height);
  kv["image_width"] = std::to_string(model.image_width);
  kv["channels"] = std::to_string(model.channels);
  kv["patch_size"] = std::to_string(model.patch_size);
  kv["vit_depth"] = std::to_string(model.vit_depth);
  kv["vit_width"] = std::to_string(model.vit_width);
  kv["vit_heads"] = std::to_string(model.vit_heads);
  kv["text_vocab"] = std::to_string(model.text_vocab);
  kv["text_depth"] = std::to_string(model.text_depth);
  kv["fusion_depth"] = std::to_string(model.fusion_depth);
  kv["max_tokens"] = std::to_string(model.max_tokens);
  kv["ffn_mult"] = std::to_string(model.ffn_mult);
  kv["activation"] = model.activation;
  kv["adapter"] = adapter.enabled ? "on" : "off";
  kv["insertion_layers"] = join_ints(adapter.resolved_layers(model.vit_depth));
  kv["reduction"] = std::to_string(adapter.delta);
  kv["aggregation"] = to_string(adapter.agg);
  kv["decoder_depth"] = std::to_string(decoder.depth);
  kv["decoder_heads"] = std::to_string(decoder.heads);
  kv["decoder_width"] = std::to_string(decoder.resolved_width(model));
  kv["intercontext_depth"] = std::to_string(inter.depth);
  kv["intercontext_heads"] = std::to_string(inter.heads);
  kv["max_candidates"] = std::to_string(inter.max_candidates);
  kv["batch size"] = std::to_string(train.batch_pairs);
  kv["sets_per_batch"] = std::to_string(train.batch_sets);
  for (int s = 0; s < 4; ++s)
    kv[strformat("stage%d_epochs", s)] = std::to_string(train.epochs[s]);
  kv["base learning rate"] = fmt_real(train.base_lr);
  kv["warmup learning rate"] = fmt_real(train.warmup_lr);
  kv["warmup steps"] = std::to_string(train.warmup_steps);
  kv["weight decay"] = fmt_real(train.weight_decay);
  kv["finetune weight decay"] = fmt_real(train.finetune_weight_decay);
  kv["backbone learning rate"] = fmt_real(train.backbone_lr);
  kv["head learning rate"] = fmt_real(train.head_lr);
  kv["learning rate scheduler"] = strformat("ExponentialLR(%.17g)", train.lr_decay_gamma);
  kv["minimize learning rate"] = fmt_real(train.min_lr);
  kv["momentum"] = strformat("(%.17g, %.17g)", train.adam_beta1, train.adam_beta2);
  kv["adam_eps"] = fmt_real(train.adam_eps);
  kv["clip_norm"] = fmt_real(train.clip_norm);
  kv["mask ratio"] = fmt_real(train.mask_ratio);
  kv["token_reduce"] = to_string(train.reduce);
  kv["random_mask"] = train.random_mask ? "true" : "false";
  kv["stage1_train_scorer"] = train.stage1_train_scorer ? "true" : "false";
  kv["sampled_negatives"] = train.sampled_negatives ? "true" : "false";
  kv["random seed"] = std::to_string(train.seed);
  kv["sets"] = std::to_string(data.sets);
  kv["candidates"] = std::to_string(data.candidates);
  kv["video_fraction"] = fmt_real(data.video_fraction);
  kv["noise"] = fmt_real(data.noise);
  kv["cue_kinds"] = join_strings(data.cue_kinds);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

void Settings::apply_line(const std::string& rawkey, const std::string& rawval) {
  std::string key = trim(rawkey);
  std::string val = trim(rawval);
  auto as_int = [&] { return std::stoi(val); };
  auto as_u64 = [&] { return static_cast<uint64_t>(std::stoull(val)); };
  auto as_real = [&] { return static_cast<real>(std::stod(val)); };
  auto as_bool = [&] {
    if (val == "true" || val == "on" || val == "1") return true;
    if (val == "false" || val == "off" || val == "0") return false;
    fail(ErrorKind::config, "boolean expected for " + key);
  };

  if (key == "image_height") model.image_height = as_int();
  else if (key == "image_width") model.image_width = as_int();
  else if (key == "input resolution") {
    // table form "224^2" or a single integer
    std::string v = val;
    auto caret = v.find('^');
    if (caret != std::string::npos) v = v.substr(0, caret);
    model.image_height = model.image_width = std::stoi(v);
  }
  else if (key == "channels") model.channels = as_int();
  else if (key == "patch_size") model.patch_size = as_int();
  else if (key == "vit_depth") model.vit_depth = as_int();
  else if (key == "vit_width") model.vit_width = as_int();
  else if (key == "vit_heads") model.vit_heads = as_int();
  else if (key == "text_vocab") model.text_vocab = as_int();
  else if (key == "text_depth") model.text_depth = as_int();
  else if (key == "fusion_depth") model.fusion_depth = as_int();
  else if (key == "max_tokens") model.max_tokens = as_int();
  else if (key == "ffn_mult") model.ffn_mult = as_int();
  else if (key == "activation") model.activation = val;
  else if (key == "adapter") adapter.enabled = as_bool();
  else if (key == "insertion_layers") adapter.layers = parse_ints(val);
  else if (key == "reduction") adapter.delta = as_int();
  else if (key == "aggregation") adapter.agg = aggregation_from(val);
  else if (key == "decoder_depth") decoder.depth = as_int();
  else if (key == "decoder_heads") decoder.heads = as_int();
  else if (key == "decoder_width") decoder.width = as_int();
  else if (key == "intercontext_depth") inter.depth = as_int();
  else if (key == "intercontext_heads") inter.heads = as_int();
  else if (key == "max_candidates") inter.max_candidates = as_int();
  else if (key == "batch size") train.batch_pairs = as_int();
  else if (key == "sets_per_batch") train.batch_sets = as_int();
  else if (key == "stage0_epochs") train.epochs[0] = as_int();
  else if (key == "stage1_epochs") train.epochs[1] = as_int();
  else if (key == "stage2_epochs") train.epochs[2] = as_int();
  else if (key == "stage3_epochs") train.epochs[3] = as_int();
  else if (key == "max epoch") { /* per-stage keys take precedence; accepted for table parity */ }
  else if (key == "base learning rate") train.base_lr = as_real();
  else if (key == "warmup learning rate") train.warmup_lr = as_real();
  else if (key == "warmup steps") train.warmup_steps = as_int();
  else if (key == "weight decay") train.weight_decay = as_real();
  else if (key == "finetune weight decay") train.finetune_weight_decay = as_real();
  else if (key == "backbone learning rate") train.backbone_lr = as_real();
  else if (key == "head learning rate") train.head_lr = as_real();
  else if (key == "learning rate scheduler") {
    auto open = val.find('(');
    auto close = val.find(')');
    if (val.rfind("ExponentialLR", 0) != 0 || open == std::string::npos || close <= open)
      fail(ErrorKind::config, "scheduler must be ExponentialLR(<gamma>)");
    train.lr_decay_gamma = std::stod(val.substr(open + 1, close - open - 1));
  }
  else if (key == "minimize learning rate") train.min_lr = as_real();
  else if (key == "momentum") {
    real b1, b2;
    if (std::sscanf(val.c_str(), "(%lf, %lf)", &b1, &b2) != 2 &&
        std::sscanf(val.c_str(), "(%lf,%lf)", &b1, &b2) != 2)
      fail(ErrorKind::config, "momentum must look like (0.9, 0.999)");
    train.adam_beta1 = b1;
    train.adam_beta2 = b2;
  }
  else if (key == "adam_eps") train.adam_eps = as_real();
  else if (key == "clip_norm") train.clip_norm = as_real();
  else if (key == "mask ratio") train.mask_ratio = as_real();
  else if (key == "token_reduce") train.reduce = token_reduce_from(val);
  else if (key == "random_mask") train.random_mask = as_bool();
  else if (key == "stage1_train_scorer") train.stage1_train_scorer = as_bool();
  else if (key == "sampled_negatives") train.sampled_negatives = as_bool();
  else if (key == "random seed") train.seed = as_u64();
  else if (key == "sets") data.sets = as_int();
  else if (key == "candidates") data.candidates = as_int();
  else if (key == "video_fraction") data.video_fraction = as_real();
  else if (key == "noise") data.noise = as_real();
  else if (key == "cue_kinds") {
    data.cue_kinds.clear();
    std::stringstream ss(val);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) data.cue_kinds.push_back(item);
    }
  }
  else if (key == "vit" || key == "augmentation" || key == "optimizer") {
    // accepted for Appendix-table parity; architecture/optimizer are fixed
    // by the dedicated keys above
  }
  else fail(ErrorKind::config, "unknown config key: " + key);
}

Settings Settings::parse_text(const std::string& text) {
  Settings s;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config, "config line missing '=': " + t);
    s.apply_line(t.substr(0, eq), t.substr(eq + 1));
  }
  return s;
}

Settings Settings::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

Settings preset(const std::string& name) {
  Settings s;
  if (name == "pretrain") {
    s.train.base_lr = 3e-4;
    s.train.warmup_lr = 1e-6;
    s.train.min_lr = 1e-6;
    s.train.adam_beta1 = 0.9;
    s.train.adam_beta2 = 0.999;
    s.train.warmup_steps = 3000;
    s.train.weight_decay = 1e-4;
    s.train.mask_ratio = 0.25;
    s.adapter.delta = 2;
    s.train.seed = 42;
    s.train.epochs[0] = 20;
    s.train.epochs[1] = 20;
    s.train.batch_pairs = 256;
  } else if (name == "finetune") {
    s.train.backbone_lr = 2e-6;
    s.train.head_lr = 1e-4;
    s.train.adam_beta1 = 0.9;
    s.train.adam_beta2 = 0.999;
    s.train.lr_decay_gamma = 0.95;
    s.train.finetune_weight_decay = 1e-2;
    s.train.seed = 10;
    s.train.epochs[2] = 20;
    s.train.epochs[3] = 5;
    s.train.batch_sets = 36;
  } else if (name == "desk") {
    // defaults as initialized
  } else {
    fail(ErrorKind::config, "unknown preset: " + name);
  }
  return s;
}

}  // namespace patchalign
