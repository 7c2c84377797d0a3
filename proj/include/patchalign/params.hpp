#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchalign/rng.hpp"
#include "patchalign/tensor.hpp"

namespace patchalign {

enum class Init { zeros, ones, normal, fan_in };  // normal: 0.02; fan_in: 1/sqrt(rows)

// Ordered, name-addressed registry of trainable tensors. The first dotted
// component of a name is its freeze group ("vit.block0.attn.wq" -> "vit").
class ParameterStore {
 public:
  Tensor create(const std::string& name, int rows, int cols, Init init, Rng& rng);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  static std::string group_of(const std::string& name);
  std::vector<std::string> groups() const;  // sorted unique
  size_t group_scalar_count(const std::string& group) const;
  uint64_t group_checksum(const std::string& group) const;

  void set_trainable(const std::set<std::string>& trainable_groups);
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

struct FreezePolicy {
  std::set<std::string> trainable;

  bool is_trainable(const std::string& group) const { return trainable.count(group) != 0; }
  // Stage schedules: 0 trains the backbone analog (vit/text/fusion/scorer),
  // 1 trains {adapter, decoder, mask_embed} (scorer optionally unfrozen),
  // 2 fine-tunes {vit, text, fusion, scorer, adapter}, 3 trains only the
  // candidate context encoder.
  static FreezePolicy for_stage(int stage, bool adapter_enabled, bool stage1_train_scorer);
};

}  // namespace patchalign
