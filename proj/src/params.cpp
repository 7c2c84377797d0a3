#include "patchalign/params.hpp"

#include <algorithm>
#include <cmath>

namespace patchalign {

Tensor ParameterStore::create(const std::string& name, int rows, int cols, Init init,
                              Rng& rng) {
  if (index_.count(name)) fail(ErrorKind::usage, "duplicate parameter: " + name);
  Tensor t = Tensor::zeros(rows, cols, true);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(t.value().begin(), t.value().end(), 1.0);
      break;
    case Init::normal:
      for (real& v : t.value()) v = rng.normal(0.0, 0.02);
      break;
    case Init::fan_in: {
      real stddev = 1.0 / std::sqrt(static_cast<real>(rows));
      for (real& v : t.value()) v = rng.normal(0.0, stddev);
      break;
    }
  }
  t.set_tag(name);
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::usage, "unknown parameter: " + name);
  return items_[it->second].second;
}

std::string ParameterStore::group_of(const std::string& name) {
  auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

std::vector<std::string> ParameterStore::groups() const {
  std::vector<std::string> gs;
  for (const auto& [name, _] : items_) {
    std::string g = group_of(name);
    if (std::find(gs.begin(), gs.end(), g) == gs.end()) gs.push_back(g);
  }
  std::sort(gs.begin(), gs.end());
  return gs;
}

size_t ParameterStore::group_scalar_count(const std::string& group) const {
  size_t n = 0;
  for (const auto& [name, t] : items_)
    if (group_of(name) == group) n += t.size();
  return n;
}

uint64_t ParameterStore::group_checksum(const std::string& group) const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, t] : items_) {
    if (group_of(name) != group) continue;
    h = fnv1a(name, h);
    h = fnv1a(t.value().data(), t.value().size() * sizeof(real), h);
  }
  return h;
}

void ParameterStore::set_trainable(const std::set<std::string>& trainable_groups) {
  for (auto& [name, t] : items_)
    t.set_requires_grad(trainable_groups.count(group_of(name)) != 0);
}

void ParameterStore::zero_grads() {
  for (auto& [name, t] : items_) t.node()->zero_grad();
}

FreezePolicy FreezePolicy::for_stage(int stage, bool adapter_enabled,
                                     bool stage1_train_scorer) {
  FreezePolicy p;
  switch (stage) {
    case 0:
      p.trainable = {"vit", "text", "fusion", "scorer"};
      break;
    case 1:
      if (adapter_enabled) p.trainable.insert("adapter");
      p.trainable.insert("decoder");
      p.trainable.insert("mask_embed");
      if (stage1_train_scorer) p.trainable.insert("scorer");
      break;
    case 2:
      p.trainable = {"vit", "text", "fusion", "scorer"};
      if (adapter_enabled) p.trainable.insert("adapter");
      break;
    case 3:
      p.trainable = {"intercontext"};
      break;
    default:
      fail(ErrorKind::config, strformat("unknown stage %d", stage));
  }
  return p;
}

}  // namespace patchalign
