#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "patchalign/data.hpp"
#include "patchalign/model.hpp"
#include "patchalign/objectives.hpp"

namespace patchalign {

struct AdamConfig {
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
  real weight_decay = 0.0;
  bool decoupled = true;  // true: AdamW-style decay; false: L2 added to the gradient
};

// One tensor's adaptive-moment update with bias correction. t is 1-based.
void adam_update(std::vector<real>& param, const std::vector<real>& grad,
                 std::vector<real>& m, std::vector<real>& v, long long t, real lr,
                 const AdamConfig& cfg);

struct OptimizerState {
  std::map<std::string, std::pair<std::vector<real>, std::vector<real>>> moments;
  long long t = 0;  // completed steps
};

// Applies one optimizer step over every trainable parameter. group_lr maps
// freeze-group name to learning rate. Gradients are clipped to clip_norm
// (global norm, 0 disables) before the update. Non-finite gradients abort
// with the offending tensor's name.
void optimizer_step(ParameterStore& params, OptimizerState& state,
                    const std::map<std::string, real>& group_lr, const AdamConfig& adam,
                    real clip_norm);

// Linear warmup from `floor` to `base` over warmup_steps (reached exactly at
// step == warmup_steps), then flat.
real warmup_lr(real base, real floor, int warmup_steps, long long step);

struct StepLoss {
  real itm = 0.0;
  real tmim = 0.0;
  real total = 0.0;
};

class Trainer {
 public:
  Trainer(Model& model, const Settings& cfg);

  // Runs a full stage over the dataset. Logs one line per step; audits
  // frozen-group checksums every epoch and fails hard on any violation.
  void run_stage(int stage, const Dataset& data, Rng& rng, std::ostream* log);

  // Single optimization step on explicit batch indices; exposed for the
  // descent/freeze tests.
  StepLoss pair_step(int stage, const Dataset& data, const std::vector<int>& pair_idx,
                     Rng& rng, long long step, int epoch);
  StepLoss set_step(int stage, const Dataset& data, const std::vector<int>& set_idx,
                    Rng& rng, long long step, int epoch);

  const FreezePolicy& policy() const { return policy_; }
  void begin_stage(int stage);

 private:
  std::map<std::string, real> group_lrs(int stage, long long step, int epoch) const;
  uint64_t frozen_checksum() const;
  void audit_frozen(const std::map<std::string, uint64_t>& baseline) const;

  Model& model_;
  Settings cfg_;
  FreezePolicy policy_;
  OptimizerState opt_;
  int stage_ = -1;
};

// Checkpoint file: text header (stage, RNG state, config snapshot, tensor
// table) followed by raw little-endian float32 tensor payloads.
void save_checkpoint(const std::string& path, const Model& model, int stage,
                     const Rng& rng);
// Validates every tensor shape against the model; returns the stage and, when
// rng is non-null, restores the saved RNG state.
int load_checkpoint(const std::string& path, Model& model, Rng* rng);
int peek_checkpoint_stage(const std::string& path);

}  // namespace patchalign
