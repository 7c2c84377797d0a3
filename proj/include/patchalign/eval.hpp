#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "patchalign/data.hpp"
#include "patchalign/model.hpp"

namespace patchalign {

struct SetPrediction {
  std::string id;
  std::string kind;
  int golden = 0;
  int predicted = 0;
  std::vector<real> scores;  // in candidate order 0..M-1
  real overlap = -1.0;       // mask/cue overlap fraction; -1 when no cue info
};

struct MetricsReport {
  std::string mode;  // "zeroshot" | "finetuned"
  uint64_t config_fingerprint = 0;
  uint64_t seed = 0;
  std::vector<SetPrediction> per_set;

  int total() const { return static_cast<int>(per_set.size()); }
  int correct_of(const std::string& kind) const;
  int total_of(const std::string& kind) const;
  real accuracy_all() const;
  real accuracy_video() const;
  real accuracy_static() const;
  real mask_overlap_mean() const;  // over sets that carry cue info, -1 if none

  // Deterministic line-stable text: fixed 6-decimal floats, fixed ordering.
  std::string serialize() const;
};

// Argmax of per-pair match probability (no candidate context module).
MetricsReport eval_zero_shot(const Model& model, const Dataset& data);
// Argmax of the candidate context encoder's logits.
MetricsReport eval_finetuned(const Model& model, const Dataset& data);

void write_report(const std::string& path, const MetricsReport& report);

struct GridRow {
  std::string value;
  bool ok = false;
  real acc_all = 0.0, acc_video = 0.0, acc_static = 0.0;
  long long param_count = 0;
  std::string note;
};

// Trains stages 0-1 per value with the shared seed and evaluates zero-shot
// on eval_data. Invalid values produce a warning row, not a failure.
std::vector<GridRow> sensitivity_grid(const std::string& axis,
                                      const std::vector<std::string>& values,
                                      const Settings& base, const Dataset& train_data,
                                      const Dataset& eval_data, std::ostream* progress);
std::string format_grid_table(const std::string& axis, const std::vector<GridRow>& rows);

struct MaskDumpResult {
  std::vector<std::string> files;
  std::vector<real> overlaps;  // one per dumped set that carries cue info
};

// Writes, per set, the golden image with masked patches zeroed (P6) plus a
// sidecar listing the masked indices; returns overlap fractions for sets
// with known cue patches.
MaskDumpResult mask_dump(const Model& model, const Dataset& data, int count,
                         const std::string& out_dir);

real overlap_fraction(const MaskMatrix& mask, const std::vector<int>& cue_patches);

}  // namespace patchalign
