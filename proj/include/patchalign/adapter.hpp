#pragma once

#include <vector>

#include "patchalign/config.hpp"
#include "patchalign/nn.hpp"

namespace patchalign {

// Multi-scale adapter: one down-projection per insertion layer, all feeding
// a single shared up-projection whose output is added to the ViT output.
// The up-projection starts at zero so inserting the adapter is a no-op
// until training moves it.
struct MultiScaleAdapter {
  std::vector<int> layers;  // 1-based, strictly increasing
  int delta = 2;
  Aggregation agg = Aggregation::concat;
  int reduced_width = 0;  // vit_width / delta
  std::vector<Linear> down;  // parallel to `layers`
  Linear up;

  static MultiScaleAdapter create(ParameterStore& store, const ModelConfig& m,
                                  const AdapterConfig& cfg, Rng& rng);

  // Down-projection for insertion layer `layer` (1-based). Errors if the
  // layer is not in the insertion set.
  Tensor down_project(int layer, const Tensor& states) const;
  Tensor aggregate(const std::vector<Tensor>& reduced) const;
  Tensor up_project(const Tensor& aggregated) const;
  // Full pass over the per-layer ViT states (index l-1 = layer l).
  Tensor forward(const std::vector<Tensor>& layer_states) const;
};

inline Tensor adapted_output(const Tensor& vit_final, const Tensor& y) {
  return add(vit_final, y);
}

// Exact count of adapter-owned scalars.
long long adapter_param_count(const ModelConfig& m, const AdapterConfig& cfg);

}  // namespace patchalign
