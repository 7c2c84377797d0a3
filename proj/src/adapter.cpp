#include "patchalign/adapter.hpp"

#include <algorithm>

namespace patchalign {

MultiScaleAdapter MultiScaleAdapter::create(ParameterStore& store, const ModelConfig& m,
                                            const AdapterConfig& cfg, Rng& rng) {
  cfg.validate(m);
  MultiScaleAdapter a;
  a.layers = cfg.resolved_layers(m.vit_depth);
  a.delta = cfg.delta;
  a.agg = cfg.agg;
  a.reduced_width = m.vit_width / cfg.delta;
  for (int l : a.layers)
    a.down.push_back(Linear::create(store, strformat("adapter.down%d", l), m.vit_width,
                                    a.reduced_width, Init::fan_in, rng));
  const int up_in = cfg.agg == Aggregation::concat
                        ? static_cast<int>(a.layers.size()) * a.reduced_width
                        : a.reduced_width;
  a.up = Linear::create(store, "adapter.up", up_in, m.vit_width, Init::zeros, rng);
  return a;
}

Tensor MultiScaleAdapter::down_project(int layer, const Tensor& states) const {
  auto it = std::find(layers.begin(), layers.end(), layer);
  if (it == layers.end())
    fail(ErrorKind::usage, strformat("layer %d is not in the insertion set", layer));
  return gelu(down[it - layers.begin()](states));
}

Tensor MultiScaleAdapter::aggregate(const std::vector<Tensor>& reduced) const {
  if (reduced.size() != layers.size())
    fail(ErrorKind::shape, "expected one reduced matrix per insertion layer");
  for (const auto& r : reduced)
    if (r.rows() != reduced[0].rows() || r.cols() != reduced_width)
      fail(ErrorKind::shape, "mismatched reduced state shapes");
  if (agg == Aggregation::concat) return concat_cols(reduced);
  Tensor s = reduced[0];
  for (size_t i = 1; i < reduced.size(); ++i) s = add(s, reduced[i]);
  return s;
}

Tensor MultiScaleAdapter::up_project(const Tensor& aggregated) const {
  if (aggregated.cols() != up.in_features())
    fail(ErrorKind::shape,
         strformat("aggregated width %d does not match up-projection input %d",
                   aggregated.cols(), up.in_features()));
  return up(aggregated);
}

Tensor MultiScaleAdapter::forward(const std::vector<Tensor>& layer_states) const {
  std::vector<Tensor> reduced;
  reduced.reserve(layers.size());
  for (int l : layers) {
    if (l < 1 || l > static_cast<int>(layer_states.size()))
      fail(ErrorKind::shape, strformat("insertion layer %d has no ViT state", l));
    reduced.push_back(down_project(l, layer_states[l - 1]));
  }
  return up_project(aggregate(reduced));
}

long long adapter_param_count(const ModelConfig& m, const AdapterConfig& cfg) {
  cfg.validate(m);
  const long long d = m.vit_width;
  const long long dr = d / cfg.delta;
  const long long k = static_cast<long long>(cfg.resolved_layers(m.vit_depth).size());
  const long long up_in = cfg.agg == Aggregation::concat ? k * dr : dr;
  return k * (d * dr + dr) + (up_in * d + d);
}

}  // namespace patchalign
