#include "patchalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace patchalign {

void adam_update(std::vector<real>& param, const std::vector<real>& grad,
                 std::vector<real>& m, std::vector<real>& v, long long t, real lr,
                 const AdamConfig& cfg) {
  if (param.size() != grad.size()) fail(ErrorKind::shape, "adam_update: size mismatch");
  if (m.size() != param.size()) m.assign(param.size(), 0.0);
  if (v.size() != param.size()) v.assign(param.size(), 0.0);
  const real bc1 = 1.0 - std::pow(cfg.beta1, static_cast<real>(t));
  const real bc2 = 1.0 - std::pow(cfg.beta2, static_cast<real>(t));
  for (size_t i = 0; i < param.size(); ++i) {
    real g = grad[i];
    if (!cfg.decoupled) g += cfg.weight_decay * param[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    real mhat = m[i] / bc1;
    real vhat = v[i] / bc2;
    if (cfg.decoupled) param[i] -= lr * cfg.weight_decay * param[i];
    param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void optimizer_step(ParameterStore& params, OptimizerState& state,
                    const std::map<std::string, real>& group_lr, const AdamConfig& adam,
                    real clip_norm) {
  // Global gradient norm over trainable tensors.
  real sq = 0.0;
  for (const auto& [name, t] : params.items()) {
    if (!t.requires_grad()) continue;
    const auto& g = t.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        fail(ErrorKind::usage, "non-finite gradient in tensor " + name);
      sq += g[i] * g[i];
    }
  }
  real norm = std::sqrt(sq);
  real scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  ++state.t;
  for (const auto& [name, handle] : params.items()) {
    Tensor t = handle;  // shared storage; mutating through the copy is intended
    if (!t.requires_grad()) continue;
    auto it = group_lr.find(ParameterStore::group_of(name));
    if (it == group_lr.end())
      fail(ErrorKind::usage, "no learning rate for group of " + name);
    auto& [m, v] = state.moments[name];
    std::vector<real> g = t.grad();
    if (g.empty()) g.assign(t.size(), 0.0);
    if (scale != 1.0)
      for (real& x : g) x *= scale;
    adam_update(t.value(), g, m, v, state.t, it->second, adam);
  }
}

real warmup_lr(real base, real floor, int warmup_steps, long long step) {
  if (warmup_steps <= 0) return base;
  if (step >= warmup_steps) return base;
  return floor + (base - floor) * (static_cast<real>(step) / warmup_steps);
}

Trainer::Trainer(Model& model, const Settings& cfg) : model_(model), cfg_(cfg) {}

void Trainer::begin_stage(int stage) {
  stage_ = stage;
  policy_ = FreezePolicy::for_stage(stage, model_.has_adapter(),
                                    cfg_.train.stage1_train_scorer);
  model_.params().set_trainable(policy_.trainable);
  opt_ = OptimizerState{};
}

std::map<std::string, real> Trainer::group_lrs(int stage, long long step, int epoch) const {
  const TrainSettings& ts = cfg_.train;
  std::map<std::string, real> lr;
  auto decayed = [&](real base) {
    real v = base * std::pow(ts.lr_decay_gamma, static_cast<real>(epoch));
    return std::max(v, ts.min_lr);
  };
  if (stage <= 1) {
    real v = std::max(warmup_lr(ts.base_lr, ts.warmup_lr, ts.warmup_steps, step), 0.0);
    for (const std::string& g : {"vit", "text", "fusion", "scorer", "adapter",
                                 "decoder", "mask_embed", "intercontext"})
      lr[g] = v;
  } else {
    for (const std::string& g : {"vit", "text", "fusion"}) lr[g] = decayed(ts.backbone_lr);
    for (const std::string& g : {"scorer", "adapter", "decoder", "mask_embed",
                                 "intercontext"})
      lr[g] = decayed(ts.head_lr);
  }
  return lr;
}

uint64_t Trainer::frozen_checksum() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& g : model_.params().groups()) {
    if (policy_.is_trainable(g)) continue;
    uint64_t c = model_.params().group_checksum(g);
    h = fnv1a(&c, sizeof(c), h);
  }
  return h;
}

void Trainer::audit_frozen(const std::map<std::string, uint64_t>& baseline) const {
  for (const auto& [group, checksum] : baseline) {
    if (model_.params().group_checksum(group) != checksum)
      fail(ErrorKind::usage, "freeze violation: group '" + group + "' changed");
  }
}

StepLoss Trainer::pair_step(int stage, const Dataset& data,
                            const std::vector<int>& pair_idx, Rng& rng, long long step,
                            int epoch) {
  const TrainSettings& ts = cfg_.train;
  const int N = static_cast<int>(pair_idx.size());
  std::vector<const Image*> images(N);
  std::vector<const Tokens*> queries(N);
  for (int i = 0; i < N; ++i) {
    const CandidateSet& set = data.sets[pair_idx[i]];
    images[i] = &set.images[set.golden];
    queries[i] = &set.query;
  }

  std::vector<Model::ImageEncode> img_enc(N);
  std::vector<Tensor> txt_enc(N);
  std::vector<std::vector<real>> img_emb(N), txt_emb(N);
  for (int i = 0; i < N; ++i) {
    img_enc[i] = model_.encode_image(*images[i]);
    txt_enc[i] = model_.encode_text(*queries[i]);
    img_emb[i] = mean_rows(img_enc[i].final).value();
    std::vector<int> live;
    for (int p = 0; p < queries[i]->length(); ++p)
      if (queries[i]->valid[p]) live.push_back(p);
    txt_emb[i] = mean_rows(gather_rows(txt_enc[i], live)).value();
  }

  std::vector<Pair> pairs =
      build_pair_batch(img_emb, txt_emb, ts.sampled_negatives, &rng);
  std::vector<Tensor> logits;
  std::vector<int> labels;
  std::vector<AttentionRecord> positive_records(N);
  for (size_t p = 0; p < pairs.size(); ++p) {
    auto fused = model_.fuse(txt_enc[pairs[p].text], *queries[pairs[p].text],
                             img_enc[pairs[p].image].final);
    logits.push_back(model_.itm_logits(fused.states));
    labels.push_back(pairs[p].label);
    if (static_cast<int>(p) < N) positive_records[p] = std::move(fused.record);
  }
  Tensor l_itm = itm_loss(logits, labels);

  StepLoss out;
  Tensor loss = l_itm;
  if (stage == 1) {
    std::vector<Tensor> preds;
    std::vector<Mat> targets;
    for (int i = 0; i < N; ++i) {
      MaskMatrix mask;
      if (ts.random_mask) {
        mask = uniform_random_mask(model_.config().model.patches(), ts.mask_ratio, rng);
      } else {
        auto salience = aggregate_attention(positive_records[i], ts.reduce, &rng);
        mask = select_mask(salience, ts.mask_ratio);
      }
      auto visible = model_.encode_image_visible(*images[i], mask);
      preds.push_back(model_.decode_masked(visible.final, mask));
      Mat rows = patchify(*images[i], model_.config().model.patch_size);
      Mat target(mask.mu, rows.cols);
      for (int j = 0; j < mask.mu; ++j)
        for (int s = 0; s < rows.cols; ++s) target.at(j, s) = rows.at(mask.masked_idx[j], s);
      targets.push_back(std::move(target));
    }
    Tensor l_tmim = masked_recon_loss(preds, targets);
    loss = total_loss(l_itm, l_tmim);
    out.tmim = l_tmim.item();
  }
  out.itm = l_itm.item();
  out.total = loss.item();

  model_.params().zero_grads();
  loss.backward();
  AdamConfig adam{cfg_.train.adam_beta1, cfg_.train.adam_beta2, cfg_.train.adam_eps,
                  cfg_.train.weight_decay, true};
  optimizer_step(model_.params(), opt_, group_lrs(stage, step, epoch), adam,
                 cfg_.train.clip_norm);
  return out;
}

StepLoss Trainer::set_step(int stage, const Dataset& data, const std::vector<int>& set_idx,
                           Rng& rng, long long step, int epoch) {
  (void)rng;
  Tensor acc;
  for (int si : set_idx) {
    const CandidateSet& set = data.sets[si];
    Tensor txt = model_.encode_text(set.query);
    const int M = static_cast<int>(set.images.size());
    Tensor logits;
    if (stage == 2) {
      std::vector<Tensor> scores;
      for (int k = 0; k < M; ++k) {
        auto enc = model_.encode_image(set.images[k]);
        auto fused = model_.fuse(txt, set.query, enc.final);
        Tensor e = model_.itm_logits(fused.states);
        // log-odds of match: e[0] - e[1]
        scores.push_back(sub(col_slice(e, 0, 1), col_slice(e, 1, 1)));
      }
      logits = concat_cols(scores);
    } else {
      std::vector<Tensor> pooled;
      for (int k = 0; k < M; ++k) {
        auto enc = model_.encode_image(set.images[k]);
        auto fused = model_.fuse(txt, set.query, enc.final);
        pooled.push_back(model_.pooled(fused.states));
      }
      logits = model_.candidate_logits(pooled);
    }
    Tensor l = retrieval_loss(logits, set.golden);
    acc = acc.defined() ? add(acc, l) : l;
  }
  Tensor loss = scale(acc, 1.0 / static_cast<real>(set_idx.size()));
  StepLoss out;
  out.total = loss.item();

  model_.params().zero_grads();
  loss.backward();
  AdamConfig adam{cfg_.train.adam_beta1, cfg_.train.adam_beta2, cfg_.train.adam_eps,
                  cfg_.train.finetune_weight_decay, false};
  optimizer_step(model_.params(), opt_, group_lrs(stage, step, epoch), adam,
                 cfg_.train.clip_norm);
  return out;
}

void Trainer::run_stage(int stage, const Dataset& data, Rng& rng, std::ostream* log) {
  if (stage < 0 || stage > 3) fail(ErrorKind::config, "stage must be 0..3");
  if (data.sets.empty()) fail(ErrorKind::data, "empty dataset");
  begin_stage(stage);

  std::map<std::string, uint64_t> frozen_baseline;
  for (const std::string& g : model_.params().groups())
    if (!policy_.is_trainable(g)) frozen_baseline[g] = model_.params().group_checksum(g);

  const TrainSettings& ts = cfg_.train;
  const bool pair_mode = stage <= 1;
  const int batch = pair_mode ? ts.batch_pairs : ts.batch_sets;
  std::vector<int> order(data.sets.size());
  std::iota(order.begin(), order.end(), 0);

  long long step = 0;
  for (int epoch = 0; epoch < ts.epochs[stage]; ++epoch) {
    // Fisher-Yates with the run RNG; deterministic under a fixed seed.
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);
    for (size_t ofs = 0; ofs < order.size(); ofs += batch) {
      std::vector<int> idx(order.begin() + ofs,
                           order.begin() + std::min(ofs + batch, order.size()));
      if (pair_mode && static_cast<int>(idx.size()) < 2) continue;  // mining needs >= 2
      StepLoss l = pair_mode ? pair_step(stage, data, idx, rng, step, epoch)
                             : set_step(stage, data, idx, rng, step, epoch);
      if (log) {
        real lr = group_lrs(stage, step, epoch).begin()->second;
        (*log) << strformat(
            "step=%lld stage=%d itm=%.6f tmim=%.6f total=%.6f lr=%.6e "
            "frozen_checksum=%016llx\n",
            step, stage, l.itm, l.tmim, l.total, lr,
            static_cast<unsigned long long>(frozen_checksum()));
      }
      ++step;
    }
    audit_frozen(frozen_baseline);
  }
}

}  // namespace patchalign
