#include "patchalign/objectives.hpp"

#include <cmath>

namespace patchalign {

real cosine_similarity(const std::vector<real>& a, const std::vector<real>& b) {
  if (a.size() != b.size()) fail(ErrorKind::shape, "cosine: dimension mismatch");
  real dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  real denom = std::sqrt(na) * std::sqrt(nb);
  if (denom == 0.0) return 0.0;
  return dot / denom;
}

namespace {

int pick_hardest(const std::vector<real>& sims, int exclude) {
  int best = -1;
  for (int j = 0; j < static_cast<int>(sims.size()); ++j) {
    if (j == exclude) continue;
    if (best < 0 || sims[j] > sims[best]) best = j;
  }
  return best;
}

int pick_sampled(const std::vector<real>& sims, int exclude, Rng& rng) {
  // Shift to positive mass; cosine lies in [-1, 1].
  real total = 0.0;
  for (int j = 0; j < static_cast<int>(sims.size()); ++j)
    if (j != exclude) total += sims[j] + 1.0 + 1e-9;
  real r = rng.uniform() * total;
  for (int j = 0; j < static_cast<int>(sims.size()); ++j) {
    if (j == exclude) continue;
    r -= sims[j] + 1.0 + 1e-9;
    if (r <= 0.0) return j;
  }
  for (int j = static_cast<int>(sims.size()) - 1; j >= 0; --j)
    if (j != exclude) return j;
  return -1;
}

}  // namespace

std::vector<Pair> mine_hard_negatives(const std::vector<std::vector<real>>& image_emb,
                                      const std::vector<std::vector<real>>& text_emb,
                                      bool sampled, Rng* rng) {
  const int N = static_cast<int>(image_emb.size());
  if (static_cast<int>(text_emb.size()) != N)
    fail(ErrorKind::shape, "mining: image/text batch sizes differ");
  if (N < 2) fail(ErrorKind::usage, "cannot mine negatives from a batch of one");
  if (sampled && !rng) fail(ErrorKind::usage, "sampled mining needs an RNG");

  std::vector<Pair> negatives;
  negatives.reserve(2 * N);
  // Hardest non-matching text for each image.
  for (int i = 0; i < N; ++i) {
    std::vector<real> sims(N);
    for (int j = 0; j < N; ++j) sims[j] = cosine_similarity(image_emb[i], text_emb[j]);
    int j = sampled ? pick_sampled(sims, i, *rng) : pick_hardest(sims, i);
    negatives.push_back({i, j, 1});
  }
  // Hardest non-matching image for each text.
  for (int i = 0; i < N; ++i) {
    std::vector<real> sims(N);
    for (int j = 0; j < N; ++j) sims[j] = cosine_similarity(text_emb[i], image_emb[j]);
    int j = sampled ? pick_sampled(sims, i, *rng) : pick_hardest(sims, i);
    negatives.push_back({j, i, 1});
  }
  return negatives;
}

std::vector<Pair> build_pair_batch(const std::vector<std::vector<real>>& image_emb,
                                   const std::vector<std::vector<real>>& text_emb,
                                   bool sampled, Rng* rng) {
  const int N = static_cast<int>(image_emb.size());
  std::vector<Pair> pairs;
  pairs.reserve(3 * N);
  for (int i = 0; i < N; ++i) pairs.push_back({i, i, 0});
  auto negs = mine_hard_negatives(image_emb, text_emb, sampled, rng);
  for (const Pair& p : negs) {
    if (p.image == p.text)
      fail(ErrorKind::usage, "mined negative collides with a positive pair");
    pairs.push_back(p);
  }
  return pairs;
}

Tensor itm_loss(const std::vector<Tensor>& logits, const std::vector<int>& labels) {
  if (logits.size() != labels.size())
    fail(ErrorKind::shape, "itm_loss: logits/labels size mismatch");
  if (logits.empty() || logits.size() % 3 != 0)
    fail(ErrorKind::shape, "itm_loss: pair count must be a positive multiple of 3");
  Tensor acc;
  for (size_t i = 0; i < logits.size(); ++i) {
    if (logits[i].rows() != 1 || logits[i].cols() != 2)
      fail(ErrorKind::shape, "itm_loss: each score must be a 1x2 logit pair");
    Tensor ce = softmax_cross_entropy(logits[i], labels[i]);
    acc = acc.defined() ? add(acc, ce) : ce;
  }
  return scale(acc, 1.0 / static_cast<real>(logits.size()));
}

Tensor masked_recon_loss(const std::vector<Tensor>& predictions,
                         const std::vector<Mat>& targets) {
  if (predictions.empty()) fail(ErrorKind::usage, "masked_recon_loss: empty batch");
  if (predictions.size() != targets.size())
    fail(ErrorKind::shape, "masked_recon_loss: prediction/target count mismatch");
  const int mu = predictions[0].rows();
  if (mu < 1) fail(ErrorKind::usage, "masked_recon_loss: mu must be >= 1");
  Tensor acc;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const Tensor& pred = predictions[i];
    if (pred.rows() != targets[i].rows || pred.cols() != targets[i].cols)
      fail(ErrorKind::shape, "masked_recon_loss: shape mismatch at instance " +
                                 std::to_string(i));
    if (pred.rows() != mu)
      fail(ErrorKind::shape, "masked_recon_loss: instances disagree on mu");
    Tensor d = sub(pred, Tensor::from_mat(targets[i]));
    Tensor sq = mul(d, d);
    acc = acc.defined() ? add(acc, sum_all(sq)) : sum_all(sq);
  }
  return scale(acc, 1.0 / (static_cast<real>(predictions.size()) * mu));
}

}  // namespace patchalign
