#pragma once

#include <vector>

#include "patchalign/tensor.hpp"

namespace patchalign {

// One mined pair: indices into the batch's image / text lists plus a 2-way
// label (0 = match, 1 = mismatch).
struct Pair {
  int image = 0;
  int text = 0;
  int label = 0;
};

real cosine_similarity(const std::vector<real>& a, const std::vector<real>& b);

// For each positive i: the non-matching text closest to image i, and the
// non-matching image closest to text i, by cosine of the pooled unimodal
// embeddings. Ties break to the lowest index. Returns 2N mismatch pairs.
// sampled=true draws proportionally to shifted similarity instead (needs rng).
std::vector<Pair> mine_hard_negatives(const std::vector<std::vector<real>>& image_emb,
                                      const std::vector<std::vector<real>>& text_emb,
                                      bool sampled = false, Rng* rng = nullptr);

// The N positives followed by the 2N mined negatives (3N total).
std::vector<Pair> build_pair_batch(const std::vector<std::vector<real>>& image_emb,
                                   const std::vector<std::vector<real>>& text_emb,
                                   bool sampled = false, Rng* rng = nullptr);

// Mean 2-way softmax cross-entropy over 3N (logit, label) pairs.
Tensor itm_loss(const std::vector<Tensor>& logits, const std::vector<int>& labels);

// (1/N)(1/mu) * sum_i sum_j sum_s (pred - target)^2. The pixel index is
// summed, never averaged; tests pin this. predictions[i] is mu x S, targets
// carry the original pixel rows of the masked patches.
Tensor masked_recon_loss(const std::vector<Tensor>& predictions,
                         const std::vector<Mat>& targets);

inline Tensor total_loss(const Tensor& itm, const Tensor& recon) { return add(itm, recon); }

}  // namespace patchalign
