#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "patchalign/masking.hpp"

using namespace patchalign;
using patchalign::testing::finite_difference_check;

namespace {

// Brute-force oracle: full sort by (salience desc, index asc), take mu.
std::vector<int> topmu_oracle(const std::vector<real>& s, int mu) {
  std::vector<int> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return a < b;
  });
  idx.resize(mu);
  std::sort(idx.begin(), idx.end());
  return idx;
}

AttentionRecord make_record(int layers, int heads, int tokens, int patches, Rng& rng,
                            std::vector<uint8_t> valid = {}) {
  AttentionRecord r;
  r.patches = patches;
  r.token_valid = valid.empty() ? std::vector<uint8_t>(tokens, 1) : valid;
  for (int l = 0; l < layers; ++l) {
    std::vector<Mat> row;
    for (int h = 0; h < heads; ++h) {
      Mat m(tokens, patches);
      for (int t = 0; t < tokens; ++t) {
        real z = 0;
        for (int p = 0; p < patches; ++p) {
          m.at(t, p) = rng.uniform() + 1e-6;
          z += m.at(t, p);
        }
        for (int p = 0; p < patches; ++p) m.at(t, p) /= z;
      }
      row.push_back(std::move(m));
    }
    r.attn.push_back(std::move(row));
  }
  return r;
}

}  // namespace

TEST_CASE("mask cardinality: mu = max(1, round(pi * patches))") {
  CHECK(mask_count(0.0, 16) == 1);
  CHECK(mask_count(0.25, 16) == 4);
  CHECK(mask_count(1.0, 16) == 16);
  CHECK(mask_count(0.25, 196) == 49);  // 196-patch geometry
  // Property over many (pi, patches) pairs.
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    int patches = 1 + rng.below(1024);
    real pi = rng.uniform();
    int mu = mask_count(pi, patches);
    int expect = std::max(1, std::min<int>(patches, static_cast<int>(std::floor(pi * patches + 0.5))));
    CHECK(mu == expect);
    auto m = select_mask(std::vector<real>(patches, 0.0), pi);
    CHECK(m.mu == expect);
    CHECK(static_cast<int>(m.masked_idx.size()) == expect);
  }
}

TEST_CASE("select_mask worked examples and tie-break") {
  auto m = select_mask({0.1, 0.4, 0.2, 0.3}, 0.5);
  CHECK(m.masked_idx == std::vector<int>{1, 3});
  CHECK(m.visible_idx == std::vector<int>{0, 2});

  auto t = select_mask({0.3, 0.3, 0.2, 0.2}, 0.25);
  CHECK(t.mu == 1);
  CHECK(t.masked_idx == std::vector<int>{0});  // ascending-index tie-break

  CHECK_THROWS_AS(select_mask({0.1, std::nan("")}, 0.5), Error);
}

TEST_CASE("select_mask agrees with the brute-force oracle on 1000 vectors") {
  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    int patches = 2 + rng.below(64);
    std::vector<real> s(patches);
    for (real& v : s) v = rng.below(8) * 0.125;  // coarse values force ties
    real pi = rng.uniform();
    auto m = select_mask(s, pi);
    CHECK(m.masked_idx == topmu_oracle(s, m.mu));
  }
}

TEST_CASE("selection is invariant under positive affine rescaling") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    int patches = 2 + rng.below(32);
    std::vector<real> s(patches);
    for (real& v : s) v = rng.normal(0, 1);
    real pi = rng.uniform();
    real a = rng.uniform() * 3.0 + 0.01;
    real b = rng.normal(0, 5);
    std::vector<real> scaled(patches);
    for (int i = 0; i < patches; ++i) scaled[i] = a * s[i] + b;
    CHECK(select_mask(s, pi).masked_idx == select_mask(scaled, pi).masked_idx);
  }
}

TEST_CASE("visible/masked indices partition the patch range") {
  Rng rng(19);
  for (int trial = 0; trial < 500; ++trial) {
    int patches = 1 + rng.below(128);
    std::vector<real> s(patches);
    for (real& v : s) v = rng.normal(0, 1);
    auto m = select_mask(s, rng.uniform());
    std::vector<int> all(m.masked_idx);
    all.insert(all.end(), m.visible_idx.begin(), m.visible_idx.end());
    std::sort(all.begin(), all.end());
    std::vector<int> expect(patches);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(all == expect);
  }
}

TEST_CASE("gather of visible rows keeps original order") {
  // patches = 4, mask {1,3} -> visible rows {0,2}
  auto m = select_mask({0.0, 1.0, 0.0, 1.0}, 0.5);
  CHECK(m.masked_idx == std::vector<int>{1, 3});
  Tensor states = Tensor::from_data(4, 2, {0, 0, 1, 1, 2, 2, 3, 3});
  Tensor visible = gather_rows(states, m.visible_idx);
  CHECK(visible.value() == std::vector<real>{0, 0, 2, 2});

  auto one = select_mask({9.0, 0.0, 0.0, 0.0}, 0.25);
  CHECK(one.masked_idx == std::vector<int>{0});
  CHECK(gather_rows(states, one.visible_idx).value() == std::vector<real>{1, 1, 2, 2, 3, 3});
}

TEST_CASE("attention aggregation: reductions match nested-loop oracles") {
  Rng rng(23);
  // Singleton record: salience is that row.
  auto single = make_record(1, 1, 1, 6, rng);
  auto s = aggregate_attention(single, TokenReduce::mean_tokens);
  for (int p = 0; p < 6; ++p) CHECK(s[p] == doctest::Approx(single.attn[0][0].at(0, p)));

  // Two tokens, mean: (r1 + r2) / 2.
  auto two = make_record(1, 1, 2, 5, rng);
  auto sm = aggregate_attention(two, TokenReduce::mean_tokens);
  for (int p = 0; p < 5; ++p)
    CHECK(sm[p] ==
          doctest::Approx((two.attn[0][0].at(0, p) + two.attn[0][0].at(1, p)) / 2));

  // 2 layers x 2 heads x 3 tokens: nested-loop average within 1e-9.
  auto rec = make_record(2, 2, 3, 7, rng);
  auto got = aggregate_attention(rec, TokenReduce::mean_tokens);
  for (int p = 0; p < 7; ++p) {
    real acc = 0;
    for (int l = 0; l < 2; ++l)
      for (int h = 0; h < 2; ++h)
        for (int t = 0; t < 3; ++t) acc += rec.attn[l][h].at(t, p);
    CHECK(got[p] == doctest::Approx(acc / 12.0).epsilon(1e-9));
  }

  // max over tokens of the layer/head mean.
  auto mx = aggregate_attention(rec, TokenReduce::max_tokens);
  for (int p = 0; p < 7; ++p) {
    real best = -1;
    for (int t = 0; t < 3; ++t) {
      real acc = 0;
      for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h) acc += rec.attn[l][h].at(t, p);
      best = std::max(best, acc / 4.0);
    }
    CHECK(mx[p] == doctest::Approx(best).epsilon(1e-9));
  }

  // Pad tokens are excluded; all-pad records are an error.
  auto padded = make_record(1, 1, 3, 4, rng, {1, 0, 1});
  auto sp = aggregate_attention(padded, TokenReduce::mean_tokens);
  for (int p = 0; p < 4; ++p)
    CHECK(sp[p] == doctest::Approx(
                       (padded.attn[0][0].at(0, p) + padded.attn[0][0].at(2, p)) / 2));
  auto allpad = make_record(1, 1, 2, 4, rng, {0, 0});
  CHECK_THROWS_AS(aggregate_attention(allpad, TokenReduce::mean_tokens), Error);

  // random_token draws only live tokens and needs an RNG.
  CHECK_THROWS_AS(aggregate_attention(padded, TokenReduce::random_token), Error);
  Rng pick(3);
  auto sr = aggregate_attention(padded, TokenReduce::random_token, &pick);
  bool is_row0 = true, is_row2 = true;
  for (int p = 0; p < 4; ++p) {
    is_row0 = is_row0 && sr[p] == doctest::Approx(padded.attn[0][0].at(0, p));
    is_row2 = is_row2 && sr[p] == doctest::Approx(padded.attn[0][0].at(2, p));
  }
  CHECK((is_row0 || is_row2));
}

TEST_CASE("decoder: shapes, degenerate head, gradient check") {
  ModelConfig m;
  m.vit_width = 16;
  m.vit_heads = 4;
  m.vit_depth = 2;
  DecoderConfig d;
  d.depth = 1;
  d.heads = 4;
  ParameterStore store;
  Rng rng(29);
  auto dec = MaskedDecoder::create(store, m, d, rng);

  auto mask = select_mask({9, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}, 1.0 / 16.0);
  CHECK(mask.mu == 1);
  std::vector<real> vis(15 * 16);
  Rng vr(31);
  for (real& v : vis) v = vr.normal(0, 1);
  Tensor visible = Tensor::from_data(15, 16, vis);
  Tensor pred = dec.decode(visible, mask);
  CHECK(pred.rows() == 1);
  CHECK(pred.cols() == 48);  // 4x4x3 patches

  // Zero pixel head: every prediction equals its bias.
  Tensor hw = store.get("decoder.pixel_head.w");
  std::fill(hw.value().begin(), hw.value().end(), 0.0);
  Tensor hb = store.get("decoder.pixel_head.b");
  for (int j = 0; j < 48; ++j) hb.at(0, j) = 0.25 * j;
  Tensor flat = dec.decode(visible, mask);
  for (int j = 0; j < 48; ++j) CHECK(flat.at(0, j) == doctest::Approx(0.25 * j));

  // Restore a random head and run the finite-difference oracle.
  for (real& v : hw.value()) v = vr.normal(0, 0.2);
  auto mask2 = select_mask({1, 5, 2, 8, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 4, 7}, 0.25);
  std::vector<real> vis2(12 * 16);
  for (real& v : vis2) v = vr.normal(0, 1);
  Tensor visible2 = Tensor::from_data(12, 16, vis2);
  auto rep = finite_difference_check(
      store, [&] { return sum_all(gelu(dec.decode(visible2, mask2))); }, 1e-4, 1e-4);
  INFO((rep.failures.empty() ? std::string() : rep.failures[0]));
  CHECK(rep.ok());

  CHECK_THROWS_AS(dec.decode(Tensor::zeros(3, 16), mask2), Error);
}
