#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "patchalign/tensor.hpp"

using namespace patchalign;
using patchalign::testing::finite_difference_check;

namespace {

Tensor randn(ParameterStore& store, const std::string& name, int r, int c, Rng& rng) {
  Tensor t = store.create(name, r, c, Init::zeros, rng);
  for (real& v : t.value()) v = rng.normal(0.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("elementwise and matmul forward values") {
  Tensor a = Tensor::from_data(2, 2, {1, 2, 3, 4});
  Tensor b = Tensor::from_data(2, 2, {5, 6, 7, 8});
  CHECK(add(a, b).value() == std::vector<real>{6, 8, 10, 12});
  CHECK(sub(a, b).value() == std::vector<real>{-4, -4, -4, -4});
  CHECK(mul(a, b).value() == std::vector<real>{5, 12, 21, 32});
  CHECK(matmul(a, b).value() == std::vector<real>{19, 22, 43, 50});
  // a * b^T
  CHECK(matmul_nt(a, b).value() == std::vector<real>{17, 23, 39, 53});
  CHECK(sum_all(a).item() == 10.0);
  CHECK(mean_rows(a).value() == std::vector<real>{2, 3});
}

TEST_CASE("softmax rows form a distribution and respect masks") {
  Rng rng(7);
  std::vector<real> vals(15);
  for (real& e : vals) e = rng.normal(0, 2);
  Tensor x = Tensor::from_data(3, 5, vals);
  Tensor p = softmax_rows(x);
  for (int i = 0; i < 3; ++i) {
    real s = 0;
    for (int j = 0; j < 5; ++j) {
      CHECK(p.at(i, j) >= 0.0);
      s += p.at(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  std::vector<uint8_t> valid{1, 0, 1, 1, 0};
  Tensor pm = softmax_rows_masked(x, valid);
  for (int i = 0; i < 3; ++i) {
    CHECK(pm.at(i, 1) == 0.0);
    CHECK(pm.at(i, 4) == 0.0);
    CHECK(pm.at(i, 0) + pm.at(i, 2) + pm.at(i, 3) == doctest::Approx(1.0).epsilon(1e-12));
  }
  std::vector<uint8_t> none{0, 0, 0, 0, 0};
  CHECK_THROWS_AS(softmax_rows_masked(x, none), Error);
}

TEST_CASE("every primitive op passes the finite-difference oracle") {
  ParameterStore store;
  Rng rng(42);
  Tensor a = randn(store, "p.a", 3, 4, rng);
  Tensor b = randn(store, "p.b", 3, 4, rng);
  Tensor w = randn(store, "p.w", 4, 5, rng);
  Tensor u = randn(store, "p.u", 2, 4, rng);
  Tensor vvec = randn(store, "p.v", 1, 4, rng);
  Tensor g = randn(store, "p.g", 1, 4, rng);
  Tensor fill = randn(store, "p.fill", 1, 4, rng);

  auto check = [&](const char* what, std::function<Tensor()> builder) {
    auto rep = finite_difference_check(store, builder, 1e-4, 1e-5);
    INFO(what << " worst=" << rep.worst_rel << " first="
              << (rep.failures.empty() ? std::string() : rep.failures[0]));
    CHECK(rep.ok());
  };

  std::vector<uint8_t> valid{1, 0, 1, 1};
  check("add/mul/scale/gelu chain",
        [&] { return sum_all(gelu(scale(mul(add(a, b), sub(a, b)), 0.7))); });
  check("matmul", [&] { return sum_all(gelu(matmul(a, w))); });
  check("matmul_nt", [&] { return sum_all(gelu(matmul_nt(a, u))); });
  check("add_rowvec", [&] { return sum_all(gelu(add_rowvec(a, vvec))); });
  check("softmax_rows", [&] { return sum_all(mul(softmax_rows(a), b)); });
  check("softmax_rows_masked",
        [&] { return sum_all(mul(softmax_rows_masked(a, valid), b)); });
  check("layer_norm_rows", [&] { return sum_all(mul(layer_norm_rows(a, g, vvec), b)); });
  check("concat+slice", [&] {
    Tensor c = concat_cols({a, b});
    return sum_all(mul(col_slice(c, 2, 4), sub(a, b)));
  });
  check("concat_rows+gather", [&] {
    Tensor c = concat_rows({a, u});
    return sum_all(gelu(gather_rows(c, {4, 0, 2, 4})));
  });
  check("assemble_rows", [&] {
    return sum_all(gelu(assemble_rows(u, {1, 3}, fill, 5)));
  });
  check("mean_rows", [&] { return sum_all(gelu(mean_rows(a))); });
  check("reshape", [&] { return sum_all(gelu(reshape(a, 4, 3))); });
  check("softmax_cross_entropy",
        [&] { return softmax_cross_entropy(mean_rows(a), 2); });
}

TEST_CASE("shared subgraphs accumulate gradients") {
  ParameterStore store;
  Rng rng(1);
  Tensor a = randn(store, "p.a", 2, 2, rng);
  // f = sum(a*a); df/da = 2a
  store.zero_grads();
  Tensor loss = sum_all(mul(a, a));
  loss.backward();
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(a.grad()[i] == doctest::Approx(2 * a.value()[i]).epsilon(1e-12));
}

TEST_CASE("detach stops gradient flow") {
  ParameterStore store;
  Rng rng(2);
  Tensor a = randn(store, "p.a", 2, 2, rng);
  store.zero_grads();
  Tensor loss = sum_all(mul(detach(a), a));
  loss.backward();
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(a.grad()[i] == doctest::Approx(a.value()[i]).epsilon(1e-12));
}

TEST_CASE("forward determinism is bit-exact") {
  ParameterStore store;
  Rng rng(3);
  Tensor a = randn(store, "p.a", 4, 4, rng);
  Tensor w = randn(store, "p.w", 4, 4, rng);
  auto run = [&] { return softmax_rows(matmul(gelu(a), w)).value(); };
  CHECK(run() == run());
}

TEST_CASE("shape violations throw") {
  Tensor a = Tensor::zeros(2, 3);
  CHECK_THROWS_AS(add(a, Tensor::zeros(3, 2)), Error);
  CHECK_THROWS_AS(matmul(a, a), Error);
  CHECK_THROWS_AS(gather_rows(a, {5}), Error);
  CHECK_THROWS_AS(reshape(a, 2, 2), Error);
  CHECK_THROWS_AS(Tensor::zeros(2, 2).backward(), Error);
}
