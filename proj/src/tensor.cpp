#include "patchalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace patchalign {

namespace {

TensorImplPtr make_node(int rows, int cols) {
  auto n = std::make_shared<TensorImpl>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(static_cast<size_t>(rows) * cols, 0.0);
  return n;
}

bool any_requires(const std::vector<Tensor>& ps) {
  for (const auto& p : ps)
    if (p.requires_grad()) return true;
  return false;
}

Tensor finish(TensorImplPtr out, std::vector<Tensor> parents,
              std::function<void(TensorImpl&)> backward) {
  bool req = any_requires(parents);
  out->requires_grad = req;
  if (req) {
    out->parents.reserve(parents.size());
    for (auto& p : parents) out->parents.push_back(p.ptr());
    out->backward = std::move(backward);
  }
  return Tensor(std::move(out));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrorKind::shape, strformat("%s: shape mismatch %dx%d vs %dx%d", op,
                                     a.rows(), a.cols(), b.rows(), b.cols()));
}

}  // namespace

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  auto n = make_node(rows, cols);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_mat(const Mat& m, bool requires_grad) {
  auto n = make_node(m.rows, m.cols);
  n->value = m.v;
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_data(int rows, int cols, const std::vector<real>& data,
                         bool requires_grad) {
  if (data.size() != static_cast<size_t>(rows) * cols)
    fail(ErrorKind::shape, "from_data: element count does not match shape");
  auto n = make_node(rows, cols);
  n->value = data;
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(real v) {
  auto n = make_node(1, 1);
  n->value[0] = v;
  return Tensor(std::move(n));
}

real Tensor::item() const {
  if (size() != 1) fail(ErrorKind::shape, "item() on non-scalar tensor");
  return impl_->value[0];
}

Mat Tensor::to_mat() const {
  Mat m(rows(), cols());
  m.v = impl_->value;
  return m;
}

void Tensor::backward() const {
  if (size() != 1) fail(ErrorKind::shape, "backward() must start from a scalar");
  // Iterative topological sort; recursion depth is unbounded for long
  // residual chains.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      TensorImpl* p = node->parents[child].get();
      ++child;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  impl_->ensure_grad();
  impl_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  TensorImpl* pa = a.node();
  TensorImpl* pb = b.node();
  return finish(out, {a, b}, [pa, pb](TensorImpl& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] - bv[i];
  TensorImpl* pa = a.node();
  TensorImpl* pb = b.node();
  return finish(out, {a, b}, [pa, pb](TensorImpl& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
  TensorImpl* pa = a.node();
  TensorImpl* pb = b.node();
  return finish(out, {a, b}, [pa, pb](TensorImpl& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] += o.grad[i] * pa->value[i];
    }
  });
}

Tensor scale(const Tensor& a, real s) {
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.value();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * s;
  TensorImpl* pa = a.node();
  return finish(out, {a}, [pa, s](TensorImpl& o) {
    pa->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * s;
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    fail(ErrorKind::shape, "add_rowvec: vector must be 1 x cols(a)");
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.value();
  const auto& vv = v.value();
  const int cols = a.cols();
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < cols; ++j)
      out->value[static_cast<size_t>(i) * cols + j] = av[static_cast<size_t>(i) * cols + j] + vv[j];
  TensorImpl* pa = a.node();
  TensorImpl* pv = v.node();
  return finish(out, {a, v}, [pa, pv, cols](TensorImpl& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    }
    if (pv->requires_grad) {
      pv->ensure_grad();
      for (int i = 0; i < o.rows; ++i)
        for (int j = 0; j < cols; ++j)
          pv->grad[j] += o.grad[static_cast<size_t>(i) * cols + j];
    }
  });
}

namespace {

// C(RxC) += A(RxK) * B(KxC), row-major, ikj order.
void gemm_acc(const real* a, const real* b, real* c, int R, int K, int C) {
  for (int i = 0; i < R; ++i) {
    const real* arow = a + static_cast<size_t>(i) * K;
    real* crow = c + static_cast<size_t>(i) * C;
    for (int k = 0; k < K; ++k) {
      real av = arow[k];
      if (av == 0.0) continue;
      const real* brow = b + static_cast<size_t>(k) * C;
      for (int j = 0; j < C; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(RxC) += A(RxK) * B(CxK)^T
void gemm_nt_acc(const real* a, const real* b, real* c, int R, int K, int C) {
  for (int i = 0; i < R; ++i) {
    const real* arow = a + static_cast<size_t>(i) * K;
    real* crow = c + static_cast<size_t>(i) * C;
    for (int j = 0; j < C; ++j) {
      const real* brow = b + static_cast<size_t>(j) * K;
      real acc = 0.0;
      for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

// C(KxC) += A(RxK)^T * B(RxC)
void gemm_tn_acc(const real* a, const real* b, real* c, int R, int K, int C) {
  for (int i = 0; i < R; ++i) {
    const real* arow = a + static_cast<size_t>(i) * K;
    const real* brow = b + static_cast<size_t>(i) * C;
    for (int k = 0; k < K; ++k) {
      real av = arow[k];
      if (av == 0.0) continue;
      real* crow = c + static_cast<size_t>(k) * C;
      for (int j = 0; j < C; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    fail(ErrorKind::shape, strformat("matmul: inner dims %d vs %d", a.cols(), b.rows()));
  const int R = a.rows(), K = a.cols(), C = b.cols();
  auto out = make_node(R, C);
  gemm_acc(a.value().data(), b.value().data(), out->value.data(), R, K, C);
  TensorImpl* pa = a.node();
  TensorImpl* pb = b.node();
  return finish(out, {a, b}, [pa, pb, R, K, C](TensorImpl& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA += G * B^T
      gemm_nt_acc(o.grad.data(), pb->value.data(), pa->grad.data(), R, C, K);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB += A^T * G
      gemm_tn_acc(pa->value.data(), o.grad.data(), pb->grad.data(), R, K, C);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    fail(ErrorKind::shape, strformat("matmul_nt: inner dims %d vs %d", a.cols(), b.cols()));
  const int R = a.rows(), K = a.cols(), C = b.rows();
  auto out = make_node(R, C);
  gemm_nt_acc(a.value().data(), b.value().data(), out->value.data(), R, K, C);
  TensorImpl* pa = a.node();
  TensorImpl* pb = b.node();
  return finish(out, {a, b}, [pa, pb, R, K, C](TensorImpl& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA += G * B
      gemm_acc(o.grad.data(), pb->value.data(), pa->grad.data(), R, C, K);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB += G^T * A
      gemm_tn_acc(o.grad.data(), pa->value.data(), pb->grad.data(), R, C, K);
    }
  });
}

Tensor gelu(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols());
  const auto& av = a.value();
  for (size_t i = 0; i < av.size(); ++i)
    out->value[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * M_SQRT1_2));
  TensorImpl* pa = a.node();
  return finish(out, {a}, [pa](TensorImpl& o) {
    pa->ensure_grad();
    constexpr real inv_sqrt_2pi = 0.3989422804014327;
    for (size_t i = 0; i < o.grad.size(); ++i) {
      real x = pa->value[i];
      real cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      real pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      pa->grad[i] += o.grad[i] * (cdf + x * pdf);
    }
  });
}

namespace {

Tensor softmax_rows_impl(const Tensor& a, const std::vector<uint8_t>* valid) {
  const int R = a.rows(), C = a.cols();
  if (valid && static_cast<int>(valid->size()) != C)
    fail(ErrorKind::shape, "softmax mask length != cols");
  bool any_valid = !valid;
  if (valid)
    for (uint8_t m : *valid) any_valid = any_valid || m;
  if (!any_valid) fail(ErrorKind::usage, "softmax: every column masked out");
  auto out = make_node(R, C);
  const auto& av = a.value();
  for (int i = 0; i < R; ++i) {
    const real* row = av.data() + static_cast<size_t>(i) * C;
    real* orow = out->value.data() + static_cast<size_t>(i) * C;
    real mx = -1e300;
    for (int j = 0; j < C; ++j)
      if (!valid || (*valid)[j]) mx = std::max(mx, row[j]);
    real Z = 0.0;
    for (int j = 0; j < C; ++j) {
      if (!valid || (*valid)[j]) {
        orow[j] = std::exp(row[j] - mx);
        Z += orow[j];
      } else {
        orow[j] = 0.0;
      }
    }
    for (int j = 0; j < C; ++j) orow[j] /= Z;
  }
  TensorImpl* pa = a.node();
  return finish(out, {a}, [pa, R, C](TensorImpl& o) {
    pa->ensure_grad();
    for (int i = 0; i < R; ++i) {
      const real* p = o.value.data() + static_cast<size_t>(i) * C;
      const real* g = o.grad.data() + static_cast<size_t>(i) * C;
      real dot = 0.0;
      for (int j = 0; j < C; ++j) dot += p[j] * g[j];
      real* ag = pa->grad.data() + static_cast<size_t>(i) * C;
      for (int j = 0; j < C; ++j) ag[j] += p[j] * (g[j] - dot);
    }
  });
}

}  // namespace

Tensor softmax_rows(const Tensor& a) { return softmax_rows_impl(a, nullptr); }

Tensor softmax_rows_masked(const Tensor& a, const std::vector<uint8_t>& col_valid) {
  return softmax_rows_impl(a, &col_valid);
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
  const int R = x.rows(), C = x.cols();
  if (gain.rows() != 1 || gain.cols() != C || bias.rows() != 1 || bias.cols() != C)
    fail(ErrorKind::shape, "layer_norm: gain/bias must be 1 x cols");
  auto out = make_node(R, C);
  std::vector<real> inv_sigma(R), mu(R);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (int i = 0; i < R; ++i) {
    const real* row = xv.data() + static_cast<size_t>(i) * C;
    real m = 0.0;
    for (int j = 0; j < C; ++j) m += row[j];
    m /= C;
    real var = 0.0;
    for (int j = 0; j < C; ++j) var += (row[j] - m) * (row[j] - m);
    var /= C;
    real is = 1.0 / std::sqrt(var + eps);
    mu[i] = m;
    inv_sigma[i] = is;
    real* orow = out->value.data() + static_cast<size_t>(i) * C;
    for (int j = 0; j < C; ++j) orow[j] = (row[j] - m) * is * gv[j] + bv[j];
  }
  TensorImpl* px = x.node();
  TensorImpl* pg = gain.node();
  TensorImpl* pb = bias.node();
  return finish(out, {x, gain, bias},
                [px, pg, pb, R, C, mu, inv_sigma](TensorImpl& o) {
    for (int i = 0; i < R; ++i) {
      const real* row = px->value.data() + static_cast<size_t>(i) * C;
      const real* g = o.grad.data() + static_cast<size_t>(i) * C;
      real is = inv_sigma[i];
      real m = mu[i];
      if (pg->requires_grad) {
        pg->ensure_grad();
        for (int j = 0; j < C; ++j) pg->grad[j] += g[j] * (row[j] - m) * is;
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int j = 0; j < C; ++j) pb->grad[j] += g[j];
      }
      if (px->requires_grad) {
        px->ensure_grad();
        // dx = (1/sigma) * (gy - mean(gy) - xhat * mean(gy*xhat)),  gy = g*gain
        real mean_gy = 0.0, mean_gyx = 0.0;
        for (int j = 0; j < C; ++j) {
          real gy = g[j] * pg->value[j];
          real xh = (row[j] - m) * is;
          mean_gy += gy;
          mean_gyx += gy * xh;
        }
        mean_gy /= C;
        mean_gyx /= C;
        real* xg = px->grad.data() + static_cast<size_t>(i) * C;
        for (int j = 0; j < C; ++j) {
          real gy = g[j] * pg->value[j];
          real xh = (row[j] - m) * is;
          xg[j] += is * (gy - mean_gy - xh * mean_gyx);
        }
      }
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorKind::usage, "concat_cols: no inputs");
  const int R = parts[0].rows();
  int C = 0;
  for (const auto& p : parts) {
    if (p.rows() != R) fail(ErrorKind::shape, "concat_cols: row mismatch");
    C += p.cols();
  }
  auto out = make_node(R, C);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < R; ++i)
      std::copy_n(p.value().data() + static_cast<size_t>(i) * p.cols(), p.cols(),
                  out->value.data() + static_cast<size_t>(i) * C + off);
    off += p.cols();
  }
  std::vector<TensorImpl*> raw;
  for (const auto& p : parts) raw.push_back(p.node());
  return finish(out, parts, [raw, R, C](TensorImpl& o) {
    int off = 0;
    for (TensorImpl* p : raw) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (int i = 0; i < R; ++i) {
          const real* g = o.grad.data() + static_cast<size_t>(i) * C + off;
          real* pg = p->grad.data() + static_cast<size_t>(i) * p->cols;
          for (int j = 0; j < p->cols; ++j) pg[j] += g[j];
        }
      }
      off += p->cols;
    }
  });
}

Tensor col_slice(const Tensor& a, int begin, int len) {
  if (begin < 0 || len <= 0 || begin + len > a.cols())
    fail(ErrorKind::shape, "col_slice: range out of bounds");
  const int R = a.rows(), C = a.cols();
  auto out = make_node(R, len);
  for (int i = 0; i < R; ++i)
    std::copy_n(a.value().data() + static_cast<size_t>(i) * C + begin, len,
                out->value.data() + static_cast<size_t>(i) * len);
  TensorImpl* pa = a.node();
  return finish(out, {a}, [pa, begin, len, R, C](TensorImpl& o) {
    pa->ensure_grad();
    for (int i = 0; i < R; ++i) {
      const real* g = o.grad.data() + static_cast<size_t>(i) * len;
      real* pg = pa->grad.data() + static_cast<size_t>(i) * C + begin;
      for (int j = 0; j < len; ++j) pg[j] += g[j];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorKind::usage, "concat_rows: no inputs");
  const int C = parts[0].cols();
  int R = 0;
  for (const auto& p : parts) {
    if (p.cols() != C) fail(ErrorKind::shape, "concat_rows: col mismatch");
    R += p.rows();
  }
  auto out = make_node(R, C);
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), out->value.begin() + off);
    off += p.size();
  }
  std::vector<TensorImpl*> raw;
  for (const auto& p : parts) raw.push_back(p.node());
  return finish(out, parts, [raw](TensorImpl& o) {
    size_t off = 0;
    for (TensorImpl* p : raw) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += o.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  const int C = a.cols();
  for (int i : idx)
    if (i < 0 || i >= a.rows())
      fail(ErrorKind::shape, strformat("gather_rows: index %d out of %d rows", i, a.rows()));
  auto out = make_node(static_cast<int>(idx.size()), C);
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(a.value().data() + static_cast<size_t>(idx[r]) * C, C,
                out->value.data() + r * C);
  TensorImpl* pa = a.node();
  return finish(out, {a}, [pa, idx, C](TensorImpl& o) {
    pa->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      const real* g = o.grad.data() + r * C;
      real* pg = pa->grad.data() + static_cast<size_t>(idx[r]) * C;
      for (int j = 0; j < C; ++j) pg[j] += g[j];
    }
  });
}

Tensor assemble_rows(const Tensor& visible, const std::vector<int>& visible_idx,
                     const Tensor& fill, int total_rows) {
  const int C = visible.cols();
  if (fill.rows() != 1 || fill.cols() != C)
    fail(ErrorKind::shape, "assemble_rows: fill must be 1 x cols");
  if (static_cast<int>(visible_idx.size()) != visible.rows())
    fail(ErrorKind::shape, "assemble_rows: index count != visible rows");
  auto out = make_node(total_rows, C);
  std::vector<int> source(total_rows, -1);  // -1 = fill, else visible row
  for (size_t r = 0; r < visible_idx.size(); ++r) {
    int i = visible_idx[r];
    if (i < 0 || i >= total_rows) fail(ErrorKind::shape, "assemble_rows: index out of range");
    source[i] = static_cast<int>(r);
  }
  for (int i = 0; i < total_rows; ++i) {
    const real* src = source[i] >= 0
                          ? visible.value().data() + static_cast<size_t>(source[i]) * C
                          : fill.value().data();
    std::copy_n(src, C, out->value.data() + static_cast<size_t>(i) * C);
  }
  TensorImpl* pv = visible.node();
  TensorImpl* pf = fill.node();
  return finish(out, {visible, fill}, [pv, pf, source, C, total_rows](TensorImpl& o) {
    for (int i = 0; i < total_rows; ++i) {
      const real* g = o.grad.data() + static_cast<size_t>(i) * C;
      if (source[i] >= 0) {
        if (pv->requires_grad) {
          pv->ensure_grad();
          real* pg = pv->grad.data() + static_cast<size_t>(source[i]) * C;
          for (int j = 0; j < C; ++j) pg[j] += g[j];
        }
      } else if (pf->requires_grad) {
        pf->ensure_grad();
        for (int j = 0; j < C; ++j) pf->grad[j] += g[j];
      }
    }
  });
}

Tensor mean_rows(const Tensor& a) {
  const int R = a.rows(), C = a.cols();
  auto out = make_node(1, C);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) out->value[j] += a.at(i, j);
  for (int j = 0; j < C; ++j) out->value[j] /= R;
  TensorImpl* pa = a.node();
  return finish(out, {a}, [pa, R, C](TensorImpl& o) {
    pa->ensure_grad();
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j) pa->grad[static_cast<size_t>(i) * C + j] += o.grad[j] / R;
  });
}

Tensor sum_all(const Tensor& a) {
  auto out = make_node(1, 1);
  real s = 0.0;
  for (real v : a.value()) s += v;
  out->value[0] = s;
  TensorImpl* pa = a.node();
  return finish(out, {a}, [pa](TensorImpl& o) {
    pa->ensure_grad();
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += o.grad[0];
  });
}

Tensor reshape(const Tensor& a, int rows, int cols) {
  if (static_cast<size_t>(rows) * cols != a.size())
    fail(ErrorKind::shape, "reshape: element count mismatch");
  auto out = make_node(rows, cols);
  out->value = a.value();
  TensorImpl* pa = a.node();
  return finish(out, {a}, [pa](TensorImpl& o) {
    pa->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, int target) {
  if (logits.rows() != 1) fail(ErrorKind::shape, "softmax_cross_entropy: logits must be 1xK");
  const int K = logits.cols();
  if (target < 0 || target >= K)
    fail(ErrorKind::shape, "softmax_cross_entropy: target out of range");
  auto out = make_node(1, 1);
  const auto& lv = logits.value();
  real mx = *std::max_element(lv.begin(), lv.end());
  real Z = 0.0;
  for (int j = 0; j < K; ++j) Z += std::exp(lv[j] - mx);
  out->value[0] = std::log(Z) + mx - lv[target];
  TensorImpl* pl = logits.node();
  return finish(out, {logits}, [pl, target, K, mx, Z](TensorImpl& o) {
    pl->ensure_grad();
    real g = o.grad[0];
    for (int j = 0; j < K; ++j) {
      real p = std::exp(pl->value[j] - mx) / Z;
      pl->grad[j] += g * (p - (j == target ? 1.0 : 0.0));
    }
  });
}

Tensor detach(const Tensor& a) {
  auto out = make_node(a.rows(), a.cols());
  out->value = a.value();
  return Tensor(std::move(out));
}

std::vector<real> softmax_values(const std::vector<real>& logits) {
  std::vector<real> p(logits.size());
  real mx = *std::max_element(logits.begin(), logits.end());
  real Z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    Z += p[i];
  }
  for (real& v : p) v /= Z;
  return p;
}

int argmax_tie_low(const std::vector<real>& v) {
  int best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace patchalign
