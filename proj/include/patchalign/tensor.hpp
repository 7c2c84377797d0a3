#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "patchalign/common.hpp"
#include "patchalign/rng.hpp"

namespace patchalign {

// Plain value matrix for data that never enters the graph (attention
// records, salience, images-as-patches).
struct Mat {
  int rows = 0, cols = 0;
  std::vector<real> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  real& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
  real at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
};

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Reverse-mode node. All tensors are 2-D; scalars are 1x1.
struct TensorImpl {
  int rows = 0, cols = 0;
  std::vector<real> value;
  std::vector<real> grad;  // allocated on first use, same length as value
  bool requires_grad = false;
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward;  // reads this->grad, accumulates into parents
  std::string tag;  // parameter name, empty for intermediates

  size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor from_mat(const Mat& m, bool requires_grad = false);
  static Tensor from_data(int rows, int cols, const std::vector<real>& data,
                          bool requires_grad = false);
  static Tensor scalar(real v);

  bool defined() const { return impl_ != nullptr; }
  int rows() const { return impl_->rows; }
  int cols() const { return impl_->cols; }
  size_t size() const { return impl_->size(); }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  const std::string& tag() const { return impl_->tag; }
  void set_tag(const std::string& t) { impl_->tag = t; }

  std::vector<real>& value() { return impl_->value; }
  const std::vector<real>& value() const { return impl_->value; }
  std::vector<real>& grad() { return impl_->grad; }
  const std::vector<real>& grad() const { return impl_->grad; }
  real& at(int i, int j) { return impl_->value[static_cast<size_t>(i) * cols() + j]; }
  real at(int i, int j) const { return impl_->value[static_cast<size_t>(i) * cols() + j]; }
  real item() const;

  Mat to_mat() const;

  TensorImpl* node() const { return impl_.get(); }
  const TensorImplPtr& ptr() const { return impl_; }

  // Runs reverse-mode accumulation from this node (must be 1x1).
  void backward() const;

 private:
  TensorImplPtr impl_;
};

// ---- graph-building operations ----

Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor sub(const Tensor& a, const Tensor& b);            // same shape
Tensor mul(const Tensor& a, const Tensor& b);            // elementwise
Tensor scale(const Tensor& a, real s);
Tensor add_rowvec(const Tensor& a, const Tensor& v);     // v is 1xC, broadcast over rows
Tensor matmul(const Tensor& a, const Tensor& b);         // (RxK)(KxC)
Tensor matmul_nt(const Tensor& a, const Tensor& b);      // (RxK)(CxK)^T -> RxC
Tensor gelu(const Tensor& a);                            // exact erf form
Tensor softmax_rows(const Tensor& a);
// Masked softmax: columns with valid[j]==0 get probability 0 exactly.
Tensor softmax_rows_masked(const Tensor& a, const std::vector<uint8_t>& col_valid);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       real eps = 1e-5);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor col_slice(const Tensor& a, int begin, int len);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
// Rebuild an N-row sequence: row visible_idx[i] <- visible row i, every
// other row <- fill (1xC). Backward routes into both sources.
Tensor assemble_rows(const Tensor& visible, const std::vector<int>& visible_idx,
                     const Tensor& fill, int total_rows);
Tensor mean_rows(const Tensor& a);                       // 1xC
Tensor sum_all(const Tensor& a);                         // 1x1
Tensor reshape(const Tensor& a, int rows, int cols);     // same element count
// Numerically stable -log softmax(logits)[target]; logits must be 1xK.
Tensor softmax_cross_entropy(const Tensor& logits, int target);
Tensor detach(const Tensor& a);

// ---- value-only helpers ----
std::vector<real> softmax_values(const std::vector<real>& logits);
int argmax_tie_low(const std::vector<real>& v);

}  // namespace patchalign
