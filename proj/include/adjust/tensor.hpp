#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adjust/rng.hpp"

namespace adjust {

// Dense float64 tensor with reverse-mode autodiff. A Tensor is a cheap
// handle to an immutable node; ops build a DAG and record backward
// closures only when some input requires gradients, so inference-mode
// forwards never retain a graph.
class Tensor {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily by backward()
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grads

    int64_t size() const { return static_cast<int64_t>(value.size()); }
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double fill, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor gaussian(std::vector<int> shape, double stddev, RngStream& rng,
                         bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[i]; }
  int64_t size() const { return n_->size(); }
  bool requires_grad() const { return n_->requires_grad; }

  std::span<const double> data() const { return n_->value; }
  // Mutating access; only valid for leaf parameters (no recorded producer).
  std::span<double> mutable_data();

  std::span<const double> grad() const;
  void zero_grad();

  double scalar() const;
  double at(int i) const { return n_->value[i]; }
  double at(int i, int j) const { return n_->value[static_cast<int64_t>(i) * dim(1) + j]; }

  std::shared_ptr<Node> node() const { return n_; }

  // Runs reverse-mode accumulation from this scalar. A second call on the
  // same graph without zero_grad() on the root is an error.
  void backward() const;

 private:
  std::shared_ptr<Node> n_;
};

// ---- op library ----------------------------------------------------------
// Shapes are [rows, cols] for rank-2 and [n] for rank-1. All ops validate
// shapes and throw std::invalid_argument on mismatch.

Tensor matmul(const Tensor& a, const Tensor& b);             // [m,k]x[k,n] -> [m,n]
Tensor matmul_transposed(const Tensor& a, const Tensor& bt); // [m,k]x[n,k]^T -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);                // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);                // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_row_broadcast(const Tensor& a, const Tensor& row);  // [m,n] + [n]
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);                          // row-wise over cols
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, int begin, int count);
Tensor slice_rows(const Tensor& a, int begin, int count);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean over rows of -log_softmax(x)[r, target[r]]; rows with target < 0 are
// skipped. Errors if no row is selected.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);
// sum_j p[r,j] * (log p[r,j] - log_softmax(x)[r,j]) averaged over selected
// rows; p is a constant (no gradient flows into it).
Tensor kl_teacher_rows(const Tensor& teacher_probs, const Tensor& student_logits,
                       const std::vector<int>& rows);

}  // namespace adjust
