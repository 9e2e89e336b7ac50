#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Feature maps are stored as (H*W) x C token matrices, so every
// network in this project is expressed with the 2-D operations below.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace bvr::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Node {
  Matrix value;
  Matrix grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
  bool has_grad() const { return grad.size() != 0; }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  // Direct write access; meant for parameters and optimizer updates only.
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->has_grad(); }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var leaf(Matrix value, bool requires_grad);

// Seeds d(root)/d(root) = 1 and propagates to every reachable node that
// requires a gradient. Root must be 1x1.
void backward(const Var& root);

// --- linear algebra -------------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var linear(const Var& x, const Var& weight, const Var& bias);  // x W + b
Var linear(const Var& x, const Var& weight);                   // x W

// --- elementwise ----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, const Var& s);  // s is 1x1
Var add_row(const Var& a, const Var& row);   // row is 1 x cols
Var mul_row(const Var& a, const Var& row);   // row is 1 x cols
Var mul_col(const Var& a, const Var& col);   // col is rows x 1

Var sigmoid(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var softplus(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);

// --- row-wise -------------------------------------------------------------
Var softmax_rows(const Var& a);
// Rows with norm below `eps` map to zero (and receive zero gradient).
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
Var layer_norm_rows(const Var& a, double eps = 1e-5);

// --- reductions -----------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var mean_rows(const Var& a);  // column means, 1 x cols
Var sum_cols(const Var& a);   // per-row sums, rows x 1

// --- structure ------------------------------------------------------------
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

// Fixed linear map over token rows: R * a. Used for pooling, upsampling and
// bilinear resizing of (H*W) x C feature maps.
Var resample(const std::shared_ptr<const SparseMatrix>& r, const Var& a);

// Patch extraction for convolution. Input is (H*W) x C; output row
// (oy*Wo + ox) holds the k*k*C patch in (ky, kx, c) order, zero padded.
Var im2col(const Var& a, int height, int width, int kernel, int stride, int pad);

// --- losses (elementwise, targets are constants) ---------------------------
Var bce_with_logits(const Var& logits, const Matrix& target);
Var sigmoid_focal(const Var& logits, const Matrix& target, double alpha, double gamma);

}  // namespace bvr::ag
