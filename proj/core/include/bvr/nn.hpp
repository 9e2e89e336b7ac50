#pragma once

// Layer building blocks on top of the autograd core. A feature map is a
// (H*W) x C token matrix plus its spatial extent.

#include <memory>
#include <string>
#include <vector>

#include "bvr/autograd.hpp"
#include "bvr/rng.hpp"

namespace bvr::nn {

using ag::Matrix;
using ag::SparseMatrix;
using ag::Var;

struct FeatureMap {
  int height = 0;
  int width = 0;
  Var tokens;

  int channels() const { return static_cast<int>(tokens.cols()); }
};

struct NamedParam {
  std::string name;
  Var var;
};

// Ordered registry of named parameters. Order is insertion order, which
// keeps optimizer updates and checkpoint layout deterministic.
class ParamSet {
 public:
  void add(std::string name, Var var);
  void append(const ParamSet& other);

  const std::vector<NamedParam>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  const NamedParam* find(const std::string& name) const;

  void set_trainable(bool on) const;
  void zero_grad() const;

 private:
  std::vector<NamedParam> items_;
};

Var make_param(Matrix init);
Matrix normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true, double gain = 1.0);

  Var forward(const Var& x) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  int in_features() const { return static_cast<int>(weight_.rows()); }
  int out_features() const { return static_cast<int>(weight_.cols()); }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }
  bool has_bias() const { return static_cast<bool>(bias_); }

 private:
  Var weight_;
  Var bias_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng, bool bias = true);

  FeatureMap forward(const FeatureMap& x) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  int out_channels() const { return proj_.out_features(); }

 private:
  int kernel_ = 3;
  int stride_ = 1;
  int pad_ = 1;
  Linear proj_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int dim);

  Var forward(const Var& x) const;
  void collect(const std::string& prefix, ParamSet& out) const;

 private:
  Var gamma_;
  Var beta_;
};

// fc2(silu(fc1(x)))
class Mlp {
 public:
  Mlp() = default;
  Mlp(int in, int hidden, int out, Rng& rng, bool bias = true);

  Var forward(const Var& x) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  Linear& fc1() { return fc1_; }
  Linear& fc2() { return fc2_; }

 private:
  Linear fc1_;
  Linear fc2_;
};

// Single-head scaled dot-product attention with separate Q/K/V/O
// projections: softmax(Q K^T / sqrt(d)) V W_o.
class Attention {
 public:
  Attention() = default;
  Attention(int query_dim, int kv_dim, int inner_dim, int out_dim, Rng& rng, bool out_bias = true);

  Var forward(const Var& queries, const Var& context) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  Linear& value_proj() { return wv_; }
  Linear& out_proj() { return wo_; }

 private:
  Linear wq_;
  Linear wk_;
  Linear wv_;
  Linear wo_;
  int inner_ = 0;
};

// softmax(q k^T * scale) v, no projections.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, double scale);

// --- spatial resampling operators over (H*W) x C token rows ---------------
using Resampler = std::shared_ptr<const SparseMatrix>;

// Operators are memoized per extent; the returned matrices are immutable.
// Mean over non-overlapping factor x factor windows.
Resampler avg_pool_operator(int height, int width, int factor);
// Bilinear resize with half-pixel centers (align_corners = false).
Resampler bilinear_operator(int in_height, int in_width, int out_height, int out_width);

FeatureMap avg_pool(const FeatureMap& x, int factor);
FeatureMap resize_bilinear(const FeatureMap& x, int out_height, int out_width);

}  // namespace bvr::nn
