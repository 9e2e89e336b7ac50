#include "bvr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <sstream>

#include "bvr/error.hpp"

namespace bvr::nn {

void ParamSet::add(std::string name, Var var) { items_.push_back({std::move(name), std::move(var)}); }

void ParamSet::append(const ParamSet& other) {
  items_.insert(items_.end(), other.items_.begin(), other.items_.end());
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += static_cast<std::size_t>(p.var.rows() * p.var.cols());
  return n;
}

const NamedParam* ParamSet::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParamSet::set_trainable(bool on) const {
  for (auto p : items_) p.var.set_requires_grad(on);
}

void ParamSet::zero_grad() const {
  for (auto p : items_) p.var.zero_grad();
}

Var make_param(Matrix init) { return ag::leaf(std::move(init), true); }

Matrix normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
  }
  return m;
}

Linear::Linear(int in, int out, Rng& rng, bool bias, double gain) {
  weight_ = make_param(normal_matrix(rng, in, out, gain / std::sqrt(static_cast<double>(in))));
  if (bias) bias_ = make_param(Matrix::Zero(1, out));
}

Var Linear::forward(const Var& x) const {
  return bias_ ? ag::linear(x, weight_, bias_) : ag::linear(x, weight_);
}

void Linear::collect(const std::string& prefix, ParamSet& out) const {
  out.add(prefix + ".weight", weight_);
  if (bias_) out.add(prefix + ".bias", bias_);
}

Conv2d::Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng, bool bias)
    : kernel_(kernel), stride_(stride), pad_(pad), proj_(in * kernel * kernel, out, rng, bias) {}

FeatureMap Conv2d::forward(const FeatureMap& x) const {
  if (x.channels() * kernel_ * kernel_ != proj_.in_features()) {
    std::ostringstream os;
    os << "conv2d: expected " << proj_.in_features() / (kernel_ * kernel_) << " input channels, got " << x.channels();
    throw ShapeError(os.str());
  }
  const int out_h = (x.height + 2 * pad_ - kernel_) / stride_ + 1;
  const int out_w = (x.width + 2 * pad_ - kernel_) / stride_ + 1;
  Var cols = ag::im2col(x.tokens, x.height, x.width, kernel_, stride_, pad_);
  return {out_h, out_w, proj_.forward(cols)};
}

void Conv2d::collect(const std::string& prefix, ParamSet& out) const { proj_.collect(prefix, out); }

LayerNorm::LayerNorm(int dim) {
  gamma_ = make_param(Matrix::Ones(1, dim));
  beta_ = make_param(Matrix::Zero(1, dim));
}

Var LayerNorm::forward(const Var& x) const {
  return ag::add_row(ag::mul_row(ag::layer_norm_rows(x), gamma_), beta_);
}

void LayerNorm::collect(const std::string& prefix, ParamSet& out) const {
  out.add(prefix + ".gamma", gamma_);
  out.add(prefix + ".beta", beta_);
}

Mlp::Mlp(int in, int hidden, int out, Rng& rng, bool bias)
    : fc1_(in, hidden, rng, bias), fc2_(hidden, out, rng, bias) {}

Var Mlp::forward(const Var& x) const { return fc2_.forward(ag::silu(fc1_.forward(x))); }

void Mlp::collect(const std::string& prefix, ParamSet& out) const {
  fc1_.collect(prefix + ".fc1", out);
  fc2_.collect(prefix + ".fc2", out);
}

Attention::Attention(int query_dim, int kv_dim, int inner_dim, int out_dim, Rng& rng, bool out_bias)
    : wq_(query_dim, inner_dim, rng, false),
      wk_(kv_dim, inner_dim, rng, false),
      wv_(kv_dim, inner_dim, rng, false),
      wo_(inner_dim, out_dim, rng, out_bias),
      inner_(inner_dim) {}

Var Attention::forward(const Var& queries, const Var& context) const {
  Var q = wq_.forward(queries);
  Var k = wk_.forward(context);
  Var v = wv_.forward(context);
  return wo_.forward(scaled_dot_attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(inner_))));
}

void Attention::collect(const std::string& prefix, ParamSet& out) const {
  wq_.collect(prefix + ".q", out);
  wk_.collect(prefix + ".k", out);
  wv_.collect(prefix + ".v", out);
  wo_.collect(prefix + ".o", out);
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v, double scale) {
  Var scores = ag::scale(ag::matmul(q, ag::transpose(k)), scale);
  return ag::matmul(ag::softmax_rows(scores), v);
}

namespace {

using OperatorKey = std::tuple<int, int, int, int, int>;

template <typename Build>
Resampler memoized(const OperatorKey& key, Build build) {
  static std::mutex mutex;
  static std::map<OperatorKey, Resampler> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  Resampler r = build();
  cache.emplace(key, r);
  return r;
}

Resampler build_avg_pool(int height, int width, int factor) {
  if (factor < 1 || height % factor != 0 || width % factor != 0) {
    throw ShapeError("avg_pool: extent not divisible by pooling factor");
  }
  const int oh = height / factor;
  const int ow = width / factor;
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(height) * width);
  const double w = 1.0 / (factor * factor);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          entries.emplace_back(oy * ow + ox, (oy * factor + dy) * width + ox * factor + dx, w);
        }
      }
    }
  }
  auto r = std::make_shared<SparseMatrix>(oh * ow, height * width);
  r->setFromTriplets(entries.begin(), entries.end());
  return r;
}

// Source taps for one output coordinate under half-pixel alignment.
struct Taps {
  int i0, i1;
  double w0, w1;
};

Taps bilinear_taps(int out_index, int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  double src = (out_index + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  int i0 = static_cast<int>(std::floor(src));
  if (i0 > in_size - 1) i0 = in_size - 1;
  const int i1 = std::min(i0 + 1, in_size - 1);
  const double frac = src - i0;
  return {i0, i1, 1.0 - frac, frac};
}

Resampler build_bilinear(int in_height, int in_width, int out_height, int out_width) {
  if (in_height <= 0 || in_width <= 0 || out_height <= 0 || out_width <= 0) {
    throw ShapeError("bilinear: non-positive extent");
  }
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(out_height) * out_width * 4);
  for (int oy = 0; oy < out_height; ++oy) {
    const Taps ty = bilinear_taps(oy, in_height, out_height);
    for (int ox = 0; ox < out_width; ++ox) {
      const Taps tx = bilinear_taps(ox, in_width, out_width);
      const int row = oy * out_width + ox;
      const int ys[2] = {ty.i0, ty.i1};
      const double wy[2] = {ty.w0, ty.w1};
      const int xs[2] = {tx.i0, tx.i1};
      const double wx[2] = {tx.w0, tx.w1};
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const double w = wy[a] * wx[b];
          if (w != 0.0) entries.emplace_back(row, ys[a] * in_width + xs[b], w);
        }
      }
    }
  }
  auto r = std::make_shared<SparseMatrix>(out_height * out_width, in_height * in_width);
  r->setFromTriplets(entries.begin(), entries.end());  // duplicates are summed
  return r;
}

}  // namespace

Resampler avg_pool_operator(int height, int width, int factor) {
  return memoized({0, height, width, factor, 0}, [&] { return build_avg_pool(height, width, factor); });
}

Resampler bilinear_operator(int in_height, int in_width, int out_height, int out_width) {
  return memoized({1, in_height, in_width, out_height, out_width},
                  [&] { return build_bilinear(in_height, in_width, out_height, out_width); });
}

FeatureMap avg_pool(const FeatureMap& x, int factor) {
  if (factor == 1) return x;
  return {x.height / factor, x.width / factor, ag::resample(avg_pool_operator(x.height, x.width, factor), x.tokens)};
}

FeatureMap resize_bilinear(const FeatureMap& x, int out_height, int out_width) {
  if (out_height == x.height && out_width == x.width) return x;
  return {out_height, out_width, ag::resample(bilinear_operator(x.height, x.width, out_height, out_width), x.tokens)};
}

}  // namespace bvr::nn
