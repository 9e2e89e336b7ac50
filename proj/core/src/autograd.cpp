#include "bvr/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "bvr/error.hpp"

namespace bvr::ag {

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on a non-scalar value");
  return node_->value(0, 0);
}

namespace {

using Backward = std::function<void(Node&)>;

Var make(Matrix value, std::initializer_list<Var> parents, Backward bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

Var make_n(Matrix value, std::span<const Var> parents, Backward bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": shape " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
    throw ShapeError(os.str());
  }
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  Matrix v = a.value().unaryExpr(f);
  return make(std::move(v), {a}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Matrix g = self.grad.binaryExpr(p.value, [&](double gi, double x) { return gi * dfdx(x); });
    p.accumulate(g);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Var constant(Matrix value) { return leaf(std::move(value), false); }

Var leaf(Matrix value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad()) node->backward(*node);
  }
  // Intermediate gradients are not needed after the sweep.
  for (Node* node : order) {
    if (node->backward) node->grad.resize(0, 0);
  }
}

// --- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream os;
    os << "matmul: " << a.rows() << "x" << a.cols() << " * " << b.rows() << "x" << b.cols();
    throw ShapeError(os.str());
  }
  Matrix v = a.value() * b.value();
  return make(std::move(v), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

Var transpose(const Var& a) {
  Matrix v = a.value().transpose();
  return make(std::move(v), {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) { return add_row(matmul(x, weight), bias); }
Var linear(const Var& x, const Var& weight) { return matmul(x, weight); }

// --- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a}, [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  Matrix v = a.value().array() + s;
  return make(std::move(v), {a}, [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("mul_scalar: scale must be 1x1");
  const double k = s.value()(0, 0);
  return make(a.value() * k, {a, s}, [k](Node& self) {
    Node& pa = *self.parents[0];
    Node& ps = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * k);
    if (ps.requires_grad) ps.accumulate(Matrix::Constant(1, 1, self.grad.cwiseProduct(pa.value).sum()));
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row width mismatch");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return make(std::move(v), {a, row}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("mul_row: row width mismatch");
  Matrix v = a.value().array().rowwise() * row.value().row(0).array();
  return make(std::move(v), {a, row}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pr = *self.parents[1];
    if (pa.requires_grad) {
      Matrix g = self.grad.array().rowwise() * pr.value.row(0).array();
      pa.accumulate(g);
    }
    if (pr.requires_grad) pr.accumulate(self.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw ShapeError("mul_col: column height mismatch");
  Matrix v = a.value().array().colwise() * col.value().col(0).array();
  return make(std::move(v), {a, col}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pc = *self.parents[1];
    if (pa.requires_grad) {
      Matrix g = self.grad.array().colwise() * pc.value.col(0).array();
      pa.accumulate(g);
    }
    if (pc.requires_grad) pc.accumulate(self.grad.cwiseProduct(pa.value).rowwise().sum());
  });
}

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  return make(v, {a}, [v](Node& self) {
    Matrix g = self.grad.array() * v.array() * (1.0 - v.array());
    self.parents[0]->accumulate(g);
  });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x * stable_sigmoid(x); },
      [](double x) {
        const double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var tanh(const Var& a) {
  Matrix v = a.value().array().tanh();
  return make(v, {a}, [v](Node& self) {
    Matrix g = self.grad.array() * (1.0 - v.array().square());
    self.parents[0]->accumulate(g);
  });
}

Var exp(const Var& a) {
  Matrix v = a.value().array().exp();
  return make(v, {a}, [v](Node& self) { self.parents[0]->accumulate(self.grad.cwiseProduct(v)); });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var softplus(const Var& a) {
  return unary(a, [](double x) { return stable_softplus(x); }, [](double x) { return stable_sigmoid(x); });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var reciprocal(const Var& a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); });
}

// --- row-wise -------------------------------------------------------------

Var softmax_rows(const Var& a) {
  Matrix v(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    v.row(i) = (a.value().row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  return make(v, {a}, [v](Node& self) {
    Eigen::VectorXd dots = self.grad.cwiseProduct(v).rowwise().sum();
    Matrix g = v.array() * (self.grad.colwise() - dots).array();
    self.parents[0]->accumulate(g);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  const Eigen::VectorXd norms = a.value().rowwise().norm();
  Matrix v = Matrix::Zero(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (norms(i) >= eps) v.row(i) = a.value().row(i) / norms(i);
  }
  return make(v, {a}, [v, norms, eps](Node& self) {
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (norms(i) < eps) continue;
      const double d = v.row(i).dot(self.grad.row(i));
      g.row(i) = (self.grad.row(i) - d * v.row(i)) / norms(i);
    }
    self.parents[0]->accumulate(g);
  });
}

Var layer_norm_rows(const Var& a, double eps) {
  const Eigen::Index n = a.cols();
  Matrix xhat(a.rows(), n);
  Eigen::VectorXd inv_std(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mu = a.value().row(i).mean();
    const double var = (a.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (a.value().row(i).array() - mu) * inv_std(i);
  }
  return make(xhat, {a}, [xhat, inv_std](Node& self) {
    Matrix g(xhat.rows(), xhat.cols());
    for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
      const double gm = self.grad.row(i).mean();
      const double gx = self.grad.row(i).dot(xhat.row(i)) / static_cast<double>(xhat.cols());
      g.row(i) = inv_std(i) * (self.grad.row(i).array() - gm - xhat.row(i).array() * gx);
    }
    self.parents[0]->accumulate(g);
  });
}

// --- reductions -----------------------------------------------------------

Var sum(const Var& a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  return make(Matrix::Constant(1, 1, a.value().sum()), {a}, [r, c](Node& self) {
    self.parents[0]->accumulate(Matrix::Constant(r, c, self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  const double n = static_cast<double>(r * c);
  return make(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [r, c, n](Node& self) {
    self.parents[0]->accumulate(Matrix::Constant(r, c, self.grad(0, 0) / n));
  });
}

Var mean_rows(const Var& a) {
  const Eigen::Index r = a.rows();
  Matrix v = a.value().colwise().mean();
  return make(std::move(v), {a}, [r](Node& self) {
    Matrix g = self.grad.replicate(r, 1) / static_cast<double>(r);
    self.parents[0]->accumulate(g);
  });
}

Var sum_cols(const Var& a) {
  const Eigen::Index c = a.cols();
  Matrix v = a.value().rowwise().sum();
  return make(std::move(v), {a}, [c](Node& self) {
    self.parents[0]->accumulate(self.grad.replicate(1, c));
  });
}

// --- structure ------------------------------------------------------------

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_n(std::move(v), parts, [offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) p.accumulate(self.grad.middleRows(offsets[k], p.value.rows()));
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_n(std::move(v), parts, [offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) p.accumulate(self.grad.middleCols(offsets[k], p.value.cols()));
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  Matrix v = a.value().middleRows(start, count);
  const Eigen::Index r = a.rows(), c = a.cols();
  return make(std::move(v), {a}, [start, count, r, c](Node& self) {
    Matrix g = Matrix::Zero(r, c);
    g.middleRows(start, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  Matrix v = a.value().middleCols(start, count);
  const Eigen::Index r = a.rows(), c = a.cols();
  return make(std::move(v), {a}, [start, count, r, c](Node& self) {
    Matrix g = Matrix::Zero(r, c);
    g.middleCols(start, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.rows() * a.cols()) throw ShapeError("reshape: element count mismatch");
  Matrix v = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Eigen::Index r = a.rows(), c = a.cols();
  return make(std::move(v), {a}, [r, c](Node& self) {
    Matrix g = Eigen::Map<const Matrix>(self.grad.data(), r, c);
    self.parents[0]->accumulate(g);
  });
}

Var resample(const std::shared_ptr<const SparseMatrix>& r, const Var& a) {
  if (r->cols() != a.rows()) throw ShapeError("resample: operator/input row mismatch");
  Matrix v = (*r) * a.value();
  return make(std::move(v), {a}, [r](Node& self) {
    Matrix g = r->transpose() * self.grad;
    self.parents[0]->accumulate(g);
  });
}

Var im2col(const Var& a, int height, int width, int kernel, int stride, int pad) {
  if (a.rows() != static_cast<Eigen::Index>(height) * width) throw ShapeError("im2col: row count != H*W");
  const int out_h = (height + 2 * pad - kernel) / stride + 1;
  const int out_w = (width + 2 * pad - kernel) / stride + 1;
  if (out_h <= 0 || out_w <= 0) throw ShapeError("im2col: kernel larger than input");
  const Eigen::Index c = a.cols();
  const Eigen::Index patch = static_cast<Eigen::Index>(kernel) * kernel * c;
  Matrix v = Matrix::Zero(static_cast<Eigen::Index>(out_h) * out_w, patch);
  const Matrix& x = a.value();
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const Eigen::Index row = static_cast<Eigen::Index>(oy) * out_w + ox;
      for (int ky = 0; ky < kernel; ++ky) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= height) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= width) continue;
          const Eigen::Index col = (static_cast<Eigen::Index>(ky) * kernel + kx) * c;
          v.row(row).segment(col, c) = x.row(static_cast<Eigen::Index>(iy) * width + ix);
        }
      }
    }
  }
  return make(std::move(v), {a}, [=](Node& self) {
    Matrix g = Matrix::Zero(static_cast<Eigen::Index>(height) * width, c);
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Eigen::Index row = static_cast<Eigen::Index>(oy) * out_w + ox;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= width) continue;
            const Eigen::Index col = (static_cast<Eigen::Index>(ky) * kernel + kx) * c;
            g.row(static_cast<Eigen::Index>(iy) * width + ix) += self.grad.row(row).segment(col, c);
          }
        }
      }
    }
    self.parents[0]->accumulate(g);
  });
}

// --- losses ---------------------------------------------------------------

Var bce_with_logits(const Var& logits, const Matrix& target) {
  if (target.rows() != logits.rows() || target.cols() != logits.cols()) {
    throw ShapeError("bce_with_logits: target shape mismatch");
  }
  Matrix v = logits.value().binaryExpr(target, [](double x, double t) { return stable_softplus(x) - x * t; });
  return make(std::move(v), {logits}, [target](Node& self) {
    Node& p = *self.parents[0];
    Matrix g = p.value.binaryExpr(target, [](double x, double t) { return stable_sigmoid(x) - t; });
    p.accumulate(g.cwiseProduct(self.grad));
  });
}

Var sigmoid_focal(const Var& logits, const Matrix& target, double alpha, double gamma) {
  if (target.rows() != logits.rows() || target.cols() != logits.cols()) {
    throw ShapeError("sigmoid_focal: target shape mismatch");
  }
  auto value = [alpha, gamma](double x, double t) {
    const double p = stable_sigmoid(x);
    const double ce = stable_softplus(x) - x * t;
    const double pt = p * t + (1.0 - p) * (1.0 - t);
    const double at = alpha * t + (1.0 - alpha) * (1.0 - t);
    return at * std::pow(1.0 - pt, gamma) * ce;
  };
  auto derivative = [alpha, gamma](double x, double t) {
    const double p = stable_sigmoid(x);
    const double ce = stable_softplus(x) - x * t;
    const double pt = p * t + (1.0 - p) * (1.0 - t);
    const double at = alpha * t + (1.0 - alpha) * (1.0 - t);
    const double q = 1.0 - pt;
    const double dq = -(2.0 * t - 1.0) * p * (1.0 - p);
    const double dmod = q > 0.0 ? gamma * std::pow(q, gamma - 1.0) * dq : 0.0;
    return at * (dmod * ce + std::pow(q, gamma) * (p - t));
  };
  Matrix v = logits.value().binaryExpr(target, value);
  return make(std::move(v), {logits}, [target, derivative](Node& self) {
    Node& p = *self.parents[0];
    Matrix g = p.value.binaryExpr(target, derivative);
    p.accumulate(g.cwiseProduct(self.grad));
  });
}

}  // namespace bvr::ag
