#include "irbindiff/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "irbindiff/error.hpp"

namespace irbindiff::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using StridedC = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

CMapM cmat(const Tensor& t) {
  return CMapM(t.data(), static_cast<Eigen::Index>(t.rows()),
               static_cast<Eigen::Index>(t.cols()));
}
MapM mat(Tensor& t) {
  return MapM(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

Var make_result(Tensor value, std::vector<Var> inputs, const char* op,
                std::function<void(Node&)> bw) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Var& v) { return v.requires_grad(); });
    if (needs) {
      node->requires_grad = true;
      for (auto& v : inputs) node->parents.push_back(v.ptr());
      node->backward = std::move(bw);
    }
  }
  return Var(std::move(node));
}

bool wants(const Node* n) { return n->requires_grad; }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

double Var::item() const {
  if (value().size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return value()[0];
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var variable(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward() needs a scalar, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward) n->grad_buffer().fill(0.0);
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Var matmul(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows() || B.shape().size() != 2) shape_error("matmul", A.shape(), B.shape());
  Tensor out({A.rows(), B.cols()});
  mat(out).noalias() = cmat(A) * cmat(B);
  Node* pa = a.node();
  Node* pb = b.node();
  return make_result(std::move(out), {a, b}, "matmul", [pa, pb](Node& self) {
    const auto dy = cmat(self.grad);
    if (wants(pa)) mat(pa->grad_buffer()).noalias() += dy * cmat(pb->value).transpose();
    if (wants(pb)) mat(pb->grad_buffer()).noalias() += cmat(pa->value).transpose() * dy;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols()) shape_error("matmul_nt", A.shape(), B.shape());
  Tensor out({A.rows(), B.rows()});
  mat(out).noalias() = cmat(A) * cmat(B).transpose();
  Node* pa = a.node();
  Node* pb = b.node();
  return make_result(std::move(out), {a, b}, "matmul_nt", [pa, pb](Node& self) {
    const auto dy = cmat(self.grad);
    if (wants(pa)) mat(pa->grad_buffer()).noalias() += dy * cmat(pb->value);
    if (wants(pb)) mat(pb->grad_buffer()).noalias() += dy.transpose() * cmat(pa->value);
  });
}

namespace {

template <class F, class G>
Var binary_same_shape(const Var& a, const Var& b, const char* op, F forward, G backward_ab) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
  Tensor out(a.shape());
  const auto& A = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(A[i], B[i]);
  Node* pa = a.node();
  Node* pb = b.node();
  return make_result(std::move(out), {a, b}, op, [pa, pb, backward_ab](Node& self) {
    const auto& dy = self.grad;
    if (wants(pa)) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < dy.size(); ++i)
        ga[i] += backward_ab(dy[i], pa->value[i], pb->value[i], true);
    }
    if (wants(pb)) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < dy.size(); ++i)
        gb[i] += backward_ab(dy[i], pa->value[i], pb->value[i], false);
    }
  });
}

template <class F, class D>
Var unary(const Var& x, const char* op, F forward, D derivative_from_xy) {
  const auto& X = x.value();
  Tensor out(X.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(X[i]);
  Node* px = x.node();
  return make_result(std::move(out), {x}, op, [px, derivative_from_xy](Node& self) {
    auto& gx = px->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += self.grad[i] * derivative_from_xy(px->value[i], self.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_same_shape(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double dy, double, double, bool) { return dy; });
}

Var sub(const Var& a, const Var& b) {
  return binary_same_shape(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double dy, double, double, bool first) { return first ? dy : -dy; });
}

Var mul(const Var& a, const Var& b) {
  return binary_same_shape(
      a, b, "elementwise_mul", [](double x, double y) { return x * y; },
      [](double dy, double x, double y, bool first) { return dy * (first ? y : x); });
}

Var scale(const Var& a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var gelu(const Var& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var tanh(const Var& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var add_bias(const Var& x, const Var& bias) {
  const auto& X = x.value();
  const auto& B = bias.value();
  if (B.size() != X.cols()) shape_error("add_bias", X.shape(), B.shape());
  Tensor out = X;
  const std::size_t rows = X.rows(), cols = X.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += B[c];
  Node* px = x.node();
  Node* pb = bias.node();
  return make_result(std::move(out), {x, bias}, "add_bias", [px, pb](Node& self) {
    if (wants(px)) mat(px->grad_buffer()) += cmat(self.grad);
    if (wants(pb)) {
      auto& gb = pb->grad_buffer();
      const auto colsum = cmat(self.grad).colwise().sum();
      for (std::size_t c = 0; c < gb.size(); ++c) gb[c] += colsum(static_cast<Eigen::Index>(c));
    }
  });
}

Var embedding_lookup(const Var& table, const std::vector<int>& ids) {
  const auto& T = table.value();
  const std::size_t dim = T.cols();
  Tensor out({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows()) {
      throw InputError("embedding id " + std::to_string(ids[i]) + " out of range [0, " +
                       std::to_string(T.rows()) + ")");
    }
    std::copy_n(T.data() + static_cast<std::size_t>(ids[i]) * dim, dim, out.data() + i * dim);
  }
  Node* pt = table.node();
  return make_result(std::move(out), {table}, "embedding_lookup", [pt, ids, dim](Node& self) {
    auto& g = pt->grad_buffer();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double* dst = g.data() + static_cast<std::size_t>(ids[i]) * dim;
      const double* src = self.grad.data() + i * dim;
      for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (gamma.value().size() != cols) shape_error("layer_norm", X.shape(), gamma.shape());
  if (beta.value().size() != cols) shape_error("layer_norm", X.shape(), beta.shape());
  auto xhat = std::make_shared<Tensor>(X.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(X.shape());
  const auto& G = gamma.value();
  const auto& B = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = X.row(r);
    double mean = 0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (in[c] - mean) * is;
      xhat->at(r, c) = h;
      out.at(r, c) = G[c] * h + B[c];
    }
  }
  Node* px = x.node();
  Node* pg = gamma.node();
  Node* pb = beta.node();
  return make_result(
      std::move(out), {x, gamma, beta}, "layer_norm",
      [px, pg, pb, xhat, inv_std, rows, cols](Node& self) {
        const auto& dy = self.grad;
        if (wants(pg) || wants(pb)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              if (wants(pg)) pg->grad_buffer()[c] += dy.at(r, c) * xhat->at(r, c);
              if (wants(pb)) pb->grad_buffer()[c] += dy.at(r, c);
            }
        }
        if (!wants(px)) return;
        auto& gx = px->grad_buffer();
        const auto& G = pg->value;
        std::vector<double> dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0, m2 = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            dxhat[c] = dy.at(r, c) * G[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xhat->at(r, c);
          }
          m1 /= static_cast<double>(cols);
          m2 /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c)
            gx.at(r, c) += (*inv_std)[r] * (dxhat[c] - m1 - xhat->at(r, c) * m2);
        }
      });
}

Var softmax(const Var& x, double eps) {
  const auto& X = x.value();
  Tensor out(X.shape());
  const std::size_t rows = X.rows(), cols = X.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = X.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += (o[c] = std::exp(in[c] - mx));
    // The shifted sum is >= 1, so eps only guards degenerate input.
    const double denom = std::max(s, eps);
    for (std::size_t c = 0; c < cols; ++c) o[c] /= denom;
  }
  Node* px = x.node();
  return make_result(std::move(out), {x}, "softmax", [px, rows, cols](Node& self) {
    auto& gx = px->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += self.grad.at(r, c) * self.value.at(r, c);
      for (std::size_t c = 0; c < cols; ++c)
        gx.at(r, c) += self.value.at(r, c) * (self.grad.at(r, c) - dot);
    }
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw ShapeError("concat axis must be 0 or 1");
  const std::size_t rows0 = parts[0].value().rows(), cols0 = parts[0].value().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    if (axis == 0 && v.cols() != cols0) shape_error("concat", parts[0].shape(), p.shape());
    if (axis == 1 && v.rows() != rows0) shape_error("concat", parts[0].shape(), p.shape());
    total += axis == 0 ? v.rows() : v.cols();
  }
  Tensor out(axis == 0 ? Shape{total, cols0} : Shape{rows0, total});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    offsets.push_back(off);
    if (axis == 0) {
      std::copy(v.storage().begin(), v.storage().end(), out.data() + off * cols0);
      off += v.rows();
    } else {
      for (std::size_t r = 0; r < rows0; ++r)
        std::copy_n(v.data() + r * v.cols(), v.cols(), out.data() + r * total + off);
      off += v.cols();
    }
  }
  std::vector<Node*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result(std::move(out), parts, "concat",
                     [nodes, offsets, axis, total](Node& self) {
                       for (std::size_t i = 0; i < nodes.size(); ++i) {
                         Node* n = nodes[i];
                         if (!wants(n)) continue;
                         auto& g = n->grad_buffer();
                         if (axis == 0) {
                           const double* src = self.grad.data() + offsets[i] * g.cols();
                           for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
                         } else {
                           for (std::size_t r = 0; r < g.rows(); ++r)
                             for (std::size_t c = 0; c < g.cols(); ++c)
                               g.at(r, c) += self.grad[r * total + offsets[i] + c];
                         }
                       }
                     });
}

Var slice(const Var& x, int axis, std::size_t begin, std::size_t end) {
  const auto& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  const std::size_t limit = axis == 0 ? rows : cols;
  if ((axis != 0 && axis != 1) || begin > end || end > limit) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(X.shape()));
  }
  const std::size_t n = end - begin;
  Tensor out(axis == 0 ? Shape{n, cols} : Shape{rows, n});
  if (axis == 0) {
    std::copy_n(X.data() + begin * cols, n * cols, out.data());
  } else {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(X.data() + r * cols + begin, n, out.data() + r * n);
  }
  Node* px = x.node();
  return make_result(std::move(out), {x}, "slice", [px, axis, begin, n, cols](Node& self) {
    auto& g = px->grad_buffer();
    if (axis == 0) {
      for (std::size_t k = 0; k < n * cols; ++k) g[begin * cols + k] += self.grad[k];
    } else {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) g.at(r, begin + c) += self.grad[r * n + c];
    }
  });
}

Var mean_pool(const Var& x) {
  const auto& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (rows == 0) throw ShapeError("mean_pool of empty tensor " + shape_str(X.shape()));
  Tensor out({1, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += X.at(r, c);
  for (auto& v : out.values()) v /= static_cast<double>(rows);
  Node* px = x.node();
  return make_result(std::move(out), {x}, "mean_pool", [px, rows, cols](Node& self) {
    auto& g = px->grad_buffer();
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += self.grad[c] * inv;
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value();
  out.reshape(std::move(shape));
  Node* px = x.node();
  return make_result(std::move(out), {x}, "reshape", [px](Node& self) {
    auto& g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var sum(const Var& x) {
  double s = 0;
  for (double v : x.value().values()) s += v;
  Node* px = x.node();
  return make_result(Tensor::scalar(s), {x}, "sum", [px](Node& self) {
    auto& g = px->grad_buffer();
    for (auto& v : g.values()) v += self.grad[0];
  });
}

Var rowwise_dot(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("rowwise_dot", a.shape(), b.shape());
  const auto& A = a.value();
  const auto& B = b.value();
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += A.at(r, c) * B.at(r, c);
    out[r] = s;
  }
  Node* pa = a.node();
  Node* pb = b.node();
  return make_result(std::move(out), {a, b}, "rowwise_dot", [pa, pb, rows, cols](Node& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double dy = self.grad[r];
      for (std::size_t c = 0; c < cols; ++c) {
        if (wants(pa)) pa->grad_buffer().at(r, c) += dy * pb->value.at(r, c);
        if (wants(pb)) pb->grad_buffer().at(r, c) += dy * pa->value.at(r, c);
      }
    }
  });
}

Var l2_normalize(const Var& x) {
  const auto& X = x.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  auto norms = std::make_shared<std::vector<double>>(rows);
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (double v : X.row(r)) s += v * v;
    const double n = std::sqrt(s);
    if (n == 0.0) throw NumericError("l2_normalize of a zero row");
    (*norms)[r] = n;
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = X.at(r, c) / n;
  }
  Node* px = x.node();
  return make_result(std::move(out), {x}, "l2_normalize", [px, norms, rows, cols](Node& self) {
    auto& g = px->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += self.grad.at(r, c) * self.value.at(r, c);
      for (std::size_t c = 0; c < cols; ++c)
        g.at(r, c) += (self.grad.at(r, c) - self.value.at(r, c) * dot) / (*norms)[r];
    }
  });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  const auto& X = x.value();
  const std::size_t cols = X.cols();
  Tensor out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows()) {
      throw ShapeError("gather_rows index " + std::to_string(rows[i]) + " out of " +
                       shape_str(X.shape()));
    }
    std::copy_n(X.data() + rows[i] * cols, cols, out.data() + i * cols);
  }
  Node* px = x.node();
  return make_result(std::move(out), {x}, "gather_rows", [px, rows, cols](Node& self) {
    auto& g = px->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) g.at(rows[i], c) += self.grad[i * cols + c];
  });
}

Var index_add(const Var& x, const std::vector<std::size_t>& src,
              const std::vector<std::size_t>& dst, std::size_t n_out) {
  const auto& X = x.value();
  const std::size_t cols = X.cols();
  if (src.size() != dst.size()) throw GraphError("index_add: src/dst length mismatch");
  for (std::size_t e = 0; e < src.size(); ++e) {
    if (src[e] >= X.rows() || dst[e] >= n_out) {
      throw GraphError("edge " + std::to_string(e) + " (" + std::to_string(src[e]) + " -> " +
                       std::to_string(dst[e]) + ") out of range for " +
                       std::to_string(X.rows()) + " nodes");
    }
  }
  Tensor out({n_out, cols});
  for (std::size_t e = 0; e < src.size(); ++e) {
    const double* s = X.data() + src[e] * cols;
    double* d = out.data() + dst[e] * cols;
    for (std::size_t c = 0; c < cols; ++c) d[c] += s[c];
  }
  Node* px = x.node();
  return make_result(std::move(out), {x}, "index_add", [px, src, dst, cols](Node& self) {
    auto& g = px->grad_buffer();
    for (std::size_t e = 0; e < src.size(); ++e) {
      const double* s = self.grad.data() + dst[e] * cols;
      double* d = g.data() + src[e] * cols;
      for (std::size_t c = 0; c < cols; ++c) d[c] += s[c];
    }
  });
}

Var segment_sum(const Var& x, const std::vector<std::size_t>& segment, std::size_t n_segments) {
  if (segment.size() != x.value().rows()) {
    throw ShapeError("segment_sum: " + std::to_string(segment.size()) + " segment ids for " +
                     shape_str(x.shape()));
  }
  std::vector<std::size_t> src(segment.size());
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = i;
  return index_add(x, src, segment, n_segments);
}

Var cross_entropy(const Var& logits, const std::vector<int>& targets, int ignore,
                  std::size_t* counted) {
  const auto& L = logits.value();
  const std::size_t rows = L.rows(), cols = L.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(L.shape()));
  }
  auto probs = std::make_shared<Tensor>(Shape{rows, cols});
  double loss = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw InputError("cross_entropy target " + std::to_string(targets[r]) + " out of range");
    }
    auto in = L.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(in[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) probs->at(r, c) = std::exp(in[c] - lse);
    loss += lse - in[static_cast<std::size_t>(targets[r])];
    ++n;
  }
  if (counted) *counted = n;
  const double denom = n ? static_cast<double>(n) : 1.0;
  Node* pl = logits.node();
  return make_result(Tensor::scalar(loss / denom), {logits}, "cross_entropy",
                     [pl, probs, targets, ignore, denom, rows, cols](Node& self) {
                       auto& g = pl->grad_buffer();
                       const double dy = self.grad[0] / denom;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (targets[r] == ignore) continue;
                         for (std::size_t c = 0; c < cols; ++c) g.at(r, c) += dy * probs->at(r, c);
                         g.at(r, static_cast<std::size_t>(targets[r])) -= dy;
                       }
                     });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t seq,
              std::size_t heads, const std::vector<std::uint8_t>& key_valid) {
  const auto& Q = q.value();
  const auto& K = k.value();
  const auto& V = v.value();
  if (Q.shape() != K.shape()) shape_error("attention", Q.shape(), K.shape());
  if (Q.shape() != V.shape()) shape_error("attention", Q.shape(), V.shape());
  const std::size_t hidden = Q.cols();
  if (Q.rows() != batch * seq) {
    throw ShapeError("attention: " + shape_str(Q.shape()) + " is not " + std::to_string(batch) +
                     " x " + std::to_string(seq) + " rows");
  }
  if (heads == 0 || hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (key_valid.size() != batch * seq) throw ShapeError("attention: key mask length mismatch");
  const std::size_t dh = hidden / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto T = static_cast<Eigen::Index>(seq);
  const auto D = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(hidden));

  auto probs = std::make_shared<std::vector<RowMat>>(batch * heads);
  Tensor out(Q.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * seq * hidden;
    for (std::size_t h = 0; h < heads; ++h) {
      StridedC qb(Q.data() + off + h * dh, T, D, stride);
      StridedC kb(K.data() + off + h * dh, T, D, stride);
      StridedC vb(V.data() + off + h * dh, T, D, stride);
      RowMat s = (qb * kb.transpose()) * sc;
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < T; ++j)
          if (key_valid[b * seq + static_cast<std::size_t>(j)]) mx = std::max(mx, s(i, j));
        double tot = 0;
        for (Eigen::Index j = 0; j < T; ++j) {
          const bool ok = key_valid[b * seq + static_cast<std::size_t>(j)];
          s(i, j) = ok ? std::exp(s(i, j) - mx) : 0.0;
          tot += s(i, j);
        }
        if (tot > 0) s.row(i) /= tot;
      }
      Strided ob(out.data() + off + h * dh, T, D, stride);
      ob.noalias() = s * vb;
      (*probs)[b * heads + h] = std::move(s);
    }
  }
  Node* pq = q.node();
  Node* pk = k.node();
  Node* pv = v.node();
  return make_result(
      std::move(out), {q, k, v}, "attention",
      [pq, pk, pv, probs, batch, seq, heads, hidden, dh, sc](Node& self) {
        const auto T = static_cast<Eigen::Index>(seq);
        const auto D = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(hidden));
        const bool gq = wants(pq), gk = wants(pk), gv = wants(pv);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = b * seq * hidden;
          for (std::size_t h = 0; h < heads; ++h) {
            const RowMat& p = (*probs)[b * heads + h];
            const std::size_t base = off + h * dh;
            StridedC dout(self.grad.data() + base, T, D, stride);
            StridedC qb(pq->value.data() + base, T, D, stride);
            StridedC kb(pk->value.data() + base, T, D, stride);
            StridedC vb(pv->value.data() + base, T, D, stride);
            if (gv) {
              Strided dv(pv->grad_buffer().data() + base, T, D, stride);
              dv.noalias() += p.transpose() * dout;
            }
            if (!gq && !gk) continue;
            RowMat dp = dout * vb.transpose();
            const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
            RowMat ds = (p.array() * (dp.colwise() - rowdot).array()).matrix() * sc;
            if (gq) {
              Strided dq(pq->grad_buffer().data() + base, T, D, stride);
              dq.noalias() += ds * kb;
            }
            if (gk) {
              Strided dk(pk->grad_buffer().data() + base, T, D, stride);
              dk.noalias() += ds.transpose() * qb;
            }
          }
        }
      });
}

}  // namespace irbindiff::nn
