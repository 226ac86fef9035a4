#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "irbindiff/tensor.hpp"

namespace irbindiff::nn {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Lazily allocated, zero-initialised gradient of matching shape.
  Tensor& grad_buffer();
};

// Handle to a node of the recorded computation graph.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  Tensor& grad() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  double item() const;

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var variable(Tensor value);

// Reverse pass from a scalar. Leaf gradients accumulate across calls;
// interior gradients are reset first.
void backward(const Var& root);

bool grad_enabled();

// While alive, ops on this thread build no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Primitives. Matrices are (rows x last-dim); shape mismatches throw
// ShapeError naming both shapes and non-finite outputs throw NumericError.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_bias(const Var& x, const Var& bias);
Var embedding_lookup(const Var& table, const std::vector<int>& ids);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-12);
Var softmax(const Var& x, double eps = 1e-12);
Var gelu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& x, int axis, std::size_t begin, std::size_t end);
Var mean_pool(const Var& x);
Var reshape(const Var& x, Shape shape);
Var sum(const Var& x);
Var rowwise_dot(const Var& a, const Var& b);
Var l2_normalize(const Var& x);
Var gather_rows(const Var& x, const std::vector<std::size_t>& rows);
// out[dst[e]] += x[src[e]], out has n_out rows.
Var index_add(const Var& x, const std::vector<std::size_t>& src,
              const std::vector<std::size_t>& dst, std::size_t n_out);
Var segment_sum(const Var& x, const std::vector<std::size_t>& segment, std::size_t n_segments);

// Mean negative log-likelihood over rows whose target differs from
// `ignore`. With no counted rows the loss is 0 and `counted` reports 0.
Var cross_entropy(const Var& logits, const std::vector<int>& targets, int ignore = -1,
                  std::size_t* counted = nullptr);

// Scaled dot-product attention over `batch` sequences of length `seq`
// stacked row-wise in q/k/v. key_valid[b*seq + t] == 0 hides key t.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t seq,
              std::size_t heads, const std::vector<std::uint8_t>& key_valid);

}  // namespace irbindiff::nn
