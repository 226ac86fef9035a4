#include "irbindiff/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "irbindiff/error.hpp"

namespace irbindiff::nn {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, double stddev) {
  Linear l;
  l.w = store.add(name + ".weight", normal_tensor({in, out}, stddev, rng));
  l.b = store.add(name + ".bias", Tensor({out}));
  return l;
}

Var Linear::operator()(const Var& x) const { return add_bias(matmul(x, w), b); }

LayerNormParams LayerNormParams::create(ParameterStore& store, const std::string& name,
                                        std::size_t dim) {
  LayerNormParams p;
  p.gamma = store.add(name + ".gamma", Tensor({dim}, 1.0));
  p.beta = store.add(name + ".beta", Tensor({dim}));
  return p;
}

Var LayerNormParams::operator()(const Var& x) const { return layer_norm(x, gamma, beta); }

AttentionParams AttentionParams::create(ParameterStore& store, const std::string& name,
                                        std::size_t hidden, Rng& rng) {
  AttentionParams p;
  p.q = Linear::create(store, name + ".query", hidden, hidden, rng);
  p.k = Linear::create(store, name + ".key", hidden, hidden, rng);
  p.v = Linear::create(store, name + ".value", hidden, hidden, rng);
  p.o = Linear::create(store, name + ".output", hidden, hidden, rng);
  return p;
}

Var multi_head_attention(const Var& x, const AttentionParams& p, std::size_t heads,
                         std::size_t batch, std::size_t seq,
                         const std::vector<std::uint8_t>& key_valid) {
  const std::size_t hidden = x.value().cols();
  if (heads == 0 || hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const Var ctx = attention(p.q(x), p.k(x), p.v(x), batch, seq, heads, key_valid);
  return p.o(ctx);
}

Var multi_head_attention(const Var& x, const AttentionParams& p, std::size_t heads) {
  const std::size_t seq = x.value().rows();
  return multi_head_attention(x, p, heads, 1, seq, std::vector<std::uint8_t>(seq, 1));
}

GruParams GruParams::create(ParameterStore& store, const std::string& name, std::size_t dim,
                            Rng& rng, double stddev) {
  GruParams p;
  p.wz = Linear::create(store, name + ".wz", dim, dim, rng, stddev);
  p.wr = Linear::create(store, name + ".wr", dim, dim, rng, stddev);
  p.wh = Linear::create(store, name + ".wh", dim, dim, rng, stddev);
  p.uz = store.add(name + ".uz", normal_tensor({dim, dim}, stddev, rng));
  p.ur = store.add(name + ".ur", normal_tensor({dim, dim}, stddev, rng));
  p.uh = store.add(name + ".uh", normal_tensor({dim, dim}, stddev, rng));
  return p;
}

Var gru_cell(const Var& state, const Var& message, const GruParams& p) {
  if (state.shape() != message.shape()) {
    throw ShapeError("gru_cell: incompatible shapes " + shape_str(state.shape()) + " and " +
                     shape_str(message.shape()));
  }
  const Var z = sigmoid(add(p.wz(message), matmul(state, p.uz)));
  const Var r = sigmoid(add(p.wr(message), matmul(state, p.ur)));
  const Var c = tanh(add(p.wh(message), matmul(mul(r, state), p.uh)));
  return add(state, mul(z, sub(c, state)));
}

Adam::Adam(const ParameterStore& store, AdamConfig config)
    : store_(&store), config_(config) {
  for (const auto& p : store.params()) {
    m_.emplace_back(p.var.value().size(), 0.0);
    v_.emplace_back(p.var.value().size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const auto& params = store_->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Node* n = params[i].var.node();
    auto& value = n->value;
    const auto& grad = n->grad_buffer();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      value[k] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                                config_.weight_decay * value[k]);
    }
  }
}

GradCheckReport finite_difference_check(const std::function<Var()>& model_fn,
                                        const std::vector<Parameter>& params,
                                        std::size_t per_param, std::uint64_t seed, double h,
                                        double floor) {
  for (const auto& p : params) p.var.node()->grad_buffer().fill(0.0);
  backward(model_fn());
  GradCheckReport report;
  Rng rng(seed);
  for (const auto& p : params) {
    Node* n = p.var.node();
    const Tensor analytic = n->grad_buffer();
    std::vector<std::size_t> idx(n->value.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(per_param, idx.size()));
    for (std::size_t k : idx) {
      const double orig = n->value[k];
      double plus, minus;
      {
        NoGradGuard guard;
        n->value[k] = orig + h;
        plus = model_fn().item();
        n->value[k] = orig - h;
        minus = model_fn().item();
        n->value[k] = orig;
      }
      const double numeric = (plus - minus) / (2 * h);
      const double a = analytic[k];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.checked;
      if (report.worst.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = p.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return report;
}

}  // namespace irbindiff::nn
