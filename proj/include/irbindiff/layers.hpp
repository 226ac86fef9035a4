#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "irbindiff/autograd.hpp"
#include "irbindiff/params.hpp"

namespace irbindiff::nn {

struct Linear {
  Var w;  // (in, out)
  Var b;  // (out)

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, double stddev = 0.02);
  Var operator()(const Var& x) const;
};

struct LayerNormParams {
  Var gamma;
  Var beta;

  static LayerNormParams create(ParameterStore& store, const std::string& name, std::size_t dim);
  Var operator()(const Var& x) const;
};

struct AttentionParams {
  Linear q, k, v, o;

  static AttentionParams create(ParameterStore& store, const std::string& name,
                                std::size_t hidden, Rng& rng);
};

// Bidirectional multi-head self-attention over `batch` sequences of `seq`
// rows each, followed by the output projection. Keys with key_valid == 0
// (padding) receive no attention.
Var multi_head_attention(const Var& x, const AttentionParams& p, std::size_t heads,
                         std::size_t batch, std::size_t seq,
                         const std::vector<std::uint8_t>& key_valid);

// Single sequence, nothing masked.
Var multi_head_attention(const Var& x, const AttentionParams& p, std::size_t heads);

struct GruParams {
  Linear wz, wr, wh;  // message -> gates
  Var uz, ur, uh;     // state -> gates, no bias

  static GruParams create(ParameterStore& store, const std::string& name, std::size_t dim,
                          Rng& rng, double stddev = 0.02);
};

// z = s(a Wz + h Uz + bz), r = s(a Wr + h Ur + br),
// c = tanh(a Wh + (r*h) Uh + bh), h' = h + z*(c - h).
Var gru_cell(const Var& state, const Var& message, const GruParams& p);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

class Adam {
 public:
  Adam(const ParameterStore& store, AdamConfig config);
  void step();
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  const ParameterStore* store_;
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<param>[index]"
};

// Central differences with step h over up to `per_param` randomly chosen
// entries of each parameter. The relative error of one entry is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport finite_difference_check(const std::function<Var()>& model_fn,
                                        const std::vector<Parameter>& params,
                                        std::size_t per_param = 16, std::uint64_t seed = 0,
                                        double h = 1e-5, double floor = 1e-4);

}  // namespace irbindiff::nn
