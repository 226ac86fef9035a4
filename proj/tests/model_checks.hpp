#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "irbindiff/ggnn_moco.hpp"
#include "irbindiff/layers.hpp"
#include "irbindiff/lm.hpp"
#include "irbindiff/sampling.hpp"

// Whole-model finite-difference checks shared by unit and acceptance tests.
namespace model_checks {

using namespace irbindiff;

// Spreads parameters out so that no gradient sits at the noise floor.
inline void perturb(nn::ParameterStore& store, std::uint64_t seed, double stddev) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  for (const auto& p : store.params()) {
    for (auto& v : p.var.node()->value.values()) v += dist(rng);
  }
}

inline nn::GradCheckReport lm_gradient_check(std::uint64_t seed) {
  lm::LMConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.vocab_size = 10;
  cfg.max_position = 16;
  cfg.block_max_len = 16;
  lm::LanguageModel model(cfg, seed);
  perturb(model.params(), seed + 1, 0.2);
  auto a = sampling::assemble_example({5, 6, 7}, {8, 9}, 1, 16);
  auto b = sampling::assemble_example({6}, {7, 5, 9}, 0, 16);
  a.mlm_labels[2] = 6;
  a.input_ids[2] = 4;  // [MASK]
  b.mlm_labels[3] = 7;
  const std::vector<sampling::PretrainExample> batch{a, b};
  return nn::finite_difference_check(
      [&] { return lm::total_loss(lm::lm_forward(model, batch)); }, model.params().params(), 6,
      seed);
}

// Random graph with n nodes and roughly 1.5n distinct directed edges.
inline gnn::GraphInput random_graph(std::size_t n, std::size_t dim, Rng& rng) {
  gnn::GraphInput g;
  g.features = nn::normal_tensor({n, dim}, 1.0, rng);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 1; i < n; ++i) seen.emplace(uniform_index(rng, i), i);
  const std::size_t extra = n / 2;
  for (std::size_t e = 0; e < extra; ++e) seen.emplace(uniform_index(rng, n), uniform_index(rng, n));
  for (const auto& [a, b] : seen) {
    g.src.push_back(a);
    g.dst.push_back(b);
  }
  return g;
}

inline gnn::GGNNConfig toy_ggnn_config() {
  gnn::GGNNConfig cfg;
  cfg.steps = 2;
  cfg.node_dim = 4;
  cfg.out_dim = 3;
  cfg.input_dim = 3;
  cfg.queue_capacity = 5;
  cfg.temperature = 0.5;
  return cfg;
}

// One MoCo step's InfoNCE loss on 3-node toy graphs, differentiated
// with respect to every query-encoder parameter.
inline nn::GradCheckReport ggnn_gradient_check(std::uint64_t seed) {
  gnn::MoCoState state(toy_ggnn_config(), seed);
  perturb(state.query.params(), seed + 1, 0.3);
  Rng rng(seed + 2);
  auto a = random_graph(3, 3, rng), b = random_graph(3, 3, rng);
  auto c = random_graph(3, 3, rng), d = random_graph(3, 3, rng);
  const std::vector<const gnn::GraphInput*> queries{&a, &c}, positives{&b, &d};
  return nn::finite_difference_check(
      [&] { return gnn::contrastive_step_loss(state, queries, positives, {0, 1}); },
      state.query.params().params(), 8, seed);
}

struct InvarianceReport {
  double readout_max_diff = 0;      // readout under node permutation
  double equivariance_max_diff = 0; // propagated states under relabeling
  double embedding_max_diff = 0;    // final unit-norm embedding
};

inline gnn::GraphInput permute_graph(const gnn::GraphInput& g, const std::vector<std::size_t>& perm) {
  // perm[old] = new
  gnn::GraphInput out;
  out.features = nn::Tensor(g.features.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::copy(g.features.row(i).begin(), g.features.row(i).end(), out.features.row(perm[i]).begin());
  }
  for (std::size_t e = 0; e < g.src.size(); ++e) {
    out.src.push_back(perm[g.src[e]]);
    out.dst.push_back(perm[g.dst[e]]);
  }
  return out;
}

inline InvarianceReport structural_invariance(std::uint64_t seed, int graphs, std::size_t max_nodes) {
  gnn::GGNNConfig cfg;
  cfg.steps = 3;
  cfg.node_dim = 12;
  cfg.out_dim = 8;
  cfg.input_dim = 8;
  gnn::GraphEncoder enc(cfg, seed);
  Rng rng(seed + 1);
  InvarianceReport rep;
  nn::NoGradGuard guard;
  for (int t = 0; t < graphs; ++t) {
    const std::size_t n = 1 + uniform_index(rng, max_nodes);
    const auto g = random_graph(n, 8, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto pg = permute_graph(g, perm);

    nn::Var h = enc.initial_states(g.features), ph = enc.initial_states(pg.features);
    for (int s = 0; s < cfg.steps; ++s) {
      h = enc.ggnn_step(h, g.src, g.dst);
      ph = enc.ggnn_step(ph, pg.src, pg.dst);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < h.value().cols(); ++c)
        rep.equivariance_max_diff = std::max(
            rep.equivariance_max_diff, std::abs(h.value().at(i, c) - ph.value().at(perm[i], c)));

    const std::vector<std::size_t> seg(n, 0);
    const auto r1 = enc.readout(h, seg, 1).value();
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[perm[i]] = i;
    const auto r2 = enc.readout(nn::gather_rows(h, rows), seg, 1).value();
    for (std::size_t c = 0; c < r1.size(); ++c)
      rep.readout_max_diff = std::max(rep.readout_max_diff, std::abs(r1[c] - r2[c]));

    const auto e1 = enc.encode_one(g), e2 = enc.encode_one(pg);
    for (std::size_t c = 0; c < e1.size(); ++c)
      rep.embedding_max_diff = std::max(rep.embedding_max_diff, std::abs(e1[c] - e2[c]));
  }
  return rep;
}

}  // namespace model_checks
