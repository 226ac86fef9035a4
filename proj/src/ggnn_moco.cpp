#include "irbindiff/ggnn_moco.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "irbindiff/error.hpp"
#include "irbindiff/rng.hpp"

namespace irbindiff::gnn {

using namespace irbindiff::nn;

void GGNNConfig::validate() const {
  if (steps < 0) throw ConfigError("ggnn steps must be >= 0");
  if (node_dim < 1 || out_dim < 1 || input_dim < 1) throw ConfigError("ggnn dims must be >= 1");
  if (!project_input && use_graph && input_dim > node_dim) {
    throw ConfigError("block embedding width " + std::to_string(input_dim) +
                      " exceeds node_dim " + std::to_string(node_dim));
  }
  if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (queue_capacity < 1 || batch_size < 1) throw ConfigError("queue and batch must be >= 1");
  if (lr <= 0 || weight_decay < 0 || epochs < 0) throw ConfigError("invalid ggnn training settings");
}

GraphInput make_graph_input(const ir::ControlFlowGraph& cfg,
                            const std::vector<std::vector<double>>& block_embeddings) {
  if (block_embeddings.size() != cfg.nodes.size()) {
    throw ShapeError(std::to_string(block_embeddings.size()) + " block embeddings for " +
                     std::to_string(cfg.nodes.size()) + " CFG nodes");
  }
  if (block_embeddings.empty()) throw GraphError("function without blocks");
  const std::size_t dim = block_embeddings.front().size();
  GraphInput g;
  g.features = Tensor({block_embeddings.size(), dim});
  for (std::size_t i = 0; i < block_embeddings.size(); ++i) {
    if (block_embeddings[i].size() != dim) throw ShapeError("ragged block embeddings");
    std::copy(block_embeddings[i].begin(), block_embeddings[i].end(), g.features.row(i).begin());
  }
  for (const auto& [p, s] : cfg.index_edges()) {
    g.src.push_back(p);
    g.dst.push_back(s);
  }
  return g;
}

Tensor node_init(const Tensor& block_embeddings, std::size_t node_dim) {
  const std::size_t in = block_embeddings.cols();
  if (in > node_dim) {
    throw ConfigError("block embedding width " + std::to_string(in) + " exceeds node_dim " +
                      std::to_string(node_dim));
  }
  Tensor out({block_embeddings.rows(), node_dim});
  for (std::size_t r = 0; r < block_embeddings.rows(); ++r) {
    std::copy_n(block_embeddings.row(r).begin(), in, out.row(r).begin());
  }
  return out;
}

GraphEncoder::GraphEncoder(const GGNNConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(derive_seed(seed, "ggnn-init"));
  const auto D = static_cast<std::size_t>(config_.node_dim);
  const auto O = static_cast<std::size_t>(config_.out_dim);
  const auto I = static_cast<std::size_t>(config_.input_dim);
  // Graph weights need a larger scale than the LM's 0.02 for signal to
  // survive several propagation rounds.
  const double sd = 1.0 / std::sqrt(static_cast<double>(D));
  if (!config_.use_graph) {
    pool_proj_ = Linear::create(store_, "pool.proj", I, O, rng, 1.0 / std::sqrt(double(I)));
    return;
  }
  if (config_.project_input) input_proj_ = Linear::create(store_, "input.proj", I, D, rng, sd);
  w_in_ = store_.add("message.w_in", normal_tensor({D, D}, sd, rng));
  w_out_ = store_.add("message.w_out", normal_tensor({D, D}, sd, rng));
  msg_bias_ = store_.add("message.bias", Tensor({D}));
  gru_ = GruParams::create(store_, "gru", D, rng, sd);
  gate_.hidden = Linear::create(store_, "readout.i.hidden", D, D, rng, sd);
  gate_.out = Linear::create(store_, "readout.i.out", D, O, rng, sd);
  value_.hidden = Linear::create(store_, "readout.j.hidden", D, D, rng, sd);
  value_.out = Linear::create(store_, "readout.j.out", D, O, rng, sd);
}

Var GraphEncoder::initial_states(const Tensor& features) const {
  if (config_.project_input) return input_proj_(constant(features));
  return constant(node_init(features, static_cast<std::size_t>(config_.node_dim)));
}

Var GraphEncoder::ggnn_step(const Var& states, const std::vector<std::size_t>& src,
                            const std::vector<std::size_t>& dst) const {
  const std::size_t n = states.value().rows();
  const Var in_msgs = index_add(matmul(states, w_in_), src, dst, n);
  const Var out_msgs = index_add(matmul(states, w_out_), dst, src, n);
  const Var a = add_bias(add(in_msgs, out_msgs), msg_bias_);
  return gru_cell(states, a, gru_);
}

Var GraphEncoder::readout(const Var& states, const std::vector<std::size_t>& segment,
                          std::size_t n_graphs) const {
  const Var gated = mul(sigmoid(gate_(states)), tanh(value_(states)));
  return tanh(segment_sum(gated, segment, n_graphs));
}

Var GraphEncoder::encode(const std::vector<const GraphInput*>& graphs) const {
  if (graphs.empty()) throw GraphError("encode called with no graphs");
  std::size_t total = 0;
  for (const auto* g : graphs) {
    if (g->size() == 0) throw GraphError("cannot encode an empty graph");
    if (g->features.cols() != static_cast<std::size_t>(config_.input_dim)) {
      throw ShapeError("graph features have width " + std::to_string(g->features.cols()) +
                       ", encoder expects " + std::to_string(config_.input_dim));
    }
    total += g->size();
  }
  Tensor features({total, static_cast<std::size_t>(config_.input_dim)});
  std::vector<std::size_t> segment, src, dst;
  std::size_t offset = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = *graphs[gi];
    std::copy(g.features.storage().begin(), g.features.storage().end(),
              features.data() + offset * features.cols());
    segment.insert(segment.end(), g.size(), gi);
    for (std::size_t e = 0; e < g.src.size(); ++e) {
      if (g.src[e] >= g.size() || g.dst[e] >= g.size()) {
        throw GraphError("edge (" + std::to_string(g.src[e]) + ", " + std::to_string(g.dst[e]) +
                         ") out of range for a " + std::to_string(g.size()) + "-node graph");
      }
      src.push_back(g.src[e] + offset);
      dst.push_back(g.dst[e] + offset);
    }
    offset += g.size();
  }
  if (!config_.use_graph) {
    // Mean of block embeddings per function, then a linear map.
    Tensor inv({graphs.size(), static_cast<std::size_t>(config_.input_dim)});
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      for (auto& v : inv.row(gi)) v = 1.0 / static_cast<double>(graphs[gi]->size());
    }
    const Var mean = mul(segment_sum(constant(features), segment, graphs.size()), constant(inv));
    return l2_normalize(pool_proj_(mean));
  }
  Var h = initial_states(features);
  for (int s = 0; s < config_.steps; ++s) h = ggnn_step(h, src, dst);
  return l2_normalize(readout(h, segment, graphs.size()));
}

std::vector<double> GraphEncoder::encode_one(const GraphInput& graph) const {
  NoGradGuard guard;
  return encode({&graph}).value().storage();
}

FunctionEmbedding encode_function(const GraphEncoder& encoder, const ir::IRFunction& func,
                                  const std::vector<std::vector<double>>& block_embeddings) {
  return {func.meta, encoder.encode_one(make_graph_input(func.cfg, block_embeddings))};
}

void momentum_update(ParameterStore& key, const ParameterStore& query, double m) {
  key.check_compatible(query);
  for (std::size_t i = 0; i < key.size(); ++i) {
    auto& k = key.params()[i].var.node()->value;
    const auto& q = query.params()[i].var.value();
    for (std::size_t j = 0; j < k.size(); ++j) k[j] = m * k[j] + (1.0 - m) * q[j];
  }
}

EmbeddingQueue::EmbeddingQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), data_({capacity, dim}), groups_(capacity, kNoGroup) {
  if (capacity == 0) throw ConfigError("queue capacity must be >= 1");
}

void EmbeddingQueue::warm_start(Rng& rng) {
  data_ = uniform_unit_rows(capacity_, data_.cols(), rng);
  std::fill(groups_.begin(), groups_.end(), kNoGroup);
}

void EmbeddingQueue::enqueue(const Tensor& keys, const std::vector<long>& groups) {
  if (keys.cols() != data_.cols() || keys.rows() != groups.size()) {
    throw ShapeError("enqueue: keys " + shape_str(keys.shape()) + " with " +
                     std::to_string(groups.size()) + " groups into a queue of width " +
                     std::to_string(data_.cols()));
  }
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    std::copy(keys.row(r).begin(), keys.row(r).end(), data_.row(cursor_).begin());
    groups_[cursor_] = groups[r];
    cursor_ = (cursor_ + 1) % capacity_;
    ++written_;
  }
}

Var info_nce_loss(const Var& q, const Var& k_pos, const Tensor& queue, double tau,
                  const std::vector<std::uint8_t>* negative_mask) {
  if (!(tau > 0)) throw ConfigError("temperature must be > 0");
  if (queue.rows() == 0) throw ConfigError("info_nce_loss needs a non-empty queue");
  const Var pos = rowwise_dot(q, k_pos);
  Var neg = matmul_nt(q, constant(queue));
  if (negative_mask) {
    const std::size_t b = q.value().rows(), k = queue.rows();
    if (negative_mask->size() != b * k) throw ShapeError("negative mask size mismatch");
    Tensor offset({b, k});
    for (std::size_t i = 0; i < b * k; ++i) offset[i] = (*negative_mask)[i] ? 0.0 : -1e9 * tau;
    neg = add(neg, constant(offset));
  }
  const Var logits = scale(concat({pos, neg}, 1), 1.0 / tau);
  return cross_entropy(logits, std::vector<int>(q.value().rows(), 0));
}

MoCoState::MoCoState(const GGNNConfig& config, std::uint64_t seed)
    : query(config, seed), key(config, seed), queue(config.queue_capacity, config.out_dim) {
  key.params().copy_values_from(query.params());
  Rng rng(derive_seed(seed, "queue-warm-start"));
  queue.warm_start(rng);
}

std::vector<std::pair<std::size_t, std::size_t>> positive_pairs(const std::vector<TrainGraph>& data) {
  std::map<long, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < data.size(); ++i) by_group[data[i].group].push_back(i);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& [g, members] : by_group) {
    for (std::size_t a : members)
      for (std::size_t b : members)
        if (a != b) pairs.emplace_back(a, b);
  }
  return pairs;
}

namespace {

std::vector<std::uint8_t> group_mask(const EmbeddingQueue& queue, const std::vector<long>& groups) {
  const std::size_t k = queue.capacity();
  std::vector<std::uint8_t> mask(groups.size() * k, 1);
  for (std::size_t b = 0; b < groups.size(); ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      if (queue.groups()[j] == groups[b]) mask[b * k + j] = 0;
    }
  }
  return mask;
}

}  // namespace

Var contrastive_step_loss(const MoCoState& state, const std::vector<const GraphInput*>& queries,
                          const std::vector<const GraphInput*>& positives,
                          const std::vector<long>& groups) {
  const Var q = state.query.encode(queries);
  Var k;
  {
    NoGradGuard guard;
    k = state.key.encode(positives);
  }
  const auto mask = group_mask(state.queue, groups);
  return info_nce_loss(q, constant(k.value()), state.queue.data(),
                       state.query.config().temperature, &mask);
}

ContrastiveLog train_contrastive(MoCoState& state, const std::vector<TrainGraph>& data,
                                 std::uint64_t seed,
                                 const std::function<void(const StepLog&)>& on_step) {
  auto pairs = positive_pairs(data);
  if (pairs.empty()) throw ConfigError("contrastive dataset has no positive pairs");
  const auto& cfg = state.query.config();
  Adam opt(state.query.params(), AdamConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  ContrastiveLog log;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(seed, "contrastive-shuffle", std::to_string(epoch)));
    std::shuffle(pairs.begin(), pairs.end(), rng);
    double sum = 0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
      std::vector<const GraphInput*> queries, positives;
      std::vector<long> groups;
      for (std::size_t i = start; i < end; ++i) {
        queries.push_back(&data[pairs[i].first].graph);
        positives.push_back(&data[pairs[i].second].graph);
        groups.push_back(data[pairs[i].first].group);
      }
      const Var q = state.query.encode(queries);
      Tensor keys;
      {
        NoGradGuard guard;
        keys = state.key.encode(positives).value();
      }
      const auto mask = group_mask(state.queue, groups);
      const Var loss = info_nce_loss(q, constant(keys), state.queue.data(), cfg.temperature, &mask);
      state.query.params().zero_grad();
      backward(loss);
      opt.step();
      momentum_update(state.key.params(), state.query.params(), cfg.momentum);
      const bool warm = !state.queue.overwritten_once();
      state.queue.enqueue(keys, groups);

      StepLog entry{step++, epoch, loss.item(),
                    std::min(state.queue.written(), state.queue.capacity()), warm};
      if (!warm) {
        sum += entry.loss;
        ++counted;
      }
      log.steps.push_back(entry);
      if (on_step) on_step(entry);
    }
    log.epoch_loss.push_back(counted ? std::optional<double>(sum / static_cast<double>(counted))
                                     : std::nullopt);
  }
  return log;
}

}  // namespace irbindiff::gnn
