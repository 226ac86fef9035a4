#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "irbindiff/autograd.hpp"
#include "irbindiff/ir_corpus.hpp"
#include "irbindiff/layers.hpp"
#include "irbindiff/params.hpp"

namespace irbindiff::gnn {

using nn::Tensor;
using nn::Var;

struct GGNNConfig {
  int steps = 10;
  int node_dim = 256;
  int out_dim = 256;
  int input_dim = 128;  // block embedding width
  double lr = 1e-4;
  double weight_decay = 5e-4;
  std::size_t batch_size = 256;
  int epochs = 10;
  double momentum = 0.999;
  std::size_t queue_capacity = 8192;
  double temperature = 0.07;
  bool project_input = false;  // linear map instead of zero padding
  bool use_graph = true;       // false: mean-pooled block embeddings, no GGNN

  void validate() const;
};

// One CFG ready for encoding: node features are the block embeddings in
// CFG node order, edges are (pred, succ) node indices.
struct GraphInput {
  Tensor features;  // (n, input_dim)
  std::vector<std::size_t> src, dst;

  std::size_t size() const { return features.rows(); }
};

GraphInput make_graph_input(const ir::ControlFlowGraph& cfg,
                            const std::vector<std::vector<double>>& block_embeddings);

// Zero-pads each row to node_dim.
Tensor node_init(const Tensor& block_embeddings, std::size_t node_dim);

class GraphEncoder {
 public:
  GraphEncoder(const GGNNConfig& config, std::uint64_t seed);

  const GGNNConfig& config() const { return config_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

  Var initial_states(const Tensor& features) const;
  // One propagation round: a_v = sum_in W_in h_u + sum_out W_out h_w + b,
  // then h_v = GRU(h_v, a_v).
  Var ggnn_step(const Var& states, const std::vector<std::size_t>& src,
                const std::vector<std::size_t>& dst) const;
  // tanh(sum_v sigmoid(i(h_v)) * tanh(j(h_v))) per segment, not normalized.
  Var readout(const Var& states, const std::vector<std::size_t>& segment,
              std::size_t n_graphs) const;
  // Unit-norm embeddings, one row per graph.
  Var encode(const std::vector<const GraphInput*>& graphs) const;
  std::vector<double> encode_one(const GraphInput& graph) const;

 private:
  struct Mlp {
    nn::Linear hidden, out;
    Var operator()(const Var& x) const { return out(nn::tanh(hidden(x))); }
  };

  GGNNConfig config_;
  nn::ParameterStore store_;
  nn::Linear input_proj_;
  Var w_in_, w_out_, msg_bias_;
  nn::GruParams gru_;
  Mlp gate_, value_;
  nn::Linear pool_proj_;
};

struct FunctionEmbedding {
  ir::FunctionMeta meta;
  std::vector<double> vector;
};

FunctionEmbedding encode_function(const GraphEncoder& encoder, const ir::IRFunction& func,
                                  const std::vector<std::vector<double>>& block_embeddings);

// theta_k <- m * theta_k + (1 - m) * theta_q for every parameter.
void momentum_update(nn::ParameterStore& key, const nn::ParameterStore& query, double m);

// Ring buffer of unit-norm key embeddings tagged with their source group.
class EmbeddingQueue {
 public:
  EmbeddingQueue(std::size_t capacity, std::size_t dim);

  // Fills every slot with random unit vectors tagged kNoGroup.
  void warm_start(Rng& rng);
  void enqueue(const Tensor& keys, const std::vector<long>& groups);

  const Tensor& data() const { return data_; }
  const std::vector<long>& groups() const { return groups_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }
  std::size_t written() const { return written_; }
  bool overwritten_once() const { return written_ >= capacity_; }

  static constexpr long kNoGroup = -1;

 private:
  std::size_t capacity_;
  Tensor data_;
  std::vector<long> groups_;
  std::size_t cursor_ = 0;
  std::size_t written_ = 0;
};

// Mean over rows of -log softmax([q.k_pos, q.queue_1, ...] / tau)[0].
// `negative_mask`, if given, is (B x capacity) with 0 hiding an entry.
Var info_nce_loss(const Var& q, const Var& k_pos, const Tensor& queue, double tau,
                  const std::vector<std::uint8_t>* negative_mask = nullptr);

struct MoCoState {
  GraphEncoder query;
  GraphEncoder key;
  EmbeddingQueue queue;

  MoCoState(const GGNNConfig& config, std::uint64_t seed);
};

// A training function: encoded graph plus its source-identity group.
struct TrainGraph {
  GraphInput graph;
  long group = 0;
};

struct StepLog {
  std::size_t step = 0;
  int epoch = 0;
  double loss = 0;
  std::size_t queue_fill = 0;
  bool warm = false;  // queue not yet fully overwritten; excluded from the curve
};

struct ContrastiveLog {
  std::vector<StepLog> steps;
  // Mean post-warm-up loss per epoch; empty for epochs spent in warm-up.
  std::vector<std::optional<double>> epoch_loss;
};

// Ordered (query, positive) index pairs over functions sharing a group.
std::vector<std::pair<std::size_t, std::size_t>> positive_pairs(const std::vector<TrainGraph>& data);

ContrastiveLog train_contrastive(MoCoState& state, const std::vector<TrainGraph>& data,
                                 std::uint64_t seed,
                                 const std::function<void(const StepLog&)>& on_step = {});

// Loss of one MoCo step as a function of theta_q (keys and queue fixed).
Var contrastive_step_loss(const MoCoState& state, const std::vector<const GraphInput*>& queries,
                          const std::vector<const GraphInput*>& positives,
                          const std::vector<long>& groups);

}  // namespace irbindiff::gnn
