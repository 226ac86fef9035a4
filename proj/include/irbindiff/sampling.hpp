#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irbindiff/ir_corpus.hpp"

namespace irbindiff::sampling {

using TokenIds = std::vector<int>;
// Per block, per instruction token ids.
using BlockTokens = std::vector<std::vector<TokenIds>>;

inline constexpr int kIgnoreLabel = -1;

struct InstructionNode {
  std::string block_label;
  std::size_t instr_index = 0;
};

struct InstructionGraph {
  std::string func_key;
  std::vector<InstructionNode> nodes;
  std::vector<std::vector<std::size_t>> successors;
  std::vector<TokenIds> tokens;  // token ids of each node

  std::size_t size() const { return nodes.size(); }
  std::size_t edge_count() const;
  bool is_successor(std::size_t from, std::size_t to) const;
};

// Nodes are numbered block by block in CFG order. Blocks with no
// instructions contribute no nodes; edges into them are dropped.
InstructionGraph expand_to_instruction_graph(const ir::IRFunction& func,
                                             const BlockTokens& blocks_tokens);

using NodePair = std::pair<std::size_t, std::size_t>;

// One-step walks: for every node with successors, `walks_per_node` draws of
// a successor chosen with probability 1/d(v).
std::vector<NodePair> sample_walk_pairs(const InstructionGraph& graph, int walks_per_node,
                                        std::uint64_t rng_seed);

struct NspPair {
  TokenIds a;
  TokenIds b;
  int label = 0;  // 1 = isNext, 0 = NotNext
};

struct NspDiagnostics {
  std::size_t skipped = 0;
};

// Each walk pair yields a positive and a negative (A paired with a
// non-successor). Negatives come from the same graph when possible and from
// `fallback_pool` otherwise; a pair with no possible negative is dropped
// entirely so the output stays exactly balanced.
std::vector<NspPair> make_nsp_examples(const std::vector<NodePair>& pairs,
                                       const InstructionGraph& graph,
                                       const std::vector<TokenIds>& fallback_pool,
                                       std::uint64_t rng_seed, NspDiagnostics* diag = nullptr);

struct MaskingConfig {
  double select_rate = 0.15;
  double mask_share = 0.70;
  double random_share = 0.15;  // remainder stays unchanged
};

struct MaskedIds {
  TokenIds ids;
  std::vector<int> labels;
};

// Positions holding special ids (< kNumSpecials) are never selected.
MaskedIds apply_mlm_masking(const TokenIds& ids, int vocab_size, std::uint64_t rng_seed,
                            const MaskingConfig& config = {});

struct PretrainExample {
  TokenIds input_ids;
  std::vector<int> segment_ids;
  std::vector<int> position_ids;
  std::vector<int> mlm_labels;
  int nsp_label = 0;

  std::size_t size() const { return input_ids.size(); }
  bool operator==(const PretrainExample&) const = default;
};

// [CLS] A [SEP] B [SEP], trimming the longer side's tail until it fits.
PretrainExample assemble_example(TokenIds a, TokenIds b, int label, std::size_t max_len = 64);

struct CorpusConfig {
  int walks_per_node = 2;
  std::size_t max_len = 64;
  MaskingConfig masking;
};

struct FunctionTokens {
  ir::IRFunction function;  // simplified, with CFG
  BlockTokens blocks;
};

// Full pretraining corpus for a set of functions. Each function draws from
// its own stream derive_seed(global_seed, func_key).
std::vector<PretrainExample> build_pretrain_corpus(const std::vector<FunctionTokens>& functions,
                                                   int vocab_size, const CorpusConfig& config,
                                                   std::uint64_t global_seed,
                                                   NspDiagnostics* diag = nullptr);

nlohmann::json example_record(const PretrainExample& ex);
PretrainExample example_from_record(const nlohmann::json& j);

}  // namespace irbindiff::sampling
