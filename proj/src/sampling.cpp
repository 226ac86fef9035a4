#include "irbindiff/sampling.hpp"

#include <algorithm>
#include <numeric>

#include "irbindiff/error.hpp"
#include "irbindiff/normalize.hpp"
#include "irbindiff/rng.hpp"

namespace irbindiff::sampling {

std::size_t InstructionGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& s : successors) n += s.size();
  return n;
}

bool InstructionGraph::is_successor(std::size_t from, std::size_t to) const {
  const auto& s = successors.at(from);
  return std::find(s.begin(), s.end(), to) != s.end();
}

InstructionGraph expand_to_instruction_graph(const ir::IRFunction& func,
                                             const BlockTokens& blocks_tokens) {
  if (blocks_tokens.size() != func.blocks.size()) {
    throw ShapeError("token blocks (" + std::to_string(blocks_tokens.size()) +
                     ") do not match function blocks (" + std::to_string(func.blocks.size()) +
                     ")");
  }
  InstructionGraph g;
  g.func_key = func.meta.key();
  std::vector<std::size_t> first(func.blocks.size()), count(func.blocks.size());
  for (std::size_t b = 0; b < func.blocks.size(); ++b) {
    first[b] = g.nodes.size();
    count[b] = blocks_tokens[b].size();
    for (std::size_t i = 0; i < count[b]; ++i) {
      g.nodes.push_back(InstructionNode{func.blocks[b].label, i});
      g.tokens.push_back(blocks_tokens[b][i]);
    }
  }
  g.successors.assign(g.nodes.size(), {});
  for (std::size_t b = 0; b < func.blocks.size(); ++b) {
    for (std::size_t i = 0; i + 1 < count[b]; ++i) {
      g.successors[first[b] + i].push_back(first[b] + i + 1);
    }
  }
  for (const auto& [p, s] : func.cfg.index_edges()) {
    if (count[p] == 0 || count[s] == 0) continue;
    auto& succ = g.successors[first[p] + count[p] - 1];
    if (std::find(succ.begin(), succ.end(), first[s]) == succ.end()) succ.push_back(first[s]);
  }
  return g;
}

std::vector<NodePair> sample_walk_pairs(const InstructionGraph& graph, int walks_per_node,
                                        std::uint64_t rng_seed) {
  if (walks_per_node < 1) throw ConfigError("walks_per_node must be >= 1");
  Rng rng(rng_seed);
  std::vector<NodePair> pairs;
  for (std::size_t v = 0; v < graph.size(); ++v) {
    const auto& succ = graph.successors[v];
    if (succ.empty()) continue;
    for (int k = 0; k < walks_per_node; ++k) {
      pairs.emplace_back(v, succ[uniform_index(rng, succ.size())]);
    }
  }
  return pairs;
}

std::vector<NspPair> make_nsp_examples(const std::vector<NodePair>& pairs,
                                       const InstructionGraph& graph,
                                       const std::vector<TokenIds>& fallback_pool,
                                       std::uint64_t rng_seed, NspDiagnostics* diag) {
  Rng rng(rng_seed);
  std::vector<NspPair> out;
  out.reserve(pairs.size() * 2);
  std::vector<std::size_t> candidates;
  for (const auto& [a, b] : pairs) {
    candidates.clear();
    for (std::size_t w = 0; w < graph.size(); ++w) {
      if (!graph.is_successor(a, w)) candidates.push_back(w);
    }
    const TokenIds* negative = nullptr;
    if (!candidates.empty()) {
      negative = &graph.tokens[candidates[uniform_index(rng, candidates.size())]];
    } else if (!fallback_pool.empty()) {
      negative = &fallback_pool[uniform_index(rng, fallback_pool.size())];
    }
    if (!negative) {
      if (diag) ++diag->skipped;
      continue;
    }
    out.push_back(NspPair{graph.tokens[a], graph.tokens[b], 1});
    out.push_back(NspPair{graph.tokens[a], *negative, 0});
  }
  return out;
}

MaskedIds apply_mlm_masking(const TokenIds& ids, int vocab_size, std::uint64_t rng_seed,
                            const MaskingConfig& config) {
  using norm::Vocabulary;
  Rng rng(rng_seed);
  MaskedIds out{ids, std::vector<int>(ids.size(), kIgnoreLabel)};
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= Vocabulary::kNumSpecials) eligible.push_back(i);
  }
  if (eligible.empty()) return out;
  auto n_select = static_cast<std::size_t>(config.select_rate * static_cast<double>(eligible.size()));
  n_select = std::clamp<std::size_t>(n_select, 1, eligible.size());
  // Partial Fisher-Yates: the first n_select entries become a uniform sample.
  for (std::size_t i = 0; i < n_select; ++i) {
    std::swap(eligible[i], eligible[i + uniform_index(rng, eligible.size() - i)]);
  }
  const bool can_randomize = vocab_size > Vocabulary::kNumSpecials;
  for (std::size_t i = 0; i < n_select; ++i) {
    const std::size_t pos = eligible[i];
    out.labels[pos] = ids[pos];
    const double u = uniform01(rng);
    if (u < config.mask_share || (!can_randomize && u < config.mask_share + config.random_share)) {
      out.ids[pos] = Vocabulary::kMask;
    } else if (u < config.mask_share + config.random_share) {
      out.ids[pos] = Vocabulary::kNumSpecials +
                     static_cast<int>(uniform_index(
                         rng, static_cast<std::size_t>(vocab_size - Vocabulary::kNumSpecials)));
    }
  }
  return out;
}

PretrainExample assemble_example(TokenIds a, TokenIds b, int label, std::size_t max_len) {
  using norm::Vocabulary;
  if (max_len < 8) throw ConfigError("max_len must be >= 8");
  if (a.empty() || b.empty()) throw InputError("instruction pair with an empty side");
  while (a.size() + b.size() + 3 > max_len) {
    if (a.size() > b.size()) {
      a.pop_back();
    } else {
      b.pop_back();
    }
  }
  PretrainExample ex;
  ex.nsp_label = label;
  ex.input_ids.push_back(Vocabulary::kCls);
  ex.input_ids.insert(ex.input_ids.end(), a.begin(), a.end());
  ex.input_ids.push_back(Vocabulary::kSep);
  const std::size_t first_segment = ex.input_ids.size();
  ex.input_ids.insert(ex.input_ids.end(), b.begin(), b.end());
  ex.input_ids.push_back(Vocabulary::kSep);
  ex.segment_ids.assign(ex.input_ids.size(), 0);
  std::fill(ex.segment_ids.begin() + static_cast<long>(first_segment), ex.segment_ids.end(), 1);
  ex.position_ids.resize(ex.input_ids.size());
  std::iota(ex.position_ids.begin(), ex.position_ids.end(), 0);
  ex.mlm_labels.assign(ex.input_ids.size(), kIgnoreLabel);
  return ex;
}

std::vector<PretrainExample> build_pretrain_corpus(const std::vector<FunctionTokens>& functions,
                                                   int vocab_size, const CorpusConfig& config,
                                                   std::uint64_t global_seed,
                                                   NspDiagnostics* diag) {
  std::vector<InstructionGraph> graphs;
  graphs.reserve(functions.size());
  for (const auto& f : functions) graphs.push_back(expand_to_instruction_graph(f.function, f.blocks));

  std::vector<PretrainExample> corpus;
  for (std::size_t fi = 0; fi < graphs.size(); ++fi) {
    const auto& g = graphs[fi];
    const auto seed = derive_seed(global_seed, "sampling", g.func_key);
    const auto pairs = sample_walk_pairs(g, config.walks_per_node, derive_seed(seed, 0));
    // Corpus-wide fallback: instructions of the neighbouring function.
    std::vector<TokenIds> fallback;
    if (graphs.size() > 1) fallback = graphs[(fi + 1) % graphs.size()].tokens;
    const auto nsp = make_nsp_examples(pairs, g, fallback, derive_seed(seed, 1), diag);
    for (std::size_t k = 0; k < nsp.size(); ++k) {
      auto ex = assemble_example(nsp[k].a, nsp[k].b, nsp[k].label, config.max_len);
      auto masked = apply_mlm_masking(ex.input_ids, vocab_size, derive_seed(seed, 2 + k),
                                      config.masking);
      ex.input_ids = std::move(masked.ids);
      ex.mlm_labels = std::move(masked.labels);
      corpus.push_back(std::move(ex));
    }
  }
  return corpus;
}

nlohmann::json example_record(const PretrainExample& ex) {
  return {{"input_ids", ex.input_ids},
          {"segment_ids", ex.segment_ids},
          {"position_ids", ex.position_ids},
          {"mlm_labels", ex.mlm_labels},
          {"nsp_label", ex.nsp_label}};
}

PretrainExample example_from_record(const nlohmann::json& j) {
  PretrainExample ex;
  j.at("input_ids").get_to(ex.input_ids);
  j.at("segment_ids").get_to(ex.segment_ids);
  j.at("position_ids").get_to(ex.position_ids);
  j.at("mlm_labels").get_to(ex.mlm_labels);
  j.at("nsp_label").get_to(ex.nsp_label);
  const auto n = ex.input_ids.size();
  if (ex.segment_ids.size() != n || ex.position_ids.size() != n || ex.mlm_labels.size() != n) {
    throw InputError("pretrain example fields differ in length");
  }
  return ex;
}

}  // namespace irbindiff::sampling
