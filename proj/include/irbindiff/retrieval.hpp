#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irbindiff/ggnn_moco.hpp"
#include "irbindiff/ir_corpus.hpp"

namespace irbindiff::retrieval {

using gnn::FunctionEmbedding;

// Compile-setting dimensions as bit flags.
enum Dim : unsigned {
  kCompiler = 1u,
  kOptimization = 2u,
  kArchitecture = 4u,
};

struct EvalTask {
  std::string name;  // "XC", "XO+XA", ...
  unsigned dims = 0;

  static EvalTask parse(const std::string& name);
  // The seven standard pairings.
  static const std::vector<EvalTask>& all();
  bool operator==(const EvalTask&) const = default;
};

// Dimensions in which two compiled instances differ. Compiler identity
// includes the version.
unsigned differing_dims(const ir::FunctionMeta& a, const ir::FunctionMeta& b);

bool same_source(const ir::FunctionMeta& a, const ir::FunctionMeta& b);

// 1 iff both come from the same (project, binary, source_function).
int label_pair(const ir::FunctionMeta& a, const ir::FunctionMeta& b);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct LabeledPair {
  std::size_t first = 0;  // indices into the function list
  std::size_t second = 0;
  int label = 0;
};

struct PairSet {
  std::vector<LabeledPair> pairs;  // positives first, then negatives
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t available_positives = 0;
  std::size_t available_negatives = 0;
};

// Unordered pairs whose settings differ in exactly the task's dimensions.
// Throws InputError naming the achievable counts when the request cannot
// be met, unless allow_short is set.
PairSet build_task_pairs(const std::vector<ir::FunctionMeta>& functions, const EvalTask& task,
                         std::size_t n_pos, std::size_t n_neg, std::uint64_t seed,
                         bool allow_short = false);

// Rank-sum AUC with ties counted one half.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

class EmbeddingIndex {
 public:
  void add(FunctionEmbedding embedding);
  const std::vector<FunctionEmbedding>& entries() const { return entries_; }
  const FunctionEmbedding& operator[](std::size_t i) const { return entries_[i]; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t dim() const { return entries_.empty() ? 0 : entries_.front().vector.size(); }

 private:
  std::vector<FunctionEmbedding> entries_;
};

struct QueryResult {
  std::vector<std::pair<std::size_t, double>> ranked;  // (pool index, score), top k
  std::size_t rank_of_gt = 0;                          // 1-based, over the full pool
  std::size_t pool_size = 0;
};

// Scores the whole pool; the ground truth is the single entry sharing the
// query's source identity.
QueryResult search(const FunctionEmbedding& query, const EmbeddingIndex& pool, std::size_t k);

double recall_at_k(const std::vector<QueryResult>& results, std::size_t k);
double mrr(const std::vector<QueryResult>& results);

struct QueryPool {
  FunctionEmbedding query;
  EmbeddingIndex pool;
  std::size_t gt_position = 0;
};

// One pool per (query, ground truth) pair: the ground truth at a seeded
// random position among pool_size - 1 distractors of other sources.
std::vector<QueryPool> build_pools(
    const std::vector<std::pair<FunctionEmbedding, FunctionEmbedding>>& positives,
    const std::vector<FunctionEmbedding>& distractors, std::size_t pool_size, std::uint64_t seed);

// (query, ground truth) pairs for a task: every function with a partner of
// the same source differing in exactly the task's dimensions. Ties among
// partners are resolved with the seed.
std::vector<std::pair<std::size_t, std::size_t>> task_queries(
    const std::vector<ir::FunctionMeta>& functions, const EvalTask& task, std::uint64_t seed);

struct TaskReport {
  std::string task;
  double auc = 0.0;
  double recall_1 = 0.0;
  double recall_10 = 0.0;
  double recall_50 = 0.0;
  double mrr = 0.0;
  std::size_t n_queries = 0;
  std::size_t n_pairs = 0;
  std::size_t pool_size = 0;
  std::uint64_t seed = 0;
};

nlohmann::ordered_json report_json(const std::vector<TaskReport>& reports);

struct EvalOptions {
  std::size_t pool_size = 101;
  std::size_t n_pos = 10000;
  std::size_t n_neg = 10000;
  bool allow_short = true;
  std::uint64_t seed = 0;
};

// Queries come from `test`; distractors from `test` and `extra` together.
TaskReport evaluate_task(const std::vector<FunctionEmbedding>& test,
                         const std::vector<FunctionEmbedding>& extra, const EvalTask& task,
                         const EvalOptions& options);

}  // namespace irbindiff::retrieval
