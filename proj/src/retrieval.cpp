#include "irbindiff/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "irbindiff/error.hpp"
#include "irbindiff/rng.hpp"

namespace irbindiff::retrieval {

namespace {

using SourceKey = std::tuple<std::string, std::string, std::string>;

SourceKey source_key(const ir::FunctionMeta& m) {
  return {m.project, m.binary, m.source_function};
}

}  // namespace

EvalTask EvalTask::parse(const std::string& name) {
  EvalTask t{name, 0};
  std::size_t start = 0;
  while (start <= name.size()) {
    const std::size_t end = std::min(name.find('+', start), name.size());
    const std::string part = name.substr(start, end - start);
    unsigned bit = 0;
    if (part == "XC") bit = kCompiler;
    else if (part == "XO") bit = kOptimization;
    else if (part == "XA") bit = kArchitecture;
    if (bit == 0 || (t.dims & bit)) throw ConfigError("unknown evaluation task '" + name + "'");
    t.dims |= bit;
    start = end + 1;
  }
  return t;
}

const std::vector<EvalTask>& EvalTask::all() {
  static const std::vector<EvalTask> tasks = [] {
    std::vector<EvalTask> v;
    for (const char* n : {"XC", "XO", "XA", "XC+XO", "XO+XA", "XC+XA", "XC+XO+XA"})
      v.push_back(parse(n));
    return v;
  }();
  return tasks;
}

unsigned differing_dims(const ir::FunctionMeta& a, const ir::FunctionMeta& b) {
  unsigned d = 0;
  if (a.compiler != b.compiler || a.compiler_version != b.compiler_version) d |= kCompiler;
  if (a.optimization != b.optimization) d |= kOptimization;
  if (a.architecture != b.architecture) d |= kArchitecture;
  return d;
}

bool same_source(const ir::FunctionMeta& a, const ir::FunctionMeta& b) {
  return source_key(a) == source_key(b);
}

int label_pair(const ir::FunctionMeta& a, const ir::FunctionMeta& b) {
  return same_source(a, b) ? 1 : 0;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine of vectors with dims " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw MetricError("cosine similarity undefined for a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

PairSet build_task_pairs(const std::vector<ir::FunctionMeta>& functions, const EvalTask& task,
                         std::size_t n_pos, std::size_t n_neg, std::uint64_t seed,
                         bool allow_short) {
  std::vector<LabeledPair> pos, neg;
  for (std::size_t i = 0; i < functions.size(); ++i) {
    for (std::size_t j = i + 1; j < functions.size(); ++j) {
      if (differing_dims(functions[i], functions[j]) != task.dims) continue;
      const int label = label_pair(functions[i], functions[j]);
      (label ? pos : neg).push_back({i, j, label});
    }
  }
  PairSet out;
  out.available_positives = pos.size();
  out.available_negatives = neg.size();
  if ((pos.size() < n_pos || neg.size() < n_neg) && !allow_short) {
    throw InputError(task.name + ": requested " + std::to_string(n_pos) + "/" +
                     std::to_string(n_neg) + " pairs, achievable " + std::to_string(pos.size()) +
                     "/" + std::to_string(neg.size()));
  }
  Rng rng(derive_seed(seed, "task-pairs", task.name));
  auto take = [&](std::vector<LabeledPair>& v, std::size_t n) {
    std::shuffle(v.begin(), v.end(), rng);
    v.resize(std::min(n, v.size()));
    out.pairs.insert(out.pairs.end(), v.begin(), v.end());
    return v.size();
  };
  out.positives = take(pos, n_pos);
  out.negatives = take(neg, n_neg);
  return out;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;  // 1-based mid-ranks
  double n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]]) {
        pos_rank_sum += mid;
        n_pos += 1;
      } else {
        n_neg += 1;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc needs both positive and negative labels");
  return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

void EmbeddingIndex::add(FunctionEmbedding embedding) {
  if (!entries_.empty() && embedding.vector.size() != dim()) {
    throw ShapeError("index dim " + std::to_string(dim()) + ", got " +
                     std::to_string(embedding.vector.size()));
  }
  double n = 0;
  for (double v : embedding.vector) n += v * v;
  if (std::abs(std::sqrt(n) - 1.0) > 1e-8) {
    throw NumericError("index entries must be unit norm (" + embedding.meta.key() + ")");
  }
  entries_.push_back(std::move(embedding));
}

QueryResult search(const FunctionEmbedding& query, const EmbeddingIndex& pool, std::size_t k) {
  if (pool.empty()) throw MetricError("search over an empty pool");
  std::vector<std::pair<std::size_t, double>> scored(pool.size());
  std::size_t gt = pool.size(), gt_count = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    scored[i] = {i, cosine_similarity(query.vector, pool[i].vector)};
    if (label_pair(query.meta, pool[i].meta)) {
      gt = i;
      ++gt_count;
    }
  }
  if (gt_count != 1) {
    throw InputError("pool must hold exactly one match for " + query.meta.key() + ", found " +
                     std::to_string(gt_count));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  QueryResult r;
  r.pool_size = pool.size();
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].first == gt) r.rank_of_gt = i + 1;
  }
  scored.resize(std::min(k, scored.size()));
  r.ranked = std::move(scored);
  return r;
}

double recall_at_k(const std::vector<QueryResult>& results, std::size_t k) {
  if (k < 1) throw MetricError("recall@k needs k >= 1");
  if (results.empty()) throw MetricError("recall over zero queries");
  std::size_t hits = 0;
  for (const auto& r : results) hits += r.rank_of_gt <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mrr(const std::vector<QueryResult>& results) {
  if (results.empty()) throw MetricError("mrr over zero queries");
  double s = 0;
  for (const auto& r : results) s += 1.0 / static_cast<double>(r.rank_of_gt);
  return s / static_cast<double>(results.size());
}

std::vector<QueryPool> build_pools(
    const std::vector<std::pair<FunctionEmbedding, FunctionEmbedding>>& positives,
    const std::vector<FunctionEmbedding>& distractors, std::size_t pool_size, std::uint64_t seed) {
  if (pool_size < 2) throw ConfigError("pool_size must be >= 2");
  std::vector<QueryPool> out;
  out.reserve(positives.size());
  for (std::size_t q = 0; q < positives.size(); ++q) {
    const auto& [query, gt] = positives[q];
    if (!same_source(query.meta, gt.meta)) {
      throw InputError("ground truth does not share the query's source: " + query.meta.key());
    }
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < distractors.size(); ++i) {
      if (!same_source(distractors[i].meta, query.meta)) candidates.push_back(i);
    }
    if (candidates.size() < pool_size - 1) {
      throw InputError("only " + std::to_string(candidates.size()) + " distractors for a pool of " +
                       std::to_string(pool_size));
    }
    Rng rng(derive_seed(derive_seed(seed, "pools"), q));
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i + 1 < pool_size; ++i) {
      std::swap(candidates[i], candidates[i + uniform_index(rng, candidates.size() - i)]);
    }
    QueryPool p;
    p.query = query;
    p.gt_position = uniform_index(rng, pool_size);
    for (std::size_t i = 0, d = 0; i < pool_size; ++i) {
      p.pool.add(i == p.gt_position ? gt : distractors[candidates[d++]]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> task_queries(
    const std::vector<ir::FunctionMeta>& functions, const EvalTask& task, std::uint64_t seed) {
  std::map<SourceKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < functions.size(); ++i) groups[source_key(functions[i])].push_back(i);
  Rng rng(derive_seed(seed, "task-queries", task.name));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < functions.size(); ++i) {
    std::vector<std::size_t> partners;
    for (std::size_t j : groups[source_key(functions[i])]) {
      if (j != i && differing_dims(functions[i], functions[j]) == task.dims) partners.push_back(j);
    }
    if (partners.empty()) continue;
    out.emplace_back(i, partners[uniform_index(rng, partners.size())]);
  }
  return out;
}

namespace {

nlohmann::json metric(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::ordered_json report_json(const std::vector<TaskReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& r : reports) {
    nlohmann::ordered_json t;
    t["auc"] = metric(r.auc);
    t["recall@1"] = metric(r.recall_1);
    t["recall@10"] = metric(r.recall_10);
    t["recall@50"] = metric(r.recall_50);
    t["mrr"] = metric(r.mrr);
    t["n_queries"] = r.n_queries;
    t["n_pairs"] = r.n_pairs;
    t["pool_size"] = r.pool_size;
    t["seed"] = r.seed;
    j[r.task] = t;
  }
  return j;
}

TaskReport evaluate_task(const std::vector<FunctionEmbedding>& test,
                         const std::vector<FunctionEmbedding>& extra, const EvalTask& task,
                         const EvalOptions& options) {
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  TaskReport rep;
  rep.task = task.name;
  rep.pool_size = options.pool_size;
  rep.seed = options.seed;
  rep.auc = rep.recall_1 = rep.recall_10 = rep.recall_50 = rep.mrr = kNaN;

  std::vector<ir::FunctionMeta> metas;
  for (const auto& e : test) metas.push_back(e.meta);

  const auto pairs = build_task_pairs(metas, task, options.n_pos, options.n_neg,
                                      derive_seed(options.seed, "auc"), options.allow_short);
  rep.n_pairs = pairs.pairs.size();
  if (pairs.positives > 0 && pairs.negatives > 0) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& p : pairs.pairs) {
      scores.push_back(cosine_similarity(test[p.first].vector, test[p.second].vector));
      labels.push_back(p.label);
    }
    rep.auc = auc(scores, labels);
  }

  std::vector<std::pair<FunctionEmbedding, FunctionEmbedding>> positives;
  for (const auto& [q, g] : task_queries(metas, task, options.seed)) {
    positives.emplace_back(test[q], test[g]);
  }
  rep.n_queries = positives.size();
  if (positives.empty()) return rep;
  std::vector<FunctionEmbedding> distractors = test;
  distractors.insert(distractors.end(), extra.begin(), extra.end());
  const auto pools = build_pools(positives, distractors, options.pool_size,
                                 derive_seed(options.seed, "pools", task.name));
  std::vector<QueryResult> results;
  for (const auto& p : pools) results.push_back(search(p.query, p.pool, 50));
  rep.recall_1 = recall_at_k(results, 1);
  rep.recall_10 = recall_at_k(results, 10);
  rep.recall_50 = recall_at_k(results, 50);
  rep.mrr = mrr(results);
  return rep;
}

}  // namespace irbindiff::retrieval
