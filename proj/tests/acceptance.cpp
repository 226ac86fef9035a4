// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance [--work DIR] [--only N]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "goldens.hpp"
#include "grad_suite.hpp"
#include "irbindiff/error.hpp"
#include "irbindiff/ir_corpus.hpp"
#include "irbindiff/lm.hpp"
#include "irbindiff/normalize.hpp"
#include "irbindiff/pipeline.hpp"
#include "irbindiff/sampling.hpp"
#include "irbindiff/text.hpp"
#include "metric_oracles.hpp"
#include "model_checks.hpp"

using namespace irbindiff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

// 1 -----------------------------------------------------------------------
Outcome normalization_goldens() {
  int ok = 0;
  for (const auto& row : goldens::rule_table()) {
    ok += norm::join(norm::process_instruction(row.original)) == row.normalized;
  }
  const auto toks = norm::texts(norm::tokenize(goldens::kTokenizeInput));
  const bool tok_ok = toks == goldens::kTokenizeOutput;
  return {ok == 7 && tok_ok, std::to_string(ok) + "/7 rule rows, tokenization " +
                                 std::to_string(toks.size()) + " tokens " +
                                 (tok_ok ? "exact" : "MISMATCH")};
}

// 2 -----------------------------------------------------------------------
bool has_edge(const ir::ControlFlowGraph& g, const std::string& a, const std::string& b) {
  return std::find(g.edges.begin(), g.edges.end(), ir::Edge{a, b}) != g.edges.end();
}

Outcome cfg_extraction() {
  const auto fns = ir::parse_module(
      text::read_file(fs::path(IRBINDIFF_FIXTURES) / "bind_engine.ll"), {});
  if (fns.size() != 1) return {false, "fixture did not yield one function"};
  const auto& g = fns[0].cfg;
  const bool edges = has_edge(g, "dec_label_pc_215c", "dec_label_pc_21ac") &&
                     has_edge(g, "dec_label_pc_218c", "dec_label_pc_21ac");
  Rng rng(2024);
  int good = 0;
  for (int round = 0; round < 100; ++round) {
    std::vector<std::string> body;
    const std::size_t n = 1 + uniform_index(rng, 60);
    int labels = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = uniform_index(rng, 10);
      if (u < 2) {
        body.push_back("dec_label_pc_" + std::to_string(4096 + labels++) + ":");
      } else if (u == 2) {
        body.push_back("  uselistorder i32 0, { 1, 0 }");
      } else {
        body.push_back("  %" + std::to_string(i) + " = add i32 %" + std::to_string(i) + ", " +
                       std::to_string(uniform_index(rng, 5000)) + ", !insn.addr !" +
                       std::to_string(i));
      }
    }
    const auto blocks = ir::split_basic_blocks(body);
    std::size_t total = 0;
    bool ok = true;
    std::set<std::string> seen;
    for (const auto& b : blocks) {
      ok &= !b.instructions.empty() && seen.insert(b.label).second;
      total += b.instructions.size();
      const auto once = ir::simplify_instructions(b);
      ok &= ir::simplify_instructions(once) == once;
    }
    ok &= total == body.size();
    good += ok;
  }
  return {edges && good == 100, std::string("fixture edges ") + (edges ? "present" : "MISSING") +
                                    ", " + std::to_string(good) + "/100 randomized fixtures"};
}

// 3 -----------------------------------------------------------------------
Outcome walk_sampling() {
  const int draws = 100000;
  std::string detail;
  bool pass = true;
  for (std::size_t d : {1u, 2u, 3u, 5u}) {
    sampling::InstructionGraph g;
    g.nodes.resize(d + 1);
    g.tokens.resize(d + 1);
    g.successors.resize(d + 1);
    for (std::size_t s = 1; s <= d; ++s) g.successors[0].push_back(s);
    const auto pairs = sampling::sample_walk_pairs(g, draws, derive_seed(7, d));
    std::vector<int> counts(d + 1, 0);
    for (const auto& [a, b] : pairs) ++counts[b];
    const double p = 1.0 / static_cast<double>(d);
    const double sigma = std::sqrt(draws * p * (1 - p));
    double worst = 0;
    for (std::size_t s = 1; s <= d; ++s) {
      const double dev = std::abs(counts[s] - draws * p);
      worst = std::max(worst, sigma > 0 ? dev / sigma : dev);
    }
    pass &= worst <= 3.0;
    detail += (detail.empty() ? "" : ", ") + ("d=" + std::to_string(d) + " max " + num(worst, 3) + " sigma");
  }
  return {pass, detail};
}

// 4 -----------------------------------------------------------------------
Outcome masking_statistics() {
  sampling::TokenIds ids(100000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = norm::Vocabulary::kNumSpecials + static_cast<int>(i % 97);
  const int vocab = norm::Vocabulary::kNumSpecials + 97;
  const auto m = sampling::apply_mlm_masking(ids, vocab, 99);
  double sel = 0, mask = 0, rnd = 0, same = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (m.labels[i] == sampling::kIgnoreLabel) continue;
    ++sel;
    if (m.ids[i] == norm::Vocabulary::kMask) ++mask;
    else if (m.ids[i] == ids[i]) ++same;
    else ++rnd;
  }
  const double f = sel / static_cast<double>(ids.size());
  const bool pass = f >= 0.145 && f <= 0.155 && mask / sel >= 0.68 && mask / sel <= 0.72 &&
                    rnd / sel >= 0.13 && rnd / sel <= 0.17 && same / sel >= 0.13 && same / sel <= 0.17;
  return {pass, "selected " + num(f) + ", mask " + num(mask / sel) + ", random " + num(rnd / sel) +
                    ", unchanged " + num(same / sel)};
}

// 5 -----------------------------------------------------------------------
Outcome gradient_suite() {
  const auto results = grad_suite::run_all(1);
  int ok = 0;
  std::string worst;
  double worst_ratio = 0;
  for (const auto& r : results) {
    ok += r.passed();
    if (r.max_rel_error / r.tolerance > worst_ratio) {
      worst_ratio = r.max_rel_error / r.tolerance;
      worst = r.op + " " + num(r.max_rel_error, 2);
    }
  }
  const auto lm_rep = model_checks::lm_gradient_check(3);
  const auto gg_rep = model_checks::ggnn_gradient_check(21);
  const bool pass = ok == static_cast<int>(results.size()) && lm_rep.max_rel_error < 1e-4 &&
                    gg_rep.max_rel_error < 1e-4;
  return {pass, std::to_string(ok) + "/" + std::to_string(results.size()) +
                    " primitives (worst " + worst + "), LM " + num(lm_rep.max_rel_error, 2) +
                    ", GGNN+InfoNCE " + num(gg_rep.max_rel_error, 2)};
}

// 6 -----------------------------------------------------------------------
Outcome analytic_losses() {
  const int V = 37;
  const auto mlm = nn::cross_entropy(nn::constant(nn::Tensor({5, static_cast<std::size_t>(V)}, 0.25)),
                                     {0, 3, 36, 7, 11});
  const double mlm_err = std::abs(mlm.item() - std::log(double(V)));

  Rng rng(4);
  const auto q = nn::uniform_unit_rows(1, 8, rng);
  const std::size_t n = 63;
  nn::Tensor queue({n, 8});
  for (std::size_t r = 0; r < n; ++r) std::copy(q.row(0).begin(), q.row(0).end(), queue.row(r).begin());
  const double nce = gnn::info_nce_loss(nn::constant(q), nn::constant(q), queue, 0.07).item();
  const double nce_err = std::abs(nce - std::log(double(n + 1)));

  nn::ParameterStore key, query;
  key.add("w", nn::normal_tensor({3, 4}, 1.0, rng));
  query.add("w", nn::normal_tensor({3, 4}, 1.0, rng));
  const auto k0 = key.get("w").value();
  const auto q0 = query.get("w").value();
  gnn::momentum_update(key, query, 1.0);
  const bool m1 = key.get("w").value() == k0;
  gnn::momentum_update(key, query, 0.0);
  const bool m0 = key.get("w").value() == q0;
  nn::ParameterStore a, b;
  a.add("x", nn::Tensor::scalar(1.0));
  b.add("x", nn::Tensor::scalar(0.0));
  gnn::momentum_update(a, b, 0.999);
  const bool scalar = a.get("x").value()[0] == 0.999;

  const bool pass = mlm_err <= 1e-9 && nce_err <= 1e-9 && m0 && m1 && scalar;
  return {pass, "MLM |L-lnV| " + num(mlm_err, 2) + ", InfoNCE |L-ln(n+1)| " + num(nce_err, 2) +
                    ", m=0 " + (m0 ? "exact" : "off") + ", m=1 " + (m1 ? "exact" : "off") +
                    ", m=0.999 " + (scalar ? "exact" : "off")};
}

// 7 -----------------------------------------------------------------------
Outcome metric_oracles_check() {
  const auto a = metric_oracles::check_random_pools(77, 200, 101);
  return {metric_oracles::all_ok(a),
          std::to_string(a.pools) + " pools, rank mismatches " + std::to_string(a.rank_mismatches) +
              ", recall " + (a.recall_match ? "exact" : "DIFF") + ", mrr " +
              (a.mrr_match ? "exact" : "DIFF") + ", auc " + (a.auc_match ? "exact" : "DIFF") +
              ", monotone " + (a.recall_monotone ? "yes" : "NO") + ", MRR>=R@1 " +
              (a.mrr_dominates ? "yes" : "NO")};
}

// 8 -----------------------------------------------------------------------
Outcome structural_invariances() {
  const auto r = model_checks::structural_invariance(8, 50, 20);
  const bool pass = r.readout_max_diff <= 1e-9 && r.equivariance_max_diff <= 1e-9 &&
                    r.embedding_max_diff <= 1e-9;
  return {pass, "readout " + num(r.readout_max_diff, 2) + ", equivariance " +
                    num(r.equivariance_max_diff, 2) + ", embedding " + num(r.embedding_max_diff, 2)};
}

// 9 / 10 ------------------------------------------------------------------
struct DeskRun {
  bool ran = false;
  std::string error;
  pipeline::PipelineConfig cfg;
  nlohmann::ordered_json base, ablated;
  gnn::ContrastiveLog train_log;
  double base_seconds = 0, ablate_seconds = 0;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

DeskRun& desk(const fs::path& work, bool need_ablation) {
  static DeskRun run;
  if (!run.ran) {
    run.ran = true;
    try {
      run.cfg = pipeline::PipelineConfig::load(IRBINDIFF_DESK_CONFIG);
      run.cfg.corpus_dir = work / "corpus";
      run.cfg.work_dir = work / "work";
      const auto t0 = std::chrono::steady_clock::now();
      pipeline::run_synth(run.cfg);
      pipeline::run_prepare(run.cfg);
      pipeline::run_pretrain(run.cfg);
      pipeline::run_embed_blocks(run.cfg);
      run.train_log = pipeline::run_train(run.cfg);
      pipeline::run_embed(run.cfg);
      run.base = pipeline::run_eval(run.cfg);
      run.base_seconds = seconds_since(t0);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  }
  if (need_ablation && run.error.empty() && run.ablated.is_null()) {
    try {
      auto cfg = run.cfg;
      cfg.ablate.no_graph = true;
      const auto t0 = std::chrono::steady_clock::now();
      pipeline::run_train(cfg);
      pipeline::run_embed(cfg);
      run.ablated = pipeline::run_eval(cfg);
      run.ablate_seconds = seconds_since(t0);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  }
  return run;
}

Outcome end_to_end(const fs::path& work) {
  auto& run = desk(work, false);
  if (!run.error.empty()) return {false, "desk run failed: " + run.error};
  double r1 = 0, mrr = 0;
  int n = 0;
  for (const auto& [task, m] : run.base["tasks"].items()) {
    r1 += m["recall@1"].get<double>();
    mrr += m["mrr"].get<double>();
    ++n;
  }
  r1 /= n;
  mrr /= n;
  std::optional<double> first, last;
  for (const auto& e : run.train_log.epoch_loss) {
    if (!e) continue;
    if (!first) first = e;
    last = e;
  }
  const bool decreasing = first && last && run.train_log.epoch_loss.size() >= 2 && *last < *first;
  const bool pass = r1 >= 0.5 && mrr >= 0.6 && decreasing && run.base_seconds < 30 * 60;
  return {pass, "mean over " + std::to_string(n) + " tasks: Recall@1 " + num(r1) + ", MRR " +
                    num(mrr) + "; epoch loss " + (first ? num(*first) : "-") + " -> " +
                    (last ? num(*last) : "-") + "; " + num(run.base_seconds, 3) + " s"};
}

Outcome ablation_direction(const fs::path& work) {
  auto& run = desk(work, true);
  if (!run.error.empty()) return {false, "desk run failed: " + run.error};
  const double full = run.base["tasks"]["XA"]["recall@1"].get<double>();
  const double ng = run.ablated["tasks"]["XA"]["recall@1"].get<double>();
  const double total = run.base_seconds + run.ablate_seconds;
  return {ng < full && total < 45 * 60, "XA Recall@1 full " + num(full) + " vs no_graph " + num(ng) +
                                            "; both runs " + num(total, 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "irbindiff_acceptance";
  int only = 0;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--work") work = argv[i + 1];
    else if (flag == "--only") only = std::stoi(argv[i + 1]);
  }
  fs::remove_all(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"normalization goldens", normalization_goldens},
      {"CFG extraction", cfg_extraction},
      {"walk sampling 1/d", walk_sampling},
      {"masking statistics", masking_statistics},
      {"gradient suite", gradient_suite},
      {"analytic losses", analytic_losses},
      {"metric oracles", metric_oracles_check},
      {"structural invariances", structural_invariances},
      {"end-to-end desk run", [&] { return end_to_end(work); }},
      {"no_graph ablation direction", [&] { return ablation_direction(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only && static_cast<int>(i + 1) != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2zu  %-4s  %-28s %s (%.2f s)\n", i + 1, o.pass ? "PASS" : "FAIL",
                criteria[i].first.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
