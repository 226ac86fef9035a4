#include <doctest.h>

#include <cmath>
#include <map>

#include "irbindiff/error.hpp"
#include "irbindiff/normalize.hpp"
#include "irbindiff/sampling.hpp"

using namespace irbindiff;
using namespace irbindiff::sampling;
using irbindiff::norm::Vocabulary;

namespace {

// entry(2 instrs) -> b1(1), b2(2); b1 -> b3(1); b2 -> b3.
ir::IRFunction diamond() {
  ir::IRFunction f;
  f.name = "d";
  f.meta.source_function = "d";
  for (const auto& [label, n] : std::vector<std::pair<std::string, int>>{
           {"entry", 2}, {"b1", 1}, {"b2", 2}, {"b3", 1}}) {
    ir::BasicBlock b{label, {}};
    for (int i = 0; i < n; ++i) b.instructions.push_back({label + std::to_string(i), 0});
    f.blocks.push_back(b);
    f.cfg.nodes.push_back(label);
  }
  f.cfg.edges = {{"entry", "b1"}, {"entry", "b2"}, {"b1", "b3"}, {"b2", "b3"}};
  return f;
}

BlockTokens diamond_tokens() {
  return {{{10, 11}, {12}}, {{13}}, {{14}, {15, 16}}, {{17}}};
}

}  // namespace

TEST_CASE("instruction graph expansion") {
  const auto g = expand_to_instruction_graph(diamond(), diamond_tokens());
  REQUIRE(g.size() == 6);
  CHECK(g.successors[0] == std::vector<std::size_t>{1});
  CHECK(g.successors[1] == std::vector<std::size_t>{2, 3});
  CHECK(g.successors[2] == std::vector<std::size_t>{5});
  CHECK(g.successors[3] == std::vector<std::size_t>{4});
  CHECK(g.successors[4] == std::vector<std::size_t>{5});
  CHECK(g.successors[5].empty());
  CHECK(g.edge_count() == 6);
  CHECK_THROWS_AS(expand_to_instruction_graph(diamond(), {}), ShapeError);
}

TEST_CASE("walk pairs follow successors only") {
  const auto g = expand_to_instruction_graph(diamond(), diamond_tokens());
  const auto pairs = sample_walk_pairs(g, 3, 42);
  CHECK(pairs.size() == 5 * 3);
  for (const auto& [a, b] : pairs) CHECK(g.is_successor(a, b));
  CHECK(pairs == sample_walk_pairs(g, 3, 42));
  CHECK_THROWS_AS(sample_walk_pairs(g, 0, 1), ConfigError);
}

TEST_CASE("walk frequencies approach 1/d") {
  InstructionGraph g;
  g.nodes.resize(4);
  g.tokens.resize(4);
  g.successors = {{1, 2, 3}, {}, {}, {}};
  const int n = 30000;
  const auto pairs = sample_walk_pairs(g, n, 3);
  std::map<std::size_t, int> counts;
  for (const auto& [a, b] : pairs) ++counts[b];
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (std::size_t w = 1; w <= 3; ++w) CHECK(std::abs(counts[w] - n * p) < 3 * sigma);
}

TEST_CASE("NSP examples are balanced and negatives are non-successors") {
  const auto g = expand_to_instruction_graph(diamond(), diamond_tokens());
  const auto pairs = sample_walk_pairs(g, 2, 5);
  NspDiagnostics diag;
  const auto ex = make_nsp_examples(pairs, g, {}, 9, &diag);
  CHECK(ex.size() == 2 * pairs.size());
  CHECK(diag.skipped == 0);
  for (std::size_t i = 0; i < ex.size(); i += 2) {
    CHECK(ex[i].label == 1);
    CHECK(ex[i + 1].label == 0);
  }
}

TEST_CASE("NSP pairs with no possible negative are skipped") {
  InstructionGraph g;
  g.nodes.resize(2);
  g.tokens = {{5}, {6}};
  g.successors = {{0, 1}, {}};
  NspDiagnostics diag;
  CHECK(make_nsp_examples({{0, 1}}, g, {}, 1, &diag).empty());
  CHECK(diag.skipped == 1);
  const auto with_pool = make_nsp_examples({{0, 1}}, g, {{9}}, 1, &diag);
  REQUIRE(with_pool.size() == 2);
  CHECK(with_pool[1].b == TokenIds{9});
}

TEST_CASE("masking rates") {
  TokenIds ids(100000);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = 5 + static_cast<int>(i % 50);
  const auto m = apply_mlm_masking(ids, 60, 11);
  std::size_t sel = 0, mask = 0, rnd = 0, same = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (m.labels[i] == kIgnoreLabel) {
      CHECK(m.ids[i] == ids[i]);
      continue;
    }
    ++sel;
    CHECK(m.labels[i] == ids[i]);
    if (m.ids[i] == Vocabulary::kMask) ++mask;
    else if (m.ids[i] == ids[i]) ++same;
    else ++rnd;
  }
  CHECK(sel == 15000);
  CHECK(mask / double(sel) == doctest::Approx(0.70).epsilon(0.03));
  CHECK(rnd / double(sel) > 0.13);
  CHECK(same / double(sel) > 0.13);
}

TEST_CASE("masking never touches specials and selects at least one") {
  const TokenIds ids{Vocabulary::kCls, 7, Vocabulary::kSep};
  const auto m = apply_mlm_masking(ids, 10, 1);
  CHECK(m.labels[0] == kIgnoreLabel);
  CHECK(m.labels[1] == 7);
  CHECK(m.labels[2] == kIgnoreLabel);
  const auto none = apply_mlm_masking({Vocabulary::kCls, Vocabulary::kSep}, 10, 1);
  CHECK(none.labels == std::vector<int>{kIgnoreLabel, kIgnoreLabel});
}

TEST_CASE("assemble_example layout and truncation") {
  const auto ex = assemble_example({10, 11}, {12}, 1);
  CHECK(ex.input_ids == TokenIds{Vocabulary::kCls, 10, 11, Vocabulary::kSep, 12, Vocabulary::kSep});
  CHECK(ex.segment_ids == std::vector<int>{0, 0, 0, 0, 1, 1});
  CHECK(ex.position_ids == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(ex.nsp_label == 1);

  const auto t = assemble_example(TokenIds(20, 7), TokenIds(3, 8), 0, 10);
  CHECK(t.size() == 10);
  CHECK(std::count(t.input_ids.begin(), t.input_ids.end(), 8) == 3);
  CHECK_THROWS_AS(assemble_example({}, {1}, 0), InputError);
  CHECK_THROWS_AS(assemble_example({1}, {1}, 0, 4), ConfigError);
}

TEST_CASE("pretrain corpus is deterministic and round-trips") {
  std::vector<FunctionTokens> funcs{{diamond(), diamond_tokens()}};
  auto second = diamond();
  second.meta.source_function = "e";
  funcs.push_back({second, diamond_tokens()});
  const auto a = build_pretrain_corpus(funcs, 20, {}, 99);
  const auto b = build_pretrain_corpus(funcs, 20, {}, 99);
  CHECK(a == b);
  CHECK(a.size() == 2 * 2 * 5 * 2);
  for (const auto& ex : a) CHECK(example_from_record(example_record(ex)) == ex);
  CHECK(build_pretrain_corpus(funcs, 20, {}, 100) != a);
}
