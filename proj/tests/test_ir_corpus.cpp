#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "irbindiff/error.hpp"
#include "irbindiff/ir_corpus.hpp"
#include "irbindiff/text.hpp"

using namespace irbindiff;
using namespace irbindiff::ir;

namespace {

std::string fixture(const char* name) {
  return text::read_file(std::string(IRBINDIFF_FIXTURES) + "/" + name);
}

bool has_edge(const ControlFlowGraph& g, const std::string& a, const std::string& b) {
  return std::find(g.edges.begin(), g.edges.end(), Edge{a, b}) != g.edges.end();
}

}  // namespace

TEST_CASE("bind_engine listing parses into one function with preds edges") {
  CfgDiagnostics diag;
  const auto funcs = parse_module(fixture("bind_engine.ll"), {}, &diag);
  REQUIRE(funcs.size() == 1);
  const auto& f = funcs[0];
  CHECK(f.name == "bind_engine");
  CHECK(f.meta.source_function == "bind_engine");
  REQUIRE(f.blocks.size() == 4);
  CHECK(f.cfg.nodes == std::vector<std::string>{"entry", "dec_label_pc_215c", "dec_label_pc_218c",
                                                "dec_label_pc_21ac"});
  CHECK(has_edge(f.cfg, "dec_label_pc_215c", "dec_label_pc_21ac"));
  CHECK(has_edge(f.cfg, "dec_label_pc_218c", "dec_label_pc_21ac"));
  CHECK(has_edge(f.cfg, "entry", "dec_label_pc_215c"));
  CHECK(f.cfg.edges.size() == 5);
  CHECK(diag.unknown_predecessors == 0);
}

TEST_CASE("parse_module edge cases") {
  CHECK(parse_module("", {}).empty());
  const auto funcs = parse_module(fixture("two_functions.ll"), {});
  REQUIRE(funcs.size() == 2);
  CHECK(funcs[0].instruction_count() == 3);
  CHECK(funcs[1].instruction_count() == 5);
  CHECK(funcs[1].name == "second");

  CHECK_THROWS_AS(parse_module("define i32 first(i32 %a) {\n}\n", {}), ParseError);
  try {
    parse_module("\n\ndefine i32 @nope {\n}\n", {});
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line_no() == 3);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("split_basic_blocks") {
  SUBCASE("no labels gives a single entry block") {
    const auto blocks = split_basic_blocks(std::vector<std::string>{"%1 = add i32 1, 2", "ret void"});
    REQUIRE(blocks.size() == 1);
    CHECK(blocks[0].label == "entry");
    CHECK(blocks[0].instructions.size() == 2);
  }
  SUBCASE("labels at lines 4 and 7 of 10 give 3/3/4") {
    std::vector<std::string> body;
    for (int i = 1; i <= 10; ++i) {
      if (i == 4) body.push_back("dec_label_pc_10:");
      else if (i == 7) body.push_back("dec_label_pc_20:  ; preds = %dec_label_pc_10");
      else body.push_back("%" + std::to_string(i) + " = add i32 0, 0");
    }
    const auto blocks = split_basic_blocks(body);
    REQUIRE(blocks.size() == 3);
    CHECK(blocks[0].instructions.size() == 3);
    CHECK(blocks[1].instructions.size() == 3);
    CHECK(blocks[2].instructions.size() == 4);
  }
  SUBCASE("duplicate labels are rejected") {
    CHECK_THROWS_AS(split_basic_blocks(std::vector<std::string>{"dec_label_pc_1:", "ret void",
                                                                "dec_label_pc_1:", "ret void"}),
                    ParseError);
  }
}

TEST_CASE("extract_cfg") {
  SUBCASE("diamond") {
    const auto funcs = parse_module(fixture("diamond.ll"), {});
    REQUIRE(funcs.size() == 1);
    const auto& g = funcs[0].cfg;
    const std::set<Edge> got(g.edges.begin(), g.edges.end());
    const std::set<Edge> want{{"entry", "dec_label_pc_b1"},
                              {"entry", "dec_label_pc_b2"},
                              {"dec_label_pc_b1", "dec_label_pc_b3"},
                              {"dec_label_pc_b2", "dec_label_pc_b3"}};
    CHECK(got == want);
  }
  SUBCASE("single block") {
    const auto g = extract_cfg(split_basic_blocks(std::vector<std::string>{"ret void"}));
    CHECK(g.nodes.size() == 1);
    CHECK(g.edges.empty());
  }
  SUBCASE("unknown predecessors are counted, not fatal") {
    CfgDiagnostics diag;
    const auto g = extract_cfg(split_basic_blocks(std::vector<std::string>{
                                   "dec_label_pc_a:  ; preds = %dec_label_pc_zz, %entry",
                                   "ret void"}),
                               &diag);
    CHECK(g.edges.empty());
    CHECK(diag.unknown_predecessors == 2);
  }
}

TEST_CASE("simplify_instructions") {
  CHECK(strip_insn_addr("%54 = load i32, i32* @g, align 4, !insn.addr !12") ==
        "%54 = load i32, i32* @g, align 4");
  const BasicBlock plain{"entry", {{"ret void", 1}}};
  CHECK(simplify_instructions(plain) == plain);

  BasicBlock b{"dec_label_pc_1", {}};
  const std::vector<std::string> lines{
      "dec_label_pc_1:  ; preds = %entry", "%1 = add i32 1, 2, !insn.addr !1",
      "%2 = add i32 %1, 2",                "uselistorder i32 0, { 1, 0 }",
      "%3 = mul i32 %2, 2",                "%4 = sub i32 %3, 2",
      "%5 = xor i32 %4, 2",                "ret i32 %5, !insn.addr !9"};
  for (std::size_t i = 0; i < lines.size(); ++i) b.instructions.push_back({lines[i], i + 1});
  const auto s = simplify_instructions(b);
  REQUIRE(s.instructions.size() == 6);
  CHECK(s.instructions[0].raw_text == "%1 = add i32 1, 2");
  CHECK(s.instructions[5].raw_text == "ret i32 %5");
}

TEST_CASE("filter_small_functions") {
  const auto funcs = parse_module(fixture("bind_engine.ll") + fixture("two_functions.ll"), {});
  REQUIRE(funcs.size() == 3);
  CHECK(filter_small_functions(funcs, 4).size() == 1);
  CHECK(filter_small_functions(funcs, 5).empty());
  CHECK(filter_small_functions(funcs, 1).size() == 3);
  CHECK_THROWS_AS(filter_small_functions(funcs, 0), std::invalid_argument);
}

TEST_CASE("randomized partition and idempotence") {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 100; ++round) {
    std::vector<std::string> body;
    const int n = 1 + static_cast<int>(rng() % 40);
    int labels = 0;
    for (int i = 0; i < n; ++i) {
      if (rng() % 4 == 0) {
        body.push_back("dec_label_pc_" + std::to_string(1000 + labels++) + ":");
      } else {
        body.push_back("%v" + std::to_string(i) + " = add i32 1, 2, !insn.addr !" +
                       std::to_string(i));
      }
    }
    const auto blocks = split_basic_blocks(body);
    std::size_t total = 0;
    for (const auto& b : blocks) {
      CHECK_FALSE(b.instructions.empty());
      total += b.instructions.size();
    }
    CHECK(total == body.size());
    for (const auto& b : blocks) {
      const auto once = simplify_instructions(b);
      CHECK(simplify_instructions(once) == once);
    }
  }
}

TEST_CASE("metadata from path and manifest") {
  const auto m = meta_from_path("openssl/gcc-9.4/x86_32/O2/afalg.ll");
  CHECK(m.project == "openssl");
  CHECK(m.compiler == "gcc");
  CHECK(m.compiler_version == "9.4");
  CHECK(m.architecture == "x86_32");
  CHECK(m.optimization == "O2");
  CHECK(m.binary == "afalg");

  MetaManifest manifest{{"a.ll", nlohmann::json{{"project", "p"}, {"optimization", "O3"}}}};
  const auto applied = apply_manifest(manifest, "a.ll", m);
  CHECK(applied.project == "p");
  CHECK(applied.optimization == "O3");
  CHECK(applied.binary == "afalg");
}

TEST_CASE("function records round trip") {
  auto funcs = parse_module(fixture("diamond.ll"), meta_from_path("p/clang-12/arm_64/O0/b.ll"));
  const auto f = simplify_function(funcs[0]);
  const auto back = function_from_record(function_record(f));
  CHECK(back.name == f.name);
  CHECK(back.meta == f.meta);
  CHECK(back.cfg == f.cfg);
  REQUIRE(back.blocks.size() == f.blocks.size());
  for (std::size_t i = 0; i < f.blocks.size(); ++i) {
    CHECK(back.blocks[i].instructions.size() == f.blocks[i].instructions.size());
  }
}
