#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace irbindiff::ir {

struct Instruction {
  std::string raw_text;
  std::size_t line_no = 0;

  bool operator==(const Instruction&) const = default;
};

struct BasicBlock {
  std::string label;
  std::vector<Instruction> instructions;

  bool operator==(const BasicBlock&) const = default;
};

using Edge = std::pair<std::string, std::string>;  // (pred, succ)

struct ControlFlowGraph {
  std::vector<std::string> nodes;
  std::vector<Edge> edges;

  std::size_t index_of(std::string_view label) const;
  // Edges as (pred, succ) node indices.
  std::vector<std::pair<std::size_t, std::size_t>> index_edges() const;
  std::vector<std::vector<std::size_t>> successors() const;

  bool operator==(const ControlFlowGraph&) const = default;
};

struct FunctionMeta {
  std::string project;
  std::string binary;
  std::string source_function;
  std::string compiler;
  std::string compiler_version;
  std::string optimization;
  std::string architecture;

  // Unique key of one compiled instance.
  std::string key() const;
  bool complete() const;

  bool operator==(const FunctionMeta&) const = default;
};

struct IRFunction {
  std::string name;
  std::vector<BasicBlock> blocks;
  ControlFlowGraph cfg;
  FunctionMeta meta;

  std::size_t instruction_count() const;
  bool operator==(const IRFunction&) const = default;
};

struct CfgDiagnostics {
  std::size_t unknown_predecessors = 0;
  std::vector<std::string> messages;
};

// Splits `.ll` text at `define` lines. Body statements run from the line
// after `define` up to the closing `}` (or the next define / end of input).
// The define line itself is a header and belongs to no block. Blank lines
// and full-line comments other than uselistorder markers are not statements.
std::vector<IRFunction> parse_module(std::string_view text, const FunctionMeta& meta_defaults,
                                     CfgDiagnostics* diagnostics = nullptr);

std::vector<BasicBlock> split_basic_blocks(const std::vector<Instruction>& func_body);

// Overload for plain statement lists; line numbers are assigned 1..n.
std::vector<BasicBlock> split_basic_blocks(const std::vector<std::string>& func_body);

ControlFlowGraph extract_cfg(const std::vector<BasicBlock>& blocks,
                             CfgDiagnostics* diagnostics = nullptr);

BasicBlock simplify_instructions(const BasicBlock& block);

IRFunction simplify_function(const IRFunction& func);

std::vector<IRFunction> filter_small_functions(const std::vector<IRFunction>& funcs,
                                               std::size_t min_blocks = 5);

// Line classifiers shared with the synthetic generator and tests.
bool is_block_label_line(std::string_view line);
bool is_preds_line(std::string_view line);
bool is_uselistorder_line(std::string_view line);
std::string strip_insn_addr(std::string_view line);

// `<project>/<compiler>-<version>/<arch>/<opt>/<binary>.ll`, relative to the
// corpus root. Fields that cannot be derived are left untouched.
FunctionMeta meta_from_path(const std::filesystem::path& relative, FunctionMeta base = {});

// Sidecar manifest: {"<relative path>": {"project": ..., ...}}.
using MetaManifest = std::map<std::string, nlohmann::json>;
MetaManifest load_manifest(const std::filesystem::path& path);
FunctionMeta apply_manifest(const MetaManifest& manifest, const std::string& relative,
                            FunctionMeta meta);

void to_json(nlohmann::json& j, const FunctionMeta& m);
void from_json(const nlohmann::json& j, FunctionMeta& m);

// JSON-lines record {name, meta, blocks:[{label, instructions}], edges}.
nlohmann::json function_record(const IRFunction& func);
IRFunction function_from_record(const nlohmann::json& record);

}  // namespace irbindiff::ir
