#include "irbindiff/ir_corpus.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>

#include "irbindiff/error.hpp"
#include "irbindiff/text.hpp"

namespace irbindiff::ir {

namespace {

const std::regex& label_regex() {
  static const std::regex re(R"(^(dec_label_pc_[0-9A-Fa-f]+):)");
  return re;
}

const std::regex& insn_addr_regex() {
  static const std::regex re(R"(,\s*!insn\.addr\s+!\d+)");
  return re;
}

std::string_view comment_part(std::string_view line) {
  auto pos = line.find(';');
  return pos == std::string_view::npos ? std::string_view{} : line.substr(pos + 1);
}

bool is_define_line(std::string_view trimmed) {
  return trimmed.starts_with("define ") || trimmed.starts_with("define\t");
}

std::string function_name(std::string_view define_line, std::size_t line_no) {
  auto at = define_line.find('@');
  if (at == std::string_view::npos) throw ParseError(line_no, "define line without '@'");
  auto paren = define_line.find('(', at);
  if (paren == std::string_view::npos) throw ParseError(line_no, "define line without '('");
  std::string name(text::trim(define_line.substr(at + 1, paren - at - 1)));
  if (name.size() >= 2 && name.front() == '"' && name.back() == '"') {
    name = name.substr(1, name.size() - 2);
  }
  if (name.empty()) throw ParseError(line_no, "empty function name");
  return name;
}

}  // namespace

std::string FunctionMeta::key() const {
  return project + ":" + binary + ":" + source_function + ":" + compiler + "-" +
         compiler_version + ":" + architecture + ":" + optimization;
}

bool FunctionMeta::complete() const {
  return !project.empty() && !binary.empty() && !source_function.empty() && !compiler.empty() &&
         !compiler_version.empty() && !optimization.empty() && !architecture.empty();
}

std::size_t IRFunction::instruction_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.instructions.size();
  return n;
}

std::size_t ControlFlowGraph::index_of(std::string_view label) const {
  auto it = std::find(nodes.begin(), nodes.end(), label);
  if (it == nodes.end()) throw GraphError("unknown block label '" + std::string(label) + "'");
  return static_cast<std::size_t>(it - nodes.begin());
}

std::vector<std::pair<std::size_t, std::size_t>> ControlFlowGraph::index_edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(edges.size());
  for (const auto& [p, s] : edges) out.emplace_back(index_of(p), index_of(s));
  return out;
}

std::vector<std::vector<std::size_t>> ControlFlowGraph::successors() const {
  std::vector<std::vector<std::size_t>> succ(nodes.size());
  for (const auto& [p, s] : index_edges()) succ[p].push_back(s);
  return succ;
}

bool is_block_label_line(std::string_view line) {
  std::string s(text::trim(line));
  return std::regex_search(s, label_regex());
}

bool is_preds_line(std::string_view line) {
  auto c = text::trim(comment_part(line));
  if (!c.starts_with("preds")) return false;
  return text::trim(c.substr(5)).starts_with("=");
}

bool is_uselistorder_line(std::string_view line) {
  auto t = text::trim(line);
  if (t.starts_with("uselistorder")) return true;
  return t.starts_with(";") && t.find("uselistorder") != std::string_view::npos;
}

std::string strip_insn_addr(std::string_view line) {
  std::string s(line);
  return std::string(text::trim(std::regex_replace(s, insn_addr_regex(), "")));
}

std::vector<IRFunction> parse_module(std::string_view text, const FunctionMeta& meta_defaults,
                                     CfgDiagnostics* diagnostics) {
  std::vector<IRFunction> out;
  const auto lines = text::split_lines(text);

  bool in_function = false;
  bool body_closed = false;
  std::string name;
  std::vector<Instruction> body;

  auto finish = [&] {
    if (!in_function) return;
    IRFunction f;
    f.name = name;
    f.blocks = split_basic_blocks(body);
    f.cfg = extract_cfg(f.blocks, diagnostics);
    f.meta = meta_defaults;
    if (f.meta.source_function.empty()) f.meta.source_function = name;
    out.push_back(std::move(f));
    body.clear();
    in_function = false;
  };

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    auto t = text::trim(lines[i]);
    if (is_define_line(t)) {
      finish();
      name = function_name(t, line_no);
      in_function = true;
      body_closed = false;
      continue;
    }
    if (!in_function || body_closed || t.empty()) continue;
    if (t == "}") {
      body_closed = true;
      continue;
    }
    if (t.starts_with(";") && !is_uselistorder_line(t) && !is_preds_line(t)) continue;
    body.push_back(Instruction{std::string(t), line_no});
  }
  finish();
  return out;
}

std::vector<BasicBlock> split_basic_blocks(const std::vector<Instruction>& func_body) {
  std::vector<BasicBlock> blocks;
  std::set<std::string> seen;
  for (const auto& ins : func_body) {
    std::smatch m;
    if (std::regex_search(ins.raw_text, m, label_regex())) {
      std::string label = m[1].str();
      if (!seen.insert(label).second) {
        throw ParseError(ins.line_no, "duplicate block label '" + label + "'");
      }
      blocks.push_back(BasicBlock{label, {ins}});
      continue;
    }
    if (blocks.empty()) {
      seen.insert("entry");
      blocks.push_back(BasicBlock{"entry", {}});
    }
    blocks.back().instructions.push_back(ins);
  }
  return blocks;
}

std::vector<BasicBlock> split_basic_blocks(const std::vector<std::string>& func_body) {
  std::vector<Instruction> body;
  body.reserve(func_body.size());
  for (std::size_t i = 0; i < func_body.size(); ++i) {
    body.push_back(Instruction{std::string(text::trim(func_body[i])), i + 1});
  }
  return split_basic_blocks(body);
}

ControlFlowGraph extract_cfg(const std::vector<BasicBlock>& blocks, CfgDiagnostics* diagnostics) {
  ControlFlowGraph cfg;
  std::set<std::string> known;
  for (const auto& b : blocks) {
    cfg.nodes.push_back(b.label);
    known.insert(b.label);
  }
  std::set<Edge> seen;
  for (const auto& b : blocks) {
    for (const auto& ins : b.instructions) {
      if (!is_preds_line(ins.raw_text)) continue;
      auto c = comment_part(ins.raw_text);
      auto list = c.substr(c.find('=') + 1);
      for (auto item : text::split(list, ',')) {
        auto pred = text::trim(item);
        if (pred.starts_with("%")) pred.remove_prefix(1);
        if (pred.empty()) continue;
        std::string p(pred);
        if (!known.count(p)) {
          if (diagnostics) {
            ++diagnostics->unknown_predecessors;
            diagnostics->messages.push_back("line " + std::to_string(ins.line_no) +
                                            ": unknown predecessor '" + p + "' of '" + b.label +
                                            "'");
          }
          continue;
        }
        Edge e{p, b.label};
        if (seen.insert(e).second) cfg.edges.push_back(std::move(e));
      }
    }
  }
  return cfg;
}

BasicBlock simplify_instructions(const BasicBlock& block) {
  BasicBlock out{block.label, {}};
  for (const auto& ins : block.instructions) {
    if (is_block_label_line(ins.raw_text) || is_preds_line(ins.raw_text) ||
        is_uselistorder_line(ins.raw_text)) {
      continue;
    }
    auto s = strip_insn_addr(ins.raw_text);
    if (s.empty()) continue;
    out.instructions.push_back(Instruction{std::move(s), ins.line_no});
  }
  return out;
}

IRFunction simplify_function(const IRFunction& func) {
  IRFunction out = func;
  for (auto& b : out.blocks) b = simplify_instructions(b);
  return out;
}

std::vector<IRFunction> filter_small_functions(const std::vector<IRFunction>& funcs,
                                               std::size_t min_blocks) {
  if (min_blocks < 1) throw std::invalid_argument("min_blocks must be >= 1");
  std::vector<IRFunction> out;
  std::copy_if(funcs.begin(), funcs.end(), std::back_inserter(out),
               [&](const IRFunction& f) { return f.blocks.size() >= min_blocks; });
  return out;
}

FunctionMeta meta_from_path(const std::filesystem::path& relative, FunctionMeta base) {
  std::vector<std::string> parts;
  for (const auto& p : relative) parts.push_back(p.string());
  if (parts.size() < 5) {
    if (!parts.empty() && base.binary.empty()) base.binary = relative.stem().string();
    return base;
  }
  const auto n = parts.size();
  base.project = parts[n - 5];
  const auto& cv = parts[n - 4];
  auto dash = cv.find('-');
  if (dash == std::string::npos) {
    base.compiler = cv;
  } else {
    base.compiler = cv.substr(0, dash);
    base.compiler_version = cv.substr(dash + 1);
  }
  base.architecture = parts[n - 3];
  base.optimization = parts[n - 2];
  base.binary = std::filesystem::path(parts[n - 1]).stem().string();
  return base;
}

MetaManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed manifest " + path.string() + ": " + e.what());
  }
  MetaManifest m;
  for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = it.value();
  return m;
}

FunctionMeta apply_manifest(const MetaManifest& manifest, const std::string& relative,
                            FunctionMeta meta) {
  auto it = manifest.find(relative);
  if (it == manifest.end()) return meta;
  const auto& j = it->second;
  auto set = [&](const char* key, std::string& field) {
    if (j.contains(key)) field = j.at(key).get<std::string>();
  };
  set("project", meta.project);
  set("binary", meta.binary);
  set("source_function", meta.source_function);
  set("compiler", meta.compiler);
  set("compiler_version", meta.compiler_version);
  set("optimization", meta.optimization);
  set("architecture", meta.architecture);
  return meta;
}

void to_json(nlohmann::json& j, const FunctionMeta& m) {
  j = nlohmann::json{{"project", m.project},
                     {"binary", m.binary},
                     {"source_function", m.source_function},
                     {"compiler", m.compiler},
                     {"compiler_version", m.compiler_version},
                     {"optimization", m.optimization},
                     {"architecture", m.architecture}};
}

void from_json(const nlohmann::json& j, FunctionMeta& m) {
  j.at("project").get_to(m.project);
  j.at("binary").get_to(m.binary);
  j.at("source_function").get_to(m.source_function);
  j.at("compiler").get_to(m.compiler);
  j.at("compiler_version").get_to(m.compiler_version);
  j.at("optimization").get_to(m.optimization);
  j.at("architecture").get_to(m.architecture);
}

nlohmann::json function_record(const IRFunction& func) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : func.blocks) {
    nlohmann::json ins = nlohmann::json::array();
    for (const auto& i : b.instructions) ins.push_back(i.raw_text);
    blocks.push_back({{"label", b.label}, {"instructions", std::move(ins)}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [p, s] : func.cfg.edges) edges.push_back({p, s});
  return {{"name", func.name}, {"meta", func.meta}, {"blocks", blocks}, {"edges", edges}};
}

IRFunction function_from_record(const nlohmann::json& record) {
  IRFunction f;
  record.at("name").get_to(f.name);
  f.meta = record.at("meta").get<FunctionMeta>();
  for (const auto& b : record.at("blocks")) {
    BasicBlock block{b.at("label").get<std::string>(), {}};
    for (const auto& i : b.at("instructions")) {
      block.instructions.push_back(Instruction{i.get<std::string>(), 0});
    }
    f.cfg.nodes.push_back(block.label);
    f.blocks.push_back(std::move(block));
  }
  for (const auto& e : record.at("edges")) {
    f.cfg.edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  }
  return f;
}

}  // namespace irbindiff::ir
