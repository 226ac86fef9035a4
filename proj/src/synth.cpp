#include "irbindiff/synth.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <set>

#include "irbindiff/error.hpp"
#include "irbindiff/rng.hpp"
#include "irbindiff/text.hpp"

namespace irbindiff::synth {

namespace {

constexpr std::array<const char*, 40> kWords{
    "engine", "set",  "get",   "init",   "free",  "ctx",   "buf",   "read",  "write", "alloc",
    "hash",   "update", "final", "cipher", "key", "verify", "parse", "load",  "store", "list",
    "node",   "push", "pop",   "lock",   "open",  "close", "send",  "recv",  "sock",  "str",
    "cmp",    "copy", "len",   "error",  "log",   "table", "map",   "insert", "find", "remove"};

constexpr std::array<const char*, 3> kOpts{"O1", "O2", "O3"};

enum class OpKind { kArith, kCmp, kLoad, kStore, kCall, kCast, kSelect };
enum class ConstClass { kSmall, kNegative, kAddress, kEdge };

struct Const {
  ConstClass cls = ConstClass::kSmall;
  std::int64_t value = 1;
};

struct Op {
  OpKind kind = OpKind::kArith;
  int sub = 0;
  int callee = 0;
  int global = 0;
  int operand_back = 0;  // 0 = most recent value
  bool foldable = false;
  Const c;
};

struct SourceBlock {
  std::vector<Op> ops;  // a block with two successors ends in a compare
};

struct SourceFunction {
  std::string name;
  std::vector<SourceBlock> blocks;
  std::vector<std::vector<int>> succ;
  std::vector<std::string> callees;
};

const char* arith_name(int s) {
  static constexpr std::array<const char*, 7> n{"add", "sub", "mul", "and", "or", "xor", "shl"};
  return n[static_cast<std::size_t>(s) % n.size()];
}

const char* cmp_name(int s, bool inverted) {
  static constexpr std::array<const char*, 5> n{"eq", "ne", "slt", "sgt", "ult"};
  static constexpr std::array<const char*, 5> inv{"ne", "eq", "sge", "sle", "uge"};
  return (inverted ? inv : n)[static_cast<std::size_t>(s) % n.size()];
}

Const draw_const(Rng& rng) {
  const double u = uniform01(rng);
  Const c;
  if (u < 0.55) {
    c.cls = ConstClass::kSmall;
    c.value = 1 + static_cast<std::int64_t>(uniform_index(rng, 100));
  } else if (u < 0.7) {
    c.cls = ConstClass::kNegative;
    c.value = -1 - static_cast<std::int64_t>(uniform_index(rng, 700));
  } else if (u < 0.92) {
    c.cls = ConstClass::kAddress;
    c.value = 0x400000 + 16 * static_cast<std::int64_t>(uniform_index(rng, 0x8000));
  } else {
    c.cls = ConstClass::kEdge;
    c.value = 1000 + static_cast<std::int64_t>(uniform_index(rng, 48));
  }
  return c;
}

Op draw_op(Rng& rng, const std::array<double, 7>& mix, int n_callees) {
  double u = uniform01(rng) * (mix[0] + mix[1] + mix[2] + mix[3] + mix[4] + mix[5] + mix[6]);
  std::size_t k = 0;
  while (k + 1 < mix.size() && u >= mix[k]) u -= mix[k++];
  Op op;
  op.kind = static_cast<OpKind>(k);
  op.sub = static_cast<int>(uniform_index(rng, 7));
  op.callee = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_callees)));
  op.global = static_cast<int>(uniform_index(rng, 4));
  op.operand_back = static_cast<int>(uniform_index(rng, 3));
  op.foldable = uniform01(rng) < 0.25;
  op.c = draw_const(rng);
  return op;
}

Op compare_op(Rng& rng) {
  Op op;
  op.kind = OpKind::kCmp;
  op.sub = static_cast<int>(uniform_index(rng, 5));
  op.c = draw_const(rng);
  return op;
}

// Successor lists with a fall-through chain so every block is reachable.
// Blocks listed in `cond` get a second successor, possibly a back edge.
std::vector<std::vector<int>> wire(Rng& rng, int n, const std::vector<bool>& cond) {
  std::vector<std::vector<int>> succ(static_cast<std::size_t>(n));
  for (int i = 0; i + 1 < n; ++i) {
    succ[static_cast<std::size_t>(i)].push_back(i + 1);
    if (!cond[static_cast<std::size_t>(i)]) continue;
    std::vector<int> cands;
    for (int j = 1; j < n; ++j) {
      if (j != i && j != i + 1) cands.push_back(j);
    }
    if (cands.empty()) cands.push_back(n - 1);
    succ[static_cast<std::size_t>(i)].push_back(cands[uniform_index(rng, cands.size())]);
  }
  return succ;
}

SourceFunction make_source(Rng& rng, const SynthConfig& cfg, int group) {
  SourceFunction f;
  const int n = cfg.min_blocks +
                static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.max_blocks - cfg.min_blocks + 1)));
  std::vector<bool> cond(static_cast<std::size_t>(n), false);
  std::vector<int> inner;
  for (int i = 0; i + 2 < n; ++i) inner.push_back(i);
  std::shuffle(inner.begin(), inner.end(), rng);
  const std::size_t n_cond = std::min<std::size_t>(inner.size(), 2 + uniform_index(rng, 3));
  for (std::size_t i = 0; i < n_cond; ++i) cond[static_cast<std::size_t>(inner[i])] = true;
  f.succ = wire(rng, n, cond);

  for (int c = 0; c < 3; ++c) {
    f.callees.push_back(std::string(kWords[uniform_index(rng, kWords.size())]) + "_" +
                        kWords[uniform_index(rng, kWords.size())]);
  }
  std::array<double, 7> mix{};
  for (double& m : mix) m = 0.1 + uniform01(rng);
  f.blocks.resize(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    auto& blk = f.blocks[static_cast<std::size_t>(b)];
    const std::size_t len = 1 + uniform_index(rng, 4);
    for (std::size_t i = 0; i < len; ++i) blk.ops.push_back(draw_op(rng, mix, 3));
    if (f.succ[static_cast<std::size_t>(b)].size() == 2) blk.ops.push_back(compare_op(rng));
  }
  f.name = "fn" + std::to_string(group) + "_" + kWords[uniform_index(rng, kWords.size())];
  return f;
}

// Same blocks, same out-degrees, different conditional targets.
SourceFunction make_twin(Rng& rng, const SourceFunction& base, int group) {
  SourceFunction t = base;
  const int n = static_cast<int>(base.blocks.size());
  std::vector<bool> cond(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) cond[static_cast<std::size_t>(i)] = base.succ[static_cast<std::size_t>(i)].size() == 2;
  for (int attempt = 0; attempt < 64 && t.succ == base.succ; ++attempt) t.succ = wire(rng, n, cond);
  t.name = "fn" + std::to_string(group) + base.name.substr(base.name.find('_'));
  return t;
}

struct Emitter {
  const Setting& s;
  Rng& rng;
  std::string word;
  std::string ptr;
  int align;
  bool clang;
  bool spill;
  bool fold;
  std::int64_t addr_shift;
  std::uint64_t pc;
  int next_reg;
  int next_spill;
  int insn = 0;

  std::string reg() { return "%" + std::to_string(next_reg++); }

  std::string constant(const Const& c) {
    std::int64_t v = c.value;
    switch (c.cls) {
      case ConstClass::kSmall:
        v = std::max<std::int64_t>(1, v + static_cast<std::int64_t>(uniform_index(rng, 5)) - 2);
        break;
      case ConstClass::kNegative:
        v = std::min<std::int64_t>(-1, v + static_cast<std::int64_t>(uniform_index(rng, 5)) - 2);
        break;
      case ConstClass::kAddress:
        v += addr_shift;
        break;
      case ConstClass::kEdge:
        v = 990 + static_cast<std::int64_t>(uniform_index(rng, 70));  // straddles 1024
        break;
    }
    return std::to_string(v);
  }

  std::string global(int g) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "@global_var_%llx",
                  static_cast<unsigned long long>(0x136b00 + addr_shift / 16 + 8 * g));
    return buf;
  }

  std::string tag() {
    pc += s.architecture == "x86" ? 2 + uniform_index(rng, 5) : 4;
    return ", !insn.addr !" + std::to_string(insn++);
  }
};

std::string hex_label(std::uint64_t pc) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "dec_label_pc_%llx", static_cast<unsigned long long>(pc));
  return buf;
}

std::string emit_function(const SourceFunction& src, const Setting& s, std::uint64_t seed) {
  Rng rng(seed);
  Emitter e{s,
            rng,
            s.architecture == "x86" ? "i32" : "i64",
            s.architecture == "x86" ? "i32*" : "i64*",
            s.architecture == "x86" ? 4 : 8,
            s.compiler == "clang",
            s.optimization == "O0",
            s.optimization == "O2" || s.optimization == "O3",
            0x1000 * static_cast<std::int64_t>(uniform_index(rng, 64)),
            0x1000 + 0x100 * uniform_index(rng, 0x400),
            static_cast<int>(uniform_index(rng, 4)),
            100 + static_cast<int>(uniform_index(rng, 800))};
  const std::string& W = e.word;
  const std::string& P = e.ptr;

  // Block layout, with the return block duplicated per extra predecessor at O3.
  std::vector<std::vector<int>> succ = src.succ;
  std::vector<int> origin(src.blocks.size());
  for (std::size_t i = 0; i < origin.size(); ++i) origin[i] = static_cast<int>(i);
  if (s.optimization == "O3") {
    const int ret = static_cast<int>(src.blocks.size()) - 1;
    bool first = true;
    for (std::size_t b = 0; b < origin.size(); ++b) {
      for (int& t : succ[b]) {
        if (t != ret) continue;
        if (first) {
          first = false;
          continue;
        }
        origin.push_back(ret);
        succ.push_back({});
        t = static_cast<int>(origin.size()) - 1;
      }
    }
  }
  const std::size_t n = origin.size();
  std::vector<std::vector<int>> preds(n);
  for (std::size_t b = 0; b < n; ++b)
    for (int t : succ[b]) preds[static_cast<std::size_t>(t)].push_back(static_cast<int>(b));

  // Lay out bodies first so labels can carry their block's address.
  std::vector<std::vector<std::string>> body(n);
  std::vector<std::uint64_t> label_pc(n);
  std::vector<std::string> spills;
  std::vector<std::string> values{"%arg1", "%arg2"};
  auto operand = [&](int back) {
    return values[values.size() - 1 - std::min<std::size_t>(static_cast<std::size_t>(back), values.size() - 1)];
  };
  std::vector<std::string> branch_cond(n);
  for (std::size_t b = 0; b < n; ++b) {
    label_pc[b] = e.pc;
    const auto& blk = src.blocks[static_cast<std::size_t>(origin[b])];
    auto& out = body[b];
    for (std::size_t i = 0; i < blk.ops.size(); ++i) {
      const Op& op = blk.ops[i];
      const bool terminal_cmp = succ[b].size() == 2 && i + 1 == blk.ops.size();
      if (e.fold && op.foldable && !terminal_cmp && blk.ops.size() > 1) continue;
      const std::string a = operand(op.operand_back);
      std::string line, r;
      switch (op.kind) {
        case OpKind::kArith: {
          r = e.reg();
          const bool flags = op.sub < 3 && !e.clang;
          line = r + " = " + arith_name(op.sub) + (flags ? " nsw " : " ") + W + " " + a + ", " +
                 e.constant(op.c);
          break;
        }
        case OpKind::kCmp:
          r = e.reg();
          line = r + " = icmp " + cmp_name(op.sub, e.clang) + " " + W + " " + a + ", " +
                 e.constant(op.c);
          break;
        case OpKind::kLoad:
          r = e.reg();
          line = r + " = load " + W + ", " + P + " " + e.global(op.global) + ", align " +
                 std::to_string(e.align);
          break;
        case OpKind::kStore:
          line = "store " + W + " " + a + ", " + P + " " + e.global(op.global) + ", align " +
                 std::to_string(e.align);
          break;
        case OpKind::kCall:
          r = e.reg();
          line = r + " = call " + W + " @" + src.callees[static_cast<std::size_t>(op.callee)] + "(" +
                 W + " " + a + ", " + W + " " + e.constant(op.c) + ")";
          break;
        case OpKind::kCast:
          r = e.reg();
          line = r + " = inttoptr " + W + " " + a + " to " + P;
          break;
        case OpKind::kSelect:
          r = e.reg();
          line = r + " = select i1 " + operand(op.operand_back + 1) + ", " + W + " " + a + ", " + W +
                 " " + e.constant(op.c);
          break;
      }
      out.push_back(line + e.tag());
      if (r.empty()) continue;
      if (op.kind == OpKind::kCall && s.architecture == "arm") {
        const std::string z = e.reg();
        out.push_back(z + " = and i64 " + r + ", 4294967295" + e.tag());
        r = z;
      }
      if (terminal_cmp) {
        branch_cond[b] = r;
        continue;
      }
      if (e.spill && op.kind != OpKind::kCmp && uniform01(rng) < 0.5) {
        const std::string slot = "%storemerge" + std::to_string(e.next_spill++) + ".reg2mem";
        spills.push_back(slot);
        out.push_back("store " + W + " " + r + ", " + P + " " + slot + e.tag());
        r = e.reg();
        out.push_back(r + " = load " + W + ", " + P + " " + slot + e.tag());
      }
      values.push_back(r);
    }
    e.pc += 0x10;
  }

  auto target = [&](int t) { return "label %" + hex_label(label_pc[static_cast<std::size_t>(t)]); };
  std::string text = "define " + W + " @" + src.name + "(" + W + " %arg1, " + W +
                     " %arg2) local_unnamed_addr {\n";
  for (const auto& slot : spills) text += "  " + slot + " = alloca " + W + "\n";
  for (std::size_t b = 0; b < n; ++b) {
    if (b > 0) {
      std::string label = hex_label(label_pc[b]) + ":";
      label.resize(std::max<std::size_t>(label.size() + 1, 50), ' ');
      std::string ps;
      for (int p : preds[b]) {
        if (!ps.empty()) ps += ", ";
        ps += p == 0 ? "%entry" : "%" + hex_label(label_pc[static_cast<std::size_t>(p)]);
      }
      text += "\n" + label + (ps.empty() ? "" : "; preds = " + ps) + "\n";
    }
    for (const auto& l : body[b]) text += "  " + l + "\n";
    const auto& sc = succ[b];
    std::string term;
    if (sc.empty()) {
      term = "ret " + W + " " + operand(0);
    } else if (sc.size() == 1) {
      term = "br " + target(sc[0]);
    } else {
      // The inverted compare swaps the branch targets.
      const int t0 = e.clang ? sc[1] : sc[0], t1 = e.clang ? sc[0] : sc[1];
      term = "br i1 " + branch_cond[b] + ", " + target(t0) + ", " + target(t1);
    }
    text += "  " + term + e.tag() + "\n";
  }
  text += "}\n";
  return text;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_groups < 1) throw ConfigError("synth n_groups must be >= 1");
  if (variants < 1 || variants > 12) throw ConfigError("synth variants must lie in [1, 12]");
  if (min_blocks < 2 || max_blocks < min_blocks) throw ConfigError("invalid synth block range");
  if (twin_fraction < 0 || twin_fraction > 1) throw ConfigError("twin_fraction must lie in [0, 1]");
  if (projects < 1) throw ConfigError("synth projects must be >= 1");
}

Setting variant_setting(int variant, int binary_index) {
  const std::string oa = kOpts[static_cast<std::size_t>(binary_index) % 3];
  const std::string ob = kOpts[static_cast<std::size_t>(binary_index + 1) % 3];
  static constexpr std::array<std::pair<const char*, int>, 6> kPlan{
      {{"gcc", 0}, {"gcc", 1}, {"clang", 1}, {"clang", 0}, {"gcc", 2}, {"clang", 2}}};
  const auto& [cc, opt] = kPlan[static_cast<std::size_t>(variant / 2) % kPlan.size()];
  Setting s;
  s.compiler = cc;
  s.version = s.compiler == "gcc" ? "9" : "11";
  s.optimization = opt == 0 ? "O0" : opt == 1 ? oa : ob;
  s.architecture = variant % 2 == 0 ? "x86" : "arm";
  return s;
}

SynthCorpus synth_corpus(const SynthConfig& config) {
  config.validate();
  const int twin_pairs =
      static_cast<int>(std::lround(config.twin_fraction * config.n_groups / 2.0));
  std::vector<SourceFunction> sources;
  for (int g = 0; g < config.n_groups; ++g) {
    Rng rng(derive_seed(config.seed, "synth-group", std::to_string(g)));
    if (g % 2 == 1 && g / 2 < twin_pairs) {
      sources.push_back(make_twin(rng, sources.back(), g));
    } else {
      sources.push_back(make_source(rng, config, g));
    }
  }

  // (binary id, variant) -> functions, in group order.
  std::map<std::pair<int, int>, std::vector<int>> files;
  auto binary_of = [&](int g) { return (g % config.projects) * 2 + (g / config.projects) % 2; };
  for (int g = 0; g < config.n_groups; ++g)
    for (int v = 0; v < config.variants; ++v) files[{binary_of(g), v}].push_back(g);

  SynthCorpus corpus;
  corpus.groups = static_cast<std::size_t>(config.n_groups);
  for (const auto& [key, groups] : files) {
    const auto [bin, v] = key;
    const Setting s = variant_setting(v, bin);
    SynthFile f;
    f.meta.project = "proj" + std::to_string(bin / 2);
    f.meta.binary = "bin" + std::to_string(bin % 2);
    f.meta.compiler = s.compiler;
    f.meta.compiler_version = s.version;
    f.meta.optimization = s.optimization;
    f.meta.architecture = s.architecture;
    f.relative_path = f.meta.project + "/" + s.compiler + "-" + s.version + "/" + s.architecture +
                      "/" + s.optimization + "/" + f.meta.binary + ".ll";
    f.text = "; ModuleID = '" + f.meta.binary + "'\nsource_filename = \"" + f.meta.binary + "\"\n";
    std::set<std::string> callees;
    for (int g : groups) {
      const auto& src = sources[static_cast<std::size_t>(g)];
      f.text += "\n" + emit_function(src, s, derive_seed(config.seed, "synth-variant",
                                                          std::to_string(g) + "/" + std::to_string(v)));
      f.functions.push_back(src.name);
      callees.insert(src.callees.begin(), src.callees.end());
      ++corpus.functions;
    }
    const std::string W = s.architecture == "x86" ? "i32" : "i64";
    for (const auto& c : callees) f.text += "\ndeclare " + W + " @" + c + "(" + W + ", " + W + ")\n";
    corpus.files.push_back(std::move(f));
  }
  return corpus;
}

nlohmann::ordered_json SynthCorpus::manifest() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& f : files) {
    j[f.relative_path] = {{"project", f.meta.project},
                          {"binary", f.meta.binary},
                          {"compiler", f.meta.compiler},
                          {"compiler_version", f.meta.compiler_version},
                          {"optimization", f.meta.optimization},
                          {"architecture", f.meta.architecture}};
  }
  return j;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& root) {
  for (const auto& f : corpus.files) {
    const auto path = root / f.relative_path;
    std::filesystem::create_directories(path.parent_path());
    text::write_file(path, f.text);
  }
  text::write_file(root / "manifest.json", corpus.manifest().dump(2) + "\n");
}

}  // namespace irbindiff::synth
