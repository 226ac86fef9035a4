#include "irbindiff/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "irbindiff/error.hpp"
#include "irbindiff/ir_corpus.hpp"
#include "irbindiff/normalize.hpp"
#include "irbindiff/params.hpp"
#include "irbindiff/retrieval.hpp"
#include "irbindiff/rng.hpp"
#include "irbindiff/synth.hpp"
#include "irbindiff/text.hpp"

namespace irbindiff::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------- config

std::string Ablations::tag() const {
  std::vector<std::string> parts;
  if (no_norm) parts.push_back("no_norm");
  if (no_plm) parts.push_back("no_plm");
  if (no_graph) parts.push_back("no_graph");
  return text::join(parts, "+");
}

void Ablations::enable(const std::string& names) {
  for (auto part : text::split(names, ',')) {
    const auto name = text::trim(part);
    if (name.empty() || name == "none") continue;
    if (name == "no_norm") no_norm = true;
    else if (name == "no_plm") no_plm = true;
    else if (name == "no_graph") no_graph = true;
    else throw ConfigError("unknown ablation '" + std::string(name) + "'");
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": bad number '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": bad number '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <class T>
Field int_field(const char* key, T PipelineConfig::*member) {
  return {key, [member](const PipelineConfig& c) { return std::to_string(c.*member); },
          [key, member](PipelineConfig& c, const std::string& v) {
            c.*member = parse_number<T>(key, v);
          }};
}

#define IRB_NESTED_INT(KEY, OUTER, INNER)                                               \
  Field {                                                                               \
    KEY, [](const PipelineConfig& c) { return std::to_string(c.OUTER.INNER); },         \
        [](PipelineConfig& c, const std::string& v) {                                   \
          c.OUTER.INNER = parse_number<decltype(c.OUTER.INNER)>(KEY, v);                \
        }                                                                               \
  }
#define IRB_NESTED_DOUBLE(KEY, OUTER, INNER)                                                      \
  Field {                                                                                         \
    KEY, [](const PipelineConfig& c) { return fmt_double(c.OUTER.INNER); },                       \
        [](PipelineConfig& c, const std::string& v) { c.OUTER.INNER = parse_double(KEY, v); }     \
  }
#define IRB_NESTED_BOOL(KEY, OUTER, INNER)                                                        \
  Field {                                                                                         \
    KEY, [](const PipelineConfig& c) { return std::string(c.OUTER.INNER ? "true" : "false"); },   \
        [](PipelineConfig& c, const std::string& v) { c.OUTER.INNER = parse_bool(KEY, v); }       \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      {"corpus_dir", [](const PipelineConfig& c) { return c.corpus_dir.string(); },
       [](PipelineConfig& c, const std::string& v) { c.corpus_dir = v; }},
      {"work_dir", [](const PipelineConfig& c) { return c.work_dir.string(); },
       [](PipelineConfig& c, const std::string& v) { c.work_dir = v; }},
      {"manifest", [](const PipelineConfig& c) { return c.manifest.string(); },
       [](PipelineConfig& c, const std::string& v) { c.manifest = v; }},
      int_field("seed", &PipelineConfig::seed),
      int_field("min_blocks", &PipelineConfig::min_blocks),
      {"test_fraction", [](const PipelineConfig& c) { return fmt_double(c.test_fraction); },
       [](PipelineConfig& c, const std::string& v) { c.test_fraction = parse_double("test_fraction", v); }},

      IRB_NESTED_INT("lm.layers", lm, layers),
      IRB_NESTED_INT("lm.hidden", lm, hidden),
      IRB_NESTED_INT("lm.heads", lm, heads),
      IRB_NESTED_INT("lm.max_position", lm, max_position),
      IRB_NESTED_DOUBLE("lm.lr", lm, lr),
      IRB_NESTED_INT("lm.batch_size", lm, batch_size),
      IRB_NESTED_INT("lm.epochs", lm, epochs),
      IRB_NESTED_INT("lm.block_max_len", lm, block_max_len),
      {"lm.pooling",
       [](const PipelineConfig& c) {
         return std::string(c.lm.pooling == lm::Pooling::kCls ? "cls" : "mean");
       },
       [](PipelineConfig& c, const std::string& v) {
         if (v == "cls") c.lm.pooling = lm::Pooling::kCls;
         else if (v == "mean") c.lm.pooling = lm::Pooling::kMean;
         else throw ConfigError("lm.pooling: expected cls or mean, got '" + v + "'");
       }},
      IRB_NESTED_INT("lm.walks_per_node", corpus, walks_per_node),
      IRB_NESTED_INT("lm.max_len", corpus, max_len),
      IRB_NESTED_DOUBLE("lm.mask_rate", corpus, masking.select_rate),
      int_field("lm.max_examples", &PipelineConfig::max_pretrain_examples),

      IRB_NESTED_INT("ggnn.steps", ggnn, steps),
      IRB_NESTED_INT("ggnn.node_dim", ggnn, node_dim),
      IRB_NESTED_INT("ggnn.out_dim", ggnn, out_dim),
      IRB_NESTED_DOUBLE("ggnn.lr", ggnn, lr),
      IRB_NESTED_DOUBLE("ggnn.weight_decay", ggnn, weight_decay),
      IRB_NESTED_INT("ggnn.batch_size", ggnn, batch_size),
      IRB_NESTED_INT("ggnn.epochs", ggnn, epochs),
      IRB_NESTED_DOUBLE("ggnn.momentum", ggnn, momentum),
      IRB_NESTED_INT("ggnn.queue_capacity", ggnn, queue_capacity),
      IRB_NESTED_DOUBLE("ggnn.temperature", ggnn, temperature),
      IRB_NESTED_BOOL("ggnn.project_input", ggnn, project_input),

      IRB_NESTED_BOOL("ablate.no_norm", ablate, no_norm),
      IRB_NESTED_BOOL("ablate.no_plm", ablate, no_plm),
      IRB_NESTED_BOOL("ablate.no_graph", ablate, no_graph),

      {"eval.tasks", [](const PipelineConfig& c) { return text::join(c.tasks, ","); },
       [](PipelineConfig& c, const std::string& v) {
         c.tasks.clear();
         for (auto t : text::split(v, ',')) {
           if (!text::trim(t).empty()) c.tasks.emplace_back(text::trim(t));
         }
       }},
      int_field("eval.pool_size", &PipelineConfig::pool_size),
      int_field("eval.n_pos", &PipelineConfig::eval_pos),
      int_field("eval.n_neg", &PipelineConfig::eval_neg),

      int_field("synth.groups", &PipelineConfig::synth_groups),
      int_field("synth.variants", &PipelineConfig::synth_variants),
      {"synth.twin_fraction",
       [](const PipelineConfig& c) { return fmt_double(c.synth_twin_fraction); },
       [](PipelineConfig& c, const std::string& v) {
         c.synth_twin_fraction = parse_double("synth.twin_fraction", v);
       }},
  };
  return f;
}

#undef IRB_NESTED_INT
#undef IRB_NESTED_DOUBLE
#undef IRB_NESTED_BOOL

}  // namespace

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig c;
  std::size_t line_no = 0;
  for (auto raw : text::split_lines(text)) {
    ++line_no;
    auto line = raw.substr(0, raw.find('#'));
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(text::trim(line.substr(0, eq)));
    const std::string value(text::trim(line.substr(eq + 1)));
    const auto& fs = fields();
    auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return key == f.key; });
    if (it == fs.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->set(c, value);
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse(text::read_file(path));
}

std::string PipelineConfig::to_string() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

void PipelineConfig::validate() const {
  if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("test_fraction must lie in [0, 1)");
  if (min_blocks < 1) throw ConfigError("min_blocks must be >= 1");
  if (pool_size < 2) throw ConfigError("eval.pool_size must be >= 2");
  for (const auto& t : tasks) retrieval::EvalTask::parse(t);
  if (lm.hidden < 1 || lm.layers < 0 || lm.heads < 1 || lm.hidden % lm.heads != 0) {
    throw ConfigError("lm.hidden must be a positive multiple of lm.heads");
  }
  if (corpus.max_len < 3 || corpus.walks_per_node < 1) throw ConfigError("invalid lm corpus settings");
  auto g = ggnn;
  g.input_dim = lm.hidden;
  g.use_graph = !ablate.no_graph;
  g.validate();
}

Layout Layout::of(const PipelineConfig& cfg) {
  const auto& a = cfg.ablate;
  auto dir = [&](const char* stage, bool norm, bool plm, bool graph) {
    std::vector<std::string> parts;
    if (norm && a.no_norm) parts.push_back("no_norm");
    if (plm && a.no_plm) parts.push_back("no_plm");
    if (graph && a.no_graph) parts.push_back("no_graph");
    std::string name = stage;
    if (!parts.empty()) name += "." + text::join(parts, "+");
    return cfg.work_dir / name;
  };
  Layout l;
  l.prepare = dir("prepare", true, false, false);
  l.pretrain = dir("pretrain", true, false, false);
  l.blocks = dir("blocks", true, true, false);
  l.train = dir("train", true, true, true);
  l.embed = dir("embed", true, true, true);
  l.eval = dir("eval", true, true, true);
  return l;
}

nlohmann::ordered_json PrepareStats::to_json() const {
  return {{"files", files},
          {"failed_files", failed_files},
          {"functions", functions},
          {"filtered_functions", filtered_functions},
          {"kept_functions", kept_functions},
          {"blocks", blocks},
          {"instructions", instructions},
          {"unknown_predecessors", unknown_predecessors},
          {"vocab_size", vocab_size},
          {"train_groups", train_groups},
          {"test_groups", test_groups},
          {"diagnostics", diagnostics}};
}

// ---------------------------------------------------------------- helpers

namespace {

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

void require(const fs::path& path, const char* stage) {
  if (!fs::exists(path)) {
    throw StageError("missing artifact " + path.string() + " (run `" + stage + "` first)");
  }
}

void write_json(const fs::path& path, const ordered_json& j) {
  text::write_file(path, j.dump(2) + "\n");
}

void write_resolved(const fs::path& dir, const PipelineConfig& cfg) {
  text::write_file(dir / "config.txt", cfg.to_string());
}

std::string source_id(const ir::FunctionMeta& m) {
  return m.project + "/" + m.binary + "/" + m.source_function;
}

struct Prepared {
  std::vector<ir::IRFunction> functions;
  std::map<std::string, std::vector<sampling::TokenIds>> block_ids;  // func_key -> flat per block
  std::map<std::string, sampling::BlockTokens> instr_ids;
  std::set<std::string> test_sources;
  int vocab_size = 0;

  bool is_test(const ir::IRFunction& f) const { return test_sources.count(source_id(f.meta)) > 0; }
};

Prepared load_prepared(const Layout& layout) {
  for (const char* f : {"functions.jsonl", "blocks.jsonl", "vocab.json", "split.json"}) {
    require(layout.prepare / f, "prepare");
  }
  Prepared p;
  p.functions = load_functions(layout.prepare);
  for (const auto& r : text::read_jsonl(layout.prepare / "blocks.jsonl")) {
    const auto key = r.at("func_key").get<std::string>();
    sampling::TokenIds flat;
    std::vector<sampling::TokenIds> per_instr;
    for (const auto& ins : r.at("token_ids")) {
      per_instr.push_back(ins.get<sampling::TokenIds>());
      flat.insert(flat.end(), per_instr.back().begin(), per_instr.back().end());
    }
    p.block_ids[key].push_back(std::move(flat));
    p.instr_ids[key].push_back(std::move(per_instr));
  }
  p.vocab_size = norm::Vocabulary::from_json(json::parse(text::read_file(layout.prepare / "vocab.json"))).size();
  const auto split = json::parse(text::read_file(layout.prepare / "split.json"));
  for (const auto& s : split.at("test")) p.test_sources.insert(s.get<std::string>());
  for (const auto& f : p.functions) {
    const auto it = p.block_ids.find(f.meta.key());
    if (it == p.block_ids.end() || it->second.size() != f.blocks.size()) {
      throw StageError("blocks.jsonl does not match functions.jsonl for " + f.meta.key());
    }
  }
  return p;
}

lm::LMConfig resolved_lm(const PipelineConfig& cfg, int vocab_size) {
  auto lc = cfg.lm;
  lc.vocab_size = vocab_size;
  lc.max_position = std::max<int>(lc.max_position,
                                  static_cast<int>(std::max(cfg.corpus.max_len, lc.block_max_len)));
  return lc;
}

gnn::GGNNConfig resolved_ggnn(const PipelineConfig& cfg) {
  auto g = cfg.ggnn;
  g.input_dim = cfg.lm.hidden;
  g.use_graph = !cfg.ablate.no_graph;
  return g;
}

std::map<std::string, std::vector<std::vector<double>>> load_block_embeddings(const fs::path& path) {
  std::map<std::string, std::vector<std::vector<double>>> out;
  for (const auto& r : text::read_jsonl(path)) {
    out[r.at("func_key").get<std::string>()].push_back(r.at("vector").get<std::vector<double>>());
  }
  return out;
}

}  // namespace

std::vector<ir::IRFunction> load_functions(const fs::path& prepare_dir) {
  require(prepare_dir / "functions.jsonl", "prepare");
  std::vector<ir::IRFunction> out;
  for (const auto& r : text::read_jsonl(prepare_dir / "functions.jsonl")) {
    out.push_back(ir::function_from_record(r));
  }
  return out;
}

std::vector<gnn::FunctionEmbedding> load_embeddings(const fs::path& path) {
  require(path, "embed");
  std::vector<gnn::FunctionEmbedding> out;
  for (const auto& r : text::read_jsonl(path)) {
    gnn::FunctionEmbedding e;
    r.at("meta").get_to(e.meta);
    e.vector = r.at("vector").get<std::vector<double>>();
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------- stages

PrepareStats run_prepare(const PipelineConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto layout = Layout::of(cfg);
  PrepareStats stats;
  std::vector<fs::path> inputs;
  if (fs::is_directory(cfg.corpus_dir)) {
    for (const auto& e : fs::recursive_directory_iterator(cfg.corpus_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".ll") inputs.push_back(e.path());
    }
  }
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw InputError("no inputs: no .ll files under " + cfg.corpus_dir.string());

  ir::MetaManifest manifest;
  if (!cfg.manifest.empty()) {
    manifest = ir::load_manifest(cfg.manifest);
  } else if (fs::exists(cfg.corpus_dir / "manifest.json")) {
    manifest = ir::load_manifest(cfg.corpus_dir / "manifest.json");
  }

  std::vector<ir::IRFunction> all;
  std::set<std::string> keys;
  for (const auto& path : inputs) {
    ++stats.files;
    const std::string rel = fs::relative(path, cfg.corpus_dir).generic_string();
    try {
      const auto meta = ir::apply_manifest(manifest, rel, ir::meta_from_path(rel));
      ir::CfgDiagnostics diag;
      auto fns = ir::parse_module(text::read_file(path), meta, &diag);
      stats.unknown_predecessors += diag.unknown_predecessors;
      for (const auto& m : diag.messages) stats.diagnostics.push_back(rel + ": " + m);
      for (auto& f : fns) {
        if (!keys.insert(f.meta.key()).second) {
          stats.diagnostics.push_back(rel + ": duplicate function " + f.meta.key() + " skipped");
          continue;
        }
        all.push_back(ir::simplify_function(f));
      }
    } catch (const InputError& e) {
      ++stats.failed_files;
      stats.diagnostics.push_back(rel + ": " + e.what());
    }
  }
  if (stats.failed_files == stats.files) {
    throw InputError("all " + std::to_string(stats.files) + " inputs failed to parse");
  }
  stats.functions = all.size();
  const auto kept = ir::filter_small_functions(all, cfg.min_blocks);
  stats.kept_functions = kept.size();
  stats.filtered_functions = stats.functions - stats.kept_functions;

  // Group-level split so no source function appears on both sides.
  std::vector<std::string> sources;
  for (const auto& f : kept) sources.push_back(source_id(f.meta));
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
  Rng rng(derive_seed(cfg.seed, "split"));
  std::shuffle(sources.begin(), sources.end(), rng);
  const auto n_test = static_cast<std::size_t>(
      std::lround(cfg.test_fraction * static_cast<double>(sources.size())));
  std::set<std::string> test(sources.begin(), sources.begin() + static_cast<long>(n_test));
  std::vector<std::string> train_list(sources.begin() + static_cast<long>(n_test), sources.end());
  std::sort(train_list.begin(), train_list.end());
  stats.test_groups = test.size();
  stats.train_groups = train_list.size();

  // Tokenize once; the vocabulary comes from training functions only.
  std::vector<std::vector<std::vector<norm::TokenSequence>>> tokens(kept.size());
  std::vector<norm::TokenSequence> vocab_corpus;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const bool train = !test.count(source_id(kept[i].meta));
    for (const auto& b : kept[i].blocks) {
      tokens[i].emplace_back();
      ++stats.blocks;
      for (const auto& ins : b.instructions) {
        ++stats.instructions;
        tokens[i].back().push_back(norm::process_instruction(ins.raw_text, !cfg.ablate.no_norm));
        if (train || test.size() == sources.size()) vocab_corpus.push_back(tokens[i].back().back());
      }
    }
  }
  const auto vocab = norm::build_vocabulary(vocab_corpus);
  stats.vocab_size = static_cast<std::size_t>(vocab.size());

  std::vector<json> fn_records, block_records;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    fn_records.push_back(ir::function_record(kept[i]));
    for (std::size_t b = 0; b < kept[i].blocks.size(); ++b) {
      json ids = json::array();
      for (const auto& seq : tokens[i][b]) ids.push_back(norm::encode(seq, vocab));
      block_records.push_back({{"func_key", kept[i].meta.key()},
                               {"block_label", kept[i].blocks[b].label},
                               {"token_ids", ids}});
    }
  }
  fs::create_directories(layout.prepare);
  text::write_jsonl(layout.prepare / "functions.jsonl", fn_records);
  text::write_jsonl(layout.prepare / "blocks.jsonl", block_records);
  text::write_file(layout.prepare / "vocab.json", vocab.to_json().dump() + "\n");
  write_json(layout.prepare / "split.json",
             {{"seed", cfg.seed}, {"train", train_list},
              {"test", std::vector<std::string>(test.begin(), test.end())}});
  write_json(layout.prepare / "stats.json", stats.to_json());
  write_resolved(layout.prepare, cfg);
  say(log, "prepare: " + std::to_string(stats.kept_functions) + " functions kept of " +
               std::to_string(stats.functions) + ", " + std::to_string(stats.blocks) + " blocks, " +
               std::to_string(stats.instructions) + " instructions, vocab " +
               std::to_string(stats.vocab_size));
  return stats;
}

lm::PretrainLog run_pretrain(const PipelineConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto layout = Layout::of(cfg);
  const auto prep = load_prepared(layout);
  if (cfg.ablate.no_plm) {
    say(log, "pretrain: skipped (no_plm uses hashed block embeddings)");
    return {};
  }
  std::vector<sampling::FunctionTokens> fns;
  for (const auto& f : prep.functions) {
    if (prep.is_test(f)) continue;
    fns.push_back({f, prep.instr_ids.at(f.meta.key())});
  }
  if (fns.empty()) throw StageError("no training functions to pretrain on");
  sampling::NspDiagnostics diag;
  auto corpus = sampling::build_pretrain_corpus(fns, prep.vocab_size, cfg.corpus,
                                                derive_seed(cfg.seed, "pretrain-corpus"), &diag);
  if (cfg.max_pretrain_examples > 0 && corpus.size() > cfg.max_pretrain_examples) {
    Rng rng(derive_seed(cfg.seed, "pretrain-cap"));
    std::shuffle(corpus.begin(), corpus.end(), rng);
    corpus.resize(cfg.max_pretrain_examples);
  }
  fs::create_directories(layout.pretrain);
  std::vector<json> records;
  for (const auto& ex : corpus) records.push_back(sampling::example_record(ex));
  text::write_jsonl(layout.pretrain / "corpus.jsonl", records);
  write_json(layout.pretrain / "corpus_manifest.json",
             {{"global_seed", cfg.seed},
              {"walks_per_node", cfg.corpus.walks_per_node},
              {"max_len", cfg.corpus.max_len},
              {"examples", corpus.size()},
              {"skipped_pairs", diag.skipped}});

  lm::LanguageModel model(resolved_lm(cfg, prep.vocab_size), derive_seed(cfg.seed, "lm-init"));
  say(log, "pretrain: " + std::to_string(corpus.size()) + " examples, " +
               std::to_string(model.params().scalar_count()) + " parameters");
  const auto result = lm::pretrain(model, corpus, derive_seed(cfg.seed, "lm-train"),
                                   [&](int epoch, double loss) {
                                     say(log, "pretrain: epoch " + std::to_string(epoch) +
                                                  " loss " + fmt_double(loss));
                                   });
  std::vector<json> epochs;
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    epochs.push_back({{"epoch", e},
                      {"loss", result.epoch_loss[e]},
                      {"mlm", result.epoch_mlm[e]},
                      {"nsp", result.epoch_nsp[e]}});
  }
  text::write_jsonl(layout.pretrain / "log.jsonl", epochs);
  nn::save_checkpoint(model.params(), layout.pretrain / "lm");
  write_resolved(layout.pretrain, cfg);
  return result;
}

void run_embed_blocks(const PipelineConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto layout = Layout::of(cfg);
  const auto prep = load_prepared(layout);
  std::vector<json> records;
  lm::EmbedDiagnostics diag;
  if (cfg.ablate.no_plm) {
    const auto seed = derive_seed(cfg.seed, "hashed-blocks");
    for (const auto& f : prep.functions) {
      const auto& blocks = prep.block_ids.at(f.meta.key());
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        records.push_back({{"func_key", f.meta.key()},
                           {"block_label", f.blocks[b].label},
                           {"vector", lm::hashed_block_embedding(blocks[b], cfg.lm.hidden, seed)}});
      }
    }
  } else {
    require(layout.pretrain / "lm.json", "pretrain");
    lm::LanguageModel model(resolved_lm(cfg, prep.vocab_size), 0);
    nn::load_checkpoint(model.params(), layout.pretrain / "lm");
    std::vector<sampling::TokenIds> all;
    for (const auto& f : prep.functions) {
      const auto& blocks = prep.block_ids.at(f.meta.key());
      all.insert(all.end(), blocks.begin(), blocks.end());
    }
    const auto vectors = lm::embed_blocks(model, all, &diag);
    std::size_t k = 0;
    for (const auto& f : prep.functions) {
      for (const auto& b : f.blocks) {
        records.push_back(
            {{"func_key", f.meta.key()}, {"block_label", b.label}, {"vector", vectors[k++]}});
      }
    }
  }
  fs::create_directories(layout.blocks);
  text::write_jsonl(layout.blocks / "block_embeddings.jsonl", records);
  write_resolved(layout.blocks, cfg);
  say(log, "embed-blocks: " + std::to_string(records.size()) + " blocks, " +
               std::to_string(diag.empty_blocks) + " empty");
}

namespace {

struct GraphData {
  std::vector<ir::IRFunction> functions;
  std::vector<gnn::GraphInput> graphs;
  std::vector<bool> test;
};

GraphData load_graphs(const PipelineConfig& cfg, const Layout& layout) {
  require(layout.blocks / "block_embeddings.jsonl", "embed-blocks");
  const auto prep = load_prepared(layout);
  const auto emb = load_block_embeddings(layout.blocks / "block_embeddings.jsonl");
  GraphData d;
  for (const auto& f : prep.functions) {
    const auto it = emb.find(f.meta.key());
    if (it == emb.end()) throw StageError("no block embeddings for " + f.meta.key());
    d.graphs.push_back(gnn::make_graph_input(f.cfg, it->second));
    d.test.push_back(prep.is_test(f));
    d.functions.push_back(f);
  }
  if (!d.graphs.empty() && d.graphs.front().features.cols() != static_cast<std::size_t>(cfg.lm.hidden)) {
    throw StageError("block embeddings are " + std::to_string(d.graphs.front().features.cols()) +
                     "-dimensional, config says lm.hidden = " + std::to_string(cfg.lm.hidden));
  }
  return d;
}

}  // namespace

gnn::ContrastiveLog run_train(const PipelineConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto layout = Layout::of(cfg);
  const auto d = load_graphs(cfg, layout);
  std::vector<gnn::TrainGraph> data;
  std::map<std::string, long> groups;
  for (std::size_t i = 0; i < d.graphs.size(); ++i) {
    if (d.test[i]) continue;
    const auto g = groups.emplace(source_id(d.functions[i].meta), static_cast<long>(groups.size()));
    data.push_back({d.graphs[i], g.first->second});
  }
  gnn::MoCoState state(resolved_ggnn(cfg), derive_seed(cfg.seed, "ggnn-init"));
  say(log, "train: " + std::to_string(data.size()) + " functions in " +
               std::to_string(groups.size()) + " groups, " +
               std::to_string(gnn::positive_pairs(data).size()) + " positive pairs per epoch");
  std::vector<json> steps;
  const auto result = gnn::train_contrastive(
      state, data, derive_seed(cfg.seed, "ggnn-train"), [&](const gnn::StepLog& s) {
        steps.push_back({{"step", s.step},
                         {"epoch", s.epoch},
                         {"loss", s.loss},
                         {"queue_fill", s.queue_fill},
                         {"warm", s.warm}});
      });
  json epochs = json::array();
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    epochs.push_back(result.epoch_loss[e] ? json(*result.epoch_loss[e]) : json(nullptr));
    say(log, "train: epoch " + std::to_string(e) + " loss " +
                 (result.epoch_loss[e] ? fmt_double(*result.epoch_loss[e]) : "(warm-up)"));
  }
  fs::create_directories(layout.train);
  text::write_jsonl(layout.train / "train_log.jsonl", steps);
  write_json(layout.train / "epochs.json", {{"epoch_loss", epochs}});
  nn::save_checkpoint(state.query.params(), layout.train / "ggnn");
  write_resolved(layout.train, cfg);
  return result;
}

void run_embed(const PipelineConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto layout = Layout::of(cfg);
  require(layout.train / "ggnn.json", "train");
  const auto d = load_graphs(cfg, layout);
  gnn::GraphEncoder encoder(resolved_ggnn(cfg), 0);
  nn::load_checkpoint(encoder.params(), layout.train / "ggnn");
  std::vector<json> records;
  for (std::size_t i = 0; i < d.graphs.size(); ++i) {
    records.push_back({{"func_key", d.functions[i].meta.key()},
                       {"meta", d.functions[i].meta},
                       {"split", d.test[i] ? "test" : "train"},
                       {"vector", encoder.encode_one(d.graphs[i])}});
  }
  fs::create_directories(layout.embed);
  text::write_jsonl(layout.embed / "embeddings.jsonl", records);
  write_resolved(layout.embed, cfg);
  say(log, "embed: " + std::to_string(records.size()) + " function embeddings");
}

nlohmann::ordered_json run_eval(const PipelineConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto layout = Layout::of(cfg);
  const auto path = layout.embed / "embeddings.jsonl";
  require(path, "embed");
  std::vector<gnn::FunctionEmbedding> test, extra;
  for (const auto& r : text::read_jsonl(path)) {
    gnn::FunctionEmbedding e;
    r.at("meta").get_to(e.meta);
    e.vector = r.at("vector").get<std::vector<double>>();
    (r.value("split", "test") == "test" ? test : extra).push_back(std::move(e));
  }
  if (test.empty()) throw StageError("no test-split embeddings in " + path.string());
  retrieval::EvalOptions opt;
  opt.pool_size = cfg.pool_size;
  opt.n_pos = cfg.eval_pos;
  opt.n_neg = cfg.eval_neg;
  opt.allow_short = true;
  opt.seed = derive_seed(cfg.seed, "eval");
  std::vector<retrieval::TaskReport> reports;
  for (const auto& name : cfg.tasks) {
    reports.push_back(retrieval::evaluate_task(test, extra, retrieval::EvalTask::parse(name), opt));
    const auto& r = reports.back();
    say(log, "eval: " + name + " queries " + std::to_string(r.n_queries) + " recall@1 " +
                 fmt_double(r.recall_1) + " mrr " + fmt_double(r.mrr) + " auc " + fmt_double(r.auc));
  }
  ordered_json report;
  report["ablations"] = cfg.ablate.tag();
  report["seed"] = cfg.seed;
  report["test_functions"] = test.size();
  report["tasks"] = retrieval::report_json(reports);
  fs::create_directories(layout.eval);
  write_json(layout.eval / "report.json", report);
  write_resolved(layout.eval, cfg);
  return report;
}

void run_synth(const PipelineConfig& cfg, const Logger& log) {
  synth::SynthConfig sc;
  sc.n_groups = cfg.synth_groups;
  sc.variants = cfg.synth_variants;
  sc.twin_fraction = cfg.synth_twin_fraction;
  sc.seed = derive_seed(cfg.seed, "synth");
  const auto corpus = synth::synth_corpus(sc);
  synth::write_corpus(corpus, cfg.corpus_dir);
  text::write_file(cfg.corpus_dir / "config.txt", cfg.to_string());
  say(log, "synth: " + std::to_string(corpus.functions) + " functions in " +
               std::to_string(corpus.groups) + " groups, " + std::to_string(corpus.files.size()) +
               " files under " + cfg.corpus_dir.string());
}

}  // namespace irbindiff::pipeline
