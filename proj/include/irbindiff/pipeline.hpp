#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "irbindiff/ggnn_moco.hpp"
#include "irbindiff/lm.hpp"
#include "irbindiff/sampling.hpp"

namespace irbindiff::pipeline {

namespace fs = std::filesystem;

struct Ablations {
  bool no_norm = false;
  bool no_plm = false;
  bool no_graph = false;

  bool any() const { return no_norm || no_plm || no_graph; }
  // "no_norm+no_graph", or empty.
  std::string tag() const;
  // Accepts a comma-separated list of ablation names.
  void enable(const std::string& names);
  bool operator==(const Ablations&) const = default;
};

struct PipelineConfig {
  fs::path corpus_dir = "corpus";
  fs::path work_dir = "work";
  fs::path manifest;  // defaults to <corpus_dir>/manifest.json when present
  std::uint64_t seed = 0;
  std::size_t min_blocks = 5;
  double test_fraction = 0.3;

  lm::LMConfig lm;
  sampling::CorpusConfig corpus;
  std::size_t max_pretrain_examples = 0;  // 0 keeps every example

  gnn::GGNNConfig ggnn;
  Ablations ablate;

  std::vector<std::string> tasks{"XC", "XO", "XA", "XC+XO", "XO+XA", "XC+XA", "XC+XO+XA"};
  std::size_t pool_size = 101;
  std::size_t eval_pos = 10000;
  std::size_t eval_neg = 10000;

  int synth_groups = 50;
  int synth_variants = 6;
  double synth_twin_fraction = 0.5;

  // key = value lines; '#' starts a comment. Unknown keys are errors.
  static PipelineConfig parse(const std::string& text);
  static PipelineConfig load(const fs::path& path);
  std::string to_string() const;
  void validate() const;
};

// Where each stage keeps its artifacts. Stages downstream of an ablation
// get their own directory so the baseline is never overwritten.
struct Layout {
  fs::path prepare, pretrain, blocks, train, embed, eval;
  static Layout of(const PipelineConfig& cfg);
};

struct PrepareStats {
  std::size_t files = 0;
  std::size_t failed_files = 0;
  std::size_t functions = 0;
  std::size_t filtered_functions = 0;
  std::size_t kept_functions = 0;
  std::size_t blocks = 0;
  std::size_t instructions = 0;
  std::size_t unknown_predecessors = 0;
  std::size_t vocab_size = 0;
  std::size_t train_groups = 0;
  std::size_t test_groups = 0;
  std::vector<std::string> diagnostics;

  nlohmann::ordered_json to_json() const;
};

using Logger = std::function<void(const std::string&)>;

PrepareStats run_prepare(const PipelineConfig& cfg, const Logger& log = {});
lm::PretrainLog run_pretrain(const PipelineConfig& cfg, const Logger& log = {});
void run_embed_blocks(const PipelineConfig& cfg, const Logger& log = {});
gnn::ContrastiveLog run_train(const PipelineConfig& cfg, const Logger& log = {});
void run_embed(const PipelineConfig& cfg, const Logger& log = {});
nlohmann::ordered_json run_eval(const PipelineConfig& cfg, const Logger& log = {});
void run_synth(const PipelineConfig& cfg, const Logger& log = {});

// Artifact readers shared with tests and bindings.
std::vector<ir::IRFunction> load_functions(const fs::path& prepare_dir);
std::vector<gnn::FunctionEmbedding> load_embeddings(const fs::path& path);

}  // namespace irbindiff::pipeline
