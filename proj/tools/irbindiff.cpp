#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "irbindiff/error.hpp"
#include "irbindiff/pipeline.hpp"

namespace pl = irbindiff::pipeline;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> ablate;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

pl::PipelineConfig resolve(const Options& o) {
  auto cfg = pl::PipelineConfig::load(o.config);
  for (const auto& a : o.ablate) cfg.ablate.enable(a);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Binary code similarity from decompiled LLVM IR"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::string> stages{"prepare", "pretrain", "embed-blocks", "train",
                                        "embed",   "eval",     "synth",        "run"};
  const std::vector<std::string> help{
      "Parse .ll files, normalize instructions, write function and block records",
      "Pretrain the instruction language model",
      "Embed every basic block with the pretrained language model",
      "Train the graph encoder with momentum contrast",
      "Embed every function with the trained graph encoder",
      "Run the retrieval evaluation and write a report",
      "Generate the synthetic corpus",
      "Run prepare through eval in order"};
  for (std::size_t i = 0; i < stages.size(); ++i) {
    auto* sub = app.add_subcommand(stages[i], help[i]);
    sub->add_option("--config,-c", opt.config, "key = value configuration file")->required();
    sub->add_option("--ablate", opt.ablate, "no_norm, no_plm and/or no_graph")->delimiter(',');
    sub->add_option("--seed", opt.seed, "override the root seed");
    sub->add_flag("--quiet,-q", opt.quiet, "suppress progress messages");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const auto cfg = resolve(opt);
  const pl::Logger log = [&](const std::string& msg) {
    if (!opt.quiet) std::cerr << msg << "\n";
  };
  const std::string stage = app.get_subcommands().front()->get_name();
  if (stage == "prepare") {
    std::cout << pl::run_prepare(cfg, log).to_json().dump(2) << "\n";
  } else if (stage == "pretrain") {
    pl::run_pretrain(cfg, log);
  } else if (stage == "embed-blocks") {
    pl::run_embed_blocks(cfg, log);
  } else if (stage == "train") {
    pl::run_train(cfg, log);
  } else if (stage == "embed") {
    pl::run_embed(cfg, log);
  } else if (stage == "eval") {
    std::cout << pl::run_eval(cfg, log).dump(2) << "\n";
  } else if (stage == "synth") {
    pl::run_synth(cfg, log);
  } else {
    pl::run_prepare(cfg, log);
    pl::run_pretrain(cfg, log);
    pl::run_embed_blocks(cfg, log);
    pl::run_train(cfg, log);
    pl::run_embed(cfg, log);
    std::cout << pl::run_eval(cfg, log).dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const irbindiff::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
