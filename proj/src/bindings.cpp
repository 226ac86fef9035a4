#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "irbindiff/error.hpp"
#include "irbindiff/ir_corpus.hpp"
#include "irbindiff/normalize.hpp"
#include "irbindiff/pipeline.hpp"
#include "irbindiff/retrieval.hpp"
#include "irbindiff/synth.hpp"

namespace py = pybind11;
using namespace irbindiff;

namespace {

pipeline::PipelineConfig resolve(const std::string& config_path, const std::string& ablate,
                                 std::optional<std::uint64_t> seed) {
  auto cfg = pipeline::PipelineConfig::load(config_path);
  cfg.ablate.enable(ablate);
  if (seed) cfg.seed = *seed;
  return cfg;
}

// Runs one stage; prepare and eval return their JSON summaries as text.
std::string run_stage(const std::string& stage, const std::string& config_path,
                      const std::string& ablate, std::optional<std::uint64_t> seed) {
  const auto cfg = resolve(config_path, ablate, seed);
  if (stage == "prepare") return pipeline::run_prepare(cfg).to_json().dump();
  if (stage == "pretrain") pipeline::run_pretrain(cfg);
  else if (stage == "embed-blocks") pipeline::run_embed_blocks(cfg);
  else if (stage == "train") pipeline::run_train(cfg);
  else if (stage == "embed") pipeline::run_embed(cfg);
  else if (stage == "eval") return pipeline::run_eval(cfg).dump();
  else if (stage == "synth") pipeline::run_synth(cfg);
  else throw ConfigError("unknown stage '" + stage + "'");
  return "{}";
}

std::vector<retrieval::QueryResult> as_results(const std::vector<std::size_t>& ranks) {
  std::vector<retrieval::QueryResult> out;
  for (auto r : ranks) {
    retrieval::QueryResult q;
    q.rank_of_gt = r;
    out.push_back(q);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Binary code similarity from decompiled LLVM IR";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InputError>(m, "InputError", base.ptr());

  m.def("tokenize", [](const std::string& s) { return norm::texts(norm::tokenize(s)); },
        py::arg("instruction"));
  m.def(
      "normalize_instruction",
      [](const std::string& s, bool apply_rules) {
        return norm::texts(norm::process_instruction(s, apply_rules));
      },
      py::arg("instruction"), py::arg("apply_rules") = true);

  m.def(
      "parse_module_json",
      [](const std::string& text) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& f : ir::parse_module(text, {})) {
          out.push_back(ir::function_record(ir::simplify_function(f)));
        }
        return out.dump();
      },
      py::arg("text"), "Functions of a .ll module as a JSON list of records.");

  m.def("cosine_similarity",
        [](const std::vector<double>& a, const std::vector<double>& b) {
          return retrieval::cosine_similarity(a, b);
        });
  m.def("auc", &retrieval::auc, py::arg("scores"), py::arg("labels"));
  m.def(
      "recall_at_k",
      [](const std::vector<std::size_t>& ranks, std::size_t k) {
        return retrieval::recall_at_k(as_results(ranks), k);
      },
      py::arg("ranks"), py::arg("k"));
  m.def(
      "mrr", [](const std::vector<std::size_t>& ranks) { return retrieval::mrr(as_results(ranks)); },
      py::arg("ranks"));

  m.def(
      "synth_corpus",
      [](const std::string& root, int groups, int variants, std::uint64_t seed) {
        synth::SynthConfig c;
        c.n_groups = groups;
        c.variants = variants;
        c.seed = seed;
        const auto corpus = synth::synth_corpus(c);
        synth::write_corpus(corpus, root);
        return corpus.functions;
      },
      py::arg("root"), py::arg("groups") = 50, py::arg("variants") = 6, py::arg("seed") = 0);

  m.def(
      "default_config", [] { return pipeline::PipelineConfig{}.to_string(); },
      "Default configuration as key = value text.");
  m.def(
      "normalize_config",
      [](const std::string& text) { return pipeline::PipelineConfig::parse(text).to_string(); },
      py::arg("text"));
  m.def("run_stage", &run_stage, py::arg("stage"), py::arg("config"), py::arg("ablate") = "",
        py::arg("seed") = py::none(), py::call_guard<py::gil_scoped_release>());
}
