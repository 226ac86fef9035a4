#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "irbindiff/error.hpp"
#include "irbindiff/ir_corpus.hpp"
#include "irbindiff/normalize.hpp"
#include "irbindiff/retrieval.hpp"
#include "irbindiff/synth.hpp"
#include "irbindiff/text.hpp"

using namespace irbindiff;

namespace {

std::vector<ir::IRFunction> parse_all(const synth::SynthCorpus& corpus, std::size_t* unknown) {
  std::vector<ir::IRFunction> out;
  for (const auto& f : corpus.files) {
    ir::CfgDiagnostics diag;
    auto fns = ir::parse_module(f.text, ir::meta_from_path(f.relative_path), &diag);
    *unknown += diag.unknown_predecessors;
    for (auto& fn : fns) out.push_back(ir::simplify_function(fn));
  }
  return out;
}

}  // namespace

TEST_CASE("synthetic corpus shape") {
  synth::SynthConfig cfg;
  cfg.seed = 3;
  const auto corpus = synth::synth_corpus(cfg);
  CHECK(corpus.functions == 300);
  CHECK(corpus.groups == 50);
  std::size_t unknown = 0;
  const auto fns = parse_all(corpus, &unknown);
  CHECK(unknown == 0);
  REQUIRE(fns.size() == 300);

  std::map<std::string, std::vector<const ir::IRFunction*>> groups;
  std::set<std::string> compilers, opts, archs;
  for (const auto& f : fns) {
    CHECK(f.meta.complete());
    CHECK(f.blocks.size() >= 5);
    CHECK(f.cfg.nodes.size() == f.blocks.size());
    groups[f.meta.project + "/" + f.meta.binary + "/" + f.meta.source_function].push_back(&f);
    compilers.insert(f.meta.compiler);
    opts.insert(f.meta.optimization);
    archs.insert(f.meta.architecture);
  }
  CHECK(groups.size() == 50);
  CHECK(compilers.size() == 2);
  CHECK(opts.size() == 4);
  CHECK(archs.size() == 2);
  for (const auto& [k, members] : groups) {
    CHECK(members.size() == 6);
    std::set<std::string> keys;
    for (const auto* m : members) keys.insert(m->meta.key());
    CHECK(keys.size() == 6);
  }
  // Label 1 exactly within groups.
  for (std::size_t i = 0; i < fns.size(); i += 7)
    for (std::size_t j = 0; j < fns.size(); j += 5) {
      const bool same = fns[i].meta.source_function == fns[j].meta.source_function &&
                        fns[i].meta.project == fns[j].meta.project &&
                        fns[i].meta.binary == fns[j].meta.binary;
      CHECK(retrieval::label_pair(fns[i].meta, fns[j].meta) == int(same));
    }
  // Every standard task has query pairs.
  std::vector<ir::FunctionMeta> metas;
  for (const auto& f : fns) metas.push_back(f.meta);
  for (const auto& task : retrieval::EvalTask::all()) {
    CHECK(retrieval::task_queries(metas, task, 1).size() >= 100);
  }
  // Normalization sees address, edge and small constants.
  std::set<std::string> tokens;
  for (const auto& f : fns)
    for (const auto& b : f.blocks)
      for (const auto& ins : b.instructions)
        for (const auto& t : norm::process_instruction(ins.raw_text)) tokens.insert(t.text);
  CHECK(tokens.count("<Address>"));
  CHECK(tokens.count("<Positive>"));
  CHECK(tokens.count("<Negative>"));
  CHECK(tokens.count("<label>"));
  CHECK(tokens.count("<global>"));
  CHECK(tokens.count("reg2mem"));
}

TEST_CASE("twins share blocks and differ in wiring") {
  synth::SynthConfig cfg;
  cfg.n_groups = 4;
  cfg.variants = 1;
  cfg.twin_fraction = 1.0;
  cfg.seed = 8;
  std::size_t unknown = 0;
  const auto fns = parse_all(synth::synth_corpus(cfg), &unknown);
  std::map<std::string, const ir::IRFunction*> by_name;
  for (const auto& f : fns) by_name[f.meta.source_function.substr(0, f.meta.source_function.find('_'))] = &f;
  const auto* a = by_name.at("fn0");
  const auto* b = by_name.at("fn1");
  CHECK(a->blocks.size() == b->blocks.size());
  CHECK(a->meta.source_function.substr(3) == b->meta.source_function.substr(3));
  std::multiset<std::size_t> da, db;
  for (const auto& s : a->cfg.successors()) da.insert(s.size());
  for (const auto& s : b->cfg.successors()) db.insert(s.size());
  CHECK(da == db);
  CHECK(a->cfg.index_edges() != b->cfg.index_edges());
}

TEST_CASE("synthesis is deterministic and written with a manifest") {
  synth::SynthConfig cfg;
  cfg.n_groups = 6;
  cfg.seed = 1;
  const auto a = synth::synth_corpus(cfg);
  const auto b = synth::synth_corpus(cfg);
  REQUIRE(a.files.size() == b.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i) CHECK(a.files[i].text == b.files[i].text);
  cfg.seed = 2;
  CHECK(synth::synth_corpus(cfg).files[0].text != a.files[0].text);

  const auto root = std::filesystem::temp_directory_path() / "irbindiff_synth_test";
  std::filesystem::remove_all(root);
  synth::write_corpus(a, root);
  const auto manifest = ir::load_manifest(root / "manifest.json");
  CHECK(manifest.size() == a.files.size());
  const auto& first = a.files.front();
  CHECK(std::filesystem::exists(root / first.relative_path));
  CHECK(ir::apply_manifest(manifest, first.relative_path, {}).compiler == first.meta.compiler);
  std::filesystem::remove_all(root);

  cfg.variants = 13;
  CHECK_THROWS_AS(synth::synth_corpus(cfg), ConfigError);
}
