#include <doctest.h>

#include <filesystem>

#include "irbindiff/error.hpp"
#include "irbindiff/pipeline.hpp"
#include "irbindiff/text.hpp"

using namespace irbindiff;
using namespace irbindiff::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("irbindiff_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

PipelineConfig tiny(const fs::path& root) {
  PipelineConfig c;
  c.corpus_dir = root / "corpus";
  c.work_dir = root / "work";
  c.seed = 5;
  c.synth_groups = 12;
  c.lm.layers = 1;
  c.lm.hidden = 16;
  c.lm.heads = 2;
  c.lm.epochs = 1;
  c.lm.batch_size = 32;
  c.lm.lr = 1e-3;
  c.lm.block_max_len = 48;
  c.corpus.walks_per_node = 1;
  c.corpus.max_len = 32;
  c.max_pretrain_examples = 200;
  c.ggnn.steps = 2;
  c.ggnn.node_dim = 16;
  c.ggnn.out_dim = 8;
  c.ggnn.queue_capacity = 16;
  c.ggnn.epochs = 2;
  c.ggnn.batch_size = 8;
  c.ggnn.lr = 1e-3;
  c.pool_size = 20;
  c.eval_pos = c.eval_neg = 30;
  c.tasks = {"XA", "XO"};
  return c;
}

}  // namespace

TEST_CASE("config round trip") {
  PipelineConfig c;
  c.seed = 42;
  c.lm.lr = 0.1 + 0.2;
  c.ggnn.temperature = 1.0 / 3.0;
  c.ablate.no_graph = true;
  c.tasks = {"XA", "XC+XO"};
  c.corpus_dir = "/data/ir corpus";
  const auto text = c.to_string();
  const auto back = PipelineConfig::parse(text);
  CHECK(back.to_string() == text);
  CHECK(back.lm.lr == c.lm.lr);
  CHECK(back.ggnn.temperature == c.ggnn.temperature);
  CHECK(back.ablate == c.ablate);
  CHECK(back.tasks == c.tasks);
  CHECK(back.corpus_dir == c.corpus_dir);

  const auto parsed = PipelineConfig::parse("# comment\n seed = 7  # trailing\n\nlm.pooling = mean\n");
  CHECK(parsed.seed == 7);
  CHECK(parsed.lm.pooling == lm::Pooling::kMean);
  CHECK_THROWS_AS(PipelineConfig::parse("nope = 1\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::parse("seed 1\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::parse("seed = x\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::parse("ablate.no_norm = maybe\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::load("/nonexistent/cfg"), ConfigError);

  PipelineConfig bad;
  bad.tasks = {"XQ"};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ablations and layout") {
  Ablations a;
  CHECK(a.tag().empty());
  a.enable("no_graph, no_norm");
  CHECK(a.tag() == "no_norm+no_graph");
  CHECK_THROWS_AS(a.enable("no_lm"), ConfigError);

  PipelineConfig c;
  c.work_dir = "w";
  const auto base = Layout::of(c);
  c.ablate.no_graph = true;
  const auto ng = Layout::of(c);
  CHECK(ng.prepare == base.prepare);
  CHECK(ng.blocks == base.blocks);
  CHECK(ng.train != base.train);
  CHECK(ng.eval == fs::path("w") / "eval.no_graph");
  c.ablate = {};
  c.ablate.no_plm = true;
  CHECK(Layout::of(c).pretrain == base.pretrain);
  CHECK(Layout::of(c).blocks != base.blocks);
}

TEST_CASE("prepare on a single fixture") {
  const auto root = scratch("prepare_fixture");
  fs::create_directories(root / "corpus");
  fs::copy_file(fs::path(IRBINDIFF_FIXTURES) / "bind_engine.ll", root / "corpus" / "bind_engine.ll");
  PipelineConfig c;
  c.corpus_dir = root / "corpus";
  c.work_dir = root / "work";
  c.min_blocks = 1;
  const auto stats = run_prepare(c);
  CHECK(stats.files == 1);
  CHECK(stats.kept_functions == 1);
  CHECK(stats.blocks == 4);
  CHECK(stats.instructions == 14);
  CHECK(text::read_jsonl(root / "work" / "prepare" / "functions.jsonl").size() == 1);
  CHECK(fs::exists(root / "work" / "prepare" / "config.txt"));
  const auto first = text::read_file(root / "work" / "prepare" / "blocks.jsonl");
  run_prepare(c);
  CHECK(text::read_file(root / "work" / "prepare" / "blocks.jsonl") == first);

  c.min_blocks = 5;
  CHECK(run_prepare(c).kept_functions == 0);

  PipelineConfig empty;
  empty.corpus_dir = root / "nothing";
  empty.work_dir = root / "work2";
  CHECK_THROWS_WITH_AS(run_prepare(empty), doctest::Contains("no inputs"), InputError);

  text::write_file(root / "bad" / "x.ll", "define i32 @f(i32 %a) {\n  ret i32 %a\n}\n");
  text::write_file(root / "bad" / "y.ll", "define i32 g {\n}\n");
  PipelineConfig mixed;
  mixed.corpus_dir = root / "bad";
  mixed.work_dir = root / "work3";
  mixed.min_blocks = 1;
  const auto m = run_prepare(mixed);
  CHECK(m.files == 2);
  CHECK(m.failed_files == 1);
  CHECK(m.diagnostics.size() == 1);
  fs::remove_all(root);
}

TEST_CASE("stages need their inputs") {
  const auto root = scratch("stage_errors");
  auto c = tiny(root);
  CHECK_THROWS_AS(run_pretrain(c), StageError);
  CHECK_THROWS_AS(run_train(c), StageError);
  CHECK_THROWS_WITH_AS(run_eval(c), doctest::Contains("embeddings.jsonl"), StageError);
  fs::remove_all(root);
}

TEST_CASE("tiny end-to-end run") {
  const auto root = scratch("tiny_run");
  auto c = tiny(root);
  run_synth(c);
  const auto stats = run_prepare(c);
  CHECK(stats.kept_functions == 72);
  CHECK(stats.test_groups + stats.train_groups == 12);
  const auto plog = run_pretrain(c);
  CHECK(plog.epoch_loss.size() == 1);
  CHECK_THROWS_AS(run_train(c), StageError);  // blocks not embedded yet
  run_embed_blocks(c);
  const auto tlog = run_train(c);
  CHECK(tlog.epoch_loss.size() == 2);
  run_embed(c);
  const auto report = run_eval(c);
  REQUIRE(report["tasks"].contains("XA"));
  const auto& xa = report["tasks"]["XA"];
  CHECK(xa["pool_size"] == 20);
  CHECK(xa["n_queries"].get<int>() > 0);
  for (const char* k : {"auc", "recall@1", "recall@10", "recall@50", "mrr", "seed"}) CHECK(xa.contains(k));

  const auto work = root / "work";
  for (const char* f : {"prepare/stats.json", "pretrain/lm.json", "pretrain/lm.bin",
                        "pretrain/corpus.jsonl", "blocks/block_embeddings.jsonl", "train/ggnn.bin",
                        "train/train_log.jsonl", "embed/embeddings.jsonl", "eval/report.json",
                        "eval/config.txt"}) {
    CHECK_MESSAGE(fs::exists(work / f), f);
  }
  // Resolved configs reproduce the run.
  CHECK(PipelineConfig::load(work / "eval" / "config.txt").to_string() == c.to_string());

  // Reruns are byte-identical, and removing downstream artifacts leaves upstream reruns alone.
  const auto emb = text::read_file(work / "embed" / "embeddings.jsonl");
  const auto rep = text::read_file(work / "eval" / "report.json");
  const auto blocks = text::read_file(work / "prepare" / "blocks.jsonl");
  fs::remove_all(work / "train");
  fs::remove_all(work / "embed");
  run_prepare(c);
  CHECK(text::read_file(work / "prepare" / "blocks.jsonl") == blocks);
  run_train(c);
  run_embed(c);
  run_eval(c);
  CHECK(text::read_file(work / "embed" / "embeddings.jsonl") == emb);
  CHECK(text::read_file(work / "eval" / "report.json") == rep);

  SUBCASE("ablations write beside the baseline") {
    c.ablate.no_plm = true;
    c.ablate.no_graph = true;
    run_pretrain(c);  // no-op
    run_embed_blocks(c);
    run_train(c);
    run_embed(c);
    const auto r = run_eval(c);
    CHECK(r["ablations"] == "no_plm+no_graph");
    CHECK(fs::exists(work / "eval.no_plm+no_graph" / "report.json"));
    CHECK(text::read_file(work / "eval" / "report.json") == rep);
  }
  fs::remove_all(root);
}
