#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "irbindiff/ir_corpus.hpp"

namespace irbindiff::synth {

struct SynthConfig {
  int n_groups = 50;
  int variants = 6;  // compile settings per group, at most 12
  int min_blocks = 5;
  int max_blocks = 10;
  // Fraction of groups emitted as pairs sharing every block's contents but
  // wired differently, so only the CFG tells them apart.
  double twin_fraction = 0.5;
  int projects = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Setting {
  std::string compiler;
  std::string version;
  std::string optimization;
  std::string architecture;
};

struct SynthFile {
  std::string relative_path;  // <project>/<compiler>-<version>/<arch>/<opt>/<binary>.ll
  std::string text;
  ir::FunctionMeta meta;  // source_function left empty: one file holds several
  std::vector<std::string> functions;
};

struct SynthCorpus {
  std::vector<SynthFile> files;
  std::size_t functions = 0;
  std::size_t groups = 0;

  nlohmann::ordered_json manifest() const;
};

// Compile settings of variant v for a binary; variants 0..5 of every binary
// cover cross-compiler, cross-optimization and cross-architecture pairs.
Setting variant_setting(int variant, int binary_index);

SynthCorpus synth_corpus(const SynthConfig& config);

// Writes every file plus manifest.json under `root`.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& root);

}  // namespace irbindiff::synth
