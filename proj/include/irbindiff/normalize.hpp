#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace irbindiff::norm {

// One token of an instruction. `fragment` marks pieces of an identifier that
// was broken at `.` or `_` (e.g. the `0` of `%s1.0.reg2mem`); numeric
// normalization leaves fragments alone.
struct Token {
  std::string text;
  bool fragment = false;

  bool operator==(const Token&) const = default;
};

using TokenSequence = std::vector<Token>;

std::vector<std::string> texts(const TokenSequence& seq);
std::string join(const TokenSequence& seq);

TokenSequence tokenize(std::string_view instruction);

struct NormalizeOptions {
  // Stems whose leading/trailing digits are stripped (rule 5).
  std::set<std::string> merge_stems{"reg2mem", "reload", "storemerge", "brmerge",
                                    "select",  "thread", "cond"};
  // Decimal literals with |v| >= this are addresses (rule 4).
  std::int64_t address_threshold = 1024;
};

inline constexpr std::string_view kLabelToken = "<label>";
inline constexpr std::string_view kGlobalToken = "<global>";
inline constexpr std::string_view kPositiveToken = "<Positive>";
inline constexpr std::string_view kNegativeToken = "<Negative>";
inline constexpr std::string_view kAddressToken = "<Address>";

TokenSequence normalize(const TokenSequence& tokens, const NormalizeOptions& options = {});

// tokenize + normalize, or tokenize alone when `apply_rules` is false.
TokenSequence process_instruction(std::string_view instruction, bool apply_rules = true,
                                  const NormalizeOptions& options = {});

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  Vocabulary();

  int size() const { return static_cast<int>(token_of_.size()); }
  int id_of(std::string_view token) const;  // kUnk when absent
  const std::string& token_of(int id) const;
  bool contains(std::string_view token) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  friend Vocabulary build_vocabulary(const std::vector<TokenSequence>&, int);
  void add(const std::string& token);

  std::unordered_map<std::string, int> id_of_;
  std::vector<std::string> token_of_;
};

Vocabulary build_vocabulary(const std::vector<TokenSequence>& corpus, int min_count = 1);

std::vector<int> encode(const TokenSequence& tokens, const Vocabulary& vocab);
std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace irbindiff::norm
