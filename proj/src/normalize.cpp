#include "irbindiff/normalize.hpp"

#include <algorithm>
#include <cctype>

#include "irbindiff/error.hpp"

namespace irbindiff::norm {

namespace {

constexpr std::string_view kPunct = ",()[]{}";
constexpr std::string_view kSeparators = "._";

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return s;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_hex_digit(char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; }

bool all_hex(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), is_hex_digit);
}

bool is_decimal_literal(std::string_view s) {
  if (!s.empty() && s.front() == '-') s.remove_prefix(1);
  return !s.empty() && std::all_of(s.begin(), s.end(), is_digit);
}

// LLVM prints float constants as 0x<16 hex> and long-double kinds as 0xK.., 0xL.. etc.
bool is_hex_literal(std::string_view s) {
  if (!s.empty() && s.front() == '-') s.remove_prefix(1);
  if (!s.starts_with("0x") && !s.starts_with("0X")) return false;
  s.remove_prefix(2);
  if (!s.empty() && std::string_view("KLMHR").find(s.front()) != std::string_view::npos &&
      s.size() > 1) {
    s.remove_prefix(1);
  }
  return all_hex(s);
}

bool decimal_at_least(std::string_view s, std::int64_t threshold) {
  if (!s.empty() && s.front() == '-') s.remove_prefix(1);
  while (s.size() > 1 && s.front() == '0') s.remove_prefix(1);
  if (s.size() > 18) return true;
  return std::stoll(std::string(s)) >= threshold;
}

void flush_word(std::string& word, TokenSequence& out) {
  if (word.empty()) return;
  const bool has_sep = word.find_first_of(kSeparators) != std::string::npos;
  std::string piece;
  for (char c : word) {
    if (kSeparators.find(c) != std::string_view::npos) {
      if (!piece.empty()) out.push_back(Token{std::move(piece), has_sep});
      piece.clear();
    } else {
      piece += c;
    }
  }
  if (!piece.empty()) out.push_back(Token{std::move(piece), has_sep});
  word.clear();
}

std::string strip_merge_digits(const std::string& token, const NormalizeOptions& options) {
  std::string_view sv(token);
  std::string_view sigil;
  if (!sv.empty() && (sv.front() == '%' || sv.front() == '@')) {
    sigil = sv.substr(0, 1);
    sv.remove_prefix(1);
  }
  std::string_view core = sv;
  while (!core.empty() && is_digit(core.front())) core.remove_prefix(1);
  while (!core.empty() && is_digit(core.back())) core.remove_suffix(1);
  if (core.size() == sv.size() || !options.merge_stems.count(std::string(core))) return token;
  return std::string(sigil) + std::string(core);
}

}  // namespace

std::vector<std::string> texts(const TokenSequence& seq) {
  std::vector<std::string> out;
  out.reserve(seq.size());
  for (const auto& t : seq) out.push_back(t.text);
  return out;
}

std::string join(const TokenSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += seq[i].text;
  }
  return out;
}

TokenSequence tokenize(std::string_view instruction) {
  TokenSequence out;
  std::string word;
  for (char c : instruction) {
    if (is_space(c)) {
      flush_word(word, out);
    } else if (kPunct.find(c) != std::string_view::npos) {
      flush_word(word, out);
      out.push_back(Token{std::string(1, c), false});
    } else {
      word += c;
    }
  }
  flush_word(word, out);
  return out;
}

TokenSequence normalize(const TokenSequence& tokens, const NormalizeOptions& options) {
  TokenSequence out;
  out.reserve(tokens.size());
  const std::size_t n = tokens.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Token& t = tokens[i];
    auto frag = [&](std::size_t k) { return k < n && tokens[k].fragment; };

    // (1) %dec_label_pc_<hex>, which tokenize breaks into %dec label pc <hex>.
    if (t.text == "%dec" && frag(i + 1) && frag(i + 2) && frag(i + 3) &&
        tokens[i + 1].text == "label" && tokens[i + 2].text == "pc" &&
        all_hex(tokens[i + 3].text)) {
      out.push_back(Token{std::string(kLabelToken), false});
      i += 3;
      continue;
    }
    // (2) @global_var_<x> -> @global var <x>.
    if (t.text == "@global" && frag(i + 1) && frag(i + 2) && tokens[i + 1].text == "var") {
      out.push_back(Token{std::string(kGlobalToken), false});
      i += 2;
      continue;
    }
    // (3)/(4) standalone numeric literals. Alignment operands are attributes, not constants.
    const bool after_align = !out.empty() && out.back().text == "align";
    if (!t.fragment && !after_align) {
      if (is_hex_literal(t.text)) {
        out.push_back(Token{std::string(t.text.front() == '-' ? kNegativeToken : kPositiveToken),
                            false});
        continue;
      }
      if (is_decimal_literal(t.text)) {
        std::string_view cls;
        if (decimal_at_least(t.text, options.address_threshold)) {
          cls = kAddressToken;
        } else {
          cls = t.text.front() == '-' ? kNegativeToken : kPositiveToken;
        }
        out.push_back(Token{std::string(cls), false});
        continue;
      }
    }
    // (5) merge/spill identifiers lose their numeric decorations.
    out.push_back(Token{strip_merge_digits(t.text, options), t.fragment});
  }
  return out;
}

TokenSequence process_instruction(std::string_view instruction, bool apply_rules,
                                  const NormalizeOptions& options) {
  auto tokens = tokenize(instruction);
  return apply_rules ? normalize(tokens, options) : tokens;
}

Vocabulary::Vocabulary() {
  for (const auto& s : special_tokens()) add(s);
}

void Vocabulary::add(const std::string& token) {
  id_of_.emplace(token, static_cast<int>(token_of_.size()));
  token_of_.push_back(token);
}

int Vocabulary::id_of(std::string_view token) const {
  auto it = id_of_.find(std::string(token));
  return it == id_of_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) throw InputError("token id " + std::to_string(id) + " out of range");
  return token_of_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return id_of_.count(std::string(token)) != 0;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < token_of_.size(); ++i) j[token_of_[i]] = i;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> by_id(j.size());
  std::vector<bool> filled(j.size(), false);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const int id = it.value().get<int>();
    if (id < 0 || static_cast<std::size_t>(id) >= by_id.size() || filled[id]) {
      throw InputError("vocabulary ids are not a bijection onto 0..n-1");
    }
    by_id[id] = it.key();
    filled[id] = true;
  }
  const auto& specials = special_tokens();
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (i >= by_id.size() || by_id[i] != specials[i]) {
      throw InputError("vocabulary is missing special token " + specials[i]);
    }
  }
  Vocabulary v;
  for (std::size_t i = specials.size(); i < by_id.size(); ++i) v.add(by_id[i]);
  return v;
}

Vocabulary build_vocabulary(const std::vector<TokenSequence>& corpus, int min_count) {
  std::map<std::string, long> counts;
  for (const auto& seq : corpus) {
    for (const auto& t : seq) ++counts[t.text];
  }
  std::vector<std::pair<std::string, long>> entries;
  Vocabulary v;
  for (auto& [tok, c] : counts) {
    if (c >= min_count && !v.contains(tok)) entries.emplace_back(tok, c);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [tok, c] : entries) v.add(tok);
  return v;
}

std::vector<int> encode(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_of(t.text));
  return ids;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token_of(id));
  return out;
}

}  // namespace irbindiff::norm
