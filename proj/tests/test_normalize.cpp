#include <doctest.h>

#include "goldens.hpp"
#include "irbindiff/error.hpp"
#include "irbindiff/normalize.hpp"

using namespace irbindiff;
using namespace irbindiff::norm;

TEST_CASE("rule table rows reproduce exactly") {
  for (const auto& row : goldens::rule_table()) {
    CAPTURE(row.original);
    CHECK(join(process_instruction(row.original)) == row.normalized);
  }
}

TEST_CASE("worked tokenization example") {
  const auto toks = tokenize(goldens::kTokenizeInput);
  CHECK(texts(toks) == goldens::kTokenizeOutput);
  CHECK(toks.size() == 12);
}

TEST_CASE("tokenize splits punctuation and separators") {
  CHECK(texts(tokenize("  ")).empty());
  CHECK(texts(tokenize("{a,b}[c]")) ==
        std::vector<std::string>{"{", "a", ",", "b", "}", "[", "c", "]"});
  const auto t = tokenize("%x.y");
  REQUIRE(t.size() == 2);
  CHECK(t[0].fragment);
  CHECK(t[1].fragment);
  CHECK_FALSE(tokenize("%x")[0].fragment);
}

TEST_CASE("numeric rules") {
  CHECK(join(process_instruction("add i32 %a, 1023")) == "add i32 %a , <Positive>");
  CHECK(join(process_instruction("add i32 %a, 1024")) == "add i32 %a , <Address>");
  CHECK(join(process_instruction("add i32 %a, -1024")) == "add i32 %a , <Address>");
  CHECK(join(process_instruction("add i32 %a, -1")) == "add i32 %a , <Negative>");
  CHECK(join(process_instruction("add i32 %a, 0")) == "add i32 %a , <Positive>");
  CHECK(join(process_instruction("fadd double %a, 0xBFF0000000000000")) ==
        "fadd double %a , <Positive>");
  CHECK(join(process_instruction("store i32 0, i32* %x, align 8")) ==
        "store i32 <Positive> , i32* %x , align 8");
  NormalizeOptions opts;
  opts.address_threshold = 10;
  CHECK(join(process_instruction("add i32 %a, 10", true, opts)) == "add i32 %a , <Address>");
}

TEST_CASE("rules can be switched off") {
  const auto& row = goldens::rule_table()[0];
  CHECK(join(process_instruction(row.original, false)) ==
        "br i1 %22 , label %dec label pc 41d34 , label %dec label pc 41d28");
}

TEST_CASE("merge stems") {
  CHECK(join(process_instruction("%x.reload12 = load i32, i32* %a")) ==
        "%x reload = load i32 , i32* %a");
  CHECK(join(process_instruction("%select17 = select i1 %c, i32 %a, i32 %b")) ==
        "%select = select i1 %c , i32 %a , i32 %b");
  // Not a merge stem: digits stay.
  CHECK(join(process_instruction("%v12 = add i32 %a, %b")) == "%v12 = add i32 %a , %b");
}

TEST_CASE("vocabulary") {
  std::vector<TokenSequence> corpus{process_instruction("%1 = add i32 %a, 1"),
                                    process_instruction("%2 = add i32 %b, 2"),
                                    process_instruction("ret i32 %a")};
  const auto v = build_vocabulary(corpus);
  CHECK(v.token_of(Vocabulary::kPad) == "[PAD]");
  CHECK(v.token_of(Vocabulary::kMask) == "[MASK]");
  // Most frequent first: "i32" appears 3 times.
  CHECK(v.token_of(Vocabulary::kNumSpecials) == "i32");
  CHECK(v.id_of("never-seen") == Vocabulary::kUnk);
  const auto ids = encode(corpus[0], v);
  CHECK(decode(ids, v) == texts(corpus[0]));
  const auto back = Vocabulary::from_json(v.to_json());
  CHECK(back.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(back.token_of(i) == v.token_of(i));
  CHECK_THROWS_AS(v.token_of(v.size()), InputError);
  CHECK_THROWS_AS(Vocabulary::from_json(nlohmann::json{{"a", 0}}), InputError);
  CHECK(build_vocabulary(corpus, 3).size() == Vocabulary::kNumSpecials + 1);
}
