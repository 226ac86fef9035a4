#pragma once

#include <string>
#include <vector>

// Instruction/normalized pairs from the published rule table, and the
// worked tokenization example.
namespace goldens {

struct NormCase {
  int rule;
  std::string original;
  std::string normalized;
};

inline const std::vector<NormCase>& rule_table() {
  static const std::vector<NormCase> rows{
      {1, "br i1 %22, label %dec_label_pc_41d34, label %dec_label_pc_41d28",
       "br i1 %22 , label <label> , label <label>"},
      {2, "%54 = load i32, i32* @global_var_136b14, align 4",
       "%54 = load i32 , i32* <global> , align 4"},
      {3, "call void @__asm_fcmpe(float %6, float 0x43F0000000000000)",
       "call void @ asm fcmpe ( float %6 , float <Positive> )"},
      {3, "%278 = add nsw i32 %277, -630", "%278 = add nsw i32 %277 , <Negative>"},
      {4, "store i32 4325376, i32* %s1.0.reg2mem", "store i32 <Address> , i32* %s1 0 reg2mem"},
      {5, "store i8* %65, i8** %storemerge518.reg2mem", "store i8* %65 , i8** %storemerge reg2mem"},
      {5, "%or.cond10 = or i1 %brmerge, %or.cond4", "%or cond = or i1 %brmerge , %or cond"},
  };
  return rows;
}

inline const std::string kTokenizeInput = "%16 = call i32 @_cxa_begin_catch (i32* %result)";
inline const std::vector<std::string> kTokenizeOutput{
    "%16", "=", "call", "i32", "@", "cxa", "begin", "catch", "(", "i32*", "%result", ")"};

}  // namespace goldens
