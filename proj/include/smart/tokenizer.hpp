#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "smart/puzzle_core.hpp"

namespace smart {

// Fixed vocabulary shared by every model in the project.
//
// Text is lower-cased and split into runs of letters, runs of digits and
// single punctuation characters; whitespace only separates. A letter run
// that is a known word becomes one token, otherwise it is spelled out letter
// by letter. Digits, '-' and '.' are always single-character tokens so
// numbers are tokenized the same way in prompts and in value answers.
class Tokenizer {
 public:
  enum Special : int {
    kPad = 0,
    kBos,
    kEos,
    kUnk,
    kOptA,
    kOptB,
    kOptC,
    kOptD,
    kOptE,
    kCategoryFirst,  // 8 category tokens in SkillCategory order
    kCaptionBlock = kCategoryFirst + static_cast<int>(kNumCategories),
    kQuestionBlock,
    kOptionsBlock,
    kValueBlock,
    kClassifyBlock,
    kAnswer,
    kDigitZero,  // '0'..'9' follow
    kMinus = kDigitZero + 10,
    kDot,
    kFirstFree,
  };

  static const Tokenizer& instance();

  int vocab_size() const { return static_cast<int>(pieces_.size()); }
  std::vector<int> encode(std::string_view text) const;
  std::string piece(int token) const;

  static constexpr int option_token(int index) { return kOptA + index; }
  static constexpr int category_token(SkillCategory c) { return kCategoryFirst + category_index(c); }
  static constexpr int digit_token(int d) { return kDigitZero + d; }

  // Tokens a value answer may contain: digits, '-', '.', EOS.
  static const std::vector<int>& numeric_vocabulary();
  // Character for a numeric token, or '\0' for EOS / anything else.
  static char numeric_char(int token);
  // Encodes a normalized numeric answer as characters + EOS.
  std::vector<int> encode_value(std::string_view answer) const;

 private:
  Tokenizer();
  int add(std::string piece);

  std::vector<std::string> pieces_;
  std::map<std::string, int, std::less<>> lookup_;
};

}  // namespace smart
