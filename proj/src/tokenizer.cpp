#include "smart/tokenizer.hpp"

#include <cctype>

#include "smart/errors.hpp"

namespace smart {

namespace {

constexpr std::string_view kPunctuation = "?+=:,()/*'!;\"%<>#";

constexpr std::string_view kWords[] = {
    "a",        "an",        "the",       "is",          "are",       "of",        "in",
    "on",       "to",        "and",       "or",          "with",      "what",      "which",
    "how",      "many",      "much",      "color",       "colour",    "shape",     "shapes",
    "object",   "objects",   "picture",   "image",       "puzzle",    "there",     "this",
    "that",     "it",        "its",       "next",        "comes",     "come",      "largest",
    "smallest", "biggest",   "different", "odd",         "one",       "out",       "end",
    "path",     "line",      "long",      "bar",         "units",     "unit",      "result",
    "expression", "value",   "number",    "numbers",     "answer",    "describe",  "detail",
    "including", "all",      "text",      "visible",     "their",     "arrangement", "count",
    "each",     "row",       "column",    "left",        "right",     "top",       "bottom",
    "square",   "squares",   "circle",    "circles",     "disk",      "disks",     "triangle",
    "diamond",  "red",       "green",     "blue",        "yellow",    "purple",    "orange",
    "black",    "white",     "gray",      "skill",       "does",      "require",   "logic",
    "counting", "spatial",   "reasoning", "tracing",     "pattern",   "finding",   "arithmetic",
    "measurement", "algebra", "where",    "solve",       "equation",  "marker",    "reaches",
    "at",       "be",        "by",        "for",         "from",      "has",       "have",
    "size",     "sizes",     "kind",      "arranged",    "sequence",  "cells",     "cell",
    "items",    "item",      "given",     "figure",      "shown",     "drawn",     "find",
    "mock",     "response",  "ruler",     "length",      "long",      "touches",   "exit",
};

bool is_alpha(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

const Tokenizer& Tokenizer::instance() {
  static const Tokenizer tokenizer;
  return tokenizer;
}

int Tokenizer::add(std::string piece) {
  const int id = static_cast<int>(pieces_.size());
  lookup_.emplace(piece, id);
  pieces_.push_back(std::move(piece));
  return id;
}

Tokenizer::Tokenizer() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>", "<A>", "<B>", "<C>", "<D>", "<E>"}) {
    pieces_.emplace_back(s);
  }
  for (SkillCategory c : kAllCategories) pieces_.push_back("<" + std::string(category_name(c)) + ">");
  for (const char* s : {"<caption>", "<question>", "<options>", "<value>", "<classify>", "<answer>"}) {
    pieces_.emplace_back(s);
  }
  for (char d = '0'; d <= '9'; ++d) add(std::string(1, d));
  add("-");
  add(".");
  if (static_cast<int>(pieces_.size()) != kFirstFree) throw std::logic_error("tokenizer layout mismatch");
  for (char c = 'a'; c <= 'z'; ++c) add(std::string(1, c));
  for (char c : kPunctuation) add(std::string(1, c));
  for (std::string_view w : kWords) {
    if (!lookup_.count(w)) add(std::string(w));
  }
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

  std::size_t i = 0;
  while (i < lowered.size()) {
    const char c = lowered[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (is_alpha(c)) {
      std::size_t j = i;
      while (j < lowered.size() && is_alpha(lowered[j])) ++j;
      const std::string_view word(lowered.data() + i, j - i);
      if (auto it = lookup_.find(word); it != lookup_.end()) {
        out.push_back(it->second);
      } else {
        for (char letter : word) out.push_back(lookup_.find(std::string_view(&letter, 1))->second);
      }
      i = j;
    } else {
      auto it = lookup_.find(std::string_view(&lowered[i], 1));
      out.push_back(it != lookup_.end() ? it->second : kUnk);
      ++i;
    }
  }
  return out;
}

std::string Tokenizer::piece(int token) const {
  if (token < 0 || token >= vocab_size()) return "<invalid>";
  return pieces_[static_cast<std::size_t>(token)];
}

const std::vector<int>& Tokenizer::numeric_vocabulary() {
  static const std::vector<int> vocab = [] {
    std::vector<int> v;
    for (int d = 0; d < 10; ++d) v.push_back(kDigitZero + d);
    v.push_back(kMinus);
    v.push_back(kDot);
    v.push_back(kEos);
    return v;
  }();
  return vocab;
}

char Tokenizer::numeric_char(int token) {
  if (token >= kDigitZero && token < kDigitZero + 10) return static_cast<char>('0' + token - kDigitZero);
  if (token == kMinus) return '-';
  if (token == kDot) return '.';
  return '\0';
}

std::vector<int> Tokenizer::encode_value(std::string_view answer) const {
  std::vector<int> out;
  for (char c : answer) {
    if (is_digit(c)) {
      out.push_back(kDigitZero + (c - '0'));
    } else if (c == '-') {
      out.push_back(kMinus);
    } else if (c == '.') {
      out.push_back(kDot);
    } else {
      throw PreconditionError("value answer '" + std::string(answer) + "' is not numeric");
    }
  }
  out.push_back(kEos);
  return out;
}

}  // namespace smart
