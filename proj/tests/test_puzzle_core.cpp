#include <doctest.h>

#include <set>
#include <string>

#include "smart/puzzle_core.hpp"
#include "smart/random.hpp"

using namespace smart;

namespace {

Options opts(const char* a, const char* b, const char* c, const char* d, const char* e) { return {a, b, c, d, e}; }

std::string random_text(Rng& rng) {
  static const std::string alphabet = " \t0123456789.-+abcXYZ ";
  std::string s;
  const int n = rng.uniform_int(0, 10);
  for (int i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
  return s;
}

PuzzleInstance puzzle_with(Options o) {
  PuzzleInstance p;
  p.id = "p";
  p.options = std::move(o);
  return p;
}

}  // namespace

TEST_CASE("answer kinds follow the category partition") {
  CHECK(answer_kind_for_category(SkillCategory::counting) == AnswerKind::key);
  CHECK(answer_kind_for_category(SkillCategory::algebra) == AnswerKind::value);
  CHECK(answer_kind_for_category(SkillCategory::measurement) == AnswerKind::value);
  std::set<SkillCategory> keys, values;
  for (SkillCategory c : kAllCategories) (answer_kind_for_category(c) == AnswerKind::key ? keys : values).insert(c);
  CHECK(keys.size() == 5);
  CHECK(values.size() == 3);
  CHECK(values == std::set<SkillCategory>{SkillCategory::arithmetic, SkillCategory::measurement, SkillCategory::algebra});
}

TEST_CASE("category names round trip") {
  for (SkillCategory c : kAllCategories) CHECK(parse_category(category_name(c)) == c);
  CHECK_FALSE(parse_category("geometry").has_value());
}

TEST_CASE("normalize_answer") {
  CHECK(normalize_answer("  12 ") == "12");
  CHECK(normalize_answer("3.0") == "3");
  CHECK(normalize_answer("Blue  Square") == "blue square");
  CHECK(normalize_answer("007") == "7");
  CHECK(normalize_answer("-0") == "0");
  CHECK(normalize_answer("") == "");
}

TEST_CASE("normalize_answer is idempotent") {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const auto s = random_text(rng);
    const auto once = normalize_answer(s);
    CHECK(normalize_answer(once) == once);
  }
}

TEST_CASE("select_option_by_value examples") {
  CHECK(select_option_by_value("15", opts("12", "15", "18", "21", "24")) == 1);
  CHECK(select_option_by_value("16", opts("12", "15", "18", "21", "24")) == 1);
  CHECK(select_option_by_value("20", opts("12", "16", "18", "22", "24")) == 2);
}

TEST_CASE("select_option_by_value on empty input takes the shortest option") {
  // Edit distance from "" is the option length; ties go to the lowest index.
  const auto o = opts("12", "7", "105", "3", "44");
  int shortest = 0;
  for (int i = 1; i < 5; ++i) {
    if (o[static_cast<std::size_t>(i)].size() < o[static_cast<std::size_t>(shortest)].size()) shortest = i;
  }
  CHECK(select_option_by_value("", o) == shortest);
  CHECK(shortest == 1);
}

TEST_CASE("select_option_by_value is total and deterministic") {
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    Options o;
    for (auto& s : o) s = random_text(rng);
    const auto v = random_text(rng);
    const int a = select_option_by_value(v, o);
    CHECK(a >= 0);
    CHECK(a <= 4);
    CHECK(select_option_by_value(v, o) == a);
  }
}

TEST_CASE("verbatim option value selects that option") {
  const auto o = opts("red", "7", "blue square", "3.5", "-2");
  for (int i = 0; i < 5; ++i) CHECK(select_option_by_value(o[static_cast<std::size_t>(i)], o) == i);
}

TEST_CASE("edit_distance") {
  CHECK(edit_distance("", "") == 0);
  CHECK(edit_distance("abc", "") == 3);
  CHECK(edit_distance("kitten", "sitting") == 3);
}

TEST_CASE("parse_number") {
  CHECK(parse_number("12") == 12.0);
  CHECK(parse_number("-2.5") == -2.5);
  CHECK_FALSE(parse_number("1e3").has_value());
  CHECK_FALSE(parse_number("0x10").has_value());
  CHECK_FALSE(parse_number("").has_value());
}

TEST_CASE("validate rejects broken puzzles") {
  auto p = puzzle_with(opts("a", "b", "c", "d", "e"));
  CHECK_NOTHROW(validate(p));
  p.gold_option_index = 5;
  CHECK_THROWS_AS(validate(p), InvalidPuzzle);
  p.gold_option_index = 0;
  p.weight = 0.0;
  CHECK_THROWS_AS(validate(p), InvalidPuzzle);
  auto dup = puzzle_with(opts("A", "b", "c", "d", " a "));
  CHECK_THROWS_AS(validate(dup), InvalidPuzzle);
  auto numeric_dup = puzzle_with(opts("3", "3.0", "4", "5", "6"));
  CHECK_THROWS_AS(validate(numeric_dup), InvalidPuzzle);
}
