#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "smart/image.hpp"

namespace smart {

// The eight skill categories. Enumeration order is fixed and is the
// tie-break order wherever an argmax over categories is taken.
enum class SkillCategory : std::uint8_t {
  logic,
  counting,
  spatial_reasoning,
  path_tracing,
  pattern_finding,
  arithmetic,
  measurement,
  algebra,
};

inline constexpr std::size_t kNumCategories = 8;

inline constexpr std::array<SkillCategory, kNumCategories> kAllCategories{
    SkillCategory::logic,           SkillCategory::counting,   SkillCategory::spatial_reasoning,
    SkillCategory::path_tracing,    SkillCategory::pattern_finding, SkillCategory::arithmetic,
    SkillCategory::measurement,     SkillCategory::algebra,
};

enum class AnswerKind : std::uint8_t { key, value };

constexpr AnswerKind answer_kind_for_category(SkillCategory category) noexcept {
  switch (category) {
    case SkillCategory::arithmetic:
    case SkillCategory::measurement:
    case SkillCategory::algebra:
      return AnswerKind::value;
    default:
      return AnswerKind::key;
  }
}

constexpr int category_index(SkillCategory category) noexcept { return static_cast<int>(category); }

std::string_view category_name(SkillCategory category) noexcept;
std::optional<SkillCategory> parse_category(std::string_view name) noexcept;
std::string_view answer_kind_name(AnswerKind kind) noexcept;

inline constexpr std::size_t kNumOptions = 5;
using Options = std::array<std::string, kNumOptions>;

struct PuzzleInstance {
  std::string id;
  int root_id = 0;
  Image image;
  std::string question;
  Options options;
  int gold_option_index = 0;
  SkillCategory category = SkillCategory::logic;
  double weight = 1.0;

  const std::string& gold_answer() const { return options[static_cast<std::size_t>(gold_option_index)]; }
};

struct InvalidPuzzle : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Throws InvalidPuzzle naming the first violated invariant.
void validate(const PuzzleInstance& puzzle);

// Trim, ASCII case-fold, collapse whitespace runs; decimal numerals are
// canonicalized ("007" -> "7", "3.0" -> "3", "-0" -> "0").
std::string normalize_answer(std::string_view raw);

// Parses a normalized decimal numeral. No exponents, no hex.
std::optional<double> parse_number(std::string_view text);

std::size_t edit_distance(std::string_view a, std::string_view b);

// Maps a free-form answer onto one of five options: exact normalized match,
// then numerically nearest, then smallest edit distance. Ties go to the
// lowest index.
int select_option_by_value(std::string_view value, std::span<const std::string, kNumOptions> options);

}  // namespace smart
