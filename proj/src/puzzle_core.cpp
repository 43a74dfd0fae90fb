#include "smart/puzzle_core.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

namespace smart {

namespace {

constexpr std::array<std::string_view, kNumCategories> kCategoryNames{
    "logic",      "counting",   "spatial_reasoning", "path_tracing",
    "pattern_finding", "arithmetic", "measurement",  "algebra",
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Returns the canonical form if `s` is a plain decimal numeral.
std::optional<std::string> canonical_numeral(std::string_view s) {
  if (s.empty()) return std::nullopt;
  bool negative = false;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') {
    negative = s[0] == '-';
    i = 1;
  }
  const std::size_t int_begin = i;
  while (i < s.size() && is_digit(s[i])) ++i;
  std::string_view int_part = s.substr(int_begin, i - int_begin);
  std::string_view frac_part;
  if (i < s.size() && s[i] == '.') {
    const std::size_t frac_begin = ++i;
    while (i < s.size() && is_digit(s[i])) ++i;
    frac_part = s.substr(frac_begin, i - frac_begin);
  }
  if (i != s.size() || (int_part.empty() && frac_part.empty())) return std::nullopt;

  while (!int_part.empty() && int_part.front() == '0') int_part.remove_prefix(1);
  while (!frac_part.empty() && frac_part.back() == '0') frac_part.remove_suffix(1);

  std::string out;
  if (int_part.empty()) {
    out = "0";
  } else {
    out.assign(int_part);
  }
  if (!frac_part.empty()) {
    out.push_back('.');
    out.append(frac_part);
  }
  if (negative && out != "0") out.insert(out.begin(), '-');
  return out;
}

}  // namespace

std::string_view category_name(SkillCategory category) noexcept {
  return kCategoryNames[static_cast<std::size_t>(category)];
}

std::optional<SkillCategory> parse_category(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (kCategoryNames[i] == name) return kAllCategories[i];
  }
  return std::nullopt;
}

std::string_view answer_kind_name(AnswerKind kind) noexcept {
  return kind == AnswerKind::key ? "key" : "value";
}

void validate(const PuzzleInstance& puzzle) {
  if (puzzle.gold_option_index < 0 || puzzle.gold_option_index >= static_cast<int>(kNumOptions)) {
    throw InvalidPuzzle("gold option index out of range [0,4]");
  }
  if (!(puzzle.weight > 0.0) || !std::isfinite(puzzle.weight)) {
    throw InvalidPuzzle("weight must be positive and finite");
  }
  std::set<std::string> seen;
  for (const auto& option : puzzle.options) {
    if (!seen.insert(normalize_answer(option)).second) {
      throw InvalidPuzzle("duplicate normalized option '" + option + "'");
    }
  }
}

std::string normalize_answer(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (auto numeral = canonical_numeral(out)) return *numeral;
  return out;
}

std::optional<double> parse_number(std::string_view text) {
  auto numeral = canonical_numeral(text);
  if (!numeral) return std::nullopt;
  double value = 0.0;
  const auto* begin = numeral->data();
  const auto* end = begin + numeral->size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return value;
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t substitute = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, substitute});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

int select_option_by_value(std::string_view value, std::span<const std::string, kNumOptions> options) {
  const std::string wanted = normalize_answer(value);
  std::array<std::string, kNumOptions> normalized;
  for (std::size_t i = 0; i < kNumOptions; ++i) normalized[i] = normalize_answer(options[i]);

  for (std::size_t i = 0; i < kNumOptions; ++i) {
    if (normalized[i] == wanted) return static_cast<int>(i);
  }

  if (const auto target = parse_number(wanted)) {
    int best = -1;
    double best_distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < kNumOptions; ++i) {
      const auto option_value = parse_number(normalized[i]);
      if (!option_value) continue;
      const double distance = std::abs(*option_value - *target);
      if (best < 0 || distance < best_distance) {
        best = static_cast<int>(i);
        best_distance = distance;
      }
    }
    if (best >= 0) return best;
  }

  int best = 0;
  std::size_t best_distance = edit_distance(wanted, normalized[0]);
  for (std::size_t i = 1; i < kNumOptions; ++i) {
    const std::size_t distance = edit_distance(wanted, normalized[i]);
    if (distance < best_distance) {
      best = static_cast<int>(i);
      best_distance = distance;
    }
  }
  return best;
}

}  // namespace smart
