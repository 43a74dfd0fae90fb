#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "smart/puzzle_core.hpp"

namespace smart {

enum class ModalityTag { text, vl };

std::string_view modality_name(ModalityTag tag) noexcept;
ModalityTag parse_modality(std::string_view name);

struct EvalRecord {
  std::string puzzle_id;
  double weight = 1.0;
  int correct = 0;  // 0 or 1
  SkillCategory category = SkillCategory::logic;
  ModalityTag modality = ModalityTag::vl;
};

struct CategoryScore {
  int count = 0;
  double o_acc = 0.0;
  double wosa = 0.0;
};

struct EvalReport {
  double o_acc = 0.0;
  double wosa_total = 0.0;
  // Empty when no instance carries that tag.
  std::optional<double> wosa_text;
  std::optional<double> wosa_vl;
  std::map<SkillCategory, CategoryScore> per_category;
  int n = 0;
};

// Mean of `correct`. Throws EvalError on an empty list.
double o_acc(std::span<const EvalRecord> records);

// 100 * sum(w_i * correct_i) / sum(w_i). Throws EvalError on an empty list
// or a non-positive weight.
double wosa(std::span<const EvalRecord> records);

// Scores predictions (puzzle id -> option index) against the dataset. Ids
// missing from `modality_tags` default to vl. Throws EvalError listing every
// dataset id without a prediction.
EvalReport eval_report(const std::map<std::string, int>& predictions, const std::vector<PuzzleInstance>& dataset,
                       const std::map<std::string, ModalityTag>& modality_tags);

nlohmann::json to_json(const EvalReport& report);

// Table-shaped summary: one row per method tag with Text-WOSA, VL-WOSA and
// Total-WOSA columns.
std::string format_wosa_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace smart
