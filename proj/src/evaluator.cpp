#include "smart/evaluator.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "smart/errors.hpp"

namespace smart {

std::string_view modality_name(ModalityTag tag) noexcept { return tag == ModalityTag::text ? "text" : "vl"; }

ModalityTag parse_modality(std::string_view name) {
  if (name == "text") return ModalityTag::text;
  if (name == "vl") return ModalityTag::vl;
  throw EvalError("unknown modality tag '" + std::string(name) + "' (expected text or vl)");
}

double o_acc(std::span<const EvalRecord> records) {
  if (records.empty()) throw EvalError("o_acc: no records");
  long long correct = 0;
  for (const auto& r : records) {
    if (r.correct != 0 && r.correct != 1) throw EvalError("o_acc: correctness must be 0 or 1");
    correct += r.correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double wosa(std::span<const EvalRecord> records) {
  if (records.empty()) throw EvalError("wosa: no records");
  double weighted = 0.0;
  double total = 0.0;
  for (const auto& r : records) {
    if (!(r.weight > 0.0) || !std::isfinite(r.weight)) {
      throw EvalError("wosa: non-positive weight for '" + r.puzzle_id + "'");
    }
    if (r.correct != 0 && r.correct != 1) throw EvalError("wosa: correctness must be 0 or 1");
    weighted += r.weight * r.correct;
    total += r.weight;
  }
  return 100.0 * weighted / total;
}

EvalReport eval_report(const std::map<std::string, int>& predictions, const std::vector<PuzzleInstance>& dataset,
                       const std::map<std::string, ModalityTag>& modality_tags) {
  std::vector<std::string> missing;
  std::vector<EvalRecord> records;
  records.reserve(dataset.size());
  for (const auto& puzzle : dataset) {
    auto it = predictions.find(puzzle.id);
    if (it == predictions.end()) {
      missing.push_back(puzzle.id);
      continue;
    }
    EvalRecord r;
    r.puzzle_id = puzzle.id;
    r.weight = puzzle.weight;
    r.correct = it->second == puzzle.gold_option_index ? 1 : 0;
    r.category = puzzle.category;
    auto tag = modality_tags.find(puzzle.id);
    r.modality = tag == modality_tags.end() ? ModalityTag::vl : tag->second;
    records.push_back(std::move(r));
  }
  if (!missing.empty()) {
    std::string message = "missing predictions for " + std::to_string(missing.size()) + " puzzle(s):";
    for (const auto& id : missing) message += " " + id;
    throw EvalError(message);
  }

  EvalReport report;
  report.n = static_cast<int>(records.size());
  report.o_acc = o_acc(records);
  report.wosa_total = wosa(records);

  std::map<SkillCategory, std::vector<EvalRecord>> by_category;
  std::vector<EvalRecord> text, vl;
  for (const auto& r : records) {
    by_category[r.category].push_back(r);
    (r.modality == ModalityTag::text ? text : vl).push_back(r);
  }
  for (const auto& [category, group] : by_category) {
    report.per_category[category] = CategoryScore{static_cast<int>(group.size()), o_acc(group), wosa(group)};
  }
  if (!text.empty()) report.wosa_text = wosa(text);
  if (!vl.empty()) report.wosa_vl = wosa(vl);
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["n"] = report.n;
  j["o_acc"] = report.o_acc;
  j["wosa_total"] = report.wosa_total;
  j["wosa_text"] = report.wosa_text ? nlohmann::json(*report.wosa_text) : nlohmann::json(nullptr);
  j["wosa_vl"] = report.wosa_vl ? nlohmann::json(*report.wosa_vl) : nlohmann::json(nullptr);
  nlohmann::json categories = nlohmann::json::object();
  for (const auto& [category, score] : report.per_category) {
    categories[std::string(category_name(category))] = {
        {"count", score.count}, {"o_acc", score.o_acc}, {"wosa", score.wosa}};
  }
  j["per_category"] = categories;
  return j;
}

std::string format_wosa_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 6;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  auto cell = [](const std::optional<double>& v) {
    std::ostringstream s;
    if (v) {
      s << std::fixed << std::setprecision(2) << *v;
    } else {
      s << "-";
    }
    return s.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Method" << "  " << std::right << std::setw(9)
      << "Text-WOSA" << "  " << std::setw(7) << "VL-WOSA" << "  " << std::setw(10) << "Total-WOSA" << '\n';
  for (const auto& [name, report] : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right << std::setw(9)
        << cell(report.wosa_text) << "  " << std::setw(7) << cell(report.wosa_vl) << "  " << std::setw(10)
        << cell(report.wosa_total) << '\n';
  }
  return out.str();
}

}  // namespace smart
