#include <doctest.h>

#include <vector>

#include "oracles.hpp"
#include "smart/errors.hpp"
#include "smart/evaluator.hpp"
#include "smart/random.hpp"

using namespace smart;

namespace {

std::vector<EvalRecord> records(const std::vector<double>& weights, const std::vector<int>& correct) {
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    EvalRecord r;
    r.puzzle_id = "p" + std::to_string(i);
    r.weight = weights[i];
    r.correct = correct[i];
    out.push_back(r);
  }
  return out;
}

PuzzleInstance puzzle(const std::string& id, SkillCategory c, int gold, double weight = 1.0) {
  PuzzleInstance p;
  p.id = id;
  p.category = c;
  p.gold_option_index = gold;
  p.weight = weight;
  p.options = {"a", "b", "c", "d", "e"};
  return p;
}

}  // namespace

TEST_CASE("o_acc") {
  CHECK(o_acc(records({1, 1, 1, 1}, {1, 0, 1, 0})) == 0.5);
  CHECK(o_acc(records({1, 1}, {1, 1})) == 1.0);
  CHECK_THROWS_AS(o_acc(std::vector<EvalRecord>{}), EvalError);
}

TEST_CASE("wosa hand cases") {
  CHECK(wosa(records({1, 1, 1, 1}, {1, 0, 1, 0})) == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(wosa(records({3, 1}, {1, 0})) == doctest::Approx(75.0).epsilon(1e-12));
  const double crafted = wosa(records({1, 2, 3, 1, 2, 3}, {1, 1, 0, 0, 1, 0}));
  CHECK(std::abs(crafted - 100.0 * 5.0 / 12.0) < 1e-9);
  const auto exact = oracle::wosa({1, 2, 3, 1, 2, 3}, {1, 1, 0, 0, 1, 0});
  CHECK(exact == oracle::Fraction(125, 3));
  CHECK_THROWS_AS(wosa(std::vector<EvalRecord>{}), EvalError);
  CHECK_THROWS_AS(wosa(records({1, 0}, {1, 0})), EvalError);
}

TEST_CASE("wosa matches the exact rational oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(1, 60);
    std::vector<oracle::Fraction> exact_w;
    std::vector<double> w;
    std::vector<int> c;
    for (int i = 0; i < n; ++i) {
      const int num = rng.uniform_int(1, 1000), den = rng.uniform_int(1, 16);  // keeps the exact sums inside __int128
      exact_w.emplace_back(num, den);
      w.push_back(static_cast<double>(num) / den);
      c.push_back(rng.uniform_int(0, 1));
    }
    CHECK(std::abs(wosa(records(w, c)) - oracle::wosa(exact_w, c).to_double()) < 1e-9);
  }
}

TEST_CASE("wosa properties") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(1, 40);
    std::vector<double> w, unit(static_cast<std::size_t>(n), 7.0);
    std::vector<int> c;
    for (int i = 0; i < n; ++i) {
      w.push_back(0.01 + 10.0 * rng.uniform());
      c.push_back(rng.uniform_int(0, 1));
    }
    const auto recs = records(w, c);
    const double base = wosa(recs);
    CHECK(base >= 0.0);
    CHECK(base <= 100.0);
    CHECK(std::abs(wosa(records(unit, c)) - 100.0 * o_acc(recs)) < 1e-9);

    const double scale = 1e-3 + 1e3 * rng.uniform();
    std::vector<double> scaled = w;
    for (auto& x : scaled) x *= scale;
    CHECK(std::abs(wosa(records(scaled, c)) - base) < 1e-9);

    for (int i = 0; i < n; ++i) {
      if (c[static_cast<std::size_t>(i)]) continue;
      auto flipped = c;
      flipped[static_cast<std::size_t>(i)] = 1;
      CHECK(wosa(records(w, flipped)) > base);
    }
  }
}

TEST_CASE("eval_report") {
  const std::vector<PuzzleInstance> data{puzzle("a", SkillCategory::logic, 0, 1.0),
                                         puzzle("b", SkillCategory::logic, 1, 2.0),
                                         puzzle("c", SkillCategory::algebra, 2, 3.0)};
  const std::map<std::string, ModalityTag> tags{{"c", ModalityTag::text}};

  SUBCASE("all correct") {
    const auto r = eval_report({{"a", 0}, {"b", 1}, {"c", 2}}, data, tags);
    CHECK(r.wosa_total == 100.0);
    for (const auto& [cat, score] : r.per_category) CHECK(score.wosa == 100.0);
    CHECK(r.wosa_text == 100.0);
    CHECK(r.wosa_vl == 100.0);
  }
  SUBCASE("all wrong") {
    const auto r = eval_report({{"a", 4}, {"b", 4}, {"c", 4}}, data, tags);
    CHECK(r.wosa_total == 0.0);
    CHECK(r.o_acc == 0.0);
    for (const auto& [cat, score] : r.per_category) CHECK(score.wosa == 0.0);
  }
  SUBCASE("mixed, untagged ids count as vl") {
    const auto r = eval_report({{"a", 0}, {"b", 0}, {"c", 2}}, data, {});
    CHECK(r.wosa_total == doctest::Approx(100.0 * 4.0 / 6.0));
    CHECK_FALSE(r.wosa_text.has_value());
    CHECK(r.per_category.at(SkillCategory::logic).count == 2);
    CHECK(r.per_category.at(SkillCategory::logic).o_acc == 0.5);
  }
  SUBCASE("missing prediction names the id") {
    try {
      eval_report({{"a", 0}, {"c", 2}}, data, tags);
      FAIL("expected EvalError");
    } catch (const EvalError& e) {
      CHECK(std::string(e.what()).find(" b") != std::string::npos);
    }
  }
}

TEST_CASE("wosa table has one row per method") {
  const std::vector<PuzzleInstance> data{puzzle("a", SkillCategory::logic, 0)};
  const auto r = eval_report({{"a", 0}}, data, {});
  const auto table = format_wosa_table({{"ours", r}});
  CHECK(table.find("Total-WOSA") != std::string::npos);
  CHECK(table.find("ours") != std::string::npos);
}
