#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "smart/decoder.hpp"
#include "smart/puzzle_core.hpp"

namespace smart {

struct RoutingDecision {
  SkillCategory predicted_category = SkillCategory::logic;
  AnswerKind predicted_kind = AnswerKind::key;
  ModelRole chosen_model = ModelRole::key_model;
  std::array<double, kNumCategories> classifier_logits{};
};

// Builds the decision from raw category logits: argmax (lowest index on
// ties) -> category -> answer kind -> model.
RoutingDecision decision_from_logits(const std::array<double, kNumCategories>& logits);

// Zero-shot category classification with the key model.
RoutingDecision classify_puzzle(const Specialist& key_model, const PuzzleInstance& puzzle, const std::string& caption,
                                std::string_view instruction = kDefaultRouterPrompt);

struct RoutedAnswer {
  RoutingDecision decision;
  int option_index = 0;
};

RoutedAnswer route_and_answer(const Specialist& key_model, const Specialist& value_model,
                              const PuzzleInstance& puzzle, const std::string& caption,
                              std::string_view instruction = kDefaultRouterPrompt);

struct RoutingSimulation {
  std::vector<AnswerKind> true_kinds;
  double p_kind = 0.8;
  double key_acc = 1.0;
  double value_acc = 1.0;
  double misrouted_key_acc = 0.2;    // key puzzle answered by the value model
  double misrouted_value_acc = 0.2;  // value puzzle answered by the key model
  long long trials = 100000;
  std::uint64_t seed = 0;
};

// Monte-Carlo estimate of option accuracy under a binary router that picks
// the right specialist with probability p_kind. Trial t scores instance
// t mod n of `true_kinds`.
double simulate_routing(const RoutingSimulation& sim);

// Exact expectation of simulate_routing over the same instance cycle.
double expected_routing_accuracy(const RoutingSimulation& sim);

}  // namespace smart
