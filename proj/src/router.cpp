#include "smart/router.hpp"

#include "smart/errors.hpp"
#include "smart/random.hpp"

namespace smart {

RoutingDecision decision_from_logits(const std::array<double, kNumCategories>& logits) {
  RoutingDecision d;
  d.classifier_logits = logits;
  d.predicted_category = kAllCategories[static_cast<std::size_t>(argmax_lowest(logits))];
  d.predicted_kind = answer_kind_for_category(d.predicted_category);
  d.chosen_model = role_for_kind(d.predicted_kind);
  return d;
}

RoutingDecision classify_puzzle(const Specialist& key_model, const PuzzleInstance& puzzle, const std::string& caption,
                                std::string_view instruction) {
  if (key_model.role() != ModelRole::key_model) throw PreconditionError("classify_puzzle needs the key model");
  return decision_from_logits(key_model.category_logits(puzzle, caption, instruction));
}

RoutedAnswer route_and_answer(const Specialist& key_model, const Specialist& value_model,
                              const PuzzleInstance& puzzle, const std::string& caption,
                              std::string_view instruction) {
  if (value_model.role() != ModelRole::value_model) {
    throw PreconditionError("route_and_answer: second model must be the value model");
  }
  RoutedAnswer out;
  out.decision = classify_puzzle(key_model, puzzle, caption, instruction);
  const Specialist& chosen = out.decision.chosen_model == ModelRole::key_model ? key_model : value_model;
  out.option_index = chosen.answer(puzzle, caption);
  return out;
}

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError(std::string("simulate_routing: ") + name + " not in [0,1]");
}

void check(const RoutingSimulation& sim) {
  check_probability(sim.p_kind, "p_kind");
  check_probability(sim.key_acc, "key_acc");
  check_probability(sim.value_acc, "value_acc");
  check_probability(sim.misrouted_key_acc, "misrouted_key_acc");
  check_probability(sim.misrouted_value_acc, "misrouted_value_acc");
  if (sim.trials < 1) throw PreconditionError("simulate_routing: trials must be >= 1");
  if (sim.true_kinds.empty()) throw PreconditionError("simulate_routing: no instances");
}

}  // namespace

double simulate_routing(const RoutingSimulation& sim) {
  check(sim);
  Rng rng(sim.seed);
  long long correct = 0;
  const auto n = static_cast<long long>(sim.true_kinds.size());
  for (long long t = 0; t < sim.trials; ++t) {
    const AnswerKind kind = sim.true_kinds[static_cast<std::size_t>(t % n)];
    const bool routed_right = rng.bernoulli(sim.p_kind);
    double acc;
    if (kind == AnswerKind::key) {
      acc = routed_right ? sim.key_acc : sim.misrouted_key_acc;
    } else {
      acc = routed_right ? sim.value_acc : sim.misrouted_value_acc;
    }
    if (rng.bernoulli(acc)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(sim.trials);
}

double expected_routing_accuracy(const RoutingSimulation& sim) {
  check(sim);
  const auto n = static_cast<long long>(sim.true_kinds.size());
  double total = 0.0;
  // Trial t uses instance t mod n: full cycles plus a prefix.
  for (long long i = 0; i < n; ++i) {
    const long long uses = sim.trials / n + (i < sim.trials % n ? 1 : 0);
    const AnswerKind kind = sim.true_kinds[static_cast<std::size_t>(i)];
    const double p = kind == AnswerKind::key
                         ? sim.p_kind * sim.key_acc + (1.0 - sim.p_kind) * sim.misrouted_key_acc
                         : sim.p_kind * sim.value_acc + (1.0 - sim.p_kind) * sim.misrouted_value_acc;
    total += static_cast<double>(uses) * p;
  }
  return total / static_cast<double>(sim.trials);
}

}  // namespace smart
