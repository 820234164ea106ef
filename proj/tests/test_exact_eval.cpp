#include <gtest/gtest.h>

#include <memory>
#include <sstream>

#include "orchestra/exact_eval.hpp"

using namespace orchestra;

namespace {

// Two classes joined by a unit-reward edge, capacity 1. Matching at once is
// optimal and V(mu0) = gamma * 0.5 / (1 - gamma/2 - gamma^2/2).
ModelConfig pair_config(double gamma) {
  ModelConfig c;
  c.name = "pair";
  c.class_count = 2;
  c.capacity = 1;
  c.arrival_rates = {0.5, 0.5};
  c.edges = {{0, 1, 1.0}};
  c.discount = gamma;
  return finalize(c);
}

Roster diamond_roster() {
  return {ExpertSpec::match_longest(), ExpertSpec::greedy_payoff(), ExpertSpec::uniform_random()};
}

class DiamondExact : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { model_ = std::make_unique<ExactModel>(diamond_config(), diamond_roster()); }
  static void TearDownTestSuite() { model_.reset(); }
  static std::unique_ptr<ExactModel> model_;
};
std::unique_ptr<ExactModel> DiamondExact::model_;

}  // namespace

TEST(ExactEval, PairClosedForm) {
  for (double gamma : {0.5, 0.8, 0.95}) {
    const ExactModel m(pair_config(gamma), {ExpertSpec::greedy_payoff()});
    const double expected = gamma * 0.5 / (1.0 - gamma / 2.0 - gamma * gamma / 2.0);
    EXPECT_NEAR(value_at_initial(m, evaluate_expert(m, 0).v), expected, 1e-8);
    EXPECT_NEAR(value_at_initial(m, optimal_value(m)), expected, 1e-8);
  }
}

TEST_F(DiamondExact, FrozenExpertValues) {
  const ExactModel& m = *model_;
  EXPECT_EQ(m.state_count(), 5184u);
  EXPECT_EQ(m.key_count(), 1296u);
  EXPECT_NEAR(value_at_initial(m, evaluate_expert(m, 0).v), 88.554697, 1e-5);
  EXPECT_NEAR(value_at_initial(m, evaluate_expert(m, 1).v), 89.616317, 1e-5);
  EXPECT_NEAR(value_at_initial(m, evaluate_expert(m, 2).v), 87.950229, 1e-5);
  EXPECT_NEAR(value_at_initial(m, evaluate_mixture(m, WeightTable(3)).v), 88.763901, 1e-5);
  EXPECT_NEAR(value_at_initial(m, optimal_value(m)), 111.070731, 1e-5);
}

TEST_F(DiamondExact, BestMixtureAndOrdering) {
  const ExactModel& m = *model_;
  const auto best = best_mixture(m);
  const double vbest = value_at_initial(m, best.evaluation.v);
  const double vstar = value_at_initial(m, optimal_value(m));
  EXPECT_NEAR(vbest, 89.616317, 1e-5);
  EXPECT_GE(vstar, vbest - 1e-6);
  for (std::size_t k = 0; k < m.experts(); ++k) EXPECT_GE(vbest, value_at_initial(m, evaluate_expert(m, k).v) - 1e-6);
  EXPECT_LE(best.improvement_rounds, 5);
}

TEST_F(DiamondExact, ResidualsMeetTolerance) {
  const ExactModel& m = *model_;
  const auto ev = evaluate_mixture(m, WeightTable(3));
  EXPECT_LE(mixture_residual(m, ev), 1e-10);
  EXPECT_LE(optimal_residual(m, optimal_value(m)), 1e-10);
}

TEST_F(DiamondExact, GreedyPolicyOfOptimalValueAttainsIt) {
  const ExactModel& m = *model_;
  const auto vstar = optimal_value(m);
  const auto acts = greedy_actions(m, vstar);
  const auto v = evaluate_action_policy(m, [&](const State& s) { return acts[m.state_index(s)]; });
  EXPECT_NEAR(value_at_initial(m, v), value_at_initial(m, vstar), 1e-8);
}

TEST_F(DiamondExact, AdvantagesAreZeroSumUnderTheirWeights) {
  const ExactModel& m = *model_;
  WeightTable w(3);
  Rng rng(5);
  for (std::size_t key = 0; key < m.key_count(); key += 7) {
    std::vector<double> q{rng.uniform(), rng.uniform(), rng.uniform()};
    const double z = q[0] + q[1] + q[2];
    for (auto& v : q) v /= z;
    w.set(StateKey{m.indexer().queues(key)}, q);
  }
  const auto ev = evaluate_mixture(m, w);
  for (std::size_t s = 0; s < m.state_count(); ++s) {
    const auto& q = w.at(m.state(s).key());
    double state_sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) state_sum += q[k] * ev.a_at(s, k);
    ASSERT_NEAR(state_sum, 0.0, 1e-9);
  }
  for (std::size_t key = 0; key < m.key_count(); ++key) {
    const auto& q = w.at(StateKey{m.indexer().queues(key)});
    double key_sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) key_sum += q[k] * ev.key_a_at(key, k);
    ASSERT_NEAR(key_sum, 0.0, 1e-9);
  }
}

TEST_F(DiamondExact, MixtureValueIsLinearInADiracTable) {
  // A table that is Dirac on expert 1 everywhere equals evaluating expert 1.
  const ExactModel& m = *model_;
  WeightTable w(3, {0.0, 1.0, 0.0});
  const auto a = evaluate_mixture(m, w);
  const auto b = evaluate_expert(m, 1);
  for (std::size_t s = 0; s < m.state_count(); ++s) ASSERT_NEAR(a.value(s), b.value(s), 1e-9);
}

TEST(ExactEval, ValueCsvHasOneRowPerState) {
  const ExactModel m(pair_config(0.5), {ExpertSpec::greedy_payoff()});
  std::ostringstream os;
  write_value_csv(os, m, evaluate_expert(m, 0).v);
  const std::string text = os.str();
  EXPECT_EQ(text.rfind("queue_vector,event,value\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), m.state_count() + 1);
}

TEST(ExactEval, RefusesOversizedStateSpaces) {
  EXPECT_THROW(ExactModel(organ_b_config(), {ExpertSpec::greedy_payoff()}), StateSpaceTooLarge);
}
