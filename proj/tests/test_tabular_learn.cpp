#include <gtest/gtest.h>

#include <memory>

#include "orchestra/exact_eval.hpp"
#include "orchestra/tabular_learn.hpp"

using namespace orchestra;

namespace {

Roster diamond_roster() {
  return {ExpertSpec::match_longest(), ExpertSpec::greedy_payoff(), ExpertSpec::uniform_random()};
}

ModelConfig pair_config() {
  ModelConfig c;
  c.name = "pair";
  c.class_count = 2;
  c.capacity = 1;
  c.arrival_rates = {0.5, 0.5};
  c.edges = {{0, 1, 1.0}};
  c.discount = 0.5;
  return finalize(c);
}

}  // namespace

TEST(TabularLearn, ConvexUpdate) {
  QTable q(2, 0.9);
  const StateKey k{{1, 0}};
  EXPECT_DOUBLE_EQ(q.update(k, 1, 10.0, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(q.update(k, 1, 10.0, 0.1), 1.9);
  EXPECT_EQ(q.row(k), (std::vector<double>{0.0, 1.9}));
  EXPECT_EQ(q.row(StateKey{{0, 0}}), (std::vector<double>{0.0, 0.0}));
}

TEST(TabularLearn, CenteredAdvantage) {
  const auto a = centered_advantage({3.0, 1.0, 2.0}, {0.5, 0.25, 0.25});
  EXPECT_DOUBLE_EQ(a[0], 0.75);
  EXPECT_DOUBLE_EQ(a[1], -1.25);
  EXPECT_DOUBLE_EQ(a[2], -0.25);
}

TEST(TabularLearn, RewardTransformUnit) {
  const auto rt = RewardTransform::unit(organ_b_config());
  EXPECT_DOUBLE_EQ(rt(-50.0), 0.0);
  EXPECT_DOUBLE_EQ(rt(1000.0), 1.0);
  EXPECT_DOUBLE_EQ(rt.inverse(rt(123.0)), 123.0);
}

TEST(TabularLearn, PrimitiveSlots) {
  const auto c = diamond_config();
  const State s{{1, 0, 0, 1}, {EventKind::Arrival, 1}};
  // Edges: {0,1}, {1,3}, {1,2}, {0,2}, {2,3}.
  EXPECT_EQ(primitive_mask(c, s), (std::vector<bool>{true, true, true, false, false, false}));
  EXPECT_EQ(*primitive_action(c, s, 0), Action::enqueue());
  EXPECT_EQ(*primitive_action(c, s, 2), Action::match(1, 3));
  EXPECT_FALSE(primitive_action(c, s, 3).has_value());
  EXPECT_FALSE(primitive_action(c, s, 4).has_value());
  EXPECT_EQ(masked_argmax({5.0, 1.0, 2.0, 9.0, 0.0, 0.0}, primitive_mask(c, s)), 0u);
}

TEST(TabularLearn, LineFitRecoversAnExactLine) {
  const auto f = fit_line({0.0, 1.0, 2.0, 3.0}, {1.0, -1.0, -3.0, -5.0});
  EXPECT_DOUBLE_EQ(f.slope, -2.0);
  EXPECT_DOUBLE_EQ(f.intercept, 1.0);
  EXPECT_DOUBLE_EQ(f.r_squared, 1.0);
}

TEST(TabularLearn, TdEstimateTouchesOnlyVisitedKeys) {
  const auto c = diamond_config();
  Rng rng(1);
  const auto q = td_estimate(c, WeightTable(3), diamond_roster(), 15, 0.1, rng);
  EXPECT_GE(q.size(), 1u);
  EXPECT_LE(q.size(), 15u);
  EXPECT_THROW(td_estimate(c, WeightTable(3), diamond_roster(), 15, 1.0, rng), std::invalid_argument);
}

TEST(TabularLearn, TdConvergesOnThePairModel) {
  // Averaged over runs, TD(0) with a small step lands on the exact key-level Q.
  const auto c = pair_config();
  const Roster roster{ExpertSpec::greedy_payoff()};
  const ExactModel m(c, roster);
  const auto ev = evaluate_expert(m, 0);
  BiasTraceOptions opt;
  opt.runs = 50;
  opt.steps = 4000;
  opt.alpha = 0.05;
  const auto trace = bias_trace(m, WeightTable(1), opt, 9);
  EXPECT_LT(trace.bias_inf.back(), 3.0 * trace.stderr_max.back() + 1e-3);
  EXPECT_LT(trace.bias_inf.back(), 0.05 * trace.bias_inf.front());
}

TEST(TabularLearn, OracleOrchestrationClimbsTowardTheBestMixture) {
  auto m = std::make_shared<const ExactModel>(diamond_config(), diamond_roster());
  Rng rng(0);
  const auto res = tabular_orchestration_loop(3, PotentialSpec::exponential_fixed(0.1), 30, oracle_estimator(m), rng);
  ASSERT_EQ(res.snapshots.size(), 31u);
  const double v0 = value_at_initial(*m, evaluate_mixture(*m, res.snapshots.front()).v);
  const double vT = value_at_initial(*m, evaluate_mixture(*m, res.snapshots.back()).v);
  EXPECT_NEAR(v0, 88.763901, 1e-5);
  EXPECT_GT(vT, v0 + 0.5);
  EXPECT_LE(vT, 89.616317 + 1e-6);
}

TEST(TabularLearn, QLearningCheckpointsAndDeterminism) {
  const auto c = diamond_config();
  QLearningOptions o;
  o.steps = 300;
  o.checkpoint_every = 15;
  o.alpha = 0.1;
  Rng a(4), b(4);
  const auto r1 = q_learning_baseline(c, diamond_roster(), o, a);
  const auto r2 = q_learning_baseline(c, diamond_roster(), o, b);
  EXPECT_EQ(r1.roster_checkpoints.size(), 20u);
  EXPECT_EQ(r1.checkpoint_steps.back(), 300u);
  EXPECT_EQ(r1.roster_table.rows(), r2.roster_table.rows());

  o.space = ActionSpace::Primitive;
  Rng p(4);
  const auto rp = q_learning_baseline(c, diamond_roster(), o, p);
  EXPECT_EQ(rp.primitive_checkpoints.size(), 20u);
  EXPECT_GT(rp.primitive_table.size(), 0u);
}

TEST(TabularLearnProperty, TdAdvantagesAreZeroSum) {
  const auto c = diamond_config();
  const auto roster = diamond_roster();
  Rng rng(2);
  TdEstimatorOptions o;
  const auto est = td_estimator(c, roster, o);
  WeightTable w(3);
  for (std::size_t t = 1; t <= 200; ++t) {
    for (const auto& ka : est(w, t, rng)) {
      const auto& q = w.at(ka.key);
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += q[k] * ka.advantage[k];
      ASSERT_NEAR(s, 0.0, 1e-9);
      std::vector<double> nq{rng.uniform() + 0.01, rng.uniform() + 0.01, rng.uniform() + 0.01};
      const double z = nq[0] + nq[1] + nq[2];
      for (auto& v : nq) v /= z;
      w.set(ka.key, nq);
    }
  }
}
