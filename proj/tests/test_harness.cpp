#include <gtest/gtest.h>

#include <sstream>

#include "orchestra/harness.hpp"

using namespace orchestra;

namespace {

nlohmann::json small_run(const std::string& scheme) {
  return {{"scenario", "diamond"}, {"scheme", scheme}, {"T", 4}, {"H", 10}, {"runs", 3}, {"seed", 5}};
}

std::string curve_text(const ExperimentResult& r) {
  std::ostringstream os;
  write_curve_csv(os, r);
  return os.str();
}

}  // namespace

TEST(Harness, MeanAndStderr) {
  const auto e = mean_and_stderr({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(e.mean, 2.5);
  EXPECT_NEAR(e.stderr_, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
  EXPECT_EQ(mean_and_stderr({7.0}).stderr_, 0.0);
}

TEST(Harness, RegretBoundValues) {
  EXPECT_NEAR(regret_bound(PotentialSpec::polynomial_for(3), 100, 3), 25.674255066133192, 1e-12);
  EXPECT_NEAR(regret_bound(PotentialSpec::exponential_fixed(0.1), 100, 2), 11.931471805599452, 1e-12);
  EXPECT_NEAR(regret_bound(PotentialSpec::exponential_varying(std::sqrt(2.0)), 100, 2), 24.13690546156723, 1e-12);
}

TEST(Harness, TheoremBoundValues) {
  EXPECT_NEAR(theorem_bound(0.05, 0.8, 50, 10.0), 5.25, 1e-12);
  EXPECT_NEAR(theorem_bound(0.05, 0.8, 50, 10.0, 0.5), 10.151290717342736, 1e-12);
  EXPECT_THROW(theorem_bound(0.0, 1.0, 50, 1.0), std::invalid_argument);
  EXPECT_THROW(theorem_bound(0.0, 0.9, 50, 1.0, 0.0), std::invalid_argument);
}

TEST(Harness, RegretGameAgainstAConstantLeader) {
  // Expert 0 always pays 1, expert 1 always -1: Hedge regret is bounded by ln K / eta.
  Rng rng(0);
  const PayoffGenerator gen = [](std::size_t, std::size_t K, Rng&) {
    std::vector<double> g(K, -1.0);
    g[0] = 1.0;
    return g;
  };
  const auto spec = PotentialSpec::exponential_fixed(0.5);
  const double r = play_regret_game(spec, 1000, 2, gen, rng);
  EXPECT_GT(r, 0.0);
  EXPECT_LE(r, std::log(2.0) / 0.5 * 2.0);
}

TEST(Harness, SmallRegretSweepPasses) {
  Rng rng(1);
  for (const auto& spec : {PotentialSpec::polynomial_for(3), PotentialSpec::exponential_fixed(0.1)}) {
    const auto chk = adversarial_regret_check(spec, 100, 3, random_sign_payoffs(), 200, rng);
    EXPECT_TRUE(chk.pass) << to_string(spec) << " max " << chk.max_regret << " bound " << chk.bound;
  }
}

TEST(Harness, TheoremCheckOnDiamond) {
  const auto c = diamond_config();
  const auto chk = theorem_check(c, default_roster(c), 20);
  EXPECT_TRUE(chk.pass);
  EXPECT_GE(chk.gap, -1e-9);
  EXPECT_LE(chk.average, chk.best + 1e-9);
}

TEST(Harness, MonteCarloMatchesExactOnDiamond) {
  const auto c = diamond_config();
  const ExactModel m(c, {ExpertSpec::greedy_payoff()});
  const double exact = value_at_initial(m, evaluate_expert(m, 0).v);
  Rng rng(17);
  const auto mc = monte_carlo_value(c, expert_policy(c, ExpertSpec::greedy_payoff()), 100, 2000, true, rng);
  EXPECT_LT(std::abs(mc.mean - exact), 4.0 * mc.stderr_);
}

TEST(Harness, ConfigDefaultsAndErrors) {
  const auto d = experiment_from_json({{"scenario", "diamond"}});
  EXPECT_EQ(d.roster.size(), 3u);
  EXPECT_TRUE(d.evaluation.exact);
  const auto o = experiment_from_json({{"scenario", "organ_b"}});
  EXPECT_EQ(o.roster.size(), 2u);
  EXPECT_FALSE(o.evaluation.exact);
  EXPECT_FALSE(o.evaluation.discounted);
  EXPECT_THROW(experiment_from_json({{"scheme", "bogus"}}), ConfigError);
  EXPECT_THROW(experiment_from_json({{"scenario", "organ_b"}, {"evaluation", {{"mode", "exact"}}}}), ConfigError);
  EXPECT_THROW(experiment_from_json({{"scenario", "nowhere"}}), ConfigError);
}

TEST(Harness, ConfigJsonRoundTrip) {
  auto j = small_run("tab-tab");
  j["potential"] = "pp:30";
  j["epsilon"] = 0.05;
  const auto cfg = experiment_from_json(j);
  const auto again = experiment_from_json(to_json(cfg));
  EXPECT_EQ(to_json(again), to_json(cfg));
}

TEST(Harness, RunIsDeterministicAndIndependentOfThreads) {
  for (const char* scheme : {"tab-tab", "ql"}) {
    auto j = small_run(scheme);
    j["threads"] = 1;
    const auto a = run_experiment(experiment_from_json(j));
    j["threads"] = 3;
    const auto b = run_experiment(experiment_from_json(j));
    EXPECT_EQ(curve_text(a), curve_text(b)) << scheme;
    EXPECT_EQ(a.summary.dump(), b.summary.dump()) << scheme;
  }
}

TEST(Harness, CurveLayout) {
  const auto r = run_experiment(experiment_from_json(small_run("tab-tab")));
  EXPECT_EQ(r.ticks, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(r.points.size(), 15u);
  EXPECT_EQ(r.artifacts.size(), 3u);
  EXPECT_EQ(r.artifacts[0].name, "weights_run0.json");
  const std::string text = curve_text(r);
  EXPECT_EQ(text.rfind("run,t,value,stderr\n0,0,", 0), 0u);
  EXPECT_NE(text.find("\nmean,4,"), std::string::npos);
  EXPECT_NEAR(r.summary["initial"]["mean"].get<double>(), 88.763901, 1e-5);
  EXPECT_NEAR(r.summary["reference"]["best_mixture"].get<double>(), 89.616317, 1e-5);
}

TEST(Harness, BaselineAxisCountsUpdates) {
  auto j = small_run("ql");
  const auto r = run_experiment(experiment_from_json(j));
  EXPECT_EQ(r.ticks.back(), 40u);
  EXPECT_EQ(r.summary["x_axis"], "estimation_updates");
}

TEST(Harness, DominanceReport) {
  WeightTable w(2);
  w.set(StateKey{{0}}, {0.9, 0.1});
  w.set(StateKey{{1}}, {0.2, 0.8});
  w.set(StateKey{{2}}, {0.6, 0.4});
  const auto share = dominance_report(w);
  EXPECT_NEAR(share[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(share[1], 1.0 / 3.0, 1e-15);
  EXPECT_THROW(dominance_report(WeightTable(2)), std::invalid_argument);
}

TEST(Harness, ParallelForPropagatesErrors) {
  std::vector<int> hit(20, 0);
  parallel_for(20, 4, [&](std::size_t i) { hit[i] = 1; });
  EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 20);
  EXPECT_THROW(parallel_for(8, 4, [](std::size_t i) {
                 if (i == 5) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}
