// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is nonzero iff any criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include "orchestra/orchestra.hpp"

using namespace orchestra;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::uint64_t seed_for(int criterion) { return derive_seed(20240601, static_cast<std::uint64_t>(criterion)); }

Roster diamond_roster() { return default_roster(diamond_config()); }

// 1. Exact evaluation soundness on the diamond.
Verdict exact_soundness() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExactModel m(diamond_config(), diamond_roster());
  double worst_residual = 0.0, vmax = -1e300, vmin = 1e300;
  for (std::size_t k = 0; k < m.experts(); ++k) {
    const auto ev = evaluate_expert(m, k);
    worst_residual = std::max(worst_residual, mixture_residual(m, ev));
    const double v = value_at_initial(m, ev.v);
    vmax = std::max(vmax, v), vmin = std::min(vmin, v);
  }
  const auto uniform = evaluate_mixture(m, WeightTable(m.experts()));
  worst_residual = std::max(worst_residual, mixture_residual(m, uniform));
  const auto best = best_mixture(m);
  worst_residual = std::max(worst_residual, mixture_residual(m, best.evaluation));
  const auto star = optimal_value(m);
  worst_residual = std::max(worst_residual, optimal_residual(m, star));
  const double vbest = value_at_initial(m, best.evaluation.v), vstar = value_at_initial(m, star);
  const double secs = seconds_since(t0);
  const bool order = vstar >= vbest - 1e-6 && vbest >= vmax - 1e-6 && vmax >= vmin - 1e-6;
  return {worst_residual <= 1e-10 && secs < 10.0 && order && m.key_count() == 1296,
          fmt("keys=%zu residual=%.2e time=%.2fs V*=%.6f Vbest=%.6f max_k=%.6f min_k=%.6f", m.key_count(),
              worst_residual, secs, vstar, vbest, vmax, vmin)};
}

ExperimentResult run_json(nlohmann::json j) { return run_experiment(experiment_from_json(j)); }

// 2. Tabular orchestration beats Q-learning at a matched TD budget.
Verdict beats_q_learning() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto seed = seed_for(2);
  const auto orch = run_json({{"scenario", "diamond"}, {"scheme", "tab-tab"}, {"potential", "ept:0.3"}, {"T", 50},
                              {"H", 15}, {"runs", 20}, {"seed", seed}});
  const auto ql = run_json({{"scenario", "diamond"}, {"scheme", "ql"}, {"T", 50}, {"H", 15}, {"runs", 20},
                            {"seed", seed}, {"ql", {{"epsilon0", 0.3}, {"decay", 0.8}}}});
  const auto a = orch.aggregate.back(), b = ql.aggregate.back();
  const double diff = a.mean - b.mean, se = std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
  const double secs = seconds_since(t0);
  return {diff - 2.0 * se >= 0.0 && secs <= 300.0,
          fmt("budget=%zu orchestrated=%.4f(se %.4f) ql=%.4f(se %.4f) diff=%.4f 2se=%.4f time=%.1fs",
              orch.ticks.back() * 15, a.mean, a.stderr_, b.mean, b.stderr_, diff, 2.0 * se, secs)};
}

// 3. Final value within 10% of the best mixture for each potential.
Verdict best_in_class() {
  const ExactModel m(diamond_config(), diamond_roster());
  const double vbest = value_at_initial(m, best_mixture(m).evaluation.v);
  bool pass = true;
  std::string detail = fmt("Vbest=%.4f", vbest);
  for (const char* pot : {"pp:30", "epc:0.1", "ept:0.3"}) {
    const auto r = run_json({{"scenario", "diamond"}, {"scheme", "tab-tab"}, {"potential", pot}, {"T", 50}, {"H", 15},
                             {"runs", 20}, {"seed", seed_for(3)}});
    const double v = r.aggregate.back().mean;
    const double rel = std::abs(vbest - v) / std::abs(vbest);
    pass = pass && rel <= 0.10;
    detail += fmt(" %s=%.4f(%.2f%%)", pot, v, 100.0 * rel);
  }
  return {pass, detail};
}

// 4. TD bias contracts geometrically; started at the exact Q it stays unbiased.
Verdict bias_contraction() {
  const auto t0 = std::chrono::steady_clock::now();
  const ExactModel m(diamond_config(), diamond_roster());
  BiasTraceOptions opt;
  opt.runs = 200;
  opt.steps = 20'000;
  opt.alpha = 0.1;
  const auto trace = bias_trace(m, WeightTable(m.experts()), opt, seed_for(4));
  opt.start_at_exact = true;
  const auto flat = bias_trace(m, WeightTable(m.experts()), opt, derive_seed(seed_for(4), 1));
  double worst_ratio = 0.0;
  for (std::size_t s = 0; s < flat.tau.size(); ++s)
    if (flat.stderr_max[s] > 0.0) worst_ratio = std::max(worst_ratio, flat.bias_inf[s] / (3.0 * flat.stderr_max[s]));
  const double secs = seconds_since(t0);
  const bool contraction = trace.slope < 0.0 && trace.r_squared > 0.9;
  const bool unbiased = worst_ratio <= 1.0;
  return {contraction && unbiased && secs <= 600.0,
          fmt("tracked=%zu slope=%.3e R2=%.4f bias[0]=%.3f bias[end]=%.3e | exact start: max bias/(3 se)=%.3f "
              "time=%.1fs",
              trace.tracked, trace.slope, trace.r_squared, trace.bias_inf.front(), trace.bias_inf.back(),
              worst_ratio, secs)};
}

// 5. Observed adversarial regret never exceeds the worst-case bounds.
Verdict regret_bounds() {
  Rng rng(seed_for(5));
  std::size_t violations = 0, games = 0;
  double tightest = 0.0;
  for (std::size_t T : {10, 100, 1000})
    for (std::size_t K : {2, 3, 10}) {
      const double eta_opt = std::sqrt(2.0 * std::log(static_cast<double>(K)) / static_cast<double>(T));
      for (const auto& spec : {PotentialSpec::polynomial_for(K), PotentialSpec::exponential_fixed(0.1),
                               PotentialSpec::exponential_fixed(eta_opt)}) {
        const auto chk = adversarial_regret_check(spec, T, K, random_sign_payoffs(), 1000, rng);
        violations += chk.violations;
        games += 1000;
        tightest = std::max(tightest, chk.max_regret / chk.bound);
      }
    }
  return {violations == 0, fmt("games=%zu violations=%zu max regret/bound=%.3f", games, violations, tightest)};
}

// 6. Advantage estimates are zero-sum under their weights and bounded by 1/(1-gamma).
Verdict advantage_structure() {
  const auto c = diamond_config();
  const auto roster = diamond_roster();
  const std::size_t K = roster.size();
  const double M = 1.0 / (1.0 - c.discount);
  const RewardTransform unit = RewardTransform::unit(c);
  Rng rng(seed_for(6));
  auto random_weights = [&] {
    std::vector<double> q(K);
    double z = 0.0;
    for (auto& v : q) z += v = -std::log(1.0 - rng.uniform());
    for (auto& v : q) v /= z;
    return q;
  };
  std::size_t checked = 0, violations = 0;
  double worst_sum = 0.0, worst_abs = 0.0;
  auto check = [&](const std::vector<double>& q, const std::vector<double>& a) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      s += q[k] * a[k];
      worst_abs = std::max(worst_abs, std::abs(a[k]));
      if (std::abs(a[k]) > M + 1e-9) ++violations;
    }
    worst_sum = std::max(worst_sum, std::abs(s));
    if (std::abs(s) > 1e-9) ++violations;
    ++checked;
  };

  // Tabular: TD advantages on normalized rewards under freshly randomized weights.
  TdEstimatorOptions td;
  td.reward = unit;
  td.alpha = 0.5;
  const auto est = td_estimator(c, roster, td);
  WeightTable w(K);
  for (std::size_t t = 1; checked < 50'000; ++t) {
    for (const auto& ka : est(w, t, rng)) check(w.at(ka.key), ka.advantage);
    for (const auto& key : w.keys()) w.set(key, random_weights());
    for (int i = 0; i < 5; ++i) {
      Queues q(static_cast<std::size_t>(c.class_count));
      for (auto& v : q) v = static_cast<int>(rng.below(static_cast<std::size_t>(c.capacity) + 1));
      w.set(StateKey{q}, random_weights());
    }
  }
  // Neural: randomly initialized critics, including ones whose raw outputs leave the envelope.
  CriticOptions co;
  co.hidden = {16, 16};
  while (checked < 100'000) {
    co.value_scale = M * std::pow(10.0, rng.uniform(-1.0, 2.0));
    const Critic critic = make_critic(feature_width(c, false), K, c.discount, co, rng);
    for (int i = 0; i < 500 && checked < 100'000; ++i) {
      std::vector<double> x(static_cast<std::size_t>(c.class_count));
      for (auto& v : x) v = rng.uniform(-2.0, 3.0);
      const auto q = random_weights();
      check(q, critic_advantage(critic, q, x, ValueEnvelope{0.0, M}));
    }
  }
  return {violations == 0, fmt("constructions=%zu violations=%zu max|sum q A|=%.2e max|A|=%.3f envelope=%.1f",
                               checked, violations, worst_sum, worst_abs, M)};
}

// 7. Gradients, Adam and actor-target telescoping.
Verdict neural_correctness() {
  Rng rng(seed_for(7));
  double grad_err = 0.0;
  for (const auto& r : gradient_check_suite(rng)) grad_err = std::max(grad_err, r.error);

  double adam_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    std::vector<double> p(n), g(n);
    for (auto& v : p) v = rng.normal();
    for (auto& v : g) v = rng.normal() * std::pow(10.0, rng.uniform(-4.0, 2.0));
    const double alpha = std::pow(10.0, rng.uniform(-4.0, -1.0));
    auto st = AdamState::for_params(n, alpha);
    const auto before = p;
    adam_update(p, g, st);
    for (std::size_t i = 0; i < n; ++i)
      adam_err = std::max(adam_err, std::abs(p[i] - (before[i] - alpha * g[i] / (std::abs(g[i]) + st.eps))));
  }

  double tele_err = 0.0;
  for (int seq = 0; seq < 100; ++seq) {
    const std::size_t K = 2 + rng.below(9);
    const auto spec = PotentialSpec::exponential_fixed(rng.uniform(0.01, 1.0));
    std::vector<double> cum(K, 0.0), p(K, 1.0 / static_cast<double>(K));
    for (std::size_t t = 1; t <= 50; ++t) {
      std::vector<double> a(K);
      for (auto& v : a) v = rng.uniform(-3.0, 3.0);
      for (std::size_t k = 0; k < K; ++k) cum[k] += a[k];
      p = actor_target(spec, t, p, a);
      const auto ref = update_weights(spec, t + 1, cum);
      for (std::size_t k = 0; k < K; ++k) tele_err = std::max(tele_err, std::abs(p[k] - ref[k]));
    }
  }
  return {grad_err <= 1e-4 && adam_err <= 1e-10 && tele_err <= 1e-6,
          fmt("gradient rel err=%.2e adam err=%.2e telescoping err=%.2e", grad_err, adam_err, tele_err)};
}

// 8. Monte Carlo agrees with exact evaluation for every diamond expert.
Verdict monte_carlo_vs_exact() {
  const auto c = diamond_config();
  const auto roster = diamond_roster();
  const ExactModel m(c, roster);
  std::vector<Estimate> est(roster.size());
  parallel_for(roster.size(), 0, [&](std::size_t k) {
    Rng rng(derive_seed(seed_for(8), k));
    est[k] = monte_carlo_value(c, expert_policy(c, roster[k]), 200, 10'000, true, rng);
  });
  bool pass = true;
  std::string detail;
  for (std::size_t k = 0; k < roster.size(); ++k) {
    const double exact = value_at_initial(m, evaluate_expert(m, k).v);
    const double z = (est[k].mean - exact) / est[k].stderr_;
    pass = pass && std::abs(z) <= 3.0;
    detail += fmt("%s%s: mc=%.4f exact=%.4f z=%.2f", k ? " " : "", expert_name(roster[k]).c_str(), est[k].mean,
                  exact, z);
  }
  return {pass, detail};
}

// 9. Desk-scale organ experiment: neural orchestration is not worse than the best expert.
Verdict organ_desk_scale() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = organ_b_config();
  const Roster roster{ExpertSpec::match_longest(), ExpertSpec::greedy_payoff()};
  std::vector<Estimate> experts(roster.size());
  parallel_for(roster.size(), 0, [&](std::size_t k) {
    Rng rng(derive_seed(seed_for(9), 100 + k));
    experts[k] = monte_carlo_value(c, expert_policy(c, roster[k]), 200, 2000, false, rng);
  });
  const auto r = run_json({{"scenario", "organ_b"}, {"roster", {"pi1", "pi2"}}, {"scheme", "nn-nn"}, {"T", 50},
                           {"H", 30}, {"runs", 5}, {"seed", seed_for(9)},
                           {"evaluation", {{"mode", "monte-carlo"}, {"steps", 200}, {"episodes", 2000},
                                           {"discounted", false}, {"every", 50}}}});
  const auto fin = r.aggregate.back();
  const std::size_t top = experts[0].mean >= experts[1].mean ? 0 : 1;
  const double se = std::sqrt(fin.stderr_ * fin.stderr_ + experts[top].stderr_ * experts[top].stderr_);
  const double threshold = experts[top].mean - 2.0 * se;
  const double secs = seconds_since(t0);
  return {fin.mean >= threshold && secs <= 1800.0,
          fmt("pi1=%.1f(se %.1f) pi2=%.1f(se %.1f) orchestrated t0=%.1f final=%.1f(se %.1f) threshold=%.1f time=%.1fs",
              experts[0].mean, experts[0].stderr_, experts[1].mean, experts[1].stderr_, r.aggregate.front().mean,
              fin.mean, fin.stderr_, threshold, secs)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// 10. Repeated runs with one seed write byte-identical outputs.
Verdict determinism() {
  const auto root = std::filesystem::temp_directory_path() / ("orchestra_acceptance_" + std::to_string(::getpid()));
  std::size_t compared = 0;
  bool same = true;
  std::string mismatch;
  const std::vector<nlohmann::json> configs{
      {{"scenario", "diamond"}, {"scheme", "tab-tab"}, {"T", 10}, {"runs", 4}},
      {{"scenario", "diamond"}, {"scheme", "nn-nn"}, {"T", 5}, {"runs", 3}},
      {{"scenario", "diamond"}, {"scheme", "ql"}, {"T", 10}, {"runs", 3}, {"ql", {{"space", "primitive"}}}},
      {{"scenario", "organ_b"}, {"roster", {"pi1", "pi2"}}, {"scheme", "tab-nn"}, {"T", 3}, {"H", 20}, {"runs", 2},
       {"evaluation", {{"episodes", 50}}}}};
  for (std::size_t i = 0; i < configs.size(); ++i) {
    auto cfg = configs[i];
    cfg["seed"] = seed_for(10) + i;
    const auto a = root / std::to_string(i) / "a", b = root / std::to_string(i) / "b";
    cfg["threads"] = 0;
    write_run_outputs(a, run_json(cfg));
    cfg["threads"] = 1;
    write_run_outputs(b, run_json(cfg));
    for (const char* f : {"curve.csv", "summary.json"}) {
      ++compared;
      const auto x = slurp(a / f), y = slurp(b / f);
      if (x.empty() || x != y) same = false, mismatch += fmt(" %zu/%s", i, f);
    }
  }
  std::filesystem::remove_all(root);
  return {same, fmt("configs=%zu files compared=%zu%s", configs.size(), compared,
                    same ? "" : (" mismatched:" + mismatch).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"exact evaluation soundness", exact_soundness},
      {"orchestration beats Q-learning at matched budget", beats_q_learning},
      {"best-in-class proximity", best_in_class},
      {"TD bias contraction", bias_contraction},
      {"adversarial regret bounds", regret_bounds},
      {"advantage zero-sum and boundedness", advantage_structure},
      {"neural correctness", neural_correctness},
      {"Monte Carlo vs exact", monte_carlo_vs_exact},
      {"organ desk scale", organ_desk_scale},
      {"determinism", determinism}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %d (%s): %s | %s\n", id, criteria[i].first, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
