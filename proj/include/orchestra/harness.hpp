#pragma once

// Experiment driver and theory checks: Monte Carlo evaluation, learning-scheme
// dispatch with learning curves, the expert-advice regret game, the
// value-gap bound and the dominance report.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "orchestra/exact_eval.hpp"
#include "orchestra/experts.hpp"
#include "orchestra/matching_env.hpp"
#include "orchestra/neural.hpp"
#include "orchestra/orchestrator.hpp"
#include "orchestra/rng.hpp"
#include "orchestra/tabular_learn.hpp"

namespace orchestra {

// ---------------------------------------------------------------------------
// Monte Carlo evaluation

struct Estimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline Estimate mean_and_stderr(const std::vector<double>& xs) {
  Estimate e;
  if (xs.empty()) return e;
  const auto n = static_cast<double>(xs.size());
  for (double x : xs) e.mean += x / n;
  if (xs.size() < 2) return e;
  double ss = 0.0;
  for (double x : xs) ss += (x - e.mean) * (x - e.mean);
  e.stderr_ = std::sqrt(ss / (n - 1.0) / n);
  return e;
}

inline ActionPolicy expert_policy(const ModelConfig& c, const ExpertSpec& expert) {
  return [c, expert](const State& s, Rng& rng) { return sample_expert_action(c, s, expert, rng); };
}

inline ActionPolicy mixture_policy(const ModelConfig& c, ExpertSelector selector, const Roster& roster) {
  return [c, selector = std::move(selector), roster](const State& s, Rng& rng) {
    return sample_and_act(c, s, selector, roster, 0.0, rng).action;
  };
}

// Each episode starts from the initial distribution; discounted episodes sum
// gamma^tau r_tau, plain ones sum r_tau.
inline Estimate monte_carlo_value(const ModelConfig& c, const ActionPolicy& policy, std::size_t steps,
                                  std::size_t episodes, bool discounted, Rng& rng) {
  if (steps < 1 || episodes < 1) throw std::invalid_argument("monte_carlo_value needs steps and episodes >= 1");
  std::vector<double> totals(episodes);
  for (auto& total : totals) {
    State s = sample_initial(c, rng);
    double g = 0.0, disc = 1.0;
    for (std::size_t tau = 0; tau < steps; ++tau) {
      const Action a = policy(s, rng);
      auto [next, r] = step(c, s, a, rng);
      g += disc * r;
      if (discounted) disc *= c.discount;
      s = std::move(next);
    }
    total = g;
  }
  return mean_and_stderr(totals);
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct EvaluationSpec {
  bool exact = true;
  std::size_t steps = 200;
  std::size_t episodes = 1000;
  bool discounted = true;
  std::size_t every = 1;  // evaluate every `every` rounds (and always the first and last)
};

struct ExperimentConfig {
  nlohmann::json scenario = "diamond";
  ModelConfig model;
  Roster roster;
  std::string scheme = "tab-tab";  // tab-tab | tab-nn | nn-nn | ql | ddqn-direct
  PotentialSpec potential = PotentialSpec::exponential_varying(0.3);
  std::size_t T = 50;
  std::size_t H = 15;
  std::size_t runs = 20;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // worker threads for runs; 0 = hardware concurrency. Results do not depend on it.
  EvaluationSpec evaluation{};
  double td_alpha = 0.1;
  bool warm_start = true;
  double epsilon = 0.0;
  bool normalize_rewards = false;
  QLearningOptions ql{};
  DdqnOptions ddqn{};
  CriticOptions critic{};
  ActorCriticOptions actor{};
};

inline const std::vector<std::string>& scheme_names() {
  static const std::vector<std::string> names{"tab-tab", "tab-nn", "nn-nn", "ql", "ddqn-direct"};
  return names;
}

inline Roster default_roster(const ModelConfig& c) {
  if (c.name == "organ_a")
    return {ExpertSpec::match_longest(), ExpertSpec::greedy_payoff(),
            ExpertSpec::restricted_greedy(default_restricted_set(c)), ExpertSpec::uniform_random()};
  if (c.name == "organ_b") return {ExpertSpec::match_longest(), ExpertSpec::greedy_payoff()};
  return {ExpertSpec::match_longest(), ExpertSpec::greedy_payoff(), ExpertSpec::uniform_random()};
}

namespace detail {

inline std::vector<std::size_t> size_list(const nlohmann::json& j) { return j.get<std::vector<std::size_t>>(); }

inline ActionSpace parse_space(const std::string& s) {
  if (s == "roster" || s == "experts") return ActionSpace::Roster;
  if (s == "primitive" || s == "actions") return ActionSpace::Primitive;
  throw ConfigError("space", "expected 'roster' or 'primitive', got '" + s + "'");
}

inline std::string space_name(ActionSpace s) { return s == ActionSpace::Roster ? "roster" : "primitive"; }

inline void read_critic(const nlohmann::json& j, CriticOptions& o) {
  if (j.contains("hidden")) o.hidden = size_list(j.at("hidden"));
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.decay = j.value("decay", o.decay);
  o.batch = j.value("batch", o.batch);
  o.capacity = j.value("capacity", o.capacity);
  o.sync_period = j.value("sync_period", o.sync_period);
  o.value_scale = j.value("value_scale", o.value_scale);
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "plain") o.mode = CriticMode::Plain;
    else if (m == "double") o.mode = CriticMode::Double;
    else throw ConfigError("critic.mode", "expected 'plain' or 'double'");
  }
}

inline nlohmann::json critic_json(const CriticOptions& o) {
  return {{"hidden", o.hidden},           {"learning_rate", o.learning_rate},
          {"decay", o.decay},             {"batch", o.batch},
          {"capacity", o.capacity},       {"sync_period", o.sync_period},
          {"value_scale", o.value_scale}, {"mode", o.mode == CriticMode::Plain ? "plain" : "double"}};
}

}  // namespace detail

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "experiment config must be a JSON object");
  ExperimentConfig cfg;
  try {
    if (j.contains("scenario")) cfg.scenario = j.at("scenario");
    cfg.model = build_scenario(cfg.scenario);
    cfg.roster = j.contains("roster") ? roster_from_json(j.at("roster"), cfg.model) : default_roster(cfg.model);
    cfg.scheme = j.value("scheme", cfg.scheme);
    if (std::find(scheme_names().begin(), scheme_names().end(), cfg.scheme) == scheme_names().end())
      throw ConfigError("scheme", "unknown scheme '" + cfg.scheme + "'");
    if (j.contains("potential")) cfg.potential = parse_potential(j.at("potential").get<std::string>());
    cfg.T = j.value("T", cfg.T);
    cfg.H = j.value("H", cfg.H);
    cfg.runs = j.value("runs", cfg.runs);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.td_alpha = j.value("td_alpha", cfg.td_alpha);
    cfg.warm_start = j.value("warm_start", cfg.warm_start);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.normalize_rewards = j.value("normalize_rewards", cfg.normalize_rewards);
    const double keys = std::pow(static_cast<double>(cfg.model.capacity + 1), cfg.model.class_count);
    if (keys > static_cast<double>(kDefaultStateCap)) {
      // Organ-style default: plain 200-step returns.
      cfg.evaluation.exact = false;
      cfg.evaluation.discounted = false;
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      const std::string mode = e.value("mode", cfg.evaluation.exact ? "exact" : "monte-carlo");
      if (mode != "exact" && mode != "monte-carlo") throw ConfigError("evaluation.mode", "expected exact or monte-carlo");
      cfg.evaluation.exact = mode == "exact";
      if (cfg.evaluation.exact && keys > static_cast<double>(kDefaultStateCap))
        throw ConfigError("evaluation.mode", "scenario '" + cfg.model.name + "' is too large for exact evaluation");
      cfg.evaluation.steps = e.value("steps", cfg.evaluation.steps);
      cfg.evaluation.episodes = e.value("episodes", cfg.evaluation.episodes);
      cfg.evaluation.discounted = e.value("discounted", cfg.evaluation.discounted);
      cfg.evaluation.every = std::max<std::size_t>(1, e.value("every", cfg.evaluation.every));
    }
    if (j.contains("ql")) {
      const auto& q = j.at("ql");
      if (q.contains("space")) cfg.ql.space = detail::parse_space(q.at("space").get<std::string>());
      cfg.ql.alpha = q.value("alpha", cfg.ql.alpha);
      cfg.ql.epsilon0 = q.value("epsilon0", cfg.ql.epsilon0);
      cfg.ql.decay = q.value("decay", cfg.ql.decay);
    }
    if (j.contains("ddqn")) {
      const auto& d = j.at("ddqn");
      if (d.contains("space")) cfg.ddqn.space = detail::parse_space(d.at("space").get<std::string>());
      cfg.ddqn.epsilon0 = d.value("epsilon0", cfg.ddqn.epsilon0);
      cfg.ddqn.epsilon_decay = d.value("epsilon_decay", cfg.ddqn.epsilon_decay);
      cfg.ddqn.epsilon_min = d.value("epsilon_min", cfg.ddqn.epsilon_min);
      if (d.contains("net")) detail::read_critic(d.at("net"), cfg.ddqn.net);
    }
    if (j.contains("critic")) detail::read_critic(j.at("critic"), cfg.critic);
    if (j.contains("actor")) {
      const auto& a = j.at("actor");
      if (a.contains("hidden")) cfg.actor.actor_hidden = detail::size_list(a.at("hidden"));
      cfg.actor.actor_learning_rate = a.value("learning_rate", cfg.actor.actor_learning_rate);
      cfg.actor.actor_decay = a.value("decay", cfg.actor.actor_decay);
      cfg.actor.actor_batch = a.value("batch", cfg.actor.actor_batch);
      cfg.actor.actor_epochs = a.value("epochs", cfg.actor.actor_epochs);
      if (a.contains("target_mode")) {
        const auto m = a.at("target_mode").get<std::string>();
        if (m == "incremental") cfg.actor.target_mode = ActorTargetMode::Incremental;
        else if (m == "cumulative") cfg.actor.target_mode = ActorTargetMode::Cumulative;
        else throw ConfigError("actor.target_mode", "expected incremental or cumulative");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<experiment>", e.what());
  }
  if (cfg.T < 1 || cfg.H < 1 || cfg.runs < 1) throw ConfigError("T/H/runs", "must all be at least 1");
  return cfg;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["scenario"] = c.scenario;
  j["roster"] = to_json(c.roster);
  j["scheme"] = c.scheme;
  j["potential"] = to_string(c.potential);
  j["T"] = c.T;
  j["H"] = c.H;
  j["runs"] = c.runs;
  j["seed"] = c.seed;
  j["td_alpha"] = c.td_alpha;
  j["warm_start"] = c.warm_start;
  j["epsilon"] = c.epsilon;
  j["normalize_rewards"] = c.normalize_rewards;
  j["evaluation"] = {{"mode", c.evaluation.exact ? "exact" : "monte-carlo"},
                     {"steps", c.evaluation.steps},
                     {"episodes", c.evaluation.episodes},
                     {"discounted", c.evaluation.discounted},
                     {"every", c.evaluation.every}};
  j["ql"] = {{"space", detail::space_name(c.ql.space)},
             {"alpha", c.ql.alpha},
             {"epsilon0", c.ql.epsilon0},
             {"decay", c.ql.decay}};
  j["ddqn"] = {{"space", detail::space_name(c.ddqn.space)},
               {"epsilon0", c.ddqn.epsilon0},
               {"epsilon_decay", c.ddqn.epsilon_decay},
               {"epsilon_min", c.ddqn.epsilon_min},
               {"net", detail::critic_json(c.ddqn.net)}};
  j["critic"] = detail::critic_json(c.critic);
  j["actor"] = {{"hidden", c.actor.actor_hidden},
                {"learning_rate", c.actor.actor_learning_rate},
                {"decay", c.actor.actor_decay},
                {"batch", c.actor.actor_batch},
                {"epochs", c.actor.actor_epochs},
                {"target_mode", c.actor.target_mode == ActorTargetMode::Incremental ? "incremental" : "cumulative"}};
  return j;
}

// ---------------------------------------------------------------------------
// Running experiments

struct CurvePoint {
  std::size_t run;
  std::size_t t;  // policy updates, or estimation updates for baselines
  double value;
};

struct Artifact {
  std::string name;
  nlohmann::json document;
};

struct ExperimentResult {
  std::vector<CurvePoint> points;
  std::vector<std::size_t> ticks;
  std::vector<Estimate> aggregate;  // aligned with ticks
  std::vector<Artifact> artifacts;
  nlohmann::json summary;
};

// Either a mixture over the roster or a primitive-action policy.
struct Candidate {
  std::optional<ExpertSelector> selector;
  std::function<Action(const State&)> deterministic;
};

class Evaluator {
 public:
  Evaluator(const ExperimentConfig& cfg) : cfg_(cfg) {
    if (cfg.evaluation.exact) model_ = std::make_shared<ExactModel>(cfg.model, cfg.roster);
  }

  const ExactModel* model() const { return model_.get(); }

  double operator()(const Candidate& cand, std::uint64_t seed) const {
    if (model_) {
      if (cand.selector) return value_at_initial(*model_, evaluate_mixture(*model_, *cand.selector).v);
      return value_at_initial(*model_, evaluate_action_policy(*model_, cand.deterministic));
    }
    Rng rng(seed);
    const ActionPolicy policy = cand.selector ? mixture_policy(cfg_.model, *cand.selector, cfg_.roster)
                                              : ActionPolicy([f = cand.deterministic](const State& s, Rng&) { return f(s); });
    return monte_carlo_value(cfg_.model, policy, cfg_.evaluation.steps, cfg_.evaluation.episodes,
                             cfg_.evaluation.discounted, rng)
        .mean;
  }

 private:
  const ExperimentConfig& cfg_;
  std::shared_ptr<ExactModel> model_;
};

// Calls body(0..n-1) on up to `threads` workers (0 = hardware concurrency).
// The first exception thrown by any call is rethrown after all workers join.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline bool should_evaluate(std::size_t t, std::size_t last, std::size_t every) {
  return t == 0 || t == last || t % every == 0;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.evaluation.exact) {
    const double keys = std::pow(static_cast<double>(cfg.model.capacity + 1), cfg.model.class_count);
    if (keys > static_cast<double>(kDefaultStateCap))
      throw ConfigError("evaluation.mode", "exact evaluation is not available for scenario '" + cfg.model.name +
                                               "'; use monte-carlo");
  }
  const Evaluator evaluate(cfg);
  const RewardTransform reward = cfg.normalize_rewards ? RewardTransform::unit(cfg.model) : RewardTransform{};
  const std::size_t K = cfg.roster.size();
  ExperimentResult out;
  std::vector<std::vector<double>> per_run(cfg.runs);

  const bool baseline = cfg.scheme == "ql" || cfg.scheme == "ddqn-direct";
  for (std::size_t t = 0; t <= cfg.T; ++t)
    if (should_evaluate(t, cfg.T, cfg.evaluation.every)) out.ticks.push_back(baseline ? t * cfg.H : t);

  struct RunOutput {
    std::vector<double> values;
    Artifact artifact;
  };
  auto one_run = [&](std::size_t n) {
    const std::uint64_t run_seed = derive_seed(cfg.seed, n);
    Rng rng(run_seed);
    std::vector<Candidate> snapshots;  // index t = 0..T
    nlohmann::json artifact;
    std::string artifact_name;

    if (cfg.scheme == "tab-tab" || cfg.scheme == "tab-nn") {
      AdvantageEstimator estimator;
      if (cfg.scheme == "tab-tab") {
        TdEstimatorOptions o;
        o.steps = cfg.H;
        o.alpha = cfg.td_alpha;
        o.epsilon = cfg.epsilon;
        o.warm_start = cfg.warm_start;
        o.reward = reward;
        estimator = td_estimator(cfg.model, cfg.roster, o);
      } else {
        estimator = critic_estimator(cfg.model, cfg.roster, cfg.H, cfg.critic, reward, rng);
      }
      auto res = tabular_orchestration_loop(K, cfg.potential, cfg.T, estimator, rng);
      artifact = to_json(res.snapshots.back());
      for (auto& w : res.snapshots) snapshots.push_back({selector_copy(std::move(w)), {}});
      artifact_name = "weights_run" + std::to_string(n) + ".json";
    } else if (cfg.scheme == "nn-nn") {
      ActorCriticOptions o = cfg.actor;
      o.episodes = cfg.T;
      o.steps = cfg.H;
      o.critic = cfg.critic;
      o.epsilon = cfg.epsilon;
      o.reward = reward;
      auto res = actor_critic_loop(cfg.model, cfg.roster, cfg.potential, o, rng);
      for (auto& net : res.snapshots) snapshots.push_back({actor_selector(cfg.model, std::move(net)), {}});
      artifact = {{"actor", to_json(res.actor)}, {"critic", to_json(res.critic.online)}};
      artifact_name = "nets_run" + std::to_string(n) + ".json";
    } else if (cfg.scheme == "ql") {
      QLearningOptions o = cfg.ql;
      o.steps = cfg.T * cfg.H;
      o.checkpoint_every = cfg.H;
      o.reward = reward;
      auto res = q_learning_baseline(cfg.model, cfg.roster, o, rng);
      if (o.space == ActionSpace::Roster) {
        snapshots.push_back({greedy_selector(QTable(K, cfg.model.discount)), {}});
        for (auto& q : res.roster_checkpoints) snapshots.push_back({greedy_selector(std::move(q)), {}});
        nlohmann::json rows = nlohmann::json::object();
        for (const auto& key : res.roster_table.keys()) rows[to_string(key)] = res.roster_table.row(key);
        artifact = {{"space", "roster"}, {"q", rows}};
      } else {
        auto wrap = [&](StateQTable q) {
          auto p = greedy_primitive_policy(cfg.model, std::move(q));
          return Candidate{std::nullopt, [p](const State& s) {
                             Rng r(0);
                             return p(s, r);
                           }};
        };
        snapshots.push_back(wrap(StateQTable(primitive_width(cfg.model), cfg.model.discount)));
        for (auto& q : res.primitive_checkpoints) snapshots.push_back(wrap(std::move(q)));
        artifact = {{"space", "primitive"}, {"entries", res.primitive_table.size()}};
      }
      artifact_name = "qtable_run" + std::to_string(n) + ".json";
    } else if (cfg.scheme == "ddqn-direct") {
      DdqnOptions o = cfg.ddqn;
      o.steps = cfg.T * cfg.H;
      o.checkpoint_every = cfg.H;
      o.reward = reward;
      Rng init_rng(derive_seed(run_seed, 1));
      auto res = ddqn_baseline(cfg.model, cfg.roster, o, rng);
      // The untrained network is the t = 0 reference.
      CriticOptions nopt = o.net;
      if (nopt.value_scale <= 0.0) nopt.value_scale = 1.0;
      const bool primitive = o.space == ActionSpace::Primitive;
      auto wrap = [&](Mlp net) {
        if (primitive) {
          auto p = ddqn_primitive_policy(cfg.model, std::move(net));
          return Candidate{std::nullopt, [p](const State& s) {
                             Rng r(0);
                             return p(s, r);
                           }};
        }
        return Candidate{ddqn_roster_selector(cfg.model, std::move(net)), {}};
      };
      snapshots.push_back(wrap(make_critic(feature_width(cfg.model, primitive), ddqn_width(cfg.model, cfg.roster, o.space),
                                           cfg.model.discount, nopt, init_rng)
                                   .online));
      for (auto& net : res.checkpoints) snapshots.push_back(wrap(std::move(net)));
      artifact = {{"space", detail::space_name(o.space)}, {"online", to_json(res.net.online)}};
      artifact_name = "ddqn_run" + std::to_string(n) + ".json";
    } else {
      throw ConfigError("scheme", "unknown scheme '" + cfg.scheme + "'");
    }

    RunOutput r;
    for (std::size_t t = 0; t <= cfg.T; ++t)
      if (should_evaluate(t, cfg.T, cfg.evaluation.every))
        r.values.push_back(evaluate(snapshots.at(t), derive_seed(run_seed, 1000 + t)));
    r.artifact = {artifact_name, std::move(artifact)};
    return r;
  };

  std::vector<RunOutput> outputs(cfg.runs);
  parallel_for(cfg.runs, cfg.threads, [&](std::size_t n) { outputs[n] = one_run(n); });
  for (std::size_t n = 0; n < cfg.runs; ++n) {
    per_run[n] = outputs[n].values;
    for (std::size_t i = 0; i < out.ticks.size(); ++i) out.points.push_back({n, out.ticks[i], per_run[n][i]});
    out.artifacts.push_back(std::move(outputs[n].artifact));
  }

  for (std::size_t i = 0; i < out.ticks.size(); ++i) {
    std::vector<double> xs;
    for (const auto& r : per_run) xs.push_back(r[i]);
    out.aggregate.push_back(mean_and_stderr(xs));
  }

  nlohmann::json s;
  s["config"] = to_json(cfg);
  s["x_axis"] = baseline ? "estimation_updates" : "policy_updates";
  s["initial"] = {{"mean", out.aggregate.front().mean}, {"stderr", out.aggregate.front().stderr_}};
  s["final"] = {{"mean", out.aggregate.back().mean}, {"stderr", out.aggregate.back().stderr_}};
  std::vector<double> finals;
  for (const auto& r : per_run) finals.push_back(r.back());
  s["final_per_run"] = finals;
  s["improved"] = out.aggregate.back().mean > out.aggregate.front().mean;
  if (const ExactModel* m = evaluate.model()) {
    nlohmann::json refs;
    std::vector<double> experts;
    for (std::size_t k = 0; k < K; ++k) experts.push_back(value_at_initial(*m, evaluate_expert(*m, k).v));
    refs["experts"] = experts;
    refs["best_mixture"] = value_at_initial(*m, best_mixture(*m).evaluation.v);
    refs["optimal"] = value_at_initial(*m, optimal_value(*m));
    s["reference"] = refs;
  }
  out.summary = s;
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Per-run rows carry an empty stderr; aggregate rows use run = "mean".
inline void write_curve_csv(std::ostream& os, const ExperimentResult& r) {
  os << "run,t,value,stderr\n";
  for (const auto& p : r.points) os << p.run << ',' << p.t << ',' << format_double(p.value) << ",\n";
  for (std::size_t i = 0; i < r.ticks.size(); ++i)
    os << "mean," << r.ticks[i] << ',' << format_double(r.aggregate[i].mean) << ','
       << format_double(r.aggregate[i].stderr_) << '\n';
}

// curve.csv, summary.json and one file per artifact.
inline void write_run_outputs(const std::filesystem::path& dir, const ExperimentResult& r) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    return os;
  };
  {
    auto os = open("curve.csv");
    write_curve_csv(os, r);
  }
  open("summary.json") << r.summary.dump(2) << '\n';
  for (const auto& a : r.artifacts) open(a.name) << a.document.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Expert-advice regret game

using PayoffGenerator = std::function<std::vector<double>(std::size_t t, std::size_t K, Rng&)>;

inline PayoffGenerator random_sign_payoffs() {
  return [](std::size_t, std::size_t K, Rng& rng) {
    std::vector<double> g(K);
    for (auto& v : g) v = rng.bernoulli(0.5) ? 1.0 : -1.0;
    return g;
  };
}

// Worst-case regret bound for payoffs in [-1, 1].
inline double regret_bound(const PotentialSpec& spec, std::size_t T, std::size_t K) {
  const double lk = std::log(static_cast<double>(K));
  const double t = static_cast<double>(T);
  switch (spec.kind) {
    case PotentialKind::Polynomial: return std::sqrt(6.0 * t * lk);
    case PotentialKind::ExponentialFixed: return lk / spec.eta + spec.eta * t / 2.0;
    case PotentialKind::ExponentialVarying:
      // Anytime Hedge bound for [0, 1] payoffs, doubled for [-1, 1]; matches eta0 = sqrt(2).
      return 2.0 * (std::sqrt(2.0 * t * lk) + std::sqrt(lk / 8.0));
  }
  return 0.0;
}

struct RegretCheck {
  double max_regret = 0.0;
  double bound = 0.0;
  std::size_t violations = 0;
  bool pass = true;
};

inline double play_regret_game(const PotentialSpec& spec, std::size_t T, std::size_t K, const PayoffGenerator& gen,
                               Rng& rng) {
  std::vector<double> cum(K, 0.0), totals(K, 0.0);
  double learner = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const auto q = update_weights(spec, t, cum);
    const auto g = gen(t, K, rng);
    if (g.size() != K) throw std::invalid_argument("payoff vector has wrong length");
    double mix = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      if (!(g[k] >= -1.0 && g[k] <= 1.0)) throw std::invalid_argument("payoff outside [-1, 1]");
      mix += q[k] * g[k];
    }
    learner += mix;
    for (std::size_t k = 0; k < K; ++k) {
      cum[k] += g[k] - mix;
      totals[k] += g[k];
    }
  }
  return *std::max_element(totals.begin(), totals.end()) - learner;
}

inline RegretCheck adversarial_regret_check(const PotentialSpec& spec, std::size_t T, std::size_t K,
                                            const PayoffGenerator& gen, std::size_t trials, Rng& rng) {
  RegretCheck out;
  out.bound = regret_bound(spec, T, K);
  out.max_regret = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trials; ++i) {
    const double r = play_regret_game(spec, T, K, gen, rng);
    out.max_regret = std::max(out.max_regret, r);
    if (r > out.bound + 1e-9) ++out.violations;
  }
  out.pass = out.violations == 0;
  return out;
}

// ---------------------------------------------------------------------------
// Value-gap bound

inline double theorem_bound(double epsilon, double gamma, std::size_t T, double regret,
                            std::optional<double> delta = std::nullopt) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("theorem_bound: gamma must lie in (0, 1)");
  if (T < 1) throw std::invalid_argument("theorem_bound: T must be >= 1");
  const double g = 1.0 - gamma;
  const auto t = static_cast<double>(T);
  double b = epsilon / g + regret / (g * g * t);
  if (delta) {
    if (!(*delta > 0.0 && *delta <= 1.0)) throw std::invalid_argument("theorem_bound: delta must lie in (0, 1]");
    b += 2.0 * std::log(1.0 / *delta) / (g * g * std::sqrt(t));
  }
  return b;
}

// Runs the tabular loop with exact advantages under a fixed-rate exponential
// potential tuned to T, then compares the measured gap to the best mixture with
// the bound. Values are in units of rewards normalized to [0, 1].
struct TheoremCheck {
  std::size_t T = 0;
  double eta = 0.0;     // rate on normalized advantages
  double regret = 0.0;  // worst-case regret of the expert game at that rate
  double best = 0.0;    // best-mixture value at the initial distribution
  double average = 0.0; // mean over rounds of the iterates' values
  double gap = 0.0;
  double bound = 0.0;
  bool pass = false;
};

inline TheoremCheck theorem_check(const ModelConfig& c, const Roster& roster, std::size_t T) {
  if (T < 1) throw std::invalid_argument("theorem_check: T must be >= 1");
  auto model = std::make_shared<const ExactModel>(c, roster);
  const double scale = RewardTransform::unit(c).scale;
  const double M = 1.0 / (1.0 - c.discount);
  const double lk = std::log(static_cast<double>(roster.size()));
  TheoremCheck out;
  out.T = T;
  out.eta = std::sqrt(2.0 * lk / static_cast<double>(T)) / M;
  out.regret = lk / out.eta + out.eta * M * M * static_cast<double>(T) / 2.0;
  // Raw advantages are normalized ones divided by `scale`.
  const auto spec = PotentialSpec::exponential_fixed(out.eta * scale);
  Rng unused(0);
  const auto res = tabular_orchestration_loop(roster.size(), spec, T, oracle_estimator(model), unused);
  double sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) sum += value_at_initial(*model, evaluate_mixture(*model, res.snapshots[t]).v);
  out.average = scale * sum / static_cast<double>(T);
  out.best = scale * value_at_initial(*model, best_mixture(*model).evaluation.v);
  out.gap = out.best - out.average;
  out.bound = theorem_bound(0.0, c.discount, T, out.regret);
  out.pass = out.gap <= out.bound;
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check over a set of layer shapes and both losses

struct GradientCheckCase {
  std::vector<std::size_t> widths;
  LossKind loss;
  double error = 0.0;
};

inline std::vector<GradientCheckCase> gradient_check_suite(Rng& rng, std::size_t batch = 8) {
  const std::vector<std::vector<std::size_t>> shapes{{3, 2}, {4, 5, 3}, {6, 8, 8, 2}, {2, 16, 4}, {5, 3, 3, 3, 4}};
  std::vector<GradientCheckCase> out;
  for (const auto& widths : shapes)
    for (LossKind kind : {LossKind::SquaredError, LossKind::KlDivergence}) {
      Mlp net = Mlp::init(widths, rng);
      // Nonzero biases keep pre-activations off the ReLU kink, where no derivative exists.
      for (std::size_t l = 0; l < net.layers(); ++l)
        for (std::size_t o = 0; o < widths[l + 1]; ++o) net.bias(l, o) = rng.uniform(-0.5, 0.5);
      std::vector<TrainSample> samples(batch);
      for (auto& smp : samples) {
        smp.x.resize(widths.front());
        for (auto& v : smp.x) v = rng.uniform(-1.0, 1.0);
        smp.component = rng.below(widths.back());
        smp.target = rng.normal();
        smp.distribution.resize(widths.back());
        for (auto& v : smp.distribution) v = rng.uniform(0.1, 1.0);
        double z = 0.0;
        for (double v : smp.distribution) z += v;
        for (auto& v : smp.distribution) v /= z;
      }
      out.push_back({widths, kind, gradient_check(net, samples, kind)});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Dominance report

inline std::vector<double> dominance_report(const WeightTable& w) {
  if (w.size() == 0) throw std::invalid_argument("dominance_report: empty weight table");
  std::vector<double> share(w.experts(), 0.0);
  for (const auto& [key, q] : w.entries()) share[argmax_first(q)] += 1.0;
  for (double& s : share) s /= static_cast<double>(w.size());
  return share;
}

}  // namespace orchestra
