#pragma once

// Tabular estimation and learning over queue keys: one-step TD under a fixed
// mixture, the potential-weighted orchestration loop, Q-learning baselines
// and the TD bias trace.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "orchestra/exact_eval.hpp"
#include "orchestra/experts.hpp"
#include "orchestra/matching_env.hpp"
#include "orchestra/orchestrator.hpp"
#include "orchestra/rng.hpp"

namespace orchestra {

// Affine reward map r -> (r - offset) * scale.
struct RewardTransform {
  double offset = 0.0;
  double scale = 1.0;

  double operator()(double r) const { return (r - offset) * scale; }
  double inverse(double r) const { return r / scale + offset; }

  static RewardTransform identity() { return {}; }
  // Onto [0, 1] using the scenario-wide reward bounds.
  static RewardTransform unit(const ModelConfig& c) {
    const auto [lo, hi] = reward_bounds(c);
    if (!(hi > lo)) return {lo, 1.0};
    return {lo, 1.0 / (hi - lo)};
  }
};

struct StateHash {
  std::size_t operator()(const State& s) const {
    return hash_queues(s.queues) ^ (static_cast<std::size_t>(s.event.kind) * 0x9e3779b97f4a7c15ULL +
                                    static_cast<std::size_t>(s.event.cls + 1) * 0xbf58476d1ce4e5b9ULL);
  }
};

// Rows of `width` reals per key, zero until written.
template <class Key, class Hash>
class BasicQTable {
 public:
  BasicQTable() = default;
  BasicQTable(std::size_t width, double gamma) : width_(width), gamma_(gamma) {
    if (width == 0) throw std::invalid_argument("QTable: width must be positive");
  }

  std::size_t width() const { return width_; }
  double discount() const { return gamma_; }
  std::size_t size() const { return rows_.size(); }
  bool contains(const Key& key) const { return rows_.contains(key); }

  double at(const Key& key, std::size_t k) const {
    const auto it = rows_.find(key);
    return it == rows_.end() ? 0.0 : it->second[k];
  }

  std::vector<double> row(const Key& key) const {
    const auto it = rows_.find(key);
    return it == rows_.end() ? std::vector<double>(width_, 0.0) : it->second;
  }

  std::vector<double>& row_ref(const Key& key) { return rows_.try_emplace(key, width_, 0.0).first->second; }

  void set(const Key& key, std::size_t k, double v) { row_ref(key)[k] = v; }

  // Convex-combination update toward target; returns the new entry.
  double update(const Key& key, std::size_t k, double target, double alpha) {
    double& e = row_ref(key)[k];
    e += alpha * (target - e);
    return e;
  }

  std::vector<Key> keys() const {
    std::vector<Key> out;
    out.reserve(rows_.size());
    for (const auto& [k, v] : rows_) out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
  }

  const std::unordered_map<Key, std::vector<double>, Hash>& rows() const { return rows_; }

  double max_abs() const {
    double m = 0.0;
    for (const auto& [k, row] : rows_)
      for (double v : row) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  std::size_t width_ = 0;
  double gamma_ = 0.0;
  std::unordered_map<Key, std::vector<double>, Hash> rows_;
};

using QTable = BasicQTable<StateKey, StateKeyHash>;
using StateQTable = BasicQTable<State, StateHash>;

inline std::size_t argmax_first(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// TD estimation

struct TdStats {
  std::size_t updates = 0;
  std::unordered_map<StateKey, std::size_t, StateKeyHash> visits;
};

// Advances `state` by `steps` transitions under the mixture, updating only the
// visited (key, k) entry each step.
inline void td_advance(const ModelConfig& c, const ExpertSelector& selector, const Roster& roster, QTable& q,
                       State& state, std::size_t steps, double alpha, Rng& rng, double epsilon = 0.0,
                       const RewardTransform& rt = {}, TdStats* stats = nullptr) {
  const double gamma = c.discount;
  auto choice = sample_and_act(c, state, selector, roster, epsilon, rng);
  for (std::size_t tau = 0; tau < steps; ++tau) {
    const auto [next, r] = step(c, state, choice.action, rng);
    const auto next_choice = sample_and_act(c, next, selector, roster, epsilon, rng);
    const double target = rt(r) + gamma * q.at(next.key(), next_choice.expert);
    q.update(state.key(), choice.expert, target, alpha);
    if (stats) {
      ++stats->updates;
      ++stats->visits[state.key()];
    }
    state = next;
    choice = next_choice;
  }
}

// H steps from a fresh draw of the initial distribution into a zero table.
inline QTable td_estimate(const ModelConfig& c, const ExpertSelector& selector, const Roster& roster, std::size_t H,
                          double alpha, Rng& rng, const RewardTransform& rt = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("td_estimate: alpha must lie in (0, 1)");
  QTable q(roster.size(), c.discount);
  State s = sample_initial(c, rng);
  td_advance(c, selector, roster, q, s, H, alpha, rng, 0.0, rt);
  return q;
}

inline QTable td_estimate(const ModelConfig& c, const WeightTable& w, const Roster& roster, std::size_t H, double alpha,
                          Rng& rng, const RewardTransform& rt = {}) {
  return td_estimate(c, selector_of(w), roster, H, alpha, rng, rt);
}

inline std::vector<double> centered_advantage(const std::vector<double>& q_values, const std::vector<double>& weights) {
  if (q_values.size() != weights.size()) throw std::invalid_argument("advantage: width mismatch");
  double v = 0.0;
  for (std::size_t k = 0; k < q_values.size(); ++k) v += weights[k] * q_values[k];
  std::vector<double> a(q_values.size());
  for (std::size_t k = 0; k < a.size(); ++k) a[k] = q_values[k] - v;
  return a;
}

inline std::vector<double> advantage_from_q(const QTable& q, const WeightTable& w, const StateKey& key) {
  return centered_advantage(q.row(key), w.at(key));
}

// ---------------------------------------------------------------------------
// Orchestration loop

struct KeyAdvantage {
  StateKey key;
  std::vector<double> advantage;
};

// Produces advantage estimates for round t (1-based) under the given weights.
using AdvantageEstimator = std::function<std::vector<KeyAdvantage>(const WeightTable&, std::size_t t, Rng&)>;

struct TdEstimatorOptions {
  std::size_t steps = 15;   // H
  double alpha = 0.1;
  double epsilon = 0.0;     // exploration over experts
  double epsilon_decay = 1.0;
  bool warm_start = true;
  RewardTransform reward{};
};

// TD advantage source. Warm start keeps one table across rounds; every round
// restarts the environment from the initial distribution.
inline AdvantageEstimator td_estimator(const ModelConfig& c, const Roster& roster, TdEstimatorOptions opt) {
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw std::invalid_argument("TD step size must lie in (0, 1)");
  auto table = std::make_shared<QTable>(roster.size(), c.discount);
  return [c, roster, opt, table](const WeightTable& w, std::size_t t, Rng& rng) {
    if (!opt.warm_start) *table = QTable(roster.size(), c.discount);
    const double eps = opt.epsilon * std::pow(opt.epsilon_decay, static_cast<double>(t - 1));
    State s = sample_initial(c, rng);
    td_advance(c, selector_of(w), roster, *table, s, opt.steps, opt.alpha, rng, eps, opt.reward);
    std::vector<KeyAdvantage> out;
    for (const auto& key : table->keys()) out.push_back({key, advantage_from_q(*table, w, key)});
    return out;
  };
}

// Exact key-level advantages of the current mixture on every queue vector.
inline AdvantageEstimator oracle_estimator(std::shared_ptr<const ExactModel> model, double tol = 1e-10) {
  return [model, tol](const WeightTable& w, std::size_t, Rng&) {
    const auto ev = evaluate_mixture(*model, w, tol);
    std::vector<KeyAdvantage> out;
    out.reserve(model->key_count());
    for (std::size_t key = 0; key < model->key_count(); ++key) {
      std::vector<double> a(ev.experts);
      for (std::size_t k = 0; k < ev.experts; ++k) a[k] = ev.key_a_at(key, k);
      out.push_back({StateKey{model->indexer().queues(key)}, std::move(a)});
    }
    return out;
  };
}

struct OrchestrationResult {
  std::vector<WeightTable> snapshots;  // index t = weights in force for round t+1; [0] is uniform
  CumulativeAdvantage cumulative;
};

inline OrchestrationResult tabular_orchestration_loop(std::size_t experts, const PotentialSpec& spec, std::size_t T,
                                                      const AdvantageEstimator& estimator, Rng& rng) {
  if (T < 1) throw std::invalid_argument("orchestration loop needs T >= 1");
  OrchestrationResult out{{WeightTable(experts)}, CumulativeAdvantage(experts)};
  out.snapshots.reserve(T + 1);
  WeightTable w(experts);
  for (std::size_t t = 1; t <= T; ++t) {
    for (const auto& ka : estimator(w, t, rng)) out.cumulative.add(ka.key, ka.advantage);
    WeightTable next(experts);
    for (const auto& key : out.cumulative.keys()) next.set(key, update_weights(spec, t + 1, out.cumulative, key));
    w = std::move(next);
    out.snapshots.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Q-learning

enum class ActionSpace { Roster, Primitive };

// Primitive action slots: 0 = enqueue/trash (whichever is legal), 1 + e = match along edge e.
inline std::size_t primitive_width(const ModelConfig& c) { return c.edges.size() + 1; }

inline std::optional<Action> primitive_action(const ModelConfig& c, const State& s, std::size_t slot) {
  const auto d = decision_node(c, s);
  if (slot == 0) return d ? legal_actions(c, s).back() : Action::enqueue();
  if (!d || slot > c.edges.size()) return std::nullopt;
  const Edge& e = c.edges[slot - 1];
  Action a;
  if (e.a == *d) a = Action::match(*d, e.b);
  else if (e.b == *d) a = Action::match(*d, e.a);
  else return std::nullopt;
  if (!is_legal(c, s, a)) return std::nullopt;
  return a;
}

inline std::vector<bool> primitive_mask(const ModelConfig& c, const State& s) {
  std::vector<bool> mask(primitive_width(c), false);
  mask[0] = true;
  const auto d = decision_node(c, s);
  if (!d) return mask;
  const Queues post = post_event_queues(c, s);
  for (std::size_t e = 0; e < c.edges.size(); ++e) {
    const Edge& edge = c.edges[e];
    const int other = edge.a == *d ? edge.b : edge.b == *d ? edge.a : -1;
    if (other >= 0 && post[static_cast<std::size_t>(other)] >= 1) mask[e + 1] = true;
  }
  return mask;
}

inline std::size_t masked_argmax(const std::vector<double>& v, const std::vector<bool>& mask) {
  std::size_t best = v.size();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask[i] && (best == v.size() || v[i] > v[best])) best = i;
  return best;
}

inline std::size_t masked_uniform(const std::vector<bool>& mask, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  std::size_t pick = rng.below(n);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] && pick-- == 0) return i;
  return 0;
}

struct QLearningOptions {
  ActionSpace space = ActionSpace::Roster;
  std::size_t steps = 750;
  double alpha = 1e-6;
  double epsilon0 = 0.3;
  double decay = 0.8;
  std::size_t checkpoint_every = 0;  // 0: only the final table
  RewardTransform reward{};
};

struct QLearningResult {
  ActionSpace space = ActionSpace::Roster;
  QTable roster_table;
  StateQTable primitive_table;
  std::vector<std::size_t> checkpoint_steps;
  std::vector<QTable> roster_checkpoints;
  std::vector<StateQTable> primitive_checkpoints;
};

// Greedy expert per key (ties and unseen keys go to the smallest index).
inline ExpertSelector greedy_selector(QTable table) {
  return [table = std::move(table)](const StateKey& key) {
    std::vector<double> q(table.width(), 0.0);
    q[argmax_first(table.row(key))] = 1.0;
    return q;
  };
}

using ActionPolicy = std::function<Action(const State&, Rng&)>;

inline ActionPolicy greedy_primitive_policy(const ModelConfig& c, StateQTable table) {
  return [c, table = std::move(table)](const State& s, Rng&) {
    return *primitive_action(c, s, masked_argmax(table.row(s), primitive_mask(c, s)));
  };
}

inline QLearningResult q_learning_baseline(const ModelConfig& c, const Roster& roster, const QLearningOptions& opt,
                                           Rng& rng) {
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw std::invalid_argument("Q-learning: alpha must lie in (0, 1)");
  if (!(opt.epsilon0 >= 0.0 && opt.epsilon0 <= 1.0 && opt.decay > 0.0 && opt.decay <= 1.0))
    throw std::invalid_argument("Q-learning: epsilon0 and decay must lie in [0, 1]");
  const double gamma = c.discount;
  QLearningResult out;
  out.space = opt.space;
  State s = sample_initial(c, rng);
  double eps = opt.epsilon0;
  auto checkpoint = [&](std::size_t done) {
    out.checkpoint_steps.push_back(done);
    if (opt.space == ActionSpace::Roster) out.roster_checkpoints.push_back(out.roster_table);
    else out.primitive_checkpoints.push_back(out.primitive_table);
  };
  if (opt.space == ActionSpace::Roster) {
    const std::size_t K = roster.size();
    out.roster_table = QTable(K, gamma);
    for (std::size_t tau = 0; tau < opt.steps; ++tau) {
      const auto row = out.roster_table.row(s.key());
      const std::size_t k = rng.bernoulli(eps) ? rng.below(K) : argmax_first(row);
      const Action a = sample_expert_action(c, s, roster[k], rng);
      const auto [next, r] = step(c, s, a, rng);
      const auto next_row = out.roster_table.row(next.key());
      const double target = opt.reward(r) + gamma * *std::max_element(next_row.begin(), next_row.end());
      out.roster_table.update(s.key(), k, target, opt.alpha);
      s = next;
      eps *= opt.decay;
      if (opt.checkpoint_every && (tau + 1) % opt.checkpoint_every == 0) checkpoint(tau + 1);
    }
  } else {
    out.primitive_table = StateQTable(primitive_width(c), gamma);
    for (std::size_t tau = 0; tau < opt.steps; ++tau) {
      const auto mask = primitive_mask(c, s);
      const std::size_t slot =
          rng.bernoulli(eps) ? masked_uniform(mask, rng) : masked_argmax(out.primitive_table.row(s), mask);
      const Action a = *primitive_action(c, s, slot);
      const auto [next, r] = step(c, s, a, rng);
      const auto next_mask = primitive_mask(c, next);
      const auto next_row = out.primitive_table.row(next);
      const double target = opt.reward(r) + gamma * next_row[masked_argmax(next_row, next_mask)];
      out.primitive_table.update(s, slot, target, opt.alpha);
      s = next;
      eps *= opt.decay;
      if (opt.checkpoint_every && (tau + 1) % opt.checkpoint_every == 0) checkpoint(tau + 1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bias trace

struct BiasTrace {
  std::vector<std::size_t> tau;    // step count at each sample
  std::vector<double> bias_inf;    // ||mean_n (Q~ - Q)||_inf over tracked entries
  std::vector<double> stderr_max;  // largest per-entry standard error at that sample
  std::size_t tracked = 0;
  std::size_t runs = 0;
  double slope = 0.0;              // least-squares slope of log bias against tau (tail half)
  double r_squared = 0.0;
  double decay_rate = 0.0;         // exp(slope): per-step contraction estimate
};

struct BiasTraceOptions {
  std::size_t runs = 200;
  std::size_t steps = 20'000;
  double alpha = 0.1;
  std::size_t stride = 0;            // 0: steps / 200
  double visit_fraction = 0.5;       // tracked entries must be visited in at least this share of runs
  bool start_at_exact = false;
  RewardTransform reward{};
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  if (x.size() < 2) return {};
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r_squared = (sxx > 0.0 && syy > 0.0) ? (sxy * sxy) / (sxx * syy) : 0.0;
  return f;
}

// Runs advance in lockstep so the across-run mean can be sampled on the fly.
inline BiasTrace bias_trace(const ExactModel& model, const WeightTable& weights, const BiasTraceOptions& opt,
                            std::uint64_t seed) {
  if (!(opt.alpha >= 0.0 && opt.alpha < 1.0)) throw std::invalid_argument("bias_trace: alpha must lie in [0, 1)");
  if (opt.runs < 2) throw std::invalid_argument("bias_trace needs at least two runs");
  const ModelConfig& c = model.config();
  const Roster& roster = model.roster();
  const std::size_t K = roster.size();
  const std::size_t keys = model.key_count();
  const std::size_t stride = opt.stride ? opt.stride : std::max<std::size_t>(1, opt.steps / 200);

  const auto ev = evaluate_mixture(model, weights);
  std::vector<double> exact(keys * K);
  // An affine reward map r -> s (r - o) maps Q to s Q - s o / (1 - gamma).
  const double shift = opt.reward(0.0) / (1.0 - c.discount);
  for (std::size_t i = 0; i < exact.size(); ++i) exact[i] = opt.reward.scale * ev.key_q[i] + shift;

  const ExpertSelector selector = selector_of(weights);
  std::vector<std::vector<double>> tables(opt.runs, std::vector<double>(keys * K, 0.0));
  if (opt.start_at_exact)
    for (auto& t : tables) t = exact;
  std::vector<double> sum(keys * K, 0.0), sumsq(keys * K, 0.0);
  for (const auto& t : tables)
    for (std::size_t i = 0; i < t.size(); ++i) sum[i] += t[i], sumsq[i] += t[i] * t[i];
  std::vector<std::vector<bool>> visited(opt.runs, std::vector<bool>(keys * K, false));

  std::vector<Rng> rngs;
  std::vector<State> states;
  std::vector<ExpertChoice> choices;
  for (std::size_t n = 0; n < opt.runs; ++n) {
    rngs.emplace_back(derive_seed(seed, n));
    states.push_back(sample_initial(c, rngs.back()));
    choices.push_back(sample_and_act(c, states.back(), selector, roster, 0.0, rngs.back()));
  }

  std::vector<std::size_t> sample_tau;
  std::vector<std::vector<double>> sample_mean, sample_se;
  auto snapshot = [&](std::size_t tau) {
    sample_tau.push_back(tau);
    std::vector<double> mean(sum.size()), se(sum.size());
    const auto N = static_cast<double>(opt.runs);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      mean[i] = sum[i] / N;
      const double var = std::max(0.0, (sumsq[i] - N * mean[i] * mean[i]) / (N - 1.0));
      se[i] = std::sqrt(var / N);
    }
    sample_mean.push_back(std::move(mean));
    sample_se.push_back(std::move(se));
  };
  snapshot(0);

  const double gamma = c.discount;
  for (std::size_t tau = 1; tau <= opt.steps; ++tau) {
    for (std::size_t n = 0; n < opt.runs; ++n) {
      Rng& rng = rngs[n];
      const auto [next, r] = step(c, states[n], choices[n].action, rng);
      const auto next_choice = sample_and_act(c, next, selector, roster, 0.0, rng);
      const std::size_t i = model.key_index(states[n].key()) * K + choices[n].expert;
      const std::size_t j = model.key_index(next.key()) * K + next_choice.expert;
      auto& t = tables[n];
      const double old = t[i];
      t[i] += opt.alpha * (opt.reward(r) + gamma * t[j] - t[i]);
      sum[i] += t[i] - old;
      sumsq[i] += t[i] * t[i] - old * old;
      visited[n][i] = true;
      states[n] = next;
      choices[n] = next_choice;
    }
    if (tau % stride == 0 || tau == opt.steps) snapshot(tau);
  }

  std::vector<std::size_t> tracked;
  for (std::size_t i = 0; i < keys * K; ++i) {
    std::size_t count = 0;
    for (std::size_t n = 0; n < opt.runs; ++n) count += visited[n][i];
    if (static_cast<double>(count) >= opt.visit_fraction * static_cast<double>(opt.runs)) tracked.push_back(i);
  }

  BiasTrace out;
  out.runs = opt.runs;
  out.tracked = tracked.size();
  out.tau = sample_tau;
  for (std::size_t s = 0; s < sample_tau.size(); ++s) {
    double b = 0.0, se = 0.0;
    for (std::size_t i : tracked) {
      b = std::max(b, std::abs(sample_mean[s][i] - exact[i]));
      se = std::max(se, sample_se[s][i]);
    }
    out.bias_inf.push_back(b);
    out.stderr_max.push_back(se);
  }
  std::vector<double> xs, ys;
  for (std::size_t s = out.tau.size() / 2; s < out.tau.size(); ++s) {
    if (!(out.bias_inf[s] > 0.0)) continue;
    xs.push_back(static_cast<double>(out.tau[s]));
    ys.push_back(std::log(out.bias_inf[s]));
  }
  const LineFit fit = fit_line(xs, ys);
  out.slope = fit.slope;
  out.r_squared = fit.r_squared;
  out.decay_rate = std::exp(fit.slope);
  return out;
}

}  // namespace orchestra
