#pragma once

// Exact evaluation on enumerable instances.
//
// The next event depends only on the post-action queue vector, so for any
// selector keyed by queues the Bellman backup factors through
//   W(key) = sum_e P(e | key) V(key, e),
// and the iteration runs on W while values are reported per (queues, event).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "orchestra/experts.hpp"
#include "orchestra/matching_env.hpp"
#include "orchestra/orchestrator.hpp"

namespace orchestra {

class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Outcome {
  double prob;
  double reward;
  std::uint32_t next_key;
};

// Tabulated dynamics of a config and expert roster.
class ExactModel {
 public:
  ExactModel(ModelConfig config, Roster roster, std::size_t cap = kDefaultStateCap)
      : config_(std::move(config)), roster_(std::move(roster)), indexer_(config_) {
    states_ = enumerate_states(config_, cap);
    const std::size_t keys = indexer_.count();
    key_begin_.assign(keys + 1, 0);
    state_key_.resize(states_.size());
    event_prob_.resize(states_.size());
    for (std::size_t s = 0; s < states_.size(); ++s) state_key_[s] = static_cast<std::uint32_t>(indexer_.index(states_[s].queues));
    // States come grouped by key in indexer order.
    for (std::size_t s = 0; s < states_.size(); ++s) key_begin_[state_key_[s] + 1] = s + 1;
    for (std::size_t k = 1; k <= keys; ++k) key_begin_[k] = std::max(key_begin_[k], key_begin_[k - 1]);
    for (std::size_t k = 0; k < keys; ++k) {
      const auto dist = event_distribution(config_, StateKey{indexer_.queues(k)});
      for (std::size_t i = 0; i < dist.size(); ++i) event_prob_[key_begin_[k] + i] = dist[i].prob;
    }

    const std::size_t experts = roster_.size();
    expert_begin_.assign(states_.size() * experts + 1, 0);
    action_begin_.assign(states_.size() + 1, 0);
    for (std::size_t s = 0; s < states_.size(); ++s) {
      const State& st = states_[s];
      for (std::size_t k = 0; k < experts; ++k) {
        for (const auto& ap : expert_action(config_, st, roster_[k]))
          expert_outcomes_.push_back(outcome(st, ap.action, ap.prob));
        expert_begin_[s * experts + k + 1] = expert_outcomes_.size();
      }
      for (const auto& a : legal_actions(config_, st)) action_outcomes_.push_back(outcome(st, a, 1.0));
      action_begin_[s + 1] = action_outcomes_.size();
    }
  }

  const ModelConfig& config() const { return config_; }
  const Roster& roster() const { return roster_; }
  const QueueIndexer& indexer() const { return indexer_; }
  std::size_t experts() const { return roster_.size(); }
  std::size_t state_count() const { return states_.size(); }
  std::size_t key_count() const { return indexer_.count(); }
  const std::vector<State>& states() const { return states_; }
  const State& state(std::size_t s) const { return states_[s]; }
  std::uint32_t key_of(std::size_t s) const { return state_key_[s]; }
  double event_prob(std::size_t s) const { return event_prob_[s]; }
  std::size_t key_begin(std::size_t key) const { return key_begin_[key]; }
  std::size_t key_end(std::size_t key) const { return key_begin_[key + 1]; }

  std::span<const Outcome> expert_outcomes(std::size_t s, std::size_t k) const {
    const std::size_t i = s * roster_.size() + k;
    return {expert_outcomes_.data() + expert_begin_[i], expert_begin_[i + 1] - expert_begin_[i]};
  }

  std::span<const Outcome> action_outcomes(std::size_t s) const {
    return {action_outcomes_.data() + action_begin_[s], action_begin_[s + 1] - action_begin_[s]};
  }

  std::size_t state_index(const State& st) const {
    const std::size_t key = indexer_.index(st.queues);
    for (std::size_t s = key_begin(key); s < key_end(key); ++s)
      if (states_[s].event == st.event) return s;
    throw std::out_of_range("state not in the enumerated space: " + to_string(st.queues) + " " + to_string(st.event));
  }

  std::size_t key_index(const StateKey& key) const { return indexer_.index(key.queues); }

  double max_abs_reward() const {
    double m = 0.0;
    for (const auto& o : action_outcomes_) m = std::max(m, std::abs(o.reward));
    return m;
  }

 private:
  Outcome outcome(const State& st, const Action& a, double prob) const {
    return {prob, reward(config_, st, a), static_cast<std::uint32_t>(indexer_.index(next_queues(config_, st, a)))};
  }

  ModelConfig config_;
  Roster roster_;
  QueueIndexer indexer_;
  std::vector<State> states_;
  std::vector<std::uint32_t> state_key_;
  std::vector<double> event_prob_;
  std::vector<std::size_t> key_begin_;
  std::vector<Outcome> expert_outcomes_;
  std::vector<std::size_t> expert_begin_;
  std::vector<Outcome> action_outcomes_;
  std::vector<std::size_t> action_begin_;
};

struct ValueTable {
  std::vector<double> values;  // aligned with ExactModel::states()
  double residual = 0.0;
  int iterations = 0;
};

// Values, Q and advantages of a mixture, per full state and per queue key.
struct MixtureEvaluation {
  std::size_t experts = 0;
  ValueTable v;
  std::vector<double> q;          // state-major, K per state
  std::vector<double> a;
  std::vector<double> weights;    // key-major, K per key
  std::vector<double> key_value;  // W(key)
  std::vector<double> key_q;      // sum_e P(e|key) Q(key, e, k)
  std::vector<double> key_a;

  double value(std::size_t s) const { return v.values[s]; }
  double q_at(std::size_t s, std::size_t k) const { return q[s * experts + k]; }
  double a_at(std::size_t s, std::size_t k) const { return a[s * experts + k]; }
  double key_q_at(std::size_t key, std::size_t k) const { return key_q[key * experts + k]; }
  double key_a_at(std::size_t key, std::size_t k) const { return key_a[key * experts + k]; }
};

namespace detail {

inline int iteration_budget(double gamma, double max_reward, double tol) {
  constexpr int kMargin = 200;
  const double vmax = max_reward / (1.0 - gamma);
  if (!(vmax > 0.0)) return kMargin;
  const double n = std::log(tol * (1.0 - gamma) / vmax) / std::log(gamma);
  return static_cast<int>(std::ceil(std::max(n, 0.0))) + kMargin;
}

inline std::vector<double> key_average(const ExactModel& m, const std::vector<double>& v) {
  std::vector<double> w(m.key_count(), 0.0);
  for (std::size_t s = 0; s < m.state_count(); ++s) w[m.key_of(s)] += m.event_prob(s) * v[s];
  return w;
}

inline double backup(std::span<const Outcome> outs, const std::vector<double>& w, double gamma) {
  double acc = 0.0;
  for (const auto& o : outs) acc += o.prob * (o.reward + gamma * w[o.next_key]);
  return acc;
}

// Fixed point of V = T V where T is given per state through `apply`.
template <class Backup>
ValueTable solve(const ExactModel& m, double tol, Backup apply) {
  const double gamma = m.config().discount;
  const int budget = iteration_budget(gamma, m.max_abs_reward(), tol);
  ValueTable out;
  out.values.assign(m.state_count(), 0.0);
  std::vector<double> next(m.state_count());
  for (int it = 0;; ++it) {
    const auto w = key_average(m, out.values);
    double res = 0.0;
    for (std::size_t s = 0; s < m.state_count(); ++s) {
      next[s] = apply(s, w);
      res = std::max(res, std::abs(next[s] - out.values[s]));
    }
    out.residual = res;
    out.iterations = it;
    if (res <= tol) return out;
    if (it >= budget)
      throw NonConvergence("no convergence after " + std::to_string(it) + " sweeps (residual " + std::to_string(res) + ")");
    out.values.swap(next);
  }
}

}  // namespace detail

inline std::vector<double> tabulate_weights(const ExactModel& m, const ExpertSelector& selector) {
  const std::size_t experts = m.experts();
  std::vector<double> q(m.key_count() * experts);
  for (std::size_t key = 0; key < m.key_count(); ++key) {
    const auto row = selector(StateKey{m.indexer().queues(key)});
    if (row.size() != experts) throw std::invalid_argument("selector width does not match roster size");
    std::copy(row.begin(), row.end(), q.begin() + static_cast<std::ptrdiff_t>(key * experts));
  }
  return q;
}

inline MixtureEvaluation evaluate_tabulated(const ExactModel& m, std::vector<double> weights, double tol = 1e-10) {
  const std::size_t experts = m.experts();
  if (experts == 0) throw std::invalid_argument("evaluate_mixture needs at least one expert");
  const double gamma = m.config().discount;
  MixtureEvaluation ev;
  ev.experts = experts;
  ev.weights = std::move(weights);
  ev.v = detail::solve(m, tol, [&](std::size_t s, const std::vector<double>& w) {
    const double* qk = ev.weights.data() + m.key_of(s) * experts;
    double acc = 0.0;
    for (std::size_t k = 0; k < experts; ++k)
      if (qk[k] > 0.0) acc += qk[k] * detail::backup(m.expert_outcomes(s, k), w, gamma);
    return acc;
  });
  const auto w = detail::key_average(m, ev.v.values);
  ev.q.resize(m.state_count() * experts);
  ev.a.resize(m.state_count() * experts);
  for (std::size_t s = 0; s < m.state_count(); ++s) {
    const double* qk = ev.weights.data() + m.key_of(s) * experts;
    double mix = 0.0;
    for (std::size_t k = 0; k < experts; ++k) {
      ev.q[s * experts + k] = detail::backup(m.expert_outcomes(s, k), w, gamma);
      mix += qk[k] * ev.q[s * experts + k];
    }
    for (std::size_t k = 0; k < experts; ++k) ev.a[s * experts + k] = ev.q[s * experts + k] - mix;
  }
  ev.key_value = w;
  ev.key_q.assign(m.key_count() * experts, 0.0);
  for (std::size_t s = 0; s < m.state_count(); ++s)
    for (std::size_t k = 0; k < experts; ++k)
      ev.key_q[m.key_of(s) * experts + k] += m.event_prob(s) * ev.q[s * experts + k];
  ev.key_a.resize(ev.key_q.size());
  for (std::size_t key = 0; key < m.key_count(); ++key) {
    double mix = 0.0;
    for (std::size_t k = 0; k < experts; ++k) mix += ev.weights[key * experts + k] * ev.key_q[key * experts + k];
    for (std::size_t k = 0; k < experts; ++k) ev.key_a[key * experts + k] = ev.key_q[key * experts + k] - mix;
  }
  return ev;
}

inline MixtureEvaluation evaluate_mixture(const ExactModel& m, const ExpertSelector& selector, double tol = 1e-10) {
  return evaluate_tabulated(m, tabulate_weights(m, selector), tol);
}

inline MixtureEvaluation evaluate_mixture(const ExactModel& m, const WeightTable& weights, double tol = 1e-10) {
  return evaluate_mixture(m, selector_of(weights), tol);
}

inline MixtureEvaluation evaluate_mixture(const ModelConfig& c, const WeightTable& weights, const Roster& roster,
                                          double tol = 1e-10) {
  return evaluate_mixture(ExactModel(c, roster), weights, tol);
}

inline MixtureEvaluation evaluate_expert(const ExactModel& m, std::size_t k, double tol = 1e-10) {
  return evaluate_mixture(m, dirac_selector(m.experts(), k), tol);
}

struct BestMixture {
  WeightTable weights;
  std::vector<std::size_t> choice;  // selected expert per key index
  MixtureEvaluation evaluation;
  int improvement_rounds = 0;
};

// Policy iteration over deterministic expert selections per queue key.
inline BestMixture best_mixture(const ExactModel& m, double tol = 1e-10) {
  const std::size_t experts = m.experts();
  std::vector<std::size_t> choice(m.key_count(), 0);
  auto tabulate = [&] {
    std::vector<double> q(m.key_count() * experts, 0.0);
    for (std::size_t key = 0; key < m.key_count(); ++key) q[key * experts + choice[key]] = 1.0;
    return q;
  };
  MixtureEvaluation ev = evaluate_tabulated(m, tabulate(), tol);
  int rounds = 0;
  for (;; ++rounds) {
    if (rounds > 10'000) throw NonConvergence("policy iteration did not stabilize");
    bool changed = false;
    for (std::size_t key = 0; key < m.key_count(); ++key) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < experts; ++k)
        if (ev.key_q_at(key, k) > ev.key_q_at(key, best)) best = k;
      // Switch only on a margin above evaluation noise so ties cannot cycle.
      const double margin = 1e-9 * std::max(1.0, std::abs(ev.key_q_at(key, best)));
      if (best != choice[key] && ev.key_q_at(key, best) > ev.key_q_at(key, choice[key]) + margin) {
        choice[key] = best;
        changed = true;
      }
    }
    if (!changed) break;
    ev = evaluate_tabulated(m, tabulate(), tol);
  }
  WeightTable w(experts);
  for (std::size_t key = 0; key < m.key_count(); ++key) {
    std::vector<double> row(experts, 0.0);
    row[choice[key]] = 1.0;
    w.set(StateKey{m.indexer().queues(key)}, std::move(row));
  }
  return {std::move(w), std::move(choice), std::move(ev), rounds};
}

inline BestMixture best_mixture(const ModelConfig& c, const Roster& roster, double tol = 1e-10) {
  return best_mixture(ExactModel(c, roster), tol);
}

// Value iteration over every legal primitive action.
inline ValueTable optimal_value(const ExactModel& m, double tol = 1e-10) {
  const double gamma = m.config().discount;
  return detail::solve(m, tol, [&](std::size_t s, const std::vector<double>& w) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& o : m.action_outcomes(s)) best = std::max(best, o.reward + gamma * w[o.next_key]);
    return best;
  });
}

inline ValueTable optimal_value(const ModelConfig& c, double tol = 1e-10) { return optimal_value(ExactModel(c, {}), tol); }

// Value of a deterministic primitive-action policy.
inline ValueTable evaluate_action_policy(const ExactModel& m, const std::function<Action(const State&)>& policy,
                                         double tol = 1e-10) {
  std::vector<std::size_t> pick(m.state_count());
  for (std::size_t s = 0; s < m.state_count(); ++s) {
    const auto acts = legal_actions(m.config(), m.state(s));
    const Action a = policy(m.state(s));
    const auto it = std::find(acts.begin(), acts.end(), a);
    if (it == acts.end()) throw ContractError("policy chose illegal action " + to_string(a));
    pick[s] = static_cast<std::size_t>(it - acts.begin());
  }
  const double gamma = m.config().discount;
  return detail::solve(m, tol, [&](std::size_t s, const std::vector<double>& w) {
    const Outcome& o = m.action_outcomes(s)[pick[s]];
    return o.reward + gamma * w[o.next_key];
  });
}

// Greedy primitive action per state under a value table.
inline std::vector<Action> greedy_actions(const ExactModel& m, const ValueTable& v) {
  const double gamma = m.config().discount;
  const auto w = detail::key_average(m, v.values);
  std::vector<Action> out(m.state_count());
  for (std::size_t s = 0; s < m.state_count(); ++s) {
    const auto acts = legal_actions(m.config(), m.state(s));
    const auto outs = m.action_outcomes(s);
    std::size_t best = 0;
    for (std::size_t i = 1; i < outs.size(); ++i)
      if (outs[i].reward + gamma * w[outs[i].next_key] > outs[best].reward + gamma * w[outs[best].next_key]) best = i;
    out[s] = acts[best];
  }
  return out;
}

inline double value_at_initial(const ExactModel& m, const ValueTable& v) {
  if (v.values.size() != m.state_count()) throw std::invalid_argument("value table does not match the state space");
  double acc = 0.0;
  for (const auto& sp : initial_distribution(m.config())) acc += sp.prob * v.values[m.state_index(sp.state)];
  return acc;
}

// Bellman residual of a mixture's value table, recomputed with one extra backup.
inline double mixture_residual(const ExactModel& m, const MixtureEvaluation& ev) {
  const auto w = detail::key_average(m, ev.v.values);
  const double gamma = m.config().discount;
  double res = 0.0;
  for (std::size_t s = 0; s < m.state_count(); ++s) {
    const double* qk = ev.weights.data() + m.key_of(s) * ev.experts;
    double acc = 0.0;
    for (std::size_t k = 0; k < ev.experts; ++k) acc += qk[k] * detail::backup(m.expert_outcomes(s, k), w, gamma);
    res = std::max(res, std::abs(acc - ev.v.values[s]));
  }
  return res;
}

inline double optimal_residual(const ExactModel& m, const ValueTable& v) {
  const auto w = detail::key_average(m, v.values);
  const double gamma = m.config().discount;
  double res = 0.0;
  for (std::size_t s = 0; s < m.state_count(); ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& o : m.action_outcomes(s)) best = std::max(best, o.reward + gamma * w[o.next_key]);
    res = std::max(res, std::abs(best - v.values[s]));
  }
  return res;
}

inline void write_value_csv(std::ostream& os, const ExactModel& m, const ValueTable& v) {
  os << "queue_vector,event,value\n";
  os.precision(17);
  for (std::size_t s = 0; s < m.state_count(); ++s)
    os << to_string(m.state(s).queues) << ',' << to_string(m.state(s).event) << ',' << v.values[s] << '\n';
}

}  // namespace orchestra
