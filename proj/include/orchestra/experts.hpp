#pragma once

// The four heuristic matching experts. Each maps a state to a distribution
// over legal actions and never looks at history.

#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "orchestra/matching_env.hpp"
#include "orchestra/rng.hpp"

namespace orchestra {

enum class ExpertKind { MatchLongest, GreedyPayoff, RestrictedGreedy, UniformRandom };

struct ExpertSpec {
  ExpertKind kind = ExpertKind::MatchLongest;
  // Allowed match partners for RestrictedGreedy.
  std::set<int> allowed;

  static ExpertSpec match_longest() { return {ExpertKind::MatchLongest, {}}; }
  static ExpertSpec greedy_payoff() { return {ExpertKind::GreedyPayoff, {}}; }
  static ExpertSpec restricted_greedy(std::set<int> allowed) { return {ExpertKind::RestrictedGreedy, std::move(allowed)}; }
  static ExpertSpec uniform_random() { return {ExpertKind::UniformRandom, {}}; }

  bool operator==(const ExpertSpec&) const = default;
};

using Roster = std::vector<ExpertSpec>;

struct ActionProb {
  Action action;
  double prob;
};

inline std::string expert_name(const ExpertSpec& e) {
  switch (e.kind) {
    case ExpertKind::MatchLongest: return "match_longest";
    case ExpertKind::GreedyPayoff: return "greedy_payoff";
    case ExpertKind::RestrictedGreedy: return "restricted_greedy";
    case ExpertKind::UniformRandom: return "uniform_random";
  }
  return "?";
}

// Every class except low-urgency recipients; all classes when the config is unlabeled.
inline std::set<int> default_restricted_set(const ModelConfig& c) {
  std::set<int> out;
  for (int i = 0; i < c.class_count; ++i)
    if (c.labels.empty() || c.labels[static_cast<std::size_t>(i)] != "low") out.insert(i);
  return out;
}

inline nlohmann::json to_json(const ExpertSpec& e) {
  nlohmann::json j{{"kind", expert_name(e)}};
  if (e.kind == ExpertKind::RestrictedGreedy) j["allowed"] = std::vector<int>(e.allowed.begin(), e.allowed.end());
  return j;
}

inline nlohmann::json to_json(const Roster& r) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : r) j.push_back(to_json(e));
  return j;
}

// Accepts "pi1".."pi4", kind names, or {"kind": ..., "allowed": [...]}.
inline ExpertSpec expert_from_json(const nlohmann::json& j, const ModelConfig& c) {
  std::string kind;
  if (j.is_string()) kind = j.get<std::string>();
  else if (j.is_object() && j.contains("kind")) kind = j.at("kind").get<std::string>();
  else throw ConfigError("roster", "expert entries must be strings or objects with 'kind'");
  if (kind == "pi1" || kind == "match_longest") return ExpertSpec::match_longest();
  if (kind == "pi2" || kind == "greedy_payoff") return ExpertSpec::greedy_payoff();
  if (kind == "pi4" || kind == "uniform_random") return ExpertSpec::uniform_random();
  if (kind == "pi3" || kind == "restricted_greedy") {
    std::set<int> allowed = default_restricted_set(c);
    if (j.is_object() && j.contains("allowed")) {
      allowed.clear();
      for (int v : j.at("allowed").get<std::vector<int>>()) {
        if (v < 0 || v >= c.class_count) throw ConfigError("roster", "allowed class out of range");
        allowed.insert(v);
      }
    }
    return ExpertSpec::restricted_greedy(std::move(allowed));
  }
  throw ConfigError("roster", "unknown expert kind '" + kind + "'");
}

inline Roster roster_from_json(const nlohmann::json& j, const ModelConfig& c) {
  if (!j.is_array() || j.empty()) throw ConfigError("roster", "expected a nonempty array");
  Roster r;
  for (const auto& e : j) r.push_back(expert_from_json(e, c));
  return r;
}

// Compatible partners of the decision node that hold at least one item after the event.
inline std::vector<int> prospective_matches(const ModelConfig& c, const State& s) {
  const auto d = decision_node(c, s);
  if (!d) return {};
  const Queues post = post_event_queues(c, s);
  std::vector<int> out;
  for (const auto& [j, g] : c.adjacency[static_cast<std::size_t>(*d)])
    if (post[static_cast<std::size_t>(j)] >= 1) out.push_back(j);
  return out;
}

namespace detail {

inline Action no_match_action(const ModelConfig& c, const State& s, int d) {
  const int before = post_event_queues(c, s)[static_cast<std::size_t>(d)] - 1;
  return before <= c.capacity - 1 ? Action::enqueue() : Action::trash();
}

// Candidates arrive in increasing class order, so strict comparisons keep the smaller index on ties.
inline int pick_longest(const ModelConfig& c, int d, const Queues& post, const std::vector<int>& cands) {
  int best = cands.front();
  for (int j : cands) {
    const int qj = post[static_cast<std::size_t>(j)], qb = post[static_cast<std::size_t>(best)];
    if (qj > qb || (qj == qb && c.match_reward(d, j) > c.match_reward(d, best))) best = j;
  }
  return best;
}

inline int pick_greedy(const ModelConfig& c, int d, const Queues& post, const std::vector<int>& cands) {
  int best = cands.front();
  for (int j : cands) {
    const double gj = c.match_reward(d, j), gb = c.match_reward(d, best);
    if (gj > gb || (gj == gb && post[static_cast<std::size_t>(j)] > post[static_cast<std::size_t>(best)])) best = j;
  }
  return best;
}

}  // namespace detail

inline std::vector<ActionProb> expert_action(const ModelConfig& c, const State& s, const ExpertSpec& expert) {
  const auto d = decision_node(c, s);
  if (!d) return {{Action::enqueue(), 1.0}};
  std::vector<int> cands = prospective_matches(c, s);
  if (expert.kind == ExpertKind::RestrictedGreedy) {
    std::erase_if(cands, [&](int j) { return !expert.allowed.contains(j); });
  }
  if (cands.empty()) return {{detail::no_match_action(c, s, *d), 1.0}};
  const Queues post = post_event_queues(c, s);
  switch (expert.kind) {
    case ExpertKind::MatchLongest: return {{Action::match(*d, detail::pick_longest(c, *d, post, cands)), 1.0}};
    case ExpertKind::GreedyPayoff:
    case ExpertKind::RestrictedGreedy: return {{Action::match(*d, detail::pick_greedy(c, *d, post, cands)), 1.0}};
    case ExpertKind::UniformRandom: {
      std::vector<ActionProb> out;
      const double p = 1.0 / static_cast<double>(cands.size());
      for (int j : cands) out.push_back({Action::match(*d, j), p});
      return out;
    }
  }
  return {};
}

inline Action sample_expert_action(const ModelConfig& c, const State& s, const ExpertSpec& expert, Rng& rng) {
  const auto dist = expert_action(c, s, expert);
  if (dist.size() == 1) return dist.front().action;
  return dist[rng.below(dist.size())].action;
}

}  // namespace orchestra
