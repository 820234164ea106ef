#pragma once

// Stochastic matching MDP under uniformization: scenario configs, events,
// legal actions, rewards, transitions and state enumeration.
//
// Classes are 0-based throughout. A state is (queues, event); the event is
// the one that has just occurred and whose item (if any) awaits a decision.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "orchestra/rng.hpp"

namespace orchestra {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument("config field '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Raised when a caller violates an operation's precondition (e.g. an illegal action).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Edge {
  int a = 0;
  int b = 0;
  double reward = 0.0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct ModelConfig {
  std::string name;
  int class_count = 0;
  int capacity = 0;
  std::vector<double> arrival_rates;
  std::vector<double> departure_rates;
  std::vector<double> relocation_rates;
  std::vector<std::optional<int>> next_node;
  std::vector<Edge> edges;
  std::vector<double> departure_costs;
  std::vector<double> relocation_costs;
  double discount = 0.0;
  // Optional per-class tags ("donor", "low", "medium", "high"); empty when unused.
  std::vector<std::string> labels;

  // Derived by finalize(): neighbors of each class with the edge reward.
  std::vector<std::vector<std::pair<int, double>>> adjacency;
  double total_rate = 0.0;

  bool operator==(const ModelConfig& o) const {
    return name == o.name && class_count == o.class_count && capacity == o.capacity &&
           arrival_rates == o.arrival_rates && departure_rates == o.departure_rates &&
           relocation_rates == o.relocation_rates && next_node == o.next_node && edges == o.edges &&
           departure_costs == o.departure_costs && relocation_costs == o.relocation_costs &&
           discount == o.discount && labels == o.labels;
  }

  int size() const { return class_count; }

  double match_reward(int i, int j) const {
    for (const auto& [n, g] : adjacency[static_cast<std::size_t>(i)])
      if (n == j) return g;
    throw ContractError("classes " + std::to_string(i) + " and " + std::to_string(j) +
                        " are not compatible");
  }

  bool compatible(int i, int j) const {
    for (const auto& [n, g] : adjacency[static_cast<std::size_t>(i)])
      if (n == j) return true;
    return false;
  }
};

namespace detail {

inline void check_vector(const std::vector<double>& v, int n, const char* field, bool nonnegative) {
  if (static_cast<int>(v.size()) != n)
    throw ConfigError(field, "expected " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
  for (double x : v) {
    if (!std::isfinite(x)) throw ConfigError(field, "non-finite entry");
    if (nonnegative && x < 0.0) throw ConfigError(field, "negative entry");
  }
}

}  // namespace detail

// Validates every invariant and fills the derived members.
inline ModelConfig finalize(ModelConfig c) {
  if (c.class_count <= 0) throw ConfigError("class_count", "must be positive");
  if (c.capacity <= 0) throw ConfigError("capacity", "must be positive");
  const int n = c.class_count;
  const auto sz = static_cast<std::size_t>(n);
  if (c.departure_rates.empty()) c.departure_rates.assign(sz, 0.0);
  if (c.relocation_rates.empty()) c.relocation_rates.assign(sz, 0.0);
  if (c.departure_costs.empty()) c.departure_costs.assign(sz, 0.0);
  if (c.relocation_costs.empty()) c.relocation_costs.assign(sz, 0.0);
  if (c.next_node.empty()) c.next_node.assign(sz, std::nullopt);
  detail::check_vector(c.arrival_rates, n, "arrival_rates", true);
  detail::check_vector(c.departure_rates, n, "departure_rates", true);
  detail::check_vector(c.relocation_rates, n, "relocation_rates", true);
  detail::check_vector(c.departure_costs, n, "departure_costs", true);
  detail::check_vector(c.relocation_costs, n, "relocation_costs", true);
  if (static_cast<int>(c.next_node.size()) != n)
    throw ConfigError("next_node", "expected " + std::to_string(n) + " entries");
  if (!c.labels.empty() && static_cast<int>(c.labels.size()) != n)
    throw ConfigError("labels", "expected " + std::to_string(n) + " entries");
  if (!(c.discount > 0.0 && c.discount < 1.0)) throw ConfigError("discount", "must lie in (0, 1)");

  for (int i = 0; i < n; ++i) {
    const auto& nx = c.next_node[static_cast<std::size_t>(i)];
    if (nx && (*nx < 0 || *nx >= n || *nx == i))
      throw ConfigError("next_node", "entry " + std::to_string(i) + " is not a valid other class");
    if (c.relocation_rates[static_cast<std::size_t>(i)] > 0.0 && !nx)
      throw ConfigError("next_node", "class " + std::to_string(i) + " relocates but has no next node");
    if (!c.labels.empty() && c.labels[static_cast<std::size_t>(i)] == "high" &&
        c.relocation_rates[static_cast<std::size_t>(i)] != 0.0)
      throw ConfigError("relocation_rates", "highest-urgency class " + std::to_string(i) + " must not relocate");
  }

  c.adjacency.assign(sz, {});
  for (const auto& e : c.edges) {
    if (e.a < 0 || e.a >= n || e.b < 0 || e.b >= n) throw ConfigError("edges", "endpoint out of range");
    if (e.a == e.b) throw ConfigError("edges", "self-loop on class " + std::to_string(e.a));
    if (!std::isfinite(e.reward)) throw ConfigError("edges", "non-finite reward");
    for (const auto& [j, g] : c.adjacency[static_cast<std::size_t>(e.a)])
      if (j == e.b) throw ConfigError("edges", "duplicate edge {" + std::to_string(e.a) + "," + std::to_string(e.b) + "}");
    c.adjacency[static_cast<std::size_t>(e.a)].emplace_back(e.b, e.reward);
    c.adjacency[static_cast<std::size_t>(e.b)].emplace_back(e.a, e.reward);
  }
  for (auto& adj : c.adjacency) std::sort(adj.begin(), adj.end());

  double total = 0.0;
  for (std::size_t i = 0; i < sz; ++i)
    total += c.arrival_rates[i] + (c.departure_rates[i] + c.relocation_rates[i]) * c.capacity;
  if (!(total > 0.0)) throw ConfigError("arrival_rates", "total uniformization rate must be positive");
  c.total_rate = total;
  return c;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  j["class_count"] = c.class_count;
  j["capacity"] = c.capacity;
  j["arrival_rates"] = c.arrival_rates;
  j["departure_rates"] = c.departure_rates;
  j["relocation_rates"] = c.relocation_rates;
  nlohmann::json nx = nlohmann::json::array();
  for (const auto& n : c.next_node) nx.push_back(n ? nlohmann::json(*n) : nlohmann::json(nullptr));
  j["next_node"] = nx;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : c.edges) edges.push_back({e.a, e.b, e.reward});
  j["edges"] = edges;
  j["departure_costs"] = c.departure_costs;
  j["relocation_costs"] = c.relocation_costs;
  j["discount"] = c.discount;
  if (!c.labels.empty()) j["labels"] = c.labels;
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "expected a JSON object");
  ModelConfig c;
  auto read = [&](const char* field, auto& out, bool required) {
    if (!j.contains(field)) {
      if (required) throw ConfigError(field, "missing");
      return;
    }
    try {
      j.at(field).get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field, e.what());
    }
  };
  read("name", c.name, false);
  read("class_count", c.class_count, true);
  read("capacity", c.capacity, true);
  read("arrival_rates", c.arrival_rates, true);
  read("departure_rates", c.departure_rates, false);
  read("relocation_rates", c.relocation_rates, false);
  read("departure_costs", c.departure_costs, false);
  read("relocation_costs", c.relocation_costs, false);
  read("discount", c.discount, true);
  read("labels", c.labels, false);
  if (j.contains("next_node")) {
    const auto& nx = j.at("next_node");
    if (!nx.is_array()) throw ConfigError("next_node", "expected an array");
    for (const auto& v : nx) {
      if (v.is_null()) c.next_node.emplace_back(std::nullopt);
      else if (v.is_number_integer()) c.next_node.emplace_back(v.get<int>());
      else throw ConfigError("next_node", "entries must be integers or null");
    }
  }
  if (!j.contains("edges") || !j.at("edges").is_array()) throw ConfigError("edges", "missing or not an array");
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 3 || !e[0].is_number_integer() || !e[1].is_number_integer() ||
        !e[2].is_number())
      throw ConfigError("edges", "each edge must be [i, j, reward]");
    c.edges.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<double>()});
  }
  return finalize(std::move(c));
}

// ---------------------------------------------------------------------------
// Built-in scenarios

inline ModelConfig diamond_config() {
  ModelConfig c;
  c.name = "diamond";
  c.class_count = 4;
  c.capacity = 5;
  c.arrival_rates = {0.125, 0.225, 0.15, 0.05};
  c.edges = {{0, 1, 10.0}, {1, 3, 200.0}, {1, 2, 50.0}, {0, 2, 1.0}, {2, 3, 20.0}};
  c.discount = 0.8;
  return finalize(std::move(c));
}

namespace detail {

struct UrgencyCosts {
  double reward;
  double departure;
  double relocation;
};

// Donors 0..3 (O, A, B, AB); recipients in triples (high, medium, low) per
// blood group starting at class 4. Relocation moves low -> medium -> high.
inline ModelConfig organ_layout(std::string name, const std::vector<double>& arrival,
                                const std::vector<double>& departure, const std::vector<double>& relocation,
                                UrgencyCosts low, UrgencyCosts medium, UrgencyCosts high, int capacity,
                                double discount) {
  ModelConfig c;
  c.name = std::move(name);
  c.class_count = 16;
  c.capacity = capacity;
  c.arrival_rates = arrival;
  c.departure_rates = departure;
  c.relocation_rates = relocation;
  c.next_node.assign(16, std::nullopt);
  c.departure_costs.assign(16, 0.0);
  c.relocation_costs.assign(16, 0.0);
  c.labels.assign(16, "donor");
  const UrgencyCosts levels[3] = {high, medium, low};
  const char* names[3] = {"high", "medium", "low"};
  for (int group = 0; group < 4; ++group) {
    for (int u = 0; u < 3; ++u) {
      const int cls = 4 + 3 * group + u;
      const auto k = static_cast<std::size_t>(cls);
      c.labels[k] = names[u];
      c.departure_costs[k] = levels[u].departure;
      c.relocation_costs[k] = levels[u].relocation;
      if (u > 0) c.next_node[k] = cls - 1;
    }
  }
  // Donor group -> recipient groups it can serve (O universal, AB recipient universal).
  const std::vector<std::vector<int>> serves = {{0, 1, 2, 3}, {1, 3}, {2, 3}, {3}};
  for (int donor = 0; donor < 4; ++donor) {
    for (int group : serves[static_cast<std::size_t>(donor)]) {
      for (int u = 0; u < 3; ++u) c.edges.push_back({donor, 4 + 3 * group + u, levels[u].reward});
    }
  }
  c.discount = discount;
  return finalize(std::move(c));
}

}  // namespace detail

inline ModelConfig organ_a_config() {
  const std::vector<double> arrival = {0.1,   0.002, 0.082, 0.097, 0.065, 0.029,  0.025, 0.098,
                                       0.022, 0.011, 0.089, 0.124, 0.0005, 0.067, 0.105, 0.079};
  std::vector<double> departure(16, 0.0), relocation(16, 0.0);
  for (int g = 0; g < 4; ++g) {
    const auto base = static_cast<std::size_t>(4 + 3 * g);
    departure[base] = 0.0008;
    departure[base + 1] = 0.0003;
    departure[base + 2] = 0.0001;
    relocation[base + 1] = 0.0005;
    relocation[base + 2] = 0.0005;
  }
  relocation[11] = 0.03;
  return detail::organ_layout("organ_a", arrival, departure, relocation, {50, 30, 5}, {200, 20, 10},
                              {1000, 10, 0}, 5, 0.8);
}

inline ModelConfig organ_b_config() {
  const double group_rate[4] = {0.049, 0.018, 0.018, 0.063};
  std::vector<double> arrival(16), departure(16, 0.0), relocation(16, 0.0);
  for (int g = 0; g < 4; ++g) {
    arrival[static_cast<std::size_t>(g)] = group_rate[g];
    const auto base = static_cast<std::size_t>(4 + 3 * g);
    for (std::size_t u = 0; u < 3; ++u) arrival[base + u] = group_rate[g];
    departure[base] = 0.008;
    departure[base + 1] = 0.003;
    departure[base + 2] = 0.001;
    relocation[base + 1] = 0.0005;
    relocation[base + 2] = 0.005;
  }
  return detail::organ_layout("organ_b", arrival, departure, relocation, {100, 50, 0}, {500, 20, 10},
                              {1000, 10, 5}, 15, 0.9);
}

inline std::vector<std::string> scenario_names() { return {"diamond", "organ_a", "organ_b"}; }

inline ModelConfig build_scenario(const std::string& name) {
  if (name == "diamond") return diamond_config();
  if (name == "organ_a") return organ_a_config();
  if (name == "organ_b") return organ_b_config();
  throw ConfigError("name", "unknown scenario '" + name + "'");
}

inline ModelConfig build_scenario(const nlohmann::json& document) {
  if (document.is_string()) return build_scenario(document.get<std::string>());
  return config_from_json(document);
}

// ---------------------------------------------------------------------------
// States, events and actions

enum class EventKind : std::uint8_t { Arrival = 0, Departure = 1, Relocation = 2, None = 3 };

struct Event {
  EventKind kind = EventKind::None;
  int cls = -1;
  friend auto operator<=>(const Event&, const Event&) = default;
};

using Queues = std::vector<int>;

struct StateKey {
  Queues queues;
  friend auto operator<=>(const StateKey&, const StateKey&) = default;
};

struct State {
  Queues queues;
  Event event;
  StateKey key() const { return StateKey{queues}; }
  friend auto operator<=>(const State&, const State&) = default;
};

struct Action {
  enum class Kind : std::uint8_t { Match = 0, Enqueue = 1, Trash = 2 };
  Kind kind = Kind::Enqueue;
  int first = -1;
  int second = -1;

  static Action match(int i, int j) { return {Kind::Match, i, j}; }
  static Action enqueue() { return {Kind::Enqueue, -1, -1}; }
  static Action trash() { return {Kind::Trash, -1, -1}; }
  friend auto operator<=>(const Action&, const Action&) = default;
};

struct EventProb {
  Event event;
  double prob;
};

struct Transition {
  State next;
  double prob;
};

inline std::size_t hash_queues(const Queues& q) {
  std::size_t h = 1469598103934665603ULL;
  for (int v : q) {
    h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

struct StateKeyHash {
  std::size_t operator()(const StateKey& k) const { return hash_queues(k.queues); }
};

inline std::string to_string(const Queues& q) {
  std::string s;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(q[i]);
  }
  return s;
}

inline std::string to_string(const StateKey& k) { return to_string(k.queues); }

inline StateKey parse_key(const std::string& s) {
  StateKey k;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, '-')) k.queues.push_back(std::stoi(part));
  return k;
}

inline std::string to_string(const Event& e) {
  switch (e.kind) {
    case EventKind::Arrival: return "arrival:" + std::to_string(e.cls);
    case EventKind::Departure: return "departure:" + std::to_string(e.cls);
    case EventKind::Relocation: return "relocation:" + std::to_string(e.cls);
    case EventKind::None: return "none";
  }
  return "none";
}

inline std::string to_string(const Action& a) {
  switch (a.kind) {
    case Action::Kind::Match: return "match(" + std::to_string(a.first) + "," + std::to_string(a.second) + ")";
    case Action::Kind::Enqueue: return "enqueue";
    case Action::Kind::Trash: return "trash";
  }
  return "?";
}

inline void check_queues(const ModelConfig& c, const Queues& q) {
  if (static_cast<int>(q.size()) != c.class_count)
    throw ContractError("queue vector has " + std::to_string(q.size()) + " entries, expected " +
                        std::to_string(c.class_count));
  for (int v : q)
    if (v < 0 || v > c.capacity) throw ContractError("queue length " + std::to_string(v) + " outside [0, L]");
}

// ---------------------------------------------------------------------------
// Dynamics

// Events with positive probability, in the order arrivals, departures,
// relocations, no-event.
inline std::vector<EventProb> event_distribution(const ModelConfig& c, const StateKey& key) {
  check_queues(c, key.queues);
  std::vector<EventProb> out;
  out.reserve(static_cast<std::size_t>(c.class_count) * 3 + 1);
  const double total = c.total_rate;
  double used = 0.0;
  for (int i = 0; i < c.class_count; ++i) {
    const double r = c.arrival_rates[static_cast<std::size_t>(i)];
    if (r > 0.0) out.push_back({{EventKind::Arrival, i}, r / total});
    used += r;
  }
  for (int i = 0; i < c.class_count; ++i) {
    const double r = c.departure_rates[static_cast<std::size_t>(i)] * key.queues[static_cast<std::size_t>(i)];
    if (r > 0.0) out.push_back({{EventKind::Departure, i}, r / total});
    used += r;
  }
  for (int i = 0; i < c.class_count; ++i) {
    const double r = c.relocation_rates[static_cast<std::size_t>(i)] * key.queues[static_cast<std::size_t>(i)];
    if (r > 0.0) out.push_back({{EventKind::Relocation, i}, r / total});
    used += r;
  }
  const double rest = (total - used) / total;
  if (rest > 1e-15) out.push_back({{EventKind::None, -1}, rest});
  return out;
}

// Class where the event's item awaits placement, if any.
inline std::optional<int> decision_node(const ModelConfig& c, const State& s) {
  switch (s.event.kind) {
    case EventKind::Arrival: return s.event.cls;
    case EventKind::Relocation: return c.next_node[static_cast<std::size_t>(s.event.cls)];
    default: return std::nullopt;
  }
}

// Queue vector after the event, before the action; may transiently hold L+1
// at the decision node.
inline Queues post_event_queues(const ModelConfig& c, const State& s) {
  Queues q = s.queues;
  switch (s.event.kind) {
    case EventKind::Arrival: ++q[static_cast<std::size_t>(s.event.cls)]; break;
    case EventKind::Departure: --q[static_cast<std::size_t>(s.event.cls)]; break;
    case EventKind::Relocation:
      --q[static_cast<std::size_t>(s.event.cls)];
      ++q[static_cast<std::size_t>(*c.next_node[static_cast<std::size_t>(s.event.cls)])];
      break;
    case EventKind::None: break;
  }
  return q;
}

inline void check_state(const ModelConfig& c, const State& s) {
  check_queues(c, s.queues);
  const auto& e = s.event;
  if (e.kind == EventKind::None) return;
  if (e.cls < 0 || e.cls >= c.class_count) throw ContractError("event class out of range");
  if ((e.kind == EventKind::Departure || e.kind == EventKind::Relocation) &&
      s.queues[static_cast<std::size_t>(e.cls)] == 0)
    throw ContractError("departure/relocation from an empty queue");
  if (e.kind == EventKind::Relocation && !c.next_node[static_cast<std::size_t>(e.cls)])
    throw ContractError("relocation from a class without next node");
}

inline std::vector<Action> legal_actions(const ModelConfig& c, const State& s) {
  const auto d = decision_node(c, s);
  if (!d) return {Action::enqueue()};
  const Queues post = post_event_queues(c, s);
  std::vector<Action> out;
  for (const auto& [j, g] : c.adjacency[static_cast<std::size_t>(*d)])
    if (post[static_cast<std::size_t>(j)] >= 1) out.push_back(Action::match(*d, j));
  // Capacity rule uses the decision node's count before the item is placed.
  const int before = post[static_cast<std::size_t>(*d)] - 1;
  out.push_back(before <= c.capacity - 1 ? Action::enqueue() : Action::trash());
  return out;
}

inline bool is_legal(const ModelConfig& c, const State& s, const Action& a) {
  const auto d = decision_node(c, s);
  if (!d) return a.kind == Action::Kind::Enqueue;
  const Queues post = post_event_queues(c, s);
  const int before = post[static_cast<std::size_t>(*d)] - 1;
  switch (a.kind) {
    case Action::Kind::Match:
      return a.first == *d && a.second >= 0 && a.second < c.class_count && c.compatible(*d, a.second) &&
             post[static_cast<std::size_t>(a.second)] >= 1;
    case Action::Kind::Enqueue: return before <= c.capacity - 1;
    case Action::Kind::Trash: return before == c.capacity;
  }
  return false;
}

inline double reward(const ModelConfig& c, const State& s, const Action& a) {
  if (!is_legal(c, s, a)) throw ContractError("illegal action " + to_string(a) + " for event " + to_string(s.event));
  double r = 0.0;
  if (s.event.kind == EventKind::Departure) r -= c.departure_costs[static_cast<std::size_t>(s.event.cls)];
  if (s.event.kind == EventKind::Relocation) r -= c.relocation_costs[static_cast<std::size_t>(s.event.cls)];
  if (a.kind == Action::Kind::Match) r += c.match_reward(a.first, a.second);
  return r;
}

// Net queue change of (event, action), applied once and bounds-checked.
inline Queues next_queues(const ModelConfig& c, const State& s, const Action& a) {
  Queues q = s.queues;
  auto bump = [&](int i, int by) { q[static_cast<std::size_t>(i)] += by; };
  switch (s.event.kind) {
    case EventKind::Arrival: bump(s.event.cls, +1); break;
    case EventKind::Departure: bump(s.event.cls, -1); break;
    case EventKind::Relocation:
      bump(s.event.cls, -1);
      bump(*c.next_node[static_cast<std::size_t>(s.event.cls)], +1);
      break;
    case EventKind::None: break;
  }
  if (a.kind == Action::Kind::Match) {
    bump(a.first, -1);
    bump(a.second, -1);
  } else if (a.kind == Action::Kind::Trash) {
    const auto d = decision_node(c, s);
    if (d) bump(*d, -1);
  }
  for (int v : q)
    if (v < 0 || v > c.capacity)
      throw std::logic_error("internal consistency: queue " + std::to_string(v) + " outside [0, L] after " +
                             to_string(a));
  return q;
}

inline std::vector<Transition> transition_support(const ModelConfig& c, const State& s, const Action& a) {
  if (!is_legal(c, s, a)) throw ContractError("illegal action " + to_string(a));
  StateKey next{next_queues(c, s, a)};
  std::vector<Transition> out;
  for (const auto& ep : event_distribution(c, next)) out.push_back({State{next.queues, ep.event}, ep.prob});
  return out;
}

inline Event sample_event(const ModelConfig& c, const StateKey& key, Rng& rng) {
  const auto dist = event_distribution(c, key);
  double u = rng.uniform();
  for (const auto& ep : dist) {
    if (u < ep.prob) return ep.event;
    u -= ep.prob;
  }
  return dist.back().event;
}

struct StepResult {
  State next;
  double reward;
};

inline StepResult step(const ModelConfig& c, const State& s, const Action& a, Rng& rng) {
  const double r = reward(c, s, a);
  StateKey next{next_queues(c, s, a)};
  Event e = sample_event(c, next, rng);
  return {State{std::move(next.queues), e}, r};
}

struct StateProb {
  State state;
  double prob;
};

inline std::vector<StateProb> initial_distribution(const ModelConfig& c) {
  double sum = 0.0;
  for (double l : c.arrival_rates) sum += l;
  if (!(sum > 0.0)) throw ContractError("initial distribution needs a positive arrival rate");
  std::vector<StateProb> out;
  Queues empty(static_cast<std::size_t>(c.class_count), 0);
  for (int i = 0; i < c.class_count; ++i) {
    const double l = c.arrival_rates[static_cast<std::size_t>(i)];
    if (l > 0.0) out.push_back({State{empty, {EventKind::Arrival, i}}, l / sum});
  }
  return out;
}

inline State sample_initial(const ModelConfig& c, Rng& rng) {
  const auto dist = initial_distribution(c);
  double u = rng.uniform();
  for (const auto& sp : dist) {
    if (u < sp.prob) return sp.state;
    u -= sp.prob;
  }
  return dist.back().state;
}

// Bounds of the reward over every legal (state, action) pair.
inline std::pair<double, double> reward_bounds(const ModelConfig& c) {
  double lo = 0.0, hi = 0.0;
  double max_cost = 0.0;
  for (int i = 0; i < c.class_count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (c.departure_rates[k] > 0.0) max_cost = std::max(max_cost, c.departure_costs[k]);
    if (c.relocation_rates[k] > 0.0) max_cost = std::max(max_cost, c.relocation_costs[k]);
  }
  for (const auto& e : c.edges) hi = std::max(hi, e.reward), lo = std::min(lo, e.reward);
  return {lo - max_cost, hi};
}

// ---------------------------------------------------------------------------
// Enumeration

// Mixed-radix index of queue vectors, radix L+1.
class QueueIndexer {
 public:
  explicit QueueIndexer(const ModelConfig& c) : classes_(c.class_count), radix_(c.capacity + 1) {
    double n = std::pow(static_cast<double>(radix_), classes_);
    count_ = n > 9e15 ? SIZE_MAX : static_cast<std::size_t>(n);
  }

  std::size_t count() const { return count_; }

  std::size_t index(const Queues& q) const {
    std::size_t idx = 0;
    for (int i = classes_ - 1; i >= 0; --i) idx = idx * static_cast<std::size_t>(radix_) + static_cast<std::size_t>(q[static_cast<std::size_t>(i)]);
    return idx;
  }

  Queues queues(std::size_t idx) const {
    Queues q(static_cast<std::size_t>(classes_));
    for (int i = 0; i < classes_; ++i) {
      q[static_cast<std::size_t>(i)] = static_cast<int>(idx % static_cast<std::size_t>(radix_));
      idx /= static_cast<std::size_t>(radix_);
    }
    return q;
  }

 private:
  int classes_;
  int radix_;
  std::size_t count_;
};

class StateSpaceTooLarge : public std::length_error {
 public:
  explicit StateSpaceTooLarge(double count)
      : std::length_error("state space too large: ~" + std::to_string(count) + " states"), count_(count) {}
  double count() const { return count_; }

 private:
  double count_;
};

inline constexpr std::size_t kDefaultStateCap = 1'000'000;

// Every (queues, event) pair with positive event probability, grouped by queue
// vector in indexer order.
inline std::vector<State> enumerate_states(const ModelConfig& c, std::size_t cap = kDefaultStateCap) {
  const double keys = std::pow(static_cast<double>(c.capacity + 1), c.class_count);
  const double bound = keys * (3.0 * c.class_count + 1.0);
  if (keys > static_cast<double>(cap)) throw StateSpaceTooLarge(bound);
  QueueIndexer idx(c);
  std::vector<State> out;
  for (std::size_t k = 0; k < idx.count(); ++k) {
    StateKey key{idx.queues(k)};
    for (const auto& ep : event_distribution(c, key)) out.push_back(State{key.queues, ep.event});
    if (out.size() > cap) throw StateSpaceTooLarge(bound);
  }
  return out;
}

}  // namespace orchestra

template <>
struct std::hash<orchestra::StateKey> {
  std::size_t operator()(const orchestra::StateKey& k) const { return orchestra::hash_queues(k.queues); }
};
