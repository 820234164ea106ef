#pragma once

// Potential-based mixture weights over K experts, keyed by queue vectors.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "orchestra/experts.hpp"
#include "orchestra/matching_env.hpp"
#include "orchestra/rng.hpp"

namespace orchestra {

enum class PotentialKind { Polynomial, ExponentialFixed, ExponentialVarying };

struct PotentialSpec {
  PotentialKind kind = PotentialKind::ExponentialFixed;
  double p = 2.0;      // Polynomial degree
  double eta = 0.1;    // ExponentialFixed rate
  double eta0 = 0.3;   // ExponentialVarying base rate, i.e. 1/M
  double advantage_scale = 1.0;  // M

  static PotentialSpec polynomial(double p) {
    if (!(p >= 2.0)) throw std::invalid_argument("polynomial potential needs p >= 2");
    return {PotentialKind::Polynomial, p, 0.0, 0.0, 1.0};
  }
  // p = 2 ln K, clamped to 2 for small K.
  static PotentialSpec polynomial_for(std::size_t k) {
    return polynomial(std::max(2.0, 2.0 * std::log(static_cast<double>(k))));
  }
  static PotentialSpec exponential_fixed(double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("exponential potential needs eta > 0");
    return {PotentialKind::ExponentialFixed, 0.0, eta, 0.0, 1.0};
  }
  static PotentialSpec exponential_varying(double eta0) {
    if (!(eta0 > 0.0)) throw std::invalid_argument("varying exponential potential needs eta0 > 0");
    return {PotentialKind::ExponentialVarying, 0.0, 0.0, eta0, 1.0 / eta0};
  }

  bool exponential() const { return kind != PotentialKind::Polynomial; }

  // Rate in force at round t >= 1.
  double rate(std::size_t t, std::size_t k) const {
    if (kind == PotentialKind::ExponentialFixed) return eta;
    if (kind == PotentialKind::ExponentialVarying)
      return eta0 * std::sqrt(std::log(static_cast<double>(k)) / static_cast<double>(std::max<std::size_t>(t, 1)));
    return 0.0;
  }
};

inline std::string to_string(const PotentialSpec& s) {
  char buf[64];
  switch (s.kind) {
    case PotentialKind::Polynomial: std::snprintf(buf, sizeof buf, "pp:%g", s.p); break;
    case PotentialKind::ExponentialFixed: std::snprintf(buf, sizeof buf, "epc:%g", s.eta); break;
    case PotentialKind::ExponentialVarying: std::snprintf(buf, sizeof buf, "ept:%g", s.eta0); break;
  }
  return buf;
}

// "pp:30", "epc:0.1", "ept:0.3" (also "polynomial:", "exp-fixed:", "exp-varying:").
inline PotentialSpec parse_potential(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  if (colon == std::string::npos) throw std::invalid_argument("potential must look like kind:value, got '" + text + "'");
  const double v = std::stod(text.substr(colon + 1));
  if (kind == "pp" || kind == "polynomial") return PotentialSpec::polynomial(v);
  if (kind == "epc" || kind == "exp-fixed") return PotentialSpec::exponential_fixed(v);
  if (kind == "ept" || kind == "exp-varying") return PotentialSpec::exponential_varying(v);
  throw std::invalid_argument("unknown potential kind '" + kind + "'");
}

inline double potential_value(const PotentialSpec& spec, std::size_t t, double x, std::size_t k) {
  if (t < 1) throw std::invalid_argument("potential round index must be >= 1");
  if (spec.kind == PotentialKind::Polynomial) return std::pow(std::max(x, 0.0), spec.p);
  return std::exp(spec.rate(t, k) * x);
}

// Normalized potentials of a cumulative-advantage vector.
inline std::vector<double> update_weights(const PotentialSpec& spec, std::size_t t, const std::vector<double>& cum) {
  const std::size_t k = cum.size();
  if (k == 0) throw std::invalid_argument("update_weights: empty advantage vector");
  if (t < 1) throw std::invalid_argument("update_weights: round index must be >= 1");
  std::vector<double> q(k);
  if (spec.kind == PotentialKind::Polynomial) {
    // Scale by the largest positive entry first so large p cannot overflow.
    double top = 0.0;
    for (double c : cum) top = std::max(top, c);
    if (!(top > 0.0)) return std::vector<double>(k, 1.0 / static_cast<double>(k));
    for (std::size_t i = 0; i < k; ++i) q[i] = std::pow(std::max(cum[i], 0.0) / top, spec.p);
  } else {
    const double eta = spec.rate(t, k);
    const double top = *std::max_element(cum.begin(), cum.end());
    for (std::size_t i = 0; i < k; ++i) q[i] = std::exp(eta * (cum[i] - top));
  }
  double sum = 0.0;
  for (double v : q) sum += v;
  if (!(sum > 0.0) || !std::isfinite(sum)) return std::vector<double>(k, 1.0 / static_cast<double>(k));
  for (double& v : q) v /= sum;
  return q;
}

// ---------------------------------------------------------------------------

// Per-key distributions over experts; keys never written read as the default.
class WeightTable {
 public:
  WeightTable() = default;
  explicit WeightTable(std::size_t k) : k_(k), default_(k, 1.0 / static_cast<double>(k)) {
    if (k == 0) throw std::invalid_argument("WeightTable: K must be positive");
  }
  WeightTable(std::size_t k, std::vector<double> default_weights) : k_(k), default_(std::move(default_weights)) {
    check(default_);
  }

  std::size_t experts() const { return k_; }
  std::size_t size() const { return table_.size(); }
  const std::vector<double>& default_weights() const { return default_; }

  const std::vector<double>& at(const StateKey& key) const {
    const auto it = table_.find(key);
    return it == table_.end() ? default_ : it->second;
  }

  bool contains(const StateKey& key) const { return table_.contains(key); }

  void set(const StateKey& key, std::vector<double> q) {
    check(q);
    table_[key] = std::move(q);
  }

  // Keys in lexicographic order.
  std::vector<StateKey> keys() const {
    std::vector<StateKey> out;
    out.reserve(table_.size());
    for (const auto& [k, v] : table_) out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
  }

  const std::unordered_map<StateKey, std::vector<double>, StateKeyHash>& entries() const { return table_; }

 private:
  void check(const std::vector<double>& q) const {
    if (q.size() != k_) throw std::invalid_argument("weight vector has wrong length");
    double sum = 0.0;
    for (double v : q) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("weight vector has a negative or non-finite entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("weight vector does not sum to 1");
  }

  std::size_t k_ = 0;
  std::vector<double> default_;
  std::unordered_map<StateKey, std::vector<double>, StateKeyHash> table_;
};

class CumulativeAdvantage {
 public:
  CumulativeAdvantage() = default;
  explicit CumulativeAdvantage(std::size_t k) : k_(k) {}

  std::size_t experts() const { return k_; }
  std::size_t size() const { return table_.size(); }

  std::vector<double> at(const StateKey& key) const {
    const auto it = table_.find(key);
    return it == table_.end() ? std::vector<double>(k_, 0.0) : it->second;
  }

  void add(const StateKey& key, const std::vector<double>& adv) {
    if (adv.size() != k_)
      throw std::invalid_argument("advantage length " + std::to_string(adv.size()) + " does not match K=" + std::to_string(k_));
    for (double v : adv)
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite advantage");
    auto [it, inserted] = table_.try_emplace(key, k_, 0.0);
    for (std::size_t i = 0; i < k_; ++i) it->second[i] += adv[i];
  }

  std::vector<StateKey> keys() const {
    std::vector<StateKey> out;
    for (const auto& [k, v] : table_) out.push_back(k);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::size_t k_ = 0;
  std::unordered_map<StateKey, std::vector<double>, StateKeyHash> table_;
};

inline std::vector<double> update_weights(const PotentialSpec& spec, std::size_t t, const CumulativeAdvantage& cum,
                                          const StateKey& key) {
  return update_weights(spec, t, cum.at(key));
}

inline void accumulate_advantage(CumulativeAdvantage& cum, const StateKey& key, const std::vector<double>& adv) {
  cum.add(key, adv);
}

// Distribution over experts for a queue vector. Tables, actor networks and
// greedy Q-policies all present themselves through this interface.
using ExpertSelector = std::function<std::vector<double>(const StateKey&)>;

inline ExpertSelector selector_of(const WeightTable& w) {
  return [&w](const StateKey& key) { return w.at(key); };
}

inline ExpertSelector selector_copy(WeightTable w) {
  return [w = std::move(w)](const StateKey& key) { return w.at(key); };
}

inline ExpertSelector dirac_selector(std::size_t k, std::size_t expert) {
  return [k, expert](const StateKey&) {
    std::vector<double> q(k, 0.0);
    q[expert] = 1.0;
    return q;
  };
}

inline std::size_t sample_expert(const std::vector<double>& q, double epsilon, Rng& rng) {
  if (epsilon > 0.0 && rng.bernoulli(epsilon)) return rng.below(q.size());
  return rng.categorical(q);
}

struct ExpertChoice {
  std::size_t expert;
  Action action;
};

inline ExpertChoice sample_and_act(const ModelConfig& c, const State& s, const ExpertSelector& selector,
                                   const Roster& roster, double epsilon, Rng& rng) {
  const auto q = selector(s.key());
  if (q.size() != roster.size()) throw std::invalid_argument("selector width does not match roster size");
  const std::size_t k = sample_expert(q, epsilon, rng);
  return {k, sample_expert_action(c, s, roster[k], rng)};
}

inline ExpertChoice sample_and_act(const ModelConfig& c, const State& s, const WeightTable& w, const Roster& roster,
                                   double epsilon, Rng& rng) {
  return sample_and_act(c, s, selector_of(w), roster, epsilon, rng);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const WeightTable& w) {
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& key : w.keys()) entries[to_string(key)] = w.at(key);
  return {{"experts", w.experts()}, {"default", w.default_weights()}, {"weights", entries}};
}

inline WeightTable weight_table_from_json(const nlohmann::json& j) {
  const auto k = j.at("experts").get<std::size_t>();
  WeightTable w = j.contains("default") ? WeightTable(k, j.at("default").get<std::vector<double>>()) : WeightTable(k);
  for (const auto& [key, value] : j.at("weights").items()) w.set(parse_key(key), value.get<std::vector<double>>());
  return w;
}

}  // namespace orchestra
