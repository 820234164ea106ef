#pragma once

// Small fully connected networks (ReLU hidden layers, linear output) with
// reverse-mode gradients and Adam; the neural critic, the actor-critic
// orchestration loop and a Double DQN baseline.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "orchestra/experts.hpp"
#include "orchestra/matching_env.hpp"
#include "orchestra/orchestrator.hpp"
#include "orchestra/rng.hpp"
#include "orchestra/tabular_learn.hpp"

namespace orchestra {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Features

// Queue lengths scaled by L.
inline std::vector<double> featurize(const ModelConfig& c, const StateKey& key) {
  std::vector<double> x(key.queues.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(key.queues[i]) / c.capacity;
  return x;
}

// Scaled queues, then one-hot event class (I), then one-hot event kind (4).
inline std::vector<double> featurize(const ModelConfig& c, const State& s) {
  auto x = featurize(c, s.key());
  const auto I = static_cast<std::size_t>(c.class_count);
  x.resize(2 * I + 4, 0.0);
  if (s.event.cls >= 0) x[I + static_cast<std::size_t>(s.event.cls)] = 1.0;
  x[2 * I + static_cast<std::size_t>(s.event.kind)] = 1.0;
  return x;
}

inline std::size_t feature_width(const ModelConfig& c, bool extended) {
  const auto I = static_cast<std::size_t>(c.class_count);
  return extended ? 2 * I + 4 : I;
}

// ---------------------------------------------------------------------------
// Network

// Parameters live in one flat vector: per layer, a row-major (out x in)
// weight block followed by the bias.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      if (widths_[l] == 0 || widths_[l + 1] == 0) throw std::invalid_argument("Mlp widths must be positive");
      w_off_.push_back(off);
      off += widths_[l] * widths_[l + 1];
      b_off_.push_back(off);
      off += widths_[l + 1];
    }
    params_.assign(off, 0.0);
  }

  // Weights uniform on +-1/sqrt(fan_in), biases zero.
  static Mlp init(std::vector<std::size_t> widths, Rng& rng) {
    Mlp net(std::move(widths));
    for (std::size_t l = 0; l < net.layers(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(net.widths_[l]));
      const std::size_t n = net.widths_[l] * net.widths_[l + 1];
      for (std::size_t i = 0; i < n; ++i) net.params_[net.w_off_[l] + i] = (2.0 * rng.uniform() - 1.0) * bound;
    }
    return net;
  }

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t layers() const { return w_off_.size(); }
  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }
  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  double weight(std::size_t l, std::size_t out, std::size_t in) const {
    return params_[w_off_[l] + out * widths_[l] + in];
  }
  double& weight(std::size_t l, std::size_t out, std::size_t in) { return params_[w_off_[l] + out * widths_[l] + in]; }
  double bias(std::size_t l, std::size_t out) const { return params_[b_off_[l] + out]; }
  double& bias(std::size_t l, std::size_t out) { return params_[b_off_[l] + out]; }

  // Activations per layer; [0] is the input, the last is the linear output.
  struct Cache {
    std::vector<std::vector<double>> acts;
  };

  std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const {
    if (x.size() != input_width())
      throw std::invalid_argument("Mlp input has " + std::to_string(x.size()) + " entries, expected " +
                                  std::to_string(input_width()));
    std::vector<double> a(x.begin(), x.end());
    if (cache) cache->acts.assign(1, a);
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t nin = widths_[l], nout = widths_[l + 1];
      std::vector<double> z(nout);
      const double* w = params_.data() + w_off_[l];
      const double* b = params_.data() + b_off_[l];
      for (std::size_t o = 0; o < nout; ++o) {
        double acc = b[o];
        const double* row = w + o * nin;
        for (std::size_t i = 0; i < nin; ++i) acc += row[i] * a[i];
        z[o] = (l + 1 < layers()) ? std::max(acc, 0.0) : acc;
      }
      a = std::move(z);
      if (cache) cache->acts.push_back(a);
    }
    return a;
  }

  // Adds d(loss)/d(params) for one sample to `grad`, given d(loss)/d(output).
  void backward(const Cache& cache, std::span<const double> dout, std::vector<double>& grad) const {
    std::vector<double> delta(dout.begin(), dout.end());
    for (std::size_t l = layers(); l-- > 0;) {
      const std::size_t nin = widths_[l], nout = widths_[l + 1];
      const auto& input = cache.acts[l];
      double* gw = grad.data() + w_off_[l];
      double* gb = grad.data() + b_off_[l];
      const double* w = params_.data() + w_off_[l];
      std::vector<double> prev(nin, 0.0);
      for (std::size_t o = 0; o < nout; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        gb[o] += d;
        for (std::size_t i = 0; i < nin; ++i) {
          gw[o * nin + i] += d * input[i];
          prev[i] += d * w[o * nin + i];
        }
      }
      if (l > 0)
        for (std::size_t i = 0; i < nin; ++i)
          if (input[i] <= 0.0) prev[i] = 0.0;
      delta = std::move(prev);
    }
  }

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> w_off_, b_off_;
  std::vector<double> params_;
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] = std::exp(logits[i] - top);
  for (double& v : p) v /= sum;
  return p;
}

// ---------------------------------------------------------------------------
// Losses and Adam

enum class LossKind { SquaredError, KlDivergence };

struct TrainSample {
  std::vector<double> x;
  std::size_t component = 0;          // SquaredError: the output entry being fit
  double target = 0.0;                // SquaredError
  std::vector<double> distribution;   // KlDivergence: target distribution
};

// Batch-mean loss; accumulates its gradient into `grad` when given.
inline double batch_loss(const Mlp& net, const std::vector<TrainSample>& batch, LossKind kind,
                         std::vector<double>* grad) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  const auto B = static_cast<double>(batch.size());
  double loss = 0.0;
  Mlp::Cache cache;
  std::vector<double> dout(net.output_width());
  for (const auto& s : batch) {
    const auto out = net.forward(s.x, grad ? &cache : nullptr);
    std::fill(dout.begin(), dout.end(), 0.0);
    if (kind == LossKind::SquaredError) {
      const double e = out.at(s.component) - s.target;
      loss += e * e / B;
      dout[s.component] = 2.0 * e / B;
    } else {
      if (s.distribution.size() != out.size()) throw std::invalid_argument("target distribution has wrong width");
      const double top = *std::max_element(out.begin(), out.end());
      double z = 0.0;
      for (double o : out) z += std::exp(o - top);
      const double log_z = top + std::log(z);
      for (std::size_t k = 0; k < out.size(); ++k) {
        const double t = s.distribution[k];
        const double p = std::exp(out[k] - log_z);
        if (t > 0.0) loss += t * (std::log(t) - (out[k] - log_z)) / B;
        dout[k] = (p - t) / B;
      }
    }
    if (grad) net.backward(cache, dout, *grad);
  }
  return loss;
}

struct AdamState {
  std::vector<double> m, v;
  std::size_t step = 0;
  double alpha = 1e-3;  // current rate
  double decay = 1.0;   // alpha multiplier applied after every step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(std::size_t n, double alpha, double decay = 1.0) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.alpha = alpha;
    s.decay = decay;
    return s;
  }
};

inline void adam_update(std::vector<double>& params, const std::vector<double>& grad, AdamState& st) {
  if (st.m.size() != params.size() || st.v.size() != params.size() || grad.size() != params.size())
    throw std::invalid_argument("Adam state does not match the parameter vector");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    params[i] -= st.alpha * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.eps);
  }
  st.alpha *= st.decay;
}

// One Adam step on the batch-mean loss; returns the loss before the step.
inline double net_train_step(Mlp& net, AdamState& adam, const std::vector<TrainSample>& batch, LossKind kind) {
  std::vector<double> grad(net.param_count(), 0.0);
  const double loss = batch_loss(net, batch, kind, &grad);
  if (!std::isfinite(loss)) throw NumericalError("non-finite training loss");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i])) throw NumericalError("non-finite gradient at parameter " + std::to_string(i));
  adam_update(net.params(), grad, adam);
  return loss;
}

// Largest relative gap between analytic and central-difference gradients.
inline double gradient_check(const Mlp& net, const std::vector<TrainSample>& batch, LossKind kind, double h = 1e-5) {
  std::vector<double> grad(net.param_count(), 0.0);
  batch_loss(net, batch, kind, &grad);
  Mlp probe = net;
  double worst = 0.0;
  for (std::size_t i = 0; i < net.param_count(); ++i) {
    const double keep = probe.params()[i];
    probe.params()[i] = keep + h;
    const double up = batch_loss(probe, batch, kind, nullptr);
    probe.params()[i] = keep - h;
    const double down = batch_loss(probe, batch, kind, nullptr);
    probe.params()[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(grad[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(grad[i] - numeric) / scale);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Replay buffer

struct Experience {
  StateKey key;
  std::vector<double> x;
  std::size_t action = 0;
  double reward = 0.0;
  StateKey next_key;
  std::vector<double> next_x;
  std::vector<bool> next_mask;  // empty when every output is admissible
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10'000) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t inserted() const { return inserted_; }
  const Experience& operator[](std::size_t i) const { return items_[i]; }

  void push(Experience e) {
    if (items_.size() < capacity_) items_.push_back(std::move(e));
    else items_[inserted_ % capacity_] = std::move(e);
    ++inserted_;
  }

  // Uniform draws with replacement.
  std::vector<std::size_t> sample(std::size_t batch, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("sampling from an empty replay buffer");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.below(items_.size());
    return idx;
  }

 private:
  std::size_t capacity_;
  std::size_t inserted_ = 0;
  std::vector<Experience> items_;
};

// ---------------------------------------------------------------------------
// Critic

enum class CriticMode { Plain, Double };

struct CriticOptions {
  std::vector<std::size_t> hidden{64, 64};
  double learning_rate = 1e-3;
  double decay = 1.0;
  std::size_t batch = 64;
  std::size_t capacity = 10'000;
  std::size_t sync_period = 100;
  CriticMode mode = CriticMode::Double;
  double value_scale = 0.0;  // outputs are Q / value_scale; 0 picks the largest |reward|
};

struct Critic {
  Mlp online;
  Mlp target;
  AdamState adam;
  CriticMode mode = CriticMode::Double;
  std::size_t sync_period = 100;
  std::size_t updates = 0;
  double gamma = 0.9;
  double value_scale = 1.0;
};

inline std::vector<std::size_t> layer_widths(std::size_t input, const std::vector<std::size_t>& hidden,
                                             std::size_t output) {
  std::vector<std::size_t> w{input};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(output);
  return w;
}

inline double default_value_scale(const ModelConfig& c) {
  const auto [lo, hi] = reward_bounds(c);
  const double m = std::max(std::abs(lo), std::abs(hi));
  return m > 0.0 ? m : 1.0;
}

inline Critic make_critic(std::size_t input, std::size_t outputs, double gamma, const CriticOptions& opt, Rng& rng) {
  Critic c;
  c.online = Mlp::init(layer_widths(input, opt.hidden, outputs), rng);
  c.target = c.online;
  c.adam = AdamState::for_params(c.online.param_count(), opt.learning_rate, opt.decay);
  c.mode = opt.mode;
  c.sync_period = std::max<std::size_t>(1, opt.sync_period);
  c.gamma = gamma;
  c.value_scale = opt.value_scale > 0.0 ? opt.value_scale : 1.0;
  return c;
}

inline void sync_target(Critic& c) { c.target = c.online; }

// Q estimates in reward units.
inline std::vector<double> critic_q(const Critic& c, std::span<const double> x) {
  auto out = c.online.forward(x);
  for (double& v : out) v *= c.value_scale;
  return out;
}

// One regression step toward r + gamma Q_target(x', k'), k' drawn from the
// selector at the next key. Empty when the buffer holds fewer than `batch` items.
inline std::optional<double> critic_update(Critic& c, const ReplayBuffer& buffer, const ExpertSelector& selector,
                                           std::size_t batch, Rng& rng) {
  if (buffer.size() < batch || batch == 0) return std::nullopt;
  if (c.mode == CriticMode::Plain) c.target = c.online;
  std::vector<TrainSample> samples;
  samples.reserve(batch);
  for (std::size_t i : buffer.sample(batch, rng)) {
    const Experience& e = buffer[i];
    const auto q = selector(e.next_key);
    const std::size_t k_next = rng.categorical(q);
    const double y = e.reward / c.value_scale + c.gamma * c.target.forward(e.next_x)[k_next];
    samples.push_back({e.x, e.action, y, {}});
  }
  const double loss = net_train_step(c.online, c.adam, samples, LossKind::SquaredError);
  ++c.updates;
  if (c.mode == CriticMode::Double && c.updates % c.sync_period == 0) sync_target(c);
  return loss;
}

// Double DQN step: the online net picks the next action, the target net scores it.
inline std::optional<double> ddqn_update(Critic& c, const ReplayBuffer& buffer, std::size_t batch, Rng& rng) {
  if (buffer.size() < batch || batch == 0) return std::nullopt;
  std::vector<TrainSample> samples;
  samples.reserve(batch);
  for (std::size_t i : buffer.sample(batch, rng)) {
    const Experience& e = buffer[i];
    const auto online = c.online.forward(e.next_x);
    const std::size_t pick = e.next_mask.empty() ? argmax_first(online) : masked_argmax(online, e.next_mask);
    const double y = e.reward / c.value_scale + c.gamma * c.target.forward(e.next_x)[pick];
    samples.push_back({e.x, e.action, y, {}});
  }
  const double loss = net_train_step(c.online, c.adam, samples, LossKind::SquaredError);
  ++c.updates;
  if (c.updates % c.sync_period == 0) sync_target(c);
  return loss;
}

struct ValueEnvelope {
  double lo;
  double hi;
};

// A = Q - <q, Q>. With an envelope, Q estimates are clamped into it first.
inline std::vector<double> critic_advantage(const Critic& c, const std::vector<double>& q, std::span<const double> x,
                                            std::optional<ValueEnvelope> envelope = std::nullopt) {
  auto values = critic_q(c, x);
  if (envelope)
    for (double& v : values) v = std::clamp(v, envelope->lo, envelope->hi);
  return centered_advantage(values, q);
}

// ---------------------------------------------------------------------------
// Actor

enum class ActorTargetMode { Incremental, Cumulative };

inline std::vector<double> actor_target(const PotentialSpec& spec, std::size_t t, const std::vector<double>& p,
                                        const std::vector<double>& advantage,
                                        const std::vector<double>* cumulative = nullptr,
                                        ActorTargetMode mode = ActorTargetMode::Incremental) {
  if (p.size() != advantage.size()) throw std::invalid_argument("actor_target: width mismatch");
  for (double a : advantage)
    if (!std::isfinite(a)) throw std::invalid_argument("actor_target: non-finite advantage");
  if (spec.kind == PotentialKind::Polynomial || mode == ActorTargetMode::Cumulative) {
    if (!cumulative) throw std::invalid_argument("actor_target: cumulative mode needs the cumulative advantages");
    return update_weights(spec, t, *cumulative);
  }
  const double eta = spec.rate(t, p.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > 0.0) top = std::max(top, eta * advantage[k]);
  std::vector<double> out(p.size(), 0.0);
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > 0.0) sum += out[k] = p[k] * std::exp(eta * advantage[k] - top);
  for (double& v : out) v /= sum;
  return out;
}

inline std::vector<double> actor_probs(const Mlp& actor, std::span<const double> x) { return softmax(actor.forward(x)); }

inline ExpertSelector actor_selector(const ModelConfig& c, Mlp actor) {
  return [c, actor = std::move(actor)](const StateKey& key) { return actor_probs(actor, featurize(c, key)); };
}

struct ActorCriticOptions {
  std::size_t episodes = 50;  // T
  std::size_t steps = 40;     // H per episode
  std::vector<std::size_t> actor_hidden{64, 64};
  double actor_learning_rate = 1e-3;
  double actor_decay = 1.0;
  std::size_t actor_batch = 64;  // B_e
  std::size_t actor_epochs = 1;
  CriticOptions critic{};
  double epsilon = 0.0;
  ActorTargetMode target_mode = ActorTargetMode::Incremental;
  std::optional<ValueEnvelope> envelope;
  RewardTransform reward{};
};

struct ActorCriticResult {
  Mlp actor;
  Critic critic;
  std::vector<Mlp> snapshots;  // [0] at initialization, then one per episode
};

inline ActorCriticResult actor_critic_loop(const ModelConfig& c, const Roster& roster, const PotentialSpec& spec,
                                           const ActorCriticOptions& opt, Rng& rng) {
  const std::size_t K = roster.size();
  const std::size_t in = feature_width(c, false);
  ActorCriticResult out;
  out.actor = Mlp::init(layer_widths(in, opt.actor_hidden, K), rng);
  CriticOptions copt = opt.critic;
  if (copt.value_scale <= 0.0) copt.value_scale = default_value_scale(c) * opt.reward.scale;
  out.critic = make_critic(in, K, c.discount, copt, rng);
  AdamState actor_adam = AdamState::for_params(out.actor.param_count(), opt.actor_learning_rate, opt.actor_decay);
  ReplayBuffer buffer(copt.capacity);
  std::unordered_map<StateKey, std::vector<double>, StateKeyHash> cumulative;
  out.snapshots.push_back(out.actor);

  for (std::size_t t = 1; t <= opt.episodes; ++t) {
    const ExpertSelector selector = [&](const StateKey& key) { return actor_probs(out.actor, featurize(c, key)); };
    State s = sample_initial(c, rng);
    for (std::size_t h = 0; h < opt.steps; ++h) {
      const auto choice = sample_and_act(c, s, selector, roster, opt.epsilon, rng);
      const auto [next, r] = step(c, s, choice.action, rng);
      buffer.push({s.key(), featurize(c, s.key()), choice.expert, opt.reward(r), next.key(), featurize(c, next.key()), {}});
      critic_update(out.critic, buffer, selector, copt.batch, rng);
      s = next;
    }
    if (buffer.size() > 0) {
      std::vector<TrainSample> batch;
      std::unordered_set<StateKey, StateKeyHash> seen;
      for (std::size_t i : buffer.sample(opt.actor_batch, rng)) {
        const Experience& e = buffer[i];
        const auto p = actor_probs(out.actor, e.x);
        const auto adv = critic_advantage(out.critic, p, e.x, opt.envelope);
        std::vector<double>* cum = nullptr;
        if (spec.kind == PotentialKind::Polynomial || opt.target_mode == ActorTargetMode::Cumulative) {
          auto& acc = cumulative.try_emplace(e.key, K, 0.0).first->second;
          if (seen.insert(e.key).second)
            for (std::size_t k = 0; k < K; ++k) acc[k] += adv[k];
          cum = &acc;
        }
        batch.push_back({e.x, 0, 0.0, actor_target(spec, t + 1, p, adv, cum, opt.target_mode)});
      }
      for (std::size_t epoch = 0; epoch < opt.actor_epochs; ++epoch)
        net_train_step(out.actor, actor_adam, batch, LossKind::KlDivergence);
    }
    out.snapshots.push_back(out.actor);
  }
  return out;
}

// Critic-backed advantage source for the tabular loop: every round simulates
// H steps under the current weights, trains the critic once per step and
// returns advantages on every key seen so far.
inline AdvantageEstimator critic_estimator(const ModelConfig& c, const Roster& roster, std::size_t steps,
                                           CriticOptions opt, RewardTransform reward, Rng& init_rng,
                                           std::optional<ValueEnvelope> envelope = std::nullopt) {
  if (opt.value_scale <= 0.0) opt.value_scale = default_value_scale(c) * reward.scale;
  struct Shared {
    Critic critic;
    ReplayBuffer buffer;
    std::vector<StateKey> seen_order;
    std::unordered_set<StateKey, StateKeyHash> seen;
  };
  auto st = std::make_shared<Shared>(
      Shared{make_critic(feature_width(c, false), roster.size(), c.discount, opt, init_rng), ReplayBuffer(opt.capacity), {}, {}});
  return [c, roster, steps, opt, reward, st, envelope](const WeightTable& w, std::size_t, Rng& rng) {
    const ExpertSelector selector = selector_of(w);
    State s = sample_initial(c, rng);
    for (std::size_t h = 0; h < steps; ++h) {
      const auto choice = sample_and_act(c, s, selector, roster, 0.0, rng);
      const auto [next, r] = step(c, s, choice.action, rng);
      st->buffer.push({s.key(), featurize(c, s.key()), choice.expert, reward(r), next.key(), featurize(c, next.key()), {}});
      if (st->seen.insert(s.key()).second) st->seen_order.push_back(s.key());
      critic_update(st->critic, st->buffer, selector, opt.batch, rng);
      s = next;
    }
    std::vector<KeyAdvantage> out;
    out.reserve(st->seen_order.size());
    for (const auto& key : st->seen_order)
      out.push_back({key, critic_advantage(st->critic, w.at(key), featurize(c, key), envelope)});
    return out;
  };
}

// ---------------------------------------------------------------------------
// Double DQN baseline

struct DdqnOptions {
  ActionSpace space = ActionSpace::Primitive;
  std::size_t steps = 2'000;
  CriticOptions net{};
  double epsilon0 = 0.3;
  double epsilon_decay = 0.999;
  double epsilon_min = 0.01;
  std::size_t checkpoint_every = 0;
  RewardTransform reward{};
};

struct DdqnResult {
  ActionSpace space = ActionSpace::Primitive;
  Critic net;
  std::vector<std::size_t> checkpoint_steps;
  std::vector<Mlp> checkpoints;
};

inline std::size_t ddqn_width(const ModelConfig& c, const Roster& roster, ActionSpace space) {
  return space == ActionSpace::Primitive ? primitive_width(c) : roster.size();
}

inline std::vector<double> ddqn_features(const ModelConfig& c, const State& s, ActionSpace space) {
  return space == ActionSpace::Primitive ? featurize(c, s) : featurize(c, s.key());
}

inline DdqnResult ddqn_baseline(const ModelConfig& c, const Roster& roster, const DdqnOptions& opt, Rng& rng) {
  CriticOptions nopt = opt.net;
  nopt.mode = CriticMode::Double;
  if (nopt.value_scale <= 0.0) nopt.value_scale = default_value_scale(c) * opt.reward.scale;
  const bool primitive = opt.space == ActionSpace::Primitive;
  DdqnResult out;
  out.space = opt.space;
  out.net = make_critic(feature_width(c, primitive), ddqn_width(c, roster, opt.space), c.discount, nopt, rng);
  ReplayBuffer buffer(nopt.capacity);
  State s = sample_initial(c, rng);
  double eps = opt.epsilon0;
  for (std::size_t tau = 0; tau < opt.steps; ++tau) {
    const auto x = ddqn_features(c, s, opt.space);
    std::size_t slot;
    Action a;
    if (primitive) {
      const auto mask = primitive_mask(c, s);
      slot = rng.bernoulli(eps) ? masked_uniform(mask, rng) : masked_argmax(out.net.online.forward(x), mask);
      a = *primitive_action(c, s, slot);
    } else {
      slot = rng.bernoulli(eps) ? rng.below(roster.size()) : argmax_first(out.net.online.forward(x));
      a = sample_expert_action(c, s, roster[slot], rng);
    }
    const auto [next, r] = step(c, s, a, rng);
    buffer.push({s.key(), x, slot, opt.reward(r), next.key(), ddqn_features(c, next, opt.space),
                 primitive ? primitive_mask(c, next) : std::vector<bool>{}});
    ddqn_update(out.net, buffer, nopt.batch, rng);
    s = next;
    eps = std::max(opt.epsilon_min, eps * opt.epsilon_decay);
    if (opt.checkpoint_every && (tau + 1) % opt.checkpoint_every == 0) {
      out.checkpoint_steps.push_back(tau + 1);
      out.checkpoints.push_back(out.net.online);
    }
  }
  return out;
}

inline ActionPolicy ddqn_primitive_policy(const ModelConfig& c, Mlp net) {
  return [c, net = std::move(net)](const State& s, Rng&) {
    return *primitive_action(c, s, masked_argmax(net.forward(featurize(c, s)), primitive_mask(c, s)));
  };
}

inline ExpertSelector ddqn_roster_selector(const ModelConfig& c, Mlp net) {
  return [c, net = std::move(net)](const StateKey& key) {
    std::vector<double> q(net.output_width(), 0.0);
    q[argmax_first(net.forward(featurize(c, key)))] = 1.0;
    return q;
  };
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kNetFormatVersion = 1;

inline nlohmann::json to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.layers(); ++l) {
    const std::size_t nin = net.widths()[l], nout = net.widths()[l + 1];
    std::vector<double> w, b;
    for (std::size_t o = 0; o < nout; ++o)
      for (std::size_t i = 0; i < nin; ++i) w.push_back(net.weight(l, o, i));
    for (std::size_t o = 0; o < nout; ++o) b.push_back(net.bias(l, o));
    layers.push_back({{"shape", {nout, nin}}, {"weights", w}, {"bias", b}});
  }
  return {{"format", "orchestra-mlp"}, {"version", kNetFormatVersion}, {"widths", net.widths()}, {"layers", layers}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "orchestra-mlp") throw std::invalid_argument("not a network document");
  if (j.at("version").get<int>() != kNetFormatVersion)
    throw std::invalid_argument("unsupported network format version " + j.at("version").dump());
  Mlp net(j.at("widths").get<std::vector<std::size_t>>());
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers()) throw std::invalid_argument("layer count does not match widths");
  for (std::size_t l = 0; l < net.layers(); ++l) {
    const std::size_t nin = net.widths()[l], nout = net.widths()[l + 1];
    const auto w = layers[l].at("weights").get<std::vector<double>>();
    const auto b = layers[l].at("bias").get<std::vector<double>>();
    if (w.size() != nin * nout || b.size() != nout) throw std::invalid_argument("layer shape mismatch");
    for (std::size_t o = 0; o < nout; ++o) {
      for (std::size_t i = 0; i < nin; ++i) net.weight(l, o, i) = w[o * nin + i];
      net.bias(l, o) = b[o];
    }
  }
  return net;
}

}  // namespace orchestra
