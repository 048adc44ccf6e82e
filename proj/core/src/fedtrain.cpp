#include "frlfi/fedtrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace frlfi::fedtrain {

using gridworld::Outcome;
using policy::MLPPolicy;

void TrainConfig::validate() const {
  if (n_agents < 1) throw std::invalid_argument("n_agents must be >= 1");
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  if (comm_interval < 1) throw std::invalid_argument("comm_interval must be >= 1");
  if (interval_multiplier < 1) throw std::invalid_argument("interval_multiplier must be >= 1");
  if (multiplier_after < 0) throw std::invalid_argument("multiplier_after must be >= 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
  if (!(lr_min >= 0.0 && lr_min <= lr)) throw std::invalid_argument("lr_min must lie in [0, lr]");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must lie in (0, 1]");
  if (!(epsilon0 >= 0.0 && epsilon0 <= 1.0) || !(epsilon_min >= 0.0 && epsilon_min <= 1.0)) {
    throw std::invalid_argument("epsilon bounds must lie in [0, 1]");
  }
  if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) {
    throw std::invalid_argument("epsilon_decay must lie in (0, 1] so epsilon never increases");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  if (n_agents >= 2 && !(alpha0 >= 1.0 / n_agents && alpha0 <= 1.0)) {
    throw std::invalid_argument("alpha0 must lie in [1/n, 1]");
  }
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  fmt.validate();
  (void)policy::make_layout(layer_dims);
}

double TrainConfig::learning_rate(int episode) const {
  return std::max(lr_min, lr * std::pow(lr_decay, std::max(0, episode - 1)));
}

double TrainConfig::epsilon(int episode) const {
  return std::max(epsilon_min, epsilon0 * std::pow(epsilon_decay, std::max(0, episode - 1)));
}

bool TrainConfig::aggregates_after(int episode) const {
  if (multiplier_after > 0 && episode > multiplier_after) {
    return (episode - multiplier_after) % (comm_interval * interval_multiplier) == 0;
  }
  return episode % comm_interval == 0;
}

EpisodeResult run_episode(const MLPPolicy& policy, const gridworld::GridMap& map, policy::ActionMode mode, Rng& rng,
                          double gamma, int max_steps, const StepHookSource& hooks) {
  EpisodeResult res;
  gridworld::Position pos = map.source();
  double discount = 1.0;
  for (int t = 0; t < max_steps; ++t) {
    const auto obs = gridworld::observe(map, pos);
    policy::ActionValues q;
    std::optional<policy::ActivationHook> hook;
    if (hooks) hook = hooks(t);
    q = hook ? policy.forward(obs, &*hook) : policy.forward(obs);
    const auto action = policy::select_action(q, mode, rng);
    const auto sr = gridworld::step(map, pos, action, map.goal_distance(pos));
    res.episode_return += discount * sr.reward;
    discount *= gamma;
    res.transitions.push_back({obs, action, sr.reward, gridworld::observe(map, sr.next), sr.terminal});
    pos = sr.next;
    if (sr.terminal) {
      res.outcome = sr.outcome;
      return res;
    }
  }
  res.outcome = Outcome::Timeout;
  return res;
}

void td_update(MLPPolicy& policy, std::span<const Transition> transitions, double gamma, double lr) {
  if (lr == 0.0 || transitions.empty()) return;
  std::vector<double> grad(policy.param_count());
  for (const auto& tr : transitions) {
    double target = tr.reward;
    if (!tr.terminal) {
      const auto next = policy.forward(tr.next_obs);
      target += gamma * *std::max_element(next.begin(), next.end());
    }
    // Straight-through: evaluate at the stored codes, step the master weights.
    const double q = policy.gradient(tr.obs, static_cast<int>(tr.action), grad, MLPPolicy::GradientAt::Stored);
    const double step = lr * (target - q);
    auto master = policy.master_mut();
    for (std::size_t i = 0; i < master.size(); ++i) master[i] += step * grad[i];
  }
  policy.sync();
}

double alpha_schedule(std::uint64_t k, double alpha0, double tau, int n) {
  if (n < 1) throw std::invalid_argument("alpha_schedule: n must be >= 1");
  const double floor = 1.0 / n;
  if (alpha0 < floor) throw std::invalid_argument("alpha_schedule: alpha0 below 1/n");
  if (!(tau > 0.0)) throw std::invalid_argument("alpha_schedule: tau must be > 0");
  return floor + (alpha0 - floor) * std::exp(-static_cast<double>(k) / tau);
}

std::vector<std::vector<double>> aggregate_real(std::span<const std::vector<double>> params, double alpha) {
  const std::size_t n = params.size();
  if (n < 2) throw std::invalid_argument("aggregate: need at least two parameter sets");
  const std::size_t len = params[0].size();
  for (const auto& p : params) {
    if (p.size() != len) throw std::invalid_argument("aggregate: parameter sets differ in length");
  }
  const double beta = (1.0 - alpha) / static_cast<double>(n - 1);
  std::vector<std::vector<double>> out(n, std::vector<double>(len));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < len; ++c) {
      double others = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) others += params[j][c];
      }
      out[i][c] = alpha * params[i][c] + beta * others;
    }
  }
  return out;
}

std::vector<std::vector<fxp::Code>> aggregate(std::span<const std::vector<fxp::Code>> params, fxp::QFormat fmt,
                                              double alpha) {
  std::vector<std::vector<double>> deq;
  deq.reserve(params.size());
  for (const auto& p : params) deq.push_back(fxp::dequantize_all(p, fmt));
  const auto mixed = aggregate_real(deq, alpha);
  std::vector<std::vector<fxp::Code>> out;
  out.reserve(mixed.size());
  for (const auto& m : mixed) out.push_back(fxp::quantize_all(m, fmt).codes);
  return out;
}

std::vector<fxp::Code> mean_params(std::span<const std::vector<fxp::Code>> params, fxp::QFormat fmt) {
  if (params.empty()) throw std::invalid_argument("mean_params: no parameter sets");
  const std::size_t len = params[0].size();
  std::vector<fxp::Code> out(len);
  for (std::size_t c = 0; c < len; ++c) {
    double sum = 0.0;
    for (const auto& p : params) {
      if (p.size() != len) throw std::invalid_argument("mean_params: parameter sets differ in length");
      sum += fxp::dequantize(p[c], fmt);
    }
    out[c] = fxp::quantize(sum / static_cast<double>(params.size()), fmt);
  }
  return out;
}

Outcome greedy_rollout(const MLPPolicy& policy, const gridworld::GridMap& map, int max_steps, int* steps) {
  gridworld::Position pos = map.source();
  for (int t = 0; t < max_steps; ++t) {
    const auto action = policy::greedy_action(policy.forward(gridworld::observe(map, pos)));
    const auto sr = gridworld::step(map, pos, action, map.goal_distance(pos));
    pos = sr.next;
    if (sr.terminal) {
      if (steps != nullptr) *steps = t + 1;
      return sr.outcome;
    }
  }
  if (steps != nullptr) *steps = max_steps;
  return Outcome::Timeout;
}

double greedy_success_rate(std::span<const MLPPolicy> policies, std::span<const gridworld::GridMap> maps,
                           int max_steps) {
  if (maps.empty() || policies.size() < maps.size()) throw std::invalid_argument("one policy per map required");
  double sum = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    sum += greedy_rollout(policies[i], maps[i], max_steps) == Outcome::ReachedGoal ? 1.0 : 0.0;
  }
  return sum / static_cast<double>(maps.size());
}

FederatedTrainer::FederatedTrainer(TrainConfig cfg, std::vector<gridworld::GridMap> maps, faultinj::FaultPlan* plan,
                                   const GuardOptions* guard)
    : cfg_(std::move(cfg)), maps_(std::move(maps)), plan_(plan) {
  cfg_.validate();
  if (maps_.size() < static_cast<std::size_t>(cfg_.n_agents)) {
    throw std::invalid_argument("need one map per agent: " + std::to_string(cfg_.n_agents) + " agents, " +
                                std::to_string(maps_.size()) + " maps");
  }
  maps_.resize(static_cast<std::size_t>(cfg_.n_agents));
  if (plan_ != nullptr) plan_->validate(cfg_.n_agents, cfg_.episodes);

  Rng init(derive_seed(cfg_.seed, Stream::Init, {}));
  const auto theta0 = MLPPolicy::initialized(cfg_.layer_dims, cfg_.fmt, init);
  agents_.assign(static_cast<std::size_t>(cfg_.n_agents), theta0);
  recent_.resize(agents_.size());
  server_params_.assign(theta0.codes().begin(), theta0.codes().end());
  alpha_ = cfg_.n_agents >= 2 ? cfg_.alpha0 : 1.0;

  if (guard != nullptr) {
    guard_ = *guard;
    detector_ = std::make_unique<guard::RewardDropDetector>(cfg_.n_agents, guard->detector);
    // The ring must reach back past a drop onset detected k episodes late.
    auto ckpt_cfg = guard->detector;
    const int spacing = cfg_.comm_interval * ckpt_cfg.checkpoint_every;
    const int widest = spacing * std::max(1, cfg_.interval_multiplier);
    const int span = ckpt_cfg.consecutive + 2 * widest;
    ckpt_cfg.history = std::max(ckpt_cfg.history, (span + spacing - 1) / spacing + 1);
    store_ = std::make_unique<guard::CheckpointStore>(ckpt_cfg, guard->checkpoint_dir);
  }
  if (cfg_.record_log) log_.reserve(static_cast<std::size_t>(cfg_.episodes) * agents_.size());
}

FederatedTrainer::~FederatedTrainer() = default;

FederatedTrainer::FederatedTrainer(const FederatedTrainer& other, faultinj::FaultPlan* plan, ForkTag)
    : cfg_(other.cfg_),
      maps_(other.maps_),
      plan_(plan),
      agents_(other.agents_),
      recent_(other.recent_),
      server_params_(other.server_params_),
      round_(other.round_),
      last_round_episode_(other.last_round_episode_),
      episode_(other.episode_),
      alpha_(other.alpha_),
      log_(other.log_) {
  if (plan_ != nullptr) plan_->validate(cfg_.n_agents, std::max(cfg_.episodes, episode_ + 1));
}

std::unique_ptr<FederatedTrainer> FederatedTrainer::fork(faultinj::FaultPlan* plan) const {
  if (guard_) throw std::logic_error("fork: guarded trainers cannot be forked");
  return std::unique_ptr<FederatedTrainer>(new FederatedTrainer(*this, plan, ForkTag{}));
}

void FederatedTrainer::step() {
  const int e = ++episode_;
  const double eps = cfg_.epsilon(e);
  const double lr = cfg_.learning_rate(e);
  std::vector<double> returns(agents_.size());
  std::vector<Outcome> outcomes(agents_.size());

  for (std::size_t i = 0; i < agents_.size(); ++i) {
    const int agent = static_cast<int>(i);
    auto& pol = agents_[i];
    if (plan_ != nullptr) {
      pol.mutate_codes([&](std::span<fxp::Code> c) {
        plan_->fire(faultinj::HookPoint::PreEpisode, e, 0, agent, c, cfg_.fmt);
      });
    }
    StepHookSource hooks;
    if (plan_ != nullptr && plan_->has_activation_fault(agent, e)) {
      hooks = [this, agent, e](int t) { return plan_->activation_hook(agent, e, t, cfg_.fmt); };
    }
    Rng rng(derive_seed(cfg_.seed, Stream::AgentEpisode, {i, static_cast<std::uint64_t>(e)}));
    auto res = run_episode(pol, maps_[i], policy::ActionMode::epsilon_greedy(eps), rng, cfg_.gamma, cfg_.max_steps,
                           hooks);
    td_update(pol, res.transitions, cfg_.gamma, lr);
    returns[i] = res.episode_return;
    outcomes[i] = res.outcome;
    auto& window = recent_[i];
    window.push_back(res.outcome);
    if (window.size() > 100) window.pop_front();
  }

  if (cfg_.n_agents >= 2 && cfg_.aggregates_after(e)) aggregate_round();

  if (cfg_.record_log) {
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const auto& window = recent_[i];
      const auto hits = std::count(window.begin(), window.end(), Outcome::ReachedGoal);
      log_.push_back({e, static_cast<int>(i), returns[i], outcomes[i], eps, alpha_,
                      plan_ != nullptr ? plan_->flips_for(e, static_cast<int>(i)) : 0,
                      static_cast<double>(hits) / static_cast<double>(window.size())});
    }
  }
  if (detector_) run_guard(returns);
}

void FederatedTrainer::aggregate_round() {
  const int e = episode_;
  const int round_start = last_round_episode_;
  const auto fmt = cfg_.fmt;
  std::vector<std::vector<fxp::Code>> uploads;
  uploads.reserve(agents_.size());
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    uploads.emplace_back(agents_[i].codes().begin(), agents_[i].codes().end());
    if (plan_ != nullptr) {
      plan_->fire(faultinj::HookPoint::AgentUpload, e, 0, static_cast<int>(i), uploads.back(), fmt, round_start);
    }
  }
  alpha_ = alpha_schedule(round_, cfg_.alpha0, cfg_.tau, cfg_.n_agents);
  auto outputs = aggregate(uploads, fmt, alpha_);

  // Sub-LSB tails travel with the codes so small local updates survive the
  // requantization; load_codes clamps them below half an LSB.
  std::vector<std::vector<double>> fine(agents_.size());
  for (std::size_t j = 0; j < agents_.size(); ++j) {
    fine[j] = fxp::dequantize_all(uploads[j], fmt);
    const auto master = agents_[j].master();
    const auto deq = agents_[j].dequantized();
    for (std::size_t c = 0; c < fine[j].size(); ++c) fine[j][c] += master[c] - deq[c];
  }
  const auto mixed = aggregate_real(fine, alpha_);
  ++round_;
  last_round_episode_ = e;

  if (plan_ != nullptr) {
    // Server memory corruption: one draw, replayed on every per-agent output.
    std::vector<fxp::Code> probe = outputs[0];
    const auto before = probe;
    if (plan_->fire(faultinj::HookPoint::ServerAggregate, e, 0, -1, probe, fmt, round_start) > 0) {
      for (std::size_t c = 0; c < probe.size(); ++c) {
        const std::uint32_t mask = fxp::to_bits(before[c], fmt) ^ fxp::to_bits(probe[c], fmt);
        if (mask == 0) continue;
        for (auto& out : outputs) {
          // Flip the same bits; the direction filter was already applied to
          // the first copy and the copies agree once alpha has converged.
          out[c] = fxp::from_bits(fxp::to_bits(out[c], fmt) ^ mask, fmt);
        }
      }
    }
  }
  server_params_ = mean_params(outputs, fmt);
  if (store_) store_->maybe_checkpoint(round_, e, {fmt, cfg_.layer_dims, server_params_});

  for (std::size_t i = 0; i < agents_.size(); ++i) {
    auto& link = outputs[i];
    if (plan_ != nullptr) {
      plan_->fire(faultinj::HookPoint::ServerBroadcast, e, 0, static_cast<int>(i), link, fmt, round_start);
    }
    std::vector<double> tail(link.size());
    for (std::size_t c = 0; c < link.size(); ++c) tail[c] = mixed[i][c] - fxp::dequantize(link[c], fmt);
    agents_[i].load_codes(link, tail);
  }
}

void FederatedTrainer::run_guard(std::span<const double> returns) {
  const int e = episode_;
  // Close out pending recoveries.
  for (auto it = pending_.begin(); it != pending_.end();) {
    double mean = 0.0;
    for (int a : it->agents) mean += returns[static_cast<std::size_t>(a)];
    mean /= static_cast<double>(it->agents.size());
    if (mean >= it->threshold) {
      events_[it->event].recovered_within_k = 1;
      it = pending_.erase(it);
    } else if (e >= it->deadline) {
      events_[it->event].recovered_within_k = 0;
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }

  const auto verdicts = detector_->update(e, returns);
  const int interval = cfg_.comm_interval * std::max(1, cfg_.interval_multiplier) * guard_->detector.checkpoint_every;
  for (const auto& v : verdicts) {
    const auto* ckpt = guard::recovery_checkpoint(*store_, v, interval);
    const auto action = guard::recover(v, ckpt, agents_, server_params_);
    GuardEvent ev{e, v, action.description, -1};
    events_.push_back(ev);
    if (action.applied) {
      PendingRecovery p;
      p.event = events_.size() - 1;
      if (v.kind == guard::Verdict::Kind::AgentFault) {
        p.agents = {v.agent};
      } else {
        for (int a = 0; a < cfg_.n_agents; ++a) p.agents.push_back(a);
        detector_->reset_all();
      }
      p.threshold = detector_->threshold(v.baseline);
      p.deadline = e + guard_->detector.consecutive;
      pending_.push_back(std::move(p));
    }
  }
}

void FederatedTrainer::run_until(int episode) {
  while (episode_ < episode) step();
  if (store_) store_->flush();
}

policy::MLPPolicy FederatedTrainer::consensus() const {
  MLPPolicy out = agents_.front();
  if (agents_.size() == 1) return out;
  std::vector<std::vector<fxp::Code>> sets;
  for (const auto& a : agents_) sets.emplace_back(a.codes().begin(), a.codes().end());
  out.load_codes(mean_params(sets, cfg_.fmt));
  return out;
}

TrainResult train_federated(const TrainConfig& cfg, const std::vector<gridworld::GridMap>& maps,
                            faultinj::FaultPlan* plan, const GuardOptions* guard) {
  FederatedTrainer trainer(cfg, maps, plan, guard);
  trainer.run();
  TrainResult r;
  r.policies = trainer.policies();
  r.log = trainer.log();
  if (plan != nullptr) r.injections = plan->log();
  r.guard_events = trainer.guard_events();
  return r;
}

}  // namespace frlfi::fedtrain
