#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "frlfi/faultinj.hpp"
#include "frlfi/fxp.hpp"
#include "frlfi/gridworld.hpp"
#include "frlfi/guard.hpp"
#include "frlfi/policy.hpp"
#include "frlfi/rng.hpp"

namespace frlfi::fedtrain {

struct TrainConfig {
  int n_agents = 12;
  int episodes = 3000;
  int comm_interval = 1;
  int interval_multiplier = 1;  // applied to comm_interval after `multiplier_after`
  int multiplier_after = 0;     // 0 disables the change
  double gamma = 0.9;
  double lr = 0.01;
  double lr_min = 0.001;
  double lr_decay = 0.998;  // per episode; 1 keeps lr constant
  double epsilon0 = 1.0;
  double epsilon_min = 0.01;
  double epsilon_decay = 0.997;
  double alpha0 = 0.9;
  double tau = 100.0;
  std::uint64_t seed = 1;
  int max_steps = gridworld::kDefaultMaxSteps;
  std::vector<int> layer_dims{4, 64, 4};
  fxp::QFormat fmt = fxp::kQ1_2_5;
  bool record_log = true;

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;
  /// max(eps_min, eps0 * decay^(episode-1)) for 1-based episodes.
  double epsilon(int episode) const;
  /// max(lr_min, lr * lr_decay^(episode-1)).
  double learning_rate(int episode) const;
  /// True when an aggregation round closes after this 1-based episode.
  bool aggregates_after(int episode) const;
};

struct Transition {
  gridworld::Observation obs{};
  gridworld::Action action{};
  double reward = 0.0;
  gridworld::Observation next_obs{};
  bool terminal = false;
};

struct EpisodeResult {
  std::vector<Transition> transitions;
  double episode_return = 0.0;  // sum_t gamma^t r_t
  gridworld::Outcome outcome = gridworld::Outcome::Ongoing;
};

/// Optional per-step activation hook source (nullopt = clean step).
using StepHookSource = std::function<std::optional<policy::ActivationHook>(int step)>;

/// Runs one episode from the map's source until a terminal cell or max_steps.
EpisodeResult run_episode(const policy::MLPPolicy& policy, const gridworld::GridMap& map, policy::ActionMode mode,
                          Rng& rng, double gamma, int max_steps, const StepHookSource& hooks = {});

/// One semi-gradient Q-learning step per transition on the master weights,
/// in episode order, followed by a re-quantization. Values and gradients are
/// taken at the stored codes and applied to the master weights.
void td_update(policy::MLPPolicy& policy, std::span<const Transition> transitions, double gamma, double lr);

/// 1/n + (alpha0 - 1/n) * exp(-k / tau). Throws if alpha0 < 1/n.
double alpha_schedule(std::uint64_t k, double alpha0, double tau, int n);

/// Smoothing average in real arithmetic, ascending agent order.
std::vector<std::vector<double>> aggregate_real(std::span<const std::vector<double>> params, double alpha);

/// Smoothing average: out_i = alpha * theta_i + (1-alpha)/(n-1) * sum_{j != i} theta_j,
/// summed in ascending agent order over dequantized codes, requantized per agent.
std::vector<std::vector<fxp::Code>> aggregate(std::span<const std::vector<fxp::Code>> params, fxp::QFormat fmt,
                                              double alpha);

/// Plain mean of the parameter sets, requantized.
std::vector<fxp::Code> mean_params(std::span<const std::vector<fxp::Code>> params, fxp::QFormat fmt);

/// Greedy rollout; the environment is deterministic, so one rollout decides
/// every greedy attempt on this map.
gridworld::Outcome greedy_rollout(const policy::MLPPolicy& policy, const gridworld::GridMap& map, int max_steps,
                                  int* steps = nullptr);

/// Mean over maps of the greedy success rate (each map evaluated with its own policy).
double greedy_success_rate(std::span<const policy::MLPPolicy> policies, std::span<const gridworld::GridMap> maps,
                           int max_steps);

struct EpisodeLogRow {
  int episode = 0;
  int agent = 0;
  double episode_return = 0.0;
  gridworld::Outcome outcome = gridworld::Outcome::Ongoing;
  double epsilon = 0.0;
  double alpha = 1.0;
  int flips_injected = 0;
  double sr_window = 0.0;
};

struct GuardEvent {
  int episode = 0;
  guard::Verdict verdict;
  std::string action;
  int recovered_within_k = -1;  // -1 pending / not applicable, 0 no, 1 yes
};

struct GuardOptions {
  guard::DetectorConfig detector;
  std::filesystem::path checkpoint_dir;  // empty: in-memory checkpoints only
};

/// The federated loop, advanced one episode (for every agent) at a time.
class FederatedTrainer {
 public:
  /// `maps` holds at least n_agents maps; agent i trains on maps[i].
  FederatedTrainer(TrainConfig cfg, std::vector<gridworld::GridMap> maps, faultinj::FaultPlan* plan = nullptr,
                   const GuardOptions* guard = nullptr);
  ~FederatedTrainer();
  FederatedTrainer(const FederatedTrainer&) = delete;
  FederatedTrainer& operator=(const FederatedTrainer&) = delete;

  /// Runs the next episode for every agent and closes the round if due.
  void step();
  /// Runs until `episode` episodes have completed (may exceed cfg.episodes).
  void run_until(int episode);
  void run() { run_until(cfg_.episodes); }

  int episode() const { return episode_; }
  std::uint64_t rounds() const { return round_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<policy::MLPPolicy>& policies() const { return agents_; }
  std::vector<policy::MLPPolicy>& policies() { return agents_; }
  const std::vector<gridworld::GridMap>& maps() const { return maps_; }
  const std::vector<fxp::Code>& server_params() const { return server_params_; }
  const std::vector<EpisodeLogRow>& log() const { return log_; }
  const std::vector<GuardEvent>& guard_events() const { return events_; }
  const guard::CheckpointStore* checkpoints() const { return store_.get(); }
  double current_alpha() const { return alpha_; }

  /// Consensus policy: plain mean of all agents' parameters.
  policy::MLPPolicy consensus() const;

  /// Copy of the training state that continues under `plan` (validated here).
  /// Only unguarded trainers can be forked.
  std::unique_ptr<FederatedTrainer> fork(faultinj::FaultPlan* plan) const;

 private:
  struct ForkTag {};
  FederatedTrainer(const FederatedTrainer& other, faultinj::FaultPlan* plan, ForkTag);

  void aggregate_round();
  void run_guard(std::span<const double> returns);

  struct PendingRecovery {
    std::size_t event = 0;
    std::vector<int> agents;
    double threshold = 0.0;
    int deadline = 0;
  };

  TrainConfig cfg_;
  std::vector<gridworld::GridMap> maps_;
  faultinj::FaultPlan* plan_ = nullptr;
  std::vector<policy::MLPPolicy> agents_;
  std::vector<std::deque<gridworld::Outcome>> recent_;
  std::vector<fxp::Code> server_params_;
  std::uint64_t round_ = 0;
  int last_round_episode_ = 0;
  int episode_ = 0;
  double alpha_ = 1.0;
  std::vector<EpisodeLogRow> log_;

  std::optional<GuardOptions> guard_;
  std::unique_ptr<guard::RewardDropDetector> detector_;
  std::unique_ptr<guard::CheckpointStore> store_;
  std::vector<GuardEvent> events_;
  std::vector<PendingRecovery> pending_;
};

struct TrainResult {
  std::vector<policy::MLPPolicy> policies;
  std::vector<EpisodeLogRow> log;
  faultinj::InjectionLog injections;
  std::vector<GuardEvent> guard_events;
};

/// Validates everything up front, then trains for cfg.episodes.
TrainResult train_federated(const TrainConfig& cfg, const std::vector<gridworld::GridMap>& maps,
                            faultinj::FaultPlan* plan = nullptr, const GuardOptions* guard = nullptr);

}  // namespace frlfi::fedtrain
