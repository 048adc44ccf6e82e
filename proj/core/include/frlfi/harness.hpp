#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "frlfi/faultinj.hpp"
#include "frlfi/fedtrain.hpp"
#include "frlfi/fxp.hpp"
#include "frlfi/guard.hpp"
#include "frlfi/policy.hpp"

namespace frlfi::harness {

enum class Phase : std::uint8_t { Training, Inference };
std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

/// Clean: no fault. MultiTrans1: one action step reads corrupted weights.
/// MultiTransM: the stored weights are corrupted before the rollout.
enum class InferenceKind : std::uint8_t { Clean, MultiTrans1, MultiTransM };
std::string_view to_string(InferenceKind k);
InferenceKind inference_kind_from_string(std::string_view s);

/// Agent id placeholder: the agent is chosen per repetition (r mod n).
inline constexpr int kAnyAgent = -1;

struct ExperimentSpec {
  std::string name = "experiment";
  Phase phase = Phase::Training;
  fedtrain::TrainConfig train;

  std::vector<int> fault_episodes{100, 300, 500, 700, 900};
  std::vector<double> bers{1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  std::vector<faultinj::FaultLocation> locations{faultinj::FaultLocation::server_state(),
                                                 faultinj::FaultLocation::agent_weights(kAnyAgent)};
  std::vector<faultinj::FlipMode> modes{faultinj::FlipMode::Both};
  std::vector<fxp::QFormat> formats{fxp::kQ1_2_5};
  std::vector<int> agent_counts{12};
  std::vector<int> interval_multipliers{1};
  std::vector<InferenceKind> inference_kinds{InferenceKind::MultiTrans1, InferenceKind::MultiTransM};
  std::vector<bool> guard{false};

  int repetitions = 100;
  std::uint64_t seed_base = 1;
  guard::DetectorConfig detector;
  double range_margin = 0.1;
  int recovery_budget = 0;  // 0: twice the episodes left after the fault
  double target_sr = 0.96;

  /// Single faults for the `train` command.
  std::vector<faultinj::FaultSpec> faults;
  bool train_guard = false;
  std::filesystem::path output_dir = "out";

  /// Throws std::invalid_argument on empty axes, R < 1 and cells that cannot run.
  void validate() const;
};

struct Cell {
  int fault_episode = 0;
  double ber = 0.0;
  faultinj::FaultLocation location;
  faultinj::FlipMode mode = faultinj::FlipMode::Both;
  fxp::QFormat fmt = fxp::kQ1_2_5;
  int n_agents = 12;
  int interval_multiplier = 1;
  InferenceKind kind = InferenceKind::Clean;
  bool guard = false;

  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Cartesian product of the axes relevant to the spec's phase, in a fixed order.
std::vector<Cell> expand_cells(const ExperimentSpec& spec);

struct ResultRow {
  Phase phase = Phase::Training;
  Cell cell;
  int repetitions = 0;
  double mean_sr = 0.0;
  double sr_std = 0.0;
  double ci95 = 0.0;
  double mean_flips = 0.0;
  double runtime_s = 0.0;  // not part of the CSV

  bool same_result(const ResultRow& o) const;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;   // sample standard deviation
  double ci95 = 0.0;  // 1.96 * sqrt(p (1 - p) / R)
};
Summary summarize(std::span<const double> srs);

/// Half-width of the 95% normal-approximation interval of a proportion.
double binomial_ci95(double p, int trials);
/// Differences larger than the summed half-widths.
bool ci_separated(const ResultRow& a, const ResultRow& b);

/// Worker count from FRLFI_THREADS, falling back to the hardware concurrency.
int worker_threads();

/// Calls f(i) for i in [0, n) on `threads` workers; rethrows the first error.
template <class F>
void parallel_for(std::size_t n, F&& f, int threads = worker_threads()) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          try {
            f(i);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
            next.store(n);
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

/// Training seed of repetition r.
std::uint64_t repetition_seed(const ExperimentSpec& spec, int r);

std::vector<ResultRow> run_training_sweep(const ExperimentSpec& spec, int threads = worker_threads());

/// Trained agents with their maps.
struct PolicyBundle {
  std::vector<policy::MLPPolicy> policies;
  std::vector<gridworld::GridMap> maps;
  int max_steps = gridworld::kDefaultMaxSteps;

  double success_rate() const;
};

/// Trains spec.train with seed seed_base (no faults).
PolicyBundle train_bundle(const ExperimentSpec& spec);
void save_bundle(const PolicyBundle& bundle, const std::filesystem::path& path);
PolicyBundle load_bundle(const std::filesystem::path& path, std::vector<gridworld::GridMap> maps);

/// Throws std::invalid_argument if the bundle's SR is below spec.target_sr.
std::vector<ResultRow> run_inference_sweep(const ExperimentSpec& spec, const PolicyBundle& bundle,
                                           int threads = worker_threads());

/// Greedy rollout where one step may read a different parameter set.
/// `params_at(step)` returns nullptr for the clean parameters.
gridworld::Outcome rollout_with(const policy::MLPPolicy& p, const gridworld::GridMap& map, int max_steps,
                                const std::function<const std::vector<double>*(int)>& params_at,
                                const std::vector<double>* base = nullptr, int* steps = nullptr);

struct ConvergenceRow {
  double ber = 0.0;
  int repetition = 0;
  std::uint64_t seed = 0;
  int fault_episode = 0;
  int episodes_to_recover = 0;  // censored rows hold the budget
  bool censored = false;
  int flips = 0;
};

/// Fault at spec.fault_episodes.front() with spec.locations.front(); every BER
/// of spec.bers per repetition; recovery = first episode whose greedy SR
/// reaches spec.target_sr.
std::vector<ConvergenceRow> run_convergence_study(const ExperimentSpec& spec, int threads = worker_threads());

struct MitigationRow {
  int repetition = 0;
  std::uint64_t seed = 0;
  bool faulted = false;
  bool guarded = false;
  double final_sr = 0.0;
  int verdicts = 0;
  int recoveries = 0;
  int flips = 0;
};

/// Per repetition: the fault scenario with and without the guard, plus a
/// guarded fault-free run whose verdicts count as false positives.
std::vector<MitigationRow> run_training_mitigation(const ExperimentSpec& spec, int threads = worker_threads());

/// Wall-clock seconds (minimum over `repeats`) of fault-free training with and
/// without the guard.
struct OverheadResult {
  double plain_s = 0.0;
  double guarded_s = 0.0;
  double overhead() const { return guarded_s / plain_s - 1.0; }
};
OverheadResult measure_guard_overhead(const ExperimentSpec& spec, int repeats,
                                      const std::filesystem::path& checkpoint_dir = {});

/// Consensus-policy spread for one run of spec.train with n agents.
double consensus_spread(const ExperimentSpec& spec, int n_agents, std::uint64_t seed);

}  // namespace frlfi::harness
