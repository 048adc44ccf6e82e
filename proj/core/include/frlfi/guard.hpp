#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "frlfi/fxp.hpp"
#include "frlfi/policy.hpp"

namespace frlfi::guard {

struct DetectorConfig {
  double drop_percent = 25.0;  // p
  int consecutive = 50;        // k
  int window = 100;            // W, trailing baseline length
  int checkpoint_every = 5;    // aggregation rounds between checkpoints
  int history = 8;             // checkpoints retained in memory

  /// Throws std::invalid_argument unless p > 0, k >= 1, W >= k.
  void validate() const;
};

struct Verdict {
  enum class Kind : std::uint8_t { NoFault, AgentFault, ServerFault };
  Kind kind = Kind::NoFault;
  int agent = -1;       // set for AgentFault only
  int onset = 0;        // first episode of the triggering drop streak
  double baseline = 0;  // frozen reference return of the dropped agent(s)

  static Verdict none() { return {}; }
  static Verdict agent_fault(int a, int onset, double baseline = 0) { return {Kind::AgentFault, a, onset, baseline}; }
  static Verdict server_fault(int onset, double baseline = 0) { return {Kind::ServerFault, -1, onset, baseline}; }
};

std::string_view to_string(Verdict::Kind k);

/// Per-agent reward-drop detector. An agent is dropped after `k` consecutive
/// episodes whose return falls below baseline - p% * |baseline|, where the
/// baseline is the mean of the last W non-suspect returns and is frozen for the
/// duration of a suspicion streak.
class RewardDropDetector {
 public:
  RewardDropDetector(int n_agents, DetectorConfig cfg);

  /// Feeds one return per agent for `episode`. Dropped agents are reported
  /// once and then reset. More than half dropped -> a single ServerFault;
  /// otherwise one AgentFault per dropped agent.
  std::vector<Verdict> update(int episode, std::span<const double> returns);

  /// Forgets history and any ongoing streak for the agent.
  void reset(int agent);
  void reset_all();

  /// Return below which an episode counts as a drop for this baseline.
  double threshold(double baseline) const;

  int streak(int agent) const { return agents_.at(static_cast<std::size_t>(agent)).streak; }
  bool warmed_up(int agent) const;
  std::optional<double> baseline(int agent) const;
  bool suspicious() const;

 private:
  struct AgentState {
    std::deque<double> history;
    std::vector<double> pending;  // returns inside the current streak
    double frozen_baseline = 0.0;
    int streak = 0;
    int onset = 0;
  };
  DetectorConfig cfg_;
  std::vector<AgentState> agents_;
};

/// Server parameter snapshot of one completed aggregation round.
struct Checkpoint {
  policy::ParamBlob params;
  std::uint64_t round = 0;
  int episode = 0;
  std::uint64_t digest = 0;

  /// Parameter blob followed by u64 round, u32 episode and u64 FNV-1a digest of
  /// everything before it.
  std::vector<std::uint8_t> encode() const;
  /// Throws std::runtime_error on a digest mismatch or malformed bytes.
  static Checkpoint decode(std::span<const std::uint8_t> bytes);

  /// Writes via a temporary file and rename.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

/// Keeps the most recent checkpoints in memory and optionally persists the
/// latest one to disk from a background writer thread.
class CheckpointStore {
 public:
  explicit CheckpointStore(DetectorConfig cfg, std::filesystem::path dir = {});
  ~CheckpointStore();
  CheckpointStore(const CheckpointStore&) = delete;
  CheckpointStore& operator=(const CheckpointStore&) = delete;

  /// Snapshots the server parameters when `round` is a multiple of
  /// checkpoint_every. Returns true if a snapshot was taken.
  bool maybe_checkpoint(std::uint64_t round, int episode, const policy::ParamBlob& server);

  bool empty() const { return ring_.empty(); }
  const Checkpoint* latest() const { return ring_.empty() ? nullptr : &ring_.back(); }
  /// Most recent checkpoint taken at or before `episode`.
  const Checkpoint* latest_at_or_before(int episode) const;

  /// Blocks until queued disk writes are done.
  void flush();
  std::size_t write_failures() const;
  std::string last_error() const;
  std::filesystem::path file_path() const;

 private:
  void writer_loop(std::stop_token st);

  DetectorConfig cfg_;
  std::filesystem::path dir_;
  std::deque<Checkpoint> ring_;

  mutable std::mutex mu_;
  std::condition_variable_any cv_;
  std::condition_variable_any idle_cv_;
  std::optional<Checkpoint> queued_;
  bool writing_ = false;
  std::size_t failures_ = 0;
  std::string last_error_;
  std::jthread writer_;
};

struct RecoveryAction {
  bool applied = false;
  std::string description;
  const Checkpoint* source = nullptr;
};

/// Chooses the checkpoint to roll back to for a verdict: the newest one taken
/// at least one checkpoint interval before the drop onset.
const Checkpoint* recovery_checkpoint(const CheckpointStore& store, const Verdict& v, int episodes_per_interval);

/// AgentFault(i): agent i loads the checkpoint. ServerFault: server parameters
/// revert to the checkpoint and every agent receives them. NoFault: nothing.
RecoveryAction recover(const Verdict& v, const Checkpoint* ckpt, std::span<policy::MLPPolicy> agents,
                       std::vector<fxp::Code>& server_params);

/// Per-layer envelope (lower, upper) over a clean model's dequantized
/// parameters, widened by 10% of each end's magnitude.
class RangeDetector {
 public:
  static RangeDetector build(const policy::MLPPolicy& clean, double margin = 0.1);

  struct Bounds {
    double lower = 0.0;
    double upper = 0.0;
  };
  const std::vector<Bounds>& bounds() const { return bounds_; }

  /// One flag per parameter: true when strictly outside its layer bounds.
  std::vector<bool> screen(const policy::MLPPolicy& p) const;

 private:
  std::vector<policy::LayerShape> layout_;
  std::vector<Bounds> bounds_;
};

/// Dequantized parameters with every flagged parameter replaced by zero.
std::vector<double> masked_params(const policy::MLPPolicy& p, const std::vector<bool>& flags);

/// Forward pass that skips (zeroes) every parameter the detector flags.
policy::ActionValues guarded_forward(const policy::MLPPolicy& p, const gridworld::Observation& obs,
                                     const RangeDetector& detector);

}  // namespace frlfi::guard
