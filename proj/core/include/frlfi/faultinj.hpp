#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "frlfi/fxp.hpp"
#include "frlfi/policy.hpp"
#include "frlfi/rng.hpp"

namespace frlfi::faultinj {

enum class LocationKind : std::uint8_t { AgentUpload, ServerState, ServerBroadcast, AgentWeights, ActivationRead };

struct FaultLocation {
  LocationKind kind = LocationKind::ServerState;
  int agent = -1;  // only meaningful for agent-side kinds

  static FaultLocation agent_upload(int a) { return {LocationKind::AgentUpload, a}; }
  static FaultLocation server_state() { return {LocationKind::ServerState, -1}; }
  static FaultLocation server_broadcast() { return {LocationKind::ServerBroadcast, -1}; }
  static FaultLocation agent_weights(int a) { return {LocationKind::AgentWeights, a}; }
  static FaultLocation activation_read(int a) { return {LocationKind::ActivationRead, a}; }

  bool is_agent_side() const { return kind != LocationKind::ServerState && kind != LocationKind::ServerBroadcast; }
  std::string to_string() const;
  static FaultLocation parse(std::string_view text);

  friend bool operator==(const FaultLocation&, const FaultLocation&) = default;
};

enum class FaultClass : std::uint8_t { AgentFault, ServerFault };
FaultClass fault_class(FaultLocation loc);
std::string_view to_string(FaultClass c);

enum class FlipMode : std::uint8_t { Both, ZeroToOne, OneToZero };
std::string_view to_string(FlipMode m);
FlipMode flip_mode_from_string(std::string_view s);

enum class Persistence : std::uint8_t { TransientRead, PersistentMemory };
std::string_view to_string(Persistence p);
Persistence persistence_from_string(std::string_view s);

struct FaultSpec {
  FaultLocation location;
  double ber = 0.0;
  FlipMode mode = FlipMode::Both;
  int episode = 0;  // 1-based training episode; 0 for inference-only specs
  int step = 0;     // step within the episode (activation / inference faults)
  Persistence persistence = Persistence::PersistentMemory;
  std::uint64_t seed = 0;
};

struct InjectionRecord {
  FaultLocation location;
  std::size_t offset = 0;
  int bit = 0;
  int old_bit = 0;
  int new_bit = 0;
  int episode = 0;
  int step = 0;
  int agent = -1;  // receiving agent, -1 for server memory
};

using InjectionLog = std::vector<InjectionRecord>;

/// Bit flip at (offset, bit) as performed by inject().
struct Flip {
  std::size_t offset = 0;
  int bit = 0;
  int old_bit = 0;
};

/// Flips every bit independently with probability `ber`. ZeroToOne only lets
/// 0-bits flip, OneToZero only 1-bits. Modifies codes in place.
std::vector<Flip> inject(std::span<fxp::Code> codes, fxp::QFormat fmt, double ber, FlipMode mode, Rng& rng);

/// Pure variant.
std::pair<fxp::CodeTensor, std::vector<Flip>> inject(const fxp::CodeTensor& t, double ber, FlipMode mode, Rng& rng);

/// Activation hook that quantizes each activation in `fmt`, applies `inject`
/// semantics and writes back only those elements whose bits changed.
policy::ActivationHook make_activation_hook(fxp::QFormat fmt, double ber, FlipMode mode, Rng& rng,
                                            std::vector<Flip>* flips = nullptr);

enum class HookPoint : std::uint8_t {
  PreEpisode,       // agent weights (persistent) and activation reads at episode start
  AgentUpload,      // parameters travelling agent -> server
  ServerAggregate,  // server memory after aggregation
  ServerBroadcast,  // parameters travelling server -> agent
  ActivationRead,   // forward pass during a training episode
  PreInference,     // static weight corruption before deployment
  InferenceStep,    // one step during inference
};

/// Scheduled faults for one campaign. Every spec fires at most once
/// (ServerBroadcast fires once per agent link in its round).
class FaultPlan {
 public:
  FaultPlan() = default;
  FaultPlan(std::vector<FaultSpec> specs, std::uint64_t campaign_seed);

  /// Throws std::invalid_argument for agent ids >= n_agents, episodes outside
  /// [1, episodes], server specs in a serverless run or invalid BER.
  void validate(int n_agents, int episodes) const;

  bool empty() const { return specs_.empty(); }
  const std::vector<FaultSpec>& specs() const { return specs_; }
  const InjectionLog& log() const { return log_; }

  /// Fires all specs that match the hook at this time on `codes`.
  /// `agent` is the agent whose data is being touched (or -1 for server memory).
  /// For aggregation hooks, `round_start` < spec.episode <= episode selects the
  /// round containing the scheduled episode. Returns the number of flips.
  int fire(HookPoint hook, int episode, int step, int agent, std::span<fxp::Code> codes, fxp::QFormat fmt,
           int round_start = -1);

  /// Activation hook for (agent, episode, step) or nullopt when nothing is due.
  /// The hook records flips into the log when invoked.
  std::optional<policy::ActivationHook> activation_hook(int agent, int episode, int step, fxp::QFormat fmt);

  /// True if any spec still has to fire at ActivationRead for this agent/episode.
  bool has_activation_fault(int agent, int episode) const;

  /// Number of flips logged for (episode, agent), counting server-wide flips
  /// once for every agent that received them.
  int flips_for(int episode, int agent) const;

 private:
  struct Slot {
    FaultSpec spec;
    Rng rng;
    bool fired = false;
    std::vector<int> broadcast_links;  // agents already hit by a ServerBroadcast spec
  };
  bool matches(const Slot& s, HookPoint hook, int episode, int step, int agent, int round_start) const;
  void record(const FaultSpec& spec, const std::vector<Flip>& flips, fxp::QFormat fmt,
              std::span<const fxp::Code> after, int episode, int step, int agent);

  std::vector<FaultSpec> specs_;
  std::vector<Slot> slots_;
  InjectionLog log_;
};

}  // namespace frlfi::faultinj
