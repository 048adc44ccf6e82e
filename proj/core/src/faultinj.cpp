#include "frlfi/faultinj.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace frlfi::faultinj {

namespace {

constexpr std::string_view kindName(LocationKind k) {
  switch (k) {
    case LocationKind::AgentUpload: return "AgentUpload";
    case LocationKind::ServerState: return "ServerState";
    case LocationKind::ServerBroadcast: return "ServerBroadcast";
    case LocationKind::AgentWeights: return "AgentWeights";
    case LocationKind::ActivationRead: return "ActivationRead";
  }
  return "?";
}

}  // namespace

std::string FaultLocation::to_string() const {
  std::string s(kindName(kind));
  if (is_agent_side()) s += "(" + std::to_string(agent) + ")";
  return s;
}

FaultLocation FaultLocation::parse(std::string_view text) {
  const auto open = text.find('(');
  const std::string_view name = text.substr(0, open);
  for (LocationKind k : {LocationKind::AgentUpload, LocationKind::ServerState, LocationKind::ServerBroadcast,
                         LocationKind::AgentWeights, LocationKind::ActivationRead}) {
    if (kindName(k) != name) continue;
    FaultLocation loc{k, -1};
    if (!loc.is_agent_side()) {
      if (open != std::string_view::npos) throw std::invalid_argument("server location takes no agent id");
      return loc;
    }
    loc.agent = 0;
    if (open != std::string_view::npos) {
      if (text.back() != ')') throw std::invalid_argument("malformed fault location '" + std::string(text) + "'");
      const auto digits = text.substr(open + 1, text.size() - open - 2);
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), loc.agent);
      if (ec != std::errc{} || p != digits.data() + digits.size()) {
        throw std::invalid_argument("malformed agent id in '" + std::string(text) + "'");
      }
    }
    return loc;
  }
  throw std::invalid_argument("unknown fault location '" + std::string(text) + "'");
}

FaultClass fault_class(FaultLocation loc) {
  return loc.is_agent_side() ? FaultClass::AgentFault : FaultClass::ServerFault;
}

std::string_view to_string(FaultClass c) { return c == FaultClass::AgentFault ? "AgentFault" : "ServerFault"; }

std::string_view to_string(FlipMode m) {
  switch (m) {
    case FlipMode::Both: return "Both";
    case FlipMode::ZeroToOne: return "ZeroToOne";
    case FlipMode::OneToZero: return "OneToZero";
  }
  return "?";
}

FlipMode flip_mode_from_string(std::string_view s) {
  for (FlipMode m : {FlipMode::Both, FlipMode::ZeroToOne, FlipMode::OneToZero}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown flip mode '" + std::string(s) + "'");
}

std::string_view to_string(Persistence p) {
  return p == Persistence::TransientRead ? "TransientRead" : "PersistentMemory";
}

Persistence persistence_from_string(std::string_view s) {
  if (s == "TransientRead") return Persistence::TransientRead;
  if (s == "PersistentMemory") return Persistence::PersistentMemory;
  throw std::invalid_argument("unknown persistence '" + std::string(s) + "'");
}

std::vector<Flip> inject(std::span<fxp::Code> codes, fxp::QFormat fmt, double ber, FlipMode mode, Rng& rng) {
  if (!(ber >= 0.0 && ber <= 1.0)) throw std::invalid_argument("BER must lie in [0, 1]");
  std::vector<Flip> flips;
  if (ber == 0.0 || codes.empty()) return flips;
  const int width = fmt.total_bits();
  const std::size_t total = codes.size() * static_cast<std::size_t>(width);

  // Walk the Bernoulli process by geometric gaps between successes.
  const double log_q = std::log1p(-ber);
  auto gap = [&]() -> std::size_t {
    if (ber >= 1.0) return 0;
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    const double g = std::floor(std::log(u) / log_q);
    return g >= static_cast<double>(total) ? total : static_cast<std::size_t>(g);
  };

  for (std::size_t pos = gap(); pos < total; pos += 1 + gap()) {
    const std::size_t offset = pos / static_cast<std::size_t>(width);
    const int bit = static_cast<int>(pos % static_cast<std::size_t>(width));
    const int old_bit = fxp::bit_set(codes[offset], bit, fmt) ? 1 : 0;
    if ((mode == FlipMode::ZeroToOne && old_bit == 1) || (mode == FlipMode::OneToZero && old_bit == 0)) continue;
    codes[offset] = fxp::flip_bit(codes[offset], bit, fmt);
    flips.push_back({offset, bit, old_bit});
  }
  return flips;
}

std::pair<fxp::CodeTensor, std::vector<Flip>> inject(const fxp::CodeTensor& t, double ber, FlipMode mode, Rng& rng) {
  fxp::CodeTensor out = t;
  auto flips = inject(std::span<fxp::Code>(out.codes), out.fmt, ber, mode, rng);
  return {std::move(out), std::move(flips)};
}

policy::ActivationHook make_activation_hook(fxp::QFormat fmt, double ber, FlipMode mode, Rng& rng,
                                            std::vector<Flip>* flips) {
  return [fmt, ber, mode, &rng, flips](int, std::span<double> acts) {
    if (ber == 0.0) return;
    std::vector<fxp::Code> codes(acts.size());
    for (std::size_t i = 0; i < acts.size(); ++i) codes[i] = fxp::quantize(acts[i], fmt);
    const auto f = inject(std::span<fxp::Code>(codes), fmt, ber, mode, rng);
    for (const auto& flip : f) acts[flip.offset] = fxp::dequantize(codes[flip.offset], fmt);
    if (flips != nullptr) flips->insert(flips->end(), f.begin(), f.end());
  };
}

FaultPlan::FaultPlan(std::vector<FaultSpec> specs, std::uint64_t campaign_seed) : specs_(std::move(specs)) {
  slots_.reserve(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    slots_.push_back(Slot{specs_[i], Rng(derive_seed(campaign_seed, Stream::FaultSpec, {i, specs_[i].seed})), false, {}});
  }
}

void FaultPlan::validate(int n_agents, int episodes) const {
  for (const auto& s : specs_) {
    if (!(s.ber >= 0.0 && s.ber <= 1.0)) throw std::invalid_argument("fault spec BER outside [0, 1]");
    if (s.location.is_agent_side() && (s.location.agent < 0 || s.location.agent >= n_agents)) {
      throw std::invalid_argument("fault spec " + s.location.to_string() + " references a nonexistent agent");
    }
    if (!s.location.is_agent_side() && n_agents < 2) {
      throw std::invalid_argument("fault spec " + s.location.to_string() + " needs a server (n_agents >= 2)");
    }
    if (s.location.kind == LocationKind::AgentUpload && n_agents < 2) {
      throw std::invalid_argument("AgentUpload faults need a server (n_agents >= 2)");
    }
    if (s.episode < 1 || s.episode > episodes) {
      throw std::invalid_argument("fault spec episode " + std::to_string(s.episode) + " outside [1, " +
                                  std::to_string(episodes) + "]");
    }
    if (s.step < 0) throw std::invalid_argument("fault spec step must be >= 0");
    if (s.persistence == Persistence::TransientRead && s.location.kind != LocationKind::ActivationRead &&
        s.location.kind != LocationKind::AgentWeights) {
      throw std::invalid_argument("TransientRead only applies to ActivationRead and weight reads");
    }
  }
}

bool FaultPlan::matches(const Slot& s, HookPoint hook, int episode, int step, int agent, int round_start) const {
  if (s.fired) return false;
  const auto& spec = s.spec;
  const auto kind = spec.location.kind;
  const bool in_round = spec.episode > round_start && spec.episode <= episode;
  switch (hook) {
    case HookPoint::PreEpisode:
      return kind == LocationKind::AgentWeights && spec.persistence == Persistence::PersistentMemory &&
             spec.location.agent == agent && spec.episode == episode;
    case HookPoint::AgentUpload:
      return kind == LocationKind::AgentUpload && spec.location.agent == agent && in_round;
    case HookPoint::ServerAggregate:
      return kind == LocationKind::ServerState && in_round;
    case HookPoint::ServerBroadcast:
      return kind == LocationKind::ServerBroadcast && in_round &&
             std::find(s.broadcast_links.begin(), s.broadcast_links.end(), agent) == s.broadcast_links.end();
    case HookPoint::ActivationRead:
      return kind == LocationKind::ActivationRead && spec.location.agent == agent && spec.episode == episode &&
             spec.step == step;
    case HookPoint::PreInference:
      return kind == LocationKind::AgentWeights && spec.persistence == Persistence::PersistentMemory &&
             spec.location.agent == agent;
    case HookPoint::InferenceStep:
      return (kind == LocationKind::AgentWeights || kind == LocationKind::ActivationRead) &&
             spec.persistence == Persistence::TransientRead && spec.location.agent == agent && spec.step == step;
  }
  return false;
}

void FaultPlan::record(const FaultSpec& spec, const std::vector<Flip>& flips, fxp::QFormat fmt,
                       std::span<const fxp::Code> after, int episode, int step, int agent) {
  for (const auto& f : flips) {
    InjectionRecord r;
    r.location = spec.location;
    r.offset = f.offset;
    r.bit = f.bit;
    r.old_bit = f.old_bit;
    r.new_bit = after.empty() ? 1 - f.old_bit : (fxp::bit_set(after[f.offset], f.bit, fmt) ? 1 : 0);
    r.episode = episode;
    r.step = step;
    r.agent = agent;
    log_.push_back(r);
  }
}

int FaultPlan::fire(HookPoint hook, int episode, int step, int agent, std::span<fxp::Code> codes, fxp::QFormat fmt,
                    int round_start) {
  int total = 0;
  for (auto& s : slots_) {
    if (!matches(s, hook, episode, step, agent, round_start)) continue;
    const auto flips = inject(codes, fmt, s.spec.ber, s.spec.mode, s.rng);
    record(s.spec, flips, fmt, codes, episode, step, agent);
    total += static_cast<int>(flips.size());
    if (hook == HookPoint::ServerBroadcast) {
      s.broadcast_links.push_back(agent);
    } else if (hook != HookPoint::InferenceStep && hook != HookPoint::PreInference) {
      s.fired = true;
    }
  }
  return total;
}

bool FaultPlan::has_activation_fault(int agent, int episode) const {
  return std::any_of(slots_.begin(), slots_.end(), [&](const Slot& s) {
    return !s.fired && s.spec.location.kind == LocationKind::ActivationRead && s.spec.location.agent == agent &&
           s.spec.episode == episode;
  });
}

std::optional<policy::ActivationHook> FaultPlan::activation_hook(int agent, int episode, int step, fxp::QFormat fmt) {
  std::vector<Slot*> due;
  for (auto& s : slots_) {
    if (matches(s, HookPoint::ActivationRead, episode, step, agent, -1)) due.push_back(&s);
  }
  if (due.empty()) return std::nullopt;
  for (Slot* s : due) s->fired = true;
  return policy::ActivationHook([this, due, fmt, episode, step, agent](int, std::span<double> acts) {
    for (Slot* s : due) {
      std::vector<Flip> flips;
      auto hook = make_activation_hook(fmt, s->spec.ber, s->spec.mode, s->rng, &flips);
      hook(0, acts);
      record(s->spec, flips, fmt, {}, episode, step, agent);
    }
  });
}

int FaultPlan::flips_for(int episode, int agent) const {
  int n = 0;
  for (const auto& r : log_) {
    if (r.episode == episode && (r.agent == agent || r.agent == -1)) ++n;
  }
  return n;
}

}  // namespace frlfi::faultinj
