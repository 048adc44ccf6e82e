#include "frlfi/guard.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

namespace frlfi::guard {

void DetectorConfig::validate() const {
  if (!(drop_percent > 0.0)) throw std::invalid_argument("detector: p must be > 0");
  if (consecutive < 1) throw std::invalid_argument("detector: k must be >= 1");
  if (window < consecutive) throw std::invalid_argument("detector: W must be >= k");
  if (checkpoint_every < 1) throw std::invalid_argument("detector: checkpoint_every must be >= 1");
  if (history < 1) throw std::invalid_argument("detector: history must be >= 1");
}

std::string_view to_string(Verdict::Kind k) {
  switch (k) {
    case Verdict::Kind::NoFault: return "NoFault";
    case Verdict::Kind::AgentFault: return "AgentFault";
    case Verdict::Kind::ServerFault: return "ServerFault";
  }
  return "?";
}

RewardDropDetector::RewardDropDetector(int n_agents, DetectorConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  if (n_agents < 1) throw std::invalid_argument("detector: need at least one agent");
  agents_.resize(static_cast<std::size_t>(n_agents));
}

double RewardDropDetector::threshold(double baseline) const {
  return baseline - cfg_.drop_percent / 100.0 * std::abs(baseline);
}

bool RewardDropDetector::warmed_up(int agent) const {
  return agents_.at(static_cast<std::size_t>(agent)).history.size() >= static_cast<std::size_t>(cfg_.window);
}

std::optional<double> RewardDropDetector::baseline(int agent) const {
  const auto& a = agents_.at(static_cast<std::size_t>(agent));
  if (a.streak > 0) return a.frozen_baseline;
  if (a.history.size() < static_cast<std::size_t>(cfg_.window)) return std::nullopt;
  return std::accumulate(a.history.begin(), a.history.end(), 0.0) / static_cast<double>(a.history.size());
}

bool RewardDropDetector::suspicious() const {
  return std::any_of(agents_.begin(), agents_.end(), [](const AgentState& a) { return a.streak > 0; });
}

std::vector<Verdict> RewardDropDetector::update(int episode, std::span<const double> returns) {
  if (returns.size() != agents_.size()) throw std::invalid_argument("detector: one return per agent required");
  const auto W = static_cast<std::size_t>(cfg_.window);
  std::vector<int> dropped;
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    auto& a = agents_[i];
    const double r = returns[i];
    if (a.history.size() < W) {
      a.history.push_back(r);
      continue;
    }
    const double base = a.streak > 0 ? a.frozen_baseline
                                     : std::accumulate(a.history.begin(), a.history.end(), 0.0) /
                                           static_cast<double>(a.history.size());
    if (r < threshold(base)) {
      if (a.streak == 0) {
        a.frozen_baseline = base;
        a.onset = episode;
      }
      ++a.streak;
      a.pending.push_back(r);
      if (a.streak >= cfg_.consecutive) dropped.push_back(static_cast<int>(i));
      continue;
    }
    // The streak ended without a detection; its returns were genuine.
    for (double p : a.pending) {
      a.history.push_back(p);
      if (a.history.size() > W) a.history.pop_front();
    }
    a.pending.clear();
    a.streak = 0;
    a.history.push_back(r);
    if (a.history.size() > W) a.history.pop_front();
  }

  std::vector<Verdict> verdicts;
  if (dropped.empty()) return verdicts;
  const auto n = agents_.size();
  if (dropped.size() >= 2 && 2 * dropped.size() > n) {
    int onset = episode;
    double base = 0.0;
    for (int d : dropped) {
      onset = std::min(onset, agents_[static_cast<std::size_t>(d)].onset);
      base += agents_[static_cast<std::size_t>(d)].frozen_baseline;
    }
    verdicts.push_back(Verdict::server_fault(onset, base / static_cast<double>(dropped.size())));
  } else {
    for (int d : dropped) {
      const auto& a = agents_[static_cast<std::size_t>(d)];
      verdicts.push_back(Verdict::agent_fault(d, a.onset, a.frozen_baseline));
    }
  }
  for (int d : dropped) reset(d);
  return verdicts;
}

void RewardDropDetector::reset(int agent) { agents_.at(static_cast<std::size_t>(agent)) = AgentState{}; }

void RewardDropDetector::reset_all() {
  for (auto& a : agents_) a = AgentState{};
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int width) {
  for (int i = 0; i < width; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> Checkpoint::encode() const {
  auto out = policy::encode_params(params);
  put_le(out, round, 8);
  put_le(out, static_cast<std::uint32_t>(episode), 4);
  put_le(out, fnv1a64(out), 8);
  return out;
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> bytes) {
  Checkpoint c;
  std::size_t used = 0;
  c.params = policy::decode_params(bytes, &used);
  if (bytes.size() != used + 20) throw std::runtime_error("checkpoint: unexpected length");
  c.round = get_le(bytes, used, 8);
  c.episode = static_cast<int>(get_le(bytes, used + 8, 4));
  c.digest = get_le(bytes, used + 12, 8);
  if (fnv1a64(bytes.first(used + 12)) != c.digest) throw std::runtime_error("checkpoint: digest mismatch");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = encode();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("checkpoint: rename to " + path.string() + " failed: " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

CheckpointStore::CheckpointStore(DetectorConfig cfg, std::filesystem::path dir) : cfg_(cfg), dir_(std::move(dir)) {
  cfg_.validate();
  if (!dir_.empty()) {
    std::filesystem::create_directories(dir_);
    writer_ = std::jthread([this](std::stop_token st) { writer_loop(st); });
  }
}

CheckpointStore::~CheckpointStore() {
  if (writer_.joinable()) {
    flush();
    writer_.request_stop();
    cv_.notify_all();
  }
}

std::filesystem::path CheckpointStore::file_path() const {
  return dir_.empty() ? std::filesystem::path{} : dir_ / "server.ckpt";
}

bool CheckpointStore::maybe_checkpoint(std::uint64_t round, int episode, const policy::ParamBlob& server) {
  if (round == 0 || round % static_cast<std::uint64_t>(cfg_.checkpoint_every) != 0) return false;
  Checkpoint c;
  c.params = server;
  c.round = round;
  c.episode = episode;
  const auto bytes = c.encode();
  c.digest = get_le(bytes, bytes.size() - 8, 8);
  ring_.push_back(c);
  while (ring_.size() > static_cast<std::size_t>(cfg_.history)) ring_.pop_front();
  if (writer_.joinable()) {
    {
      std::lock_guard lock(mu_);
      queued_ = std::move(c);
    }
    cv_.notify_one();
  }
  return true;
}

const Checkpoint* CheckpointStore::latest_at_or_before(int episode) const {
  for (auto it = ring_.rbegin(); it != ring_.rend(); ++it) {
    if (it->episode <= episode) return &*it;
  }
  return nullptr;
}

void CheckpointStore::writer_loop(std::stop_token st) {
  std::unique_lock lock(mu_);
  while (true) {
    cv_.wait(lock, st, [this] { return queued_.has_value(); });
    if (!queued_) {
      if (st.stop_requested()) return;
      continue;
    }
    Checkpoint c = std::move(*queued_);
    queued_.reset();
    writing_ = true;
    lock.unlock();
    std::string err;
    try {
      c.save(file_path());
    } catch (const std::exception& e) {
      err = e.what();
    }
    lock.lock();
    writing_ = false;
    if (!err.empty()) {
      ++failures_;
      last_error_ = err;
    }
    idle_cv_.notify_all();
  }
}

void CheckpointStore::flush() {
  if (!writer_.joinable()) return;
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return !queued_.has_value() && !writing_; });
}

std::size_t CheckpointStore::write_failures() const {
  std::lock_guard lock(mu_);
  return failures_;
}

std::string CheckpointStore::last_error() const {
  std::lock_guard lock(mu_);
  return last_error_;
}

const Checkpoint* recovery_checkpoint(const CheckpointStore& store, const Verdict& v, int episodes_per_interval) {
  if (v.kind == Verdict::Kind::NoFault) return nullptr;
  return store.latest_at_or_before(v.onset - 1 - episodes_per_interval);
}

RecoveryAction recover(const Verdict& v, const Checkpoint* ckpt, std::span<policy::MLPPolicy> agents,
                       std::vector<fxp::Code>& server_params) {
  RecoveryAction act;
  act.source = ckpt;
  if (v.kind == Verdict::Kind::NoFault) {
    act.description = "none";
    return act;
  }
  if (ckpt == nullptr) {
    act.description = "deferred: no checkpoint";
    return act;
  }
  if (v.kind == Verdict::Kind::AgentFault) {
    agents[static_cast<std::size_t>(v.agent)].load_codes(ckpt->params.codes);
    act.description = "agent_restored_round_" + std::to_string(ckpt->round);
  } else {
    server_params = ckpt->params.codes;
    for (auto& a : agents) a.load_codes(ckpt->params.codes);
    act.description = "server_reverted_round_" + std::to_string(ckpt->round);
  }
  act.applied = true;
  return act;
}

RangeDetector RangeDetector::build(const policy::MLPPolicy& clean, double margin) {
  RangeDetector d;
  d.layout_ = clean.layout();
  const auto deq = clean.dequantized();
  for (const auto& l : d.layout_) {
    const auto first = deq.begin() + static_cast<std::ptrdiff_t>(l.offset);
    const auto last = first + static_cast<std::ptrdiff_t>(l.param_count());
    const auto [lo, hi] = std::minmax_element(first, last);
    d.bounds_.push_back({*lo - margin * std::abs(*lo), *hi + margin * std::abs(*hi)});
  }
  return d;
}

std::vector<bool> RangeDetector::screen(const policy::MLPPolicy& p) const {
  if (p.layout().size() != layout_.size()) throw std::invalid_argument("screen: architecture mismatch");
  const auto deq = p.dequantized();
  std::vector<bool> flags(deq.size(), false);
  for (std::size_t li = 0; li < layout_.size(); ++li) {
    const auto& l = layout_[li];
    const auto& b = bounds_[li];
    for (std::size_t i = l.offset; i < l.offset + l.param_count(); ++i) flags[i] = deq[i] < b.lower || deq[i] > b.upper;
  }
  return flags;
}

std::vector<double> masked_params(const policy::MLPPolicy& p, const std::vector<bool>& flags) {
  std::vector<double> params(p.dequantized().begin(), p.dequantized().end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (flags[i]) params[i] = 0.0;
  }
  return params;
}

policy::ActionValues guarded_forward(const policy::MLPPolicy& p, const gridworld::Observation& obs,
                                     const RangeDetector& detector) {
  const auto flags = detector.screen(p);
  if (std::none_of(flags.begin(), flags.end(), [](bool f) { return f; })) return p.forward(obs);
  const auto params = masked_params(p, flags);
  return policy::forward_params(p.layout(), params, obs);
}

}  // namespace frlfi::guard
