#include "frlfi/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

namespace frlfi::harness {

using faultinj::FaultLocation;
using faultinj::FaultPlan;
using faultinj::FaultSpec;
using faultinj::LocationKind;
using gridworld::Outcome;
using policy::MLPPolicy;

std::string_view to_string(Phase p) { return p == Phase::Training ? "training" : "inference"; }

Phase phase_from_string(std::string_view s) {
  if (s == "training") return Phase::Training;
  if (s == "inference") return Phase::Inference;
  throw std::invalid_argument("unknown phase '" + std::string(s) + "'");
}

std::string_view to_string(InferenceKind k) {
  switch (k) {
    case InferenceKind::Clean: return "clean";
    case InferenceKind::MultiTrans1: return "multi-trans-1";
    case InferenceKind::MultiTransM: return "multi-trans-m";
  }
  return "?";
}

InferenceKind inference_kind_from_string(std::string_view s) {
  if (s == "clean") return InferenceKind::Clean;
  if (s == "multi-trans-1") return InferenceKind::MultiTrans1;
  if (s == "multi-trans-m") return InferenceKind::MultiTransM;
  throw std::invalid_argument("unknown inference kind '" + std::string(s) + "'");
}

void ExperimentSpec::validate() const {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  if (bers.empty()) throw std::invalid_argument("empty axis: bers");
  if (modes.empty()) throw std::invalid_argument("empty axis: modes");
  for (double b : bers) {
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("BER outside [0, 1]");
  }
  if (!(target_sr > 0.0 && target_sr <= 1.0)) throw std::invalid_argument("target_sr outside (0, 1]");
  if (recovery_budget < 0) throw std::invalid_argument("recovery_budget must be >= 0");
  detector.validate();
  train.validate();
  if (phase == Phase::Inference) {
    if (inference_kinds.empty()) throw std::invalid_argument("empty axis: inference_kinds");
    if (guard.empty()) throw std::invalid_argument("empty axis: guard");
    return;
  }
  if (fault_episodes.empty()) throw std::invalid_argument("empty axis: fault_episodes");
  if (locations.empty()) throw std::invalid_argument("empty axis: locations");
  if (formats.empty()) throw std::invalid_argument("empty axis: formats");
  if (agent_counts.empty()) throw std::invalid_argument("empty axis: agent_counts");
  if (interval_multipliers.empty()) throw std::invalid_argument("empty axis: interval_multipliers");
  for (int e : fault_episodes) {
    if (e < 1 || e > train.episodes) {
      throw std::invalid_argument("fault episode " + std::to_string(e) + " outside [1, " +
                                  std::to_string(train.episodes) + "]");
    }
  }
  for (int m : interval_multipliers) {
    if (m < 1) throw std::invalid_argument("interval multiplier must be >= 1");
  }
  for (const auto& f : formats) f.validate();
  for (int n : agent_counts) {
    if (n < 1) throw std::invalid_argument("agent count must be >= 1");
    for (const auto& loc : locations) {
      if (!loc.is_agent_side() && n < 2) {
        throw std::invalid_argument("cell " + loc.to_string() + " with 1 agent has no server");
      }
      if (loc.kind == LocationKind::AgentUpload && n < 2) {
        throw std::invalid_argument("AgentUpload cells need at least 2 agents");
      }
      if (loc.is_agent_side() && loc.agent != kAnyAgent && (loc.agent < 0 || loc.agent >= n)) {
        throw std::invalid_argument("cell " + loc.to_string() + " references a nonexistent agent");
      }
    }
  }
}

std::vector<Cell> expand_cells(const ExperimentSpec& spec) {
  std::vector<Cell> cells;
  if (spec.phase == Phase::Inference) {
    for (auto kind : spec.inference_kinds) {
      for (bool g : spec.guard) {
        for (auto mode : spec.modes) {
          for (double ber : spec.bers) {
            Cell c;
            c.ber = ber;
            c.location = FaultLocation::agent_weights(kAnyAgent);
            c.mode = mode;
            c.fmt = spec.train.fmt;
            c.n_agents = spec.train.n_agents;
            c.kind = kind;
            c.guard = g;
            cells.push_back(c);
          }
        }
      }
    }
    return cells;
  }
  for (const auto& fmt : spec.formats) {
    for (int n : spec.agent_counts) {
      for (int m : spec.interval_multipliers) {
        for (const auto& loc : spec.locations) {
          for (auto mode : spec.modes) {
            for (int e : spec.fault_episodes) {
              for (double ber : spec.bers) {
                Cell c;
                c.fault_episode = e;
                c.ber = ber;
                c.location = loc;
                c.mode = mode;
                c.fmt = fmt;
                c.n_agents = n;
                c.interval_multiplier = m;
                cells.push_back(c);
              }
            }
          }
        }
      }
    }
  }
  return cells;
}

bool ResultRow::same_result(const ResultRow& o) const {
  return phase == o.phase && cell == o.cell && repetitions == o.repetitions && mean_sr == o.mean_sr &&
         sr_std == o.sr_std && ci95 == o.ci95 && mean_flips == o.mean_flips;
}

double binomial_ci95(double p, int trials) {
  if (trials < 1) throw std::invalid_argument("binomial_ci95: trials must be >= 1");
  p = std::clamp(p, 0.0, 1.0);
  return 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

Summary summarize(std::span<const double> srs) {
  if (srs.empty()) throw std::invalid_argument("summarize: no samples");
  Summary s;
  double sum = 0.0;
  for (double v : srs) sum += v;
  s.mean = sum / static_cast<double>(srs.size());
  if (srs.size() > 1) {
    double ss = 0.0;
    for (double v : srs) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(srs.size() - 1));
  }
  s.ci95 = binomial_ci95(s.mean, static_cast<int>(srs.size()));
  return s;
}

bool ci_separated(const ResultRow& a, const ResultRow& b) { return std::abs(a.mean_sr - b.mean_sr) > a.ci95 + b.ci95; }

int worker_threads() {
  if (const char* env = std::getenv("FRLFI_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(std::min<long>(v, 1024));
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::uint64_t repetition_seed(const ExperimentSpec& spec, int r) { return spec.seed_base + static_cast<std::uint64_t>(r); }

namespace {

std::uint64_t fault_seed(const ExperimentSpec& spec, std::size_t cell, int r, std::uint64_t extra = 0) {
  return derive_seed(spec.seed_base, Stream::Repetition, {cell, static_cast<std::uint64_t>(r), extra});
}

FaultLocation resolve(FaultLocation loc, int r, int n) {
  if (loc.is_agent_side() && loc.agent == kAnyAgent) loc.agent = r % n;
  return loc;
}

std::vector<gridworld::GridMap> maps_for(int n) {
  const auto& all = gridworld::default_maps();
  if (n > static_cast<int>(all.size())) {
    throw std::invalid_argument("only " + std::to_string(all.size()) + " built-in maps for " + std::to_string(n) +
                                " agents");
  }
  return {all.begin(), all.begin() + n};
}

fedtrain::TrainConfig cell_config(const ExperimentSpec& spec, const Cell& c, std::uint64_t seed) {
  auto cfg = spec.train;
  cfg.fmt = c.fmt;
  cfg.n_agents = c.n_agents;
  cfg.interval_multiplier = c.interval_multiplier;
  cfg.seed = seed;
  cfg.record_log = false;
  return cfg;
}

ResultRow make_row(Phase phase, const Cell& cell, std::span<const double> srs, std::span<const double> flips,
                   double runtime) {
  ResultRow row;
  row.phase = phase;
  row.cell = cell;
  row.repetitions = static_cast<int>(srs.size());
  const auto s = summarize(srs);
  row.mean_sr = s.mean;
  row.sr_std = s.std;
  row.ci95 = s.ci95;
  row.mean_flips = std::accumulate(flips.begin(), flips.end(), 0.0) / static_cast<double>(flips.size());
  row.runtime_s = runtime;
  return row;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<ResultRow> run_training_sweep(const ExperimentSpec& spec, int threads) {
  if (spec.phase != Phase::Training) throw std::invalid_argument("run_training_sweep: spec phase is not training");
  spec.validate();
  const auto cells = expand_cells(spec);
  const int R = spec.repetitions;

  // Cells sharing (format, agents, multiplier) share the clean prefix of each repetition.
  using GroupKey = std::tuple<int, int, int, int>;
  std::map<GroupKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    groups[{c.fmt.int_bits, c.fmt.frac_bits, c.n_agents, c.interval_multiplier}].push_back(i);
  }
  std::vector<std::vector<std::size_t>> group_list;
  for (auto& [key, members] : groups) group_list.push_back(std::move(members));

  std::vector<double> sr(cells.size() * static_cast<std::size_t>(R));
  std::vector<double> flips(sr.size());
  std::vector<double> runtime(sr.size());
  const auto at = [R](std::size_t cell, int r) { return cell * static_cast<std::size_t>(R) + static_cast<std::size_t>(r); };

  parallel_for(
      group_list.size() * static_cast<std::size_t>(R),
      [&](std::size_t task) {
        const auto& members = group_list[task / static_cast<std::size_t>(R)];
        const int r = static_cast<int>(task % static_cast<std::size_t>(R));
        const Cell& first = cells[members.front()];
        const auto cfg = cell_config(spec, first, repetition_seed(spec, r));
        fedtrain::FederatedTrainer clean(cfg, maps_for(cfg.n_agents));

        std::vector<std::size_t> order = members;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return cells[a].fault_episode < cells[b].fault_episode; });
        for (std::size_t ci : order) {
          const Cell& c = cells[ci];
          const auto t0 = std::chrono::steady_clock::now();
          clean.run_until(c.fault_episode - 1);
          FaultSpec fs;
          fs.location = resolve(c.location, r, c.n_agents);
          fs.ber = c.ber;
          fs.mode = c.mode;
          fs.episode = c.fault_episode;
          FaultPlan plan({fs}, fault_seed(spec, ci, r));
          auto run = clean.fork(&plan);
          run->run_until(cfg.episodes);
          sr[at(ci, r)] = fedtrain::greedy_success_rate(run->policies(), run->maps(), cfg.max_steps);
          flips[at(ci, r)] = static_cast<double>(plan.log().size());
          runtime[at(ci, r)] = seconds_since(t0);
        }
      },
      threads);

  std::vector<ResultRow> rows;
  rows.reserve(cells.size());
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const std::span<const double> s(sr.data() + at(ci, 0), static_cast<std::size_t>(R));
    const std::span<const double> f(flips.data() + at(ci, 0), static_cast<std::size_t>(R));
    const double t = std::accumulate(runtime.begin() + static_cast<std::ptrdiff_t>(at(ci, 0)),
                                     runtime.begin() + static_cast<std::ptrdiff_t>(at(ci, R)), 0.0);
    rows.push_back(make_row(Phase::Training, cells[ci], s, f, t));
  }
  return rows;
}

double PolicyBundle::success_rate() const { return fedtrain::greedy_success_rate(policies, maps, max_steps); }

PolicyBundle train_bundle(const ExperimentSpec& spec) {
  auto cfg = spec.train;
  cfg.seed = spec.seed_base;
  cfg.record_log = false;
  fedtrain::FederatedTrainer trainer(cfg, maps_for(cfg.n_agents));
  trainer.run();
  return {trainer.policies(), trainer.maps(), cfg.max_steps};
}

void save_bundle(const PolicyBundle& bundle, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  const auto n = static_cast<std::uint32_t>(bundle.policies.size());
  for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(n >> (8 * b)));
  for (const auto& p : bundle.policies) {
    const auto blob = policy::encode_params({p.format(), p.layer_dims(), {p.codes().begin(), p.codes().end()}});
    bytes.insert(bytes.end(), blob.begin(), blob.end());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write bundle " + path.string());
}

PolicyBundle load_bundle(const std::filesystem::path& path, std::vector<gridworld::GridMap> maps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open bundle " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw std::runtime_error("truncated bundle " + path.string());
  std::uint32_t n = 0;
  for (int b = 0; b < 4; ++b) n |= static_cast<std::uint32_t>(bytes[static_cast<std::size_t>(b)]) << (8 * b);
  PolicyBundle bundle;
  std::size_t pos = 4;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::size_t used = 0;
    const auto blob = policy::decode_params(std::span<const std::uint8_t>(bytes).subspan(pos), &used);
    pos += used;
    MLPPolicy p(blob.layer_dims, blob.fmt);
    p.load_codes(blob.codes);
    p.sync();
    bundle.policies.push_back(std::move(p));
  }
  if (pos != bytes.size()) throw std::runtime_error("trailing bytes in bundle " + path.string());
  if (maps.size() < bundle.policies.size()) throw std::invalid_argument("bundle has more agents than maps");
  maps.resize(bundle.policies.size());
  bundle.maps = std::move(maps);
  return bundle;
}

Outcome rollout_with(const MLPPolicy& p, const gridworld::GridMap& map, int max_steps,
                     const std::function<const std::vector<double>*(int)>& params_at, const std::vector<double>* base,
                     int* steps) {
  const std::span<const double> clean = base != nullptr ? std::span<const double>(*base) : p.dequantized();
  gridworld::Position pos = map.source();
  for (int t = 0; t < max_steps; ++t) {
    const std::vector<double>* alt = params_at ? params_at(t) : nullptr;
    const auto values = policy::forward_params(p.layout(), alt != nullptr ? std::span<const double>(*alt) : clean,
                                               gridworld::observe(map, pos));
    const auto sr = gridworld::step(map, pos, policy::greedy_action(values), map.goal_distance(pos));
    pos = sr.next;
    if (sr.terminal) {
      if (steps != nullptr) *steps = t + 1;
      return sr.outcome;
    }
  }
  if (steps != nullptr) *steps = max_steps;
  return Outcome::Timeout;
}

std::vector<ResultRow> run_inference_sweep(const ExperimentSpec& spec, const PolicyBundle& bundle, int threads) {
  if (spec.phase != Phase::Inference) throw std::invalid_argument("run_inference_sweep: spec phase is not inference");
  spec.validate();
  if (bundle.policies.empty() || bundle.maps.size() != bundle.policies.size()) {
    throw std::invalid_argument("run_inference_sweep: bundle needs one map per policy");
  }
  const double clean_sr = bundle.success_rate();
  if (clean_sr < spec.target_sr) {
    throw std::invalid_argument("run_inference_sweep: policy bundle not converged (SR " + std::to_string(clean_sr) +
                                " < " + std::to_string(spec.target_sr) + ")");
  }
  auto cells = expand_cells(spec);
  for (auto& c : cells) {
    c.fmt = bundle.policies.front().format();
    c.n_agents = static_cast<int>(bundle.policies.size());
  }
  const int R = spec.repetitions;
  const std::size_t n = bundle.policies.size();

  std::vector<guard::RangeDetector> detectors;
  std::vector<int> clean_steps(n);
  for (std::size_t i = 0; i < n; ++i) {
    detectors.push_back(guard::RangeDetector::build(bundle.policies[i], spec.range_margin));
    fedtrain::greedy_rollout(bundle.policies[i], bundle.maps[i], bundle.max_steps, &clean_steps[i]);
  }

  std::vector<double> sr(cells.size() * static_cast<std::size_t>(R));
  std::vector<double> flips(sr.size());
  std::vector<double> runtime(sr.size());

  parallel_for(
      sr.size(),
      [&](std::size_t task) {
        const std::size_t ci = task / static_cast<std::size_t>(R);
        const int r = static_cast<int>(task % static_cast<std::size_t>(R));
        const Cell& c = cells[ci];
        const auto t0 = std::chrono::steady_clock::now();
        int solved = 0;
        std::size_t flipped = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const MLPPolicy& clean = bundle.policies[i];
          Rng rng(fault_seed(spec, ci, r, i));
          // Corrupted parameter view; screened when the guard is enabled.
          const auto corrupted = [&](std::vector<double>& out) {
            MLPPolicy copy = clean;
            copy.mutate_codes([&](std::span<fxp::Code> codes) {
              flipped += faultinj::inject(codes, copy.format(), c.ber, c.mode, rng).size();
            });
            out = c.guard ? guard::masked_params(copy, detectors[i].screen(copy))
                          : std::vector<double>(copy.dequantized().begin(), copy.dequantized().end());
          };
          Outcome o = Outcome::Ongoing;
          switch (c.kind) {
            case InferenceKind::Clean: {
              std::vector<double> params(clean.dequantized().begin(), clean.dequantized().end());
              if (c.guard) params = guard::masked_params(clean, detectors[i].screen(clean));
              o = rollout_with(clean, bundle.maps[i], bundle.max_steps, {}, &params);
              break;
            }
            case InferenceKind::MultiTransM: {
              std::vector<double> params;
              corrupted(params);
              o = rollout_with(clean, bundle.maps[i], bundle.max_steps, {}, &params);
              break;
            }
            case InferenceKind::MultiTrans1: {
              const int at_step = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(clean_steps[i])));
              std::vector<double> params;
              corrupted(params);
              o = rollout_with(clean, bundle.maps[i], bundle.max_steps,
                               [&](int t) { return t == at_step ? &params : nullptr; });
              break;
            }
          }
          if (o == Outcome::ReachedGoal) ++solved;
        }
        sr[task] = static_cast<double>(solved) / static_cast<double>(n);
        flips[task] = static_cast<double>(flipped);
        runtime[task] = seconds_since(t0);
      },
      threads);

  std::vector<ResultRow> rows;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    const std::size_t b = ci * static_cast<std::size_t>(R);
    const std::span<const double> s(sr.data() + b, static_cast<std::size_t>(R));
    const std::span<const double> f(flips.data() + b, static_cast<std::size_t>(R));
    const double t = std::accumulate(runtime.begin() + static_cast<std::ptrdiff_t>(b),
                                     runtime.begin() + static_cast<std::ptrdiff_t>(b + static_cast<std::size_t>(R)), 0.0);
    rows.push_back(make_row(Phase::Inference, cells[ci], s, f, t));
  }
  return rows;
}

std::vector<ConvergenceRow> run_convergence_study(const ExperimentSpec& spec, int threads) {
  spec.validate();
  if (spec.fault_episodes.empty() || spec.locations.empty()) {
    throw std::invalid_argument("convergence study needs a fault episode and a location");
  }
  const int fe = spec.fault_episodes.front();
  const FaultLocation location = spec.locations.front();
  const int R = spec.repetitions;
  const std::size_t nb = spec.bers.size();
  const int budget = spec.recovery_budget > 0 ? spec.recovery_budget : std::max(1, 2 * (spec.train.episodes - fe));
  std::vector<ConvergenceRow> rows(nb * static_cast<std::size_t>(R));

  parallel_for(
      static_cast<std::size_t>(R),
      [&](std::size_t rr) {
        const int r = static_cast<int>(rr);
        auto cfg = spec.train;
        cfg.seed = repetition_seed(spec, r);
        cfg.record_log = false;
        fedtrain::FederatedTrainer clean(cfg, maps_for(cfg.n_agents));
        clean.run_until(fe - 1);
        for (std::size_t bi = 0; bi < nb; ++bi) {
          FaultSpec fs;
          fs.location = resolve(location, r, cfg.n_agents);
          fs.ber = spec.bers[bi];
          fs.mode = spec.modes.front();
          fs.episode = fe;
          FaultPlan plan({fs}, fault_seed(spec, bi, r));
          auto run = clean.fork(&plan);
          ConvergenceRow row;
          row.ber = spec.bers[bi];
          row.repetition = r;
          row.seed = cfg.seed;
          row.fault_episode = fe;
          row.censored = true;
          row.episodes_to_recover = budget;
          for (int e = fe; e <= fe + budget; ++e) {
            run->step();
            if (fedtrain::greedy_success_rate(run->policies(), run->maps(), cfg.max_steps) >= spec.target_sr) {
              row.episodes_to_recover = e - fe;
              row.censored = false;
              break;
            }
          }
          row.flips = static_cast<int>(plan.log().size());
          rows[bi * static_cast<std::size_t>(R) + rr] = row;
        }
      },
      threads);
  return rows;
}

std::vector<MitigationRow> run_training_mitigation(const ExperimentSpec& spec, int threads) {
  spec.validate();
  if (spec.fault_episodes.empty() || spec.locations.empty()) {
    throw std::invalid_argument("mitigation needs a fault episode and a location");
  }
  const int R = spec.repetitions;
  // Per repetition: faulted/unguarded, faulted/guarded, clean/guarded.
  std::vector<MitigationRow> rows(static_cast<std::size_t>(R) * 3);

  parallel_for(
      rows.size(),
      [&](std::size_t task) {
        const int r = static_cast<int>(task / 3);
        const int variant = static_cast<int>(task % 3);
        auto cfg = spec.train;
        cfg.seed = repetition_seed(spec, r);
        cfg.record_log = false;

        MitigationRow row;
        row.repetition = r;
        row.seed = cfg.seed;
        row.faulted = variant != 2;
        row.guarded = variant != 0;

        std::vector<FaultSpec> specs;
        if (row.faulted) {
          FaultSpec fs;
          fs.location = resolve(spec.locations.front(), r, cfg.n_agents);
          fs.ber = spec.bers.front();
          fs.mode = spec.modes.front();
          fs.episode = spec.fault_episodes.front();
          specs.push_back(fs);
        }
        FaultPlan plan(specs, fault_seed(spec, 0, r));
        fedtrain::GuardOptions opts{spec.detector, {}};
        fedtrain::FederatedTrainer trainer(cfg, maps_for(cfg.n_agents), &plan, row.guarded ? &opts : nullptr);
        trainer.run();
        row.final_sr = fedtrain::greedy_success_rate(trainer.policies(), trainer.maps(), cfg.max_steps);
        for (const auto& ev : trainer.guard_events()) {
          if (ev.verdict.kind == guard::Verdict::Kind::NoFault) continue;
          ++row.verdicts;
          if (ev.action.rfind("deferred", 0) != 0) ++row.recoveries;
        }
        row.flips = static_cast<int>(plan.log().size());
        rows[task] = row;
      },
      threads);
  return rows;
}

OverheadResult measure_guard_overhead(const ExperimentSpec& spec, int repeats,
                                      const std::filesystem::path& checkpoint_dir) {
  if (repeats < 1) throw std::invalid_argument("measure_guard_overhead: repeats must be >= 1");
  auto cfg = spec.train;
  cfg.seed = spec.seed_base;
  cfg.record_log = false;
  const auto maps = maps_for(cfg.n_agents);
  fedtrain::GuardOptions opts{spec.detector, checkpoint_dir};
  OverheadResult res{1e300, 1e300};
  for (int i = 0; i < repeats; ++i) {
    // Alternate the order to spread slow phases of the machine over both arms.
    for (int arm = 0; arm < 2; ++arm) {
      const bool guarded = (arm + i) % 2 == 1;
      const auto t0 = std::chrono::steady_clock::now();
      {
        fedtrain::FederatedTrainer trainer(cfg, maps, nullptr, guarded ? &opts : nullptr);
        trainer.run();
      }
      const double t = seconds_since(t0);
      double& slot = guarded ? res.guarded_s : res.plain_s;
      slot = std::min(slot, t);
    }
  }
  return res;
}

double consensus_spread(const ExperimentSpec& spec, int n_agents, std::uint64_t seed) {
  auto cfg = spec.train;
  cfg.n_agents = n_agents;
  cfg.seed = seed;
  cfg.record_log = false;
  fedtrain::FederatedTrainer trainer(cfg, maps_for(n_agents));
  trainer.run();
  return policy::consensus_std(trainer.consensus());
}

}  // namespace frlfi::harness
