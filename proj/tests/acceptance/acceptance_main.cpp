// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: frlfi_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "frlfi/fedtrain.hpp"
#include "frlfi/harness.hpp"
#include "frlfi/report.hpp"

using namespace frlfi;
using harness::ExperimentSpec;
using harness::ResultRow;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

constexpr int kSeeds = 5;
constexpr int kFullEpisodes = 3000;
constexpr int kFaultEpisode = 900;
constexpr int kSweepEpisodes = 1000;
constexpr int kReps = 100;

// Fault-free runs shared by several criteria.
struct CleanRun {
  int first_converged = -1;  // first episode with greedy SR >= 0.96, -1 if never
  double seconds = 0.0;
  double spread = 0.0;
  std::array<std::size_t, 2> bits{0, 0};  // zero / one bits of the consensus policy
};

std::map<std::pair<int, int>, CleanRun> clean_cache;

const CleanRun& clean_run(int n, int seed) {
  auto it = clean_cache.find({n, seed});
  if (it != clean_cache.end()) return it->second;
  fedtrain::TrainConfig cfg;
  cfg.n_agents = n;
  cfg.episodes = kFullEpisodes;
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.record_log = false;
  const auto& all = gridworld::default_maps();
  std::vector<gridworld::GridMap> maps(all.begin(), all.begin() + n);
  CleanRun run;
  const auto t0 = std::chrono::steady_clock::now();
  fedtrain::FederatedTrainer trainer(cfg, maps);
  for (int e = 1; e <= cfg.episodes; ++e) {
    trainer.step();
    if (run.first_converged < 0 &&
        fedtrain::greedy_success_rate(trainer.policies(), trainer.maps(), cfg.max_steps) >= 0.96) {
      run.first_converged = e;
    }
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto consensus = trainer.consensus();
  run.spread = policy::consensus_std(consensus);
  const auto flat = consensus.flatten_params();
  const auto total = flat.size() * static_cast<std::size_t>(flat.fmt.total_bits());
  run.bits[0] = static_cast<std::size_t>(std::llround(fxp::zero_bit_fraction(flat) * static_cast<double>(total)));
  run.bits[1] = total - run.bits[0];
  return clean_cache.emplace(std::make_pair(n, seed), run).first->second;
}

ExperimentSpec sweep_spec() {
  ExperimentSpec s;
  s.phase = harness::Phase::Training;
  s.train.episodes = kSweepEpisodes;
  s.fault_episodes = {kFaultEpisode};
  s.bers = {1e-2};
  s.repetitions = kReps;
  s.seed_base = 1;
  return s;
}

// Training sweep at (900, 1e-2): both locations, all three flip modes.
const std::vector<ResultRow>& fault_sweep() {
  static std::vector<ResultRow> rows;
  if (rows.empty()) {
    auto s = sweep_spec();
    s.locations = {faultinj::FaultLocation::server_state(), faultinj::FaultLocation::agent_weights(harness::kAnyAgent)};
    s.modes = {faultinj::FlipMode::Both, faultinj::FlipMode::ZeroToOne, faultinj::FlipMode::OneToZero};
    rows = harness::run_training_sweep(s);
  }
  return rows;
}

const ResultRow& find_row(const std::vector<ResultRow>& rows, const std::function<bool(const harness::Cell&)>& pred) {
  for (const auto& r : rows) {
    if (pred(r.cell)) return r;
  }
  throw std::logic_error("row not found");
}

std::string row_text(const ResultRow& r) { return fmt("%.4f+-%.4f", r.mean_sr, r.ci95); }

const harness::PolicyBundle& bundle() {
  static std::optional<harness::PolicyBundle> b;
  if (!b) {
    ExperimentSpec s;
    s.train.episodes = kFullEpisodes;
    s.seed_base = 1;
    b = harness::train_bundle(s);
  }
  return *b;
}

ExperimentSpec inference_spec() {
  ExperimentSpec s;
  s.phase = harness::Phase::Inference;
  s.repetitions = kReps;
  s.seed_base = 1;
  return s;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  int reached = 0;
  double slowest = 0.0;
  std::ostringstream seeds;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const auto& run = clean_run(12, seed);
    if (run.first_converged > 0) ++reached;
    slowest = std::max(slowest, run.seconds);
    seeds << (seed > 1 ? "," : "") << run.first_converged;
  }
  const bool pass = reached >= 4 && slowest < 600.0;
  return {pass, fmt("%d/5 seeds reach SR>=0.96 within %d episodes (first episode per seed: %s); slowest run %.1fs",
                    reached, kFullEpisodes, seeds.str().c_str(), slowest)};
}

Outcome criterion2() {
  const auto& rows = fault_sweep();
  const auto& server = find_row(rows, [](const harness::Cell& c) {
    return c.location.kind == faultinj::LocationKind::ServerState && c.mode == faultinj::FlipMode::Both;
  });
  const auto& agent = find_row(rows, [](const harness::Cell& c) {
    return c.location.kind == faultinj::LocationKind::AgentWeights && c.mode == faultinj::FlipMode::Both;
  });
  const bool pass = server.mean_sr <= agent.mean_sr && harness::ci_separated(server, agent);
  return {pass, fmt("ServerState SR %s vs AgentWeights SR %s (R=%d)", row_text(server).c_str(),
                    row_text(agent).c_str(), server.repetitions)};
}

Outcome criterion3() {
  const auto& rows = fault_sweep();
  const auto pick = [&](faultinj::LocationKind k, faultinj::FlipMode m) -> const ResultRow& {
    return find_row(rows, [&](const harness::Cell& c) { return c.location.kind == k && c.mode == m; });
  };
  const auto& z2o = pick(faultinj::LocationKind::ServerState, faultinj::FlipMode::ZeroToOne);
  const auto& o2z = pick(faultinj::LocationKind::ServerState, faultinj::FlipMode::OneToZero);
  const auto& az2o = pick(faultinj::LocationKind::AgentWeights, faultinj::FlipMode::ZeroToOne);
  const auto& ao2z = pick(faultinj::LocationKind::AgentWeights, faultinj::FlipMode::OneToZero);
  std::size_t zeros = 0, total = 0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const auto& run = clean_run(12, seed);
    zeros += run.bits[0];
    total += run.bits[0] + run.bits[1];
  }
  const double zero_frac = static_cast<double>(zeros) / static_cast<double>(total);
  const bool pass = z2o.mean_sr <= o2z.mean_sr && harness::ci_separated(z2o, o2z) && zero_frac > 0.5;
  return {pass, fmt("ServerState 0->1 SR %s vs 1->0 SR %s; (AgentWeights: %s vs %s); zero bits %.4f over %d "
                    "converged policies",
                    row_text(z2o).c_str(), row_text(o2z).c_str(), row_text(az2o).c_str(), row_text(ao2z).c_str(),
                    zero_frac, kSeeds)};
}

Outcome criterion4() {
  const auto& rows = fault_sweep();
  const auto& multi = find_row(rows, [](const harness::Cell& c) {
    return c.location.kind == faultinj::LocationKind::ServerState && c.mode == faultinj::FlipMode::Both;
  });
  auto s = sweep_spec();
  s.agent_counts = {1};
  s.locations = {faultinj::FaultLocation::agent_weights(0)};
  const auto single_rows = harness::run_training_sweep(s);
  const auto& single = single_rows.front();

  const int counts[] = {1, 4, 8, 12};
  int increasing = 0;
  std::ostringstream spreads;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    bool inc = true;
    double prev = -1.0;
    spreads << (seed > 1 ? " | " : "");
    for (int n : counts) {
      const double v = clean_run(n, seed).spread;
      spreads << fmt("%.3f ", v);
      if (!(v > prev)) inc = false;
      prev = v;
    }
    if (inc) ++increasing;
  }
  const bool sr_ok = multi.mean_sr > single.mean_sr && harness::ci_separated(multi, single);
  const bool pass = sr_ok && increasing >= 4;
  return {pass, fmt("n=12 ServerState SR %s vs n=1 weight-fault SR %s; consensus std strictly increasing over "
                    "n=1,4,8,12 on %d/5 seeds [%s]",
                    row_text(multi).c_str(), row_text(single).c_str(), increasing, spreads.str().c_str())};
}

Outcome criterion5() {
  auto s = inference_spec();
  s.bers = {1e-5, 1e-4, 1e-3, 1e-2};
  s.inference_kinds = {harness::InferenceKind::Clean, harness::InferenceKind::MultiTrans1,
                       harness::InferenceKind::MultiTransM};
  s.guard = {false};
  const auto rows = harness::run_inference_sweep(s, bundle());
  const auto get = [&](harness::InferenceKind k, double ber) -> const ResultRow& {
    return find_row(rows, [&](const harness::Cell& c) { return c.kind == k && c.ber == ber; });
  };
  bool mt1_ok = true;
  std::ostringstream mt1;
  for (double ber : s.bers) {
    const auto& clean = get(harness::InferenceKind::Clean, ber);
    const auto& r = get(harness::InferenceKind::MultiTrans1, ber);
    if (harness::ci_separated(r, clean)) mt1_ok = false;
    mt1 << fmt("%g:%s ", ber, row_text(r).c_str());
  }
  const auto& clean = get(harness::InferenceKind::Clean, 1e-2);
  const auto& mtm = get(harness::InferenceKind::MultiTransM, 1e-2);
  const bool mtm_ok = mtm.mean_sr < clean.mean_sr && harness::ci_separated(mtm, clean);
  return {mt1_ok && mtm_ok, fmt("fault-free SR %s; Multi-Trans-1 %s; Multi-Trans-M at 1e-2 %s",
                                row_text(clean).c_str(), mt1.str().c_str(), row_text(mtm).c_str())};
}

Outcome criterion6() {
  auto s = sweep_spec();
  s.train.episodes = kFullEpisodes;
  s.bers = {1e-4, 1e-3, 1e-2};
  s.locations = {faultinj::FaultLocation::server_state()};
  s.repetitions = kSeeds;
  const auto rows = harness::run_convergence_study(s);
  std::map<int, std::map<double, harness::ConvergenceRow>> by_seed;
  for (const auto& r : rows) by_seed[r.repetition][r.ber] = r;
  int recovered = 0, monotone = 0;
  std::ostringstream detail;
  for (const auto& [rep, m] : by_seed) {
    const auto& hi = m.at(1e-2);
    if (!hi.censored) ++recovered;
    const auto eff = [](const harness::ConvergenceRow& r) { return r.censored ? 1 << 30 : r.episodes_to_recover; };
    if (eff(m.at(1e-4)) <= eff(m.at(1e-3)) && eff(m.at(1e-3)) <= eff(m.at(1e-2))) ++monotone;
    detail << (rep > 0 ? " | " : "");
    for (const auto& [ber, r] : m) detail << (r.censored ? std::string(">") : "") << r.episodes_to_recover << ' ';
  }
  const int n = static_cast<int>(by_seed.size());
  const bool pass = recovered * 2 > n && monotone * 2 > n;
  return {pass, fmt("BER 1e-2 recovered to SR>=0.96 on %d/%d seeds; episodes-to-recover non-decreasing over "
                    "1e-4,1e-3,1e-2 on %d/%d seeds [%s]",
                    recovered, n, monotone, n, detail.str().c_str())};
}

Outcome criterion7() {
  auto s = sweep_spec();
  s.train.episodes = kFullEpisodes;
  s.locations = {faultinj::FaultLocation::server_state()};
  s.repetitions = kSeeds;
  s.detector.drop_percent = 25;
  s.detector.consecutive = 50;
  s.detector.checkpoint_every = 5;
  const auto rows = harness::run_training_mitigation(s);
  double guarded_sr = 0, plain_sr = 0;
  int guarded_n = 0, plain_n = 0, detections = 0, false_pos = 0;
  for (const auto& r : rows) {
    if (r.faulted && r.guarded) {
      guarded_sr += r.final_sr;
      ++guarded_n;
      detections += r.verdicts;
    } else if (r.faulted) {
      plain_sr += r.final_sr;
      ++plain_n;
    } else {
      false_pos += r.verdicts;
    }
  }
  // 20 fault-free guarded runs in total.
  const auto& all = gridworld::default_maps();
  std::vector<gridworld::GridMap> maps(all.begin(), all.begin() + 12);
  fedtrain::GuardOptions opts{s.detector, {}};
  for (int seed = kSeeds + 1; seed <= 20; ++seed) {
    auto cfg = s.train;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.record_log = false;
    fedtrain::FederatedTrainer trainer(cfg, maps, nullptr, &opts);
    trainer.run();
    for (const auto& ev : trainer.guard_events()) false_pos += ev.verdict.kind != guard::Verdict::Kind::NoFault;
  }
  guarded_sr /= guarded_n;
  plain_sr /= plain_n;
  const bool pass = guarded_sr >= 0.96 && false_pos == 0;
  return {pass, fmt("guarded final SR %.4f (unguarded %.4f) over %d seeds, %d verdicts on faulted runs; "
                    "false positives on 20 clean runs: %d",
                    guarded_sr, plain_sr, guarded_n, detections, false_pos)};
}

Outcome criterion8() {
  auto s = inference_spec();
  s.bers = {1e-3, 1e-2};
  s.inference_kinds = {harness::InferenceKind::MultiTransM};
  s.guard = {false, true};
  const auto& b = bundle();
  const auto rows = harness::run_inference_sweep(s, b);
  bool ratio_ok = true;
  std::ostringstream detail;
  for (double ber : s.bers) {
    const auto& off = find_row(rows, [&](const harness::Cell& c) { return c.ber == ber && !c.guard; });
    const auto& on = find_row(rows, [&](const harness::Cell& c) { return c.ber == ber && c.guard; });
    const double ratio = off.mean_sr > 0 ? on.mean_sr / off.mean_sr : (on.mean_sr > 0 ? INFINITY : 0.0);
    if (!(ratio >= 2.0)) ratio_ok = false;
    detail << fmt("BER %g: guarded %s vs unguarded %s (x%.2f); ", ber, row_text(on).c_str(), row_text(off).c_str(),
                  ratio);
  }
  std::size_t flags = 0;
  for (const auto& p : b.policies) {
    const auto mask = guard::RangeDetector::build(p).screen(p);
    flags += static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  }
  detail << fmt("clean screening flags: %zu", flags);
  return {ratio_ok && flags == 0, detail.str()};
}

Outcome criterion9() {
  std::ostringstream detail;
  // (a) exhaustive flip deltas on every 8-bit format.
  int bad_flips = 0;
  for (int ib = 0; ib <= 7; ++ib) {
    const fxp::QFormat f{ib, 7 - ib};
    for (int code = f.min_code(); code <= f.max_code(); ++code) {
      for (int b = 0; b < 8; ++b) {
        const double d = std::abs(fxp::dequantize(fxp::flip_bit(code, b, f), f) - fxp::dequantize(code, f));
        const double want = b < 7 ? std::ldexp(1.0, b - f.frac_bits) : std::ldexp(1.0, f.int_bits);
        if (d != want) ++bad_flips;
      }
    }
  }
  detail << fmt("(a) flip-delta mismatches %d over 8 formats x 256 x 8; ", bad_flips);

  // (b) stored-weight gradient vs central differences on small random nets.
  double worst = 0.0;
  Rng rng(derive_seed(9, {2}));
  for (int net = 0; net < 20; ++net) {
    const int hidden = 3 + static_cast<int>(rng.uniform_int(14));
    auto p = policy::MLPPolicy::initialized({4, hidden, 4}, fxp::QFormat{10, 21}, rng);
    gridworld::Observation obs;
    for (auto& o : obs) o = static_cast<std::int8_t>(static_cast<int>(rng.uniform_int(3)) - 1);
    const int a = static_cast<int>(rng.uniform_int(4));
    std::vector<double> grad(p.param_count());
    p.gradient(obs, a, grad, policy::MLPPolicy::GradientAt::Stored);
    std::vector<double> params(p.dequantized().begin(), p.dequantized().end());
    double num = 0.0, den = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = params[i];
      params[i] = keep + h;
      const double up = policy::forward_params(p.layout(), params, obs)[static_cast<std::size_t>(a)];
      params[i] = keep - h;
      const double down = policy::forward_params(p.layout(), params, obs)[static_cast<std::size_t>(a)];
      params[i] = keep;
      const double fd = (up - down) / (2 * h);
      num += (grad[i] - fd) * (grad[i] - fd);
      den += fd * fd;
    }
    worst = std::max(worst, den > 0 ? std::sqrt(num / den) : std::sqrt(num));
  }
  detail << fmt("(b) worst relative gradient error %.2e; ", worst);

  // (c) alpha = 1/n aggregation vs plain mean.
  double worst_agg = 0.0;
  const auto f = fxp::kQ1_2_5;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(11));
    std::vector<std::vector<fxp::Code>> sets(static_cast<std::size_t>(n), std::vector<fxp::Code>(64));
    for (auto& s : sets) {
      for (auto& c : s) c = f.min_code() + static_cast<fxp::Code>(rng.uniform_int(256));
    }
    const auto out = fedtrain::aggregate(sets, f, 1.0 / n);
    for (std::size_t c = 0; c < 64; ++c) {
      double mean = 0.0;
      for (const auto& s : sets) mean += fxp::dequantize(s[c], f);
      mean /= n;
      for (const auto& o : out) worst_agg = std::max(worst_agg, std::abs(fxp::dequantize(o[c], f) - mean));
    }
  }
  detail << fmt("(c) worst |aggregate - mean| %.5f (half LSB %.5f); ", worst_agg, f.lsb() / 2);

  // (d) flip counts vs Binomial(5152, ber), chi-square goodness of fit.
  double min_p = 1.0;
  for (double ber : {1e-2, 1e-3}) {
    const int bits = 644 * 8;
    const int trials = 10000;
    std::vector<int> counts(bits + 1, 0);
    Rng frng(derive_seed(9, {4, static_cast<std::uint64_t>(ber * 1e6)}));
    std::vector<fxp::Code> codes(644, 0);
    for (int t = 0; t < trials; ++t) {
      auto copy = codes;
      ++counts[faultinj::inject(copy, f, ber, faultinj::FlipMode::Both, frng).size()];
    }
    // Pool adjacent counts until every bin expects at least 5 observations.
    std::vector<double> pmf(bits + 1);
    for (int k = 0; k <= bits; ++k) {
      pmf[static_cast<std::size_t>(k)] = std::exp(std::lgamma(bits + 1.0) - std::lgamma(k + 1.0) -
                                                  std::lgamma(bits - k + 1.0) + k * std::log(ber) +
                                                  (bits - k) * std::log1p(-ber));
    }
    double chi = 0.0, exp_acc = 0.0;
    int obs_acc = 0, bins = 0;
    for (int k = 0; k <= bits; ++k) {
      exp_acc += pmf[static_cast<std::size_t>(k)] * trials;
      obs_acc += counts[static_cast<std::size_t>(k)];
      double rest = 0.0;
      for (int j = k + 1; j <= std::min(bits, k + 200); ++j) rest += pmf[static_cast<std::size_t>(j)] * trials;
      if (exp_acc >= 5.0 && (rest >= 5.0 || k == bits)) {
        chi += (obs_acc - exp_acc) * (obs_acc - exp_acc) / exp_acc;
        ++bins;
        exp_acc = 0.0;
        obs_acc = 0;
      } else if (k == bits) {
        chi += (obs_acc - exp_acc) * (obs_acc - exp_acc) / std::max(exp_acc, 1e-12);
        ++bins;
      }
    }
    const boost::math::chi_squared dist(bins - 1);
    const double p = boost::math::cdf(boost::math::complement(dist, chi));
    min_p = std::min(min_p, p);
    detail << fmt("(d) BER %g chi2=%.1f dof=%d p=%.3f; ", ber, chi, bins - 1, p);
  }
  const bool pass = bad_flips == 0 && worst <= 1e-4 && worst_agg <= f.lsb() / 2 + 1e-12 && min_p > 0.01;
  return {pass, detail.str()};
}

Outcome criterion10() {
  std::ostringstream detail;
  auto s = sweep_spec();
  s.train.episodes = 300;
  s.fault_episodes = {100, 250};
  s.bers = {1e-3, 1e-2};
  s.modes = {faultinj::FlipMode::Both, faultinj::FlipMode::ZeroToOne};
  s.repetitions = 4;
  const auto csv = [](const std::vector<ResultRow>& rows) {
    std::ostringstream os;
    report::write_results_csv(os, rows);
    return os.str();
  };
  const auto one = csv(harness::run_training_sweep(s, 1));
  const auto four = csv(harness::run_training_sweep(s, 4));
  auto inf = inference_spec();
  inf.bers = {1e-3, 1e-2};
  inf.guard = {false, true};
  inf.repetitions = 20;
  const auto inf_one = csv(harness::run_inference_sweep(inf, bundle(), 1));
  const auto inf_four = csv(harness::run_inference_sweep(inf, bundle(), 3));
  const bool same = one == four && inf_one == inf_four;
  detail << "training sweep CSV " << (one == four ? "identical" : "DIFFERS") << " (1 vs 4 threads), inference CSV "
         << (inf_one == inf_four ? "identical" : "DIFFERS") << " (1 vs 3 threads); ";

  ExperimentSpec o;
  o.train.episodes = 1000;
  o.seed_base = 1;
  const auto dir = std::filesystem::temp_directory_path() / "frlfi_acceptance_ckpt";
  std::filesystem::remove_all(dir);
  const auto res = harness::measure_guard_overhead(o, 5, dir);
  std::filesystem::remove_all(dir);
  detail << fmt("guard overhead %+.2f%% (plain %.3fs, guarded %.3fs, min of 5)", 100 * res.overhead(), res.plain_s,
                res.guarded_s);
  return {same && res.overhead() < 0.05, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                       criterion6, criterion7, criterion8, criterion9, criterion10};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
