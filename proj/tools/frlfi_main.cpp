#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include "frlfi/config.hpp"
#include "frlfi/fedtrain.hpp"
#include "frlfi/harness.hpp"
#include "frlfi/report.hpp"

namespace fs = std::filesystem;
using namespace frlfi;

namespace {

struct Common {
  std::string config;
  std::string out;
  int threads = 0;

  harness::ExperimentSpec load() const {
    auto spec = config::load_spec(config);
    if (!out.empty()) spec.output_dir = out;
    return spec;
  }
  int workers() const { return threads > 0 ? threads : harness::worker_threads(); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment file (TOML)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
  cmd->add_option("-j,--threads", c.threads, "worker threads (default: FRLFI_THREADS or all cores)");
}

template <class Fn>
std::string render(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

void write_results(const fs::path& dir, const std::vector<harness::ResultRow>& rows) {
  report::write_file(dir / "results.csv", render([&](std::ostream& o) { report::write_results_csv(o, rows); }));
  report::write_file(dir / "timings.csv", render([&](std::ostream& o) { report::write_timings_csv(o, rows); }));
  const auto text = report::summary(rows);
  report::write_file(dir / "summary.txt", text);
  std::cout << text;
}

std::string slug(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  }
  return s;
}

int cmd_train(const Common& c, int episodes, bool guard_flag) {
  auto spec = c.load();
  if (episodes > 0) spec.train.episodes = episodes;
  const bool guarded = guard_flag || spec.train_guard;
  const auto dir = spec.output_dir;
  fs::create_directories(dir);
  report::write_file(dir / "config.toml", config::to_toml(spec));

  faultinj::FaultPlan plan(spec.faults, spec.seed_base);
  fedtrain::GuardOptions opts{spec.detector, dir / "checkpoints"};
  const auto maps = gridworld::default_maps();
  const auto t0 = std::chrono::steady_clock::now();
  auto result = fedtrain::train_federated(spec.train, maps, &plan, guarded ? &opts : nullptr);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  report::write_file(dir / "episodes.csv",
                     render([&](std::ostream& o) { report::write_episode_log_csv(o, result.log); }));
  report::write_file(dir / "injections.csv",
                     render([&](std::ostream& o) { report::write_injection_log_csv(o, result.injections); }));
  if (guarded) {
    report::write_file(dir / "guard_events.csv",
                       render([&](std::ostream& o) { report::write_guard_events_csv(o, result.guard_events); }));
  }
  harness::PolicyBundle bundle{result.policies,
                               {maps.begin(), maps.begin() + spec.train.n_agents},
                               spec.train.max_steps};
  harness::save_bundle(bundle, dir / "bundle.bin");
  std::printf("trained %d agents for %d episodes in %.2fs\n", spec.train.n_agents, spec.train.episodes, secs);
  std::printf("greedy SR %.4f, flips injected %zu, guard events %zu\n", bundle.success_rate(),
              result.injections.size(), result.guard_events.size());
  std::printf("outputs in %s\n", dir.string().c_str());
  return 0;
}

int cmd_sweep_train(const Common& c) {
  auto spec = c.load();
  spec.phase = harness::Phase::Training;
  spec.validate();
  fs::create_directories(spec.output_dir);
  report::write_file(spec.output_dir / "config.toml", config::to_toml(spec));
  const auto rows = harness::run_training_sweep(spec, c.workers());
  write_results(spec.output_dir, rows);
  for (const auto& h : report::build_heatmaps(rows)) {
    report::write_file(spec.output_dir / ("heatmap_" + slug(h.title) + ".svg"), h.svg());
  }
  return 0;
}

int cmd_sweep_infer(const Common& c, const std::string& bundle_path) {
  auto spec = c.load();
  spec.phase = harness::Phase::Inference;
  spec.validate();
  fs::create_directories(spec.output_dir);
  report::write_file(spec.output_dir / "config.toml", config::to_toml(spec));
  harness::PolicyBundle bundle = bundle_path.empty()
                                     ? harness::train_bundle(spec)
                                     : harness::load_bundle(bundle_path, gridworld::default_maps());
  if (bundle_path.empty()) harness::save_bundle(bundle, spec.output_dir / "bundle.bin");
  std::printf("policy bundle: %zu agents, clean SR %.4f\n", bundle.policies.size(), bundle.success_rate());
  write_results(spec.output_dir, harness::run_inference_sweep(spec, bundle, c.workers()));
  return 0;
}

int cmd_convergence(const Common& c) {
  auto spec = c.load();
  spec.validate();
  fs::create_directories(spec.output_dir);
  report::write_file(spec.output_dir / "config.toml", config::to_toml(spec));
  const auto rows = harness::run_convergence_study(spec, c.workers());
  report::write_file(spec.output_dir / "convergence.csv",
                     render([&](std::ostream& o) { report::write_convergence_csv(o, rows); }));
  std::map<double, std::vector<const harness::ConvergenceRow*>> by_ber;
  for (const auto& r : rows) by_ber[r.ber].push_back(&r);
  std::printf("%-10s %10s %10s %9s\n", "ber", "mean", "max", "censored");
  for (const auto& [ber, list] : by_ber) {
    double sum = 0;
    int mx = 0, censored = 0;
    for (const auto* r : list) {
      sum += r->episodes_to_recover;
      mx = std::max(mx, r->episodes_to_recover);
      censored += r->censored ? 1 : 0;
    }
    std::printf("%-10g %10.1f %10d %6d/%zu\n", ber, sum / static_cast<double>(list.size()), mx, censored,
                list.size());
  }
  return 0;
}

int cmd_mitigate(const Common& c, bool skip_training, bool skip_inference, int overhead_repeats) {
  auto spec = c.load();
  fs::create_directories(spec.output_dir);
  report::write_file(spec.output_dir / "config.toml", config::to_toml(spec));
  if (!skip_training) {
    spec.phase = harness::Phase::Training;
    const auto rows = harness::run_training_mitigation(spec, c.workers());
    report::write_file(spec.output_dir / "mitigation_training.csv",
                       render([&](std::ostream& o) { report::write_mitigation_csv(o, rows); }));
    double sr[2][2] = {{0, 0}, {0, 0}};
    int count[2][2] = {{0, 0}, {0, 0}}, fp = 0;
    for (const auto& r : rows) {
      sr[r.faulted][r.guarded] += r.final_sr;
      ++count[r.faulted][r.guarded];
      if (!r.faulted) fp += r.verdicts;
    }
    std::printf("training: faulted SR unguarded %.4f, guarded %.4f; false positives on clean runs: %d\n",
                sr[1][0] / std::max(1, count[1][0]), sr[1][1] / std::max(1, count[1][1]), fp);
  }
  if (overhead_repeats > 0) {
    const auto ckpt = spec.output_dir / "overhead_ckpt";
    const auto o = harness::measure_guard_overhead(spec, overhead_repeats, ckpt);
    std::printf("guard overhead: plain %.3fs, guarded %.3fs (%+.2f%%)\n", o.plain_s, o.guarded_s, 100 * o.overhead());
  }
  if (!skip_inference) {
    auto inf = spec;
    inf.phase = harness::Phase::Inference;
    inf.inference_kinds = {harness::InferenceKind::Clean, harness::InferenceKind::MultiTransM};
    inf.guard = {false, true};
    inf.validate();
    const auto bundle = harness::train_bundle(inf);
    const auto rows = harness::run_inference_sweep(inf, bundle, c.workers());
    report::write_file(spec.output_dir / "mitigation_inference.csv",
                       render([&](std::ostream& o) { report::write_results_csv(o, rows); }));
    std::cout << report::summary(rows);
  }
  return 0;
}

int cmd_report(const std::string& input, const std::string& out, const std::string& kind) {
  std::ifstream in(input);
  if (!in) throw std::runtime_error("cannot open " + input);
  const auto rows = report::read_results_csv(in);
  if (rows.empty()) throw std::runtime_error(input + " holds no rows");
  const fs::path dir = out.empty() ? fs::path(input).parent_path() : fs::path(out);
  if (kind == "csv" || kind == "all") {
    report::write_file(dir / "results.normalized.csv",
                       render([&](std::ostream& o) { report::write_results_csv(o, rows); }));
  }
  if (kind == "heatmap" || kind == "all") {
    const auto maps = report::build_heatmaps(rows);
    for (const auto& h : maps) report::write_file(dir / ("heatmap_" + slug(h.title) + ".svg"), h.svg());
    std::printf("%zu heatmap(s) written to %s\n", maps.size(), dir.string().c_str());
  }
  if (kind == "summary" || kind == "all") {
    const auto text = report::summary(rows);
    report::write_file(dir / "summary.txt", text);
    std::cout << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fault injection campaigns for federated reinforcement learning on GridWorld"};
  app.require_subcommand(1);

  Common train_c, sweep_c, infer_c, conv_c, mit_c;
  int episodes = 0;
  bool guard_flag = false;
  auto* train = app.add_subcommand("train", "train one federated run, optionally with faults and the guard");
  add_common(train, train_c);
  train->add_option("--episodes", episodes, "override the episode count");
  train->add_flag("--guard", guard_flag, "enable reward-drop detection and checkpoint recovery");

  auto* sweep = app.add_subcommand("sweep-train", "training-phase fault sweep");
  add_common(sweep, sweep_c);

  std::string bundle;
  auto* infer = app.add_subcommand("sweep-infer", "inference-phase fault sweep");
  add_common(infer, infer_c);
  infer->add_option("--bundle", bundle, "trained policy bundle (default: train one from the config)")
      ->check(CLI::ExistingFile);

  auto* conv = app.add_subcommand("convergence", "episodes to recover after a late fault, per BER");
  add_common(conv, conv_c);

  bool skip_training = false, skip_inference = false;
  int overhead_repeats = 0;
  auto* mit = app.add_subcommand("mitigate", "evaluate the training guard and the inference range detector");
  add_common(mit, mit_c);
  mit->add_flag("--skip-training", skip_training, "skip the training-time guard evaluation");
  mit->add_flag("--skip-inference", skip_inference, "skip the range detector evaluation");
  mit->add_option("--overhead-repeats", overhead_repeats, "also time guarded vs plain training this many times");

  std::string input, out, kind = "all";
  auto* rep = app.add_subcommand("report", "render a results CSV as summary text and SVG heatmaps");
  rep->add_option("-i,--input", input, "results.csv")->required()->check(CLI::ExistingFile);
  rep->add_option("-o,--out", out, "output directory (default: next to the input)");
  rep->add_option("-k,--kind", kind, "csv, heatmap, summary or all")
      ->check(CLI::IsMember({"csv", "heatmap", "summary", "all"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_c, episodes, guard_flag);
    if (*sweep) return cmd_sweep_train(sweep_c);
    if (*infer) return cmd_sweep_infer(infer_c, bundle);
    if (*conv) return cmd_convergence(conv_c);
    if (*mit) return cmd_mitigate(mit_c, skip_training, skip_inference, overhead_repeats);
    if (*rep) return cmd_report(input, out, kind);
  } catch (const config::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
