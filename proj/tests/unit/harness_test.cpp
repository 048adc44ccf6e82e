#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "frlfi/config.hpp"
#include "frlfi/harness.hpp"
#include "frlfi/report.hpp"

using namespace frlfi;
using namespace frlfi::harness;

namespace {

ExperimentSpec tiny() {
  ExperimentSpec s;
  s.train.n_agents = 3;
  s.train.episodes = 200;
  s.train.max_steps = 40;
  s.fault_episodes = {50, 150};
  s.bers = {0.0, 1e-2};
  s.repetitions = 3;
  return s;
}

std::string csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  report::write_results_csv(os, rows);
  return os.str();
}

}  // namespace

TEST(Stats, Summaries) {
  const std::vector<double> v{1, 1, 0, 0};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  EXPECT_NEAR(s.std, std::sqrt(1.0 / 3), 1e-12);
  EXPECT_NEAR(s.ci95, 1.96 * std::sqrt(0.25 / 4), 1e-12);
  EXPECT_EQ(binomial_ci95(1.0, 100), 0.0);
  ResultRow a, b;
  a.mean_sr = 0.9;
  a.ci95 = 0.05;
  b.mean_sr = 0.7;
  b.ci95 = 0.1;
  EXPECT_TRUE(ci_separated(a, b));
  b.ci95 = 0.2;
  EXPECT_FALSE(ci_separated(a, b));
}

TEST(ParallelFor, VisitsEveryIndexAndRethrows) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; }, 4);
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(
                   100, [](std::size_t i) {
                     if (i == 37) throw std::runtime_error("boom");
                   },
                   3),
               std::runtime_error);
}

TEST(Spec, ExpandAndValidate) {
  auto s = tiny();
  EXPECT_EQ(expand_cells(s).size(), 2u * 2 * 2);
  s.phase = Phase::Inference;
  EXPECT_EQ(expand_cells(s).size(), 2u * 2);
  s = tiny();
  s.bers.clear();
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = tiny();
  s.fault_episodes = {201};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = tiny();
  s.agent_counts = {1};
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(TrainingSweep, ZeroBerMatchesCleanAndThreadsAgree) {
  const auto spec = tiny();
  const auto rows = run_training_sweep(spec, 1);
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) {
    if (r.cell.ber != 0.0) continue;
    // Paired seeds: a zero-BER cell reproduces the fault-free runs exactly.
    for (const auto& o : rows) {
      if (o.cell.ber == 0.0) {
        EXPECT_EQ(o.mean_sr, r.mean_sr);
      }
    }
    EXPECT_EQ(r.mean_flips, 0.0);
  }
  EXPECT_EQ(csv(rows), csv(run_training_sweep(spec, 3)));
}

TEST(InferenceSweep, ThreadsAgreeAndUnconvergedBundleRefused) {
  auto spec = tiny();
  spec.phase = Phase::Inference;
  spec.inference_kinds = {InferenceKind::Clean, InferenceKind::MultiTrans1, InferenceKind::MultiTransM};
  spec.guard = {false, true};
  const auto bundle = train_bundle(spec);
  EXPECT_EQ(csv(run_inference_sweep(spec, bundle, 1)), csv(run_inference_sweep(spec, bundle, 2)));
  spec.train.episodes = 5;
  const auto raw = train_bundle(spec);
  ASSERT_LT(raw.success_rate(), spec.target_sr);
  EXPECT_THROW(run_inference_sweep(spec, raw, 1), std::invalid_argument);
}

TEST(Bundle, SaveLoadRoundTrip) {
  const auto bundle = train_bundle(tiny());
  const auto path = std::filesystem::temp_directory_path() / "frlfi_bundle_test.bin";
  save_bundle(bundle, path);
  const auto back = load_bundle(path, gridworld::default_maps());
  std::filesystem::remove(path);
  ASSERT_EQ(back.policies.size(), bundle.policies.size());
  for (std::size_t i = 0; i < back.policies.size(); ++i) {
    EXPECT_TRUE(std::equal(back.policies[i].codes().begin(), back.policies[i].codes().end(),
                           bundle.policies[i].codes().begin()));
  }
  EXPECT_EQ(back.success_rate(), bundle.success_rate());
}

TEST(Convergence, ZeroBerMatchesCleanTraining) {
  auto spec = tiny();
  spec.bers = {0.0};
  spec.fault_episodes = {200};
  spec.locations = {faultinj::FaultLocation::server_state()};
  spec.recovery_budget = 60;
  const auto rows = run_convergence_study(spec, 1);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    auto cfg = spec.train;
    cfg.seed = repetition_seed(spec, r.repetition);
    fedtrain::FederatedTrainer clean(cfg, {gridworld::default_maps().begin(), gridworld::default_maps().begin() + 3});
    clean.run_until(199);
    int extra = -1;
    for (int e = 200; e <= 200 + spec.recovery_budget && extra < 0; ++e) {
      clean.step();
      if (fedtrain::greedy_success_rate(clean.policies(), clean.maps(), cfg.max_steps) >= spec.target_sr) {
        extra = e - 200;
      }
    }
    EXPECT_EQ(r.flips, 0);
    if (extra < 0) {
      EXPECT_TRUE(r.censored);
    } else {
      EXPECT_FALSE(r.censored);
      EXPECT_EQ(r.episodes_to_recover, extra);
    }
  }
}

TEST(Config, ParseRoundTrip) {
  const auto spec = config::parse_spec(R"toml(
name = "t"
phase = "inference"
repetitions = 7
seed_base = 9

[train]
n_agents = 4
episodes = 500
format = "Q(1,4,11)"

[sweep]
fault_episodes = [100, 200]
bers = [1e-3, 0.01]
locations = ["ServerState", "AgentWeights(*)", "AgentWeights(2)"]
modes = ["ZeroToOne"]
inference_kinds = ["clean", "multi-trans-m"]
guard = [false, true]

[guard]
drop_percent = 30.0
consecutive = 20

[[faults]]
location = "AgentWeights(1)"
ber = 0.01
episode = 50
)toml");
  EXPECT_EQ(spec.phase, Phase::Inference);
  EXPECT_EQ(spec.repetitions, 7);
  EXPECT_EQ(spec.train.n_agents, 4);
  EXPECT_EQ(spec.train.fmt, fxp::kQ1_4_11);
  EXPECT_EQ(spec.locations[1].agent, kAnyAgent);
  EXPECT_EQ(spec.locations[2], faultinj::FaultLocation::agent_weights(2));
  EXPECT_EQ(spec.detector.consecutive, 20);
  ASSERT_EQ(spec.faults.size(), 1u);
  EXPECT_EQ(spec.faults[0].episode, 50);
  const auto text = config::to_toml(spec);
  EXPECT_EQ(config::to_toml(config::parse_spec(text)), text);
}

TEST(Config, Errors) {
  EXPECT_THROW(config::parse_spec("bogus = 1\n"), config::ConfigError);
  EXPECT_THROW(config::parse_spec("[train]\nepisodes = \"many\"\n"), config::ConfigError);
  EXPECT_THROW(config::parse_spec("[sweep]\nmodes = [\"Sideways\"]\n"), config::ConfigError);
  EXPECT_THROW(config::parse_spec("repetitions = 0\n"), config::ConfigError);
  EXPECT_THROW(config::parse_spec("name = \n"), config::ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  const std::filesystem::path dir = FRLFI_CONFIG_DIR;
  int seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".toml") continue;
    ++seen;
    EXPECT_NO_THROW(config::load_spec(entry.path())) << entry.path();
  }
  EXPECT_GT(seen, 5);
}

TEST(Report, CsvRoundTrip) {
  auto spec = tiny();
  spec.formats = {fxp::kQ1_2_5, fxp::kQ1_7_8};
  const auto rows = run_training_sweep(spec, 1);
  const auto text = csv(rows);
  std::istringstream in(text);
  const auto back = report::read_results_csv(in);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_TRUE(back[i].same_result(rows[i]));
  EXPECT_EQ(csv(back), text);
}

TEST(Report, CsvFields) {
  EXPECT_EQ(report::csv_field("Q(1,2,5)"), "\"Q(1,2,5)\"");
  EXPECT_EQ(report::split_csv_line("a,\"b,c\",\"d\"\"e\""), (std::vector<std::string>{"a", "b,c", "d\"e"}));
  EXPECT_EQ(report::parse_double(report::format_double(0.1)), 0.1);
  EXPECT_TRUE(std::isnan(report::parse_double("nan")));
}

TEST(Report, HeatmapHasOneRectPerCell) {
  auto spec = tiny();
  spec.locations = {faultinj::FaultLocation::server_state()};
  spec.bers = {1e-3, 1e-2, 1e-1};
  const auto rows = run_training_sweep(spec, 1);
  const auto maps = report::build_heatmaps(rows);
  ASSERT_EQ(maps.size(), 1u);
  EXPECT_EQ(maps[0].cell_count(), 6u);
  const auto svg = maps[0].svg();
  std::size_t rects = 0;
  for (std::size_t pos = 0; (pos = svg.find("class=\"cell\"", pos)) != std::string::npos; ++pos) ++rects;
  EXPECT_EQ(rects, 6u);
  EXPECT_NE(report::summary(rows).find("ServerState"), std::string::npos);
}
