#include <gtest/gtest.h>

#include <cmath>

#include "frlfi/faultinj.hpp"

using namespace frlfi;
using namespace frlfi::faultinj;

namespace {

std::vector<fxp::Code> random_codes(std::size_t n, fxp::QFormat f, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<fxp::Code> c(n);
  for (auto& x : c) x = f.min_code() + static_cast<fxp::Code>(rng.uniform_int(std::uint64_t{1} << f.total_bits()));
  return c;
}

}  // namespace

TEST(Inject, ZeroBerIsNoOp) {
  auto c = random_codes(644, fxp::kQ1_2_5, 1);
  const auto before = c;
  Rng rng(2);
  EXPECT_TRUE(inject(c, fxp::kQ1_2_5, 0.0, FlipMode::Both, rng).empty());
  EXPECT_EQ(c, before);
}

TEST(Inject, FullBerComplements) {
  auto c = random_codes(100, fxp::kQ1_4_11, 1);
  const auto before = c;
  Rng rng(2);
  EXPECT_EQ(inject(c, fxp::kQ1_4_11, 1.0, FlipMode::Both, rng).size(), 100u * 16);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i], ~before[i]);
}

TEST(Inject, DirectionFilters) {
  const auto f = fxp::kQ1_2_5;
  auto c = random_codes(500, f, 3);
  const auto before = c;
  Rng rng(4);
  for (const auto& fl : inject(c, f, 0.3, FlipMode::ZeroToOne, rng)) EXPECT_EQ(fl.old_bit, 0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(fxp::to_bits(c[i], f) & fxp::to_bits(before[i], f), fxp::to_bits(before[i], f));
  }
  auto d = before;
  for (const auto& fl : inject(d, f, 0.3, FlipMode::OneToZero, rng)) EXPECT_EQ(fl.old_bit, 1);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(fxp::to_bits(d[i], f) | fxp::to_bits(before[i], f), fxp::to_bits(before[i], f));
  }
  auto all = before;
  inject(all, f, 1.0, FlipMode::OneToZero, rng);
  for (auto x : all) EXPECT_EQ(x, 0);
}

TEST(Inject, Reproducible) {
  const fxp::CodeTensor t{random_codes(644, fxp::kQ1_2_5, 5), fxp::kQ1_2_5, {}};
  Rng a(77), b(77);
  const auto [ta, la] = inject(t, 1e-2, FlipMode::Both, a);
  const auto [tb, lb] = inject(t, 1e-2, FlipMode::Both, b);
  EXPECT_EQ(ta.codes, tb.codes);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    EXPECT_EQ(la[i].offset, lb[i].offset);
    EXPECT_EQ(la[i].bit, lb[i].bit);
  }
}

TEST(Inject, BinomialMean) {
  const int bits = 644 * 8, trials = 10000;
  const double ber = 1e-2;
  Rng rng(6);
  double sum = 0;
  for (int i = 0; i < trials; ++i) {
    std::vector<fxp::Code> c(644, 0);
    sum += static_cast<double>(inject(c, fxp::kQ1_2_5, ber, FlipMode::Both, rng).size());
  }
  const double mean = bits * ber;
  const double sigma_of_mean = std::sqrt(bits * ber * (1 - ber) / trials);
  EXPECT_NEAR(sum / trials, mean, 3 * sigma_of_mean);
}

TEST(FaultClass, Mapping) {
  EXPECT_EQ(fault_class(FaultLocation::agent_weights(3)), FaultClass::AgentFault);
  EXPECT_EQ(fault_class(FaultLocation::agent_upload(0)), FaultClass::AgentFault);
  EXPECT_EQ(fault_class(FaultLocation::activation_read(1)), FaultClass::AgentFault);
  EXPECT_EQ(fault_class(FaultLocation::server_state()), FaultClass::ServerFault);
  EXPECT_EQ(fault_class(FaultLocation::server_broadcast()), FaultClass::ServerFault);
}

TEST(FaultLocation, TextRoundTrip) {
  for (const auto& l : {FaultLocation::agent_weights(3), FaultLocation::server_state(),
                        FaultLocation::activation_read(11), FaultLocation::server_broadcast()}) {
    EXPECT_EQ(FaultLocation::parse(l.to_string()), l);
  }
  EXPECT_THROW(FaultLocation::parse("Nowhere"), std::invalid_argument);
}

TEST(FaultPlan, EmptyPlanDoesNothing) {
  FaultPlan plan;
  std::vector<fxp::Code> c(10, 5);
  EXPECT_EQ(plan.fire(HookPoint::ServerAggregate, 900, 0, -1, c, fxp::kQ1_2_5, 899), 0);
  EXPECT_TRUE(plan.log().empty());
}

TEST(FaultPlan, ServerStateFiresOnceInItsRound) {
  FaultSpec s;
  s.location = FaultLocation::server_state();
  s.ber = 0.5;
  s.episode = 900;
  FaultPlan plan({s}, 1);
  plan.validate(12, 1000);
  std::vector<fxp::Code> c(644, 0);
  int total = 0;
  // Communication interval of 4: rounds close after episodes 4, 8, ...
  for (int e = 4; e <= 1000; e += 4) {
    const int n = plan.fire(HookPoint::ServerAggregate, e, 0, -1, c, fxp::kQ1_2_5, e - 4);
    if (e == 900) {
      EXPECT_GT(n, 0);
    } else {
      EXPECT_EQ(n, 0) << "episode " << e;
    }
    total += n;
  }
  EXPECT_EQ(static_cast<int>(plan.log().size()), total);
  for (const auto& r : plan.log()) {
    EXPECT_EQ(r.episode, 900);
    EXPECT_EQ(r.agent, -1);
    EXPECT_NE(r.old_bit, r.new_bit);
  }
}

TEST(FaultPlan, ValidationErrors) {
  FaultSpec s;
  s.location = FaultLocation::agent_weights(12);
  s.episode = 10;
  EXPECT_THROW(FaultPlan({s}, 1).validate(12, 100), std::invalid_argument);
  s.location = FaultLocation::agent_weights(0);
  s.episode = 101;
  EXPECT_THROW(FaultPlan({s}, 1).validate(12, 100), std::invalid_argument);
  s.location = FaultLocation::server_state();
  s.episode = 10;
  EXPECT_THROW(FaultPlan({s}, 1).validate(1, 100), std::invalid_argument);
  s.ber = 2.0;
  EXPECT_THROW(FaultPlan({s}, 1).validate(12, 100), std::invalid_argument);
}

TEST(FaultPlan, TransientActivationReadHitsOneStep) {
  FaultSpec s;
  s.location = FaultLocation::activation_read(0);
  s.ber = 1.0;
  s.episode = 3;
  s.step = 2;
  s.persistence = Persistence::TransientRead;
  FaultPlan plan({s}, 1);
  EXPECT_FALSE(plan.activation_hook(0, 3, 1, fxp::kQ1_2_5).has_value());
  auto hook = plan.activation_hook(0, 3, 2, fxp::kQ1_2_5);
  ASSERT_TRUE(hook.has_value());
  EXPECT_FALSE(plan.activation_hook(0, 3, 3, fxp::kQ1_2_5).has_value());
  EXPECT_FALSE(plan.activation_hook(0, 3, 2, fxp::kQ1_2_5).has_value());

  Rng rng(1);
  auto p = policy::MLPPolicy::initialized({4, 8, 4}, fxp::kQ1_2_5, rng);
  const gridworld::Observation obs{1, 0, -1, 0};
  const auto clean = p.forward(obs);
  EXPECT_NE(p.forward(obs, &*hook), clean);
  EXPECT_EQ(p.forward(obs), clean);
  EXPECT_FALSE(plan.log().empty());
}

TEST(FaultPlan, PersistentWeightFaultFiresAtEpisodeStart) {
  FaultSpec s;
  s.location = FaultLocation::agent_weights(2);
  s.ber = 0.1;
  s.episode = 5;
  FaultPlan plan({s}, 9);
  std::vector<fxp::Code> c(644, 0);
  EXPECT_EQ(plan.fire(HookPoint::PreEpisode, 5, 0, 1, c, fxp::kQ1_2_5), 0);
  EXPECT_EQ(plan.fire(HookPoint::PreEpisode, 4, 0, 2, c, fxp::kQ1_2_5), 0);
  EXPECT_GT(plan.fire(HookPoint::PreEpisode, 5, 0, 2, c, fxp::kQ1_2_5), 0);
  EXPECT_EQ(plan.fire(HookPoint::PreEpisode, 5, 0, 2, c, fxp::kQ1_2_5), 0);
  EXPECT_EQ(plan.flips_for(5, 2), static_cast<int>(plan.log().size()));
}
