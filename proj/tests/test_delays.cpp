#include "fedsel/delays.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace fedsel;

TEST(SynthesizeDelays, DegenerateRangesGiveExactValues) {
  SyntheticDelayConfig c;
  c.model_size_bytes = 1e6;
  c.link_lo = c.link_hi = 1e6;
  c.compute_lo = c.compute_hi = 15.0;
  for (double t : synthesize_delays(c, 10, 1)) EXPECT_EQ(t, 16.0);
}

TEST(SynthesizeDelays, ZeroModelSizeLeavesComputeOnly) {
  SyntheticDelayConfig c;
  c.model_size_bytes = 0.0;
  for (double t : synthesize_delays(c, 500, 2)) {
    EXPECT_GE(t, c.compute_lo);
    EXPECT_LE(t, c.compute_hi);
  }
}

TEST(SynthesizeDelays, DefaultRanges) {
  const SyntheticDelayConfig c;  // 200 KB/s to 5 MB/s, compute U(15, 100)
  EXPECT_EQ(c.link_lo, 200e3);
  EXPECT_EQ(c.link_hi, 5e6);
  EXPECT_EQ(c.compute_lo, 15.0);
  EXPECT_EQ(c.compute_hi, 100.0);
  for (double t : synthesize_delays(c, 1000, 3)) {
    EXPECT_GE(t, c.model_size_bytes / c.link_hi + c.compute_lo);
    EXPECT_LE(t, c.model_size_bytes / c.link_lo + c.compute_hi);
  }
}

TEST(SynthesizeDelays, DeterministicPerSeed) {
  const SyntheticDelayConfig c;
  EXPECT_EQ(synthesize_delays(c, 20, 4), synthesize_delays(c, 20, 4));
  EXPECT_NE(synthesize_delays(c, 20, 4), synthesize_delays(c, 20, 5));
}

TEST(SynthesizeDelays, RejectsBadConfig) {
  SyntheticDelayConfig c;
  c.link_lo = 0.0;
  EXPECT_THROW(synthesize_delays(c, 3, 1), std::invalid_argument);
  c = {};
  c.compute_lo = 50.0;
  c.compute_hi = 10.0;
  EXPECT_THROW(synthesize_delays(c, 3, 1), std::invalid_argument);
  EXPECT_THROW(synthesize_delays(SyntheticDelayConfig{}, 0, 1), std::invalid_argument);
}

TEST(DelayModel, ZeroSigmaReturnsTheMean) {
  const auto d = DelayModel::lognormal({2.0, 5.0}, {0.0, 0.0});
  for (std::size_t r = 0; r < 50; ++r) {
    EXPECT_EQ(d.sample(0, r, 7), 2.0);
    EXPECT_EQ(d.sample(1, r, 7), 5.0);
  }
}

TEST(DelayModel, ZeroSigmaMatchesConstantModelBitwise) {
  const auto a = DelayModel::lognormal({1.5, 3.25, 9.0}, {0.0, 0.0, 0.0});
  const auto b = DelayModel::constant({1.5, 3.25, 9.0});
  for (std::size_t r = 0; r < 100; ++r)
    for (ClientIndex i = 0; i < 3; ++i) EXPECT_EQ(a.sample(i, r, 11), b.sample(i, r, 11));
}

TEST(DelayModel, SyntheticIsConstantAcrossRounds) {
  const auto d = DelayModel::constant({4.0, 8.0});
  std::mt19937_64 rng(1);
  for (int r = 0; r < 20; ++r) {
    EXPECT_EQ(d.sample(1, rng), 8.0);
    EXPECT_EQ(d.sample(1, static_cast<std::size_t>(r), 99), 8.0);
  }
}

TEST(DelayModel, LogNormalJitterHasUnitMean) {
  std::mt19937_64 rng(2024);
  const int n = 100000;
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += lognormal_jitter(10.0, 0.5, rng);
  EXPECT_NEAR(s / n, 10.0, 0.2);
}

TEST(DelayModel, SamplesArePositiveAndReproducible) {
  const auto d = DelayModel::lognormal({1.0, 2.0, 3.0}, {0.5, 1.0, 2.0});
  for (std::size_t r = 0; r < 300; ++r)
    for (ClientIndex i = 0; i < 3; ++i) {
      const double a = d.sample(i, r, 5);
      EXPECT_GT(a, 0.0);
      EXPECT_EQ(a, d.sample(i, r, 5));
    }
  EXPECT_NE(d.sample(0, 1, 5), d.sample(0, 1, 6));
  EXPECT_NE(d.sample(0, 1, 5), d.sample(0, 2, 5));
}

TEST(DelayModel, RejectsNegativeSigma) {
  EXPECT_THROW(DelayModel::lognormal({1.0}, {-0.1}), std::invalid_argument);
  EXPECT_THROW(DelayModel::lognormal({1.0, 2.0}, {0.1}), std::invalid_argument);
}

TEST(TraceFile, ParsesTwoAndThreeColumnForms) {
  std::istringstream two("client_id,mean_delay_s\n2,20.5\n1,10\n");
  const auto a = parse_trace(two, 0.3);
  EXPECT_EQ(a.mean_delays, (std::vector<double>{10.0, 20.5}));
  EXPECT_EQ(a.sigma(0), 0.3);

  std::istringstream three("client_id,mean_delay_s,sigma\n1,10,0.9\n2,20,\n");
  const auto b = parse_trace(three, 0.5);
  EXPECT_EQ(b.sigma(0), 0.9);
  EXPECT_EQ(b.sigma(1), 0.5);
}

TEST(TraceFile, RejectsMalformedInput) {
  const auto bad = [](const std::string& text) {
    std::istringstream in(text);
    return parse_trace(in);
  };
  EXPECT_THROW(bad(""), std::invalid_argument);
  EXPECT_THROW(bad("id,delay\n1,2\n"), std::invalid_argument);
  EXPECT_THROW(bad("client_id,mean_delay_s\n"), std::invalid_argument);
  EXPECT_THROW(bad("client_id,mean_delay_s\n1,abc\n"), std::invalid_argument);
  EXPECT_THROW(bad("client_id,mean_delay_s\n1,2\n1,3\n"), std::invalid_argument);
  EXPECT_THROW(bad("client_id,mean_delay_s\n1,2\n3,3\n"), std::invalid_argument);
  EXPECT_THROW(bad("client_id,mean_delay_s\n1,-2\n"), std::invalid_argument);
  EXPECT_THROW(bad("client_id,mean_delay_s,sigma\n1,2,-1\n"), std::invalid_argument);
}

TEST(TraceFile, WriteReadRoundTripIsExact) {
  const std::vector<double> means{0.1, 1.0 / 3.0, 123456.789, 2e-7};
  std::ostringstream out;
  write_trace(out, means);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_trace(in).mean_delays, means);
}

TEST(TraceModel, FollowsRosterOrder) {
  TraceDelayConfig cfg;
  cfg.mean_delays = {30.0, 10.0, 20.0};
  cfg.lognormal_sigma = 0.5;
  cfg.sigma_override = {std::nullopt, 0.0, std::nullopt};
  const auto roster = make_roster(cfg.mean_delays);
  const auto model = make_trace_model(cfg, roster);
  EXPECT_EQ(model.means()[0], 10.0);
  EXPECT_EQ(model.sigma(0), 0.0);  // original client 2
  EXPECT_EQ(model.sigma(1), 0.5);
}

TEST(LongTail, MedianAndDeterminism) {
  const auto a = synthesize_long_tail({60.0, 1.5}, 4001, 3);
  EXPECT_EQ(a, synthesize_long_tail({60.0, 1.5}, 4001, 3));
  auto s = a;
  std::nth_element(s.begin(), s.begin() + 2000, s.end());
  EXPECT_NEAR(std::log(s[2000]), std::log(60.0), 0.1);
  for (double t : a) EXPECT_GT(t, 0.0);
}
