#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "xscene/control/series.hpp"

using namespace xscene;
using control::CorrelationPattern;

namespace {

CorrelationPattern pattern(double rho, std::uint64_t seed) {
  CorrelationPattern p;
  p.target_rho = rho;
  p.rng_seed = seed;
  return p;
}

}  // namespace

TEST(Pearson, IdentityAndNegation) {
  const std::vector<double> x{1, 4, 2, 8, 5};
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  EXPECT_DOUBLE_EQ(control::pearson(x, x), 1.0);
  EXPECT_DOUBLE_EQ(control::pearson(x, neg), -1.0);
}

TEST(Pearson, HandComputed) {
  // means 2.5 and 2.75; sxy = 6.5, sxx = 5, syy = 8.75
  const double expected = 6.5 / std::sqrt(5.0 * 8.75);
  EXPECT_NEAR(control::pearson(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 3, 5}), expected, 1e-15);
}

TEST(Pearson, ConstantSeriesIsUndefined) {
  EXPECT_THROW(control::pearson(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}), Error);
  EXPECT_THROW(control::pearson(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST(GeneratePair, FullCorrelationCopiesProfile) {
  const auto g = control::generate_pair(pattern(1.0, 3), 720);
  EXPECT_EQ(g.a.people_series(), g.b.people_series());
  EXPECT_DOUBLE_EQ(g.achieved_rho, 1.0);
}

TEST(GeneratePair, HalfCorrelationWithinTolerance) {
  const auto g = control::generate_pair(pattern(0.5, 7), 720);
  const double r = oracle::pearson(g.a.people_series(), g.b.people_series());
  EXPECT_GE(r, 0.47);
  EXPECT_LE(r, 0.53);
  EXPECT_NEAR(r, g.achieved_rho, 1e-12);
}

TEST(GeneratePair, ConstantProfileRejected) {
  auto p = pattern(0.5, 1);
  p.shared_profile.clear();
  EXPECT_THROW(control::generate_pair(p, 100), Error);
}

TEST(GeneratePair, UnreachableTargetReportsDiagnostic) {
  auto p = pattern(1.0, 1);
  p.forced_noise_weight = 0.5;
  try {
    control::generate_pair(p, 720);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unreachable);
    EXPECT_NE(std::string(e.what()).find("tolerance"), std::string::npos);
  }
}

TEST(GeneratePair, InvalidInputs) {
  EXPECT_THROW(control::generate_pair(pattern(1.2, 1), 720), Error);
  EXPECT_THROW(control::generate_pair(pattern(0.5, 1), 1), Error);
}

TEST(GeneratePairProperty, TargetsHeldAcrossSeeds) {
  for (double rho : {1.0, 0.84, 0.5})
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto g = control::generate_pair(pattern(rho, seed), 720);
      EXPECT_NEAR(oracle::pearson(g.a.people_series(), g.b.people_series()), rho, 0.03) << rho << " seed " << seed;
    }
}

TEST(GeneratePairProperty, SeriesInvariants) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto g = control::generate_pair(pattern(0.84, seed), 300);
    ASSERT_EQ(g.a.samples.size(), 300u);
    ASSERT_EQ(g.b.samples.size(), 300u);
    for (std::size_t m = 0; m < 300; ++m) {
      EXPECT_GE(g.a.samples[m].people, 0);
      EXPECT_GE(g.b.samples[m].people, 0);
      EXPECT_EQ(g.a.samples[m].inbound_fraction, g.b.samples[m].inbound_fraction);
      EXPECT_GE(g.a.samples[m].inbound_fraction, 0.0);
      EXPECT_LE(g.a.samples[m].inbound_fraction, 1.0);
    }
    EXPECT_EQ(control::generate_pair(pattern(0.84, seed), 300).b, g.b);
  }
}

TEST(Direction, MorningInboundEveningOutbound) {
  control::DirectionProfile d;
  EXPECT_DOUBLE_EQ(d.at(0), 0.7);
  EXPECT_DOUBLE_EQ(d.at(700), 0.3);
  EXPECT_DOUBLE_EQ(d.at(300), 0.5);
}

TEST(ControlCsv, RoundTrip) {
  const auto g = control::generate_pair(pattern(0.84, 2), 60);
  EXPECT_EQ(control::from_csv(control::to_csv(g.b), SceneId::b), g.b);
}
