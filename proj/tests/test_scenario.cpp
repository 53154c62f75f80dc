#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <map>
#include <random>
#include <set>

#include "mmgan/scenario.hpp"

using namespace mmgan;

TEST(Scenario, ParsesPresenceBits) {
  const auto s = parse_scenario("0011", 4);
  EXPECT_EQ(s.missing_indices(), (std::vector<int>{0, 1}));
  EXPECT_EQ(s.present_indices(), (std::vector<int>{2, 3}));

  const auto t = parse_scenario("0001", 4);
  EXPECT_EQ(t.missing_indices(), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(t.present_indices(), (std::vector<int>{3}));
}

TEST(Scenario, RejectsDegenerateAndMalformed) {
  for (const char* bad : {"1111", "0000", "011", "01011", "0021", "01a1", ""}) {
    EXPECT_THROW(parse_scenario(bad, 4), InvalidScenario) << bad;
  }
  EXPECT_THROW(Scenario::from_code(0, 4), InvalidScenario);
  EXPECT_THROW(Scenario::from_code(15, 4), InvalidScenario);
  EXPECT_THROW(Scenario::from_code(1, 1), InvalidScenario);
}

TEST(Scenario, DifficultyTier) {
  EXPECT_EQ(difficulty_tier(parse_scenario("1110", 4)), 1);
  EXPECT_EQ(difficulty_tier(parse_scenario("0101", 4)), 2);
  EXPECT_EQ(difficulty_tier(parse_scenario("0001", 4)), 3);
}

TEST(Scenario, EnumerateMimoFourChannels) {
  const auto all = enumerate_valid(4);
  ASSERT_EQ(all.size(), 14u);
  std::map<int, int> tiers;
  for (std::size_t i = 0; i < all.size(); ++i) {
    ++tiers[difficulty_tier(all[i])];
    if (i > 0) {
      EXPECT_LT(all[i - 1].str(), all[i].str());
    }
  }
  EXPECT_EQ(tiers, (std::map<int, int>{{1, 4}, {2, 6}, {3, 4}}));
  EXPECT_EQ(all.front().str(), "0001");
  EXPECT_EQ(all.back().str(), "1110");
}

TEST(Scenario, EnumerateMisoKeepsTargetMissing) {
  const auto all = enumerate_valid(4, SynthesisMode::miso(3));
  ASSERT_EQ(all.size(), 7u);
  for (const auto& s : all) {
    EXPECT_TRUE(s.missing(3)) << s.str();
    EXPECT_GE(s.present_count(), 1);
  }
  EXPECT_THROW(enumerate_valid(4, SynthesisMode::miso(4)), InvalidScenario);
}

TEST(Scenario, EnumerateTwoChannels) {
  const auto all = enumerate_valid(2);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].str(), "01");
  EXPECT_EQ(all[1].str(), "10");
}

TEST(Scenario, RoundTripAndCountsForEveryChannelCount) {
  for (int c = 2; c <= 8; ++c) {
    const auto all = enumerate_valid(c);
    EXPECT_EQ(all.size(), (std::size_t{1} << c) - 2);
    for (const auto& s : all) {
      EXPECT_EQ(parse_scenario(s.str(), c), s);
      EXPECT_EQ(s.missing_count() + s.present_count(), c);
      EXPECT_GE(s.missing_count(), 1);
      EXPECT_GE(s.present_count(), 1);
    }
    for (int t = 0; t < c; ++t) EXPECT_EQ(enumerate_valid(c, SynthesisMode::miso(t)).size(), (std::size_t{1} << (c - 1)) - 1);
  }
}

TEST(Curriculum, TierWindowsOnlyEmitTheirTier) {
  const CurriculumSchedule cl;
  std::mt19937_64 rng(11);
  for (int epoch = 0; epoch < 30; ++epoch) {
    const int want = 1 + epoch / 10;
    for (int i = 0; i < 10000 / 10; ++i) {
      ASSERT_EQ(difficulty_tier(sample_scenario(cl, epoch, rng, 4)), want) << "epoch " << epoch;
    }
  }
  // 10k draws inside each window
  for (int window = 0; window < 3; ++window) {
    std::set<std::string> seen;
    for (int i = 0; i < 10000; ++i) {
      const auto s = sample_scenario(cl, window * 10 + i % 10, rng, 4);
      ASSERT_EQ(difficulty_tier(s), window + 1);
      seen.insert(s.str());
    }
    EXPECT_EQ(seen.size(), window == 1 ? 6u : 4u);
  }
}

double uniform_chi_square_p(const std::map<std::string, int>& counts, int categories, int draws) {
  const double expected = static_cast<double>(draws) / categories;
  double chi2 = 0.0;
  for (const auto& [_, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
  chi2 += (categories - static_cast<int>(counts.size())) * expected;  // categories never drawn
  boost::math::chi_squared dist(categories - 1);
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

TEST(Curriculum, UniformAfterTierWindows) {
  const CurriculumSchedule cl;
  std::mt19937_64 rng(2024);
  constexpr int kDraws = 10000;
  std::map<std::string, int> counts;
  for (int i = 0; i < kDraws; ++i) ++counts[sample_scenario(cl, 45, rng, 4).str()];
  EXPECT_EQ(counts.size(), 14u);
  EXPECT_GT(uniform_chi_square_p(counts, 14, kDraws), 0.01);
  for (const auto& [s, n] : counts) EXPECT_NEAR(n / static_cast<double>(kDraws), 1.0 / 14.0, 0.02) << s;
}

TEST(Curriculum, RandomModeIgnoresTiers) {
  CurriculumSchedule rs;
  rs.mode = SamplingMode::Random;
  std::mt19937_64 rng(5);
  std::map<std::string, int> counts;
  for (int i = 0; i < 10000; ++i) ++counts[sample_scenario(rs, 3, rng, 4).str()];
  EXPECT_EQ(counts.size(), 14u);
  EXPECT_GT(uniform_chi_square_p(counts, 14, 10000), 0.01);
}

TEST(Curriculum, MisoIsUniformEvenUnderCurriculum) {
  const CurriculumSchedule cl;
  std::mt19937_64 rng(9);
  std::map<std::string, int> counts;
  for (int i = 0; i < 7000; ++i) {
    const auto s = sample_scenario(cl, 0, rng, 4, SynthesisMode::miso(3));
    ASSERT_TRUE(s.missing(3));
    ++counts[s.str()];
  }
  EXPECT_EQ(counts.size(), 7u);
  EXPECT_GT(uniform_chi_square_p(counts, 7, 7000), 0.01);
}

TEST(Curriculum, DeterministicForSeedAndEpoch) {
  const CurriculumSchedule cl;
  std::mt19937_64 a(77), b(77);
  for (int epoch = 0; epoch < 60; ++epoch) {
    for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_scenario(cl, epoch, a, 4), sample_scenario(cl, epoch, b, 4));
  }
}

TEST(Curriculum, EpochOutsideScheduleThrows) {
  const CurriculumSchedule cl;
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_scenario(cl, -1, rng, 4), std::out_of_range);
  EXPECT_THROW(sample_scenario(cl, 60, rng, 4), std::out_of_range);
}

TEST(Curriculum, DefaultsCoverThreeTiersBeforeUniform) {
  const CurriculumSchedule cl;
  EXPECT_EQ(cl.tier_epochs * 3, cl.uniform_after);
  EXPECT_EQ(cl.total_epochs, 60);
  EXPECT_EQ(cl.tier_at(0, 4), 1);
  EXPECT_EQ(cl.tier_at(29, 4), 3);
  EXPECT_EQ(cl.tier_at(30, 4), std::nullopt);
  EXPECT_EQ(parse_sampling_mode("RS"), SamplingMode::Random);
  EXPECT_THROW(parse_sampling_mode("XX"), InvalidScenario);
}
