#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "vsalign/rng.hpp"

using namespace vsalign;

// Reference outputs of the splitmix64 generator seeded with 0.
TEST(Rng, SplitmixMatchesReferenceSequence) {
    SplitMix g{0};
    EXPECT_EQ(g(), 0xe220a8397b1dcdafULL);
    EXPECT_EQ(g(), 0x6e789e6aa1b965f4ULL);
    EXPECT_EQ(g(), 0x06c45d188009454fULL);
    EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Rng, DeriveSeedIsPureAndSpreads) {
    EXPECT_EQ(derive_seed(42, 7), derive_seed(42, 7));
    std::set<std::uint64_t> seen;
    for (std::uint64_t m = 0; m < 20; ++m)
        for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(m, i));
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
}

TEST(Rng, Uniform01InUnitInterval) {
    Rng rng(3);
    double sum = 0;
    for (int i = 0; i < 100000; ++i) {
        const double u = uniform01(rng);
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}

TEST(Rng, UniformIndexChiSquare) {
    Rng rng(11);
    const int n = 7, draws = 70000;
    std::vector<int> counts(n);
    for (int i = 0; i < draws; ++i) counts[uniform_index(rng, n)]++;
    double chi2 = 0;
    const double expected = double(draws) / n;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    EXPECT_LT(chi2, 22.46);  // chi-square 6 dof, p = 0.001
}

TEST(Rng, StandardNormalMoments) {
    Rng rng(5);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = standard_normal(rng);
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.015);
}

TEST(Rng, SampleWithoutReplacementDistinct) {
    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
        const auto pick = sample_without_replacement(rng, 20, 12);
        ASSERT_EQ(pick.size(), 12u);
        std::set<std::size_t> s(pick.begin(), pick.end());
        ASSERT_EQ(s.size(), 12u);
        ASSERT_LT(*s.rbegin(), 20u);
    }
}

TEST(Rng, StateRoundTripContinuesStream) {
    Rng a(123);
    for (int i = 0; i < 17; ++i) a();
    Rng b = rng_from_state(rng_state(a));
    for (int i = 0; i < 100; ++i) ASSERT_EQ(a(), b());
}
