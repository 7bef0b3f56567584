#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mialab/auroc.hpp"
#include "mialab/rng.hpp"
#include "oracle_helpers.hpp"

using mialab::Label;
using mialab::eval::auroc;

namespace {

std::vector<Label> as_labels(const std::vector<bool>& member) {
  std::vector<Label> out;
  for (bool m : member) out.push_back(m ? Label::Member : Label::NonMember);
  return out;
}

}  // namespace

TEST(Auroc, PerfectSeparation) {
  EXPECT_DOUBLE_EQ(auroc({5.0, 4.0, 1.0, 0.0}, as_labels({true, true, false, false})), 1.0);
  EXPECT_DOUBLE_EQ(auroc({0.0, 1.0, 4.0, 5.0}, as_labels({true, true, false, false})), 0.0);
}

TEST(Auroc, SmallKnownCase) {
  // Members {3, 2} both beat the single non-member {1}.
  EXPECT_DOUBLE_EQ(auroc({3.0, 1.0, 2.0}, as_labels({true, false, true})), 1.0);
}

TEST(Auroc, TiesCountHalf) {
  EXPECT_DOUBLE_EQ(auroc({1.0, 1.0}, as_labels({true, false})), 0.5);
  EXPECT_DOUBLE_EQ(auroc({2.0, 1.0, 1.0, 1.0}, as_labels({true, true, false, false})),
                   (2.0 + 2.0 * 0.5) / 4.0);
}

TEST(Auroc, SingleClassThrows) {
  EXPECT_THROW(auroc({1.0, 2.0}, as_labels({true, true})), std::invalid_argument);
  EXPECT_THROW(auroc({1.0, 2.0}, as_labels({false, false})), std::invalid_argument);
}

TEST(Auroc, MatchesPairwiseCountingOnRandomSets) {
  mialab::rng::Rng rng(1001);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 49);
    std::vector<double> scores;
    std::vector<bool> member;
    bool any_m = false, any_n = false;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties actually occur.
      scores.push_back(std::floor(rng.normal() * 3.0));
      member.push_back(rng.bernoulli(0.5));
      (member.back() ? any_m : any_n) = true;
    }
    if (!any_m || !any_n) {
      member[0] = true;
      member[n - 1] = false;
    }
    ASSERT_DOUBLE_EQ(auroc(scores, as_labels(member)), oracle::auroc_pairwise(scores, member));
  }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  mialab::rng::Rng rng(7);
  std::vector<double> scores;
  std::vector<bool> member;
  for (int i = 0; i < 60; ++i) {
    scores.push_back(rng.normal());
    member.push_back(i % 3 == 0);
  }
  std::vector<double> transformed;
  for (double s : scores) transformed.push_back(std::tanh(s) * 5.0 + 100.0);
  EXPECT_DOUBLE_EQ(auroc(scores, as_labels(member)), auroc(transformed, as_labels(member)));
}

TEST(Auroc, NegationComplementsWithoutTies) {
  mialab::rng::Rng rng(13);
  std::vector<double> scores;
  std::vector<bool> member;
  for (int i = 0; i < 40; ++i) {
    scores.push_back(rng.normal());  // continuous, ties have measure zero
    member.push_back(i % 2 == 0);
  }
  std::vector<double> negated;
  for (double s : scores) negated.push_back(-s);
  EXPECT_NEAR(auroc(scores, as_labels(member)) + auroc(negated, as_labels(member)), 1.0, 1e-12);
}

TEST(Auroc, NullCaseNearHalf) {
  mialab::rng::Rng rng(2718);
  const std::size_t n1 = 300, n0 = 300;
  std::vector<double> scores;
  std::vector<bool> member;
  for (std::size_t i = 0; i < n1 + n0; ++i) {
    scores.push_back(rng.normal());
    member.push_back(i < n1);
  }
  const double sigma = std::sqrt((static_cast<double>(n1 + n0) + 1.0) /
                                 (12.0 * static_cast<double>(n1) * static_cast<double>(n0)));
  EXPECT_NEAR(auroc(scores, as_labels(member)), 0.5, 3.0 * sigma);
}
