#include "moralhbm/diagnostics.hpp"

#include <cmath>
#include <random>

#include "gtest/gtest.h"

namespace moralhbm {
namespace {

std::vector<Eigen::VectorXd> iid_chains(std::uint64_t seed, int chains, int n, double shift_last = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> out;
  for (int c = 0; c < chains; ++c) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = normal(rng) + (c == chains - 1 ? shift_last : 0.0);
    out.push_back(v);
  }
  return out;
}

TEST(RHat, ConstantChainsAreDegenerate) {
  const std::vector<Eigen::VectorXd> chains(4, Eigen::VectorXd::Constant(100, 2.5));
  const auto d = r_hat(chains);
  EXPECT_TRUE(d.degenerate);
  EXPECT_TRUE(std::isnan(d.value));
  EXPECT_TRUE(ess(chains).degenerate);
}

TEST(RHat, IidDrawsNearOne) {
  const auto d = r_hat(iid_chains(1, 4, 1000));
  EXPECT_FALSE(d.degenerate);
  EXPECT_LT(d.value, 1.01);
  EXPECT_GT(d.value, 0.99);
}

TEST(RHat, DetectsShiftedChain) { EXPECT_GT(r_hat(iid_chains(2, 4, 1000, 3.0)).value, 1.1); }

TEST(RHat, DetectsTrendWithinChain) {
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < 2; ++c) chains.push_back(Eigen::VectorXd::LinSpaced(200, 0.0, 10.0));
  EXPECT_GT(r_hat(chains).value, 1.5);
}

TEST(RHat, RejectsTooFewDraws) {
  EXPECT_THROW(r_hat(iid_chains(3, 1, 100)), std::invalid_argument);
  EXPECT_THROW(r_hat(iid_chains(3, 2, 7)), std::invalid_argument);
}

TEST(Ess, IidDrawsNearNominal) {
  const auto d = ess(iid_chains(4, 1, 1000));
  EXPECT_GE(d.value, 700.0);
  EXPECT_LE(d.value, 1300.0);
}

TEST(Ess, AutocorrelatedDrawsAreDiscounted) {
  // AR(1) with phi = 0.9 has integrated autocorrelation time 19.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < 4; ++c) {
    Eigen::VectorXd v(5000);
    double x = normal(rng) / std::sqrt(1.0 - 0.81);
    for (int i = 0; i < 5000; ++i) v(i) = x = 0.9 * x + normal(rng);
    chains.push_back(v);
  }
  EXPECT_NEAR(ess(chains).value / (20000.0 / 19.0), 1.0, 0.25);
}

TEST(Summary, ConstantInput) {
  const auto s = summarize(Eigen::VectorXd::Constant(50, -1.25));
  EXPECT_EQ(s.mean, -1.25);
  EXPECT_EQ(s.sd, 0.0);
  for (double q : {s.q05, s.q25, s.q50, s.q75, s.q95}) EXPECT_EQ(q, -1.25);
}

TEST(Summary, SymmetricSample) {
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(101, -5.0, 5.0);
  const auto s = summarize(v);
  EXPECT_NEAR(s.mean, 0.0, 1e-14);
  EXPECT_NEAR(s.q50, 0.0, 1e-14);
  EXPECT_NEAR(s.q05, -s.q95, 1e-14);
  EXPECT_NEAR(s.q95, 4.5, 1e-12);
}

TEST(Summary, NormalQuantiles) {
  const auto chains = iid_chains(6, 1, 100000);
  const auto s = summarize(chains.front());
  EXPECT_NEAR(s.q05, -1.6448536269514722, 0.1);
  EXPECT_NEAR(s.q95, 1.6448536269514722, 0.1);
  EXPECT_NEAR(s.sd, 1.0, 0.02);
}

TEST(Summary, InterpolatedQuantile) {
  EXPECT_DOUBLE_EQ(sorted_quantile({1.0, 2.0, 3.0, 4.0}, 0.5), 2.5);
  EXPECT_THROW(summarize(Eigen::VectorXd()), std::invalid_argument);
  EXPECT_EQ(summarize_columns(Eigen::MatrixXd::Ones(3, 4)).size(), 4u);
}

}  // namespace
}  // namespace moralhbm
