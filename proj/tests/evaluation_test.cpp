#include "moralhbm/evaluation.hpp"

#include <cmath>
#include <random>

#include "gtest/gtest.h"

namespace moralhbm {
namespace {

SamplerConfig quick_sampler(std::uint64_t seed) {
  SamplerConfig s;
  s.chains = 2;
  s.warmup_iters = 300;
  s.sample_iters = 300;
  s.seed = seed;
  return s;
}

Dilemma sample_dilemma(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return generate_dilemma(rng, default_catalog().catalog, {}, "d");
}

WeightPosterior posterior_with(const Eigen::MatrixXd& draws, const std::string& id = "r") {
  WeightPosterior p;
  p.map = default_catalog().map;
  p.individuals[id] = draws;
  return p;
}

TEST(Predict, SingleDrawIsChoiceProbability) {
  const auto b = default_catalog();
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd w(18);
    for (int k = 0; k < 18; ++k) w(k) = normal(rng);
    const Dilemma d = sample_dilemma(trial);
    EXPECT_NEAR(predict(posterior_with(w.transpose()), "r", d), choice_probability({w}, d, b.map), 1e-14);
  }
}

TEST(Predict, SymmetricPosteriorGivesHalf) {
  Eigen::MatrixXd draws(2, 18);
  for (int k = 0; k < 18; ++k) draws(0, k) = 0.1 * (k + 1) - 0.7;
  draws.row(1) = -draws.row(0);
  for (int trial = 0; trial < 10; ++trial)
    EXPECT_NEAR(predict(posterior_with(draws), "r", sample_dilemma(100 + trial)), 0.5, 1e-12);
}

TEST(Predict, TwoDrawsAverageExactly) {
  const auto b = default_catalog();
  Eigen::MatrixXd draws = Eigen::MatrixXd::Zero(2, 18);
  for (int k = 0; k < 18; ++k) {
    draws(0, k) = 0.25 * ((k % 5) - 2);
    draws(1, k) = -0.5 * ((k % 3) - 1);
  }
  const Dilemma d = sample_dilemma(7);
  const double expected = 0.5 * (choice_probability({draws.row(0).transpose()}, d, b.map) +
                                 choice_probability({draws.row(1).transpose()}, d, b.map));
  EXPECT_EQ(predict(posterior_with(draws), "r", d), expected);
}

TEST(Predict, UnseenRespondents) {
  WeightPosterior p = posterior_with(Eigen::MatrixXd::Zero(1, 18));
  EXPECT_THROW(predict(p, "stranger", sample_dilemma(1)), std::invalid_argument);
  p.shared = Eigen::MatrixXd::Ones(1, 18);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(18);
  EXPECT_EQ(predict(p, "stranger", sample_dilemma(1)), choice_probability({ones}, sample_dilemma(1), p.map));
}

TEST(Predict, IdenticalBranchesGiveHalf) {
  Dilemma d = sample_dilemma(3);
  d.swerve = d.stay;
  EXPECT_EQ(predict(posterior_with(Eigen::MatrixXd::Random(5, 18)), "r", d), 0.5);
}

TEST(Accuracy, Basics) {
  EXPECT_EQ(accuracy({0.9, 0.1, 0.7}, {1, 0, 1}), 1.0);
  EXPECT_EQ(accuracy({0.5, 0.5, 0.5}, {0, 0, 0}), 1.0);
  EXPECT_EQ(accuracy({0.5}, {1}), 0.0);
  EXPECT_THROW(accuracy({}, {}), std::invalid_argument);
  EXPECT_THROW(accuracy({0.2}, {1, 0}), std::invalid_argument);
}

TEST(Accuracy, BinomialRate) {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.7);
  std::vector<double> p(10000, 0.7);
  std::vector<int> y(10000);
  for (auto& v : y) v = coin(rng);
  EXPECT_NEAR(accuracy(p, y), 0.7, 0.02);
}

TEST(Accuracy, InvariantUnderRelabeling) {
  const auto b = default_catalog();
  Eigen::MatrixXd draws = Eigen::MatrixXd::Random(20, 18);
  const WeightPosterior a = posterior_with(draws, "alice");
  const WeightPosterior c = posterior_with(draws, "zed");
  std::vector<double> pa, pc;
  std::vector<int> y;
  for (int t = 0; t < 30; ++t) {
    pa.push_back(predict(a, "alice", sample_dilemma(t)));
    pc.push_back(predict(c, "zed", sample_dilemma(t)));
    y.push_back(t % 2);
  }
  EXPECT_EQ(accuracy(pa, y), accuracy(pc, y));
}

TEST(Certainty, Values) {
  EXPECT_EQ(certainty(0.5), 0.0);
  EXPECT_EQ(certainty(1.0), 0.5);
  EXPECT_EQ(certainty(0.0), 0.5);
  for (int k = 0; k <= 1024; ++k) {
    const double p = k / 1024.0;
    EXPECT_EQ(certainty(p), certainty(1.0 - p));
    EXPECT_GE(certainty(p), 0.0);
    EXPECT_LE(certainty(p), 0.5);
  }
  EXPECT_THROW(certainty(1.5), std::invalid_argument);
  EXPECT_THROW(certainty(std::nan("")), std::invalid_argument);
}

TEST(Spearman, KnownValues) {
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {10, 20, 30, 40}).value, 1.0, 1e-15);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {4, 3, 2, 1}).value, -1.0, 1e-15);
  // Ties share average ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3).
  EXPECT_NEAR(spearman({5, 5, 7}, {1, 2, 3}).value, std::sqrt(3.0) / 2.0, 1e-12);
  EXPECT_TRUE(spearman({1, 2, 3}, {4, 4, 4}).degenerate);
}

TEST(RtAnalysis, ConstantTimesAreDegenerate) {
  std::vector<double> c(40), rt(40, 12.0);
  for (int k = 0; k < 40; ++k) c[k] = 0.01 * k;
  const auto res = rt_analysis(c, rt);
  EXPECT_TRUE(res.rho.degenerate);
  EXPECT_TRUE(std::isnan(res.rho.value));
}

TEST(RtAnalysis, PlantedNegativeLink) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unif(0.0, 0.5);
  std::normal_distribution<double> noise(0.0, 2.0);
  std::vector<double> c(2000), rt(2000);
  for (int k = 0; k < 2000; ++k) {
    c[k] = unif(rng);
    rt[k] = 20.0 - 20.0 * c[k] + noise(rng);
  }
  const auto res = rt_analysis(c, rt);
  EXPECT_LT(res.rho.value, -0.5);
  EXPECT_EQ(res.bins.size(), 10u);
  int total = 0;
  for (const auto& bin : res.bins) total += bin.count;
  EXPECT_EQ(total, 2000);
  EXPECT_GT(res.bins.front().mean_rt, res.bins.back().mean_rt);
}

TEST(RtAnalysis, SlowResponsesAreExcluded) {
  std::vector<double> c, rt;
  for (int k = 0; k < 40; ++k) {
    c.push_back(0.01 * k);
    rt.push_back(10.0 + k);
  }
  const auto base = rt_analysis(c, rt);
  c.push_back(0.5);
  rt.push_back(121.0);
  const auto with_outlier = rt_analysis(c, rt);
  EXPECT_EQ(with_outlier.excluded, 1);
  EXPECT_EQ(with_outlier.used, 40);
  EXPECT_EQ(with_outlier.rho.value, base.rho.value);
  ASSERT_EQ(with_outlier.bins.size(), base.bins.size());
  for (std::size_t k = 0; k < base.bins.size(); ++k) EXPECT_EQ(with_outlier.bins[k].mean_rt, base.bins[k].mean_rt);
  // Exactly 120 s stays in.
  rt.back() = 120.0;
  EXPECT_EQ(rt_analysis(c, rt).used, 41);
}

TEST(RtAnalysis, DecilesPartitionUnevenCounts) {
  std::vector<double> c(37), rt(37);
  for (int k = 0; k < 37; ++k) {
    c[k] = (k * 7 % 37) / 74.0;
    rt[k] = k;
  }
  const auto res = rt_analysis(c, rt);
  int total = 0;
  for (const auto& bin : res.bins) {
    total += bin.count;
    EXPECT_LE(bin.certainty_min, bin.certainty_max);
  }
  EXPECT_EQ(total, 37);
  EXPECT_THROW(rt_analysis(std::vector<double>(29, 0.1), std::vector<double>(29, 1.0)), std::invalid_argument);
}

TEST(RtAnalysis, FromDatasetUsesPredictions) {
  const auto b = default_catalog();
  std::mt19937_64 rng(17);
  Dataset data;
  for (int t = 0; t < 40; ++t) {
    data.add_dilemma(generate_dilemma(rng, b.catalog, {}, "d" + std::to_string(t)));
    data.add_judgment({"r", "d" + std::to_string(t), t % 2, 5.0 + t});
  }
  data.add_judgment({"r", "d0", 1, std::nullopt});
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(1, 18);
  w(0, b.map.require_index("human")) = 1.0;
  const auto res = rt_analysis(data, posterior_with(w));
  EXPECT_EQ(res.used, 40);
}

TEST(Experiment, DefaultGrid) {
  const ExperimentSpec spec;
  EXPECT_EQ(spec.respondent_counts, (std::vector<int>{4, 8, 16, 32, 64, 128}));
  EXPECT_EQ(spec.train_per_respondent, 8);
  EXPECT_EQ(spec.test_per_respondent, 5);
  EXPECT_LE(spec.train_per_respondent + spec.test_per_respondent, 13);
}

TEST(Experiment, InfeasibleSpecThrows) {
  const auto b = default_catalog();
  std::mt19937_64 rng(19);
  const auto pop = simulate_population(rng, b, {}, {}, 3, 13);
  ExperimentSpec spec;
  EXPECT_THROW(check_experiment(spec, pop.data), std::invalid_argument);
  spec.respondent_counts = {3};
  spec.test_per_respondent = 6;
  EXPECT_THROW(check_experiment(spec, pop.data), std::invalid_argument);
}

TEST(Experiment, LearningCurveIsDeterministic) {
  const auto b = default_catalog();
  std::mt19937_64 rng(23);
  const auto pop = simulate_population(rng, b, {}, {}, 6, 13);
  ExperimentSpec spec;
  spec.respondent_counts = {2, 4};
  spec.seeds = {1, 2};
  spec.models = {ModelKind::b2, ModelKind::b3};
  ModelSettings settings;
  settings.sampler = quick_sampler(1);
  settings.sampler.warmup_iters = 100;
  settings.sampler.sample_iters = 100;
  const auto a = run_learning_curve(spec, pop.data, b, settings);
  const auto c = run_learning_curve(spec, pop.data, b, settings);
  ASSERT_EQ(a.cells.size(), 8u);
  for (std::size_t k = 0; k < a.cells.size(); ++k) {
    EXPECT_EQ(a.cells[k].accuracy, c.cells[k].accuracy);
    EXPECT_GE(a.cells[k].accuracy, 0.0);
    EXPECT_LE(a.cells[k].accuracy, 1.0);
  }
  EXPECT_EQ(a.summary(ModelKind::b2, 4).count, 2);
}

TEST(Experiment, FeatureModelBeatsCharacterModel) {
  // Feature-space truth, N = 64, median over 5 seeds.
  const auto b = default_catalog();
  std::vector<double> diff;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(derive_seed(seed, "population"));
    const auto pop = simulate_population(rng, b, {}, {}, 64, 13);
    ExperimentSpec spec;
    spec.respondent_counts = {64};
    spec.seeds = {seed};
    spec.models = {ModelKind::b1, ModelKind::b2};
    ModelSettings settings;
    settings.sampler = quick_sampler(seed);
    const auto res = run_learning_curve(spec, pop.data, b, settings);
    diff.push_back(res.summary(ModelKind::b2, 64).mean - res.summary(ModelKind::b1, 64).mean);
  }
  std::sort(diff.begin(), diff.end());
  EXPECT_GE(diff[2], 0.0);
}

TEST(Recovery, NoJudgmentsIsFlaggedUninformative) {
  const auto b = default_catalog();
  RecoveryConfig cfg;
  cfg.respondents = 4;
  cfg.judgments = 0;
  const auto rep = parameter_recovery(b, cfg, quick_sampler(1));
  EXPECT_TRUE(rep.uninformative);
  EXPECT_TRUE(std::isfinite(rep.group_rmse));
  EXPECT_EQ(rep.truth.data.num_judgments(), 0u);
}

TEST(Recovery, SmallPopulationRuns) {
  const auto b = default_catalog();
  RecoveryConfig cfg;
  cfg.respondents = 8;
  cfg.judgments = 13;
  const auto rep = parameter_recovery(b, cfg, quick_sampler(2));
  EXPECT_FALSE(rep.uninformative);
  EXPECT_EQ(rep.truth.data.num_judgments(), 104u);
  EXPECT_TRUE(std::isfinite(rep.group_r));
  EXPECT_TRUE(std::isfinite(rep.individual_r));
}

}  // namespace
}  // namespace moralhbm
