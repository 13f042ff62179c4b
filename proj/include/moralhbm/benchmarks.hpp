#pragma once

// The three baseline models: pooled weights over raw characters (B1), pooled
// weights over abstract features (B2), and independent per-respondent weights
// over abstract features (B3). All share the choice likelihood and sampler.

#include <Eigen/Core>

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "moralhbm/catalog.hpp"
#include "moralhbm/choice_model.hpp"
#include "moralhbm/fit.hpp"
#include "moralhbm/inference.hpp"

namespace moralhbm {

enum class BenchmarkKind { character_pooled, feature_pooled, individual_unpooled };

struct BenchmarkConfig {
  BenchmarkKind kind = BenchmarkKind::feature_pooled;
  double prior_sd = 1.0;
  double prior_mean = 0.0;
};

inline void check_benchmark_config(const BenchmarkConfig& c) {
  if (!(c.prior_sd > 0.0)) throw std::invalid_argument("benchmark prior_sd must be positive");
}

// One weight vector shared by every block of a design, prior N(mean, sd^2 I).
class PooledLogisticModel {
 public:
  PooledLogisticModel(ChoiceDesign design, double prior_mean, double prior_sd)
      : design_(std::move(design)), mean_(prior_mean), sd_(prior_sd) {
    if (!(sd_ > 0.0)) throw std::invalid_argument("prior sd must be positive");
  }

  int dim() const { return design_.dim; }
  const ChoiceDesign& design() const { return design_; }

  double log_likelihood(const Eigen::VectorXd& w) const {
    double ll = 0.0;
    for (const auto& b : design_.respondents) ll += block_log_likelihood(b, w);
    return ll;
  }

  double log_density(const Eigen::VectorXd& w) const {
    return log_likelihood(w) - 0.5 * (w.array() - mean_).square().sum() / (sd_ * sd_);
  }

  double log_density_gradient(const Eigen::VectorXd& w, Eigen::VectorXd& grad) const {
    grad = -(w.array() - mean_).matrix() / (sd_ * sd_);
    double ll = 0.0;
    for (const auto& b : design_.respondents) ll += block_log_likelihood(b, w, &grad);
    return ll - 0.5 * (w.array() - mean_).square().sum() / (sd_ * sd_);
  }

 private:
  ChoiceDesign design_;
  double mean_, sd_;
};

struct PooledFit {
  std::vector<std::string> names;  // entity names (B1) or feature names (B2)
  PosteriorSamples samples;
};

inline PooledFit fit_pooled(const ChoiceDesign& design, std::vector<std::string> names, const BenchmarkConfig& config,
                            const SamplerConfig& sampler) {
  check_benchmark_config(config);
  if (design.num_observations() == 0) throw std::invalid_argument("no data");
  const PooledLogisticModel model(design, config.prior_mean, config.prior_sd);
  return {std::move(names), hmc_sample(model, Eigen::VectorXd::Constant(model.dim(), config.prior_mean), sampler)};
}

// B1: u(theta) = w^T theta over the raw K-dimensional entity space.
inline PooledFit fit_benchmark1(const Dataset& data, const CharacterCatalog& catalog, const BenchmarkConfig& config,
                                const SamplerConfig& sampler) {
  std::vector<std::string> names;
  for (const auto& e : catalog.entities()) names.push_back(e.name);
  return fit_pooled(build_character_design(data, catalog.size()), std::move(names), config, sampler);
}

// B2: pooled weights over the abstract features.
inline PooledFit fit_benchmark2(const Dataset& data, const FeatureMap& map, const BenchmarkConfig& config,
                                const SamplerConfig& sampler) {
  return fit_pooled(build_design(data, map), map.features(), config, sampler);
}

struct IndividualFit {
  std::string respondent_id;
  bool prior_only = false;  // no judgments; draws come from the prior
  PosteriorSamples samples;
  Eigen::MatrixXd draws;  // stacked draws x D
};

// B3: every respondent is fit alone, with a seed derived from its id, so a
// respondent's posterior does not depend on who else is in the data.
// `respondents` may name ids absent from the data; those get prior draws.
inline std::vector<IndividualFit> fit_benchmark3(const Dataset& data, const FeatureMap& map,
                                                 const BenchmarkConfig& config, const SamplerConfig& sampler,
                                                 std::vector<std::string> respondents = {}) {
  check_benchmark_config(config);
  check_sampler_config(sampler);
  if (respondents.empty())
    for (const auto& r : data.respondents()) respondents.push_back(r.id);
  const int d = map.num_features();
  std::vector<IndividualFit> out;
  out.reserve(respondents.size());
  for (const auto& id : respondents) {
    IndividualFit fit;
    fit.respondent_id = id;
    SamplerConfig local = sampler;
    local.seed = derive_seed(sampler.seed, id);
    if (!data.has_respondent(id) || data.respondent(id).judgments.empty()) {
      fit.prior_only = true;
      std::mt19937_64 rng(local.seed);
      std::normal_distribution<double> normal(config.prior_mean, config.prior_sd);
      fit.draws.resize(static_cast<Eigen::Index>(sampler.chains) * sampler.sample_iters, d);
      for (Eigen::Index r = 0; r < fit.draws.rows(); ++r)
        for (int k = 0; k < d; ++k) fit.draws(r, k) = normal(rng);
    } else {
      Dataset own;
      const auto& resp = data.respondent(id);
      for (const auto& j : resp.judgments)
        if (!own.has_dilemma(j.dilemma_id)) own.add_dilemma(data.dilemma(j.dilemma_id));
      for (const auto& j : resp.judgments) own.add_judgment(j, resp.group);
      const PooledLogisticModel model(build_design(own, map), config.prior_mean, config.prior_sd);
      fit.samples = hmc_sample(model, Eigen::VectorXd::Constant(d, config.prior_mean), local);
      fit.draws = fit.samples.stacked();
    }
    out.push_back(std::move(fit));
  }
  return out;
}

}  // namespace moralhbm
