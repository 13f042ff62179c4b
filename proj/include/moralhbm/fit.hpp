#pragma once

// Fitting the hierarchical model with the shared sampler.

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "moralhbm/choice_model.hpp"
#include "moralhbm/hierarchy.hpp"
#include "moralhbm/inference.hpp"

namespace moralhbm {

// Stable 64-bit FNV-1a; std::hash is not portable across library versions.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Child seed for a named sub-task of a seeded run.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& name) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

struct HierarchicalFit {
  HierarchyDims dims;
  std::vector<std::string> features;
  std::vector<std::string> respondents;
  PosteriorSamples samples;  // canonical unconstrained coordinates

  HierarchicalParams draw(int chain, int iter) const {
    return from_unconstrained(samples.chains.at(chain).draws.row(iter).transpose(), dims);
  }
};

// Respondents are the design's blocks; blocks may be empty.
inline HierarchicalFit fit_hierarchical(ChoiceDesign design, std::vector<std::string> features,
                                        const PriorConfig& prior, const SamplerConfig& sampler) {
  if (design.respondents.empty()) throw std::invalid_argument("no data");
  if (static_cast<int>(features.size()) != design.dim) throw std::invalid_argument("feature names do not match design");
  HierarchicalFit fit;
  for (const auto& r : design.respondents) fit.respondents.push_back(r.id);
  HierarchicalModel model(std::move(design), prior);
  fit.dims = model.dims();
  fit.features = std::move(features);
  if (prior.group_mean_prior == GroupMeanPrior::tied) {
    const ScaledMeanModel scaled(std::move(model));
    fit.samples = hmc_sample(scaled, sampler);
    for (auto& c : fit.samples.chains)
      for (Eigen::Index r = 0; r < c.draws.rows(); ++r)
        c.draws.row(r) = scaled.to_canonical(c.draws.row(r).transpose()).transpose();
  } else {
    fit.samples = hmc_sample(model, sampler);
  }
  return fit;
}

inline HierarchicalFit fit_hierarchical(const Dataset& data, const FeatureMap& map, const PriorConfig& prior,
                                        const SamplerConfig& sampler) {
  if (data.num_judgments() == 0) throw std::invalid_argument("no data");
  return fit_hierarchical(build_design(data, map), map.features(), prior, sampler);
}

}  // namespace moralhbm
