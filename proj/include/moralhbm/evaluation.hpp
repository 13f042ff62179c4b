#pragma once

// Held-out prediction, the learning-curve experiment, certainty and response
// time analysis, and parameter recovery on synthetic populations.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "moralhbm/benchmarks.hpp"
#include "moralhbm/catalog.hpp"
#include "moralhbm/choice_model.hpp"
#include "moralhbm/diagnostics.hpp"
#include "moralhbm/fit.hpp"
#include "moralhbm/hierarchy.hpp"
#include "moralhbm/inference.hpp"

namespace moralhbm {

enum class ModelKind { hierarchical, b1, b2, b3 };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::hierarchical: return "hier";
    case ModelKind::b1: return "b1";
    case ModelKind::b2: return "b2";
    case ModelKind::b3: return "b3";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "hier") return ModelKind::hierarchical;
  if (s == "b1") return ModelKind::b1;
  if (s == "b2") return ModelKind::b2;
  if (s == "b3") return ModelKind::b3;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected hier, b1, b2 or b3)");
}

// ---------------------------------------------------------------------------
// Posterior draws of weights, in the space of `map` (features, or the identity
// map over entities for B1).

struct WeightPosterior {
  FeatureMap map;
  std::optional<Eigen::MatrixXd> shared;              // pooled weights or group mean; draws x dim
  std::map<std::string, Eigen::MatrixXd> individuals;  // respondent -> draws x dim

  const Eigen::MatrixXd& draws_for(const std::string& respondent) const {
    auto it = individuals.find(respondent);
    if (it != individuals.end()) return it->second;
    if (shared) return *shared;
    throw std::invalid_argument("no posterior for respondent '" + respondent + "' and no group posterior");
  }
};

inline WeightPosterior weight_posterior(const HierarchicalFit& fit, const FeatureMap& map) {
  const int d = fit.dims.features;
  const int n = fit.dims.individuals;
  const int total = fit.samples.total_draws();
  WeightPosterior out;
  out.map = map;
  Eigen::MatrixXd group(total, d);
  std::vector<Eigen::MatrixXd> ind(n, Eigen::MatrixXd(total, d));
  int row = 0;
  for (int c = 0; c < fit.samples.num_chains(); ++c)
    for (int s = 0; s < fit.samples.draws_per_chain(); ++s, ++row) {
      const HierarchicalParams p = fit.draw(c, s);
      group.row(row) = p.group.mean.transpose();
      const Eigen::MatrixXd w = p.individuals();
      for (int i = 0; i < n; ++i) ind[i].row(row) = w.col(i).transpose();
    }
  out.shared = std::move(group);
  for (int i = 0; i < n; ++i) out.individuals[fit.respondents[i]] = std::move(ind[i]);
  return out;
}

inline WeightPosterior weight_posterior(const PooledFit& fit, const FeatureMap& map) {
  WeightPosterior out;
  out.map = map;
  out.shared = fit.samples.stacked();
  return out;
}

inline WeightPosterior weight_posterior(const std::vector<IndividualFit>& fits, const FeatureMap& map) {
  WeightPosterior out;
  out.map = map;
  for (const auto& f : fits) out.individuals[f.respondent_id] = f.draws;
  return out;
}

// Posterior-predictive mean of P(Y = 1): the choice probability averaged over
// the respondent's weight draws (group draws for unseen respondents).
inline double predict(const WeightPosterior& posterior, const std::string& respondent, const Dilemma& dilemma) {
  const Eigen::MatrixXd& draws = posterior.draws_for(respondent);
  if (draws.rows() == 0) throw std::invalid_argument("empty posterior");
  const Eigen::VectorXd u = draws * feature_difference(dilemma, posterior.map);
  double sum = 0.0;
  for (Eigen::Index s = 0; s < u.size(); ++s) sum += sigmoid(u(s));
  return sum / static_cast<double>(u.size());
}

// Predicted label is 1 only when p > 0.5; ties go to stay.
inline double accuracy(const std::vector<double>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) throw std::invalid_argument("accuracy of an empty list");
  if (predictions.size() != labels.size()) throw std::invalid_argument("predictions and labels differ in length");
  std::size_t hits = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) hits += ((predictions[k] > 0.5 ? 1 : 0) == labels[k]);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double certainty(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability out of range");
  return std::abs(p - 0.5);
}

// ---------------------------------------------------------------------------
// Rank statistics

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two equal-length samples");
  const Eigen::ArrayXd x = a.array() - a.mean(), y = b.array() - b.mean();
  const double den = std::sqrt((x * x).sum() * (y * y).sum());
  if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return (x * y).sum() / den;
}

inline double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0) throw std::invalid_argument("rmse: need two equal-length samples");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

// Ranks starting at 1, ties get their average rank.
inline Eigen::VectorXd average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Eigen::VectorXd r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r(idx[k]) = avg;
    i = j + 1;
  }
  return r;
}

inline Diagnostic spearman(const std::vector<double>& a, const std::vector<double>& b) {
  Diagnostic d;
  const double rho = pearson(average_ranks(a), average_ranks(b));
  if (std::isnan(rho)) d.degenerate = true;
  else d.value = rho;
  return d;
}

// ---------------------------------------------------------------------------
// Response time versus certainty

inline constexpr double kMaxResponseSeconds = 120.0;

struct RtBin {
  int decile = 0;
  double certainty_min = 0.0, certainty_max = 0.0;
  double mean_rt = 0.0;
  int count = 0;
};

struct RtAnalysis {
  std::vector<RtBin> bins;
  Diagnostic rho;    // Spearman correlation of certainty and RT
  int used = 0;      // judgments with RT <= 120 s
  int excluded = 0;  // judgments with RT > 120 s
};

inline RtAnalysis rt_analysis(const std::vector<double>& certainties, const std::vector<double>& response_times,
                              int min_count = 30) {
  if (certainties.size() != response_times.size())
    throw std::invalid_argument("certainties and response times differ in length");
  RtAnalysis out;
  std::vector<double> c, rt;
  for (std::size_t k = 0; k < certainties.size(); ++k) {
    if (response_times[k] > kMaxResponseSeconds) {
      ++out.excluded;
      continue;
    }
    c.push_back(certainties[k]);
    rt.push_back(response_times[k]);
  }
  out.used = static_cast<int>(c.size());
  if (out.used < min_count)
    throw std::invalid_argument("need at least " + std::to_string(min_count) + " judgments with RT <= 120 s, have " +
                                std::to_string(out.used));

  std::vector<std::size_t> idx(c.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return c[a] < c[b]; });
  const std::size_t n = idx.size();
  for (int b = 0; b < 10; ++b) {
    const std::size_t lo = b * n / 10, hi = (b + 1) * n / 10;
    if (lo == hi) continue;
    RtBin bin;
    bin.decile = b + 1;
    bin.certainty_min = c[idx[lo]];
    bin.certainty_max = c[idx[hi - 1]];
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += rt[idx[k]];
    bin.count = static_cast<int>(hi - lo);
    bin.mean_rt = s / bin.count;
    out.bins.push_back(bin);
  }
  out.rho = spearman(c, rt);
  return out;
}

// Certainty from the posterior-predictive probability of each judgment that
// carries a response time.
inline RtAnalysis rt_analysis(const Dataset& data, const WeightPosterior& posterior, int min_count = 30) {
  std::vector<double> c, rt;
  for (const auto& r : data.respondents())
    for (const auto& j : r.judgments) {
      if (!j.response_time) continue;
      c.push_back(certainty(predict(posterior, r.id, data.dilemma(j.dilemma_id))));
      rt.push_back(*j.response_time);
    }
  return rt_analysis(c, rt, min_count);
}

// ---------------------------------------------------------------------------
// Synthetic populations

struct SyntheticPopulation {
  GroupNorm group;
  Eigen::MatrixXd weights;  // D x N ground truth
  std::vector<std::string> respondents;
  Dataset data;
};

inline std::string respondent_name(int i) {
  std::string s = std::to_string(i);
  return "r" + std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

// Group and individuals drawn from the hierarchical prior, T fresh dilemmas
// per respondent, choices simulated from the choice rule.
inline SyntheticPopulation simulate_population(std::mt19937_64& rng, const CatalogBundle& bundle,
                                               const PriorConfig& prior, const GeneratorConfig& generator,
                                               int respondents, int judgments) {
  if (respondents < 1 || judgments < 0) throw std::invalid_argument("population size must be positive");
  check_generator_config(generator);
  const int d = bundle.map.num_features();
  SyntheticPopulation pop;
  pop.group = sample_group_prior(rng, d, prior);
  pop.weights.resize(d, respondents);
  for (int i = 0; i < respondents; ++i) {
    const std::string id = respondent_name(i);
    pop.respondents.push_back(id);
    pop.weights.col(i) = sample_individual(rng, pop.group);
    std::vector<Dilemma> dilemmas;
    for (int t = 0; t < judgments; ++t) {
      dilemmas.push_back(generate_dilemma(rng, bundle.catalog, generator, id + "-d" + std::to_string(t)));
      pop.data.add_dilemma(dilemmas.back());
    }
    for (auto& j : simulate_judgments(MoralPrinciples{pop.weights.col(i)}, dilemmas, bundle.map, rng, id))
      pop.data.add_judgment(std::move(j));
  }
  return pop;
}

// Synthetic response times linked to the true certainty c of each judgment:
// RT = intercept - slope * c + N(0, noise_sd^2), floored at `floor` seconds.
struct PlantedRt {
  double intercept = 20.0;
  double slope = 20.0;
  double noise_sd = 2.0;
  double floor = 0.1;
};

inline void plant_response_times(std::mt19937_64& rng, SyntheticPopulation& pop, const FeatureMap& map,
                                 const PlantedRt& cfg = {}) {
  std::normal_distribution<double> noise(0.0, cfg.noise_sd);
  Dataset out;
  for (const auto& d : pop.data.dilemmas()) out.add_dilemma(d);
  for (std::size_t i = 0; i < pop.respondents.size(); ++i) {
    const MoralPrinciples w{pop.weights.col(static_cast<Eigen::Index>(i))};
    for (const auto& r : pop.data.respondents()) {
      if (r.id != pop.respondents[i]) continue;
      for (auto j : r.judgments) {
        const double c = certainty(choice_probability(w, pop.data.dilemma(j.dilemma_id), map));
        j.response_time = std::max(cfg.floor, cfg.intercept - cfg.slope * c + noise(rng));
        out.add_judgment(std::move(j), r.group);
      }
    }
  }
  pop.data = std::move(out);
}

// ---------------------------------------------------------------------------
// Model fitting behind one interface

struct ModelSettings {
  PriorConfig prior;
  BenchmarkConfig benchmark;
  SamplerConfig sampler;
};

inline WeightPosterior fit_model(ModelKind kind, const Dataset& data, const CatalogBundle& bundle,
                                 const ModelSettings& settings) {
  switch (kind) {
    case ModelKind::hierarchical:
      return weight_posterior(fit_hierarchical(data, bundle.map, settings.prior, settings.sampler), bundle.map);
    case ModelKind::b1:
      return weight_posterior(fit_benchmark1(data, bundle.catalog, settings.benchmark, settings.sampler),
                              FeatureMap::identity(bundle.catalog));
    case ModelKind::b2:
      return weight_posterior(fit_benchmark2(data, bundle.map, settings.benchmark, settings.sampler), bundle.map);
    case ModelKind::b3:
      return weight_posterior(fit_benchmark3(data, bundle.map, settings.benchmark, settings.sampler), bundle.map);
  }
  throw std::invalid_argument("unknown model kind");
}

// ---------------------------------------------------------------------------
// Learning curve

struct ExperimentSpec {
  std::vector<int> respondent_counts = {4, 8, 16, 32, 64, 128};
  int train_per_respondent = 8;
  int test_per_respondent = 5;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<ModelKind> models = {ModelKind::hierarchical, ModelKind::b1, ModelKind::b2, ModelKind::b3};
};

inline void check_experiment(const ExperimentSpec& spec, const Dataset& data) {
  if (spec.respondent_counts.empty() || spec.seeds.empty() || spec.models.empty())
    throw std::invalid_argument("experiment grid is empty");
  if (spec.train_per_respondent < 1 || spec.test_per_respondent < 1)
    throw std::invalid_argument("train and test sizes must be positive");
  const std::size_t need = static_cast<std::size_t>(spec.train_per_respondent + spec.test_per_respondent);
  std::size_t eligible = 0;
  for (const auto& r : data.respondents()) eligible += r.judgments.size() >= need;
  const int max_n = *std::max_element(spec.respondent_counts.begin(), spec.respondent_counts.end());
  if (*std::min_element(spec.respondent_counts.begin(), spec.respondent_counts.end()) < 1)
    throw std::invalid_argument("respondent counts must be positive");
  if (static_cast<int>(eligible) < max_n)
    throw std::invalid_argument("experiment needs " + std::to_string(max_n) + " respondents with at least " +
                                std::to_string(need) + " judgments, data has " + std::to_string(eligible));
}

struct LearningCurveCell {
  ModelKind model;
  int respondents;
  std::uint64_t seed;
  double accuracy;
};

struct LearningCurveSummary {
  double mean = 0.0, sd = 0.0, median = 0.0;
  int count = 0;
};

struct LearningCurveResult {
  std::vector<LearningCurveCell> cells;

  LearningCurveSummary summary(ModelKind model, int respondents) const {
    std::vector<double> v;
    for (const auto& c : cells)
      if (c.model == model && c.respondents == respondents) v.push_back(c.accuracy);
    LearningCurveSummary s;
    s.count = static_cast<int>(v.size());
    if (v.empty()) return s;
    Eigen::Map<const Eigen::VectorXd> e(v.data(), static_cast<Eigen::Index>(v.size()));
    const ParameterSummary ps = summarize(e);
    s.mean = ps.mean;
    s.sd = ps.sd;
    s.median = ps.q50;
    return s;
  }
};

// For each seed the eligible respondents are shuffled once and every N takes
// a prefix, so the grids for growing N are nested. Every respondent trains on
// its first `train` judgments and is tested on the next `test`.
inline LearningCurveResult run_learning_curve(const ExperimentSpec& spec, const Dataset& data,
                                              const CatalogBundle& bundle, const ModelSettings& settings) {
  check_experiment(spec, data);
  const std::size_t train = spec.train_per_respondent, test = spec.test_per_respondent;
  std::vector<const Respondent*> eligible;
  for (const auto& r : data.respondents())
    if (r.judgments.size() >= train + test) eligible.push_back(&r);

  LearningCurveResult result;
  for (const std::uint64_t seed : spec.seeds) {
    std::vector<const Respondent*> order = eligible;
    std::mt19937_64 rng(derive_seed(seed, "respondent-order"));
    std::shuffle(order.begin(), order.end(), rng);
    for (const int n : spec.respondent_counts) {
      Dataset train_set;
      for (int i = 0; i < n; ++i)
        for (std::size_t t = 0; t < train; ++t) {
          const auto& j = order[i]->judgments[t];
          if (!train_set.has_dilemma(j.dilemma_id)) train_set.add_dilemma(data.dilemma(j.dilemma_id));
          train_set.add_judgment(j, order[i]->group);
        }
      for (const ModelKind kind : spec.models) {
        ModelSettings local = settings;
        local.sampler.seed = derive_seed(seed, to_string(kind) + "/" + std::to_string(n));
        const WeightPosterior post = fit_model(kind, train_set, bundle, local);
        std::vector<double> p;
        std::vector<int> y;
        for (int i = 0; i < n; ++i)
          for (std::size_t t = train; t < train + test; ++t) {
            const auto& j = order[i]->judgments[t];
            p.push_back(predict(post, order[i]->id, data.dilemma(j.dilemma_id)));
            y.push_back(j.choice);
          }
        result.cells.push_back({kind, n, seed, accuracy(p, y)});
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Parameter recovery

struct RecoveryConfig {
  int respondents = 64;
  int judgments = 13;
  std::uint64_t seed = 1;
  GeneratorConfig generator;
  PriorConfig prior;
};

struct RecoveryReport {
  double group_r = 0.0, group_rmse = 0.0;
  double individual_r = 0.0, individual_rmse = 0.0;
  bool uninformative = false;  // no judgments: the posterior is the prior
  int divergences = 0;
  double max_r_hat = 0.0;
  SyntheticPopulation truth;
};

inline RecoveryReport parameter_recovery(const CatalogBundle& bundle, const RecoveryConfig& config,
                                         const SamplerConfig& sampler) {
  std::mt19937_64 rng(derive_seed(config.seed, "population"));
  RecoveryReport rep;
  rep.truth = simulate_population(rng, bundle, config.prior, config.generator, config.respondents, config.judgments);
  const int d = bundle.map.num_features();

  // Blocks for every respondent, including ones without judgments.
  ChoiceDesign design = build_design(rep.truth.data, bundle.map);
  for (const auto& id : rep.truth.respondents) {
    const bool present = std::any_of(design.respondents.begin(), design.respondents.end(),
                                     [&](const RespondentDesign& b) { return b.id == id; });
    if (!present) design.respondents.push_back({id, Eigen::MatrixXd(0, d), Eigen::VectorXd(0)});
  }
  SamplerConfig local = sampler;
  local.seed = derive_seed(config.seed, "sampler");
  const HierarchicalFit fit = fit_hierarchical(std::move(design), bundle.map.features(), config.prior, local);
  rep.uninformative = config.judgments == 0;
  rep.divergences = fit.samples.divergences();
  for (int k = 0; k < fit.dims.size(); ++k) {
    const Diagnostic r = r_hat(fit.samples.coordinate(k));
    if (!r.degenerate) rep.max_r_hat = std::max(rep.max_r_hat, r.value);
  }

  const WeightPosterior post = weight_posterior(fit, bundle.map);
  const Eigen::VectorXd group_mean = post.shared->colwise().mean().transpose();
  Eigen::VectorXd est(d * config.respondents), truth(d * config.respondents);
  for (int i = 0; i < config.respondents; ++i) {
    est.segment(i * d, d) = post.individuals.at(rep.truth.respondents[i]).colwise().mean().transpose();
    truth.segment(i * d, d) = rep.truth.weights.col(i);
  }
  rep.group_r = pearson(group_mean, rep.truth.group.mean);
  rep.group_rmse = rmse(group_mean, rep.truth.group.mean);
  rep.individual_r = pearson(est, truth);
  rep.individual_rmse = rmse(est, truth);
  return rep;
}

}  // namespace moralhbm
