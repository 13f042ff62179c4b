#pragma once

// Dilemmas, judgments, the sigmoid choice rule and its likelihood, plus the
// synthetic dilemma generator and judgment simulator.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "moralhbm/catalog.hpp"

namespace moralhbm {

// Counts of catalog entities saved by one branch of a dilemma.
struct StateVector {
  Eigen::VectorXi counts;

  bool operator==(const StateVector& o) const {
    return counts.size() == o.counts.size() && counts == o.counts;
  }
};

struct MoralPrinciples {
  Eigen::VectorXd weights;
};

struct Dilemma {
  std::string id;
  StateVector stay;    // saved if Y = 0
  StateVector swerve;  // saved if Y = 1
};

inline Dilemma swapped(const Dilemma& d) { return {d.id, d.swerve, d.stay}; }

struct Judgment {
  std::string respondent_id;
  std::string dilemma_id;
  int choice = 0;
  std::optional<double> response_time;  // seconds
};

struct Respondent {
  std::string id;
  std::string group;
  std::vector<Judgment> judgments;
};

// Judgments grouped by respondent, with a dilemma table. Respondent order is
// the order of first appearance.
class Dataset {
 public:
  Dataset() = default;

  void add_dilemma(Dilemma d) {
    if (dilemma_index_.count(d.id)) throw std::invalid_argument("duplicate dilemma id '" + d.id + "'");
    dilemma_index_[d.id] = dilemmas_.size();
    dilemmas_.push_back(std::move(d));
  }

  void add_judgment(Judgment j, const std::string& group = "default") {
    if (!dilemma_index_.count(j.dilemma_id))
      throw std::invalid_argument("judgment references unknown dilemma '" + j.dilemma_id + "'");
    if (j.choice != 0 && j.choice != 1) throw std::invalid_argument("choice must be 0 or 1");
    if (j.response_time && !(*j.response_time > 0.0))
      throw std::invalid_argument("response time must be positive");
    auto it = respondent_index_.find(j.respondent_id);
    if (it == respondent_index_.end()) {
      respondent_index_[j.respondent_id] = respondents_.size();
      respondents_.push_back({j.respondent_id, group, {}});
      it = respondent_index_.find(j.respondent_id);
    }
    respondents_[it->second].judgments.push_back(std::move(j));
  }

  const std::vector<Dilemma>& dilemmas() const { return dilemmas_; }
  const std::vector<Respondent>& respondents() const { return respondents_; }
  std::size_t num_judgments() const {
    std::size_t n = 0;
    for (const auto& r : respondents_) n += r.judgments.size();
    return n;
  }

  const Dilemma& dilemma(const std::string& id) const {
    auto it = dilemma_index_.find(id);
    if (it == dilemma_index_.end()) throw std::invalid_argument("unknown dilemma '" + id + "'");
    return dilemmas_[it->second];
  }
  bool has_dilemma(const std::string& id) const { return dilemma_index_.count(id) > 0; }
  bool has_respondent(const std::string& id) const { return respondent_index_.count(id) > 0; }
  const Respondent& respondent(const std::string& id) const {
    auto it = respondent_index_.find(id);
    if (it == respondent_index_.end()) throw std::invalid_argument("unknown respondent '" + id + "'");
    return respondents_[it->second];
  }

  // Keeps judgments [begin, end) of every respondent (in stored order);
  // respondents left without judgments are dropped.
  Dataset slice(std::size_t begin, std::size_t end) const {
    Dataset out;
    for (const auto& d : dilemmas_) out.add_dilemma(d);
    for (const auto& r : respondents_)
      for (std::size_t t = begin; t < std::min(end, r.judgments.size()); ++t)
        out.add_judgment(r.judgments[t], r.group);
    return out;
  }

  Dataset first_respondents(std::size_t n) const {
    Dataset out;
    for (const auto& d : dilemmas_) out.add_dilemma(d);
    for (std::size_t i = 0; i < std::min(n, respondents_.size()); ++i)
      for (const auto& j : respondents_[i].judgments) out.add_judgment(j, respondents_[i].group);
    return out;
  }

 private:
  std::vector<Dilemma> dilemmas_;
  std::unordered_map<std::string, std::size_t> dilemma_index_;
  std::vector<Respondent> respondents_;
  std::unordered_map<std::string, std::size_t> respondent_index_;
};

// ---------------------------------------------------------------------------
// Choice rule

// 1 / (1 + exp(-u)) without overflow for any finite u.
inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

// log sigmoid(u) = -log(1 + exp(-u)).
inline double log_sigmoid(double u) {
  if (u >= 0.0) return -std::log1p(std::exp(-u));
  return u - std::log1p(std::exp(u));
}

inline double bernoulli_logit_logpmf(int y, double u) { return y == 1 ? log_sigmoid(u) : log_sigmoid(-u); }

inline double utility(const MoralPrinciples& w, const StateVector& theta, const FeatureMap& map) {
  const Eigen::VectorXi lambda = apply_feature_map(map, theta.counts);
  if (w.weights.size() != lambda.size())
    throw std::invalid_argument("weight vector has length " + std::to_string(w.weights.size()) +
                                ", feature map has " + std::to_string(lambda.size()) + " features");
  return w.weights.dot(lambda.cast<double>());
}

inline double net_utility(const MoralPrinciples& w, const Dilemma& d, const FeatureMap& map) {
  return utility(w, d.swerve, map) - utility(w, d.stay, map);
}

// P(Y = 1 | dilemma).
inline double choice_probability(const MoralPrinciples& w, const Dilemma& d, const FeatureMap& map) {
  return sigmoid(net_utility(w, d, map));
}

// Swerve-minus-stay feature difference used by the fast likelihood paths.
inline Eigen::VectorXd feature_difference(const Dilemma& d, const FeatureMap& map) {
  return (apply_feature_map(map, d.swerve.counts) - apply_feature_map(map, d.stay.counts)).cast<double>();
}

// Sum of Bernoulli log probabilities over all respondents' judgments.
inline double log_likelihood(const std::map<std::string, MoralPrinciples>& weights, const Dataset& data,
                             const FeatureMap& map) {
  double total = 0.0;
  for (const auto& r : data.respondents()) {
    auto it = weights.find(r.id);
    if (it == weights.end()) throw std::invalid_argument("no weights for respondent '" + r.id + "'");
    for (const auto& j : r.judgments)
      total += bernoulli_logit_logpmf(j.choice, net_utility(it->second, data.dilemma(j.dilemma_id), map));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Design matrices: per-respondent rows of feature differences plus outcomes.

struct RespondentDesign {
  std::string id;
  Eigen::MatrixXd x;  // T_i x D, swerve minus stay
  Eigen::VectorXd y;  // T_i outcomes in {0, 1}
};

struct ChoiceDesign {
  int dim = 0;
  std::vector<RespondentDesign> respondents;

  std::size_t num_observations() const {
    std::size_t n = 0;
    for (const auto& r : respondents) n += static_cast<std::size_t>(r.y.size());
    return n;
  }
};

inline ChoiceDesign build_design(const Dataset& data, const FeatureMap& map) {
  ChoiceDesign design;
  design.dim = map.num_features();
  for (const auto& r : data.respondents()) {
    RespondentDesign rd;
    rd.id = r.id;
    const auto t = static_cast<Eigen::Index>(r.judgments.size());
    rd.x.resize(t, design.dim);
    rd.y.resize(t);
    for (Eigen::Index k = 0; k < t; ++k) {
      const auto& j = r.judgments[k];
      rd.x.row(k) = feature_difference(data.dilemma(j.dilemma_id), map).transpose();
      rd.y(k) = j.choice;
    }
    design.respondents.push_back(std::move(rd));
  }
  return design;
}

// Raw character-space design (no feature map): rows are theta_swerve - theta_stay.
inline ChoiceDesign build_character_design(const Dataset& data, int num_entities) {
  ChoiceDesign design;
  design.dim = num_entities;
  for (const auto& r : data.respondents()) {
    RespondentDesign rd;
    rd.id = r.id;
    const auto t = static_cast<Eigen::Index>(r.judgments.size());
    rd.x.resize(t, num_entities);
    rd.y.resize(t);
    for (Eigen::Index k = 0; k < t; ++k) {
      const auto& d = data.dilemma(r.judgments[k].dilemma_id);
      if (d.swerve.counts.size() != num_entities || d.stay.counts.size() != num_entities)
        throw std::invalid_argument("dilemma '" + d.id + "' has wrong state length");
      rd.x.row(k) = (d.swerve.counts - d.stay.counts).cast<double>().transpose();
      rd.y(k) = r.judgments[k].choice;
    }
    design.respondents.push_back(std::move(rd));
  }
  return design;
}

// Log-likelihood of one design block and its gradient w.r.t. w (accumulated).
inline double block_log_likelihood(const RespondentDesign& block, const Eigen::VectorXd& w,
                                   Eigen::VectorXd* grad = nullptr) {
  if (block.y.size() == 0) return 0.0;
  const Eigen::VectorXd u = block.x * w;
  double lp = 0.0;
  Eigen::VectorXd resid(u.size());
  for (Eigen::Index t = 0; t < u.size(); ++t) {
    const int y = block.y(t) > 0.5 ? 1 : 0;
    lp += bernoulli_logit_logpmf(y, u(t));
    resid(t) = y - sigmoid(u(t));
  }
  if (grad) grad->noalias() += block.x.transpose() * resid;
  return lp;
}

// ---------------------------------------------------------------------------
// Generator

struct GeneratorConfig {
  int min_characters = 1;
  int max_characters = 5;
  // Probability that a dilemma pits passengers against pedestrians (otherwise
  // pedestrians against pedestrians).
  double passenger_probability = 0.5;
  // Forces equal headcount on both branches.
  bool balanced = false;
};

inline void check_generator_config(const GeneratorConfig& c) {
  if (c.max_characters <= 0) throw std::invalid_argument("generator max_characters must be positive");
  if (c.min_characters < 1) throw std::invalid_argument("generator min_characters must be at least 1");
  if (c.min_characters > c.max_characters)
    throw std::invalid_argument("generator min_characters exceeds max_characters");
  if (!(c.passenger_probability >= 0.0 && c.passenger_probability <= 1.0))
    throw std::invalid_argument("generator passenger_probability must lie in [0, 1]");
}

enum class BranchRole { passengers, pedestrians_green, pedestrians_red };

namespace detail {

inline StateVector make_branch(std::mt19937_64& rng, const CharacterCatalog& catalog,
                               const std::vector<int>& characters, int count, BranchRole role) {
  StateVector s{Eigen::VectorXi::Zero(catalog.size())};
  std::uniform_int_distribution<std::size_t> pick(0, characters.size() - 1);
  for (int c = 0; c < count; ++c) s.counts(characters[pick(rng)]) += 1;
  switch (role) {
    case BranchRole::passengers:
      s.counts(catalog.require_index("passenger")) = count;
      break;
    case BranchRole::pedestrians_green:
      s.counts(catalog.require_index("pedestrian")) = count;
      s.counts(catalog.require_index("crossing-on-green")) = count;
      break;
    case BranchRole::pedestrians_red:
      s.counts(catalog.require_index("pedestrian")) = count;
      s.counts(catalog.require_index("crossing-on-red")) = count;
      break;
  }
  return s;
}

}  // namespace detail

// Random dilemma following the default catalog's visual grammar. Requires the
// catalog to contain the passenger/pedestrian/crossing factors.
inline Dilemma generate_dilemma(std::mt19937_64& rng, const CharacterCatalog& catalog,
                                const GeneratorConfig& config, std::string id) {
  check_generator_config(config);
  const auto characters = catalog.indices_of(EntityKind::character);
  if (characters.empty()) throw std::invalid_argument("catalog has no characters");
  std::uniform_int_distribution<int> size_dist(config.min_characters, config.max_characters);
  std::bernoulli_distribution passenger_dilemma(config.passenger_probability);
  std::bernoulli_distribution coin(0.5);

  for (;;) {
    const int n_stay = size_dist(rng);
    const int n_swerve = config.balanced ? n_stay : size_dist(rng);
    BranchRole stay_role, swerve_role;
    auto ped_role = [&] { return coin(rng) ? BranchRole::pedestrians_green : BranchRole::pedestrians_red; };
    if (passenger_dilemma(rng)) {
      if (coin(rng)) {
        stay_role = BranchRole::passengers;
        swerve_role = ped_role();
      } else {
        stay_role = ped_role();
        swerve_role = BranchRole::passengers;
      }
    } else {
      stay_role = ped_role();
      swerve_role = ped_role();
    }
    Dilemma d{id, detail::make_branch(rng, catalog, characters, n_stay, stay_role),
              detail::make_branch(rng, catalog, characters, n_swerve, swerve_role)};
    if (!(d.stay == d.swerve)) return d;
  }
}

// Empty result means the dilemma satisfies branch validity and factor
// consistency for the given catalog.
inline std::vector<std::string> validate_dilemma(const Dilemma& d, const CharacterCatalog& catalog) {
  std::vector<std::string> report;
  const auto characters = catalog.indices_of(EntityKind::character);
  auto check_branch = [&](const StateVector& s, const std::string& label) {
    if (s.counts.size() != catalog.size()) {
      report.push_back(label + ": wrong length");
      return;
    }
    if ((s.counts.array() < 0).any()) report.push_back(label + ": negative count");
    int n = 0;
    for (int c : characters) n += s.counts(c);
    if (n <= 0) report.push_back(label + ": no characters");
    auto idx = [&](const char* name) { return catalog.index_of(name); };
    const auto pas = idx("passenger"), ped = idx("pedestrian"), green = idx("crossing-on-green"),
               red = idx("crossing-on-red");
    if (!pas || !ped || !green || !red) return;  // catalog without factors: nothing more to check
    const int np = s.counts(*pas), nd = s.counts(*ped), ng = s.counts(*green), nr = s.counts(*red);
    const bool passengers = np == n && nd == 0 && ng == 0 && nr == 0;
    const bool pedestrians = np == 0 && nd == n && ((ng == n && nr == 0) || (nr == n && ng == 0));
    if (!passengers && !pedestrians) report.push_back(label + ": inconsistent contextual factors");
  };
  check_branch(d.stay, "stay");
  check_branch(d.swerve, "swerve");
  if (d.stay == d.swerve) report.push_back("identical branches");
  return report;
}

// Draws Y = 1 with probability choice_probability(w, d) for each dilemma.
inline std::vector<Judgment> simulate_judgments(const MoralPrinciples& w, const std::vector<Dilemma>& dilemmas,
                                                const FeatureMap& map, std::mt19937_64& rng,
                                                const std::string& respondent_id = "r0") {
  std::vector<Judgment> out;
  out.reserve(dilemmas.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& d : dilemmas) {
    const double p = choice_probability(w, d, map);
    out.push_back({respondent_id, d.id, unif(rng) < p ? 1 : 0, std::nullopt});
  }
  return out;
}

}  // namespace moralhbm
