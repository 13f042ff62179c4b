#pragma once

// Entity catalog (characters + contextual factors) and the binary feature map
// that decomposes entity counts into abstract moral dimensions.

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace moralhbm {

enum class EntityKind { character, contextual_factor };

inline std::string to_string(EntityKind kind) {
  return kind == EntityKind::character ? "character" : "contextual_factor";
}

inline EntityKind entity_kind_from_string(const std::string& s) {
  if (s == "character") return EntityKind::character;
  if (s == "contextual_factor") return EntityKind::contextual_factor;
  throw std::invalid_argument("unknown entity kind '" + s + "'");
}

struct Entity {
  std::string name;
  EntityKind kind = EntityKind::character;

  bool operator==(const Entity&) const = default;
};

// Ordered entity list; index positions define the state-vector space.
class CharacterCatalog {
 public:
  CharacterCatalog() = default;
  explicit CharacterCatalog(std::vector<Entity> entities) : entities_(std::move(entities)) {}

  const std::vector<Entity>& entities() const { return entities_; }
  int size() const { return static_cast<int>(entities_.size()); }

  std::optional<int> index_of(const std::string& name) const {
    for (std::size_t k = 0; k < entities_.size(); ++k)
      if (entities_[k].name == name) return static_cast<int>(k);
    return std::nullopt;
  }

  int require_index(const std::string& name) const {
    auto idx = index_of(name);
    if (!idx) throw std::invalid_argument("unknown entity '" + name + "'");
    return *idx;
  }

  std::vector<int> indices_of(EntityKind kind) const {
    std::vector<int> out;
    for (std::size_t k = 0; k < entities_.size(); ++k)
      if (entities_[k].kind == kind) out.push_back(static_cast<int>(k));
    return out;
  }

  bool operator==(const CharacterCatalog&) const = default;

 private:
  std::vector<Entity> entities_;
};

// D x K binary matrix A with named rows; F(theta) = A theta.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::vector<std::string> features, Eigen::MatrixXi matrix)
      : features_(std::move(features)), matrix_(std::move(matrix)) {}

  const std::vector<std::string>& features() const { return features_; }
  const Eigen::MatrixXi& matrix() const { return matrix_; }
  int num_features() const { return static_cast<int>(matrix_.rows()); }
  int num_entities() const { return static_cast<int>(matrix_.cols()); }

  std::optional<int> index_of(const std::string& feature) const {
    auto it = std::find(features_.begin(), features_.end(), feature);
    if (it == features_.end()) return std::nullopt;
    return static_cast<int>(it - features_.begin());
  }

  int require_index(const std::string& feature) const {
    auto idx = index_of(feature);
    if (!idx) throw std::invalid_argument("unknown feature '" + feature + "'");
    return *idx;
  }

  // Identity map over a catalog: each entity is its own feature.
  static FeatureMap identity(const CharacterCatalog& catalog) {
    std::vector<std::string> names;
    for (const auto& e : catalog.entities()) names.push_back(e.name);
    const int k = catalog.size();
    return FeatureMap(std::move(names), Eigen::MatrixXi::Identity(k, k));
  }

  bool operator==(const FeatureMap& other) const {
    return features_ == other.features_ && matrix_.rows() == other.matrix_.rows() &&
           matrix_.cols() == other.matrix_.cols() && matrix_ == other.matrix_;
  }

 private:
  std::vector<std::string> features_;
  Eigen::MatrixXi matrix_;
};

struct CatalogBundle {
  CharacterCatalog catalog;
  FeatureMap map;
};

namespace names {
inline const std::vector<std::string>& default_characters() {
  static const std::vector<std::string> v = {
      "man",           "woman",          "boy",           "girl",
      "elderly man",   "elderly woman",  "pregnant woman", "stroller/baby",
      "male doctor",   "female doctor",  "male athlete",  "female athlete",
      "male executive", "female executive", "large man",   "large woman",
      "homeless person", "criminal",     "dog",           "cat"};
  return v;
}

inline const std::vector<std::string>& default_factors() {
  static const std::vector<std::string> v = {"passenger", "pedestrian", "crossing-on-green",
                                             "crossing-on-red"};
  return v;
}

inline const std::vector<std::string>& default_features() {
  static const std::vector<std::string> v = {
      "human",    "animal",  "male",  "female",      "young",      "old",
      "infancy",  "pregnancy", "fit", "large",       "doctor",     "high-status",
      "low-status", "lawful", "unlawful", "passenger", "pedestrian", "group-size"};
  return v;
}
}  // namespace names

// The built-in 24-entity catalog and 18-feature map.
inline CatalogBundle default_catalog() {
  std::vector<Entity> entities;
  for (const auto& n : names::default_characters()) entities.push_back({n, EntityKind::character});
  for (const auto& n : names::default_factors())
    entities.push_back({n, EntityKind::contextual_factor});
  CharacterCatalog catalog(std::move(entities));

  const auto& features = names::default_features();
  const std::map<std::string, std::vector<std::string>> columns = {
      {"man", {"human", "male"}},
      {"woman", {"human", "female"}},
      {"boy", {"human", "male", "young"}},
      {"girl", {"human", "female", "young"}},
      {"elderly man", {"human", "male", "old"}},
      {"elderly woman", {"human", "female", "old"}},
      {"pregnant woman", {"human", "female", "pregnancy"}},
      {"stroller/baby", {"human", "young", "infancy"}},
      {"male doctor", {"human", "male", "doctor", "high-status"}},
      {"female doctor", {"human", "female", "doctor", "high-status"}},
      {"male athlete", {"human", "male", "fit"}},
      {"female athlete", {"human", "female", "fit"}},
      {"male executive", {"human", "male", "high-status"}},
      {"female executive", {"human", "female", "high-status"}},
      {"large man", {"human", "male", "large"}},
      {"large woman", {"human", "female", "large"}},
      {"homeless person", {"human", "low-status"}},
      {"criminal", {"human", "male", "low-status"}},
      {"dog", {"animal"}},
      {"cat", {"animal"}},
      {"passenger", {"passenger"}},
      {"pedestrian", {"pedestrian"}},
      {"crossing-on-green", {"lawful"}},
      {"crossing-on-red", {"unlawful"}},
  };

  const int d = static_cast<int>(features.size());
  Eigen::MatrixXi a = Eigen::MatrixXi::Zero(d, catalog.size());
  auto row = [&](const std::string& f) {
    return static_cast<int>(std::find(features.begin(), features.end(), f) - features.begin());
  };
  for (int k = 0; k < catalog.size(); ++k) {
    const auto& e = catalog.entities()[k];
    for (const auto& f : columns.at(e.name)) a(row(f), k) = 1;
    if (e.kind == EntityKind::character) a(row("group-size"), k) = 1;
  }
  return {std::move(catalog), FeatureMap(features, std::move(a))};
}

// Lambda = A * theta.
inline Eigen::VectorXi apply_feature_map(const FeatureMap& map, const Eigen::VectorXi& theta) {
  if (theta.size() != map.num_entities())
    throw std::invalid_argument("state vector has length " + std::to_string(theta.size()) +
                                ", feature map expects " + std::to_string(map.num_entities()));
  if ((theta.array() < 0).any()) throw std::invalid_argument("state vector has negative counts");
  return map.matrix() * theta;
}

// Empty result means valid.
inline std::vector<std::string> validate_catalog(const CharacterCatalog& catalog,
                                                 const FeatureMap& map) {
  std::vector<std::string> report;
  std::set<std::string> seen;
  for (const auto& e : catalog.entities()) {
    if (e.name.empty()) report.push_back("entity with empty name");
    if (!seen.insert(e.name).second) report.push_back("duplicate entity name '" + e.name + "'");
  }
  std::set<std::string> seen_features;
  for (const auto& f : map.features())
    if (!seen_features.insert(f).second) report.push_back("duplicate feature name '" + f + "'");

  if (map.num_entities() != catalog.size()) {
    report.push_back("matrix has " + std::to_string(map.num_entities()) + " columns but catalog has " +
                     std::to_string(catalog.size()) + " entities");
    return report;
  }
  if (static_cast<int>(map.features().size()) != map.num_features())
    report.push_back("matrix has " + std::to_string(map.num_features()) + " rows but " +
                     std::to_string(map.features().size()) + " feature names");
  if (map.num_features() > map.num_entities())
    report.push_back("more features than entities (D > K)");

  for (int r = 0; r < map.num_features(); ++r)
    for (int c = 0; c < map.num_entities(); ++c) {
      const int v = map.matrix()(r, c);
      if (v != 0 && v != 1)
        report.push_back("non-binary entry " + std::to_string(v) + " at (" + std::to_string(r) + ", " +
                         std::to_string(c) + ")");
    }
  for (int c = 0; c < map.num_entities(); ++c)
    if (catalog.entities()[c].kind == EntityKind::character && (map.matrix().col(c).array() == 0).all())
      report.push_back("all-zero column for entity '" + catalog.entities()[c].name + "'");
  return report;
}

// {version, entities:[{name,kind}], features:[name], matrix:[[0|1,...]]}
inline nlohmann::json catalog_to_json(const CatalogBundle& bundle) {
  nlohmann::json j;
  j["version"] = 1;
  j["entities"] = nlohmann::json::array();
  for (const auto& e : bundle.catalog.entities())
    j["entities"].push_back({{"name", e.name}, {"kind", to_string(e.kind)}});
  j["features"] = bundle.map.features();
  j["matrix"] = nlohmann::json::array();
  for (int r = 0; r < bundle.map.num_features(); ++r) {
    std::vector<int> row(bundle.map.num_entities());
    for (int c = 0; c < bundle.map.num_entities(); ++c) row[c] = bundle.map.matrix()(r, c);
    j["matrix"].push_back(row);
  }
  return j;
}

inline CatalogBundle catalog_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("entities") || !j.contains("features") || !j.contains("matrix"))
    throw std::invalid_argument("catalog document needs entities, features and matrix");
  std::vector<Entity> entities;
  for (const auto& e : j.at("entities"))
    entities.push_back({e.at("name").get<std::string>(),
                        entity_kind_from_string(e.at("kind").get<std::string>())});
  auto features = j.at("features").get<std::vector<std::string>>();
  const auto& rows = j.at("matrix");
  if (rows.size() != features.size())
    throw std::invalid_argument("matrix row count does not match feature count");
  Eigen::MatrixXi a(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(entities.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != entities.size())
      throw std::invalid_argument("matrix row " + std::to_string(r) + " has wrong length");
    for (std::size_t c = 0; c < entities.size(); ++c) a(r, c) = rows[r][c].get<int>();
  }
  return {CharacterCatalog(std::move(entities)), FeatureMap(std::move(features), std::move(a))};
}

}  // namespace moralhbm
