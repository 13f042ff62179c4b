#include "moralhbm/catalog.hpp"

#include <random>
#include <set>

#include "gtest/gtest.h"

namespace moralhbm {
namespace {

std::set<std::string> nonzero_features(const CatalogBundle& b, const std::string& entity) {
  const int col = b.catalog.require_index(entity);
  std::set<std::string> out;
  for (int r = 0; r < b.map.num_features(); ++r)
    if (b.map.matrix()(r, col) != 0) out.insert(b.map.features()[r]);
  return out;
}

TEST(DefaultCatalog, ShapeIs18By24) {
  const auto b = default_catalog();
  EXPECT_EQ(b.catalog.size(), 24);
  EXPECT_EQ(b.map.num_features(), 18);
  EXPECT_EQ(b.map.num_entities(), 24);
  EXPECT_EQ(b.catalog.indices_of(EntityKind::character).size(), 20u);
  EXPECT_EQ(b.catalog.indices_of(EntityKind::contextual_factor).size(), 4u);
}

TEST(DefaultCatalog, Columns) {
  const auto b = default_catalog();
  EXPECT_EQ(nonzero_features(b, "dog"), (std::set<std::string>{"animal", "group-size"}));
  EXPECT_EQ(nonzero_features(b, "elderly woman"), (std::set<std::string>{"human", "female", "old", "group-size"}));
  EXPECT_EQ(nonzero_features(b, "crossing-on-red"), (std::set<std::string>{"unlawful"}));
  // group-size is 1 for characters and 0 for contextual factors.
  const int gs = b.map.require_index("group-size");
  for (int k = 0; k < b.catalog.size(); ++k)
    EXPECT_EQ(b.map.matrix()(gs, k), b.catalog.entities()[k].kind == EntityKind::character ? 1 : 0);
}

TEST(DefaultCatalog, PassesValidation) {
  const auto b = default_catalog();
  EXPECT_TRUE(validate_catalog(b.catalog, b.map).empty());
}

TEST(ValidateCatalog, ReportsZeroColumn) {
  auto b = default_catalog();
  Eigen::MatrixXi a = b.map.matrix();
  a.col(b.catalog.require_index("cat")).setZero();
  const auto report = validate_catalog(b.catalog, FeatureMap(b.map.features(), a));
  ASSERT_EQ(report.size(), 1u);
  EXPECT_NE(report[0].find("cat"), std::string::npos);
}

TEST(ValidateCatalog, ReportsNonBinaryEntry) {
  auto b = default_catalog();
  Eigen::MatrixXi a = b.map.matrix();
  a(0, 0) = 2;
  const auto report = validate_catalog(b.catalog, FeatureMap(b.map.features(), a));
  ASSERT_EQ(report.size(), 1u);
  EXPECT_NE(report[0].find("non-binary entry"), std::string::npos);
}

TEST(ValidateCatalog, ReportsDuplicateNamesAndShape) {
  CharacterCatalog dup({{"a", EntityKind::character}, {"a", EntityKind::character}});
  FeatureMap map({"f"}, Eigen::MatrixXi::Ones(1, 2));
  EXPECT_EQ(validate_catalog(dup, map).size(), 1u);
  FeatureMap narrow({"f"}, Eigen::MatrixXi::Ones(1, 1));
  EXPECT_FALSE(validate_catalog(dup, narrow).empty());
}

TEST(ApplyFeatureMap, ZeroAndWorkedExample) {
  const auto b = default_catalog();
  EXPECT_TRUE((apply_feature_map(b.map, Eigen::VectorXi::Zero(24)).array() == 0).all());

  Eigen::VectorXi theta = Eigen::VectorXi::Zero(24);
  theta(b.catalog.require_index("elderly man")) = 2;
  theta(b.catalog.require_index("elderly woman")) = 1;
  const Eigen::VectorXi lambda = apply_feature_map(b.map, theta);
  EXPECT_EQ(lambda(b.map.require_index("old")), 3);
  EXPECT_EQ(lambda(b.map.require_index("group-size")), 3);
}

TEST(ApplyFeatureMap, RejectsBadInput) {
  const auto b = default_catalog();
  EXPECT_THROW(apply_feature_map(b.map, Eigen::VectorXi::Zero(23)), std::invalid_argument);
  Eigen::VectorXi neg = Eigen::VectorXi::Zero(24);
  neg(3) = -1;
  EXPECT_THROW(apply_feature_map(b.map, neg), std::invalid_argument);
}

TEST(ApplyFeatureMap, LinearityProperty) {
  const auto b = default_catalog();
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> count(0, 6), scale(0, 9);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXi ta(24), tb(24);
    for (int k = 0; k < 24; ++k) {
      ta(k) = count(rng);
      tb(k) = count(rng);
    }
    const int c = scale(rng);
    EXPECT_EQ(apply_feature_map(b.map, ta + tb), apply_feature_map(b.map, ta) + apply_feature_map(b.map, tb));
    EXPECT_EQ(apply_feature_map(b.map, c * ta), c * apply_feature_map(b.map, ta));
  }
}

TEST(CatalogJson, RoundTripIsIdentity) {
  const auto b = default_catalog();
  const auto back = catalog_from_json(nlohmann::json::parse(catalog_to_json(b).dump()));
  EXPECT_EQ(back.catalog, b.catalog);
  EXPECT_EQ(back.map, b.map);
}

TEST(CatalogJson, RejectsMalformed) {
  auto j = catalog_to_json(default_catalog());
  j["matrix"].erase(0);
  EXPECT_THROW(catalog_from_json(j), std::invalid_argument);
  EXPECT_THROW(catalog_from_json(nlohmann::json::object()), std::invalid_argument);
}

}  // namespace
}  // namespace moralhbm
