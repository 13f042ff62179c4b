#pragma once

// File formats: JSON-lines dilemmas and judgments, parameter dumps, sample
// tables (CSV plus a JSON diagnostics sidecar), and result CSVs.

#include <Eigen/Core>

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "moralhbm/benchmarks.hpp"
#include "moralhbm/catalog.hpp"
#include "moralhbm/choice_model.hpp"
#include "moralhbm/diagnostics.hpp"
#include "moralhbm/evaluation.hpp"
#include "moralhbm/fit.hpp"

namespace moralhbm {

using nlohmann::json;

// Bad input data, as opposed to bad usage or a failed computation.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest round-trip decimal form; locale independent.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

inline void write_json_file(const std::string& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
  auto in = open_input(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// JSON lines

namespace detail {
template <class F>
void for_each_line(std::istream& in, const std::string& source, F&& f) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const std::exception& e) {
      throw DataError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

inline StateVector state_from_json(const json& j, int num_entities, const char* field) {
  if (!j.is_array()) throw std::invalid_argument(std::string(field) + " must be an array");
  if (static_cast<int>(j.size()) != num_entities)
    throw std::invalid_argument(std::string(field) + " has " + std::to_string(j.size()) + " entries, expected " +
                                std::to_string(num_entities));
  StateVector s{Eigen::VectorXi(num_entities)};
  for (int k = 0; k < num_entities; ++k) {
    if (!j[k].is_number_integer() || j[k].get<int>() < 0)
      throw std::invalid_argument(std::string(field) + " entries must be non-negative integers");
    s.counts(k) = j[k].get<int>();
  }
  return s;
}
}  // namespace detail

inline json dilemma_to_json(const Dilemma& d) {
  return {{"id", d.id},
          {"theta_stay", std::vector<int>(d.stay.counts.data(), d.stay.counts.data() + d.stay.counts.size())},
          {"theta_swerve", std::vector<int>(d.swerve.counts.data(), d.swerve.counts.data() + d.swerve.counts.size())}};
}

inline Dilemma dilemma_from_json(const json& j, int num_entities) {
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
    throw std::invalid_argument("dilemma needs a string id");
  if (!j.contains("theta_stay") || !j.contains("theta_swerve"))
    throw std::invalid_argument("dilemma needs theta_stay and theta_swerve");
  return {j["id"].get<std::string>(), detail::state_from_json(j["theta_stay"], num_entities, "theta_stay"),
          detail::state_from_json(j["theta_swerve"], num_entities, "theta_swerve")};
}

inline json judgment_to_json(const Judgment& j) {
  json out = {{"respondent_id", j.respondent_id}, {"dilemma_id", j.dilemma_id}, {"choice", j.choice}};
  if (j.response_time) out["response_time"] = *j.response_time;
  return out;
}

inline Judgment judgment_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("judgment must be an object");
  for (const char* key : {"respondent_id", "dilemma_id"})
    if (!j.contains(key) || !j[key].is_string()) throw std::invalid_argument(std::string("missing string ") + key);
  if (!j.contains("choice") || !j["choice"].is_number_integer()) throw std::invalid_argument("missing integer choice");
  Judgment out{j["respondent_id"].get<std::string>(), j["dilemma_id"].get<std::string>(), j["choice"].get<int>(),
               std::nullopt};
  if (out.choice != 0 && out.choice != 1) throw std::invalid_argument("choice must be 0 or 1");
  if (j.contains("response_time") && !j["response_time"].is_null()) {
    if (!j["response_time"].is_number()) throw std::invalid_argument("response_time must be a number");
    out.response_time = j["response_time"].get<double>();
  }
  return out;
}

inline std::vector<Dilemma> read_dilemmas(std::istream& in, int num_entities, const std::string& source = "dilemmas") {
  std::vector<Dilemma> out;
  detail::for_each_line(in, source, [&](const json& j) { out.push_back(dilemma_from_json(j, num_entities)); });
  return out;
}

inline void write_dilemmas(std::ostream& out, const std::vector<Dilemma>& dilemmas) {
  for (const auto& d : dilemmas) out << dilemma_to_json(d).dump() << '\n';
}

inline void write_judgments(std::ostream& out, const Dataset& data) {
  for (const auto& r : data.respondents())
    for (const auto& j : r.judgments) out << judgment_to_json(j).dump() << '\n';
}

// Dilemmas first, then judgments checked against them (line-numbered errors).
inline Dataset read_dataset(std::istream& dilemmas, std::istream& judgments, int num_entities,
                            const std::string& dilemma_source = "dilemmas",
                            const std::string& judgment_source = "judgments") {
  Dataset data;
  for (auto& d : read_dilemmas(dilemmas, num_entities, dilemma_source)) {
    if (data.has_dilemma(d.id)) throw DataError(dilemma_source + ": duplicate dilemma id '" + d.id + "'");
    data.add_dilemma(std::move(d));
  }
  detail::for_each_line(judgments, judgment_source, [&](const json& j) {
    Judgment jd = judgment_from_json(j);
    const std::string group = j.contains("group") && j["group"].is_string() ? j["group"].get<std::string>() : "default";
    data.add_judgment(std::move(jd), group);
  });
  return data;
}

inline Dataset read_dataset_files(const std::string& dilemmas_path, const std::string& judgments_path,
                                  int num_entities) {
  auto d = open_input(dilemmas_path);
  auto j = open_input(judgments_path);
  return read_dataset(d, j, num_entities, dilemmas_path, judgments_path);
}

// ---------------------------------------------------------------------------
// Parameter dumps: {group_mean, scales, correlation, individuals}

inline json group_to_json(const GroupNorm& g, const std::vector<std::string>& features) {
  const Eigen::MatrixXd omega = g.correlation();
  json corr = json::array();
  for (Eigen::Index i = 0; i < omega.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < omega.cols(); ++j) row.push_back(omega(i, j));
    corr.push_back(row);
  }
  return {{"features", features},
          {"group_mean", std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size())},
          {"scales", std::vector<double>(g.scales.data(), g.scales.data() + g.scales.size())},
          {"correlation", corr}};
}

inline json population_to_json(const SyntheticPopulation& pop, const std::vector<std::string>& features) {
  json out = group_to_json(pop.group, features);
  json ind = json::object();
  for (std::size_t i = 0; i < pop.respondents.size(); ++i) {
    const Eigen::VectorXd w = pop.weights.col(static_cast<Eigen::Index>(i));
    ind[pop.respondents[i]] = std::vector<double>(w.data(), w.data() + w.size());
  }
  out["individuals"] = ind;
  return out;
}

inline Eigen::VectorXd vector_from_json(const json& j, const char* field) {
  if (!j.is_array()) throw DataError(std::string(field) + " must be an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw DataError(std::string(field) + " must hold numbers");
    v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index dim, const char* field) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != dim) throw DataError(std::string(field) + " has wrong shape");
  Eigen::MatrixXd m(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    const Eigen::VectorXd row = vector_from_json(j[i], field);
    if (row.size() != dim) throw DataError(std::string(field) + " has wrong shape");
    m.row(i) = row.transpose();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Sample tables

struct DrawColumn {
  std::string name;
  std::string kind;        // group_mean, scale, correlation, weight
  std::string respondent;  // weights of one respondent; empty when shared
  int index = -1;          // feature (or entity) index; row index for correlations
  int index2 = -1;         // column index for correlations
};

struct DrawTable {
  std::string model;
  std::string space;  // "features" or "entities"
  std::vector<std::string> names;  // feature or entity names
  std::vector<DrawColumn> columns;
  int chains = 0;
  int draws_per_chain = 0;
  Eigen::MatrixXd values;  // (chains * draws_per_chain) x columns, chain-major
  int divergences = 0;
  double accept_rate = 0.0;

  std::vector<Eigen::VectorXd> column_chains(int k) const {
    std::vector<Eigen::VectorXd> out;
    for (int c = 0; c < chains; ++c) out.push_back(values.col(k).segment(c * draws_per_chain, draws_per_chain));
    return out;
  }
};

inline DrawTable draw_table(const HierarchicalFit& fit) {
  DrawTable t;
  t.model = "hier";
  t.space = "features";
  t.names = fit.features;
  const int d = fit.dims.features;
  for (int k = 0; k < d; ++k) t.columns.push_back({"group_mean[" + fit.features[k] + "]", "group_mean", "", k, -1});
  for (int k = 0; k < d; ++k) t.columns.push_back({"scale[" + fit.features[k] + "]", "scale", "", k, -1});
  for (int i = 1; i < d; ++i)
    for (int j = 0; j < i; ++j)
      t.columns.push_back(
          {"correlation[" + fit.features[i] + "," + fit.features[j] + "]", "correlation", "", i, j});
  for (const auto& id : fit.respondents)
    for (int k = 0; k < d; ++k) t.columns.push_back({"w[" + id + "][" + fit.features[k] + "]", "weight", id, k, -1});
  t.chains = fit.samples.num_chains();
  t.draws_per_chain = fit.samples.draws_per_chain();
  t.values.resize(static_cast<Eigen::Index>(t.chains) * t.draws_per_chain, static_cast<Eigen::Index>(t.columns.size()));
  Eigen::Index row = 0;
  for (int c = 0; c < t.chains; ++c)
    for (int s = 0; s < t.draws_per_chain; ++s, ++row) {
      const HierarchicalParams p = fit.draw(c, s);
      const Eigen::MatrixXd omega = p.group.correlation();
      const Eigen::MatrixXd w = p.individuals();
      Eigen::Index col = 0;
      for (int k = 0; k < d; ++k) t.values(row, col++) = p.group.mean(k);
      for (int k = 0; k < d; ++k) t.values(row, col++) = p.group.scales(k);
      for (int i = 1; i < d; ++i)
        for (int j = 0; j < i; ++j) t.values(row, col++) = omega(i, j);
      for (int i = 0; i < w.cols(); ++i)
        for (int k = 0; k < d; ++k) t.values(row, col++) = w(k, i);
    }
  t.divergences = fit.samples.divergences();
  t.accept_rate = fit.samples.accept_rate();
  return t;
}

inline DrawTable draw_table(const PooledFit& fit, const std::string& model, const std::string& space) {
  DrawTable t;
  t.model = model;
  t.space = space;
  t.names = fit.names;
  for (std::size_t k = 0; k < fit.names.size(); ++k)
    t.columns.push_back({"w[" + fit.names[k] + "]", "weight", "", static_cast<int>(k), -1});
  t.chains = fit.samples.num_chains();
  t.draws_per_chain = fit.samples.draws_per_chain();
  t.values = fit.samples.stacked();
  t.divergences = fit.samples.divergences();
  t.accept_rate = fit.samples.accept_rate();
  return t;
}

inline DrawTable draw_table(const std::vector<IndividualFit>& fits, const std::vector<std::string>& features,
                            const SamplerConfig& sampler) {
  DrawTable t;
  t.model = "b3";
  t.space = "features";
  t.names = features;
  const int d = static_cast<int>(features.size());
  t.chains = sampler.chains;
  t.draws_per_chain = sampler.sample_iters;
  t.values.resize(static_cast<Eigen::Index>(t.chains) * t.draws_per_chain,
                  static_cast<Eigen::Index>(fits.size()) * d);
  double accept = 0.0;
  int fitted = 0;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    for (int k = 0; k < d; ++k)
      t.columns.push_back({"w[" + fits[i].respondent_id + "][" + features[k] + "]", "weight", fits[i].respondent_id, k, -1});
    t.values.middleCols(static_cast<Eigen::Index>(i) * d, d) = fits[i].draws;
    if (!fits[i].prior_only) {
      t.divergences += fits[i].samples.divergences();
      accept += fits[i].samples.accept_rate();
      ++fitted;
    }
  }
  t.accept_rate = fitted ? accept / fitted : 0.0;
  return t;
}

inline void write_samples_csv(std::ostream& out, const DrawTable& t) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  out << "chain,iter";
  for (const auto& c : t.columns) out << ',' << quote(c.name);
  out << '\n';
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    out << r / t.draws_per_chain << ',' << r % t.draws_per_chain;
    for (Eigen::Index k = 0; k < t.values.cols(); ++k) out << ',' << format_double(t.values(r, k));
    out << '\n';
  }
}

struct TableDiagnostics {
  std::vector<Diagnostic> r_hat, ess;
  double max_r_hat = 0.0;  // over non-degenerate columns
};

inline TableDiagnostics diagnose(const DrawTable& t) {
  TableDiagnostics d;
  for (std::size_t k = 0; k < t.columns.size(); ++k) {
    const auto chains = t.column_chains(static_cast<int>(k));
    Diagnostic r;
    r.degenerate = true;
    if (t.chains >= 2 && t.draws_per_chain >= 8) r = r_hat(chains);
    Diagnostic e;
    e.degenerate = true;
    if (t.draws_per_chain >= 4) e = ess(chains);
    if (!r.degenerate) d.max_r_hat = std::max(d.max_r_hat, r.value);
    d.r_hat.push_back(r);
    d.ess.push_back(e);
  }
  return d;
}

inline json diagnostics_json(const DrawTable& t, const TableDiagnostics& d) {
  auto num = [](const Diagnostic& x) { return x.degenerate ? json(nullptr) : json(x.value); };
  json cols = json::array(), rh = json::array(), es = json::array();
  for (std::size_t k = 0; k < t.columns.size(); ++k) {
    const auto& c = t.columns[k];
    json col = {{"name", c.name}, {"kind", c.kind}, {"index", c.index}};
    if (!c.respondent.empty()) col["respondent"] = c.respondent;
    if (c.index2 >= 0) col["index2"] = c.index2;
    cols.push_back(col);
    rh.push_back(num(d.r_hat[k]));
    es.push_back(num(d.ess[k]));
  }
  return {{"model", t.model}, {"space", t.space},         {"names", t.names},
          {"chains", t.chains}, {"draws_per_chain", t.draws_per_chain}, {"divergences", t.divergences},
          {"accept_rate", t.accept_rate}, {"max_r_hat", d.max_r_hat}, {"columns", cols},
          {"r_hat", rh},        {"ess", es}};
}

inline json summary_json(const DrawTable& t) {
  json out = json::array();
  for (std::size_t k = 0; k < t.columns.size(); ++k) {
    const ParameterSummary s = summarize(t.values.col(static_cast<Eigen::Index>(k)));
    out.push_back({{"name", t.columns[k].name}, {"mean", s.mean}, {"sd", s.sd}, {"q05", s.q05}, {"q25", s.q25},
                   {"q50", s.q50}, {"q75", s.q75}, {"q95", s.q95}});
  }
  return out;
}

// Reads a samples CSV back (values only; the header is checked for width).
inline Eigen::MatrixXd read_samples_csv(std::istream& in, std::size_t columns, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty samples file");
  std::vector<std::vector<double>> rows;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    int field = 0;
    while (pos <= line.size()) {
      const std::size_t next = std::min(line.find(',', pos), line.size());
      if (field >= 2) {
        double v = 0.0;
        const auto res = std::from_chars(line.data() + pos, line.data() + next, v);
        if (res.ec != std::errc() || res.ptr != line.data() + next)
          throw DataError(source + ":" + std::to_string(number) + ": bad number");
        row.push_back(v);
      }
      ++field;
      pos = next + 1;
    }
    if (row.size() != columns)
      throw DataError(source + ":" + std::to_string(number) + ": expected " + std::to_string(columns) + " values");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < columns; ++k) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  return m;
}

// Rebuilds a weight posterior from a fit directory (diagnostics.json +
// samples.csv). Weights with a respondent become individual draws; shared
// weights or the group mean become the shared draws.
inline WeightPosterior load_weight_posterior(const std::string& dir, const CatalogBundle& bundle) {
  const json diag = read_json_file(dir + "/diagnostics.json");
  if (!diag.contains("columns") || !diag.contains("space")) throw DataError(dir + "/diagnostics.json: not a fit");
  const auto& cols = diag["columns"];
  auto in = open_input(dir + "/samples.csv");
  const Eigen::MatrixXd values = read_samples_csv(in, cols.size(), dir + "/samples.csv");
  if (values.rows() == 0) throw DataError(dir + "/samples.csv: no draws");

  WeightPosterior post;
  const std::string space = diag["space"].get<std::string>();
  post.map = space == "entities" ? FeatureMap::identity(bundle.catalog) : bundle.map;
  const auto names = diag["names"].get<std::vector<std::string>>();
  if (names != post.map.features()) throw DataError(dir + ": posterior names do not match the catalog");
  const int d = post.map.num_features();

  std::map<std::string, Eigen::MatrixXd> ind;
  Eigen::MatrixXd shared;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const std::string kind = cols[k]["kind"].get<std::string>();
    const int idx = cols[k]["index"].get<int>();
    const bool shared_col = kind == "group_mean" || (kind == "weight" && !cols[k].contains("respondent"));
    if (shared_col) {
      if (shared.size() == 0) shared = Eigen::MatrixXd::Zero(values.rows(), d);
      shared.col(idx) = values.col(static_cast<Eigen::Index>(k));
    } else if (kind == "weight") {
      auto& m = ind[cols[k]["respondent"].get<std::string>()];
      if (m.size() == 0) m = Eigen::MatrixXd::Zero(values.rows(), d);
      m.col(idx) = values.col(static_cast<Eigen::Index>(k));
    }
  }
  if (shared.size() > 0) post.shared = std::move(shared);
  post.individuals = std::move(ind);
  return post;
}

// ---------------------------------------------------------------------------
// Result tables

inline void write_learning_curve_csv(std::ostream& out, const LearningCurveResult& res) {
  out << "model,N,seed,accuracy\n";
  for (const auto& c : res.cells)
    out << to_string(c.model) << ',' << c.respondents << ',' << c.seed << ',' << format_double(c.accuracy) << '\n';
}

inline json learning_curve_json(const ExperimentSpec& spec, const LearningCurveResult& res) {
  json rows = json::array();
  for (const ModelKind m : spec.models)
    for (const int n : spec.respondent_counts) {
      const auto s = res.summary(m, n);
      rows.push_back({{"model", to_string(m)}, {"N", n}, {"mean", s.mean}, {"sd", s.sd}, {"median", s.median},
                      {"seeds", s.count}});
    }
  std::vector<std::string> models;
  for (const ModelKind m : spec.models) models.push_back(to_string(m));
  return {{"respondent_counts", spec.respondent_counts},
          {"train_per_respondent", spec.train_per_respondent},
          {"test_per_respondent", spec.test_per_respondent},
          {"seeds", spec.seeds},
          {"models", models},
          {"summary", rows}};
}

inline void write_rt_csv(std::ostream& out, const RtAnalysis& rt) {
  out << "certainty_decile,mean_rt,count,rho\n";
  const std::string rho = rt.rho.degenerate ? "NA" : format_double(rt.rho.value);
  for (const auto& b : rt.bins) out << b.decile << ',' << format_double(b.mean_rt) << ',' << b.count << ',' << rho << '\n';
}

}  // namespace moralhbm
