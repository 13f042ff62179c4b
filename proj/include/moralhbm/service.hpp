#pragma once

// Live elicitation sessions. Each session keeps an append-only event log;
// every piece of posterior state is recomputed from that log, so replaying
// a log reproduces the session exactly.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "moralhbm/catalog.hpp"
#include "moralhbm/choice_model.hpp"
#include "moralhbm/diagnostics.hpp"
#include "moralhbm/evaluation.hpp"
#include "moralhbm/fit.hpp"
#include "moralhbm/inference.hpp"
#include "moralhbm/io.hpp"

namespace moralhbm {

using nlohmann::json;

class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }
  json to_json() const { return {{"code", code_}, {"message", what()}}; }

 private:
  int status_;
  std::string code_;
};

inline ServiceError unknown_session(const std::string& id) {
  return {404, "unknown_session", "no session '" + id + "'"};
}
inline ServiceError invalid_payload(const std::string& message) { return {422, "invalid_payload", message}; }

// Multivariate normal prior on one respondent's feature weights.
struct WeightPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  static WeightPrior standard(int dim) { return {Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Identity(dim, dim)}; }

  json to_json(const std::vector<std::string>& features) const {
    json cov = json::array();
    for (Eigen::Index i = 0; i < covariance.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < covariance.cols(); ++j) row.push_back(covariance(i, j));
      cov.push_back(row);
    }
    return {{"features", features},
            {"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"covariance", cov}};
  }
};

// Accepts {features, mean, covariance} or a group dump {features, group_mean,
// scales, correlation}; features must match the map in order.
inline WeightPrior weight_prior_from_json(const json& j, const FeatureMap& map) {
  if (!j.is_object()) throw DataError("prior must be a JSON object");
  const int d = map.num_features();
  if (j.contains("features") && j["features"].get<std::vector<std::string>>() != map.features())
    throw DataError("prior features do not match the catalog");
  WeightPrior p;
  if (j.contains("mean") && j.contains("covariance")) {
    p.mean = vector_from_json(j["mean"], "mean");
    if (p.mean.size() != d) throw DataError("prior mean has wrong dimension");
    p.covariance = matrix_from_json(j["covariance"], d, "covariance");
  } else if (j.contains("group_mean") && j.contains("scales") && j.contains("correlation")) {
    p.mean = vector_from_json(j["group_mean"], "group_mean");
    const Eigen::VectorXd tau = vector_from_json(j["scales"], "scales");
    if (p.mean.size() != d || tau.size() != d) throw DataError("prior has wrong dimension");
    if ((tau.array() <= 0.0).any()) throw DataError("prior scales must be positive");
    p.covariance = tau.asDiagonal() * matrix_from_json(j["correlation"], d, "correlation") * tau.asDiagonal();
  } else {
    throw DataError("prior needs mean/covariance or group_mean/scales/correlation");
  }
  if (!p.mean.allFinite() || !p.covariance.allFinite()) throw DataError("prior has non-finite entries");
  if (!p.covariance.isApprox(p.covariance.transpose(), 1e-9)) throw DataError("prior covariance is not symmetric");
  if (Eigen::LLT<Eigen::MatrixXd>(p.covariance).info() != Eigen::Success)
    throw DataError("prior covariance is not positive definite");
  return p;
}

// log p(y | w) + log N(w | m, S) up to a constant, for one respondent.
class GaussianLogisticModel {
 public:
  GaussianLogisticModel(Eigen::MatrixXd x, Eigen::VectorXd y, const WeightPrior& prior)
      : x_(std::move(x)), y_(std::move(y)), mean_(prior.mean) {
    const Eigen::LLT<Eigen::MatrixXd> llt(prior.covariance);
    precision_ = llt.solve(Eigen::MatrixXd::Identity(mean_.size(), mean_.size()));
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::MatrixXd& precision() const { return precision_; }

  double log_likelihood(const Eigen::VectorXd& w) const {
    const Eigen::VectorXd u = x_ * w;
    double ll = 0.0;
    for (Eigen::Index t = 0; t < u.size(); ++t) ll += y_(t) > 0.5 ? log_sigmoid(u(t)) : log_sigmoid(-u(t));
    return ll;
  }

  double log_density(const Eigen::VectorXd& w) const {
    const Eigen::VectorXd r = w - mean_;
    return log_likelihood(w) - 0.5 * r.dot(precision_ * r);
  }

  double log_density_gradient(const Eigen::VectorXd& w, Eigen::VectorXd& grad) const {
    const Eigen::VectorXd u = x_ * w;
    Eigen::VectorXd resid(u.size());
    for (Eigen::Index t = 0; t < u.size(); ++t) resid(t) = y_(t) - sigmoid(u(t));
    const Eigen::VectorXd r = w - mean_;
    grad = x_.transpose() * resid - precision_ * r;
    return log_density(w);
  }

  // Negative Hessian of the log density.
  Eigen::MatrixXd curvature(const Eigen::VectorXd& w) const {
    const Eigen::VectorXd u = x_ * w;
    Eigen::VectorXd s(u.size());
    for (Eigen::Index t = 0; t < u.size(); ++t) {
      const double p = sigmoid(u(t));
      s(t) = p * (1.0 - p);
    }
    return x_.transpose() * s.asDiagonal() * x_ + precision_;
  }

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd precision_;
};

// Logistic approximation of E[sigmoid(u)] for u ~ N(mu, var).
inline double probit_predictive(double mu, double var) {
  return sigmoid(mu / std::sqrt(1.0 + std::numbers::pi * var / 8.0));
}

inline json generator_to_json(const GeneratorConfig& g) {
  return {{"min_characters", g.min_characters},
          {"max_characters", g.max_characters},
          {"passenger_probability", g.passenger_probability},
          {"balanced", g.balanced}};
}

inline GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig g;
  g.min_characters = j.at("min_characters").get<int>();
  g.max_characters = j.at("max_characters").get<int>();
  g.passenger_probability = j.at("passenger_probability").get<double>();
  g.balanced = j.at("balanced").get<bool>();
  return g;
}

inline constexpr double kIntervalZ = 1.6448536269514722;  // central 90%

struct SessionConfig {
  std::uint64_t seed = 0;
  int candidates = 64;
  GeneratorConfig generator;
  WeightPrior prior;
};

struct RefineConfig {
  int chains = 4;
  int warmup = 500;
  int draws = 1000;
};

inline std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

class Session {
 public:
  using Clock = std::function<std::int64_t()>;

  Session(std::string id, const CatalogBundle& bundle, SessionConfig config, Clock clock = wall_clock_ms)
      : id_(std::move(id)), bundle_(bundle), config_(std::move(config)), clock_(std::move(clock)) {
    const int d = bundle_.map.num_features();
    if (config_.prior.mean.size() == 0) config_.prior = WeightPrior::standard(d);
    if (config_.prior.mean.size() != d) throw invalid_payload("prior has wrong dimension");
    if (config_.candidates < 1) throw invalid_payload("candidates must be positive");
    check_generator_config(config_.generator);
    created_at_ = clock_();
    append({{"event", "created"},
            {"session_id", id_},
            {"seed", config_.seed},
            {"candidates", config_.candidates},
            {"generator", generator_to_json(config_.generator)},
            {"prior", config_.prior.to_json(bundle_.map.features())},
            {"catalog", catalog_to_json(bundle_)},
            {"created_at", created_at_}});
    recompute();
  }

  // Rebuilds a session from its log. The catalog recorded in the log wins.
  static std::unique_ptr<Session> replay(const std::vector<json>& events, Clock clock = wall_clock_ms) {
    if (events.empty() || events.front().value("event", "") != "created") throw DataError("log lacks a created event");
    const json& h = events.front();
    const CatalogBundle bundle = catalog_from_json(h.at("catalog"));
    SessionConfig cfg;
    cfg.seed = h.at("seed").get<std::uint64_t>();
    cfg.candidates = h.at("candidates").get<int>();
    cfg.generator = generator_from_json(h.at("generator"));
    cfg.prior = weight_prior_from_json(h.at("prior"), bundle.map);
    std::unique_ptr<Session> s(new Session(h.at("session_id").get<std::string>(), bundle, cfg, std::move(clock), 0));
    s->created_at_ = h.at("created_at").get<std::int64_t>();
    s->log_.push_back(h);
    for (std::size_t i = 1; i < events.size(); ++i) s->apply(events[i]);
    return s;
  }

  const std::string& id() const { return id_; }
  const std::vector<json>& log() const { return log_; }
  const CatalogBundle& bundle() const { return bundle_; }
  std::size_t num_judgments() const { return answered_.size(); }

  // Called with each new log line (persistence hook).
  void on_append(std::function<void(const json&)> sink) { sink_ = std::move(sink); }

  json next() {
    if (!pending_) {
      const Selection sel = select(turn_);
      append({{"event", "served"},
              {"turn", turn_},
              {"dilemma", dilemma_to_json(sel.dilemma)},
              {"selection_score", sel.certainty},
              {"predicted_swerve_probability", sel.p},
              {"candidate_mean_certainty", sel.pool_certainty},
              {"served_at", clock_()}});
      apply_served(log_.back());
    }
    return next_response();
  }

  json judge(const json& body) {
    if (!body.is_object()) throw invalid_payload("body must be a JSON object");
    if (!body.contains("dilemma_id") || !body["dilemma_id"].is_string()) throw invalid_payload("missing dilemma_id");
    if (!body.contains("choice") || !body["choice"].is_number_integer()) throw invalid_payload("missing integer choice");
    const std::string did = body["dilemma_id"].get<std::string>();
    const int choice = body["choice"].get<int>();
    if (choice != 0 && choice != 1) throw invalid_payload("choice must be 0 or 1");
    std::optional<double> rt_ms;
    if (body.contains("response_time_ms") && !body["response_time_ms"].is_null()) {
      if (!body["response_time_ms"].is_number()) throw invalid_payload("response_time_ms must be a number");
      rt_ms = body["response_time_ms"].get<double>();
      if (!(*rt_ms > 0.0) || !std::isfinite(*rt_ms)) throw invalid_payload("response_time_ms must be positive");
    }
    if (answered_ids_.count(did)) throw ServiceError(409, "already_answered", "dilemma '" + did + "' was already answered");
    if (!pending_ || pending_->dilemma.id != did)
      throw invalid_payload("dilemma '" + did + "' was not served to this session");
    json ev = {{"event", "judgment"}, {"dilemma_id", did}, {"choice", choice}, {"recorded_at", clock_()}};
    ev["response_time_ms"] = rt_ms ? json(*rt_ms) : json(nullptr);
    append(ev);
    apply_judgment(log_.back());
    return posterior();
  }

  json refine(const json& body) {
    RefineConfig rc;
    if (!body.is_null() && !body.is_object()) throw invalid_payload("body must be a JSON object");
    if (body.is_object()) {
      auto read = [&](const char* key, int& v, int lo, int hi) {
        if (!body.contains(key)) return;
        if (!body[key].is_number_integer()) throw invalid_payload(std::string(key) + " must be an integer");
        v = body[key].get<int>();
        if (v < lo || v > hi) throw invalid_payload(std::string(key) + " out of range");
      };
      read("chains", rc.chains, 1, 16);
      read("warmup", rc.warmup, 10, 20000);
      read("draws", rc.draws, 10, 20000);
    }
    append({{"event", "refine"}, {"chains", rc.chains}, {"warmup", rc.warmup}, {"draws", rc.draws}});
    apply_refine(log_.back());
    return posterior();
  }

  json posterior() const {
    json feats = json::array();
    const auto& names = bundle_.map.features();
    for (int k = 0; k < static_cast<int>(names.size()); ++k)
      feats.push_back({{"name", names[k]},
                       {"mean", state_.mean(k)},
                       {"sd", state_.sd(k)},
                       {"lower", state_.lower(k)},
                       {"upper", state_.upper(k)}});
    json out = {{"session_id", id_},
                {"judgments", answered_.size()},
                {"method", state_.draws ? "hmc" : "laplace"},
                {"interval", 0.9},
                {"log_likelihood", state_.log_likelihood},
                {"prior_log_likelihood", state_.prior_log_likelihood},
                {"features", feats}};
    if (state_.draws) {
      out["divergences"] = state_.divergences;
      out["max_r_hat"] = state_.max_r_hat;
    }
    return out;
  }

  json history() const {
    json items = json::array();
    std::vector<double> cert, rts;
    for (const auto& a : answered_) {
      const double p = predictive(a.dilemma);
      const bool excluded = a.response_time_ms && *a.response_time_ms > kMaxResponseSeconds * 1000.0;
      items.push_back({{"dilemma", dilemma_to_json(a.dilemma)},
                       {"choice", a.choice},
                       {"response_time_ms", a.response_time_ms ? json(*a.response_time_ms) : json(nullptr)},
                       {"excluded_from_rt", excluded},
                       {"predicted_swerve_probability", p},
                       {"certainty", certainty(p)}});
      if (a.response_time_ms && !excluded) {
        cert.push_back(certainty(p));
        rts.push_back(*a.response_time_ms / 1000.0);
      }
    }
    json out = {{"session_id", id_}, {"created_at", created_at_}, {"judgments", items}};
    if (cert.size() >= 10) {
      const RtAnalysis rt = rt_analysis(cert, rts, 10);
      json bins = json::array();
      for (const auto& b : rt.bins)
        bins.push_back({{"certainty_decile", b.decile}, {"certainty_min", b.certainty_min},
                        {"certainty_max", b.certainty_max}, {"mean_rt", b.mean_rt}, {"count", b.count}});
      out["rt_table"] = {{"bins", bins}, {"rho", rt.rho.degenerate ? json(nullptr) : json(rt.rho.value)},
                         {"used", rt.used}};
    } else {
      out["rt_table"] = nullptr;
    }
    return out;
  }

  // Certainty of the posterior prediction for a dilemma under the current state.
  double predictive(const Dilemma& d) const {
    const Eigen::VectorXd x = feature_difference(d, bundle_.map);
    if (state_.draws) {
      const Eigen::VectorXd u = *state_.draws * x;
      double s = 0.0;
      for (Eigen::Index i = 0; i < u.size(); ++i) s += sigmoid(u(i));
      return s / static_cast<double>(u.size());
    }
    return probit_predictive(x.dot(state_.mode), x.dot(state_.covariance * x));
  }

 private:
  struct Answered {
    Dilemma dilemma;
    int choice = 0;
    std::optional<double> response_time_ms;
  };
  struct Pending {
    Dilemma dilemma;
    json response;
  };
  struct State {
    Eigen::VectorXd mode, mean, sd, lower, upper;
    Eigen::MatrixXd covariance;
    std::optional<Eigen::MatrixXd> draws;
    int divergences = 0;
    double max_r_hat = 0.0;
    double log_likelihood = 0.0, prior_log_likelihood = 0.0;
  };
  struct Selection {
    Dilemma dilemma;
    double p = 0.5, certainty = 0.0, pool_certainty = 0.0;
  };

  Session(std::string id, const CatalogBundle& bundle, SessionConfig config, Clock clock, int)
      : id_(std::move(id)), bundle_(bundle), config_(std::move(config)), clock_(std::move(clock)) {
    recompute();
  }

  void append(json ev) {
    log_.push_back(std::move(ev));
    if (sink_) sink_(log_.back());
  }

  void apply(const json& ev) {
    log_.push_back(ev);
    const std::string kind = ev.value("event", "");
    if (kind == "served") {
      apply_served(ev);
    } else if (kind == "judgment") {
      apply_judgment(ev);
    } else if (kind == "refine") {
      apply_refine(ev);
    } else {
      throw DataError("unknown log event '" + kind + "'");
    }
  }

  Selection select(int turn) const {
    std::mt19937_64 rng(derive_seed(config_.seed, "turn/" + std::to_string(turn)));
    const std::string did = id_ + "-t" + std::to_string(turn);
    Selection best;
    double pool = 0.0;
    for (int c = 0; c < config_.candidates; ++c) {
      Dilemma d = generate_dilemma(rng, bundle_.catalog, config_.generator, did);
      const double p = predictive(d);
      const double cert = certainty(p);
      pool += cert;
      if (c == 0 || cert < best.certainty) best = {std::move(d), p, cert, 0.0};
    }
    best.pool_certainty = pool / config_.candidates;
    return best;
  }

  void apply_served(const json& ev) {
    if (pending_) throw DataError("log serves a dilemma while another is pending");
    Dilemma d = dilemma_from_json(ev.at("dilemma"), bundle_.catalog.size());
    json resp = {{"session_id", id_},
                 {"turn", ev.at("turn")},
                 {"dilemma", dilemma_to_json(d)},
                 {"selection_score", ev.at("selection_score")},
                 {"predicted_swerve_probability", ev.at("predicted_swerve_probability")},
                 {"candidate_mean_certainty", ev.at("candidate_mean_certainty")},
                 {"served_at", ev.at("served_at")}};
    pending_ = Pending{std::move(d), std::move(resp)};
    ++turn_;
  }

  void apply_judgment(const json& ev) {
    const std::string did = ev.at("dilemma_id").get<std::string>();
    if (!pending_ || pending_->dilemma.id != did) throw DataError("log answers a dilemma that is not pending");
    Answered a{pending_->dilemma, ev.at("choice").get<int>(), std::nullopt};
    if (!ev.at("response_time_ms").is_null()) a.response_time_ms = ev.at("response_time_ms").get<double>();
    answered_ids_.insert(did);
    answered_.push_back(std::move(a));
    pending_.reset();
    recompute();
  }

  void apply_refine(const json& ev) {
    const GaussianLogisticModel model = make_model();
    SamplerConfig sc;
    sc.chains = ev.at("chains").get<int>();
    sc.warmup_iters = ev.at("warmup").get<int>();
    sc.sample_iters = ev.at("draws").get<int>();
    sc.seed = derive_seed(config_.seed, "refine/" + std::to_string(refinements_++));
    const PosteriorSamples samples = hmc_sample(model, state_.mode, sc);
    const Eigen::MatrixXd draws = samples.stacked();
    state_.divergences = samples.divergences();
    state_.max_r_hat = 0.0;
    for (int k = 0; k < samples.dim; ++k) {
      const Diagnostic r = sc.chains >= 2 ? r_hat(samples.coordinate(k)) : Diagnostic{};
      if (!r.degenerate && std::isfinite(r.value)) state_.max_r_hat = std::max(state_.max_r_hat, r.value);
    }
    const auto sums = summarize_columns(draws);
    for (int k = 0; k < model.dim(); ++k) {
      state_.mean(k) = sums[k].mean;
      state_.sd(k) = sums[k].sd;
      state_.lower(k) = sums[k].q05;
      state_.upper(k) = sums[k].q95;
    }
    state_.log_likelihood = model.log_likelihood(state_.mean);
    state_.draws = draws;
  }

  GaussianLogisticModel make_model() const {
    const int d = bundle_.map.num_features();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(answered_.size()), d);
    Eigen::VectorXd y(x.rows());
    for (std::size_t t = 0; t < answered_.size(); ++t) {
      x.row(static_cast<Eigen::Index>(t)) = feature_difference(answered_[t].dilemma, bundle_.map).transpose();
      y(static_cast<Eigen::Index>(t)) = answered_[t].choice;
    }
    return {std::move(x), std::move(y), config_.prior};
  }

  // Warm-started MAP plus Laplace curvature.
  void recompute() {
    const GaussianLogisticModel model = make_model();
    const Eigen::VectorXd start = state_.mode.size() ? state_.mode : config_.prior.mean;
    Eigen::VectorXd mode = start;
    if (!answered_.empty()) {
      const MapResult m = map_estimate(model, start, {.grad_tol = 1e-10, .max_iters = 5000});
      mode = m.x;
    }
    State s;
    s.mode = mode;
    s.mean = mode;
    const Eigen::MatrixXd h = model.curvature(mode);
    s.covariance = h.llt().solve(Eigen::MatrixXd::Identity(h.rows(), h.cols()));
    s.sd = s.covariance.diagonal().cwiseSqrt();
    s.lower = s.mean - kIntervalZ * s.sd;
    s.upper = s.mean + kIntervalZ * s.sd;
    s.log_likelihood = model.log_likelihood(mode);
    s.prior_log_likelihood = model.log_likelihood(config_.prior.mean);
    state_ = std::move(s);
  }

  json next_response() const { return pending_->response; }

  std::string id_;
  CatalogBundle bundle_;
  SessionConfig config_;
  Clock clock_;
  std::function<void(const json&)> sink_;
  std::int64_t created_at_ = 0;
  std::vector<json> log_;
  std::vector<Answered> answered_;
  std::set<std::string> answered_ids_;
  std::optional<Pending> pending_;
  int turn_ = 0;
  int refinements_ = 0;
  State state_;
};

struct ServiceConfig {
  std::uint64_t seed = 0;
  std::string log_dir;  // empty: in-memory only
  int candidates = 64;
  GeneratorConfig generator;
  std::optional<WeightPrior> prior;  // default prior for new sessions
  Session::Clock clock = wall_clock_ms;
};

// Session index. Requests on one session are serialized by its own mutex;
// different sessions proceed concurrently.
class SessionManager {
 public:
  SessionManager(CatalogBundle bundle, ServiceConfig config) : bundle_(std::move(bundle)), config_(std::move(config)) {
    if (!config_.log_dir.empty()) {
      std::filesystem::create_directories(config_.log_dir);
      load_logs();
    }
  }

  const CatalogBundle& bundle() const { return bundle_; }

  // Options: {"prior": {...}, "seed": n, "candidates": m}; all optional.
  std::string create(const json& options = json::object()) {
    if (!options.is_null() && !options.is_object()) throw invalid_payload("body must be a JSON object");
    SessionConfig sc;
    sc.candidates = config_.candidates;
    sc.generator = config_.generator;
    if (config_.prior) sc.prior = *config_.prior;
    if (options.is_object()) {
      if (options.contains("prior")) {
        try {
          sc.prior = weight_prior_from_json(options["prior"], bundle_.map);
        } catch (const std::exception& e) {
          throw invalid_payload(std::string("bad prior: ") + e.what());
        }
      }
      if (options.contains("candidates")) {
        if (!options["candidates"].is_number_integer() || options["candidates"].get<int>() < 1)
          throw invalid_payload("candidates must be a positive integer");
        sc.candidates = options["candidates"].get<int>();
      }
    }
    std::lock_guard lock(index_mutex_);
    std::string id;
    do {
      id = make_id(counter_++);
    } while (sessions_.count(id));
    sc.seed = options.is_object() && options.contains("seed") && options["seed"].is_number_unsigned()
                  ? options["seed"].get<std::uint64_t>()
                  : derive_seed(config_.seed, id);
    auto entry = std::make_shared<Entry>();
    entry->session = std::make_unique<Session>(id, bundle_, sc, config_.clock);
    if (!config_.log_dir.empty()) attach_log(*entry, true);
    sessions_[id] = entry;
    return id;
  }

  template <class F>
  auto with_session(const std::string& id, F&& f) {
    std::shared_ptr<Entry> e;
    {
      std::lock_guard lock(index_mutex_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw unknown_session(id);
      e = it->second;
    }
    std::lock_guard lock(e->mutex);
    return f(*e->session);
  }

  json next(const std::string& id) {
    return with_session(id, [](Session& s) { return s.next(); });
  }
  json judge(const std::string& id, const json& body) {
    return with_session(id, [&](Session& s) { return s.judge(body); });
  }
  json posterior(const std::string& id) {
    return with_session(id, [](Session& s) { return s.posterior(); });
  }
  json history(const std::string& id) {
    return with_session(id, [](Session& s) { return s.history(); });
  }
  json refine(const std::string& id, const json& body) {
    return with_session(id, [&](Session& s) { return s.refine(body); });
  }

  std::vector<std::string> ids() const {
    std::lock_guard lock(index_mutex_);
    std::vector<std::string> out;
    for (const auto& [id, e] : sessions_) out.push_back(id);
    return out;
  }

 private:
  struct Entry {
    std::mutex mutex;
    std::unique_ptr<Session> session;
    std::shared_ptr<std::ofstream> out;
  };

  std::string make_id(std::uint64_t n) const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(derive_seed(config_.seed, "session/" + std::to_string(n))));
    return std::string("s") + buf;
  }

  std::string log_path(const std::string& id) const { return config_.log_dir + "/" + id + ".jsonl"; }

  void attach_log(Entry& e, bool write_existing) {
    e.out = std::make_shared<std::ofstream>(log_path(e.session->id()), std::ios::app);
    if (!*e.out) throw std::runtime_error("cannot write session log for " + e.session->id());
    auto out = e.out;
    if (write_existing)
      for (const auto& ev : e.session->log()) *out << ev.dump() << '\n' << std::flush;
    e.session->on_append([out](const json& ev) { *out << ev.dump() << '\n' << std::flush; });
  }

  void load_logs() {
    std::vector<std::filesystem::path> files;
    for (const auto& f : std::filesystem::directory_iterator(config_.log_dir))
      if (f.path().extension() == ".jsonl") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto entry = std::make_shared<Entry>();
      entry->session = Session::replay(read_log(f.string()), config_.clock);
      attach_log(*entry, false);
      sessions_[entry->session->id()] = entry;
      ++counter_;
    }
  }

  CatalogBundle bundle_;
  ServiceConfig config_;
  mutable std::mutex index_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t counter_ = 0;

 public:
  static std::vector<json> read_log(const std::string& path) {
    auto in = open_input(path);
    std::vector<json> events;
    detail::for_each_line(in, path, [&](const json& j) { events.push_back(j); });
    return events;
  }
};

}  // namespace moralhbm
