// moralhbm: generate, fit, predict, evaluate, recover, rt, serve.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "moralhbm/benchmarks.hpp"
#include "moralhbm/catalog.hpp"
#include "moralhbm/evaluation.hpp"
#include "moralhbm/fit.hpp"
#include "moralhbm/io.hpp"
#include "moralhbm/service.hpp"
#include "moralhbm/service_http.hpp"

namespace fs = std::filesystem;
using namespace moralhbm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitConvergence = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string input, output, catalog, dilemmas, judgments, posterior, respondent, prior_file, sessions_dir;
  std::string model = "hier";
  std::string group_mean_prior = "tied";
  std::string serve_addr = "127.0.0.1:8080";
  std::optional<std::uint64_t> seed;
  int chains = 4, warmup = 500, draws = 1000, max_steps = 128;
  double eta = 2.0, scale_sd = 1.0, prior_sd = 1.0, mu = 0.0;
  bool allow_nonconverged = false;
  int respondents = 4, recover_respondents = 64, judgments_per = 13, min_characters = 1, max_characters = 5;
  int candidates = 64, min_count = 30;
  std::vector<int> counts = {4, 8, 16, 32, 64, 128};
  int train = 8, test = 5;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> models = {"hier", "b1", "b2", "b3"};
  bool dry_run = false;
  bool response_times = false;
};

CatalogBundle load_catalog(const Options& o) {
  if (o.catalog.empty()) return default_catalog();
  try {
    CatalogBundle b = catalog_from_json(read_json_file(o.catalog));
    const auto problems = validate_catalog(b.catalog, b.map);
    if (!problems.empty()) throw DataError(o.catalog + ": " + problems.front());
    return b;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(o.catalog + ": " + e.what());
  }
}

std::uint64_t require_seed(const Options& o) {
  if (!o.seed) throw UsageError("--seed is required for this command");
  return *o.seed;
}

SamplerConfig sampler_config(const Options& o, std::uint64_t seed) {
  SamplerConfig s;
  s.chains = o.chains;
  s.warmup_iters = o.warmup;
  s.sample_iters = o.draws;
  s.max_leapfrog_steps = o.max_steps;
  s.seed = seed;
  return s;
}

PriorConfig prior_config(const Options& o, int dim) {
  PriorConfig p;
  p.eta = o.eta;
  p.scale_prior_sd = o.scale_sd;
  if (o.mu != 0.0) p.mu = Eigen::VectorXd::Constant(dim, o.mu);
  p.group_mean_prior = o.group_mean_prior == "identity" ? GroupMeanPrior::identity : GroupMeanPrior::tied;
  check_prior(p);
  return p;
}

BenchmarkConfig benchmark_config(const Options& o) {
  BenchmarkConfig b;
  b.prior_sd = o.prior_sd;
  b.prior_mean = o.mu;
  check_benchmark_config(b);
  return b;
}

GeneratorConfig generator_config(const Options& o) {
  GeneratorConfig g;
  g.min_characters = o.min_characters;
  g.max_characters = o.max_characters;
  check_generator_config(g);
  return g;
}

std::string data_file(const Options& o, const std::string& explicit_path, const std::string& name) {
  if (!explicit_path.empty()) return explicit_path;
  if (o.input.empty()) throw UsageError("--input (a data directory) or --" + name + " is required");
  return (fs::path(o.input) / (name + ".jsonl")).string();
}

Dataset load_data(const Options& o, const CatalogBundle& b) {
  return read_dataset_files(data_file(o, o.dilemmas, "dilemmas"), data_file(o, o.judgments, "judgments"),
                            b.catalog.size());
}

fs::path output_dir(const Options& o) {
  if (o.output.empty()) throw UsageError("--output is required");
  fs::create_directories(o.output);
  return o.output;
}

// ---------------------------------------------------------------------------

int cmd_catalog(const Options& o) {
  const json j = catalog_to_json(load_catalog(o));
  if (o.output.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    write_json_file(o.output, j);
  }
  return kExitOk;
}

int cmd_generate(const Options& o) {
  const CatalogBundle b = load_catalog(o);
  const std::uint64_t seed = require_seed(o);
  std::mt19937_64 rng(derive_seed(seed, "generate"));
  SyntheticPopulation pop =
      simulate_population(rng, b, prior_config(o, b.map.num_features()), generator_config(o), o.respondents,
                          o.judgments_per);
  if (o.response_times) plant_response_times(rng, pop, b.map);
  const fs::path dir = output_dir(o);
  {
    auto out = open_output((dir / "dilemmas.jsonl").string());
    write_dilemmas(out, pop.data.dilemmas());
  }
  {
    auto out = open_output((dir / "judgments.jsonl").string());
    write_judgments(out, pop.data);
  }
  write_json_file((dir / "truth.json").string(), population_to_json(pop, b.map.features()));
  std::cout << "wrote " << pop.data.num_judgments() << " judgments from " << o.respondents << " respondents to "
            << dir.string() << '\n';
  return kExitOk;
}

json posterior_means(const DrawTable& t, const HierarchicalFit* hier) {
  const Eigen::VectorXd m = t.values.colwise().mean().transpose();
  if (hier) {
    const int d = hier->dims.features;
    GroupNorm g = GroupNorm::standard(d);
    g.mean = m.head(d);
    g.scales = m.segment(d, d);
    // Mean correlation matrix; a convex combination of correlations is one.
    Eigen::MatrixXd omega = Eigen::MatrixXd::Identity(d, d);
    Eigen::Index col = 2 * d;
    for (int i = 1; i < d; ++i)
      for (int j = 0; j < i; ++j) omega(i, j) = omega(j, i) = m(col++);
    const Eigen::LLT<Eigen::MatrixXd> llt(omega);
    g.correlation_cholesky = llt.matrixL();
    json out = group_to_json(g, hier->features);
    json ind = json::object();
    for (std::size_t i = 0; i < hier->respondents.size(); ++i) {
      const Eigen::VectorXd w = m.segment(col + static_cast<Eigen::Index>(i) * d, d);
      ind[hier->respondents[i]] = std::vector<double>(w.data(), w.data() + w.size());
    }
    out["individuals"] = ind;
    return out;
  }
  json out = {{"names", t.names}};
  json ind = json::object();
  std::vector<double> shared(t.names.size(), 0.0);
  bool has_shared = false;
  for (std::size_t k = 0; k < t.columns.size(); ++k) {
    const auto& c = t.columns[k];
    if (c.respondent.empty()) {
      shared[c.index] = m(static_cast<Eigen::Index>(k));
      has_shared = true;
    } else {
      if (!ind.contains(c.respondent)) ind[c.respondent] = std::vector<double>(t.names.size(), 0.0);
      ind[c.respondent][c.index] = m(static_cast<Eigen::Index>(k));
    }
  }
  if (has_shared) out["weights"] = shared;
  if (!ind.empty()) out["individuals"] = ind;
  return out;
}

int cmd_fit(const Options& o) {
  const CatalogBundle b = load_catalog(o);
  const std::uint64_t seed = require_seed(o);
  const Dataset data = load_data(o, b);
  const ModelKind kind = model_kind_from_string(o.model);
  const SamplerConfig sampler = sampler_config(o, seed);
  check_sampler_config(sampler);

  DrawTable table;
  std::optional<HierarchicalFit> hier;
  switch (kind) {
    case ModelKind::hierarchical:
      hier = fit_hierarchical(data, b.map, prior_config(o, b.map.num_features()), sampler);
      table = draw_table(*hier);
      break;
    case ModelKind::b1:
      table = draw_table(fit_benchmark1(data, b.catalog, benchmark_config(o), sampler), "b1", "entities");
      break;
    case ModelKind::b2:
      table = draw_table(fit_benchmark2(data, b.map, benchmark_config(o), sampler), "b2", "features");
      break;
    case ModelKind::b3:
      table = draw_table(fit_benchmark3(data, b.map, benchmark_config(o), sampler), b.map.features(), sampler);
      break;
  }

  const fs::path dir = output_dir(o);
  {
    auto out = open_output((dir / "samples.csv").string());
    write_samples_csv(out, table);
  }
  const TableDiagnostics diag = diagnose(table);
  json dj = diagnostics_json(table, diag);
  dj["seed"] = seed;
  write_json_file((dir / "diagnostics.json").string(), dj);

  json summary = {{"model", table.model}, {"parameters", summary_json(table)}};
  if (hier) {
    json gm = json::array();
    for (int k = 0; k < hier->dims.features; ++k) {
      json s = summary["parameters"][k];
      s["feature"] = hier->features[k];
      gm.push_back(s);
    }
    summary["group_mean"] = gm;
  }
  write_json_file((dir / "summary.json").string(), summary);
  write_json_file((dir / "posterior.json").string(), posterior_means(table, hier ? &*hier : nullptr));

  std::cout << "model " << table.model << ": " << data.num_judgments() << " judgments, " << data.respondents().size()
            << " respondents, max r_hat " << diag.max_r_hat << ", divergences " << table.divergences << '\n';
  if (diag.max_r_hat > 1.1) {
    std::cerr << "warning: max r_hat " << diag.max_r_hat << " exceeds 1.1\n";
    if (!o.allow_nonconverged) return kExitConvergence;
  }
  return kExitOk;
}

int cmd_predict(const Options& o) {
  const CatalogBundle b = load_catalog(o);
  if (o.posterior.empty()) throw UsageError("--posterior (a fit output directory) is required");
  const WeightPosterior post = load_weight_posterior(o.posterior, b);

  struct Query {
    std::string respondent;
    const Dilemma* dilemma;
    std::optional<int> choice;
  };
  Dataset data;
  std::vector<Dilemma> loose;
  std::vector<Query> queries;
  const bool have_judgments = !o.judgments.empty() || (!o.input.empty() && o.respondent.empty());
  if (have_judgments) {
    data = load_data(o, b);
    for (const auto& r : data.respondents())
      for (const auto& j : r.judgments) queries.push_back({r.id, &data.dilemma(j.dilemma_id), j.choice});
  } else {
    auto in = open_input(data_file(o, o.dilemmas, "dilemmas"));
    loose = read_dilemmas(in, b.catalog.size(), data_file(o, o.dilemmas, "dilemmas"));
    for (const auto& d : loose) queries.push_back({o.respondent, &d, std::nullopt});
  }

  std::ostringstream csv;
  csv << "respondent_id,dilemma_id,p_swerve,certainty,choice\n";
  std::vector<double> p;
  std::vector<int> y;
  for (const auto& q : queries) {
    const double pr = predict(post, q.respondent, *q.dilemma);
    csv << q.respondent << ',' << q.dilemma->id << ',' << format_double(pr) << ',' << format_double(certainty(pr))
        << ',' << (q.choice ? std::to_string(*q.choice) : std::string()) << '\n';
    if (q.choice) {
      p.push_back(pr);
      y.push_back(*q.choice);
    }
  }
  if (o.output.empty()) {
    std::cout << csv.str();
  } else {
    auto out = open_output(o.output);
    out << csv.str();
  }
  if (!p.empty()) std::cerr << "accuracy " << accuracy(p, y) << " over " << p.size() << " judgments\n";
  return kExitOk;
}

int cmd_evaluate(const Options& o) {
  const CatalogBundle b = load_catalog(o);
  ExperimentSpec spec;
  spec.respondent_counts = o.counts;
  spec.train_per_respondent = o.train;
  spec.test_per_respondent = o.test;
  spec.seeds = o.seeds;
  spec.models.clear();
  for (const auto& m : o.models) spec.models.push_back(model_kind_from_string(m));

  if (o.dry_run) {
    const json plan = learning_curve_json(spec, LearningCurveResult{});
    std::cout << json{{"respondent_counts", plan["respondent_counts"]},
                      {"train_per_respondent", plan["train_per_respondent"]},
                      {"test_per_respondent", plan["test_per_respondent"]},
                      {"seeds", plan["seeds"]},
                      {"models", plan["models"]}}
                     .dump(2)
              << '\n';
    return kExitOk;
  }

  const std::uint64_t seed = require_seed(o);
  const Dataset data = load_data(o, b);
  ModelSettings settings;
  settings.prior = prior_config(o, b.map.num_features());
  settings.benchmark = benchmark_config(o);
  settings.sampler = sampler_config(o, seed);
  const LearningCurveResult res = run_learning_curve(spec, data, b, settings);

  const fs::path dir = output_dir(o);
  {
    auto out = open_output((dir / "learning_curve.csv").string());
    write_learning_curve_csv(out, res);
  }
  write_json_file((dir / "learning_curve.json").string(), learning_curve_json(spec, res));
  for (const ModelKind m : spec.models) {
    std::cout << to_string(m);
    for (const int n : spec.respondent_counts) std::cout << "  N=" << n << ":" << res.summary(m, n).median;
    std::cout << '\n';
  }
  return kExitOk;
}

int cmd_recover(const Options& o) {
  const CatalogBundle b = load_catalog(o);
  RecoveryConfig cfg;
  cfg.respondents = o.recover_respondents;
  cfg.judgments = o.judgments_per;
  cfg.seed = require_seed(o);
  cfg.generator = generator_config(o);
  cfg.prior = prior_config(o, b.map.num_features());
  const SamplerConfig sampler = sampler_config(o, cfg.seed);
  check_sampler_config(sampler);
  const RecoveryReport rep = parameter_recovery(b, cfg, sampler);
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  const json out = {{"respondents", cfg.respondents},
                    {"judgments_per_respondent", cfg.judgments},
                    {"seed", cfg.seed},
                    {"group", {{"r", num(rep.group_r)}, {"rmse", num(rep.group_rmse)}}},
                    {"individuals", {{"r", num(rep.individual_r)}, {"rmse", num(rep.individual_rmse)}}},
                    {"uninformative", rep.uninformative},
                    {"divergences", rep.divergences},
                    {"max_r_hat", rep.max_r_hat}};
  if (o.output.empty()) {
    std::cout << out.dump(2) << '\n';
  } else {
    write_json_file(o.output, out);
  }
  return kExitOk;
}

int cmd_rt(const Options& o) {
  const CatalogBundle b = load_catalog(o);
  if (o.posterior.empty()) throw UsageError("--posterior (a fit output directory) is required");
  const Dataset data = load_data(o, b);
  const RtAnalysis rt = rt_analysis(data, load_weight_posterior(o.posterior, b), o.min_count);
  if (o.output.empty()) {
    write_rt_csv(std::cout, rt);
  } else {
    auto out = open_output(o.output);
    write_rt_csv(out, rt);
  }
  std::cerr << "used " << rt.used << " judgments, excluded " << rt.excluded << " slower than "
            << kMaxResponseSeconds << " s\n";
  return kExitOk;
}

HttpService* g_server = nullptr;

int cmd_serve(const Options& o) {
  const CatalogBundle b = load_catalog(o);
  ServiceConfig cfg;
  cfg.seed = require_seed(o);
  cfg.log_dir = o.sessions_dir;
  cfg.candidates = o.candidates;
  cfg.generator = generator_config(o);
  if (!o.prior_file.empty()) cfg.prior = weight_prior_from_json(read_json_file(o.prior_file), b.map);
  const auto colon = o.serve_addr.rfind(':');
  if (colon == std::string::npos) throw UsageError("--serve-addr must be host:port");
  const std::string host = o.serve_addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(o.serve_addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--serve-addr must be host:port");
  }

  SessionManager sessions(b, cfg);
  HttpService http(sessions);
  const int bound = http.bind(host, port);
  if (bound < 0) throw std::runtime_error("cannot bind " + o.serve_addr);
  g_server = &http;
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  std::cout << "listening on " << host << ":" << bound << std::endl;
  http.listen_after_bind();
  return kExitOk;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--catalog", o.catalog, "Catalog JSON overriding the built-in one")->check(CLI::ExistingFile);
}

void add_seed(CLI::App* cmd, Options& o) { cmd->add_option("--seed", o.seed, "Random seed"); }

void add_sampler(CLI::App* cmd, Options& o) {
  cmd->add_option("--chains", o.chains, "HMC chains")->check(CLI::PositiveNumber);
  cmd->add_option("--warmup", o.warmup, "Warmup iterations per chain")->check(CLI::PositiveNumber);
  cmd->add_option("--draws", o.draws, "Retained draws per chain")->check(CLI::PositiveNumber);
  cmd->add_option("--max-steps", o.max_steps, "Maximum leapfrog steps")->check(CLI::PositiveNumber);
}

void add_prior(CLI::App* cmd, Options& o) {
  cmd->add_option("--eta", o.eta, "LKJ shape")->check(CLI::PositiveNumber);
  cmd->add_option("--mu", o.mu, "Prior location for every feature weight");
  cmd->add_option("--scale-sd", o.scale_sd, "Half-normal scale prior sd")->check(CLI::PositiveNumber);
  cmd->add_option("--group-mean-prior", o.group_mean_prior, "Group mean prior")
      ->check(CLI::IsMember({"tied", "identity"}));
}

void add_generator(CLI::App* cmd, Options& o) {
  cmd->add_option("--min-characters", o.min_characters, "Fewest characters per branch")->check(CLI::PositiveNumber);
  cmd->add_option("--max-characters", o.max_characters, "Most characters per branch")->check(CLI::PositiveNumber);
}

void add_data(CLI::App* cmd, Options& o) {
  cmd->add_option("--input", o.input, "Data directory with dilemmas.jsonl and judgments.jsonl");
  cmd->add_option("--dilemmas", o.dilemmas, "Dilemma JSONL (overrides --input)");
  cmd->add_option("--judgments", o.judgments, "Judgment JSONL (overrides --input)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical Bayesian model of moral dilemma judgments"};
  app.set_config("--config", "", "TOML or INI config file; flags take precedence");
  app.require_subcommand(1);
  Options o;

  auto* catalog = app.add_subcommand("catalog", "Write the catalog and feature map as JSON");
  add_common(catalog, o);
  catalog->add_option("--output", o.output, "Output file (default stdout)");

  auto* generate = app.add_subcommand("generate", "Simulate a population and its judgments");
  add_common(generate, o);
  add_seed(generate, o);
  add_prior(generate, o);
  add_generator(generate, o);
  generate->add_option("--respondents", o.respondents, "Respondents")->check(CLI::PositiveNumber);
  generate->add_option("--judgments", o.judgments_per, "Judgments per respondent")->check(CLI::NonNegativeNumber);
  generate->add_option("--output", o.output, "Output directory");
  generate->add_flag("--response-times", o.response_times,
                     "Add response times falling linearly with the true certainty");

  auto* fit = app.add_subcommand("fit", "Sample a posterior");
  add_common(fit, o);
  add_seed(fit, o);
  add_data(fit, o);
  add_sampler(fit, o);
  add_prior(fit, o);
  fit->add_option("--model", o.model, "Model")->check(CLI::IsMember({"hier", "b1", "b2", "b3"}));
  fit->add_option("--prior-sd", o.prior_sd, "Benchmark weight prior sd")->check(CLI::PositiveNumber);
  fit->add_option("--output", o.output, "Output directory");
  fit->add_flag("--allow-nonconverged", o.allow_nonconverged, "Exit 0 even if some r_hat exceeds 1.1");

  auto* predict_cmd = app.add_subcommand("predict", "Predict swerve probabilities from a fitted posterior");
  add_common(predict_cmd, o);
  add_data(predict_cmd, o);
  predict_cmd->add_option("--posterior", o.posterior, "Fit output directory");
  predict_cmd->add_option("--respondent", o.respondent, "Respondent for --dilemmas without judgments");
  predict_cmd->add_option("--output", o.output, "Output CSV (default stdout)");

  auto* evaluate = app.add_subcommand("evaluate", "Held-out accuracy learning curve");
  add_common(evaluate, o);
  add_seed(evaluate, o);
  add_data(evaluate, o);
  add_sampler(evaluate, o);
  add_prior(evaluate, o);
  evaluate->add_option("--prior-sd", o.prior_sd, "Benchmark weight prior sd")->check(CLI::PositiveNumber);
  evaluate->add_option("--counts", o.counts, "Respondent counts")->delimiter(',');
  evaluate->add_option("--train", o.train, "Training judgments per respondent")->check(CLI::PositiveNumber);
  evaluate->add_option("--test", o.test, "Test judgments per respondent")->check(CLI::PositiveNumber);
  evaluate->add_option("--seeds", o.seeds, "Experiment seeds")->delimiter(',');
  evaluate->add_option("--models", o.models, "Models")->delimiter(',')->check(CLI::IsMember({"hier", "b1", "b2", "b3"}));
  evaluate->add_flag("--dry-run", o.dry_run, "Print the experiment grid and exit");
  evaluate->add_option("--output", o.output, "Output directory");

  auto* recover = app.add_subcommand("recover", "Parameter recovery on simulated data");
  add_common(recover, o);
  add_seed(recover, o);
  add_sampler(recover, o);
  add_prior(recover, o);
  add_generator(recover, o);
  recover->add_option("--respondents", o.recover_respondents, "Respondents")->check(CLI::PositiveNumber);
  recover->add_option("--judgments", o.judgments_per, "Judgments per respondent")->check(CLI::NonNegativeNumber);
  recover->add_option("--output", o.output, "Output JSON (default stdout)");

  auto* rt = app.add_subcommand("rt", "Response time versus certainty");
  add_common(rt, o);
  add_data(rt, o);
  rt->add_option("--posterior", o.posterior, "Fit output directory");
  rt->add_option("--min-count", o.min_count, "Minimum usable judgments")->check(CLI::PositiveNumber);
  rt->add_option("--output", o.output, "Output CSV (default stdout)");

  auto* serve = app.add_subcommand("serve", "Run the elicitation HTTP service");
  add_common(serve, o);
  add_seed(serve, o);
  add_generator(serve, o);
  serve->add_option("--serve-addr", o.serve_addr, "host:port");
  serve->add_option("--sessions-dir", o.sessions_dir, "Directory for session logs (replayed at startup)");
  serve->add_option("--prior", o.prior_file, "Group prior JSON for new sessions");
  serve->add_option("--candidates", o.candidates, "Candidate dilemmas per turn")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (catalog->parsed()) return cmd_catalog(o);
    if (generate->parsed()) return cmd_generate(o);
    if (fit->parsed()) return cmd_fit(o);
    if (predict_cmd->parsed()) return cmd_predict(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (recover->parsed()) return cmd_recover(o);
    if (rt->parsed()) return cmd_rt(o);
    if (serve->parsed()) return cmd_serve(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
