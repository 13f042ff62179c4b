#pragma once

// Hamiltonian Monte Carlo with dual-averaging step-size adaptation and a
// windowed diagonal metric, plus an L-BFGS posterior-mode finder. Both work
// on any type satisfying LogDensityModel.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <deque>
#include <future>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace moralhbm {

template <class M>
concept LogDensityModel = requires(const M& m, const Eigen::VectorXd& x, Eigen::VectorXd& g) {
  { m.dim() } -> std::convertible_to<int>;
  { m.log_density(x) } -> std::convertible_to<double>;
  { m.log_density_gradient(x, g) } -> std::convertible_to<double>;
};

struct SamplerConfig {
  int chains = 4;
  int warmup_iters = 500;
  int sample_iters = 1000;
  double target_accept = 0.8;
  int max_leapfrog_steps = 128;  // per-iteration step count is uniform in [1, max]
  std::uint64_t seed = 1;
  double init_jitter = 0.5;
  bool adapt_metric = true;
  double divergence_threshold = 1000.0;
  std::optional<double> fixed_step_size;  // disables step-size adaptation
  bool parallel_chains = true;
};

inline void check_sampler_config(const SamplerConfig& c) {
  if (c.chains < 1) throw std::invalid_argument("chains must be at least 1");
  if (c.warmup_iters < 0 || c.sample_iters < 1) throw std::invalid_argument("iteration counts must be positive");
  if (!(c.target_accept > 0.0 && c.target_accept < 1.0))
    throw std::invalid_argument("target_accept must lie in (0, 1)");
  if (c.max_leapfrog_steps < 1) throw std::invalid_argument("max_leapfrog_steps must be at least 1");
  if (!(c.init_jitter >= 0.0)) throw std::invalid_argument("init_jitter must be non-negative");
  if (c.fixed_step_size && !(*c.fixed_step_size > 0.0)) throw std::invalid_argument("step size must be positive");
}

struct ChainResult {
  Eigen::MatrixXd draws;  // sample_iters x dim, unconstrained
  std::vector<double> accept_stats;
  std::vector<double> energy_errors;
  std::vector<double> step_size_trace;  // one entry per warmup iteration
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int divergences = 0;
  int warmup_divergences = 0;

  double accept_rate() const {
    if (accept_stats.empty()) return 0.0;
    double s = 0.0;
    for (double a : accept_stats) s += a;
    return s / static_cast<double>(accept_stats.size());
  }
};

struct PosteriorSamples {
  int dim = 0;
  std::vector<ChainResult> chains;

  int num_chains() const { return static_cast<int>(chains.size()); }
  int draws_per_chain() const { return chains.empty() ? 0 : static_cast<int>(chains.front().draws.rows()); }
  int total_draws() const { return num_chains() * draws_per_chain(); }
  int divergences() const {
    int n = 0;
    for (const auto& c : chains) n += c.divergences;
    return n;
  }
  double accept_rate() const {
    double s = 0.0;
    for (const auto& c : chains) s += c.accept_rate();
    return chains.empty() ? 0.0 : s / static_cast<double>(chains.size());
  }
  // All draws stacked in chain order.
  Eigen::MatrixXd stacked() const {
    Eigen::MatrixXd out(total_draws(), dim);
    Eigen::Index row = 0;
    for (const auto& c : chains) {
      out.middleRows(row, c.draws.rows()) = c.draws;
      row += c.draws.rows();
    }
    return out;
  }
  std::vector<Eigen::VectorXd> coordinate(int k) const {
    std::vector<Eigen::VectorXd> out;
    for (const auto& c : chains) out.push_back(c.draws.col(k));
    return out;
  }
};

namespace detail {

struct PhasePoint {
  Eigen::VectorXd x, p, grad;
  double logp = 0.0;
};

inline double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_metric) {
  return -z.logp + 0.5 * (z.p.array().square() * inv_metric.array()).sum();
}

template <LogDensityModel Model>
void leapfrog(const Model& model, PhasePoint& z, double eps, int steps, const Eigen::VectorXd& inv_metric) {
  z.p += 0.5 * eps * z.grad;
  for (int s = 0; s < steps; ++s) {
    z.x += eps * inv_metric.cwiseProduct(z.p);
    z.logp = model.log_density_gradient(z.x, z.grad);
    if (!std::isfinite(z.logp)) return;
    z.p += (s + 1 == steps ? 0.5 : 1.0) * eps * z.grad;
  }
}

// Dual averaging of Hoffman & Gelman (2014).
class DualAveraging {
 public:
  void restart(double step_size, double target) {
    mu_ = std::log(10.0 * step_size);
    target_ = target;
    h_bar_ = 0.0;
    log_eps_bar_ = 0.0;
    counter_ = 0;
  }
  double update(double accept_stat) {
    ++counter_;
    const double t = static_cast<double>(counter_);
    const double eta = 1.0 / (t + kT0);
    h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_stat);
    const double log_eps = mu_ - std::sqrt(t) / kGamma * h_bar_;
    const double w = std::pow(t, -kKappa);
    log_eps_bar_ = w * log_eps + (1.0 - w) * log_eps_bar_;
    return std::exp(log_eps);
  }
  double final_step_size() const { return std::exp(log_eps_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double mu_ = 0.0, target_ = 0.8, h_bar_ = 0.0, log_eps_bar_ = 0.0;
  long counter_ = 0;
};

// Windowed metric adaptation schedule (initial fast phase, doubling slow
// windows, terminal fast phase).
class MetricWindows {
 public:
  MetricWindows(int warmup, int dim) : warmup_(warmup), welford_mean_(Eigen::VectorXd::Zero(dim)),
                                       welford_m2_(Eigen::VectorXd::Zero(dim)) {
    init_buffer_ = 75;
    term_buffer_ = 50;
    window_ = 25;
    if (warmup < 20) {
      enabled_ = false;
      return;
    }
    if (init_buffer_ + term_buffer_ + window_ > warmup) {
      init_buffer_ = static_cast<int>(0.15 * warmup);
      term_buffer_ = static_cast<int>(0.1 * warmup);
      window_ = warmup - init_buffer_ - term_buffer_;
    }
    window_end_ = init_buffer_ + window_;
    clamp_window();
  }

  bool enabled() const { return enabled_; }
  bool in_slow_phase(int iter) const { return enabled_ && iter >= init_buffer_ && iter < warmup_ - term_buffer_; }
  bool window_closes(int iter) const { return in_slow_phase(iter) && iter + 1 == window_end_; }

  void add(const Eigen::VectorXd& x) {
    ++count_;
    const Eigen::VectorXd delta = x - welford_mean_;
    welford_mean_ += delta / static_cast<double>(count_);
    welford_m2_ += delta.cwiseProduct(x - welford_mean_);
  }

  Eigen::VectorXd close_window() {
    const double n = static_cast<double>(count_);
    Eigen::VectorXd var = welford_m2_ / std::max(n - 1.0, 1.0);
    var = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
    count_ = 0;
    welford_mean_.setZero();
    welford_m2_.setZero();
    window_ *= 2;
    window_end_ += window_;
    clamp_window();
    return var;
  }

 private:
  void clamp_window() {
    const int slow_end = warmup_ - term_buffer_;
    // A window that would leave a short remainder is stretched to the end of the slow phase.
    if (window_end_ + 2 * window_ > slow_end) window_end_ = slow_end;
  }

  bool enabled_ = true;
  int warmup_ = 0, init_buffer_ = 0, term_buffer_ = 0, window_ = 0, window_end_ = 0;
  long count_ = 0;
  Eigen::VectorXd welford_mean_, welford_m2_;
};

template <LogDensityModel Model>
double initial_step_size(const Model& model, const PhasePoint& start, const Eigen::VectorXd& inv_metric,
                         std::mt19937_64& rng, double eps) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw_momentum = [&] {
    Eigen::VectorXd p(start.x.size());
    for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = normal(rng) / std::sqrt(inv_metric(k));
    return p;
  };
  PhasePoint z = start;
  z.p = draw_momentum();
  const double h0 = hamiltonian(z, inv_metric);
  leapfrog(model, z, eps, 1, inv_metric);
  double delta = h0 - hamiltonian(z, inv_metric);
  if (!std::isfinite(delta)) delta = -std::numeric_limits<double>::infinity();
  const int direction = delta > std::log(0.8) ? 1 : -1;
  for (int k = 0; k < 100; ++k) {
    z = start;
    z.p = draw_momentum();
    const double h = hamiltonian(z, inv_metric);
    leapfrog(model, z, eps, 1, inv_metric);
    double d = h - hamiltonian(z, inv_metric);
    if (!std::isfinite(d)) d = -std::numeric_limits<double>::infinity();
    if (direction == 1 && !(d > std::log(0.8))) break;
    if (direction == -1 && !(d < std::log(0.8))) break;
    eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
    if (eps > 1e7 || eps < 1e-12) break;
  }
  return eps;
}

template <LogDensityModel Model>
ChainResult run_chain(const Model& model, const Eigen::VectorXd& init, const SamplerConfig& config, int chain) {
  const int dim = model.dim();
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(config.seed >> 32), static_cast<std::uint32_t>(chain), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> steps_dist(1, config.max_leapfrog_steps);

  PhasePoint z;
  z.x = init;
  for (int k = 0; k < dim; ++k) z.x(k) += config.init_jitter * (2.0 * unif(rng) - 1.0);
  z.grad.setZero(dim);
  z.logp = model.log_density_gradient(z.x, z.grad);
  if (!std::isfinite(z.logp)) throw std::runtime_error("log density is not finite at the initial point");
  if (z.grad.squaredNorm() == 0.0) {
    Eigen::VectorXd probe = z.x, g(dim);
    for (int k = 0; k < dim; ++k) probe(k) += 0.1 * (2.0 * unif(rng) - 1.0) + 0.05;
    model.log_density_gradient(probe, g);
    if (g.squaredNorm() == 0.0) throw std::runtime_error("gradient is identically zero; nothing to sample");
  }

  ChainResult out;
  out.inv_metric = Eigen::VectorXd::Ones(dim);
  out.draws.resize(config.sample_iters, dim);
  out.accept_stats.reserve(config.sample_iters);
  out.energy_errors.reserve(config.sample_iters);

  const bool adapt_step = !config.fixed_step_size.has_value();
  double eps = config.fixed_step_size.value_or(0.0);
  DualAveraging da;
  if (adapt_step) {
    eps = initial_step_size(model, z, out.inv_metric, rng, 1.0);
    da.restart(eps, config.target_accept);
  }
  MetricWindows windows(config.warmup_iters, dim);
  const bool adapt_metric = config.adapt_metric && windows.enabled();

  const int total = config.warmup_iters + config.sample_iters;
  for (int it = 0; it < total; ++it) {
    const bool warmup = it < config.warmup_iters;
    PhasePoint prop = z;
    prop.p.resize(dim);
    for (int k = 0; k < dim; ++k) prop.p(k) = normal(rng) / std::sqrt(out.inv_metric(k));
    const double h0 = hamiltonian(prop, out.inv_metric);
    leapfrog(model, prop, eps, steps_dist(rng), out.inv_metric);
    const double h1 = hamiltonian(prop, out.inv_metric);
    const double energy_error = h1 - h0;
    double accept = 0.0;
    const bool divergent = !std::isfinite(energy_error) || energy_error > config.divergence_threshold;
    if (!divergent) accept = std::min(1.0, std::exp(-energy_error));
    if (divergent) {
      if (warmup) ++out.warmup_divergences;
      else ++out.divergences;
    } else if (unif(rng) < accept) {
      z.x = std::move(prop.x);
      z.grad = std::move(prop.grad);
      z.logp = prop.logp;
    }

    if (warmup) {
      if (adapt_step) eps = da.update(accept);
      out.step_size_trace.push_back(eps);
      if (adapt_metric && windows.in_slow_phase(it)) {
        windows.add(z.x);
        if (windows.window_closes(it)) {
          out.inv_metric = windows.close_window();
          if (adapt_step) {
            eps = initial_step_size(model, z, out.inv_metric, rng, eps);
            da.restart(eps, config.target_accept);
          }
        }
      }
      if (adapt_step && it + 1 == config.warmup_iters) eps = da.final_step_size();
    } else {
      const int s = it - config.warmup_iters;
      out.draws.row(s) = z.x.transpose();
      out.accept_stats.push_back(accept);
      out.energy_errors.push_back(std::isfinite(energy_error) ? energy_error
                                                              : std::numeric_limits<double>::infinity());
    }
  }
  out.step_size = eps;
  return out;
}

}  // namespace detail

// Energy error H(end) - H(start) of one deterministic leapfrog trajectory.
template <LogDensityModel Model>
double leapfrog_energy_error(const Model& model, const Eigen::VectorXd& x, const Eigen::VectorXd& p, double eps,
                             int steps, const Eigen::VectorXd& inv_metric) {
  detail::PhasePoint z;
  z.x = x;
  z.p = p;
  z.logp = model.log_density_gradient(z.x, z.grad);
  const double h0 = detail::hamiltonian(z, inv_metric);
  detail::leapfrog(model, z, eps, steps, inv_metric);
  return detail::hamiltonian(z, inv_metric) - h0;
}

// Chains are seeded from (config.seed, chain index) and reduced in chain
// order, so results do not depend on whether chains ran concurrently.
template <LogDensityModel Model>
PosteriorSamples hmc_sample(const Model& model, const Eigen::VectorXd& init, const SamplerConfig& config) {
  check_sampler_config(config);
  if (init.size() != model.dim()) throw std::invalid_argument("initial point has wrong dimension");
  PosteriorSamples out;
  out.dim = model.dim();
  out.chains.resize(config.chains);
  const bool parallel = config.parallel_chains && config.chains > 1 && std::thread::hardware_concurrency() > 1;
  if (parallel) {
    std::vector<std::future<ChainResult>> futures;
    for (int c = 0; c < config.chains; ++c)
      futures.push_back(std::async(std::launch::async, [&, c] { return detail::run_chain(model, init, config, c); }));
    for (int c = 0; c < config.chains; ++c) out.chains[c] = futures[c].get();
  } else {
    for (int c = 0; c < config.chains; ++c) out.chains[c] = detail::run_chain(model, init, config, c);
  }
  return out;
}

template <LogDensityModel Model>
PosteriorSamples hmc_sample(const Model& model, const SamplerConfig& config) {
  return hmc_sample(model, Eigen::VectorXd::Zero(model.dim()), config);
}

// ---------------------------------------------------------------------------
// Posterior mode

struct OptimizerConfig {
  double grad_tol = 1e-6;
  int max_iters = 1000;
  int history = 10;
};

struct MapResult {
  Eigen::VectorXd x;
  double log_density = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
  bool non_finite_encountered = false;
};

// L-BFGS ascent with backtracking (Armijo) line search.
template <LogDensityModel Model>
MapResult map_estimate(const Model& model, const Eigen::VectorXd& init, const OptimizerConfig& config = {}) {
  if (init.size() != model.dim()) throw std::invalid_argument("initial point has wrong dimension");
  MapResult res;
  res.x = init;
  res.grad.setZero(model.dim());
  res.log_density = model.log_density_gradient(res.x, res.grad);
  if (!std::isfinite(res.log_density)) throw std::runtime_error("log density is not finite at the initial point");

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd g_new(model.dim());

  for (res.iterations = 0; res.iterations < config.max_iters; ++res.iterations) {
    if (res.grad.norm() < config.grad_tol) {
      res.converged = true;
      return res;
    }
    // Two-loop recursion on the negated objective: direction = H * grad.
    Eigen::VectorXd q = res.grad;
    std::vector<double> alpha(s_hist.size());
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(q);
      q -= alpha[k] * (-y_hist[k]);
    }
    double gamma = 1.0;
    if (!s_hist.empty()) gamma = s_hist.back().dot(-y_hist.back()) / y_hist.back().squaredNorm();
    Eigen::VectorXd dir = gamma * q;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * (-y_hist[k]).dot(dir);
      dir += s_hist[k] * (alpha[k] - beta);
    }
    double slope = res.grad.dot(dir);
    if (!(slope > 0.0)) {
      dir = res.grad;
      slope = res.grad.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double step = 1.0;
    if (s_hist.empty()) step = std::min(1.0, 1.0 / std::max(1e-12, dir.cwiseAbs().maxCoeff()));
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = model.log_density_gradient(x_new, g_new);
      if (!std::isfinite(f_new) || !g_new.allFinite()) {
        res.non_finite_encountered = true;
      } else if (f_new >= res.log_density + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) return res;  // no ascent possible at machine precision

    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = g_new - res.grad;  // gradient of the objective being maximized
    const double sy = -s.dot(y);
    res.x = std::move(x_new);
    res.grad = g_new;
    res.log_density = f_new;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > config.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
  }
  res.converged = res.grad.norm() < config.grad_tol;
  return res;
}

}  // namespace moralhbm
