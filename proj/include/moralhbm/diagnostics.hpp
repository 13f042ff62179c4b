#pragma once

// Convergence diagnostics and posterior summaries.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace moralhbm {

struct Diagnostic {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;  // zero variance; value is NaN
};

// Classic split-R-hat: every chain is cut into two halves (the middle draw
// is dropped for odd lengths).
inline Diagnostic r_hat(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("r_hat needs at least two chains");
  const Eigen::Index n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("r_hat: chains differ in length");
  const Eigen::Index half = n / 2;
  if (half < 4) throw std::invalid_argument("r_hat needs at least 4 draws per split chain");

  std::vector<Eigen::VectorXd> splits;
  for (const auto& c : chains) {
    splits.push_back(c.head(half));
    splits.push_back(c.tail(half));
  }
  const double m = static_cast<double>(splits.size());
  const double len = static_cast<double>(half);
  Eigen::VectorXd means(splits.size()), vars(splits.size());
  for (std::size_t j = 0; j < splits.size(); ++j) {
    means(j) = splits[j].mean();
    vars(j) = (splits[j].array() - means(j)).square().sum() / (len - 1.0);
  }
  const double w = vars.mean();
  const double b = len * (means.array() - means.mean()).square().sum() / (m - 1.0);
  Diagnostic d;
  if (!(w > 0.0)) {
    d.degenerate = true;
    return d;
  }
  const double var_plus = (len - 1.0) / len * w + b / len;
  d.value = std::sqrt(var_plus / w);
  return d;
}

namespace detail {
inline double autocovariance(const Eigen::VectorXd& x, double mean, Eigen::Index lag) {
  const Eigen::Index n = x.size();
  double s = 0.0;
  for (Eigen::Index i = 0; i + lag < n; ++i) s += (x(i) - mean) * (x(i + lag) - mean);
  return s / static_cast<double>(n);
}
}  // namespace detail

// Multi-chain effective sample size with Geyer's initial positive sequence
// and monotone truncation.
inline Diagnostic ess(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.empty()) throw std::invalid_argument("ess needs at least one chain");
  const Eigen::Index n = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != n) throw std::invalid_argument("ess: chains differ in length");
  if (n < 4) throw std::invalid_argument("ess needs at least 4 draws per chain");
  const double m = static_cast<double>(chains.size());
  const double nd = static_cast<double>(n);

  std::vector<double> means(chains.size()), acov0(chains.size());
  for (std::size_t j = 0; j < chains.size(); ++j) {
    means[j] = chains[j].mean();
    acov0[j] = detail::autocovariance(chains[j], means[j], 0);
  }
  double mean_var = 0.0;
  for (double a : acov0) mean_var += a * nd / (nd - 1.0);
  mean_var /= m;
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (chains.size() > 1) {
    double grand = 0.0;
    for (double mu : means) grand += mu;
    grand /= m;
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    var_plus += b / (m - 1.0);
  }
  Diagnostic d;
  if (!(var_plus > 0.0) || !(mean_var > 0.0)) {
    d.degenerate = true;
    return d;
  }

  auto rho = [&](Eigen::Index lag) {
    double acov = 0.0;
    for (std::size_t j = 0; j < chains.size(); ++j) acov += detail::autocovariance(chains[j], means[j], lag);
    acov /= m;
    return 1.0 - (mean_var - acov) / var_plus;
  };

  std::vector<double> rhos = {1.0, rho(1)};
  Eigen::Index t = 1;
  while (t + 2 < n - 1) {
    const double even = rho(t + 1), odd = rho(t + 2);
    if (!(even + odd > 0.0)) break;
    rhos.push_back(even);
    rhos.push_back(odd);
    t += 2;
  }
  // Monotone initial sequence on paired sums.
  for (std::size_t k = 2; k + 1 < rhos.size(); k += 2) {
    const double prev = rhos[k - 2] + rhos[k - 1];
    if (rhos[k] + rhos[k + 1] > prev) {
      rhos[k] = prev / 2.0;
      rhos[k + 1] = prev / 2.0;
    }
  }
  double sum = 0.0;
  for (double r : rhos) sum += r;
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(m * nd));
  d.value = m * nd / tau;
  return d;
}

struct ParameterSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0, q95 = 0.0;
};

// Linear-interpolation empirical quantile (sorted input).
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline ParameterSummary summarize(const Eigen::VectorXd& draws) {
  if (draws.size() == 0) throw std::invalid_argument("cannot summarize empty samples");
  ParameterSummary s;
  s.mean = draws.mean();
  s.sd = draws.size() > 1 ? std::sqrt((draws.array() - s.mean).square().sum() / static_cast<double>(draws.size() - 1))
                          : 0.0;
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  std::sort(v.begin(), v.end());
  s.q05 = sorted_quantile(v, 0.05);
  s.q25 = sorted_quantile(v, 0.25);
  s.q50 = sorted_quantile(v, 0.50);
  s.q75 = sorted_quantile(v, 0.75);
  s.q95 = sorted_quantile(v, 0.95);
  return s;
}

// One summary per column of a draws matrix (rows are draws).
inline std::vector<ParameterSummary> summarize_columns(const Eigen::MatrixXd& draws) {
  if (draws.rows() == 0) throw std::invalid_argument("cannot summarize empty samples");
  std::vector<ParameterSummary> out;
  out.reserve(draws.cols());
  for (Eigen::Index k = 0; k < draws.cols(); ++k) out.push_back(summarize(draws.col(k)));
  return out;
}

}  // namespace moralhbm
