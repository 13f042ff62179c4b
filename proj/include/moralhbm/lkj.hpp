#pragma once

// LKJ prior over correlation matrices, expressed on the Cholesky factor L
// (Omega = L L^T), and the canonical-partial-correlation bijection between
// R^{D(D-1)/2} and valid correlation Cholesky factors.
//
// Unconstrained coordinates are ordered row-wise over the strict lower
// triangle: (1,0), (2,0), (2,1), (3,0), ...

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace moralhbm {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline int num_correlations(int dim) { return dim * (dim - 1) / 2; }

// log(1 - tanh(y)^2), accurate for large |y|.
inline double log1m_tanh_sq(double y) {
  const double a = std::abs(y);
  return -2.0 * (a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0));
}

struct CholeskyCorrTransform {
  Eigen::MatrixXd chol;        // L, lower triangular, unit row norms
  Eigen::VectorXd log_diag;    // log L_ii
  double log_jacobian = 0.0;   // log |d L_free / d y|, including the tanh step
};

inline CholeskyCorrTransform cholesky_corr_constrain(const Eigen::VectorXd& y, int dim) {
  if (y.size() != num_correlations(dim))
    throw std::invalid_argument("expected " + std::to_string(num_correlations(dim)) +
                                " partial-correlation coordinates, got " + std::to_string(y.size()));
  CholeskyCorrTransform out;
  out.chol = Eigen::MatrixXd::Zero(dim, dim);
  out.log_diag = Eigen::VectorXd::Zero(dim);
  if (dim == 0) return out;
  out.chol(0, 0) = 1.0;
  int pos = 0;
  for (int i = 1; i < dim; ++i) {
    double log_rem = 0.0;
    for (int j = 0; j < i; ++j, ++pos) {
      const double z = std::tanh(y(pos));
      out.chol(i, j) = z * std::exp(0.5 * log_rem);
      out.log_jacobian += 0.5 * log_rem + log1m_tanh_sq(y(pos));
      log_rem += log1m_tanh_sq(y(pos));
    }
    out.log_diag(i) = 0.5 * log_rem;
    out.chol(i, i) = std::exp(0.5 * log_rem);
  }
  return out;
}

inline Eigen::VectorXd cholesky_corr_unconstrain(const Eigen::MatrixXd& chol) {
  const int dim = static_cast<int>(chol.rows());
  Eigen::VectorXd y(num_correlations(dim));
  int pos = 0;
  for (int i = 1; i < dim; ++i) {
    double rem = 1.0;
    for (int j = 0; j < i; ++j, ++pos) {
      const double z = chol(i, j) / std::sqrt(rem);
      if (!(std::abs(z) < 1.0)) throw std::invalid_argument("not a valid correlation Cholesky factor");
      y(pos) = std::atanh(z);
      rem *= (1.0 - z) * (1.0 + z);
    }
  }
  return y;
}

// Backpropagates through cholesky_corr_constrain. grad_chol holds dF/dL on the
// lower triangle (diagonal included), grad_log_diag holds dF/d(log L_ii).
// Adds the log-Jacobian derivative as well, so the result is
// d/dy [F(L(y)) + log_jacobian(y)].
inline Eigen::VectorXd cholesky_corr_backprop(const Eigen::VectorXd& y, const CholeskyCorrTransform& t,
                                              const Eigen::MatrixXd& grad_chol,
                                              const Eigen::VectorXd& grad_log_diag) {
  const int dim = static_cast<int>(t.chol.rows());
  Eigen::VectorXd grad(y.size());
  int row_start = 0;
  Eigen::VectorXd g_log_rem;
  for (int i = 1; i < dim; ++i) {
    // log_rem_j for j = 0..i, rem_0 = 1.
    g_log_rem.setZero(i + 1);
    Eigen::VectorXd log_rem(i + 1);
    log_rem(0) = 0.0;
    for (int j = 0; j < i; ++j) log_rem(j + 1) = log_rem(j) + log1m_tanh_sq(y(row_start + j));

    for (int j = 0; j < i; ++j) {
      const double z = std::tanh(y(row_start + j));
      const double sr = std::exp(0.5 * log_rem(j));
      g_log_rem(j) += grad_chol(i, j) * z * sr * 0.5 + 0.5;  // value path + CPC Jacobian
    }
    g_log_rem(i) += grad_chol(i, i) * 0.5 * t.chol(i, i) + 0.5 * grad_log_diag(i);

    // log_rem_j = sum_{k<j} a_k, a_k = log(1 - z_k^2); tanh Jacobian adds a_k.
    double suffix = 0.0;
    for (int j = i - 1; j >= 0; --j) {
      suffix += g_log_rem(j + 1);
      const double yj = y(row_start + j);
      const double z = std::tanh(yj);
      const double sr = std::exp(0.5 * log_rem(j));
      const double g_a = suffix + 1.0;
      grad(row_start + j) = grad_chol(i, j) * sr * (1.0 - z * z) - 2.0 * z * g_a;
    }
    row_start += i;
  }
  return grad;
}

// Unnormalized LKJ log density of Omega = L L^T: (eta - 1) log det Omega.
inline double lkj_logpdf(const Eigen::MatrixXd& chol, double eta, double tol = 1e-8) {
  if (!(eta > 0.0)) throw std::invalid_argument("LKJ eta must be positive");
  double lp = 0.0;
  for (Eigen::Index i = 0; i < chol.rows(); ++i) {
    const double norm = chol.row(i).head(i + 1).squaredNorm();
    if (std::abs(norm - 1.0) > tol) throw std::invalid_argument("correlation diagonal differs from 1");
    if (!(chol(i, i) > 0.0)) throw std::invalid_argument("Cholesky diagonal must be positive");
    lp += 2.0 * (eta - 1.0) * std::log(chol(i, i));
  }
  return lp;
}

// log of the LKJ normalizing constant c_D(eta) such that
// det(Omega)^(eta-1) / c_D(eta) integrates to one over D x D correlation matrices.
inline double lkj_log_normalizer(double eta, int dim) {
  double c = 0.0;
  for (int k = 1; k < dim; ++k) {
    const double b = eta + 0.5 * (dim - k - 1);
    const double lbeta = 2.0 * std::lgamma(b) - std::lgamma(2.0 * b);
    c += (2.0 * eta - 2.0 + dim - k) * (dim - k) * std::log(2.0) + (dim - k) * lbeta;
  }
  return c;
}

// log |d Omega_offdiag / d L_free| for the map L -> L L^T.
inline double corr_from_cholesky_log_jacobian(const Eigen::VectorXd& log_diag) {
  const auto dim = log_diag.size();
  double lj = 0.0;
  for (Eigen::Index i = 1; i < dim; ++i) lj += static_cast<double>(dim - 1 - i) * log_diag(i);
  return lj;
}

inline double sample_beta(std::mt19937_64& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  return x / (x + gb(rng));
}

// Draw L with L L^T ~ LKJ(eta) via canonical partial correlations.
inline Eigen::MatrixXd sample_lkj_cholesky(std::mt19937_64& rng, int dim, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("LKJ eta must be positive");
  Eigen::VectorXd y(num_correlations(dim));
  int pos = 0;
  for (int i = 1; i < dim; ++i)
    for (int j = 0; j < i; ++j, ++pos) {
      const double b = eta + 0.5 * (dim - 2 - j);
      const double cpc = 2.0 * sample_beta(rng, b, b) - 1.0;
      y(pos) = std::atanh(std::clamp(cpc, -1.0 + 1e-15, 1.0 - 1e-15));
    }
  return cholesky_corr_constrain(y, dim).chol;
}

}  // namespace moralhbm
