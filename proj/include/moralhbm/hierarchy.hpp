#pragma once

// Hierarchical prior over individual moral principles:
//
//   w_i   ~ Normal_D(w_g, Sigma_g)            (non-centered: w_i = w_g + diag(tau) L z_i)
//   w_g   ~ Normal_D(mu, Sigma_g)             (or Normal_D(mu, I) with GroupMeanPrior::identity)
//   Sigma_g = diag(tau) Omega diag(tau),  Omega = L L^T ~ LKJ(eta),  tau_d ~ HalfNormal(scale_prior_sd)
//
// Unconstrained layout: [ w_g (D) | log tau (D) | partial correlations (D(D-1)/2) | z_1 .. z_N (D each) ].
// All densities below keep their normalizing constants except the LKJ term,
// which is the unnormalized (eta - 1) log det Omega.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "moralhbm/choice_model.hpp"
#include "moralhbm/lkj.hpp"

namespace moralhbm {

struct GroupNorm {
  Eigen::VectorXd mean;                  // w_g
  Eigen::VectorXd scales;                // tau, sqrt(diag Sigma_g)
  Eigen::MatrixXd correlation_cholesky;  // L

  int dim() const { return static_cast<int>(mean.size()); }
  Eigen::MatrixXd correlation() const { return correlation_cholesky * correlation_cholesky.transpose(); }
  Eigen::MatrixXd covariance_cholesky() const { return scales.asDiagonal() * correlation_cholesky; }
  Eigen::MatrixXd covariance() const {
    const Eigen::MatrixXd m = covariance_cholesky();
    return m * m.transpose();
  }

  static GroupNorm standard(int dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim), Eigen::MatrixXd::Identity(dim, dim)};
  }
};

// Empty report means valid.
inline std::vector<std::string> validate_group(const GroupNorm& g, double tol = 1e-10) {
  std::vector<std::string> report;
  const auto d = g.mean.size();
  if (g.scales.size() != d || g.correlation_cholesky.rows() != d || g.correlation_cholesky.cols() != d) {
    report.push_back("dimension mismatch");
    return report;
  }
  if (!g.mean.allFinite()) report.push_back("non-finite group mean");
  if (!(g.scales.array() > 0.0).all() || !g.scales.allFinite()) report.push_back("non-positive scale");
  // L L^T is positive definite iff L is lower triangular with a positive
  // diagonal; unit rows give the unit diagonal.
  const Eigen::MatrixXd& l = g.correlation_cholesky;
  if (!l.allFinite()) report.push_back("non-finite correlation factor");
  if (!l.isApprox(Eigen::MatrixXd(l.triangularView<Eigen::Lower>()), 0.0))
    report.push_back("correlation factor not lower triangular");
  if (((l.rowwise().squaredNorm().array() - 1.0).abs() > tol).any()) report.push_back("correlation diagonal not 1");
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(l(i, i) > 0.0)) report.push_back("correlation not positive definite");
  return report;
}

struct HierarchicalParams {
  GroupNorm group;
  Eigen::MatrixXd raw;  // D x N, column i is z_i

  int num_individuals() const { return static_cast<int>(raw.cols()); }
  Eigen::VectorXd individual(int i) const { return group.mean + group.covariance_cholesky() * raw.col(i); }
  Eigen::MatrixXd individuals() const {
    return (group.covariance_cholesky() * raw).colwise() + group.mean;
  }
};

enum class GroupMeanPrior { tied, identity };

struct PriorConfig {
  double eta = 2.0;
  Eigen::VectorXd mu;  // empty means zero
  double scale_prior_sd = 1.0;
  GroupMeanPrior group_mean_prior = GroupMeanPrior::tied;

  Eigen::VectorXd location(int dim) const {
    if (mu.size() == 0) return Eigen::VectorXd::Zero(dim);
    if (mu.size() != dim) throw std::invalid_argument("prior mu has wrong dimension");
    return mu;
  }
};

inline void check_prior(const PriorConfig& c) {
  if (!(c.eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (!(c.scale_prior_sd > 0.0)) throw std::invalid_argument("scale_prior_sd must be positive");
}

// ---------------------------------------------------------------------------
// Densities on the constrained scale

// log Normal_D(x; mean, M M^T) for lower-triangular M, via a triangular solve.
inline double mvn_chol_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol) {
  if (x.size() != mean.size() || chol.rows() != x.size())
    throw std::invalid_argument("mvn_chol_logpdf: dimension mismatch");
  const Eigen::VectorXd v = chol.triangularView<Eigen::Lower>().solve(x - mean);
  double log_det = 0.0;
  for (Eigen::Index d = 0; d < chol.rows(); ++d) {
    if (!(chol(d, d) > 0.0)) throw std::invalid_argument("covariance factor not positive definite");
    log_det += std::log(chol(d, d));
  }
  return -0.5 * v.squaredNorm() - log_det - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

inline double individual_prior_logpdf(const Eigen::VectorXd& w, const GroupNorm& group) {
  if (w.size() != group.dim()) throw std::invalid_argument("weight dimension does not match group");
  return mvn_chol_logpdf(w, group.mean, group.covariance_cholesky());
}

inline double half_normal_logpdf(double x, double sd) {
  return std::log(2.0) - 0.5 * kLog2Pi - std::log(sd) - 0.5 * (x * x) / (sd * sd);
}

// MVN term for w_g + LKJ term + half-normal scale terms.
inline double group_prior_logpdf(const GroupNorm& group, const PriorConfig& config) {
  check_prior(config);
  const int d = group.dim();
  const Eigen::VectorXd mu = config.location(d);
  double lp = config.group_mean_prior == GroupMeanPrior::tied
                  ? mvn_chol_logpdf(group.mean, mu, group.covariance_cholesky())
                  : mvn_chol_logpdf(group.mean, mu, Eigen::MatrixXd::Identity(d, d));
  lp += lkj_logpdf(group.correlation_cholesky, config.eta);
  for (int k = 0; k < d; ++k) {
    if (!(group.scales(k) > 0.0)) throw std::invalid_argument("scales must be positive");
    lp += half_normal_logpdf(group.scales(k), config.scale_prior_sd);
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Unconstrained parametrization

struct HierarchyDims {
  int features = 0;
  int individuals = 0;

  int num_correlations() const { return moralhbm::num_correlations(features); }
  int group_size() const { return 2 * features + num_correlations(); }
  int size() const { return group_size() + features * individuals; }
  int mean_offset() const { return 0; }
  int scale_offset() const { return features; }
  int corr_offset() const { return 2 * features; }
  int raw_offset(int i) const { return group_size() + features * i; }
};

inline Eigen::VectorXd to_unconstrained(const HierarchicalParams& p) {
  const HierarchyDims dims{p.group.dim(), p.num_individuals()};
  if (p.raw.rows() != dims.features) throw std::invalid_argument("raw individual coordinates have wrong dimension");
  Eigen::VectorXd x(dims.size());
  x.segment(dims.mean_offset(), dims.features) = p.group.mean;
  x.segment(dims.scale_offset(), dims.features) = p.group.scales.array().log().matrix();
  x.segment(dims.corr_offset(), dims.num_correlations()) = cholesky_corr_unconstrain(p.group.correlation_cholesky);
  for (int i = 0; i < dims.individuals; ++i) x.segment(dims.raw_offset(i), dims.features) = p.raw.col(i);
  return x;
}

inline HierarchicalParams from_unconstrained(const Eigen::VectorXd& x, const HierarchyDims& dims) {
  if (x.size() != dims.size())
    throw std::invalid_argument("unconstrained vector has length " + std::to_string(x.size()) + ", expected " +
                                std::to_string(dims.size()));
  HierarchicalParams p;
  p.group.mean = x.segment(dims.mean_offset(), dims.features);
  p.group.scales = x.segment(dims.scale_offset(), dims.features).array().exp().matrix();
  p.group.correlation_cholesky =
      cholesky_corr_constrain(x.segment(dims.corr_offset(), dims.num_correlations()), dims.features).chol;
  p.raw = Eigen::Map<const Eigen::MatrixXd>(x.data() + dims.group_size(), dims.features, dims.individuals);
  return p;
}

// log |d(w_g, tau, Omega_offdiag) / d(unconstrained group coordinates)|.
inline double unconstrained_log_jacobian(const Eigen::VectorXd& x, const HierarchyDims& dims) {
  const auto t = cholesky_corr_constrain(x.segment(dims.corr_offset(), dims.num_correlations()), dims.features);
  return x.segment(dims.scale_offset(), dims.features).sum() + t.log_jacobian +
         corr_from_cholesky_log_jacobian(t.log_diag);
}

// ---------------------------------------------------------------------------
// Posterior over unconstrained coordinates

class HierarchicalModel {
 public:
  HierarchicalModel(ChoiceDesign design, PriorConfig config)
      : design_(std::move(design)), config_(std::move(config)),
        dims_{design_.dim, static_cast<int>(design_.respondents.size())} {
    check_prior(config_);
    mu_ = config_.location(dims_.features);
  }

  int dim() const { return dims_.size(); }
  const HierarchyDims& dims() const { return dims_; }
  const ChoiceDesign& design() const { return design_; }
  const PriorConfig& config() const { return config_; }

  double log_density(const Eigen::VectorXd& x) const { return evaluate(x, nullptr); }

  double log_density_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    grad.setZero(dims_.size());
    return evaluate(x, &grad);
  }

  // Same posterior with individuals in centered coordinates w_i instead of z_i.
  // Differs from log_density at corresponding points by -N * log|diag(tau) L|.
  double log_density_centered(const Eigen::VectorXd& group_x, const Eigen::MatrixXd& weights) const {
    const int d = dims_.features;
    if (group_x.size() != dims_.group_size() || weights.rows() != d || weights.cols() != dims_.individuals)
      throw std::invalid_argument("centered evaluation: dimension mismatch");
    const Eigen::VectorXd m = group_x.segment(dims_.mean_offset(), d);
    const Eigen::VectorXd s = group_x.segment(dims_.scale_offset(), d);
    const auto t = cholesky_corr_constrain(group_x.segment(dims_.corr_offset(), dims_.num_correlations()), d);
    const GroupNorm g{m, s.array().exp().matrix(), t.chol};
    double lp = group_prior_logpdf(g, config_);
    lp += s.sum() + t.log_jacobian + corr_from_cholesky_log_jacobian(t.log_diag);
    for (int i = 0; i < dims_.individuals; ++i) {
      lp += individual_prior_logpdf(weights.col(i), g);
      lp += block_log_likelihood(design_.respondents[i], weights.col(i));
    }
    return lp;
  }

 private:
  double evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (x.size() != dims_.size())
      throw std::invalid_argument("unconstrained vector has length " + std::to_string(x.size()) + ", expected " +
                                  std::to_string(dims_.size()));
    const int d = dims_.features;
    const int n = dims_.individuals;
    const auto m = x.segment(dims_.mean_offset(), d);
    const auto s = x.segment(dims_.scale_offset(), d);
    const Eigen::VectorXd cpc = x.segment(dims_.corr_offset(), dims_.num_correlations());
    const Eigen::VectorXd tau = s.array().exp().matrix();
    const auto t = cholesky_corr_constrain(cpc, d);
    const Eigen::MatrixXd chol_cov = tau.asDiagonal() * t.chol;
    const Eigen::Map<const Eigen::MatrixXd> z(x.data() + dims_.group_size(), d, n);

    Eigen::MatrixXd g_chol_cov, g_z;
    Eigen::VectorXd g_m, g_tau, g_s, g_log_diag, g_w;
    if (grad) {
      g_chol_cov.setZero(d, d);
      g_m.setZero(d);
      g_tau.setZero(d);
      g_s.setZero(d);
      g_log_diag.setZero(d);
    }

    double lp = 0.0;
    Eigen::VectorXd w(d);
    for (int i = 0; i < n; ++i) {
      w.noalias() = chol_cov.triangularView<Eigen::Lower>() * z.col(i);
      w += m;
      const auto zi = z.col(i);
      lp += -0.5 * zi.squaredNorm() - 0.5 * d * kLog2Pi;
      if (grad) {
        g_w.setZero(d);
        lp += block_log_likelihood(design_.respondents[i], w, &g_w);
        g_m += g_w;
        grad->segment(dims_.raw_offset(i), d).noalias() =
            chol_cov.triangularView<Eigen::Lower>().transpose() * g_w - zi;
        g_chol_cov.noalias() += g_w * zi.transpose();
      } else {
        lp += block_log_likelihood(design_.respondents[i], w);
      }
    }

    // Group mean prior.
    const Eigen::VectorXd r = m - mu_;
    if (config_.group_mean_prior == GroupMeanPrior::tied) {
      const Eigen::VectorXd v = chol_cov.triangularView<Eigen::Lower>().solve(r);
      lp += -0.5 * v.squaredNorm() - s.sum() - t.log_diag.sum() - 0.5 * d * kLog2Pi;
      if (grad) {
        const Eigen::VectorXd u = chol_cov.triangularView<Eigen::Lower>().transpose().solve(v);
        g_m -= u;
        g_chol_cov.noalias() += u * v.transpose();
        g_s.array() -= 1.0;
        g_log_diag.array() -= 1.0;
      }
    } else {
      lp += -0.5 * r.squaredNorm() - 0.5 * d * kLog2Pi;
      if (grad) g_m -= r;
    }

    // Half-normal scales, plus log-transform Jacobian.
    const double sd = config_.scale_prior_sd;
    for (int k = 0; k < d; ++k) lp += half_normal_logpdf(tau(k), sd);
    lp += s.sum();
    if (grad) {
      g_tau -= tau / (sd * sd);
      g_s.array() += 1.0;
    }

    // LKJ on Omega plus the L -> Omega Jacobian; the y -> L Jacobian is in t.
    for (int k = 1; k < d; ++k) {
      const double coef = 2.0 * (config_.eta - 1.0) + static_cast<double>(d - 1 - k);
      lp += coef * t.log_diag(k);
      if (grad) g_log_diag(k) += coef;
    }
    lp += t.log_jacobian;

    if (grad) {
      // chol_cov = diag(tau) L
      Eigen::MatrixXd g_chol = Eigen::MatrixXd::Zero(d, d);
      for (int a = 0; a < d; ++a)
        for (int b = 0; b <= a; ++b) {
          g_tau(a) += g_chol_cov(a, b) * t.chol(a, b);
          g_chol(a, b) = g_chol_cov(a, b) * tau(a);
        }
      g_s += g_tau.cwiseProduct(tau);
      grad->segment(dims_.mean_offset(), d) = g_m;
      grad->segment(dims_.scale_offset(), d) = g_s;
      grad->segment(dims_.corr_offset(), dims_.num_correlations()) = cholesky_corr_backprop(cpc, t, g_chol, g_log_diag);
    }
    return lp;
  }

  ChoiceDesign design_;
  PriorConfig config_;
  HierarchyDims dims_;
  Eigen::VectorXd mu_;
};

// Sampling layout for the tied group-mean prior: the first D coordinates hold
// z_g with w_g = mu + diag(tau) L z_g. The direct layout has a funnel between
// w_g and log tau when tau is small. Same posterior, different coordinates.
class ScaledMeanModel {
 public:
  explicit ScaledMeanModel(HierarchicalModel base)
      : base_(std::move(base)), mu_(base_.config().location(base_.dims().features)) {}

  int dim() const { return base_.dim(); }
  const HierarchicalModel& base() const { return base_; }

  Eigen::VectorXd to_canonical(const Eigen::VectorXd& x) const {
    check(x);
    const HierarchyDims& dims = base_.dims();
    const int d = dims.features;
    const auto t = cholesky_corr_constrain(x.segment(dims.corr_offset(), dims.num_correlations()), d);
    Eigen::VectorXd out = x;
    out.head(d) = mu_ + x.segment(dims.scale_offset(), d).array().exp().matrix().asDiagonal() *
                            (t.chol.triangularView<Eigen::Lower>() * x.head(d));
    return out;
  }

  Eigen::VectorXd from_canonical(const Eigen::VectorXd& x) const {
    check(x);
    const HierarchyDims& dims = base_.dims();
    const int d = dims.features;
    const auto t = cholesky_corr_constrain(x.segment(dims.corr_offset(), dims.num_correlations()), d);
    const Eigen::VectorXd tau = x.segment(dims.scale_offset(), d).array().exp().matrix();
    Eigen::VectorXd out = x;
    out.head(d) = t.chol.triangularView<Eigen::Lower>().solve(((x.head(d) - mu_).array() / tau.array()).matrix());
    return out;
  }

  double log_density(const Eigen::VectorXd& x) const {
    const HierarchyDims& dims = base_.dims();
    const auto t = cholesky_corr_constrain(x.segment(dims.corr_offset(), dims.num_correlations()), dims.features);
    return base_.log_density(to_canonical(x)) + x.segment(dims.scale_offset(), dims.features).sum() +
           t.log_diag.sum();
  }

  double log_density_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    const HierarchyDims& dims = base_.dims();
    const int d = dims.features;
    const int nc = dims.num_correlations();
    const Eigen::VectorXd cpc = x.segment(dims.corr_offset(), nc);
    const auto t = cholesky_corr_constrain(cpc, d);
    const Eigen::VectorXd tau = x.segment(dims.scale_offset(), d).array().exp().matrix();
    const Eigen::VectorXd zg = x.head(d);
    const Eigen::VectorXd lz = t.chol.triangularView<Eigen::Lower>() * zg;
    Eigen::VectorXd xc = x;
    xc.head(d) = mu_ + tau.cwiseProduct(lz);

    Eigen::VectorXd gc;
    const double lp = base_.log_density_gradient(xc, gc) + x.segment(dims.scale_offset(), d).sum() + t.log_diag.sum();
    const Eigen::VectorXd gm = gc.head(d);
    grad = gc;
    grad.head(d) = t.chol.triangularView<Eigen::Lower>().transpose() * tau.cwiseProduct(gm);
    grad.segment(dims.scale_offset(), d).array() += (gm.cwiseProduct(tau).cwiseProduct(lz)).array() + 1.0;

    // d/dy through L, without repeating the y -> L Jacobian already in gc.
    Eigen::MatrixXd g_chol = Eigen::MatrixXd::Zero(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b <= a; ++b) g_chol(a, b) = gm(a) * tau(a) * zg(b);
    grad.segment(dims.corr_offset(), nc) +=
        cholesky_corr_backprop(cpc, t, g_chol, Eigen::VectorXd::Ones(d)) -
        cholesky_corr_backprop(cpc, t, Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d));
    return lp;
  }

 private:
  void check(const Eigen::VectorXd& x) const {
    if (x.size() != base_.dim()) throw std::invalid_argument("unconstrained vector has wrong length");
  }

  HierarchicalModel base_;
  Eigen::VectorXd mu_;
};

inline double log_posterior(const HierarchicalParams& params, const ChoiceDesign& data, const PriorConfig& config) {
  if (params.num_individuals() != static_cast<int>(data.respondents.size()) || params.group.dim() != data.dim)
    throw std::invalid_argument("parameters do not match data dimensions");
  return HierarchicalModel(data, config).log_density(to_unconstrained(params));
}

inline Eigen::VectorXd grad_log_posterior(const HierarchicalParams& params, const ChoiceDesign& data,
                                          const PriorConfig& config) {
  if (params.num_individuals() != static_cast<int>(data.respondents.size()) || params.group.dim() != data.dim)
    throw std::invalid_argument("parameters do not match data dimensions");
  Eigen::VectorXd grad;
  HierarchicalModel(data, config).log_density_gradient(to_unconstrained(params), grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Prior simulation

inline GroupNorm sample_group_prior(std::mt19937_64& rng, int dim, const PriorConfig& config) {
  check_prior(config);
  std::normal_distribution<double> normal(0.0, 1.0);
  GroupNorm g;
  g.scales.resize(dim);
  for (int k = 0; k < dim; ++k) g.scales(k) = std::abs(normal(rng)) * config.scale_prior_sd;
  g.correlation_cholesky = sample_lkj_cholesky(rng, dim, config.eta);
  Eigen::VectorXd e(dim);
  for (int k = 0; k < dim; ++k) e(k) = normal(rng);
  const Eigen::VectorXd mu = config.location(dim);
  g.mean = config.group_mean_prior == GroupMeanPrior::tied ? Eigen::VectorXd(mu + g.covariance_cholesky() * e)
                                                           : Eigen::VectorXd(mu + e);
  return g;
}

inline Eigen::VectorXd sample_individual(std::mt19937_64& rng, const GroupNorm& g) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd e(g.dim());
  for (int k = 0; k < g.dim(); ++k) e(k) = normal(rng);
  return g.mean + g.covariance_cholesky() * e;
}

}  // namespace moralhbm
