#pragma once

#include "spatlda/common.hpp"
#include "spatlda/covariance.hpp"
#include "spatlda/gausscore.hpp"
#include "spatlda/geometry.hpp"
#include "spatlda/optim.hpp"
#include "spatlda/rng.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace spatlda {

/// Two-class training data: n1 + n2 rows of p features observed at the
/// same sites.  Immutable after construction.
struct LabeledDataset {
  Matrix class1;  // n1 x p
  Matrix class2;  // n2 x p
  SiteSet sites;

  int p() const { return static_cast<int>(class1.cols()); }
  int n1() const { return static_cast<int>(class1.rows()); }
  int n2() const { return static_cast<int>(class2.rows()); }
  int n() const { return n1() + n2(); }
};

inline LabeledDataset make_dataset(Matrix class1, Matrix class2, SiteSet sites) {
  if (class1.rows() < 2 || class2.rows() < 2)
    throw std::invalid_argument("LabeledDataset: need at least 2 observations per class");
  if (class1.cols() != sites.size() || class2.cols() != sites.size())
    throw std::invalid_argument("LabeledDataset: feature count does not match site count");
  if (!class1.allFinite() || !class2.allFinite())
    throw std::invalid_argument("LabeledDataset: non-finite entry");
  return LabeledDataset{std::move(class1), std::move(class2), std::move(sites)};
}

struct ClassMeans {
  Vector mu1, mu2, ybar;
};

/// Per-class sample means and the pooled grand mean.
inline ClassMeans class_means(const LabeledDataset& data) {
  ClassMeans m;
  m.mu1 = data.class1.colwise().mean();
  m.mu2 = data.class2.colwise().mean();
  const double n1 = data.n1(), n2 = data.n2();
  m.ybar = (n1 * m.mu1 + n2 * m.mu2) / (n1 + n2);
  return m;
}

/// Centered data for the penalized regression, dropping the last class-2
/// row: rows 1..n1 are Y_1i - Ybar, rows n1+1..n-1 are Y_2i - Ybar.  The
/// design codes x_i are +tau2 on class-1 rows and -tau1 on class-2 rows,
/// so E[Z_i] = x_i (mu1 - mu2).
struct ZTransform {
  Matrix z;      // (n-1) x p
  Vector codes;  // n-1 design scalars
  double tau1 = 0, tau2 = 0;
  int n1 = 0, n2 = 0;

  int n() const { return n1 + n2; }
  int p() const { return static_cast<int>(z.cols()); }
};

inline ZTransform transform_Z(const LabeledDataset& data) {
  const int n1 = data.n1(), n2 = data.n2(), n = n1 + n2, p = data.p();
  const ClassMeans cm = class_means(data);

  ZTransform zt;
  zt.n1 = n1;
  zt.n2 = n2;
  zt.tau1 = static_cast<double>(n1) / n;
  zt.tau2 = static_cast<double>(n2) / n;
  zt.z.resize(n - 1, p);
  zt.codes.resize(n - 1);
  for (int i = 0; i < n1; ++i) {
    zt.z.row(i) = data.class1.row(i) - cm.ybar.transpose();
    zt.codes[i] = zt.tau2;
  }
  for (int i = 0; i < n2 - 1; ++i) {
    zt.z.row(n1 + i) = data.class2.row(i) - cm.ybar.transpose();
    zt.codes[n1 + i] = -zt.tau1;
  }
  return zt;
}

/// SCAD penalty parameters; a = 3.7 is the usual recommendation.
struct ScadSpec {
  double lambda = 0.0;
  double a = 3.7;
};

inline void validate(const ScadSpec& s) {
  if (!(s.lambda >= 0.0) || !std::isfinite(s.lambda))
    throw std::invalid_argument("ScadSpec: lambda must be nonnegative");
  if (!(s.a > 2.0)) throw std::invalid_argument("ScadSpec: a must exceed 2");
}

/// Three-branch SCAD penalty:
///   lambda |b|                                  for |b| <= lambda
///   -(b^2 - 2 a lambda |b| + lambda^2)/(2(a-1)) for lambda < |b| <= a lambda
///   (a+1) lambda^2 / 2                          for |b| > a lambda
inline double scad_penalty(double beta, const ScadSpec& spec) {
  validate(spec);
  const double lam = spec.lambda, a = spec.a, t = std::abs(beta);
  if (t <= lam) return lam * t;
  if (t <= a * lam) return -(t * t - 2.0 * a * lam * t + lam * lam) / (2.0 * (a - 1.0));
  return (a + 1.0) * lam * lam / 2.0;
}

/// Derivative on t = |beta|: lambda, then (a lambda - t)/(a - 1), then 0.
inline double scad_deriv(double t, const ScadSpec& spec) {
  validate(spec);
  if (t < 0.0) throw std::invalid_argument("scad_deriv: t must be nonnegative");
  const double lam = spec.lambda, a = spec.a;
  if (t <= lam) return lam;
  if (t <= a * lam) return (a * lam - t) / (a - 1.0);
  return 0.0;
}

/// Global minimizer of  f(b) = weight/2 (b - z)^2 + scad_penalty(b).
/// The objective is piecewise quadratic in |b|, so the minimum of each
/// branch is its (clamped) vertex; the best branch wins, with exact zeros
/// inside the soft-threshold dead zone.
inline double univariate_scad(double z, double weight, const ScadSpec& spec) {
  validate(spec);
  if (!(weight > 0.0)) throw std::invalid_argument("univariate_scad: weight must be positive");
  if (spec.lambda == 0.0) return z;

  const double lam = spec.lambda, a = spec.a;
  const double az = std::abs(z), sign = z < 0.0 ? -1.0 : 1.0;
  const auto value = [&](double t) {
    return 0.5 * weight * (t - az) * (t - az) + scad_penalty(t, spec);
  };

  double best_t = 0.0;
  double best_v = value(0.0);
  const auto consider = [&](double t) {
    const double v = value(t);
    if (v < best_v) {
      best_v = v;
      best_t = t;
    }
  };

  consider(std::clamp(az - lam / weight, 0.0, lam));
  const double curvature = weight - 1.0 / (a - 1.0);
  if (curvature > 0.0) {
    consider(std::clamp((weight * (a - 1.0) * az - a * lam) / (weight * (a - 1.0) - 1.0), lam,
                        a * lam));
  } else {
    consider(lam);
    consider(a * lam);
  }
  consider(std::max(az, a * lam));
  return sign * best_t;
}

/// Gaussian log-likelihood with per-class means and covariance Sigma(theta),
/// tapered when requested.  A non-positive-definite theta propagates as
/// FactorizationError.
inline double loglik(const CovParams& theta, const Vector& mu1, const Vector& mu2,
                     const LabeledDataset& data, const DistanceMatrix& dist,
                     const TaperSpec& taper = TaperSpec::none()) {
  validate(theta);
  const int p = data.p(), n = data.n();
  if (mu1.size() != p || mu2.size() != p || dist.size() != p)
    throw std::invalid_argument("loglik: dimension mismatch");

  Matrix stack(n, p);
  stack.topRows(data.n1()) = data.class1.rowwise() - mu1.transpose();
  stack.bottomRows(data.n2()) = data.class2.rowwise() - mu2.transpose();

  const SpdFactor f = cholesky(build_cov(dist, theta, taper));
  return -0.5 * p * n * std::log(2.0 * M_PI) - 0.5 * n * f.logdet() -
         0.5 * f.sum_quad_forms(stack);
}

struct ThetaFit {
  CovParams theta;
  bool converged = false;
  double objective = 0.0;
  int iterations = 0;
};

/// Scale-aware deterministic starting point: pooled feature variance,
/// nugget 0.2, range at the median pairwise distance.
inline CovParams default_theta_init(const LabeledDataset& data, const DistanceMatrix& dist,
                                    Smoothness family) {
  const ClassMeans cm = class_means(data);
  const double ss = (data.class1.rowwise() - cm.mu1.transpose()).squaredNorm() +
                    (data.class2.rowwise() - cm.mu2.transpose()).squaredNorm();
  const int dof = std::max(1, data.n() - 2);
  CovParams init;
  init.sigma2 = std::max(ss / (static_cast<double>(dof) * data.p()), 1e-8);
  init.nugget = 0.2;
  init.smoothness = family;

  const int p = dist.size();
  std::vector<double> offdiag;
  offdiag.reserve(static_cast<std::size_t>(p) * (p - 1) / 2);
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) offdiag.push_back(dist(i, j));
  if (offdiag.empty()) {
    init.range = 1.0;
  } else {
    auto mid = offdiag.begin() + offdiag.size() / 2;
    std::nth_element(offdiag.begin(), mid, offdiag.end());
    init.range = std::max(*mid, 1e-8);
  }
  return init;
}

namespace detail {

inline Vector theta_to_coords(const CovParams& t) {
  const double c = std::clamp(t.nugget, 1e-10, 1.0 - 1e-10);
  Vector x(3);
  x[0] = std::log(t.sigma2);
  x[1] = std::log(c / (1.0 - c));
  x[2] = std::log(t.range);
  return x;
}

inline CovParams coords_to_theta(const Vector& x, Smoothness family) {
  CovParams t;
  t.sigma2 = std::exp(x[0]);
  t.nugget = 1.0 / (1.0 + std::exp(-x[1]));
  t.range = std::exp(x[2]);
  t.smoothness = family;
  return t;
}

/// Maximizes resid-based Gaussian objective
///   -(weight/2) log|Sigma(theta)| - 1/2 sum_i stack_i' Sigma^{-1} stack_i
/// over (log sigma2, logit c, log r) by Nelder-Mead.  Rejected points
/// (factorization failures, runaway coordinates) count as -infinity.
inline ThetaFit optimize_theta(const Matrix& stack, double weight, const DistanceMatrix& dist,
                               Smoothness family, const TaperSpec& taper, const CovParams& init,
                               int max_iter) {
  if (dist.size() < 3)
    throw std::invalid_argument("theta estimation needs p >= 3 (q = 3 covariance parameters)");
  if (stack.squaredNorm() <= 1e-12 * stack.rows() * stack.cols())
    throw std::invalid_argument("theta estimation: degenerate zero-residual data");
  validate(init);

  const auto objective = [&](const Vector& x) -> double {
    if (x.cwiseAbs().maxCoeff() > 40.0) return -std::numeric_limits<double>::infinity();
    try {
      const CovParams theta = coords_to_theta(x, family);
      const SpdFactor f = cholesky(build_cov(dist, theta, taper));
      return -0.5 * weight * f.logdet() - 0.5 * f.sum_quad_forms(stack);
    } catch (const FactorizationError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  const SimplexResult r =
      nelder_mead_maximize(objective, theta_to_coords(init), 0.5, 1e-8, max_iter);
  ThetaFit fit;
  fit.theta = coords_to_theta(r.x, family);
  fit.converged = r.converged;
  fit.objective = r.value;
  fit.iterations = r.iterations;
  return fit;
}

}  // namespace detail

/// Profile MLE of theta with the class means fixed at their closed-form
/// estimates (the sample means).  Returns best-so-far with converged=false
/// if the simplex exhausts max_iter.
inline ThetaFit mle_theta(const LabeledDataset& data, const DistanceMatrix& dist,
                          Smoothness family, const TaperSpec& taper, const CovParams& init,
                          int max_iter = 2000) {
  const ClassMeans cm = class_means(data);
  Matrix stack(data.n(), data.p());
  stack.topRows(data.n1()) = data.class1.rowwise() - cm.mu1.transpose();
  stack.bottomRows(data.n2()) = data.class2.rowwise() - cm.mu2.transpose();
  return detail::optimize_theta(stack, data.n(), dist, family, taper, init, max_iter);
}

inline ThetaFit mle_theta(const LabeledDataset& data, const DistanceMatrix& dist,
                          Smoothness family = Smoothness::exponential,
                          const TaperSpec& taper = TaperSpec::none(), int max_iter = 2000) {
  return mle_theta(data, dist, family, taper, default_theta_init(data, dist, family), max_iter);
}

namespace detail {

/// Residual stack [r_1; ...; r_{n-1}; s] with r_i = Z_i - x_i beta and
/// s = sum_i r_i.  The penalized likelihood's quadratic form
/// (Z-Xb)' diag(Sigma^{-1}) (I + J) (Z-Xb) equals
/// sum_i r_i' Sigma^{-1} r_i + s' Sigma^{-1} s on this stack.
inline Matrix residual_stack(const ZTransform& zt, const Vector& beta) {
  const int rows = static_cast<int>(zt.z.rows());
  Matrix stack(rows + 1, zt.p());
  stack.topRows(rows) = zt.z - zt.codes * beta.transpose();
  stack.row(rows) = stack.topRows(rows).colwise().sum();
  return stack;
}

}  // namespace detail

/// Step 1 of the one-step procedure: penalized least squares on the
/// centered data.  The diagonal design decouples per coordinate, so each
/// beta_j is a univariate SCAD update of m_j = sum_i x_i Z_ij / S with
/// S = n1 tau2^2 + (n2-1) tau1^2.
inline Vector step1_beta(const ZTransform& zt, const ScadSpec& spec) {
  validate(spec);
  const double S = zt.n1 * zt.tau2 * zt.tau2 + (zt.n2 - 1) * zt.tau1 * zt.tau1;
  const Vector m = (zt.z.transpose() * zt.codes) / S;
  const double weight = 2.0 * S / zt.n();
  Vector beta(zt.p());
  for (int j = 0; j < zt.p(); ++j) beta[j] = univariate_scad(m[j], weight, spec);
  return beta;
}

/// Penalized log-likelihood Q(theta, beta; Z).  C_{n,p} is the exact
/// normalizing constant of the (n-1)p-dimensional Gaussian density, so Q
/// equals that log-density minus the penalty.
inline double penalized_Q(const CovParams& theta, const Vector& beta, const ZTransform& zt,
                          const DistanceMatrix& dist, const TaperSpec& taper,
                          const ScadSpec& spec) {
  validate(theta);
  validate(spec);
  const int p = zt.p(), n = zt.n();
  if (beta.size() != p || dist.size() != p)
    throw std::invalid_argument("penalized_Q: dimension mismatch");

  const SpdFactor f = cholesky(build_cov(dist, theta, taper));
  const double quad = f.sum_quad_forms(detail::residual_stack(zt, beta));
  const double constant = -0.5 * (n - 1) * p * std::log(2.0 * M_PI) + 0.5 * p * std::log(n);
  double penalty = 0.0;
  for (int j = 0; j < p; ++j) penalty += scad_penalty(beta[j], spec);
  return constant - 0.5 * (n - 1) * f.logdet() - 0.5 * quad - n * penalty;
}

/// Steps 2 and 4: maximize the theta-dependent part of Q at fixed beta.
inline ThetaFit step_theta(const ZTransform& zt, const Vector& beta, const DistanceMatrix& dist,
                           const TaperSpec& taper, const CovParams& init, Smoothness family,
                           int max_iter = 2000) {
  if (beta.size() != zt.p()) throw std::invalid_argument("step_theta: dimension mismatch");
  return detail::optimize_theta(detail::residual_stack(zt, beta), zt.n() - 1, dist, family,
                                taper, init, max_iter);
}

struct BetaFit {
  Vector beta;
  bool converged = false;
  int sweeps = 0;
};

/// Step 3: cyclic coordinate descent on -Q over beta at fixed theta.  The
/// quadratic part has curvature (n1 n2 / n) Sigma^{-1}, so every coordinate
/// update is a univariate SCAD problem; with lambda = 0 the maximizer is
/// exactly Ybar_1 - Ybar_2.
inline BetaFit step3_beta_gls(const ZTransform& zt, const CovParams& theta,
                              const DistanceMatrix& dist, const TaperSpec& taper,
                              const ScadSpec& spec, const Vector& init, int max_sweeps = 500,
                              double tol = 1e-8) {
  validate(theta);
  validate(spec);
  const int p = zt.p(), n = zt.n();
  if (init.size() != p || dist.size() != p)
    throw std::invalid_argument("step3_beta_gls: dimension mismatch");

  const SpdFactor f = cholesky(build_cov(dist, theta, taper));
  Matrix precision = f.solve(Matrix(Matrix::Identity(p, p)));
  precision = ((precision + precision.transpose()) / 2.0).eval();

  const double curvature_scale = static_cast<double>(zt.n1) * zt.n2 / n;
  const Matrix quad = curvature_scale * precision;
  const Vector v =
      zt.z.transpose() * zt.codes + zt.tau1 * zt.z.colwise().sum().transpose();
  const Vector linear = precision * v;

  BetaFit fit;
  fit.beta = init;
  Vector grad_part = quad * fit.beta;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (int j = 0; j < p; ++j) {
      const double qjj = quad(j, j);
      const double zj = (linear[j] - (grad_part[j] - qjj * fit.beta[j])) / qjj;
      const double updated = univariate_scad(zj, qjj / n, spec);
      const double delta = updated - fit.beta[j];
      if (delta != 0.0) {
        grad_part += delta * quad.col(j);
        fit.beta[j] = updated;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    fit.sweeps = sweep + 1;
    if (max_change < tol) {
      fit.converged = true;
      break;
    }
    grad_part = quad * fit.beta;  // refresh against incremental drift
  }
  return fit;
}

/// Trace of the four one-step stages.
struct StageTrace {
  Vector beta0;
  CovParams theta0;
  Vector beta1;
  CovParams theta1;
  bool theta0_converged = false;
  bool beta1_converged = false;
  bool theta1_converged = false;
};

/// A fitted discriminant parameter set.  The mean identities
/// mu1 = ybar + tau2 delta and mu2 = ybar - tau1 delta hold exactly.
struct FitResult {
  Vector delta;
  CovParams theta;
  bool has_theta = true;
  Vector mu1, mu2, ybar;
  std::vector<int> support;  // zero-based indices with delta[j] != 0
  double lambda_used = 0.0;
  TaperSpec taper;
  std::string method;
  double tau1 = 0, tau2 = 0;
  int n1 = 0, n2 = 0;
  StageTrace trace;
};

namespace detail {

inline void finish_fit(FitResult& fit, const LabeledDataset& data) {
  const ClassMeans cm = class_means(data);
  fit.ybar = cm.ybar;
  fit.tau1 = static_cast<double>(data.n1()) / data.n();
  fit.tau2 = static_cast<double>(data.n2()) / data.n();
  fit.n1 = data.n1();
  fit.n2 = data.n2();
  fit.mu1 = fit.ybar + fit.tau2 * fit.delta;
  fit.mu2 = fit.ybar - fit.tau1 * fit.delta;
  fit.support.clear();
  for (int j = 0; j < fit.delta.size(); ++j)
    if (fit.delta[j] != 0.0) fit.support.push_back(j);
}

}  // namespace detail

/// One-step penalized MLE: steps 1 -> 2 -> 3 -> 4 executed once each.
/// stages = 2 stops after step 2 (the penalized-regression estimate used
/// by the PREG classifier); stages = 4 is the full procedure.
inline FitResult one_step_pmle(const LabeledDataset& data, const DistanceMatrix& dist,
                               const ScadSpec& spec, const TaperSpec& taper,
                               const CovParams& init, int stages = 4, int max_iter = 2000) {
  if (stages != 2 && stages != 4)
    throw std::invalid_argument("one_step_pmle: stages must be 2 or 4");

  const ZTransform zt = transform_Z(data);
  FitResult fit;
  fit.lambda_used = spec.lambda;
  fit.taper = taper;

  try {
    fit.trace.beta0 = step1_beta(zt, spec);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("one_step_pmle step 1: ") + e.what());
  }
  try {
    const ThetaFit t0 = step_theta(zt, fit.trace.beta0, dist, taper, init, init.smoothness,
                                   max_iter);
    fit.trace.theta0 = t0.theta;
    fit.trace.theta0_converged = t0.converged;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("one_step_pmle step 2: ") + e.what());
  }

  if (stages == 2) {
    fit.method = "preg";
    fit.delta = fit.trace.beta0;
    fit.theta = fit.trace.theta0;
    detail::finish_fit(fit, data);
    return fit;
  }

  try {
    const BetaFit b1 =
        step3_beta_gls(zt, fit.trace.theta0, dist, taper, spec, fit.trace.beta0);
    fit.trace.beta1 = b1.beta;
    fit.trace.beta1_converged = b1.converged;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("one_step_pmle step 3: ") + e.what());
  }
  try {
    const ThetaFit t1 = step_theta(zt, fit.trace.beta1, dist, taper, fit.trace.theta0,
                                   init.smoothness, max_iter);
    fit.trace.theta1 = t1.theta;
    fit.trace.theta1_converged = t1.converged;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("one_step_pmle step 4: ") + e.what());
  }

  fit.method = "pmle";
  fit.delta = fit.trace.beta1;
  fit.theta = fit.trace.theta1;
  detail::finish_fit(fit, data);
  return fit;
}

/// MLE plug-in fit: closed-form class means, profile-likelihood theta.
inline FitResult mle_fit(const LabeledDataset& data, const DistanceMatrix& dist,
                         Smoothness family, const TaperSpec& taper, const CovParams& init,
                         int max_iter = 2000) {
  const ThetaFit tf = mle_theta(data, dist, family, taper, init, max_iter);
  const ClassMeans cm = class_means(data);
  FitResult fit;
  fit.method = "mle";
  fit.theta = tf.theta;
  fit.taper = taper;
  fit.delta = cm.mu1 - cm.mu2;
  detail::finish_fit(fit, data);
  return fit;
}

/// The smallest lambda that zeroes every coordinate in step 1, and a
/// 20-point log-spaced grid down to 1% of it.
inline double lambda_max(const ZTransform& zt) {
  const double S = zt.n1 * zt.tau2 * zt.tau2 + (zt.n2 - 1) * zt.tau1 * zt.tau1;
  const Vector m = (zt.z.transpose() * zt.codes) / S;
  return std::max(m.cwiseAbs().maxCoeff() * 2.0 * S / zt.n(), 1e-12);
}

inline std::vector<double> default_lambda_grid(const ZTransform& zt, int points = 20) {
  if (points < 1) throw std::invalid_argument("default_lambda_grid: need at least one point");
  const double top = lambda_max(zt);
  const double bottom = 0.01 * top;
  std::vector<double> grid(points);
  if (points == 1) {
    grid[0] = top;
    return grid;
  }
  const double step = std::log(top / bottom) / (points - 1);
  for (int k = 0; k < points; ++k) grid[k] = bottom * std::exp(step * k);
  grid.back() = top;
  return grid;
}

/// Class-stratified fold assignment.  Returns, per fold, the held-out row
/// indices within class 1 and class 2.  Throws when a fold would end up
/// with a single class.
struct Fold {
  std::vector<int> class1_rows;
  std::vector<int> class2_rows;
};

inline std::vector<Fold> stratified_folds(int n1, int n2, int folds, RngStream& rng) {
  if (folds < 2) throw std::invalid_argument("stratified_folds: need at least 2 folds");
  if (n1 < folds || n2 < folds)
    throw std::invalid_argument(
        "stratified_folds: a fold would hold a single class (too few observations)");

  const auto deal = [&](int count) {
    std::vector<int> order(count);
    for (int i = 0; i < count; ++i) order[i] = i;
    for (int i = count - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    return order;
  };

  std::vector<Fold> out(folds);
  const auto c1 = deal(n1);
  const auto c2 = deal(n2);
  for (int i = 0; i < n1; ++i) out[i % folds].class1_rows.push_back(c1[i]);
  for (int i = 0; i < n2; ++i) out[i % folds].class2_rows.push_back(c2[i]);
  for (auto& fold : out) {
    std::sort(fold.class1_rows.begin(), fold.class1_rows.end());
    std::sort(fold.class2_rows.begin(), fold.class2_rows.end());
  }
  return out;
}

}  // namespace spatlda
