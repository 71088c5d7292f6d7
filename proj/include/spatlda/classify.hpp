#pragma once

#include "spatlda/common.hpp"
#include "spatlda/estimation.hpp"
#include "spatlda/gausscore.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace spatlda {

/// A plug-in discriminant rule.  The score is
///   delta(x) = (x - midpoint)' weight,  weight = Sigma~^{-1} delta,
/// the canonical full-matrix form with delta zero-padded outside the
/// selected support.  NB/FAIR carry a diagonal precision instead, where the
/// full form and the subset-restricted form coincide, so scoring touches
/// only the retained coordinates.
struct DiscriminantModel {
  int p = 0;
  std::string method;
  Vector mu1, mu2;
  Vector midpoint;
  Vector delta;            // mu1 - mu2, zeros outside the subset
  Vector weight;           // precision applied to delta
  std::vector<int> subset; // zero-based feature indices used for scoring
  bool diagonal = false;
  Vector variances;        // diagonal case only
  bool variance_floored = false;
  bool degenerate = false; // empty support fell back to all features
};

inline double discriminant_score(const Vector& x, const DiscriminantModel& model) {
  if (x.size() != model.p)
    throw std::invalid_argument("discriminant_score: dimension mismatch");
  return (x - model.midpoint).dot(model.weight);
}

/// Label 1 iff the score is strictly positive; ties go to class 2.
inline int classify(const Vector& x, const DiscriminantModel& model) {
  return discriminant_score(x, model) > 0.0 ? 1 : 2;
}

namespace detail {

inline std::vector<int> all_features(int p) {
  std::vector<int> idx(p);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace detail

/// Classifier from known parameters (the Bayes rule when they are the truth).
inline DiscriminantModel model_from_truth(const Vector& mu1, const Vector& mu2,
                                          const CovMatrix& sigma) {
  if (mu1.size() != sigma.p || mu2.size() != sigma.p)
    throw std::invalid_argument("model_from_truth: dimension mismatch");
  DiscriminantModel m;
  m.p = sigma.p;
  m.method = "true";
  m.mu1 = mu1;
  m.mu2 = mu2;
  m.midpoint = (mu1 + mu2) / 2.0;
  m.delta = mu1 - mu2;
  m.weight = cholesky(sigma).solve(m.delta);
  m.subset = detail::all_features(m.p);
  return m;
}

/// Classification model from a fit.  The classification covariance is
/// Sigma(theta_hat) tapered at the width given here (regardless of whether
/// the estimation was tapered); an inactive taper leaves Sigma(theta_hat)
/// untouched.  An empty support falls back to all features and flags the
/// model as degenerate.
inline DiscriminantModel build_model(const FitResult& fit, const DistanceMatrix& dist,
                                     const TaperSpec& classification_taper = TaperSpec::none()) {
  DiscriminantModel m;
  m.p = static_cast<int>(fit.delta.size());
  m.method = fit.method;
  m.mu1 = fit.mu1;
  m.mu2 = fit.mu2;
  m.midpoint = (fit.mu1 + fit.mu2) / 2.0;
  m.delta = fit.delta;
  if (fit.support.empty()) {
    m.degenerate = true;
    m.subset = detail::all_features(m.p);
  } else {
    m.subset = fit.support;
  }
  const SpdFactor f = cholesky(build_cov(dist, fit.theta, classification_taper));
  m.weight = f.solve(m.delta);
  return m;
}

/// Independence rule: class means with the pooled per-feature variances
/// (divisor n-2) in place of the full covariance.
inline DiscriminantModel fit_nb(const LabeledDataset& data) {
  const ClassMeans cm = class_means(data);
  const int p = data.p();
  Vector ss = (data.class1.rowwise() - cm.mu1.transpose()).array().square().colwise().sum();
  ss += Vector((data.class2.rowwise() - cm.mu2.transpose()).array().square().colwise().sum());

  DiscriminantModel m;
  m.p = p;
  m.method = "nb";
  m.mu1 = cm.mu1;
  m.mu2 = cm.mu2;
  m.midpoint = (cm.mu1 + cm.mu2) / 2.0;
  m.delta = cm.mu1 - cm.mu2;
  m.diagonal = true;
  m.variances = ss / std::max(1, data.n() - 2);
  for (int j = 0; j < p; ++j)
    if (m.variances[j] < 1e-12) {
      m.variances[j] = 1e-12;
      m.variance_floored = true;
    }
  m.subset = detail::all_features(p);
  m.weight = m.delta.cwiseQuotient(m.variances);
  return m;
}

/// Two-sample t statistics (Welch form) per feature.
inline Vector t_statistics(const LabeledDataset& data) {
  const ClassMeans cm = class_means(data);
  const double n1 = data.n1(), n2 = data.n2();
  Vector v1 = (data.class1.rowwise() - cm.mu1.transpose()).array().square().colwise().sum();
  Vector v2 = (data.class2.rowwise() - cm.mu2.transpose()).array().square().colwise().sum();
  v1 /= (n1 - 1.0);
  v2 /= (n2 - 1.0);
  const Vector se = (v1 / n1 + v2 / n2).cwiseMax(1e-24).cwiseSqrt();
  return (cm.mu1 - cm.mu2).cwiseQuotient(se);
}

namespace detail {

inline DiscriminantModel nb_on_subset(const LabeledDataset& data, const std::vector<int>& subset) {
  DiscriminantModel m = fit_nb(data);
  m.method = "fair";
  m.subset = subset;
  Vector masked = Vector::Zero(m.p);
  for (int j : subset) masked[j] = m.delta[j];
  m.delta = masked;
  m.weight = m.delta.cwiseQuotient(m.variances);
  return m;
}

inline std::vector<int> top_by_abs_t(const Vector& t, int m) {
  std::vector<int> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return std::abs(t[a]) > std::abs(t[b]); });
  order.resize(m);
  std::sort(order.begin(), order.end());
  return order;
}

inline LabeledDataset subset_rows(const LabeledDataset& data, const std::vector<int>& keep1,
                                  const std::vector<int>& keep2) {
  Matrix c1(keep1.size(), data.p()), c2(keep2.size(), data.p());
  for (std::size_t i = 0; i < keep1.size(); ++i) c1.row(i) = data.class1.row(keep1[i]);
  for (std::size_t i = 0; i < keep2.size(); ++i) c2.row(i) = data.class2.row(keep2[i]);
  return LabeledDataset{std::move(c1), std::move(c2), data.sites};
}

inline std::vector<int> complement(int n, const std::vector<int>& held) {
  std::vector<int> out;
  out.reserve(n - held.size());
  std::size_t k = 0;
  for (int i = 0; i < n; ++i) {
    if (k < held.size() && held[k] == i) {
      ++k;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

}  // namespace detail

/// Fraction of test rows misclassified, exact count arithmetic.
inline double empirical_error(const DiscriminantModel& model, const LabeledDataset& test) {
  long wrong = 0;
  for (int i = 0; i < test.n1(); ++i)
    if (classify(test.class1.row(i).transpose(), model) != 1) ++wrong;
  for (int i = 0; i < test.n2(); ++i)
    if (classify(test.class2.row(i).transpose(), model) != 2) ++wrong;
  return static_cast<double>(wrong) / test.n();
}

/// Feature-annealed independence rule: features ranked by |t|, retained
/// count chosen by stratified 10-fold cross-validation over the doubling
/// grid {1, 2, 4, ..., min(p, n)} using the one-standard-error rule (the
/// smallest count whose CV error is within one SE of the minimum).
inline DiscriminantModel fit_fair(const LabeledDataset& data, std::optional<int> m_opt,
                                  RngStream rng) {
  const int p = data.p();
  const int cap = std::min(p, data.n());

  if (m_opt) {
    if (*m_opt < 1 || *m_opt > p) throw std::invalid_argument("fit_fair: m out of range");
    return detail::nb_on_subset(data, detail::top_by_abs_t(t_statistics(data), *m_opt));
  }

  std::vector<int> grid;
  for (int m = 1; m < cap; m *= 2) grid.push_back(m);
  grid.push_back(cap);

  const int folds = 10;
  const auto fold_sets = stratified_folds(data.n1(), data.n2(), folds, rng);

  Matrix fold_err(folds, grid.size());
  for (int k = 0; k < folds; ++k) {
    const auto& held = fold_sets[k];
    const auto train = detail::subset_rows(data, detail::complement(data.n1(), held.class1_rows),
                                           detail::complement(data.n2(), held.class2_rows));
    const auto valid = detail::subset_rows(data, held.class1_rows, held.class2_rows);
    const Vector t = t_statistics(train);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const auto model = detail::nb_on_subset(train, detail::top_by_abs_t(t, grid[g]));
      fold_err(k, g) = empirical_error(model, valid);
    }
  }

  const Vector mean_err = fold_err.colwise().mean();
  int best = 0;
  for (int g = 1; g < mean_err.size(); ++g)
    if (mean_err[g] < mean_err[best]) best = g;
  const double sd = std::sqrt((fold_err.col(best).array() - mean_err[best]).square().sum() /
                              (folds - 1));
  const double threshold = mean_err[best] + sd / std::sqrt(static_cast<double>(folds));
  int chosen = best;
  for (int g = 0; g < mean_err.size(); ++g)
    if (mean_err[g] <= threshold) {
      chosen = g;
      break;
    }

  return detail::nb_on_subset(data, detail::top_by_abs_t(t_statistics(data), grid[chosen]));
}

/// Conditional and overall error rates of a plug-in rule under known truth.
struct ErrorReport {
  double psi1 = 0, psi2 = 0;
  double w1 = 0.5, w2 = 0.5, w = 0.5;
  double cp = 0, w_opt = 0.5;
  bool degenerate = false;
};

/// Closed-form conditional rates
///   W1 = 1 - Phi(Psi1), W2 = Phi(Psi2), W = (W1 + W2)/2,
/// with Psi_k = (mu_k - muhat)' Sigma~^{-1} deltahat normalized by
/// sqrt(deltahat' Sigma~^{-1} Sigma Sigma~^{-1} deltahat), plus the signal
/// strength C_p = Delta' Sigma^{-1} Delta and W_OPT = 1 - Phi(sqrt(C_p)/2).
inline ErrorReport theoretical_errors(const DiscriminantModel& model, const Vector& true_mu1,
                                      const Vector& true_mu2, const CovMatrix& true_sigma) {
  if (true_mu1.size() != model.p || true_mu2.size() != model.p || true_sigma.p != model.p)
    throw std::invalid_argument("theoretical_errors: dimension mismatch");

  ErrorReport report;
  const SpdFactor truth = cholesky(true_sigma);
  const Vector true_delta = true_mu1 - true_mu2;
  report.cp = truth.quad_form(true_delta);
  report.w_opt = 1.0 - normal_cdf(std::sqrt(report.cp) / 2.0);

  const Matrix sigma_dense = true_sigma.to_dense();
  const double denom_sq = model.weight.dot(sigma_dense * model.weight);
  if (!(denom_sq > 0.0)) {
    report.degenerate = true;
    return report;
  }
  const double denom = std::sqrt(denom_sq);
  report.psi1 = (true_mu1 - model.midpoint).dot(model.weight) / denom;
  report.psi2 = (true_mu2 - model.midpoint).dot(model.weight) / denom;
  report.w1 = 1.0 - normal_cdf(report.psi1);
  report.w2 = normal_cdf(report.psi2);
  report.w = (report.w1 + report.w2) / 2.0;
  return report;
}

}  // namespace spatlda
