#pragma once

#include "spatlda/common.hpp"
#include "spatlda/geometry.hpp"

#include <Eigen/SparseCore>

#include <cmath>
#include <string>

namespace spatlda {

/// Smoothness of the Matern family.  Only the closed-form orders are
/// supported: nu = 1/2 (exponential), 3/2, 5/2 and the Gaussian limit
/// nu -> infinity.
enum class Smoothness { exponential, matern32, matern52, gaussian };

inline std::string to_string(Smoothness s) {
  switch (s) {
    case Smoothness::exponential: return "exp";
    case Smoothness::matern32: return "matern32";
    case Smoothness::matern52: return "matern52";
    case Smoothness::gaussian: return "gauss";
  }
  return "?";
}

inline Smoothness smoothness_from_string(const std::string& s) {
  if (s == "exp") return Smoothness::exponential;
  if (s == "matern32") return Smoothness::matern32;
  if (s == "matern52") return Smoothness::matern52;
  if (s == "gauss") return Smoothness::gaussian;
  throw std::invalid_argument("unknown covariance family '" + s + "'");
}

/// Matern covariance parameters theta = (sigma2, nugget, range) at fixed
/// smoothness.  The nugget c is the discontinuous fraction of variance at
/// zero lag: gamma(0) = sigma2 and gamma(h) = sigma2 (1-c) rho(h/r) for h > 0,
/// so the diagonal of the covariance matrix equals sigma2.
struct CovParams {
  double sigma2 = 1.0;
  double nugget = 0.0;  // c in [0, 1); c = 1 would make the range unidentifiable
  double range = 1.0;
  Smoothness smoothness = Smoothness::exponential;
};

inline void validate(const CovParams& p) {
  if (!(p.sigma2 > 0.0) || !std::isfinite(p.sigma2))
    throw std::invalid_argument("CovParams: sigma2 must be positive");
  if (!(p.nugget >= 0.0 && p.nugget < 1.0))
    throw std::invalid_argument("CovParams: nugget must lie in [0, 1)");
  if (!(p.range > 0.0) || !std::isfinite(p.range))
    throw std::invalid_argument("CovParams: range must be positive");
}

namespace detail {

/// Correlation rho(t), t = h/r, for the supported smoothness orders:
///   nu = 1/2 : exp(-t)
///   nu = 3/2 : (1 + t) exp(-t)
///   nu = 5/2 : (1 + t + t^2/3) exp(-t)
///   nu = inf : exp(-t^2)
inline double matern_rho(double t, Smoothness nu) {
  switch (nu) {
    case Smoothness::exponential: return std::exp(-t);
    case Smoothness::matern32: return (1.0 + t) * std::exp(-t);
    case Smoothness::matern52: return (1.0 + t + t * t / 3.0) * std::exp(-t);
    case Smoothness::gaussian: return std::exp(-t * t);
  }
  return 0.0;
}

/// d rho / d t.
inline double matern_rho_dt(double t, Smoothness nu) {
  switch (nu) {
    case Smoothness::exponential: return -std::exp(-t);
    case Smoothness::matern32: return -t * std::exp(-t);
    case Smoothness::matern52: return -(t / 3.0) * (1.0 + t) * std::exp(-t);
    case Smoothness::gaussian: return -2.0 * t * std::exp(-t * t);
  }
  return 0.0;
}

}  // namespace detail

/// Matern covariance at lag h >= 0.
inline double matern(double h, const CovParams& p) {
  validate(p);
  if (h < 0.0) throw std::invalid_argument("matern: negative lag");
  if (h == 0.0) return p.sigma2;
  return p.sigma2 * (1.0 - p.nugget) * detail::matern_rho(h / p.range, p.smoothness);
}

/// Partial derivatives (d gamma / d sigma2, d gamma / d c, d gamma / d r)
/// at fixed smoothness.  Undefined at the nugget jump h = 0.
inline Eigen::Vector3d matern_grad(double h, const CovParams& p) {
  validate(p);
  if (!(h > 0.0)) throw std::domain_error("matern_grad: lag must be positive");
  const double t = h / p.range;
  const double rho = detail::matern_rho(t, p.smoothness);
  const double drho = detail::matern_rho_dt(t, p.smoothness);
  Eigen::Vector3d g;
  g[0] = (1.0 - p.nugget) * rho;
  g[1] = -p.sigma2 * rho;
  // dt/dr = -h/r^2
  g[2] = p.sigma2 * (1.0 - p.nugget) * drho * (-h / (p.range * p.range));
  return g;
}

/// Wendland-type taper [(1 - h/w)_+]^2: exactly zero beyond the threshold
/// distance w, one at zero lag.
inline double taper_weight(double h, double w) {
  if (!(w > 0.0)) throw std::invalid_argument("taper_weight: width must be positive");
  const double x = 1.0 - h / w;
  return x > 0.0 ? x * x : 0.0;
}

/// Optional taper threshold; inactive means no taper is applied.
struct TaperSpec {
  double width = 0.0;
  bool active = false;

  static TaperSpec none() { return TaperSpec{}; }
  static TaperSpec with_width(double w) {
    if (!(w > 0.0)) throw std::invalid_argument("TaperSpec: width must be positive");
    return TaperSpec{w, true};
  }
};

/// Covariance matrix Sigma(theta), optionally Schur-multiplied by the taper
/// matrix K(w).  Stored sparse when the taper zeroes enough entries.
struct CovMatrix {
  int p = 0;
  bool is_sparse = false;
  Matrix dense;
  Eigen::SparseMatrix<double> sparse;
  CovParams params;
  TaperSpec taper;

  double operator()(int i, int j) const { return is_sparse ? sparse.coeff(i, j) : dense(i, j); }

  Matrix to_dense() const { return is_sparse ? Matrix(sparse) : dense; }
};

/// Wraps an explicit dense SPD matrix (used for externally supplied
/// covariances, e.g. the identity in tests).
inline CovMatrix cov_from_dense(Matrix m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("cov_from_dense: matrix not square");
  CovMatrix out;
  out.p = static_cast<int>(m.rows());
  out.dense = std::move(m);
  return out;
}

/// Entry (i,j) = matern(h_ij) * taper_weight(h_ij, w); the taper weight is 1
/// when no taper is active.  Sparse storage kicks in below 30% nonzeros.
inline CovMatrix build_cov(const DistanceMatrix& dist, const CovParams& params,
                           const TaperSpec& taper = TaperSpec::none()) {
  validate(params);
  const int p = dist.size();
  CovMatrix out;
  out.p = p;
  out.params = params;
  out.taper = taper;

  if (taper.active) {
    std::ptrdiff_t nnz = 0;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j)
        if (dist(i, j) < taper.width) ++nnz;
    out.is_sparse = nnz < static_cast<std::ptrdiff_t>(0.30 * double(p) * double(p));
  }

  if (out.is_sparse) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int j = 0; j < p; ++j)
      for (int i = 0; i < p; ++i) {
        const double h = dist(i, j);
        if (i == j) {
          trip.emplace_back(i, j, params.sigma2);
        } else if (h < taper.width) {
          trip.emplace_back(i, j, matern(h, params) * taper_weight(h, taper.width));
        }
      }
    out.sparse.resize(p, p);
    out.sparse.setFromTriplets(trip.begin(), trip.end());
    out.sparse.makeCompressed();
  } else {
    out.dense.resize(p, p);
    for (int j = 0; j < p; ++j) {
      out.dense(j, j) = params.sigma2;
      for (int i = j + 1; i < p; ++i) {
        const double h = dist(i, j);
        double v = matern(h, params);
        if (taper.active) v *= taper_weight(h, taper.width);
        out.dense(i, j) = v;
        out.dense(j, i) = v;
      }
    }
  }
  return out;
}

}  // namespace spatlda
