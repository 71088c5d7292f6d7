#pragma once

#include "spatlda/common.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

namespace spatlda {

struct SimplexResult {
  Vector x;
  double value = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

/// Nelder-Mead simplex maximization.  The objective may return -infinity
/// (treated as a rejected point, e.g. a failed factorization).  Convergence
/// when the spread of objective values across the polytope drops below tol;
/// otherwise the best vertex so far is returned with converged = false.
inline SimplexResult nelder_mead_maximize(const std::function<double(const Vector&)>& objective,
                                          const Vector& x0, double step = 0.5,
                                          double tol = 1e-8, int max_iter = 2000) {
  const int n = static_cast<int>(x0.size());
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;
  const double inf = std::numeric_limits<double>::infinity();

  auto f = [&](const Vector& x) {
    const double v = objective(x);
    return std::isfinite(v) ? -v : inf;  // minimize -objective
  };

  std::vector<Vector> x(n + 1, x0);
  std::vector<double> fx(n + 1);
  for (int k = 1; k <= n; ++k) x[k][k - 1] += step;
  for (int k = 0; k <= n; ++k) fx[k] = f(x[k]);

  auto order = [&]() {
    std::vector<int> idx(n + 1);
    for (int i = 0; i <= n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return fx[a] < fx[b]; });
    std::vector<Vector> x2(n + 1);
    std::vector<double> f2(n + 1);
    for (int i = 0; i <= n; ++i) {
      x2[i] = x[idx[i]];
      f2[i] = fx[idx[i]];
    }
    x.swap(x2);
    fx.swap(f2);
  };

  SimplexResult result;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    order();
    if (std::isfinite(fx[0]) && std::isfinite(fx[n]) && fx[n] - fx[0] < tol) {
      result.converged = true;
      break;
    }
    if (!std::isfinite(fx[0])) break;  // nowhere valid to go

    Vector centroid = Vector::Zero(n);
    for (int k = 0; k < n; ++k) centroid += x[k];
    centroid /= n;

    const Vector xr = centroid + alpha * (centroid - x[n]);
    const double fr = f(xr);
    if (fr < fx[0]) {
      const Vector xe = centroid + gamma * (xr - centroid);
      const double fe = f(xe);
      if (fe < fr) {
        x[n] = xe;
        fx[n] = fe;
      } else {
        x[n] = xr;
        fx[n] = fr;
      }
    } else if (fr < fx[n - 1]) {
      x[n] = xr;
      fx[n] = fr;
    } else {
      const bool outside = fr < fx[n];
      const Vector xc = outside ? Vector(centroid + rho * (xr - centroid))
                                : Vector(centroid + rho * (x[n] - centroid));
      const double fc = f(xc);
      if (fc < (outside ? fr : fx[n])) {
        x[n] = xc;
        fx[n] = fc;
      } else {
        for (int k = 1; k <= n; ++k) {
          x[k] = x[0] + sigma * (x[k] - x[0]);
          fx[k] = f(x[k]);
        }
      }
    }
  }

  order();
  result.x = x[0];
  result.value = std::isfinite(fx[0]) ? -fx[0] : -inf;
  result.iterations = iter;
  return result;
}

}  // namespace spatlda
