#include "spatlda/covariance.hpp"
#include "spatlda/gausscore.hpp"

#include <doctest.h>

#include "oracles.hpp"

using namespace spatlda;

TEST_CASE("matern point values") {
  CovParams p{1.0, 0.2, 1.0, Smoothness::exponential};
  CHECK(matern(0.0, p) == 1.0);  // nugget convention: gamma(0) = sigma2
  CHECK(matern(1.0, p) == doctest::Approx(0.8 * std::exp(-1.0)).epsilon(1e-12));
  CHECK(matern(1.0, p) == doctest::Approx(0.2943036).epsilon(1e-6));

  CovParams g{1.0, 0.2, 2.0, Smoothness::gaussian};
  CHECK(matern(2.0, g) == doctest::Approx(0.8 * std::exp(-1.0)).epsilon(1e-12));

  CHECK_THROWS_AS(matern(1.0, CovParams{-1.0, 0.2, 1.0, Smoothness::exponential}),
                  std::invalid_argument);
  CHECK_THROWS_AS(matern(1.0, CovParams{1.0, 1.0, 1.0, Smoothness::exponential}),
                  std::invalid_argument);
}

TEST_CASE("exponential branch equals its closed form exactly") {
  CovParams p{1.7, 0.3, 2.5, Smoothness::exponential};
  for (double h : {0.1, 0.7, 1.9, 4.2, 11.0})
    CHECK(matern(h, p) == 1.7 * 0.7 * std::exp(-h / 2.5));
}

TEST_CASE("matern is nonincreasing in h for every family") {
  for (auto nu : {Smoothness::exponential, Smoothness::matern32, Smoothness::matern52,
                  Smoothness::gaussian}) {
    CovParams p{1.3, 0.1, 2.0, nu};
    double prev = matern(1e-9, p);
    for (int k = 1; k <= 400; ++k) {
      const double cur = matern(k * 0.05, p);
      CHECK(cur <= prev + 1e-15);
      prev = cur;
    }
  }
}

TEST_CASE("matern_grad closed forms and finite differences") {
  SUBCASE("exponential gradient closed form") {
    CovParams p{1.0, 0.0, 1.0, Smoothness::exponential};
    const auto g = matern_grad(1.0, p);
    CHECK(g[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(g[2] == doctest::Approx(std::exp(-1.0) * 1.0).epsilon(1e-12));  // h/r^2 = 1
  }
  SUBCASE("nugget at its boundary") {
    // c = 1 itself is rejected (range would be unidentifiable); the
    // sigma2-derivative (1-c) rho vanishes in the limit
    CHECK_THROWS_AS(matern_grad(1.0, CovParams{1.0, 1.0, 1.0, Smoothness::exponential}),
                    std::invalid_argument);
    const auto g = matern_grad(1.0, CovParams{1.0, 1.0 - 1e-9, 1.0, Smoothness::exponential});
    CHECK(std::abs(g[0]) < 1e-9);
  }
  SUBCASE("gradient at h = 0 is undefined") {
    CHECK_THROWS_AS(matern_grad(0.0, CovParams{1, 0.2, 1, Smoothness::exponential}),
                    std::domain_error);
  }
  SUBCASE("central finite differences, every family") {
    spatlda::RngStream rng(411, 0);
    for (auto nu : {Smoothness::exponential, Smoothness::matern32, Smoothness::matern52,
                    Smoothness::gaussian}) {
      for (int rep = 0; rep < 24; ++rep) {
        CovParams p;
        p.sigma2 = 0.5 + 2.0 * rng.uniform01();
        p.nugget = 0.8 * rng.uniform01();
        p.range = 0.5 + 4.0 * rng.uniform01();
        p.smoothness = nu;
        const double h = 0.2 + 5.0 * rng.uniform01();
        const auto g = matern_grad(h, p);

        const auto check = [&](int k, const std::function<double(double)>& f, double x) {
          const double fd = oracle::central_diff(f, x);
          CHECK(g[k] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
        };
        check(0, [&](double s2) {
          CovParams q = p; q.sigma2 = s2; return matern(h, q);
        }, p.sigma2);
        check(1, [&](double c) {
          CovParams q = p; q.nugget = c; return matern(h, q);
        }, p.nugget);
        check(2, [&](double r) {
          CovParams q = p; q.range = r; return matern(h, q);
        }, p.range);
      }
    }
  }
}

TEST_CASE("taper weight") {
  CHECK(taper_weight(0.0, 5.0) == 1.0);
  CHECK(taper_weight(5.0, 5.0) == 0.0);
  CHECK(taper_weight(7.0, 5.0) == 0.0);
  CHECK(taper_weight(2.5, 5.0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(taper_weight(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("build_cov assembles matern times taper") {
  SUBCASE("single site") {
    const auto d = pairwise_distances(build_grid(1, 2, 1.0));
    const auto m = build_cov(d, CovParams{2.5, 0.2, 1.0, Smoothness::exponential});
    CHECK(m.p == 1);
    CHECK(m(0, 0) == 2.5);
  }
  SUBCASE("two sites, exponential") {
    Matrix c(2, 2);
    c << 0, 0, 0, 1;
    const auto d = pairwise_distances(make_site_set(2, c, {"a", "b"}));
    const auto m = build_cov(d, CovParams{1.0, 0.2, 1.0, Smoothness::exponential});
    CHECK(m(0, 1) == doctest::Approx(0.2943036).epsilon(1e-6));
    CHECK(m(0, 0) == 1.0);
  }
  SUBCASE("taper width at the lag zeroes the entry") {
    Matrix c(2, 2);
    c << 0, 0, 0, 1;
    const auto d = pairwise_distances(make_site_set(2, c, {"a", "b"}));
    const auto m = build_cov(d, CovParams{1.0, 0.2, 1.0, Smoothness::exponential},
                             TaperSpec::with_width(1.0));
    CHECK(m(0, 1) == 0.0);
    CHECK(m(1, 0) == 0.0);
    CHECK(m(0, 0) == 1.0);
  }
  SUBCASE("sparse storage under a tight taper") {
    const auto d = pairwise_distances(build_grid(6, 2, 1.0));
    const auto m = build_cov(d, CovParams{1.0, 0.2, 2.0, Smoothness::exponential},
                             TaperSpec::with_width(1.5));
    CHECK(m.is_sparse);
    const Matrix dense = m.to_dense();
    const auto full = build_cov(d, CovParams{1.0, 0.2, 2.0, Smoothness::exponential});
    for (int i = 0; i < 36; ++i)
      for (int j = 0; j < 36; ++j) {
        if (d(i, j) >= 1.5) {
          CHECK(dense(i, j) == 0.0);
        } else {
          CHECK(dense(i, j) == doctest::Approx(full(i, j) * taper_weight(d(i, j), 1.5))
                                   .epsilon(1e-15));
        }
      }
  }
}

TEST_CASE("huge taper width reproduces the untapered matrix") {
  const auto d = pairwise_distances(build_grid(4, 2, 1.0));
  const CovParams p{1.0, 0.2, 3.0, Smoothness::exponential};
  const double w = 1e10 * d.values.maxCoeff();
  const auto tapered = build_cov(d, p, TaperSpec::with_width(w));
  const auto plain = build_cov(d, p);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      CHECK(tapered(i, j) == doctest::Approx(plain(i, j)).epsilon(1e-9));
}

TEST_CASE("taper preserves positive definiteness on random instances") {
  RngStream rng(2024, 7);
  for (int rep = 0; rep < 40; ++rep) {
    const int u = 2 + rng.below(7);  // up to 8x8 = 64 sites
    const auto dist = pairwise_distances(build_grid(u, 2, 0.5 + rng.uniform01()));
    CovParams p;
    p.sigma2 = 0.2 + 3.0 * rng.uniform01();
    p.nugget = 0.9 * rng.uniform01();
    p.range = 0.3 + 6.0 * rng.uniform01();
    p.smoothness = rep % 2 == 0 ? Smoothness::exponential : Smoothness::matern32;
    const double w = 0.5 + 5.0 * rng.uniform01();
    CHECK_NOTHROW(cholesky(build_cov(dist, p)));
    CHECK_NOTHROW(cholesky(build_cov(dist, p, TaperSpec::with_width(w))));
  }
}
