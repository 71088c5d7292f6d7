#include "spatlda/classify.hpp"

#include <doctest.h>

#include "oracles.hpp"
#include "spatlda/experiments.hpp"

using namespace spatlda;

namespace {

/// Maximum-posterior-density rule with equal priors: class 1 iff the class-1
/// Gaussian density is strictly larger.  Quadratic forms go through the LU
/// oracle, a route independent of the library's scoring path.
int bayes_density_rule(const Vector& x, const Vector& mu1, const Vector& mu2,
                       const Matrix& sigma) {
  const auto lu = oracle::lu_factor(sigma);
  const Vector r1 = x - mu1, r2 = x - mu2;
  const double q1 = r1.dot(oracle::lu_solve(lu, r1));
  const double q2 = r2.dot(oracle::lu_solve(lu, r2));
  return q1 < q2 ? 1 : 2;
}

Matrix random_spd(int p, RngStream& rng, double ridge = 2.0) {
  Matrix b(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) b(i, j) = rng.normal();
  return b * b.transpose() / p + ridge * Matrix::Identity(p, p);
}

}  // namespace

TEST_CASE("discriminant score basics") {
  Vector mu1 = Vector::Zero(4), mu2 = Vector::Zero(4);
  mu1[0] = 1.0;
  mu2[0] = -1.0;
  const auto model = model_from_truth(mu1, mu2, cov_from_dense(Matrix::Identity(4, 4)));
  CHECK(discriminant_score(mu1, model) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(discriminant_score(Vector::Zero(4), model) == 0.0);
  CHECK(classify(mu1, model) == 1);
  CHECK(classify(Vector::Zero(4), model) == 2);  // ties go to class 2

  RngStream rng(21, 1);
  const Matrix sigma = random_spd(5, rng);
  Vector m1(5), m2(5);
  for (int i = 0; i < 5; ++i) {
    m1[i] = rng.normal();
    m2[i] = rng.normal();
  }
  const auto m = model_from_truth(m1, m2, cov_from_dense(sigma));
  const Matrix inv = oracle::lu_inverse(oracle::lu_factor(sigma));
  for (int rep = 0; rep < 25; ++rep) {
    Vector x(5);
    for (int i = 0; i < 5; ++i) x[i] = rng.normal();
    const double direct = (x - (m1 + m2) / 2.0).dot(inv * (m1 - m2));
    CHECK(discriminant_score(x, m) == doctest::Approx(direct).epsilon(1e-10));
  }
  CHECK_THROWS_AS(discriminant_score(Vector::Zero(3), m), std::invalid_argument);
}

TEST_CASE("classify equals the Bayes density rule under true parameters") {
  RngStream rng(22, 1);
  const Matrix sigma = random_spd(4, rng);
  Vector mu1(4), mu2(4);
  for (int i = 0; i < 4; ++i) {
    mu1[i] = rng.normal();
    mu2[i] = rng.normal();
  }
  const auto model = model_from_truth(mu1, mu2, cov_from_dense(sigma));
  for (int rep = 0; rep < 1000; ++rep) {
    Vector x(4);
    for (int i = 0; i < 4; ++i) x[i] = 2.0 * rng.normal();
    CHECK(classify(x, model) == bayes_density_rule(x, mu1, mu2, sigma));
  }
}

TEST_CASE("labels are invariant under covariance scaling") {
  RngStream rng(23, 1);
  const Matrix sigma = random_spd(6, rng);
  Vector mu1(6), mu2(6);
  for (int i = 0; i < 6; ++i) {
    mu1[i] = rng.normal();
    mu2[i] = rng.normal();
  }
  const auto base = model_from_truth(mu1, mu2, cov_from_dense(sigma));
  for (double alpha : {0.01, 0.5, 3.0, 1e4}) {
    const auto scaled = model_from_truth(mu1, mu2, cov_from_dense(alpha * sigma));
    for (int rep = 0; rep < 50; ++rep) {
      Vector x(6);
      for (int i = 0; i < 6; ++i) x[i] = 2.0 * rng.normal();
      CHECK(classify(x, base) == classify(x, scaled));
    }
  }
}

TEST_CASE("build_model") {
  RngStream rng(24, 1);
  Scenario sc;
  sc.u = 4;
  sc.range = 2.0;
  sc.n1 = 15;
  sc.n2 = 15;
  const auto data = simulate_dataset(sc, Role::train, rng);
  const auto dist = pairwise_distances(data.sites);
  const auto zt = transform_Z(data);
  const auto fit = one_step_pmle(data, dist, ScadSpec{0.3 * lambda_max(zt), 3.7},
                                 TaperSpec::none(),
                                 default_theta_init(data, dist, Smoothness::exponential));

  SUBCASE("no classification taper leaves Sigma(theta) untouched") {
    const auto model = build_model(fit, dist);
    const auto f = cholesky(build_cov(dist, fit.theta));
    CHECK((model.weight - f.solve(fit.delta)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_FALSE(model.degenerate);
  }
  SUBCASE("classification taper reshapes the weight") {
    const auto model = build_model(fit, dist, TaperSpec::with_width(1.5));
    const auto f = cholesky(build_cov(dist, fit.theta, TaperSpec::with_width(1.5)));
    CHECK((model.weight - f.solve(fit.delta)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("empty support falls back to all features with a flag") {
    FitResult zero = fit;
    zero.delta.setZero();
    detail::finish_fit(zero, data);
    REQUIRE(zero.support.empty());
    const auto model = build_model(zero, dist);
    CHECK(model.degenerate);
    CHECK(model.subset.size() == 16);
    // a zero delta scores everything to class 2
    CHECK(classify(Vector(Vector::Random(16)), model) == 2);
  }
}

TEST_CASE("independence rule (NB)") {
  SUBCASE("pooled variances use the n-2 divisor") {
    RngStream rng(25, 1);
    const SiteSet sites = build_grid(2, 1, 1.0);
    Matrix c1(4, 2), c2(5, 2);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) c1(i, j) = rng.normal();
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 2; ++j) c2(i, j) = rng.normal();
    const auto data = make_dataset(c1, c2, sites);
    const auto model = fit_nb(data);
    const auto cm = class_means(data);
    for (int j = 0; j < 2; ++j) {
      double ss = 0;
      for (int i = 0; i < 4; ++i) ss += std::pow(c1(i, j) - cm.mu1[j], 2);
      for (int i = 0; i < 5; ++i) ss += std::pow(c2(i, j) - cm.mu2[j], 2);
      CHECK(model.variances[j] == doctest::Approx(ss / 7.0).epsilon(1e-12));
    }
    CHECK(model.diagonal);
  }
  SUBCASE("zero-variance feature is floored and flagged") {
    const SiteSet sites = build_grid(2, 1, 1.0);
    Matrix c1(3, 2), c2(3, 2);
    c1.setZero();
    c2.setZero();
    c1.col(1) << 0.1, -0.2, 0.4;  // second feature varies, first is constant
    c2.col(1) << 0.5, 0.2, -0.3;
    const auto model = fit_nb(make_dataset(c1, c2, sites));
    CHECK(model.variance_floored);
    CHECK(model.variances[0] == 1e-12);
  }
  SUBCASE("identical classes classify at chance") {
    RngStream rng(26, 1);
    Scenario sc;
    sc.u = 3;
    sc.signal_count = 9;
    sc.signal_value = 0.0;
    sc.range = 1.0;
    const auto train = simulate_dataset(sc, Role::train, rng);
    const auto test = simulate_dataset(sc, Role::test, rng);
    const double err = empirical_error(fit_nb(train), test);
    CHECK(err > 0.3);
    CHECK(err < 0.7);
  }
  SUBCASE("diagonal truth: NB approaches the Bayes rule for large n") {
    RngStream rng(27, 1);
    const SiteSet sites = build_grid(4, 1, 1.0);
    Vector mu1(4), mu2 = Vector::Zero(4);
    mu1 << 1.0, 0.5, 0.0, -0.5;
    Matrix diag = Matrix::Zero(4, 4);
    diag.diagonal() << 1.0, 2.0, 0.5, 1.5;
    const auto f = cholesky_dense(diag);
    const Matrix c1 = sample_mvn(mu1, f, rng, 2000);
    const Matrix c2 = sample_mvn(mu2, f, rng, 2000);
    const auto train = make_dataset(c1, c2, sites);
    const auto tc1 = sample_mvn(mu1, f, rng, 2000);
    const auto tc2 = sample_mvn(mu2, f, rng, 2000);
    const auto test = make_dataset(tc1, tc2, sites);
    const double nb_err = empirical_error(fit_nb(train), test);
    const double bayes_err =
        empirical_error(model_from_truth(mu1, mu2, cov_from_dense(diag)), test);
    CHECK(nb_err < bayes_err + 0.02);
  }
}

TEST_CASE("FAIR") {
  SUBCASE("a feature with no class difference ranks last") {
    RngStream rng(28, 1);
    const SiteSet sites = build_grid(3, 1, 1.0);
    Matrix c1(40, 3), c2(40, 3);
    for (int i = 0; i < 40; ++i)
      for (int j = 0; j < 3; ++j) {
        c1(i, j) = rng.normal() + (j == 0 ? 3.0 : (j == 1 ? 1.5 : 0.0));
        c2(i, j) = rng.normal();
      }
    const auto data = make_dataset(c1, c2, sites);
    const Vector t = t_statistics(data);
    CHECK(std::abs(t[2]) < std::abs(t[0]));
    CHECK(std::abs(t[2]) < std::abs(t[1]));
    const auto top2 = fit_fair(data, 2, RngStream(1, 1));
    CHECK(top2.subset == std::vector<int>{0, 1});
  }
  SUBCASE("fixed m scores only the retained coordinates") {
    RngStream rng(29, 1);
    Scenario sc;
    sc.u = 3;
    sc.signal_count = 3;
    const auto data = simulate_dataset(sc, Role::train, rng);
    const auto model = fit_fair(data, 3, RngStream(2, 1));
    Vector x = Vector::Zero(9);
    const double base = discriminant_score(x, model);
    for (int j = 0; j < 9; ++j) {
      const bool retained =
          std::find(model.subset.begin(), model.subset.end(), j) != model.subset.end();
      Vector x2 = x;
      x2[j] += 5.0;
      if (retained)
        CHECK(discriminant_score(x2, model) != base);
      else
        CHECK(discriminant_score(x2, model) == base);
    }
  }
  SUBCASE("CV-selected m stays parsimonious under spatial correlation") {
    RngStream rng(30, 1);
    Scenario sc;
    sc.u = 6;
    sc.range = 5.0;
    const auto data = simulate_dataset(sc, Role::train, rng);
    const auto model = fit_fair(data, std::nullopt, RngStream(3, 1));
    CHECK(model.subset.size() >= 1);
    CHECK(model.subset.size() <= 16);
  }
}

TEST_CASE("theoretical error rates") {
  SUBCASE("truth with identity covariance and delta = 2 e1") {
    Vector mu1 = Vector::Zero(3), mu2 = Vector::Zero(3);
    mu1[0] = 1.0;
    mu2[0] = -1.0;
    const auto model = model_from_truth(mu1, mu2, cov_from_dense(Matrix::Identity(3, 3)));
    const auto er =
        theoretical_errors(model, mu1, mu2, cov_from_dense(Matrix::Identity(3, 3)));
    CHECK(er.cp == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(er.w_opt == doctest::Approx(1.0 - normal_cdf(1.0)).epsilon(1e-14));
    CHECK(er.w == doctest::Approx(0.15865525393145707).epsilon(1e-10));
    CHECK(std::abs(er.w - er.w_opt) < 1e-10);
    CHECK(er.w == (er.w1 + er.w2) / 2.0);
  }
  SUBCASE("truth model is optimal for a general covariance") {
    RngStream rng(31, 1);
    const Matrix sigma = random_spd(5, rng);
    Vector mu1(5), mu2(5);
    for (int i = 0; i < 5; ++i) {
      mu1[i] = rng.normal();
      mu2[i] = rng.normal();
    }
    const auto model = model_from_truth(mu1, mu2, cov_from_dense(sigma));
    const auto er = theoretical_errors(model, mu1, mu2, cov_from_dense(sigma));
    CHECK(std::abs(er.w - er.w_opt) < 1e-10);
  }
  SUBCASE("midpoint shifted onto mu1 gives W1 = 1/2") {
    Vector mu1 = Vector::Zero(2), mu2 = Vector::Zero(2);
    mu1[0] = 1.0;
    mu2[0] = -1.0;
    auto model = model_from_truth(mu1, mu2, cov_from_dense(Matrix::Identity(2, 2)));
    model.midpoint = mu1;
    const auto er = theoretical_errors(model, mu1, mu2, cov_from_dense(Matrix::Identity(2, 2)));
    CHECK(er.psi1 == doctest::Approx(0.0));
    CHECK(er.w1 == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("zero delta degenerates to W = 1/2") {
    Vector mu = Vector::Zero(2);
    auto model = model_from_truth(Vector(Vector::Ones(2)), Vector(Vector::Ones(2)),
                                  cov_from_dense(Matrix::Identity(2, 2)));
    const auto er = theoretical_errors(model, mu, mu, cov_from_dense(Matrix::Identity(2, 2)));
    CHECK(er.degenerate);
    CHECK(er.w == 0.5);
  }
  SUBCASE("W matches a Monte-Carlo error for a perturbed model") {
    RngStream rng(32, 1);
    const Matrix sigma = random_spd(4, rng, 1.0);
    Vector mu1(4), mu2(4);
    for (int i = 0; i < 4; ++i) {
      mu1[i] = 0.7 * rng.normal();
      mu2[i] = 0.7 * rng.normal();
    }
    // a deliberately wrong plug-in model
    Vector mu1_hat = mu1, mu2_hat = mu2;
    for (int i = 0; i < 4; ++i) {
      mu1_hat[i] += 0.25 * rng.normal();
      mu2_hat[i] += 0.25 * rng.normal();
    }
    const Matrix sigma_hat = random_spd(4, rng, 1.5);
    const auto model = model_from_truth(mu1_hat, mu2_hat, cov_from_dense(sigma_hat));
    const auto er = theoretical_errors(model, mu1, mu2, cov_from_dense(sigma));

    const int draws = 200000;
    const auto f = cholesky(cov_from_dense(sigma));
    long wrong = 0;
    RngStream mc(33, 1);
    const Matrix d1 = sample_mvn(mu1, f, mc, draws / 2);
    const Matrix d2 = sample_mvn(mu2, f, mc, draws / 2);
    for (int i = 0; i < draws / 2; ++i) {
      if (classify(d1.row(i).transpose(), model) != 1) ++wrong;
      if (classify(d2.row(i).transpose(), model) != 2) ++wrong;
    }
    const double mc_err = static_cast<double>(wrong) / draws;
    CHECK(std::abs(er.w - mc_err) < 0.005);
    // no plug-in rule beats the Bayes rate (up to MC noise)
    CHECK(mc_err >= er.w_opt - 3.0 * std::sqrt(0.25 / draws));
  }
}

TEST_CASE("empirical error") {
  const SiteSet sites = build_grid(2, 1, 1.0);
  Matrix c1(2, 2), c2(2, 2);
  c1 << 5, 5, 6, 6;
  c2 << -5, -5, -6, -6;
  const auto test = make_dataset(c1, c2, sites);
  Vector mu1(2), mu2(2);
  mu1 << 5, 5;
  mu2 << -5, -5;
  const auto good = model_from_truth(mu1, mu2, cov_from_dense(Matrix::Identity(2, 2)));
  CHECK(empirical_error(good, test) == 0.0);
  const auto flipped = model_from_truth(mu2, mu1, cov_from_dense(Matrix::Identity(2, 2)));
  CHECK(empirical_error(flipped, test) == 1.0);
}

TEST_CASE("PMLE midpoint matches the plug-in centering term") {
  RngStream rng(34, 1);
  Scenario sc;
  sc.u = 4;
  sc.range = 2.0;
  sc.n1 = 13;
  sc.n2 = 17;  // unequal class sizes exercise the (n2-n1)/2n shift
  const auto data = simulate_dataset(sc, Role::train, rng);
  const auto dist = pairwise_distances(data.sites);
  const auto zt = transform_Z(data);
  const auto fit = one_step_pmle(data, dist, ScadSpec{0.3 * lambda_max(zt), 3.7},
                                 TaperSpec::none(),
                                 default_theta_init(data, dist, Smoothness::exponential));
  const auto model = build_model(fit, dist);
  const double n = data.n();
  const Vector expected = fit.ybar + ((data.n2() - data.n1()) / (2.0 * n)) * fit.delta;
  CHECK((model.midpoint - expected).cwiseAbs().maxCoeff() < 1e-12);
}
