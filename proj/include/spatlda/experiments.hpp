#pragma once

#include "spatlda/classify.hpp"
#include "spatlda/cv.hpp"
#include "spatlda/estimation.hpp"

#include <atomic>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace spatlda {

/// Synthetic study scenario on a u x u lattice: class 1 carries mean
/// signal_value on the first signal_count sites, class 2 is centered; the
/// noise field is Matern with the generating family, while the estimators
/// assume the (possibly different) assumed family.
struct Scenario {
  int u = 6;
  int dim = 2;
  double spacing = 1.0;
  double range = 5.0;
  double sigma2 = 1.0;
  double nugget = 0.2;
  Smoothness gen_family = Smoothness::exponential;
  Smoothness assumed_family = Smoothness::exponential;
  int n1 = 30, n2 = 30;
  int test_n1 = 100, test_n2 = 100;
  int signal_count = 10;
  double signal_value = 1.0;
  double taper_width = 0.0;  // 0: tapered method variants use the default rule

  int p() const {
    int v = 1;
    for (int k = 0; k < dim; ++k) v *= u;
    return v;
  }
};

inline Vector scenario_mu1(const Scenario& sc) {
  Vector mu = Vector::Zero(sc.p());
  if (sc.signal_count > sc.p())
    throw std::invalid_argument("Scenario: more signal sites than sites");
  mu.head(sc.signal_count).setConstant(sc.signal_value);
  return mu;
}

inline Vector scenario_mu2(const Scenario& sc) { return Vector::Zero(sc.p()); }

inline CovParams scenario_theta(const Scenario& sc) {
  return CovParams{sc.sigma2, sc.nugget, sc.range, sc.gen_family};
}

/// Default taper threshold used when a tapered method variant runs without
/// an explicit width: p^(1/2d) lattice spacings.
inline double default_taper_width(const Scenario& sc) {
  return std::pow(static_cast<double>(sc.p()), 1.0 / (2.0 * sc.dim)) * sc.spacing;
}

enum class Role { train, test };

inline LabeledDataset simulate_dataset(const Scenario& sc, Role role, RngStream& rng) {
  const SiteSet sites = build_grid(sc.u, sc.dim, sc.spacing);
  const DistanceMatrix dist = pairwise_distances(sites);
  const SpdFactor f = cholesky(build_cov(dist, scenario_theta(sc)));
  const int n1 = role == Role::train ? sc.n1 : sc.test_n1;
  const int n2 = role == Role::train ? sc.n2 : sc.test_n2;
  Matrix c1 = f.sample(scenario_mu1(sc), rng, n1);
  Matrix c2 = f.sample(scenario_mu2(sc), rng, n2);
  return make_dataset(std::move(c1), std::move(c2), sites);
}

enum class Method { bayes, mle, preg, pmle, nb, fair };

struct MethodSpec {
  Method kind = Method::pmle;
  bool tapered = false;

  std::string name() const {
    std::string base;
    switch (kind) {
      case Method::bayes: base = "true"; break;
      case Method::mle: base = "mle"; break;
      case Method::preg: base = "preg"; break;
      case Method::pmle: base = "pmle"; break;
      case Method::nb: base = "nb"; break;
      case Method::fair: base = "fair"; break;
    }
    return tapered ? base + "+taper" : base;
  }
};

inline MethodSpec parse_method(const std::string& name) {
  MethodSpec spec;
  std::string base = name;
  const auto plus = name.find('+');
  if (plus != std::string::npos) {
    if (name.substr(plus + 1) != "taper")
      throw std::invalid_argument("unknown method variant '" + name + "'");
    spec.tapered = true;
    base = name.substr(0, plus);
  }
  if (base == "true") spec.kind = Method::bayes;
  else if (base == "mle") spec.kind = Method::mle;
  else if (base == "preg") spec.kind = Method::preg;
  else if (base == "pmle") spec.kind = Method::pmle;
  else if (base == "nb") spec.kind = Method::nb;
  else if (base == "fair") spec.kind = Method::fair;
  else throw std::invalid_argument("unknown method '" + name + "'");
  if (spec.tapered &&
      (spec.kind == Method::bayes || spec.kind == Method::nb || spec.kind == Method::fair))
    throw std::invalid_argument("method '" + base + "' has no tapered variant");
  return spec;
}

struct LambdaPolicy {
  bool cv = true;
  double fixed = 0.0;

  static LambdaPolicy cross_validated() { return LambdaPolicy{true, 0.0}; }
  static LambdaPolicy fixed_at(double lambda) { return LambdaPolicy{false, lambda}; }
};

struct MethodMetrics {
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  bool has_theta = false;
  CovParams theta;
  bool has_selection = false;
  int selected = 0;
  int correct = 0;
  double lambda = 0.0;
};

struct ReplicationRow {
  int rep = 0;
  std::map<std::string, MethodMetrics> methods;
};

namespace detail {

inline int count_correct(const std::vector<int>& support, int signal_count) {
  int correct = 0;
  for (int j : support)
    if (j < signal_count) ++correct;
  return correct;
}

}  // namespace detail

/// One replication: a fresh train/test pair from streams keyed by
/// (base_seed, rep_index), every requested method fitted and scored on the
/// test pair.  Per-method failures are recorded without aborting the row.
inline ReplicationRow run_replication(const Scenario& sc, const std::vector<MethodSpec>& methods,
                                      const LambdaPolicy& lambda_policy, int rep_index,
                                      std::uint64_t base_seed) {
  constexpr std::uint64_t kStreamsPerRep = 8;
  RngStream rng_train(base_seed, rep_index * kStreamsPerRep + 0);
  RngStream rng_test(base_seed, rep_index * kStreamsPerRep + 1);
  RngStream rng_cv(base_seed, rep_index * kStreamsPerRep + 2);
  RngStream rng_fair(base_seed, rep_index * kStreamsPerRep + 3);

  ReplicationRow row;
  row.rep = rep_index;

  const LabeledDataset train = simulate_dataset(sc, Role::train, rng_train);
  const LabeledDataset test = simulate_dataset(sc, Role::test, rng_test);
  const DistanceMatrix dist = pairwise_distances(train.sites);
  const TaperSpec cls_taper = TaperSpec::none();

  bool want_pmle = false, want_preg = false, want_pmle_t = false, want_preg_t = false;
  for (const auto& m : methods) {
    if (m.kind == Method::pmle) (m.tapered ? want_pmle_t : want_pmle) = true;
    if (m.kind == Method::preg) (m.tapered ? want_preg_t : want_preg) = true;
  }

  const auto est_taper_for = [&](bool tapered) {
    if (!tapered) return TaperSpec::none();
    return TaperSpec::with_width(sc.taper_width > 0.0 ? sc.taper_width
                                                      : default_taper_width(sc));
  };

  // Shared penalized pipeline per taper variant: one CV pass scores both the
  // PMLE and the PREG classifier, then each method refits at its own lambda.
  struct PenalizedOut {
    MethodMetrics pmle, preg;
  };
  const auto run_penalized = [&](bool tapered, bool need_pmle, bool need_preg) {
    PenalizedOut out;
    const TaperSpec est_taper = est_taper_for(tapered);
    const CovParams init = default_theta_init(train, dist, sc.assumed_family);
    double lambda_pmle = lambda_policy.fixed, lambda_preg = lambda_policy.fixed;
    if (lambda_policy.cv) {
      CvOptions cv_options;
      cv_options.family = sc.assumed_family;
      cv_options.estimation_taper = est_taper;
      cv_options.classification_taper = cls_taper;
      cv_options.stages = need_pmle ? 4 : 2;
      const auto grid = default_lambda_grid(transform_Z(train));
      const CvResult cv = select_lambda_cv(train, dist, grid, 10, rng_cv, cv_options);
      lambda_pmle = cv.lambda_pmle;
      lambda_preg = cv.lambda_preg;
    }
    const auto fill = [&](MethodMetrics& mm, const FitResult& fit) {
      const auto model = build_model(fit, dist, cls_taper);
      mm.accuracy = 1.0 - empirical_error(model, test);
      mm.has_theta = true;
      mm.theta = fit.theta;
      mm.has_selection = true;
      mm.selected = static_cast<int>(fit.support.size());
      mm.correct = detail::count_correct(fit.support, sc.signal_count);
      mm.lambda = fit.lambda_used;
      mm.ok = true;
    };
    if (need_pmle)
      fill(out.pmle, one_step_pmle(train, dist, ScadSpec{lambda_pmle, 3.7}, est_taper, init, 4));
    if (need_preg)
      fill(out.preg, one_step_pmle(train, dist, ScadSpec{lambda_preg, 3.7}, est_taper, init, 2));
    return out;
  };

  PenalizedOut shared, shared_tapered;
  std::string shared_error, shared_tapered_error;
  if (want_pmle || want_preg) {
    try {
      shared = run_penalized(false, want_pmle, want_preg);
    } catch (const std::exception& e) {
      shared_error = e.what();
    }
  }
  if (want_pmle_t || want_preg_t) {
    try {
      shared_tapered = run_penalized(true, want_pmle_t, want_preg_t);
    } catch (const std::exception& e) {
      shared_tapered_error = e.what();
    }
  }

  for (const auto& m : methods) {
    MethodMetrics mm;
    try {
      switch (m.kind) {
        case Method::bayes: {
          const auto model =
              model_from_truth(scenario_mu1(sc), scenario_mu2(sc),
                               build_cov(dist, scenario_theta(sc)));
          mm.accuracy = 1.0 - empirical_error(model, test);
          mm.ok = true;
          break;
        }
        case Method::mle: {
          const TaperSpec est_taper = est_taper_for(m.tapered);
          const FitResult fit = mle_fit(train, dist, sc.assumed_family, est_taper,
                                        default_theta_init(train, dist, sc.assumed_family));
          const auto model = build_model(fit, dist, cls_taper);
          mm.accuracy = 1.0 - empirical_error(model, test);
          mm.has_theta = true;
          mm.theta = fit.theta;
          mm.ok = true;
          break;
        }
        case Method::pmle:
        case Method::preg: {
          const auto& bundle = m.tapered ? shared_tapered : shared;
          const auto& err = m.tapered ? shared_tapered_error : shared_error;
          if (!err.empty()) throw std::runtime_error(err);
          mm = m.kind == Method::pmle ? bundle.pmle : bundle.preg;
          break;
        }
        case Method::nb: {
          const auto model = fit_nb(train);
          mm.accuracy = 1.0 - empirical_error(model, test);
          mm.ok = true;
          break;
        }
        case Method::fair: {
          const auto model = fit_fair(train, std::nullopt, rng_fair);
          mm.accuracy = 1.0 - empirical_error(model, test);
          mm.has_selection = true;
          mm.selected = static_cast<int>(model.subset.size());
          mm.correct = detail::count_correct(model.subset, sc.signal_count);
          mm.ok = true;
          break;
        }
      }
    } catch (const std::exception& e) {
      mm = MethodMetrics{};
      mm.error = e.what();
    }
    row.methods[m.name()] = mm;
  }
  return row;
}

struct Moments {
  double mean = 0.0, sd = 0.0;
  int count = 0;
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  m.count = static_cast<int>(xs.size());
  if (m.count == 0) return m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / m.count;
  if (m.count > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / (m.count - 1));  // n-1 divisor
  }
  return m;
}

struct MethodSummary {
  int reps_ok = 0;
  Moments accuracy;
  bool has_theta = false;
  Moments range, nugget, sigma2, sigma;
  bool has_selection = false;
  Moments selected, correct;
};

struct StudyReport {
  Scenario scenario;
  std::uint64_t base_seed = 0;
  int reps = 0;
  int failed_rows = 0;
  std::vector<std::string> method_names;
  std::map<std::string, MethodSummary> summary;
  std::vector<ReplicationRow> rows;
};

/// Runs `reps` replications (possibly concurrently) and aggregates them.
/// Streams are keyed by replication index, so the report is identical for
/// any parallelism degree.  Fails if more than 20% of replications fail.
inline StudyReport run_study(const Scenario& sc, const std::vector<MethodSpec>& methods,
                             int reps, std::uint64_t base_seed, int parallelism = 1,
                             const LambdaPolicy& lambda_policy = LambdaPolicy::cross_validated()) {
  if (reps < 2) throw std::invalid_argument("run_study: need at least 2 replications");
  scenario_mu1(sc);  // fail fast on an invalid scenario before spawning workers

  StudyReport report;
  report.scenario = sc;
  report.base_seed = base_seed;
  report.reps = reps;
  for (const auto& m : methods) report.method_names.push_back(m.name());

  report.rows.resize(reps);
  const auto run_one = [&](int r) {
    try {
      report.rows[r] = run_replication(sc, methods, lambda_policy, r, base_seed);
    } catch (const std::exception& e) {
      // replication-level failure (e.g. simulation itself): every method fails
      ReplicationRow row;
      row.rep = r;
      for (const auto& m : methods) {
        MethodMetrics mm;
        mm.error = e.what();
        row.methods[m.name()] = mm;
      }
      report.rows[r] = std::move(row);
    }
  };
  const int workers = std::max(1, std::min(parallelism, reps));
  if (workers == 1) {
    for (int r = 0; r < reps; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) run_one(r);
      });
    for (auto& t : pool) t.join();
  }

  int method_failures = 0, method_runs = 0;
  for (const auto& name : report.method_names) {
    MethodSummary s;
    std::vector<double> acc, rr, cc, s2, sg, sel, cor;
    for (const auto& row : report.rows) {
      const auto it = row.methods.find(name);
      if (it == row.methods.end()) continue;
      ++method_runs;
      if (!it->second.ok) {
        ++method_failures;
        continue;
      }
      const auto& mm = it->second;
      acc.push_back(mm.accuracy);
      if (mm.has_theta) {
        s.has_theta = true;
        rr.push_back(mm.theta.range);
        cc.push_back(mm.theta.nugget);
        s2.push_back(mm.theta.sigma2);
        sg.push_back(std::sqrt(mm.theta.sigma2));
      }
      if (mm.has_selection) {
        s.has_selection = true;
        sel.push_back(mm.selected);
        cor.push_back(mm.correct);
      }
    }
    s.reps_ok = static_cast<int>(acc.size());
    s.accuracy = moments(acc);
    s.range = moments(rr);
    s.nugget = moments(cc);
    s.sigma2 = moments(s2);
    s.sigma = moments(sg);
    s.selected = moments(sel);
    s.correct = moments(cor);
    report.summary[name] = s;
  }
  report.failed_rows = method_failures;
  if (method_runs > 0 && method_failures * 5 > method_runs)
    throw std::runtime_error("run_study: more than 20% of replication fits failed");
  return report;
}

namespace detail {

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace detail

/// CSV serialization: one row per method with mean/sd columns.
inline std::string study_csv(const StudyReport& report) {
  std::ostringstream os;
  os << "u,p,r,gen_family,assumed_family,n1,n2,reps,method,reps_ok,"
        "accuracy_mean,accuracy_sd,range_mean,range_sd,nugget_mean,nugget_sd,"
        "sigma2_mean,sigma2_sd,selected_mean,selected_sd,correct_mean,correct_sd\n";
  os.precision(17);
  const auto& sc = report.scenario;
  for (const auto& name : report.method_names) {
    const auto& s = report.summary.at(name);
    os << sc.u << ',' << sc.p() << ',' << sc.range << ',' << to_string(sc.gen_family) << ','
       << to_string(sc.assumed_family) << ',' << sc.n1 << ',' << sc.n2 << ',' << report.reps
       << ',' << name << ',' << s.reps_ok << ',' << s.accuracy.mean << ',' << s.accuracy.sd;
    if (s.has_theta)
      os << ',' << s.range.mean << ',' << s.range.sd << ',' << s.nugget.mean << ','
         << s.nugget.sd << ',' << s.sigma2.mean << ',' << s.sigma2.sd;
    else
      os << ",,,,,,";
    if (s.has_selection)
      os << ',' << s.selected.mean << ',' << s.selected.sd << ',' << s.correct.mean << ','
         << s.correct.sd;
    else
      os << ",,,,";
    os << '\n';
  }
  return os.str();
}

/// Aligned text table, one "mean(sd)" cell per method.
inline std::string study_table(const StudyReport& report) {
  std::ostringstream os;
  const auto& sc = report.scenario;
  os << "p=" << sc.p() << "  r=" << sc.range << "  n1=" << sc.n1 << "  n2=" << sc.n2
     << "  reps=" << report.reps << "  gen=" << to_string(sc.gen_family)
     << "  assumed=" << to_string(sc.assumed_family) << "  seed=" << report.base_seed << "\n";

  const auto cell = [](const Moments& m) {
    return detail::fmt(m.mean, 3) + "(" + detail::fmt(m.sd, 2) + ")";
  };

  os << std::left << std::setw(14) << "metric";
  for (const auto& name : report.method_names) os << std::setw(15) << name;
  os << '\n';

  os << std::left << std::setw(14) << "accuracy";
  for (const auto& name : report.method_names)
    os << std::setw(15) << cell(report.summary.at(name).accuracy);
  os << '\n';

  const auto theta_row = [&](const std::string& label, Moments MethodSummary::*field) {
    os << std::left << std::setw(14) << label;
    for (const auto& name : report.method_names) {
      const auto& s = report.summary.at(name);
      os << std::setw(15) << (s.has_theta ? cell(s.*field) : std::string("-"));
    }
    os << '\n';
  };
  theta_row("range", &MethodSummary::range);
  theta_row("nugget", &MethodSummary::nugget);
  theta_row("sigma2", &MethodSummary::sigma2);

  const auto sel_row = [&](const std::string& label, Moments MethodSummary::*field) {
    os << std::left << std::setw(14) << label;
    for (const auto& name : report.method_names) {
      const auto& s = report.summary.at(name);
      os << std::setw(15) << (s.has_selection ? cell(s.*field) : std::string("-"));
    }
    os << '\n';
  };
  sel_row("selectedN", &MethodSummary::selected);
  sel_row("correctN", &MethodSummary::correct);
  return os.str();
}

}  // namespace spatlda
