#pragma once

#include "spatlda/classify.hpp"
#include "spatlda/estimation.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace spatlda {

struct CvOptions {
  Smoothness family = Smoothness::exponential;
  TaperSpec estimation_taper = TaperSpec::none();
  TaperSpec classification_taper = TaperSpec::none();
  int stages = 4;   // 4 scores the PMLE classifier, 2 only PREG
  int threads = 1;  // folds evaluate concurrently
};

struct CvResult {
  std::vector<double> lambdas;
  Vector error_pmle;   // mean held-out error per lambda (stages = 4)
  Vector error_preg;   // same for the stage-2 classifier
  double lambda_pmle = 0.0;
  double lambda_preg = 0.0;
  double lambda = 0.0;  // the selected value for the requested method
};

/// 10-fold cross-validation of the SCAD tuning parameter: for every lambda,
/// the average held-out misclassification rate of the classifier fitted on
/// the training folds.  Folds are class-stratified; the lambda path runs
/// from sparsest down, warm-starting theta; ties break toward the larger
/// (sparser) lambda.
inline CvResult select_lambda_cv(const LabeledDataset& data, const DistanceMatrix& dist,
                                 const std::vector<double>& grid, int folds, RngStream rng,
                                 const CvOptions& options = CvOptions{}) {
  if (grid.empty()) throw std::invalid_argument("select_lambda_cv: empty lambda grid");
  const auto fold_sets = stratified_folds(data.n1(), data.n2(), folds, rng);
  const int L = static_cast<int>(grid.size());

  std::vector<double> sorted(grid);
  std::sort(sorted.begin(), sorted.end());

  Matrix wrong_pmle = Matrix::Zero(folds, L);
  Matrix wrong_preg = Matrix::Zero(folds, L);

  const auto run_fold = [&](int k) {
    const auto& held = fold_sets[k];
    const auto train = detail::subset_rows(data, detail::complement(data.n1(), held.class1_rows),
                                           detail::complement(data.n2(), held.class2_rows));
    const auto valid = detail::subset_rows(data, held.class1_rows, held.class2_rows);
    const double valid_n = valid.n();

    CovParams warm = default_theta_init(train, dist, options.family);
    for (int gi = L - 1; gi >= 0; --gi) {  // descending lambda path
      const ScadSpec spec{sorted[gi], 3.7};
      const FitResult fit =
          one_step_pmle(train, dist, spec, options.estimation_taper, warm, options.stages);
      warm = fit.theta;

      if (options.stages == 4) {
        const auto model = build_model(fit, dist, options.classification_taper);
        wrong_pmle(k, gi) = empirical_error(model, valid) * valid_n;
      }
      FitResult stage2 = fit;
      stage2.method = "preg";
      stage2.delta = fit.trace.beta0;
      stage2.theta = fit.trace.theta0;
      detail::finish_fit(stage2, train);
      const auto preg_model = build_model(stage2, dist, options.classification_taper);
      wrong_preg(k, gi) = empirical_error(preg_model, valid) * valid_n;
    }
  };

  const int workers = std::max(1, std::min(options.threads, folds));
  if (workers == 1) {
    for (int k = 0; k < folds; ++k) run_fold(k);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (int k = next.fetch_add(1); k < folds; k = next.fetch_add(1)) run_fold(k);
      });
    for (auto& t : pool) t.join();
  }

  CvResult result;
  result.lambdas = sorted;
  const double total = data.n();
  result.error_preg = wrong_preg.colwise().sum() / total;
  if (options.stages == 4) result.error_pmle = wrong_pmle.colwise().sum() / total;

  const auto pick_largest_min = [&](const Vector& err) {
    int best = 0;
    for (int gi = 1; gi < L; ++gi)
      if (err[gi] <= err[best]) best = gi;  // grid ascending: ties land on larger lambda
    return sorted[best];
  };
  result.lambda_preg = pick_largest_min(result.error_preg);
  if (options.stages == 4) {
    result.lambda_pmle = pick_largest_min(result.error_pmle);
    result.lambda = result.lambda_pmle;
  } else {
    result.lambda = result.lambda_preg;
  }
  return result;
}

}  // namespace spatlda
