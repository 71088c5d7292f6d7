// spatlda: penalized maximum-likelihood LDA for spatially correlated
// features.  Subcommands: simulate, fit, predict, evaluate, study.
//
// Exit codes: 0 success, 1 runtime/fit failure, 2 usage or config error.

#include "spatlda/cv.hpp"
#include "spatlda/experiments.hpp"
#include "spatlda/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace spatlda;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int thread_cap() {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (const char* env = std::getenv("SPATIAL_LDA_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) cap = std::min(cap, v);
    } catch (const std::exception&) {
      throw UsageError("SPATIAL_LDA_THREADS must be a positive integer");
    }
  }
  return cap;
}

std::string zero_pad(int value, int width) {
  std::ostringstream os;
  os.width(width);
  os.fill('0');
  os << value;
  return os.str();
}

/// Estimation-taper policy for `--taper-width auto`: no taper up to p = 400,
/// p^(1/2d) median nearest-neighbour spacings above.
TaperSpec auto_taper(const SiteSet& sites, const DistanceMatrix& dist) {
  const int p = dist.size();
  if (p <= 400) return TaperSpec::none();
  std::vector<double> nn(p);
  for (int i = 0; i < p; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < p; ++j)
      if (j != i) best = std::min(best, dist(i, j));
    nn[i] = best;
  }
  auto mid = nn.begin() + nn.size() / 2;
  std::nth_element(nn.begin(), mid, nn.end());
  const double width = std::pow(static_cast<double>(p), 1.0 / (2.0 * sites.dim)) * *mid;
  return TaperSpec::with_width(width);
}

TaperSpec parse_taper_flag(const std::string& flag, const SiteSet& sites,
                           const DistanceMatrix& dist) {
  if (flag == "none") return TaperSpec::none();
  if (flag == "auto") return auto_taper(sites, dist);
  double w = 0;
  if (!detail::parse_double(flag, w) || !(w > 0))
    throw UsageError("--taper-width must be auto, none or a positive number");
  return TaperSpec::with_width(w);
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(int u, double r, int n1, int n2, int reps, std::uint64_t seed,
                 const std::string& out_dir, const std::string& gen_family, double sigma2,
                 double nugget, int test_n1, int test_n2) {
  if (!(nugget >= 0.0 && nugget < 1.0)) throw UsageError("--nugget must lie in [0, 1)");
  Scenario sc;
  sc.u = u;
  sc.range = r;
  sc.n1 = n1;
  sc.n2 = n2;
  sc.test_n1 = test_n1;
  sc.test_n2 = test_n2;
  sc.sigma2 = sigma2;
  sc.nugget = nugget;
  sc.gen_family = smoothness_from_string(gen_family);
  sc.assumed_family = sc.gen_family;

  fs::create_directories(out_dir);
  const SiteSet sites = build_grid(sc.u, sc.dim, sc.spacing);
  write_sites((fs::path(out_dir) / "sites.csv").string(), sites);

  for (int rep = 0; rep < reps; ++rep) {
    RngStream rng_train(seed, static_cast<std::uint64_t>(rep) * 8 + 0);
    RngStream rng_test(seed, static_cast<std::uint64_t>(rep) * 8 + 1);
    const auto train = simulate_dataset(sc, Role::train, rng_train);
    const auto test = simulate_dataset(sc, Role::test, rng_test);
    const std::string tag = zero_pad(rep + 1, 4);
    write_data_csv((fs::path(out_dir) / ("train_" + tag + ".csv")).string(), train);
    write_data_csv((fs::path(out_dir) / ("test_" + tag + ".csv")).string(), test);
  }

  std::cout << "scenario: p=" << sc.p() << " (u=" << sc.u << "), r=" << sc.range
            << ", sigma2=" << sc.sigma2 << ", nugget=" << sc.nugget
            << ", family=" << to_string(sc.gen_family) << "\n"
            << "train: n1=" << sc.n1 << " n2=" << sc.n2 << "; test: n1=" << sc.test_n1
            << " n2=" << sc.test_n2 << "; reps=" << reps << "; seed=" << seed << "\n"
            << "wrote " << out_dir << "/sites.csv and " << reps
            << " train/test CSV pair(s)\n";
  return 0;
}

// --------------------------------------------------------------------- fit

int cmd_fit(const std::string& data_path, const std::string& sites_path,
            const std::string& method, const std::string& lambda_flag,
            const std::string& taper_flag, const std::string& family_flag,
            const std::string& out_path, int folds, std::uint64_t seed, double scad_a,
            const std::string& cls_taper_flag) {
  static const std::vector<std::string> known_methods = {"pmle", "preg", "mle", "nb", "fair"};
  if (std::find(known_methods.begin(), known_methods.end(), method) == known_methods.end())
    throw UsageError("--method must be one of pmle, preg, mle, nb, fair");
  if (!(scad_a > 2.0)) throw UsageError("--scad-a must exceed 2");
  try {
    smoothness_from_string(family_flag);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }

  const SiteSet sites = load_sites(sites_path);
  const LabeledDataset data = load_data_csv(data_path, sites);
  const DistanceMatrix dist = pairwise_distances(sites);
  const Smoothness family = smoothness_from_string(family_flag);
  const TaperSpec est_taper = parse_taper_flag(taper_flag, sites, dist);
  const TaperSpec cls_taper = parse_taper_flag(cls_taper_flag, sites, dist);
  std::optional<double> stored_taper;
  if (cls_taper.active) stored_taper = cls_taper.width;

  ModelFile mf;
  if (method == "mle" || method == "pmle" || method == "preg") {
    FitResult fit;
    if (method == "mle") {
      fit = mle_fit(data, dist, family, est_taper, default_theta_init(data, dist, family));
    } else {
      const int stages = method == "pmle" ? 4 : 2;
      double lambda = 0.0;
      if (lambda_flag == "auto") {
        CvOptions options;
        options.family = family;
        options.estimation_taper = est_taper;
        options.classification_taper = cls_taper;
        options.stages = stages;
        options.threads = thread_cap();
        const auto grid = default_lambda_grid(transform_Z(data));
        const CvResult cv = select_lambda_cv(data, dist, grid, folds, RngStream(seed, 0),
                                             options);
        lambda = method == "pmle" ? cv.lambda_pmle : cv.lambda_preg;
        std::cout << "cv table (lambda, error_" << method << "):\n";
        const Vector& err = method == "pmle" ? cv.error_pmle : cv.error_preg;
        std::cout.precision(6);
        for (std::size_t g = 0; g < cv.lambdas.size(); ++g)
          std::cout << "  " << cv.lambdas[g] << "  " << err[static_cast<int>(g)] << "\n";
        std::cout << "selected lambda: " << lambda << "\n";
      } else if (!detail::parse_double(lambda_flag, lambda) || lambda < 0) {
        throw UsageError("--lambda must be auto or a nonnegative number");
      }
      fit = one_step_pmle(data, dist, ScadSpec{lambda, scad_a}, est_taper,
                          default_theta_init(data, dist, family), stages);
    }
    const DiscriminantModel model = build_model(fit, dist, cls_taper);
    mf = model_file_from_fit(fit, sites, model, stored_taper);
    std::cout << "method=" << fit.method << "  support=" << fit.support.size() << "/"
              << data.p() << "\n"
              << "theta: sigma2=" << fit.theta.sigma2 << " nugget=" << fit.theta.nugget
              << " range=" << fit.theta.range << " family=" << to_string(fit.theta.smoothness)
              << "\n";
  } else if (method == "nb" || method == "fair") {
    DiscriminantModel model =
        method == "nb" ? fit_nb(data) : fit_fair(data, std::nullopt, RngStream(seed, 1));
    mf.method = method;
    mf.has_theta = false;
    mf.delta = model.delta;
    const ClassMeans cm = class_means(data);
    mf.ybar = cm.ybar;
    mf.tau1 = static_cast<double>(data.n1()) / data.n();
    mf.tau2 = static_cast<double>(data.n2()) / data.n();
    mf.n1 = data.n1();
    mf.n2 = data.n2();
    mf.taper_width = stored_taper;
    mf.sites = sites;
    mf.model = model;
    std::cout << "method=" << method << "  features=" << model.subset.size() << "/" << data.p()
              << "\n";
  } else {
    throw UsageError("--method must be one of pmle, preg, mle, nb, fair");
  }

  save_model(out_path, mf);
  std::cout << "model written to " << out_path << "\n";
  return 0;
}

// ----------------------------------------------------------------- predict

Predictions predict_rows(const ModelFile& mf, const Matrix& rows) {
  Predictions pred;
  for (int i = 0; i < rows.rows(); ++i) {
    const double s = discriminant_score(rows.row(i).transpose(), mf.model);
    pred.id.push_back(i + 1);
    pred.score.push_back(s);
    pred.label.push_back(s > 0.0 ? 1 : 2);
  }
  return pred;
}

int cmd_predict(const std::string& model_path, const std::string& data_path,
                const std::string& out_path) {
  const ModelFile mf = load_model(model_path);
  const FeatureTable table = load_feature_table(data_path, mf.sites.ids);
  write_predictions(out_path, predict_rows(mf, table.features));
  std::cout << "wrote " << table.features.rows() << " prediction(s) to " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

void print_confusion(const std::vector<int>& truth, const std::vector<int>& predicted) {
  long c[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < truth.size(); ++i) ++c[truth[i] - 1][predicted[i] - 1];
  const long n1 = c[0][0] + c[0][1], n2 = c[1][0] + c[1][1];
  const long correct = c[0][0] + c[1][1];
  std::cout << "n=" << truth.size() << "  accuracy=" << static_cast<double>(correct) / truth.size()
            << "\n"
            << "class 1 error: " << (n1 ? static_cast<double>(c[0][1]) / n1 : 0.0)
            << "   class 2 error: " << (n2 ? static_cast<double>(c[1][0]) / n2 : 0.0) << "\n"
            << "confusion (rows truth, cols predicted):\n"
            << "  " << c[0][0] << " " << c[0][1] << "\n"
            << "  " << c[1][0] << " " << c[1][1] << "\n";
}

int cmd_evaluate(const std::string& pred_path, const std::string& truth_path,
                 const std::string& model_path, const std::string& data_path, bool theory,
                 const std::string& true_params_path) {
  std::vector<int> truth, predicted;
  std::optional<ModelFile> mf;

  if (!pred_path.empty()) {
    if (truth_path.empty()) throw UsageError("--pred requires --truth");
    const Predictions pred = load_predictions(pred_path);
    std::ifstream in(truth_path);
    if (!in) throw std::runtime_error("cannot open '" + truth_path + "'");
    std::string line;
    std::getline(in, line);
    const auto header = detail::split_csv(line);
    int label_col = -1;
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == "label") label_col = static_cast<int>(c);
    if (label_col < 0) throw std::runtime_error("'" + truth_path + "' has no label column");
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      const auto cells = detail::split_csv(line);
      const std::string& s = cells[static_cast<std::size_t>(label_col)];
      if (s != "1" && s != "2")
        throw std::runtime_error("'" + truth_path + "': label must be 1 or 2, got '" + s + "'");
      truth.push_back(s == "1" ? 1 : 2);
    }
    if (truth.size() != pred.label.size())
      throw std::runtime_error("prediction/truth row count mismatch");
    predicted = pred.label;
  } else if (!model_path.empty() && !data_path.empty()) {
    mf = load_model(model_path);
    const FeatureTable table = load_feature_table(data_path, mf->sites.ids);
    if (!table.has_labels) throw std::runtime_error("'" + data_path + "' has no label column");
    truth = table.labels;
    predicted = predict_rows(*mf, table.features).label;
  } else {
    throw UsageError("evaluate needs either --pred/--truth or --model/--data");
  }

  print_confusion(truth, predicted);

  if (theory) {
    if (true_params_path.empty()) throw UsageError("--theory requires --true-params");
    if (!mf) {
      if (model_path.empty()) throw UsageError("--theory requires --model");
      mf = load_model(model_path);
    }
    const TrueParams tp = load_true_params(true_params_path);
    if (tp.mu1.size() != mf->sites.size())
      throw std::runtime_error("--true-params mu length does not match the model's sites");
    const DistanceMatrix dist = pairwise_distances(mf->sites);
    const CovMatrix sigma = build_cov(dist, tp.theta);
    const ErrorReport er = theoretical_errors(mf->model, tp.mu1, tp.mu2, sigma);
    std::cout << "theoretical: W1=" << er.w1 << " W2=" << er.w2 << " W=" << er.w
              << " Cp=" << er.cp << " W_OPT=" << er.w_opt << "\n";
  }
  return 0;
}

// ------------------------------------------------------------------- study

struct StudyConfig {
  int u = 6;
  std::vector<double> r_values = {5.0};
  std::vector<std::string> methods = {"true", "mle", "preg", "pmle", "nb", "fair"};
  int reps = 30;
  std::uint64_t seed = 7;
  int n1 = 30, n2 = 30, test_n1 = 100, test_n2 = 100;
  std::string gen_family = "exp";
  std::string assume_family = "exp";
  std::string lambda = "cv";
  double taper_width = 0.0;
  int parallelism = 0;  // 0: use the thread cap
  std::string out_dir = ".";
};

StudyConfig parse_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UsageError("config is not valid JSON: " + std::string(e.what()));
  }

  StudyConfig cfg;
  std::vector<std::string> issues;
  const auto complain = [&](const std::string& m) { issues.push_back(m); };

  static const std::vector<std::string> known = {
      "u",      "r",          "methods",   "reps",          "seed",
      "n1",     "n2",         "test_n1",   "test_n2",       "gen_family",
      "assume_family", "lambda", "taper_width", "parallelism", "out_dir"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      complain("unknown key '" + key + "'");

  const auto get_int = [&](const char* key, int& slot, int lo) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) return complain(std::string(key) + " must be an integer");
    const int v = j[key].get<int>();
    if (v < lo) return complain(std::string(key) + " must be >= " + std::to_string(lo));
    slot = v;
  };
  get_int("u", cfg.u, 1);
  get_int("reps", cfg.reps, 2);
  get_int("n1", cfg.n1, 2);
  get_int("n2", cfg.n2, 2);
  get_int("test_n1", cfg.test_n1, 1);
  get_int("test_n2", cfg.test_n2, 1);
  get_int("parallelism", cfg.parallelism, 1);

  if (j.contains("seed")) {
    if (j["seed"].is_number_unsigned() || j["seed"].is_number_integer())
      cfg.seed = j["seed"].get<std::uint64_t>();
    else
      complain("seed must be an integer");
  }
  if (j.contains("r")) {
    cfg.r_values.clear();
    if (j["r"].is_number()) {
      cfg.r_values.push_back(j["r"].get<double>());
    } else if (j["r"].is_array() && !j["r"].empty()) {
      for (const auto& v : j["r"])
        if (v.is_number() && v.get<double>() > 0)
          cfg.r_values.push_back(v.get<double>());
        else
          complain("r entries must be positive numbers");
    } else {
      complain("r must be a positive number or a nonempty array of them");
    }
  }
  if (j.contains("methods")) {
    cfg.methods.clear();
    if (!j["methods"].is_array() || j["methods"].empty()) {
      complain("methods must be a nonempty array of method names");
    } else {
      for (const auto& v : j["methods"]) {
        if (!v.is_string()) {
          complain("methods entries must be strings");
          continue;
        }
        try {
          parse_method(v.get<std::string>());
          cfg.methods.push_back(v.get<std::string>());
        } catch (const std::exception& e) {
          complain(e.what());
        }
      }
    }
  }
  const auto get_family = [&](const char* key, std::string& slot) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) return complain(std::string(key) + " must be a string");
    const auto s = j[key].get<std::string>();
    try {
      smoothness_from_string(s);
      slot = s;
    } catch (const std::exception& e) {
      complain(e.what());
    }
  };
  get_family("gen_family", cfg.gen_family);
  get_family("assume_family", cfg.assume_family);
  if (j.contains("lambda")) {
    if (j["lambda"].is_string() && j["lambda"].get<std::string>() == "cv")
      cfg.lambda = "cv";
    else if (j["lambda"].is_number() && j["lambda"].get<double>() >= 0)
      cfg.lambda = std::to_string(j["lambda"].get<double>());
    else
      complain("lambda must be \"cv\" or a nonnegative number");
  }
  if (j.contains("taper_width")) {
    if (j["taper_width"].is_null())
      cfg.taper_width = 0.0;
    else if (j["taper_width"].is_number() && j["taper_width"].get<double>() > 0)
      cfg.taper_width = j["taper_width"].get<double>();
    else
      complain("taper_width must be null or a positive number");
  }
  if (j.contains("out_dir")) {
    if (j["out_dir"].is_string())
      cfg.out_dir = j["out_dir"].get<std::string>();
    else
      complain("out_dir must be a string");
  }

  if (!issues.empty()) {
    std::ostringstream os;
    os << "config errors in '" << path << "':";
    for (const auto& m : issues) os << "\n  - " << m;
    throw UsageError(os.str());
  }
  return cfg;
}

int run_study_config(const StudyConfig& cfg) {
  std::vector<MethodSpec> methods;
  for (const auto& name : cfg.methods) methods.push_back(parse_method(name));

  LambdaPolicy policy = LambdaPolicy::cross_validated();
  if (cfg.lambda != "cv") {
    double v = 0;
    if (!detail::parse_double(cfg.lambda, v) || v < 0)
      throw UsageError("lambda must be cv or a nonnegative number");
    policy = LambdaPolicy::fixed_at(v);
  }
  // SPATIAL_LDA_THREADS caps even an explicit --parallelism
  const int parallelism =
      std::min(cfg.parallelism > 0 ? cfg.parallelism : thread_cap(), thread_cap());

  fs::create_directories(cfg.out_dir);
  std::ostringstream all_csv, all_text;
  bool first = true;
  for (double r : cfg.r_values) {
    Scenario sc;
    sc.u = cfg.u;
    sc.range = r;
    sc.n1 = cfg.n1;
    sc.n2 = cfg.n2;
    sc.test_n1 = cfg.test_n1;
    sc.test_n2 = cfg.test_n2;
    sc.gen_family = smoothness_from_string(cfg.gen_family);
    sc.assumed_family = smoothness_from_string(cfg.assume_family);
    sc.taper_width = cfg.taper_width;

    const StudyReport report = run_study(sc, methods, cfg.reps, cfg.seed, parallelism, policy);
    std::string csv = study_csv(report);
    if (!first) csv = csv.substr(csv.find('\n') + 1);  // keep one header
    all_csv << csv;
    all_text << study_table(report) << "\n";
    first = false;
  }

  const auto csv_path = fs::path(cfg.out_dir) / "report.csv";
  const auto txt_path = fs::path(cfg.out_dir) / "report.txt";
  std::ofstream(csv_path) << all_csv.str();
  std::ofstream(txt_path) << all_text.str();
  std::cout << all_text.str() << "report written to " << csv_path.string() << " and "
            << txt_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalized maximum-likelihood LDA for spatially correlated features"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate train/test CSVs on a u x u lattice");
  int sim_u = 6, sim_n1 = 30, sim_n2 = 30, sim_reps = 1, sim_tn1 = 100, sim_tn2 = 100;
  double sim_r = 5.0, sim_sigma2 = 1.0, sim_nugget = 0.2;
  std::uint64_t sim_seed = 7;
  std::string sim_out = "sim_out", sim_family = "exp";
  sim->add_option("--u", sim_u, "grid side")->required()->check(CLI::PositiveNumber);
  sim->add_option("--r", sim_r, "range parameter")->required()->check(CLI::PositiveNumber);
  sim->add_option("--n1", sim_n1, "class-1 training rows")->check(CLI::Range(2, 1 << 20));
  sim->add_option("--n2", sim_n2, "class-2 training rows")->check(CLI::Range(2, 1 << 20));
  sim->add_option("--reps", sim_reps, "replications")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "base seed");
  sim->add_option("--out-dir", sim_out, "output directory")->required();
  sim->add_option("--gen-family", sim_family, "exp|matern32|matern52|gauss");
  sim->add_option("--sigma2", sim_sigma2, "variance")->check(CLI::PositiveNumber);
  sim->add_option("--nugget", sim_nugget, "nugget in [0,1)");
  sim->add_option("--test-n1", sim_tn1, "class-1 test rows")->check(CLI::PositiveNumber);
  sim->add_option("--test-n2", sim_tn2, "class-2 test rows")->check(CLI::PositiveNumber);

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a classifier and write a model JSON");
  std::string fit_data, fit_sites, fit_method = "pmle", fit_lambda = "auto";
  std::string fit_taper = "none", fit_family = "exp", fit_out = "model.json";
  std::string fit_cls_taper = "none";
  int fit_folds = 10;
  std::uint64_t fit_seed = 13;
  double fit_a = 3.7;
  fit->add_option("--data", fit_data, "training CSV")->required();
  fit->add_option("--sites", fit_sites, "sites CSV")->required();
  fit->add_option("--method", fit_method, "pmle|preg|mle|nb|fair");
  fit->add_option("--lambda", fit_lambda, "auto (10-fold CV) or a value");
  fit->add_option("--taper-width", fit_taper, "estimation taper: auto|none|<width>");
  fit->add_option("--cls-taper-width", fit_cls_taper, "classification taper: auto|none|<width>");
  fit->add_option("--family", fit_family, "exp|matern32|matern52|gauss");
  fit->add_option("--out", fit_out, "output model path")->required();
  fit->add_option("--folds", fit_folds, "CV folds")->check(CLI::Range(2, 1000));
  fit->add_option("--seed", fit_seed, "CV fold seed");
  fit->add_option("--scad-a", fit_a, "SCAD shape parameter (> 2)");

  // predict
  auto* pred = app.add_subcommand("predict", "Score rows with a saved model");
  std::string pred_model, pred_data, pred_out = "pred.csv";
  pred->add_option("--model", pred_model, "model JSON")->required();
  pred->add_option("--data", pred_data, "feature CSV")->required();
  pred->add_option("--out", pred_out, "predictions CSV")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Accuracy/confusion, optional theoretical rates");
  std::string ev_pred, ev_truth, ev_model, ev_data, ev_params;
  bool ev_theory = false;
  ev->add_option("--pred", ev_pred, "predictions CSV");
  ev->add_option("--truth", ev_truth, "labeled CSV matching --pred row order");
  ev->add_option("--model", ev_model, "model JSON");
  ev->add_option("--data", ev_data, "labeled CSV to score");
  ev->add_flag("--theory", ev_theory, "also print W1/W2/W/Cp/W_OPT under --true-params");
  ev->add_option("--true-params", ev_params, "true parameter JSON");

  // study
  auto* st = app.add_subcommand("study", "Replication study over a scenario grid");
  std::string st_config;
  StudyConfig st_flags;
  st->add_option("--config", st_config, "study config JSON");
  st->add_option("--u", st_flags.u, "grid side")->check(CLI::PositiveNumber);
  st->add_option("--r", st_flags.r_values, "range value(s)")->delimiter(',');
  st->add_option("--methods", st_flags.methods, "method names")->delimiter(',');
  st->add_option("--reps", st_flags.reps, "replications")->check(CLI::Range(2, 1 << 20));
  st->add_option("--seed", st_flags.seed, "base seed");
  st->add_option("--n1", st_flags.n1)->check(CLI::Range(2, 1 << 20));
  st->add_option("--n2", st_flags.n2)->check(CLI::Range(2, 1 << 20));
  st->add_option("--test-n1", st_flags.test_n1)->check(CLI::PositiveNumber);
  st->add_option("--test-n2", st_flags.test_n2)->check(CLI::PositiveNumber);
  st->add_option("--gen-family", st_flags.gen_family, "generating family");
  st->add_option("--assume-family", st_flags.assume_family, "family assumed by estimators");
  st->add_option("--lambda", st_flags.lambda, "cv or a fixed value");
  st->add_option("--taper-width", st_flags.taper_width, "width for tapered method variants");
  st->add_option("--parallelism", st_flags.parallelism, "worker threads");
  st->add_option("--out-dir", st_flags.out_dir, "report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(sim_u, sim_r, sim_n1, sim_n2, sim_reps, sim_seed, sim_out, sim_family,
                          sim_sigma2, sim_nugget, sim_tn1, sim_tn2);
    if (fit->parsed())
      return cmd_fit(fit_data, fit_sites, fit_method, fit_lambda, fit_taper, fit_family,
                     fit_out, fit_folds, fit_seed, fit_a, fit_cls_taper);
    if (pred->parsed()) return cmd_predict(pred_model, pred_data, pred_out);
    if (ev->parsed())
      return cmd_evaluate(ev_pred, ev_truth, ev_model, ev_data, ev_theory, ev_params);
    if (st->parsed()) {
      const StudyConfig cfg = st_config.empty() ? st_flags : parse_study_config(st_config);
      return run_study_config(cfg);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
