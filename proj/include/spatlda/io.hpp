#pragma once

#include "spatlda/classify.hpp"
#include "spatlda/estimation.hpp"
#include "spatlda/geometry.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace spatlda {

/// Data CSV contract: first column `label` in {1,2}, remaining columns named
/// by site id.  Columns are matched to sites by id, never by position.

inline void write_data_csv(const std::string& path, const LabeledDataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_data_csv: cannot open '" + path + "'");
  out << "label";
  for (const auto& id : data.sites.ids) out << ',' << id;
  out << '\n';
  out.precision(17);
  const auto dump = [&](const Matrix& rows, int label) {
    for (int i = 0; i < rows.rows(); ++i) {
      out << label;
      for (int j = 0; j < rows.cols(); ++j) out << ',' << rows(i, j);
      out << '\n';
    }
  };
  dump(data.class1, 1);
  dump(data.class2, 2);
}

struct FeatureTable {
  Matrix features;          // rows x p, columns in the requested id order
  std::vector<int> labels;  // 0 when the file had no label column
  bool has_labels = false;
};

/// Reads a data CSV and reorders feature columns to match `ids`.  The label
/// column is optional here so prediction inputs can omit it.
inline FeatureTable load_feature_table(const std::string& path,
                                       const std::vector<std::string>& ids) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_feature_table: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_feature_table: '" + path + "' is empty");
  const auto header = detail::split_csv(line);

  int label_col = -1;
  std::map<std::string, int> col_of;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "label") {
      if (label_col >= 0)
        throw std::runtime_error("load_feature_table: duplicate label column");
      label_col = static_cast<int>(c);
    } else if (!col_of.emplace(header[c], static_cast<int>(c)).second) {
      throw std::runtime_error("load_feature_table: duplicate column '" + header[c] + "'");
    }
  }
  std::vector<int> order(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const auto it = col_of.find(ids[j]);
    if (it == col_of.end())
      throw std::runtime_error("load_feature_table: missing feature column '" + ids[j] +
                               "' in '" + path + "'");
    order[j] = it->second;
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size())
      throw std::runtime_error("load_feature_table: line " + std::to_string(line_no) +
                               ": expected " + std::to_string(header.size()) + " fields");
    std::vector<double> row(ids.size());
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (!detail::parse_double(cells[order[j]], row[j]))
        throw std::runtime_error("load_feature_table: line " + std::to_string(line_no) +
                                 ": bad number '" + cells[order[j]] + "'");
    if (label_col >= 0) {
      const std::string& s = cells[label_col];
      if (s != "1" && s != "2")
        throw std::runtime_error("load_feature_table: line " + std::to_string(line_no) +
                                 ": label must be 1 or 2, got '" + s + "'");
      labels.push_back(s == "1" ? 1 : 2);
    }
    rows.push_back(std::move(row));
  }

  FeatureTable table;
  table.has_labels = label_col >= 0;
  table.labels = std::move(labels);
  table.features.resize(static_cast<int>(rows.size()), static_cast<int>(ids.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < ids.size(); ++j)
      table.features(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  return table;
}

inline LabeledDataset load_data_csv(const std::string& path, const SiteSet& sites) {
  const FeatureTable table = load_feature_table(path, sites.ids);
  if (!table.has_labels)
    throw std::runtime_error("load_data_csv: '" + path + "' has no label column");
  const long n1 = std::count(table.labels.begin(), table.labels.end(), 1);
  const long n2 = static_cast<long>(table.labels.size()) - n1;
  Matrix c1(n1, sites.size()), c2(n2, sites.size());
  int i1 = 0, i2 = 0;
  for (std::size_t i = 0; i < table.labels.size(); ++i) {
    if (table.labels[i] == 1)
      c1.row(i1++) = table.features.row(static_cast<int>(i));
    else
      c2.row(i2++) = table.features.row(static_cast<int>(i));
  }
  return make_dataset(std::move(c1), std::move(c2), sites);
}

/// Persisted model: fitted parameters plus the derived scoring payload, so
/// prediction needs nothing but the model file.  Round-trips losslessly
/// (JSON doubles use shortest-round-trip formatting).
struct ModelFile {
  int schema_version = 1;
  std::string method;
  bool has_theta = false;
  CovParams theta;
  Vector delta;  // dense internally, sparse (index/value) on disk
  Vector ybar;
  double tau1 = 0, tau2 = 0;
  int n1 = 0, n2 = 0;
  std::optional<double> taper_width;  // classification taper
  SiteSet sites;
  DiscriminantModel model;
  double lambda = 0.0;
  bool degenerate = false;
};

namespace detail {

inline nlohmann::json vec_to_json(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vec_from_json(const nlohmann::json& a) {
  Vector v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

}  // namespace detail

inline ModelFile model_file_from_fit(const FitResult& fit, const SiteSet& sites,
                                     const DiscriminantModel& model,
                                     std::optional<double> taper_width) {
  ModelFile mf;
  mf.method = fit.method;
  mf.has_theta = fit.has_theta;
  mf.theta = fit.theta;
  mf.delta = fit.delta;
  mf.ybar = fit.ybar;
  mf.tau1 = fit.tau1;
  mf.tau2 = fit.tau2;
  mf.n1 = fit.n1;
  mf.n2 = fit.n2;
  mf.taper_width = taper_width;
  mf.sites = sites;
  mf.model = model;
  mf.lambda = fit.lambda_used;
  mf.degenerate = model.degenerate;
  return mf;
}

inline void save_model(const std::string& path, const ModelFile& mf) {
  nlohmann::json j;
  j["schema_version"] = mf.schema_version;
  j["method"] = mf.method;
  if (mf.has_theta) {
    j["theta"] = {{"family", to_string(mf.theta.smoothness)},
                  {"sigma2", mf.theta.sigma2},
                  {"nugget", mf.theta.nugget},
                  {"range", mf.theta.range}};
  }
  nlohmann::json delta;
  delta["indices"] = nlohmann::json::array();
  delta["values"] = nlohmann::json::array();
  for (int i = 0; i < mf.delta.size(); ++i)
    if (mf.delta[i] != 0.0) {
      delta["indices"].push_back(i + 1);  // 1-based on disk
      delta["values"].push_back(mf.delta[i]);
    }
  j["p"] = static_cast<int>(mf.delta.size());
  j["delta"] = delta;
  j["ybar"] = detail::vec_to_json(mf.ybar);
  j["tau1"] = mf.tau1;
  j["tau2"] = mf.tau2;
  j["n1"] = mf.n1;
  j["n2"] = mf.n2;
  if (mf.taper_width)
    j["taper_width"] = *mf.taper_width;
  else
    j["taper_width"] = nullptr;

  nlohmann::json sites;
  sites["dim"] = mf.sites.dim;
  sites["ids"] = mf.sites.ids;
  nlohmann::json coords = nlohmann::json::array();
  for (int i = 0; i < mf.sites.size(); ++i) {
    nlohmann::json pt = nlohmann::json::array();
    for (int k = 0; k < mf.sites.dim; ++k) pt.push_back(mf.sites.coords(i, k));
    coords.push_back(pt);
  }
  sites["coords"] = coords;
  j["sites"] = sites;

  nlohmann::json score;
  score["midpoint"] = detail::vec_to_json(mf.model.midpoint);
  score["weight"] = detail::vec_to_json(mf.model.weight);
  nlohmann::json subset = nlohmann::json::array();
  for (int s : mf.model.subset) subset.push_back(s + 1);
  score["subset"] = subset;
  score["diagonal"] = mf.model.diagonal;
  if (mf.model.diagonal) score["variances"] = detail::vec_to_json(mf.model.variances);
  score["mu1"] = detail::vec_to_json(mf.model.mu1);
  score["mu2"] = detail::vec_to_json(mf.model.mu2);
  j["score"] = score;

  j["diagnostics"] = {{"lambda", mf.lambda}, {"degenerate", mf.degenerate}};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open '" + path + "'");
  out << j.dump(2) << '\n';
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("load_model: bad JSON in '" + path + "': " + e.what());
  }

  ModelFile mf;
  mf.schema_version = j.at("schema_version").get<int>();
  if (mf.schema_version != 1)
    throw std::runtime_error("load_model: unsupported schema version " +
                             std::to_string(mf.schema_version));
  mf.method = j.at("method").get<std::string>();
  const int p = j.at("p").get<int>();

  if (j.contains("theta")) {
    mf.has_theta = true;
    const auto& t = j.at("theta");
    mf.theta.smoothness = smoothness_from_string(t.at("family").get<std::string>());
    mf.theta.sigma2 = t.at("sigma2").get<double>();
    mf.theta.nugget = t.at("nugget").get<double>();
    mf.theta.range = t.at("range").get<double>();
  } else {
    mf.has_theta = false;
  }

  mf.delta = Vector::Zero(p);
  const auto& idx = j.at("delta").at("indices");
  const auto& val = j.at("delta").at("values");
  if (idx.size() != val.size()) throw std::runtime_error("load_model: delta index/value mismatch");
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const int i = idx[k].get<int>();
    if (i < 1 || i > p) throw std::runtime_error("load_model: delta index out of range");
    mf.delta[i - 1] = val[k].get<double>();
  }
  mf.ybar = detail::vec_from_json(j.at("ybar"));
  mf.tau1 = j.at("tau1").get<double>();
  mf.tau2 = j.at("tau2").get<double>();
  mf.n1 = j.at("n1").get<int>();
  mf.n2 = j.at("n2").get<int>();
  if (!j.at("taper_width").is_null()) mf.taper_width = j.at("taper_width").get<double>();

  const auto& sj = j.at("sites");
  const auto ids = sj.at("ids").get<std::vector<std::string>>();
  const int dim = sj.at("dim").get<int>();
  Matrix coords(ids.size(), dim);
  const auto& cj = sj.at("coords");
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int k = 0; k < dim; ++k) coords(static_cast<int>(i), k) = cj[i][k].get<double>();
  mf.sites = make_site_set(dim, std::move(coords), ids);
  if (mf.sites.size() != p) throw std::runtime_error("load_model: site list length != p");

  const auto& sc = j.at("score");
  mf.model.p = p;
  mf.model.method = mf.method;
  mf.model.midpoint = detail::vec_from_json(sc.at("midpoint"));
  mf.model.weight = detail::vec_from_json(sc.at("weight"));
  mf.model.mu1 = detail::vec_from_json(sc.at("mu1"));
  mf.model.mu2 = detail::vec_from_json(sc.at("mu2"));
  mf.model.delta = mf.delta;
  mf.model.diagonal = sc.at("diagonal").get<bool>();
  if (mf.model.diagonal) mf.model.variances = detail::vec_from_json(sc.at("variances"));
  for (const auto& s : sc.at("subset")) {
    const int i = s.get<int>();
    if (i < 1 || i > p) throw std::runtime_error("load_model: subset index out of range");
    mf.model.subset.push_back(i - 1);
  }
  mf.lambda = j.at("diagnostics").at("lambda").get<double>();
  mf.degenerate = j.at("diagnostics").at("degenerate").get<bool>();
  mf.model.degenerate = mf.degenerate;
  return mf;
}

struct Predictions {
  std::vector<long> id;
  std::vector<double> score;
  std::vector<int> label;
};

inline void write_predictions(const std::string& path, const Predictions& pred) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_predictions: cannot open '" + path + "'");
  out << "id,score,label\n";
  out.precision(17);
  for (std::size_t i = 0; i < pred.id.size(); ++i)
    out << pred.id[i] << ',' << pred.score[i] << ',' << pred.label[i] << '\n';
}

inline Predictions load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_predictions: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::split_csv(line) != std::vector<std::string>{
                                     "id", "score", "label"})
    throw std::runtime_error("load_predictions: bad header in '" + path + "'");
  Predictions pred;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv(line);
    double id = 0, score = 0, label = 0;
    if (cells.size() != 3 || !detail::parse_double(cells[0], id) ||
        !detail::parse_double(cells[1], score) || !detail::parse_double(cells[2], label) ||
        (label != 1 && label != 2))
      throw std::runtime_error("load_predictions: bad row at line " + std::to_string(line_no));
    pred.id.push_back(static_cast<long>(id));
    pred.score.push_back(score);
    pred.label.push_back(static_cast<int>(label));
  }
  return pred;
}

/// True-parameter file for theoretical error reports:
/// {family, sigma2, nugget, range, mu1: [...], mu2: [...]}.
struct TrueParams {
  CovParams theta;
  Vector mu1, mu2;
};

inline TrueParams load_true_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_true_params: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("load_true_params: bad JSON: " + std::string(e.what()));
  }
  TrueParams tp;
  tp.theta.smoothness = smoothness_from_string(j.at("family").get<std::string>());
  tp.theta.sigma2 = j.at("sigma2").get<double>();
  tp.theta.nugget = j.at("nugget").get<double>();
  tp.theta.range = j.at("range").get<double>();
  tp.mu1 = detail::vec_from_json(j.at("mu1"));
  tp.mu2 = detail::vec_from_json(j.at("mu2"));
  if (tp.mu1.size() != tp.mu2.size())
    throw std::runtime_error("load_true_params: mu1/mu2 length mismatch");
  return tp;
}

}  // namespace spatlda
