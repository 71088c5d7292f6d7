#pragma once

#include "spatlda/common.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace spatlda {

/// Spatial sites: p points in R^dim with unique string ids.
/// Immutable after construction via make_site_set / build_grid / load_sites.
struct SiteSet {
  int dim = 0;
  Matrix coords;  // p x dim
  std::vector<std::string> ids;

  int size() const { return static_cast<int>(coords.rows()); }
};

/// Symmetric p x p matrix of pairwise Euclidean distances, zero diagonal.
struct DistanceMatrix {
  Matrix values;

  int size() const { return static_cast<int>(values.rows()); }
  double operator()(int i, int j) const { return values(i, j); }
};

/// Validates and assembles a SiteSet.  Duplicate ids or coincident sites
/// are rejected; sites must be strictly separated for the covariance
/// matrices downstream to stay well conditioned.
inline SiteSet make_site_set(int dim, Matrix coords, std::vector<std::string> ids) {
  if (dim < 1 || dim > 3) throw std::invalid_argument("SiteSet: dim must be 1, 2 or 3");
  const int p = static_cast<int>(coords.rows());
  if (p < 1) throw std::invalid_argument("SiteSet: need at least one site");
  if (coords.cols() != dim)
    throw std::invalid_argument("SiteSet: coordinate columns do not match dim");
  if (static_cast<int>(ids.size()) != p)
    throw std::invalid_argument("SiteSet: id count does not match site count");
  if (!coords.allFinite()) throw std::invalid_argument("SiteSet: non-finite coordinate");

  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (id.empty()) throw std::invalid_argument("SiteSet: empty site id");
    if (!seen.insert(id).second)
      throw std::invalid_argument("SiteSet: duplicate site id '" + id + "'");
  }
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j)
      if ((coords.row(i) - coords.row(j)).squaredNorm() <= 0.0)
        throw std::invalid_argument("SiteSet: sites '" + ids[i] + "' and '" + ids[j] +
                                    "' coincide");

  return SiteSet{dim, std::move(coords), std::move(ids)};
}

/// Regular u^dim lattice with the given spacing.  Numbering is column-major:
/// site 1 sits at the origin and the index increases along the last axis
/// first (upward, then rightward in 2-D).
inline SiteSet build_grid(int u, int dim, double spacing) {
  if (u < 1) throw std::invalid_argument("build_grid: u must be >= 1");
  if (dim < 1 || dim > 3) throw std::invalid_argument("build_grid: dim must be 1, 2 or 3");
  if (!(spacing > 0.0)) throw std::invalid_argument("build_grid: spacing must be positive");

  int p = 1;
  for (int k = 0; k < dim; ++k) p *= u;

  Matrix coords(p, dim);
  std::vector<std::string> ids(p);
  for (int idx = 0; idx < p; ++idx) {
    int rest = idx;
    for (int axis = dim - 1; axis >= 0; --axis) {
      coords(idx, axis) = static_cast<double>(rest % u) * spacing;
      rest /= u;
    }
    ids[idx] = "s" + std::to_string(idx + 1);
  }
  return make_site_set(dim, std::move(coords), std::move(ids));
}

inline DistanceMatrix pairwise_distances(const SiteSet& sites) {
  const int p = sites.size();
  Matrix h = Matrix::Zero(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) {
      const double d = (sites.coords.row(i) - sites.coords.row(j)).norm();
      h(i, j) = d;
      h(j, i) = d;
    }
  return DistanceMatrix{std::move(h)};
}

/// Reads a sites CSV with header `id,x,y` or `id,x,y,z` (`id,x` for 1-D).
/// The spatial dimension is inferred from the columns present.
inline SiteSet load_sites(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_sites: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_sites: '" + path + "' is empty");
  const auto header = detail::split_csv(line);
  static const std::vector<std::vector<std::string>> accepted = {
      {"id", "x"}, {"id", "x", "y"}, {"id", "x", "y", "z"}};
  int dim = -1;
  for (const auto& h : accepted)
    if (header == h) dim = static_cast<int>(h.size()) - 1;
  if (dim < 0)
    throw std::runtime_error("load_sites: header must be id,x[,y[,z]] in '" + path + "'");

  std::vector<std::string> ids;
  std::vector<double> flat;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv(line);
    if (static_cast<int>(cells.size()) != dim + 1)
      throw std::runtime_error("load_sites: line " + std::to_string(line_no) +
                               ": expected " + std::to_string(dim + 1) + " fields");
    ids.push_back(cells[0]);
    for (int k = 0; k < dim; ++k) {
      double v = 0;
      if (!detail::parse_double(cells[k + 1], v))
        throw std::runtime_error("load_sites: line " + std::to_string(line_no) +
                                 ": bad number '" + cells[k + 1] + "'");
      flat.push_back(v);
    }
  }
  const int p = static_cast<int>(ids.size());
  if (p == 0) throw std::runtime_error("load_sites: no sites in '" + path + "'");
  Matrix coords(p, dim);
  for (int i = 0; i < p; ++i)
    for (int k = 0; k < dim; ++k) coords(i, k) = flat[static_cast<std::size_t>(i) * dim + k];
  return make_site_set(dim, std::move(coords), std::move(ids));
}

inline void write_sites(const std::string& path, const SiteSet& sites) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sites: cannot open '" + path + "'");
  static const char* axes[] = {"x", "y", "z"};
  out << "id";
  for (int k = 0; k < sites.dim; ++k) out << ',' << axes[k];
  out << '\n';
  out.precision(17);
  for (int i = 0; i < sites.size(); ++i) {
    out << sites.ids[i];
    for (int k = 0; k < sites.dim; ++k) out << ',' << sites.coords(i, k);
    out << '\n';
  }
}

}  // namespace spatlda
