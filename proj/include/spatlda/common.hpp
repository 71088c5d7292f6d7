#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace spatlda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown when a symmetric matrix fails its Cholesky factorization.
/// index() is the zero-based pivot at which positivity broke down
/// (-1 when the failing pivot could not be identified).
class FactorizationError : public std::runtime_error {
public:
  FactorizationError(int index, const std::string& what)
      : std::runtime_error(what), index_(index) {}
  int index() const noexcept { return index_; }

private:
  int index_;
};

/// Standard normal distribution function.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_double(const std::string& s, double& value) {
  if (s.empty()) return false;
  try {
    std::size_t pos = 0;
    value = std::stod(s, &pos);
    return pos == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace detail

}  // namespace spatlda
