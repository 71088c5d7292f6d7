#pragma once

#include "spatlda/common.hpp"
#include "spatlda/covariance.hpp"
#include "spatlda/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>

#include <memory>

namespace spatlda {

namespace detail {

/// Scalar lower Cholesky used only to locate the failing pivot after the
/// fast path has reported a numerical issue.
inline int find_failing_pivot(const Matrix& m) {
  const int p = static_cast<int>(m.rows());
  Matrix L = Matrix::Zero(p, p);
  for (int j = 0; j < p; ++j) {
    double d = m(j, j) - L.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d)) return j;
    d = std::sqrt(d);
    L(j, j) = d;
    for (int i = j + 1; i < p; ++i)
      L(i, j) = (m(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / d;
  }
  return -1;
}

}  // namespace detail

/// Cholesky factor of an SPD covariance matrix, dense or sparse.
/// Holds Sigma = L L^T (dense) or the permuted L D L^T factorization
/// (sparse), with the log determinant cached.  Immutable and reentrant:
/// solve/quad_form/sampling never mutate the factor.
class SpdFactor {
public:
  int size() const { return p_; }
  bool is_sparse() const { return sparse_ != nullptr; }
  double logdet() const { return logdet_; }

  Vector solve(const Vector& b) const {
    if (b.size() != p_) throw std::invalid_argument("SpdFactor::solve: dimension mismatch");
    return sparse_ ? Vector(sparse_->ldlt.solve(b)) : Vector(dense_->llt.solve(b));
  }

  Matrix solve(const Matrix& b) const {
    if (b.rows() != p_) throw std::invalid_argument("SpdFactor::solve: dimension mismatch");
    return sparse_ ? Matrix(sparse_->ldlt.solve(b)) : Matrix(dense_->llt.solve(b));
  }

  /// v^T Sigma^{-1} v via one triangular solve; nonnegative by construction.
  double quad_form(const Vector& v) const {
    if (v.size() != p_) throw std::invalid_argument("SpdFactor::quad_form: dimension mismatch");
    if (sparse_) {
      Vector y = sparse_->ldlt.permutationP() * v;
      sparse_->ldlt.matrixL().solveInPlace(y);
      return (y.array().square() / sparse_->ldlt.vectorD().array()).sum();
    }
    return dense_->llt.matrixL().solve(v).squaredNorm();
  }

  /// sum_i rows_i^T Sigma^{-1} rows_i for a stack of row vectors.
  double sum_quad_forms(const Matrix& rows) const {
    if (rows.cols() != p_)
      throw std::invalid_argument("SpdFactor::sum_quad_forms: dimension mismatch");
    if (sparse_) {
      double total = 0.0;
      for (int i = 0; i < rows.rows(); ++i) total += quad_form(rows.row(i).transpose());
      return total;
    }
    return dense_->llt.matrixL().solve(rows.transpose()).squaredNorm();
  }

  /// count i.i.d. draws from N(mean, Sigma), one per row, via mean + L z.
  Matrix sample(const Vector& mean, RngStream& rng, int count) const {
    if (mean.size() != p_) throw std::invalid_argument("SpdFactor::sample: dimension mismatch");
    if (count < 1) throw std::invalid_argument("SpdFactor::sample: count must be >= 1");
    Matrix out(count, p_);
    Vector z(p_);
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < p_; ++j) z[j] = rng.normal();
      if (sparse_) {
        Vector y = sparse_->sqrt_d.cwiseProduct(z);
        y = sparse_->ldlt.matrixL() * y;
        out.row(i) = (mean + sparse_->ldlt.permutationPinv() * y).transpose();
      } else {
        out.row(i) = (mean + dense_->llt.matrixL() * z).transpose();
      }
    }
    return out;
  }

  friend SpdFactor cholesky(const CovMatrix& m);
  friend SpdFactor cholesky_dense(const Matrix& m);

private:
  struct DensePart {
    Eigen::LLT<Matrix> llt;
  };
  struct SparsePart {
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    Vector sqrt_d;
  };

  int p_ = 0;
  double logdet_ = 0.0;
  std::shared_ptr<const DensePart> dense_;
  std::shared_ptr<const SparsePart> sparse_;
};

/// Dense factorization; throws FactorizationError with the failing pivot on
/// non-positive-definite input.
inline SpdFactor cholesky_dense(const Matrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("cholesky: matrix not square");
  auto part = std::make_shared<SpdFactor::DensePart>();
  part->llt.compute(m);
  if (part->llt.info() != Eigen::Success) {
    const int idx = detail::find_failing_pivot(m);
    throw FactorizationError(idx, "cholesky: matrix not positive definite (pivot " +
                                      std::to_string(idx) + ")");
  }
  const auto diag = part->llt.matrixLLT().diagonal();
  if ((diag.array() <= 0.0).any()) {
    const int idx = detail::find_failing_pivot(m);
    throw FactorizationError(idx, "cholesky: nonpositive pivot " + std::to_string(idx));
  }
  SpdFactor f;
  f.p_ = static_cast<int>(m.rows());
  f.logdet_ = 2.0 * diag.array().log().sum();
  f.dense_ = std::move(part);
  return f;
}

inline SpdFactor cholesky(const CovMatrix& m) {
  if (!m.is_sparse) return cholesky_dense(m.dense);

  auto part = std::make_shared<SpdFactor::SparsePart>();
  part->ldlt.compute(m.sparse);
  Vector d;
  bool ok = part->ldlt.info() == Eigen::Success;
  if (ok) {
    d = part->ldlt.vectorD();
    ok = (d.array() > 0.0).all() && d.allFinite();
  }
  if (!ok) {
    int idx = -1;
    if (d.size() > 0)
      for (int i = 0; i < d.size(); ++i)
        if (!(d[i] > 0.0)) {
          idx = i;
          break;
        }
    throw FactorizationError(idx, "cholesky: tapered matrix not positive definite (pivot " +
                                      std::to_string(idx) + ")");
  }
  part->sqrt_d = d.array().sqrt();
  SpdFactor f;
  f.p_ = m.p;
  f.logdet_ = d.array().log().sum();
  f.sparse_ = std::move(part);
  return f;
}

inline Vector solve(const SpdFactor& f, const Vector& b) { return f.solve(b); }
inline Matrix solve(const SpdFactor& f, const Matrix& b) { return f.solve(b); }
inline double quad_form(const SpdFactor& f, const Vector& v) { return f.quad_form(v); }

inline Matrix sample_mvn(const Vector& mean, const SpdFactor& f, RngStream& rng, int count) {
  return f.sample(mean, rng, count);
}

}  // namespace spatlda
