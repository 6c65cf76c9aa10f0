#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace fedsel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct SpectralNormOptions {
  double rel_tol = 1e-9;
  int max_iter = 10000;
  // Up to this dimension a dense SVD is cheaper than iterating.
  Eigen::Index dense_below = 64;
};

inline double spectral_norm_dense(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

// Largest singular value via power iteration on M^T M. Falls back to a dense
// SVD for small matrices or when the iteration cap is hit.
inline double spectral_norm(const Matrix& M, const SpectralNormOptions& opt = {}) {
  if (M.size() == 0) return 0.0;
  if (std::max(M.rows(), M.cols()) <= opt.dense_below) return spectral_norm_dense(M);

  // Fixed, non-random start keeps the result a pure function of M.
  Vector v = Vector::Ones(M.cols());
  v(0) += 0.5;
  for (Eigen::Index k = 1; k < v.size(); ++k) v(k) += 1.0 / static_cast<double>(k + 1);
  v.normalize();

  double lambda = 0.0;
  for (int it = 0; it < opt.max_iter; ++it) {
    Vector u = M * v;
    Vector w = M.transpose() * u;
    const double next = v.dot(w);  // Rayleigh quotient of M^T M
    const double nrm = w.norm();
    if (nrm == 0.0) return 0.0;
    v = w / nrm;
    if (it > 0 && std::abs(next - lambda) <= opt.rel_tol * std::abs(next)) {
      return std::sqrt(std::max(next, 0.0));
    }
    lambda = next;
  }
  return spectral_norm_dense(M);
}

// Applies A^{-1} for a symmetric positive definite A through one eigen
// factorization. Badly conditioned inputs get a small ridge.
class SpdInverse {
public:
  static constexpr double kMaxCondition = 1e12;

  explicit SpdInverse(const Matrix& A) {
    if (A.rows() != A.cols()) throw std::invalid_argument("SpdInverse: matrix not square");
    Eigen::SelfAdjointEigenSolver<Matrix> es(A);
    if (es.info() != Eigen::Success) throw std::runtime_error("SpdInverse: eigensolve failed");
    Vector ev = es.eigenvalues();
    const double lo = ev.minCoeff();
    const double hi = ev.maxCoeff();
    if (!(lo > 0.0) || !std::isfinite(hi))
      throw std::invalid_argument("matrix is singular or indefinite (smallest eigenvalue " +
                                  std::to_string(lo) + ")");
    if (hi / lo > kMaxCondition) {
      ridge_ = 1e-10 * A.trace() / static_cast<double>(A.rows());
      ev.array() += ridge_;
    }
    inverse_ = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  }

  const Matrix& matrix() const { return inverse_; }
  double ridge() const { return ridge_; }

private:
  Matrix inverse_;
  double ridge_ = 0.0;
};

}  // namespace fedsel
