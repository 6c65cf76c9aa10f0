#pragma once

#include "fedsel/core.hpp"
#include "fedsel/linalg.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsel {

struct QuadraticSpec {
  std::size_t m = 100;
  std::size_t n = 100;
  std::size_t d = 500;
  double eig_lo = 1.0;
  double eig_hi = 10.0;
  double noise_std = 0.001;
  std::uint64_t seed = 0;
};

struct ClientData {
  Matrix features;       // n x d
  Vector labels;         // n
  Matrix test_features;  // n x d, fresh draw from the same covariance
  Vector test_labels;
  Vector eigenvalues;    // population spectrum in the shared basis
  Matrix covariance;     // empirical (1/n) X^T X
  Vector moment;         // (1/n) X^T y
  Vector optimum;        // least-squares solution of covariance * w = moment
  double label_energy = 0.0;  // (1/2n) y^T y, the constant part of f_i
};

struct CurvatureConstants {
  double mu = 0.0;
  double L = 0.0;
};

// Linear regression split across clients, f_i(w) = (1/2n) ||X_i w - y_i||^2.
class QuadraticProblem {
public:
  QuadraticProblem(std::vector<ClientData> clients, Matrix basis, Vector generator)
      : clients_(std::move(clients)), basis_(std::move(basis)), generator_(std::move(generator)) {
    if (clients_.empty()) throw std::invalid_argument("QuadraticProblem: no clients");
    const auto d = clients_.front().covariance.rows();
    global_cov_ = Matrix::Zero(d, d);
    Vector moment = Vector::Zero(d);
    for (const auto& c : clients_) {
      if (c.covariance.rows() != d) throw std::invalid_argument("QuadraticProblem: dimension mismatch");
      global_cov_ += c.covariance;
      moment += c.moment;
    }
    const double inv_m = 1.0 / static_cast<double>(clients_.size());
    global_cov_ *= inv_m;
    moment *= inv_m;

    Eigen::SelfAdjointEigenSolver<Matrix> es(global_cov_);
    curvature_ = {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
    if (!(curvature_.mu > 1e-12 * curvature_.L))
      throw std::invalid_argument("empirical global covariance is singular (lambda_min = " +
                                  std::to_string(curvature_.mu) + ")");
    optimum_ = es.eigenvectors() *
               (es.eigenvalues().cwiseInverse().asDiagonal() * (es.eigenvectors().transpose() * moment));
  }

  std::size_t clients() const { return clients_.size(); }
  Eigen::Index dim() const { return global_cov_.rows(); }
  std::size_t samples(ClientIndex i) const { return static_cast<std::size_t>(client(i).features.rows()); }

  const ClientData& client(ClientIndex i) const { return clients_.at(i); }
  const Matrix& covariance(ClientIndex i) const { return client(i).covariance; }
  const Vector& local_optimum(ClientIndex i) const { return client(i).optimum; }
  const Matrix& global_covariance() const { return global_cov_; }
  const Vector& global_optimum() const { return optimum_; }
  const Matrix& basis() const { return basis_; }
  const Vector& generating_model() const { return generator_; }

  Matrix population_covariance(ClientIndex i) const {
    return basis_ * client(i).eigenvalues.asDiagonal() * basis_.transpose();
  }

  // A_i (w - w_i*), written as A_i w - b_i so it does not depend on which
  // least-squares solution was stored when A_i is rank deficient.
  Vector client_gradient(ClientIndex i, const Vector& w) const {
    check_dim(w);
    const auto& c = client(i);
    return c.covariance * w - c.moment;
  }

  Vector global_gradient(const Vector& w) const {
    check_dim(w);
    return global_cov_ * (w - optimum_);
  }

  double client_loss(ClientIndex i, const Vector& w) const {
    check_dim(w);
    const auto& c = client(i);
    return 0.5 * w.dot(c.covariance * w) - w.dot(c.moment) + c.label_energy;
  }

  double global_loss(const Vector& w) const {
    double s = 0.0;
    for (std::size_t i = 0; i < clients_.size(); ++i) s += client_loss(i, w);
    return s / static_cast<double>(clients_.size());
  }

  double optimal_loss() const { return global_loss(optimum_); }

  // f(w) - f(w*) = (1/2)(w - w*)^T A (w - w*).
  double suboptimality(const Vector& w) const {
    check_dim(w);
    const Vector e = w - optimum_;
    return 0.5 * e.dot(global_cov_ * e);
  }

  // Mean half squared error over every client's held-out set, divided by sqrt(d).
  double normalized_test_loss(const Vector& w) const {
    check_dim(w);
    double s = 0.0;
    for (const auto& c : clients_) {
      if (c.test_labels.size() == 0) continue;
      const Vector r = c.test_features * w - c.test_labels;
      s += 0.5 * r.squaredNorm() / static_cast<double>(r.size());
    }
    s /= static_cast<double>(clients_.size());
    return s / std::sqrt(static_cast<double>(dim()));
  }

  const CurvatureConstants& curvature() const { return curvature_; }

private:
  void check_dim(const Vector& w) const {
    if (w.size() != global_cov_.rows())
      throw std::invalid_argument("model dimension " + std::to_string(w.size()) +
                                  " does not match problem dimension " + std::to_string(global_cov_.rows()));
  }

  std::vector<ClientData> clients_;
  Matrix basis_;
  Vector generator_;
  Matrix global_cov_;
  Vector optimum_;
  CurvatureConstants curvature_;
};

inline CurvatureConstants curvature(const QuadraticProblem& prob) {
  const auto c = prob.curvature();
  if (!(c.mu > 0.0)) throw std::domain_error("global loss is not PL: lambda_min(A) <= 0");
  return c;
}

// Independent symmetric eigensolve, used when only a covariance is at hand.
inline CurvatureConstants curvature_of(const Matrix& A) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
  const CurvatureConstants c{es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
  if (!(c.mu > 0.0)) throw std::domain_error("matrix is not positive definite");
  return c;
}

namespace detail {

inline Matrix gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> z;
  Matrix G(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) G(i, j) = z(rng);
  return G;
}

inline Matrix orthonormal_basis(std::mt19937_64& rng, Eigen::Index d) {
  const Matrix G = gaussian_matrix(rng, d, d);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ() * Matrix::Identity(d, d);
  // Fix column signs so Q does not depend on QR sign conventions.
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < d; ++k)
    if (R(k, k) < 0.0) Q.col(k) *= -1.0;
  return Q;
}

// Rows x_q = Q diag(sqrt(lambda)) z_q.
inline Matrix sample_features(std::mt19937_64& rng, const Matrix& Q, const Vector& eig, std::size_t n) {
  const Matrix Z = gaussian_matrix(rng, static_cast<Eigen::Index>(n), Q.rows());
  return Z * eig.cwiseSqrt().asDiagonal() * Q.transpose();
}

inline Vector sample_labels(std::mt19937_64& rng, const Matrix& X, const Vector& w, double noise_std) {
  Vector y = X * w;
  if (noise_std > 0.0) {
    std::normal_distribution<double> z(0.0, noise_std);
    for (Eigen::Index q = 0; q < y.size(); ++q) y(q) += z(rng);
  }
  return y;
}

}  // namespace detail

// Recomputes the sufficient statistics and least-squares optimum of one client.
inline void fit_client(ClientData& c) {
  const double n = static_cast<double>(c.features.rows());
  c.covariance = c.features.transpose() * c.features / n;
  c.moment = c.features.transpose() * c.labels / n;
  c.label_energy = 0.5 * c.labels.squaredNorm() / n;
  // Minimum-norm solution; unique when n >= d and features are generic.
  c.optimum = c.covariance.completeOrthogonalDecomposition().solve(c.moment);
}

// A client known only through its statistics (A_i, w_i*); no raw samples.
inline ClientData client_from_statistics(Matrix covariance, Vector optimum, double constant = 0.0) {
  ClientData c;
  c.moment = covariance * optimum;
  c.label_energy = 0.5 * optimum.dot(c.moment) + constant;
  c.covariance = std::move(covariance);
  c.optimum = std::move(optimum);
  c.eigenvalues = Eigen::SelfAdjointEigenSolver<Matrix>(c.covariance, Eigen::EigenvaluesOnly).eigenvalues();
  return c;
}

// Same problem with clients listed in the given order (order[k] becomes client k),
// used to line clients up with a delay-sorted roster.
inline QuadraticProblem permute_clients(const QuadraticProblem& prob, std::span<const std::size_t> order) {
  if (order.size() != prob.clients()) throw std::invalid_argument("permute_clients: order has the wrong length");
  std::vector<bool> seen(order.size(), false);
  std::vector<ClientData> clients;
  clients.reserve(order.size());
  for (auto k : order) {
    if (k >= order.size() || seen[k]) throw std::invalid_argument("permute_clients: not a permutation");
    seen[k] = true;
    clients.push_back(prob.client(k));
  }
  return QuadraticProblem(std::move(clients), prob.basis(), prob.generating_model());
}

inline QuadraticProblem generate_quadratic(const QuadraticSpec& spec) {
  if (spec.m < 1 || spec.n < 1 || spec.d < 1)
    throw std::invalid_argument("generate_quadratic: m, n and d must be >= 1");
  if (!(spec.eig_lo > 0.0) || spec.eig_hi < spec.eig_lo)
    throw std::invalid_argument("generate_quadratic: eigenvalue range must satisfy 0 < lo <= hi");
  if (spec.noise_std < 0.0) throw std::invalid_argument("generate_quadratic: negative noise");

  std::mt19937_64 rng(spec.seed);
  const auto d = static_cast<Eigen::Index>(spec.d);
  Matrix Q = detail::orthonormal_basis(rng, d);

  std::bernoulli_distribution coin(0.5);
  Vector w_gen(d);
  for (Eigen::Index k = 0; k < d; ++k) w_gen(k) = coin(rng) ? 1.0 : 0.0;

  std::uniform_real_distribution<double> eig_dist(spec.eig_lo, spec.eig_hi);
  std::vector<ClientData> clients(spec.m);
  for (auto& c : clients) {
    c.eigenvalues.resize(d);
    for (Eigen::Index k = 0; k < d; ++k)
      c.eigenvalues(k) = spec.eig_lo == spec.eig_hi ? spec.eig_lo : eig_dist(rng);
    c.features = detail::sample_features(rng, Q, c.eigenvalues, spec.n);
    c.labels = detail::sample_labels(rng, c.features, w_gen, spec.noise_std);
    c.test_features = detail::sample_features(rng, Q, c.eigenvalues, spec.n);
    c.test_labels = detail::sample_labels(rng, c.test_features, w_gen, spec.noise_std);
    fit_client(c);
  }
  return QuadraticProblem(std::move(clients), std::move(Q), std::move(w_gen));
}

}  // namespace fedsel
