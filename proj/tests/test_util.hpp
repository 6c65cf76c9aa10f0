#pragma once

// Shared fixtures for the unit and acceptance tests.

#include "fedsel/datagen.hpp"
#include "fedsel/heterogeneity.hpp"
#include "fedsel/linalg.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace fedsel::testing {

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index d, double scale = 1.0) {
  std::normal_distribution<double> z(0.0, scale);
  Vector v(d);
  for (Eigen::Index k = 0; k < d; ++k) v(k) = z(rng);
  return v;
}

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index d, double lo = 0.5, double hi = 5.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  const Matrix Q = detail::orthonormal_basis(rng, d);
  Vector ev(d);
  for (Eigen::Index k = 0; k < d; ++k) ev(k) = u(rng);
  return Q * ev.asDiagonal() * Q.transpose();
}

// Symmetric, zero diagonal, entries in [0, hi).
inline Matrix random_B(std::mt19937_64& rng, std::size_t m, double hi = 1.0) {
  std::uniform_real_distribution<double> u(0.0, hi);
  Matrix B = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < B.rows(); ++i)
    for (Eigen::Index j = i + 1; j < B.cols(); ++j) B(i, j) = B(j, i) = u(rng);
  return B;
}

inline std::vector<double> random_sorted_delays(std::mt19937_64& rng, std::size_t m, double lo = 1.0,
                                                double hi = 100.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> t(m);
  for (auto& x : t) x = u(rng);
  std::sort(t.begin(), t.end());
  return t;
}

inline Vector random_simplex_point(std::mt19937_64& rng, std::size_t m) {
  std::exponential_distribution<double> e(1.0);
  Vector p(static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = e(rng);
  return p / p.sum();
}

// Small quadratic problem from random statistics: covariances with a shared
// spread of eigenvalues and optima scattered around a common centre.
inline QuadraticProblem random_problem(std::mt19937_64& rng, std::size_t m, Eigen::Index d, double optimum_spread = 0.1,
                                       double eig_lo = 1.0, double eig_hi = 10.0) {
  const Vector centre = random_vector(rng, d);
  std::vector<ClientData> clients;
  for (std::size_t i = 0; i < m; ++i)
    clients.push_back(client_from_statistics(random_spd(rng, d, eig_lo, eig_hi),
                                             centre + random_vector(rng, d, optimum_spread)));
  return QuadraticProblem(std::move(clients), Matrix::Identity(d, d), centre);
}

inline std::vector<Matrix> covariances(const QuadraticProblem& p) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < p.clients(); ++i) out.push_back(p.covariance(i));
  return out;
}

inline std::vector<Vector> optima(const QuadraticProblem& p) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < p.clients(); ++i) out.push_back(p.local_optimum(i));
  return out;
}

inline HeterogeneityMatrix exact_heterogeneity(const QuadraticProblem& p) {
  const auto covs = covariances(p);
  const auto opts = optima(p);
  return {compute_B_linreg(covs, p.global_covariance()),
          compute_Gamma_linreg(covs, opts, p.global_optimum())};
}

// Every nonempty subset of {0..m-1} as a sorted index list.
inline std::vector<std::vector<std::size_t>> all_nonempty_subsets(std::size_t m) {
  std::vector<std::vector<std::size_t>> out;
  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    std::vector<std::size_t> S;
    for (std::size_t i = 0; i < m; ++i)
      if (mask & (1u << i)) S.push_back(i);
    out.push_back(std::move(S));
  }
  return out;
}

// E[max tau] by enumerating all m^K ordered draws.
inline double brute_expected_max(const Vector& p, std::size_t K, const std::vector<double>& tau) {
  const auto m = static_cast<std::size_t>(p.size());
  std::size_t total = 1;
  for (std::size_t k = 0; k < K; ++k) total *= m;
  double e = 0.0;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    double prob = 1.0, worst = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto i = c % m;
      c /= m;
      prob *= p(static_cast<Eigen::Index>(i));
      worst = std::max(worst, tau[i]);
    }
    e += prob * worst;
  }
  return e;
}

}  // namespace fedsel::testing
