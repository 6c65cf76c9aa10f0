#pragma once

#include "fedsel/core.hpp"
#include "fedsel/linalg.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace fedsel {

// Pairwise heterogeneity constants: ||grad f_i - grad f_j|| <= B_ij ||grad f|| + G_ij.
struct HeterogeneityMatrix {
  Matrix B;
  Matrix Gamma;

  std::size_t size() const { return static_cast<std::size_t>(B.rows()); }
  Matrix B_squared() const { return B.cwiseProduct(B); }
  Matrix Gamma_squared() const { return Gamma.cwiseProduct(Gamma); }
};

struct BiasBound {
  double B_term = 0.0;
  double Gamma_term = 0.0;
};

struct SamplingDistribution {
  Vector p;
  std::size_t K = 1;

  void validate(double tol = 1e-10) const {
    if (K < 1) throw std::invalid_argument("sampling distribution: K must be >= 1");
    if (p.size() == 0) throw std::invalid_argument("sampling distribution: empty");
    if ((p.array() < 0.0).any() || !p.allFinite())
      throw std::invalid_argument("sampling distribution: negative or non-finite entry");
    if (std::abs(p.sum() - 1.0) > tol) throw std::invalid_argument("sampling distribution: does not sum to one");
  }
};

// B_ij = ||(A_i - A_j) A^{-1}||_2.
inline Matrix compute_B_linreg(std::span<const Matrix> covariances, const Matrix& A,
                               const SpectralNormOptions& opt = {}) {
  const SpdInverse inv(A);  // throws for singular A
  const auto m = static_cast<Eigen::Index>(covariances.size());
  std::vector<Matrix> scaled(covariances.size());
  for (std::size_t i = 0; i < covariances.size(); ++i) scaled[i] = covariances[i] * inv.matrix();
  Matrix B = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double b = spectral_norm(scaled[i] - scaled[j], opt);
      B(i, j) = b;
      B(j, i) = b;
    }
  return B;
}

// Gamma_ij = ||A_i (w* - w_i*) - A_j (w* - w_j*)||. The residuals are passed
// as r_i = A_i w* - A_i w_i*, i.e. the client gradients at the global optimum.
inline Matrix compute_Gamma_from_residuals(std::span<const Vector> residuals) {
  const auto m = static_cast<Eigen::Index>(residuals.size());
  Matrix G = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double g = (residuals[i] - residuals[j]).norm();
      G(i, j) = g;
      G(j, i) = g;
    }
  return G;
}

inline Matrix compute_Gamma_linreg(std::span<const Matrix> covariances, std::span<const Vector> optima,
                                   const Vector& global_optimum) {
  if (covariances.size() != optima.size())
    throw std::invalid_argument("compute_Gamma_linreg: covariance/optimum count mismatch");
  std::vector<Vector> r(covariances.size());
  for (std::size_t i = 0; i < covariances.size(); ++i) r[i] = covariances[i] * (global_optimum - optima[i]);
  return compute_Gamma_from_residuals(r);
}

// Definition of the aggregation weights for a fixed set: every client j is
// represented by its proxy beta_j = argmin_{i in S} B_ij (lowest index on
// ties) and alpha_i is the fraction of clients that i represents.
struct ProxyAssignment {
  std::vector<ClientIndex> proxy;  // proxy[j] for every j in [m]
  SelectionDecision decision;
};

inline ProxyAssignment coefficients_for_set(std::span<const ClientIndex> S, const Matrix& B) {
  if (S.empty()) throw std::invalid_argument("coefficients_for_set: empty set");
  const auto m = static_cast<std::size_t>(B.rows());
  std::vector<ClientIndex> members(S.begin(), S.end());
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  if (members.back() >= m) throw std::invalid_argument("coefficients_for_set: client out of range");

  ProxyAssignment out;
  out.proxy.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    ClientIndex best = members.front();
    for (auto i : members)
      if (B(i, j) < B(best, j)) best = i;
    out.proxy[j] = best;
  }
  const double w = 1.0 / static_cast<double>(m);
  for (auto i : members) out.decision.coefficients[i] = 0.0;
  for (std::size_t j = 0; j < m; ++j) out.decision.coefficients[out.proxy[j]] += w;
  // Members that represent nobody get zero weight and are dropped.
  std::erase_if(out.decision.coefficients, [](const auto& kv) { return kv.second <= 0.0; });
  out.decision.members = out.decision.distinct();
  return out;
}

// (1/m) sum_j M_{j, beta_j(S)}.
inline double mean_proxy_distance(std::span<const ClientIndex> S, const Matrix& M) {
  if (S.empty()) throw std::invalid_argument("mean_proxy_distance: empty set");
  const auto m = M.rows();
  double total = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (auto i : S) best = std::min(best, M(static_cast<Eigen::Index>(i), j));
    total += best;
  }
  return total / static_cast<double>(m);
}

// The proxy is chosen by B alone; Gamma is read at the same proxy.
inline BiasBound bias_for_set(std::span<const ClientIndex> S, const Matrix& B, const Matrix& Gamma) {
  const auto assign = coefficients_for_set(S, B);
  const auto m = static_cast<std::size_t>(B.rows());
  double hb = 0.0, hg = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    hb += B(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(assign.proxy[j]));
    hg += Gamma(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(assign.proxy[j]));
  }
  hb /= static_cast<double>(m);
  hg /= static_cast<double>(m);
  return {2.0 * hb * hb, 2.0 * hg * hg};
}

// 2 (p^T M 1 / m + p^T M p / K) for a squared-heterogeneity matrix M.
inline double bilinear_bias(const Vector& p, const Matrix& M_sq, std::size_t K) {
  const double m = static_cast<double>(M_sq.rows());
  return 2.0 * (p.dot(M_sq.rowwise().sum()) / m + p.dot(M_sq * p) / static_cast<double>(K));
}

inline BiasBound bias_for_distribution(const SamplingDistribution& dist, const Matrix& B_sq, const Matrix& Gamma_sq) {
  return {bilinear_bias(dist.p, B_sq, dist.K), bilinear_bias(dist.p, Gamma_sq, dist.K)};
}

// E[max_{i in S} tau_i] for S ~ p^K, with tau sorted ascending:
//   sum_i [(P_i)^K - (P_{i-1})^K] tau_i,  P_i = p_1 + ... + p_i.
inline double expected_max_delay(const Vector& p, std::size_t K, std::span<const double> tau) {
  if (static_cast<std::size_t>(p.size()) != tau.size())
    throw std::invalid_argument("expected_max_delay: size mismatch");
  if (K < 1) throw std::invalid_argument("expected_max_delay: K must be >= 1");
  const double k = static_cast<double>(K);
  double prefix = 0.0, prev_pow = 0.0, total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (i > 0 && tau[i] < tau[i - 1]) throw std::invalid_argument("expected_max_delay: delays must be sorted");
    prefix += p(i);
    const double pw = std::pow(std::min(prefix, 1.0), k);
    total += (pw - prev_pow) * tau[i];
    prev_pow = pw;
  }
  return total;
}

inline double expected_max_delay(const SamplingDistribution& dist, const ClientRoster& roster) {
  return expected_max_delay(dist.p, dist.K, roster.mean_delays());
}

struct HeterogeneityCheck {
  bool set_ok = false;       // max_i (1/m) sum_j B_ij < 1/sqrt(2)
  bool sampling_ok = false;  // max_i (1/m) sum_j B_ij^2 < 1/2
  double max_row_mean = 0.0;
  double max_sq_row_mean = 0.0;
};

inline HeterogeneityCheck check_bounded_heterogeneity(const Matrix& B) {
  const double m = static_cast<double>(B.rows());
  HeterogeneityCheck c;
  c.max_row_mean = B.rowwise().sum().maxCoeff() / m;
  c.max_sq_row_mean = B.cwiseProduct(B).rowwise().sum().maxCoeff() / m;
  c.set_ok = c.max_row_mean < std::numbers::sqrt2 / 2.0;
  c.sampling_ok = c.max_sq_row_mean < 0.5;
  return c;
}

// Scales B down so its largest row mean is (1 - margin)/sqrt(2); compliant
// matrices (row mean already at or below that level) are returned unchanged.
inline Matrix rescale_to_assumption(const Matrix& B, double margin = 0.05) {
  if (!(margin > 0.0 && margin < 1.0)) throw std::invalid_argument("rescale margin must be in (0, 1)");
  const double target = (1.0 - margin) / std::numbers::sqrt2;
  const double row = B.rowwise().sum().maxCoeff() / static_cast<double>(B.rows());
  if (row <= target) return B;
  return B * (target / row);
}

}  // namespace fedsel
