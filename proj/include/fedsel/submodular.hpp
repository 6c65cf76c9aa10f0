#pragma once

// Submodular set-function minimization on the ground set {0, ..., m-1}.
//
// minimize_min_norm_point() is the Fujishige-Wolfe scheme: Wolfe's min-norm
// point algorithm over the base polytope B(F), whose linear oracle is the
// greedy (Lovasz extension) vertex. The minimizers of F are level sets of the
// min-norm point. minimize_exhaustive() enumerates all subsets and is only
// meant for small m.

#include "fedsel/linalg.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace fedsel {

using SetFunction = std::function<double(const std::vector<std::size_t>&)>;

struct SetMinimum {
  std::vector<std::size_t> set;  // sorted
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = true;
};

struct MinNormPointOptions {
  double tol = 1e-10;  // relative duality-gap tolerance
  int max_iter = 1000;
  bool nonempty = false;  // restrict candidates to nonempty sets
};

namespace detail {

// Greedy vertex of B(F) for direction x: visit elements by increasing x and
// take marginal gains. F must satisfy F(empty) = 0.
inline Vector greedy_vertex(const SetFunction& F, const Vector& x, std::vector<std::size_t>& order) {
  const auto m = static_cast<std::size_t>(x.size());
  order.resize(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x(a) < x(b); });
  Vector q(m);
  std::vector<std::size_t> prefix;
  prefix.reserve(m);
  double prev = 0.0;
  for (auto e : order) {
    prefix.push_back(e);
    std::vector<std::size_t> sorted = prefix;
    std::sort(sorted.begin(), sorted.end());
    const double cur = F(sorted);
    q(static_cast<Eigen::Index>(e)) = cur - prev;
    prev = cur;
  }
  return q;
}

// Min-norm point of the affine hull of the columns of Q: weights a with
// sum(a) = 1 minimizing ||Q a||.
inline Vector affine_min_norm(const Matrix& Q) {
  const auto k = Q.cols();
  Matrix M(k + 1, k + 1);
  M.topLeftCorner(k, k) = Q.transpose() * Q;
  M.topRightCorner(k, 1).setOnes();
  M.bottomLeftCorner(1, k).setOnes();
  M(k, k) = 0.0;
  Vector rhs = Vector::Zero(k + 1);
  rhs(k) = 1.0;
  return M.fullPivLu().solve(rhs).head(k);
}

}  // namespace detail

// Evaluates every level set {x_i <= theta} of x and returns the best one.
inline SetMinimum best_level_set(const SetFunction& F, const Vector& x, bool nonempty) {
  const auto m = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x(a) < x(b); });
  SetMinimum best;
  if (!nonempty) best = {{}, F({})};
  std::vector<std::size_t> cur;
  for (std::size_t k = 0; k < m; ++k) {
    cur.push_back(order[k]);
    // Only cut between distinct values of x.
    if (k + 1 < m && x(order[k + 1]) == x(order[k])) continue;
    std::vector<std::size_t> sorted = cur;
    std::sort(sorted.begin(), sorted.end());
    const double v = F(sorted);
    if (v < best.value) best = {sorted, v};
  }
  return best;
}

inline SetMinimum minimize_min_norm_point(const SetFunction& F_raw, std::size_t m,
                                          const MinNormPointOptions& opt = {}) {
  if (m == 0) throw std::invalid_argument("minimize_min_norm_point: empty ground set");
  const double f0 = F_raw({});
  const SetFunction F = [&](const std::vector<std::size_t>& S) { return F_raw(S) - f0; };

  std::vector<std::size_t> order;
  Vector x0 = Vector::Zero(static_cast<Eigen::Index>(m));
  std::vector<Vector> corral{detail::greedy_vertex(F, x0, order)};
  Vector lambda = Vector::Ones(1);
  Vector x = corral.front();

  SetMinimum result;
  result.converged = false;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    const Vector q = detail::greedy_vertex(F, x, order);
    const double gap = x.squaredNorm() - x.dot(q);
    const double scale = std::max(1.0, x.squaredNorm());
    if (gap <= opt.tol * scale) {
      result.converged = true;
      break;
    }
    bool duplicate = false;
    for (const auto& v : corral)
      if ((v - q).lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + q.lpNorm<Eigen::Infinity>())) duplicate = true;
    if (duplicate) {
      result.converged = true;  // no new vertex: x is optimal up to round-off
      break;
    }
    corral.push_back(q);
    lambda.conservativeResize(lambda.size() + 1);
    lambda(lambda.size() - 1) = 0.0;

    // Minor cycle: move toward the affine min-norm point while keeping the
    // convex weights nonnegative, dropping vertices that hit zero.
    for (int minor = 0; minor < 10 * static_cast<int>(m) + 10; ++minor) {
      Matrix Q(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(corral.size()));
      for (std::size_t c = 0; c < corral.size(); ++c) Q.col(static_cast<Eigen::Index>(c)) = corral[c];
      const Vector alpha = detail::affine_min_norm(Q);
      if ((alpha.array() > 1e-14).all()) {
        lambda = alpha;
        x = Q * alpha;
        break;
      }
      double theta = 1.0;
      for (Eigen::Index c = 0; c < alpha.size(); ++c)
        if (alpha(c) <= 1e-14 && lambda(c) - alpha(c) > 0.0) theta = std::min(theta, lambda(c) / (lambda(c) - alpha(c)));
      lambda = theta * alpha + (1.0 - theta) * lambda;
      std::vector<Vector> kept;
      Vector kept_lambda(lambda.size());
      Eigen::Index n = 0;
      for (Eigen::Index c = 0; c < lambda.size(); ++c) {
        if (lambda(c) > 1e-14) {
          kept.push_back(corral[static_cast<std::size_t>(c)]);
          kept_lambda(n++) = lambda(c);
        }
      }
      corral = std::move(kept);
      lambda = kept_lambda.head(n) / kept_lambda.head(n).sum();
      Matrix Qk(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(corral.size()));
      for (std::size_t c = 0; c < corral.size(); ++c) Qk.col(static_cast<Eigen::Index>(c)) = corral[c];
      x = Qk * lambda;
      if (corral.size() == 1) break;
    }
  }
  result.iterations = it;
  SetMinimum best = best_level_set(F, x, opt.nonempty);
  best.value += f0;
  best.iterations = result.iterations;
  best.converged = result.converged;
  return best;
}

inline SetMinimum minimize_exhaustive(const SetFunction& F, std::size_t m, bool nonempty = true) {
  if (m == 0 || m > 24) throw std::invalid_argument("minimize_exhaustive: need 1 <= m <= 24");
  SetMinimum best;
  if (!nonempty) best = {{}, F({})};
  std::vector<std::size_t> S;
  for (std::uint32_t mask = 1; mask < (1u << m); ++mask) {
    S.clear();
    for (std::size_t i = 0; i < m; ++i)
      if (mask & (1u << i)) S.push_back(i);
    const double v = F(S);
    if (v < best.value) best = {S, v};
  }
  return best;
}

}  // namespace fedsel
