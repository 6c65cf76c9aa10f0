#pragma once

#include "fedsel/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace fedsel {

// Euclidean projection onto {p >= 0, sum p = 1} (sort and threshold).
inline Vector project_to_simplex(const Vector& v) {
  const auto n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cum += u[static_cast<std::size_t>(k)];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - t > 0.0) theta = t;
  }
  Vector p = (v.array() - theta).max(0.0).matrix();
  // Renormalize away the last bits of round-off.
  const double s = p.sum();
  if (s > 0.0) p /= s;
  return p;
}

inline Vector dirichlet_sample(std::size_t m, double concentration, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(concentration, 1.0);
  Vector p(static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = g(rng);
  const double s = p.sum();
  if (!(s > 0.0)) return Vector::Constant(p.size(), 1.0 / static_cast<double>(m));
  return p / s;
}

struct ProjectedGradientOptions {
  int max_iter = 3000;
  double step_tol = 1e-13;
  double value_rtol = 1e-15;
};

struct ProjectedGradientResult {
  Vector p;
  double value = 0.0;
  int iterations = 0;
};

// Projected gradient descent on the simplex with a backtracking step that
// enforces the standard sufficient-decrease condition
//   f(x+) <= f(x) + g^T (x+ - x) + ||x+ - x||^2 / (2 s).
// f may return +inf outside its domain; such trial points are rejected.
inline ProjectedGradientResult projected_gradient(const std::function<double(const Vector&)>& f,
                                                  const std::function<Vector(const Vector&)>& grad,
                                                  Vector x, const ProjectedGradientOptions& opt = {}) {
  x = project_to_simplex(x);
  double fx = f(x);
  double step = 0.0;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    const Vector g = grad(x);
    const double gn = g.norm();
    if (!(gn > 0.0) || !std::isfinite(gn)) break;
    if (step == 0.0) step = 1.0 / gn;
    else step *= 2.0;

    Vector next;
    double fn = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      next = project_to_simplex(x - step * g);
      fn = f(next);
      const Vector dx = next - x;
      if (std::isfinite(fn) && fn <= fx + g.dot(dx) + dx.squaredNorm() / (2.0 * step)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double moved = (next - x).norm();
    const double drop = fx - fn;
    x = std::move(next);
    fx = fn;
    if (moved <= opt.step_tol || drop <= opt.value_rtol * std::abs(fx)) {
      ++it;
      break;
    }
  }
  return {x, fx, it};
}

}  // namespace fedsel
