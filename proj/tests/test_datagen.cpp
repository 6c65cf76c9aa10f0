#include "fedsel/datagen.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

using namespace fedsel;
using fedsel::testing::random_problem;
using fedsel::testing::random_spd;
using fedsel::testing::random_vector;

namespace {

QuadraticSpec small_spec(std::uint64_t seed) {
  QuadraticSpec s;
  s.m = 6;
  s.n = 40;
  s.d = 8;
  s.seed = seed;
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(GenerateQuadratic, FullScaleShapes) {
  QuadraticSpec s;  // m=100, n=100, d=500, eigenvalues in [1, 10], noise 0.001
  s.seed = 1;
  const auto p = generate_quadratic(s);
  ASSERT_EQ(p.clients(), 100u);
  EXPECT_EQ(p.dim(), 500);
  for (std::size_t i = 0; i < p.clients(); i += 17) {
    const auto& c = p.client(i);
    EXPECT_EQ(c.features.rows(), 100);
    EXPECT_EQ(c.test_features.rows(), 100);
    EXPECT_GE(c.eigenvalues.minCoeff(), 1.0);
    EXPECT_LE(c.eigenvalues.maxCoeff(), 10.0);
  }
  const auto& w = p.generating_model();
  EXPECT_TRUE(((w.array() == 0.0) || (w.array() == 1.0)).all());
  EXPECT_GT(p.curvature().mu, 0.0);
}

TEST(GenerateQuadratic, ScalarDegenerateCase) {
  QuadraticSpec s;
  s.m = 1;
  s.n = 200000;
  s.d = 1;
  s.eig_lo = s.eig_hi = 3.0;
  s.noise_std = 0.0;
  s.seed = 5;
  const auto p = generate_quadratic(s);
  EXPECT_NEAR(p.covariance(0)(0, 0), 3.0, 0.05);
  EXPECT_NEAR((p.global_optimum() - p.local_optimum(0)).norm(), 0.0, 1e-12);
}

TEST(GenerateQuadratic, GlobalCovarianceIsTheAverage) {
  QuadraticSpec s;
  s.m = 2;
  s.n = 3;
  s.d = 2;
  s.noise_std = 0.0;
  s.seed = 9;
  const auto p = generate_quadratic(s);
  const Matrix avg = (p.covariance(0) + p.covariance(1)) / 2.0;
  EXPECT_EQ((p.global_covariance() - avg).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GenerateQuadratic, CovarianceIsEmpiricalAndSymmetric) {
  const auto p = generate_quadratic(small_spec(2));
  for (std::size_t i = 0; i < p.clients(); ++i) {
    const auto& X = p.client(i).features;
    const Matrix ref = X.transpose() * X / static_cast<double>(X.rows());
    EXPECT_LT((p.covariance(i) - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((p.covariance(i) - p.covariance(i).transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GenerateQuadratic, DeterministicPerSeed) {
  const auto a = generate_quadratic(small_spec(4));
  const auto b = generate_quadratic(small_spec(4));
  const auto c = generate_quadratic(small_spec(5));
  EXPECT_EQ(a.client(3).features, b.client(3).features);
  EXPECT_EQ(a.client(3).test_labels, b.client(3).test_labels);
  EXPECT_NE(a.client(3).features, c.client(3).features);
}

TEST(GenerateQuadratic, RejectsBadInput) {
  auto s = small_spec(1);
  s.eig_lo = 5.0;
  s.eig_hi = 2.0;
  EXPECT_THROW(generate_quadratic(s), std::invalid_argument);
  s = small_spec(1);
  s.eig_lo = 0.0;
  EXPECT_THROW(generate_quadratic(s), std::invalid_argument);
  s = small_spec(1);
  s.m = 1;
  s.n = 1;
  s.d = 3;  // rank-one global covariance
  EXPECT_THROW(generate_quadratic(s), std::invalid_argument);
}

TEST(ClientGradient, ZeroAtLocalOptimum) {
  const auto p = generate_quadratic(small_spec(3));
  for (std::size_t i = 0; i < p.clients(); ++i)
    EXPECT_LT(p.client_gradient(i, p.local_optimum(i)).norm(), 1e-10);
}

TEST(ClientGradient, ScalarExample) {
  std::vector<ClientData> cs{client_from_statistics(Matrix::Constant(1, 1, 2.0), Vector::Zero(1))};
  const QuadraticProblem p(std::move(cs), Matrix::Identity(1, 1), Vector::Zero(1));
  EXPECT_DOUBLE_EQ(p.client_gradient(0, Vector::Constant(1, 3.0))(0), 6.0);
}

TEST(ClientGradient, MatchesCentralDifferences) {
  const auto p = generate_quadratic(small_spec(6));
  std::mt19937_64 rng(1);
  const double h = 1e-4;
  for (int t = 0; t < 20; ++t) {
    const auto i = static_cast<ClientIndex>(t % p.clients());
    const Vector w = random_vector(rng, p.dim());
    const Vector g = p.client_gradient(i, w);
    Vector fd(p.dim());
    for (Eigen::Index k = 0; k < p.dim(); ++k) {
      Vector e = Vector::Zero(p.dim());
      e(k) = h;
      fd(k) = (p.client_loss(i, w + e) - p.client_loss(i, w - e)) / (2 * h);
    }
    EXPECT_LT((fd - g).norm() / std::max(1.0, g.norm()), 1e-5);
  }
}

TEST(ClientGradient, RejectsWrongDimension) {
  const auto p = generate_quadratic(small_spec(6));
  EXPECT_THROW(p.client_gradient(0, Vector::Zero(3)), std::invalid_argument);
}

TEST(GlobalLoss, ZeroAtCommonOptimumWithoutNoise) {
  std::mt19937_64 rng(2);
  const Vector w = random_vector(rng, 4);
  std::vector<ClientData> cs;
  for (int i = 0; i < 3; ++i) cs.push_back(client_from_statistics(random_spd(rng, 4), w));
  const QuadraticProblem p(std::move(cs), Matrix::Identity(4, 4), w);
  EXPECT_NEAR(p.global_loss(p.global_optimum()), 0.0, 1e-12);

  auto s = small_spec(8);
  s.noise_std = 0.0;
  const auto g = generate_quadratic(s);
  EXPECT_NEAR(g.global_loss(g.global_optimum()), 0.0, 1e-12);
  EXPECT_NEAR(g.normalized_test_loss(g.generating_model()), 0.0, 1e-20);
}

TEST(GlobalLoss, SuboptimalityIdentity) {
  const auto p = generate_quadratic(small_spec(7));
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Vector w = p.global_optimum() + random_vector(rng, p.dim());
    const Vector e = w - p.global_optimum();
    const double lhs = p.global_loss(w) - p.optimal_loss();
    const double rhs = 0.5 * e.dot(p.global_covariance() * e);
    EXPECT_LT(std::abs(lhs - rhs) / rhs, 1e-8);
    EXPECT_LT(std::abs(p.suboptimality(w) - rhs) / rhs, 1e-12);
  }
}

TEST(GlobalLoss, ScalarExample) {
  std::vector<ClientData> cs{client_from_statistics(Matrix::Constant(1, 1, 2.0), Vector::Zero(1))};
  const QuadraticProblem p(std::move(cs), Matrix::Identity(1, 1), Vector::Zero(1));
  EXPECT_DOUBLE_EQ(p.global_loss(Vector::Constant(1, 1.0)), 1.0);
}

TEST(GlobalLoss, TestLossIsMeanHalfSquaredErrorOverRootD) {
  const auto p = generate_quadratic(small_spec(10));
  std::mt19937_64 rng(4);
  const Vector w = random_vector(rng, p.dim());
  double s = 0.0;
  for (std::size_t i = 0; i < p.clients(); ++i) {
    const auto& c = p.client(i);
    double e = 0.0;
    for (Eigen::Index q = 0; q < c.test_features.rows(); ++q) {
      const double r = c.test_features.row(q).dot(w) - c.test_labels(q);
      e += 0.5 * r * r;
    }
    s += e / static_cast<double>(c.test_features.rows());
  }
  s /= static_cast<double>(p.clients()) * std::sqrt(static_cast<double>(p.dim()));
  EXPECT_NEAR(p.normalized_test_loss(w), s, 1e-12 * s);
}

TEST(Curvature, Identity) {
  const auto c = curvature_of(Matrix::Identity(3, 3));
  EXPECT_DOUBLE_EQ(c.mu, 1.0);
  EXPECT_DOUBLE_EQ(c.L, 1.0);
}

TEST(Curvature, Diagonal) {
  Matrix A = Matrix::Zero(2, 2);
  A(0, 0) = 1.0;
  A(1, 1) = 10.0;
  const auto c = curvature_of(A);
  EXPECT_DOUBLE_EQ(c.mu, 1.0);
  EXPECT_DOUBLE_EQ(c.L, 10.0);
}

TEST(Curvature, MatchesGeneralEigensolver) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const Matrix A = random_spd(rng, 2 + t % 9, 0.1, 20.0);
    Eigen::EigenSolver<Matrix> oracle(A);
    const Vector ev = oracle.eigenvalues().real();
    const auto c = curvature_of(A);
    EXPECT_NEAR(c.mu, ev.minCoeff(), 1e-10);
    EXPECT_NEAR(c.L, ev.maxCoeff(), 1e-10);
  }
}

TEST(Curvature, RejectsSingular) {
  Matrix A = Matrix::Zero(2, 2);
  A(0, 0) = 1.0;
  EXPECT_THROW(curvature_of(A), std::domain_error);
}

TEST(Curvature, ProblemReportsEigenvaluesOfA) {
  const auto p = generate_quadratic(small_spec(13));
  const auto c = curvature(p);
  const auto ref = curvature_of(p.global_covariance());
  EXPECT_NEAR(c.mu, ref.mu, 1e-10);
  EXPECT_NEAR(c.L, ref.L, 1e-10);
}

TEST(Properties, PolyakLojasiewiczHolds) {
  const auto p = generate_quadratic(small_spec(14));
  const auto c = curvature(p);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const Vector w = random_vector(rng, p.dim(), 3.0);
    const double lhs = p.global_gradient(w).squaredNorm();
    const double rhs = 2.0 * c.mu * p.suboptimality(w);
    EXPECT_GE(lhs, rhs * (1.0 - 1e-9));
  }
}

TEST(Properties, SmoothnessHolds) {
  const auto p = generate_quadratic(small_spec(15));
  const auto c = curvature(p);
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const Vector a = random_vector(rng, p.dim(), 3.0);
    const Vector b = random_vector(rng, p.dim(), 3.0);
    EXPECT_LE((p.global_gradient(a) - p.global_gradient(b)).norm(), c.L * (a - b).norm() * (1.0 + 1e-12));
  }
}

TEST(Properties, MeanClientGradientIsGlobalGradient) {
  const auto p = generate_quadratic(small_spec(16));
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const Vector w = random_vector(rng, p.dim(), 2.0);
    Vector g = Vector::Zero(p.dim());
    for (std::size_t i = 0; i < p.clients(); ++i) g += p.client_gradient(i, w);
    g /= static_cast<double>(p.clients());
    const Vector ref = p.global_covariance() * (w - p.global_optimum());
    EXPECT_LT((g - ref).norm() / std::max(1e-12, ref.norm()), 1e-9);
  }
}

TEST(PermuteClients, ReordersWithoutChangingTheProblem) {
  const auto p = generate_quadratic(small_spec(17));
  const std::vector<std::size_t> order{5, 0, 3, 1, 4, 2};
  const auto q = permute_clients(p, order);
  for (std::size_t k = 0; k < order.size(); ++k) EXPECT_EQ(q.covariance(k), p.covariance(order[k]));
  EXPECT_LT((q.global_optimum() - p.global_optimum()).norm(), 1e-10);
  EXPECT_THROW(permute_clients(p, std::vector<std::size_t>{0, 0, 1, 2, 3, 4}), std::invalid_argument);
}
