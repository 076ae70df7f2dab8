#include "somf/proximal.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace somf;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

double linf(const Vector& a, const Vector& b) { return (a - b).lpNorm<Eigen::Infinity>(); }

}  // namespace

TEST(ElasticNetValue, Examples) {
  EXPECT_EQ(elastic_net_value(Vector::Zero(5), 0.5), 0.0);
  EXPECT_EQ(elastic_net_value(Vector::Zero(0), 0.5), 0.0);
  EXPECT_DOUBLE_EQ(elastic_net_value(vec({3, 4}), 1.0), 12.5);
  EXPECT_DOUBLE_EQ(elastic_net_value(vec({3, 4}), 0.0), 7.0);
}

TEST(ElasticNetValue, IsConvexCombinationOfEndpoints) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector v = oracle::random_vector(1 + trial % 9, gen);
    const double m = unit(gen);
    const double mixed = (1 - m) * elastic_net_value(v, 0.0) + m * elastic_net_value(v, 1.0);
    EXPECT_NEAR(elastic_net_value(v, m), mixed, 1e-12 * (1 + mixed));
    EXPECT_GT(elastic_net_value(v, m), 0.0);
  }
}

TEST(ElasticNetValue, RejectsBadMix) {
  EXPECT_THROW(elastic_net_value(vec({1}), -0.1), DomainError);
  EXPECT_THROW(elastic_net_value(vec({1}), 1.5), DomainError);
}

TEST(ElasticNetParams, Validation) {
  ElasticNetParams p;
  EXPECT_NO_THROW(p.validate());
  p.lambda = -1;
  EXPECT_THROW(p.validate(), DomainError);
  p.lambda = 0.1;
  p.nu = 2;
  EXPECT_THROW(p.validate(), DomainError);
}

TEST(EnetProjection, Examples) {
  EXPECT_EQ(enet_projection(vec({0.1, 0.2}), 1.0, 0.0, false), vec({0.1, 0.2}));
  const Vector l2 = enet_projection(vec({3, 4}), 1.0, 1.0, false);
  EXPECT_NEAR(l2[0], 3 * std::sqrt(2.0) / 5, 1e-14);
  EXPECT_NEAR(l2[1], 4 * std::sqrt(2.0) / 5, 1e-14);
  const Vector l1 = enet_projection(vec({2, 0}), 1.0, 0.0, false);
  EXPECT_NEAR(l1[0], 1.0, 1e-14);
  EXPECT_EQ(l1[1], 0.0);
}

TEST(EnetProjection, MixedExampleMatchesRootFind) {
  const Vector u = vec({1.5, -0.7, 0.3});
  const Vector d = enet_projection(u, 0.8, 0.5, false);
  // multiplier 0.65155977318431024 from an independent scalar root-find
  const Vector expected = vec({0.88568255204573498, -0.28226413539109968, 0.0});
  EXPECT_LT(linf(d, expected), 1e-12);
  EXPECT_LT(linf(d, oracle::project(u, 0.8, 0.5, false)), 1e-10);
  EXPECT_NEAR(elastic_net_value(d, 0.5), 0.8, 1e-12);
}

TEST(EnetProjection, ZeroRadiusGivesZero) {
  EXPECT_EQ(enet_projection(vec({1, -2}), 0.0, 0.3, false), Vector::Zero(2));
}

TEST(EnetProjection, NegativeRadiusThrows) {
  EXPECT_THROW(enet_projection(vec({1}), -1e-3, 0.3, false), DomainError);
  EXPECT_THROW(enet_projection(vec({1}), std::nan(""), 0.3, false), DomainError);
}

TEST(EnetProjection, PositiveClipsNegativeEntries) {
  const Vector d = enet_projection(vec({-1, 0.2, 0.1}), 1.0, 0.0, true);
  EXPECT_EQ(d, vec({0, 0.2, 0.1}));
}

TEST(EnetProjection, MatchesOracleFeasibleAndIdempotent) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 400; ++trial) {
    const Index q = 1 + trial % 23;
    const Vector u = oracle::random_vector(q, gen, 0.2 + 3 * unit(gen));
    const double radius = 2 * unit(gen);
    const double mix = trial % 5 == 0 ? 0.0 : (trial % 5 == 1 ? 1.0 : unit(gen));
    const bool positive = trial % 3 == 0;
    const Vector d = enet_projection(u, radius, mix, positive);
    EXPECT_LE(elastic_net_value(d, mix), radius + 1e-10);
    EXPECT_LT(linf(d, oracle::project(u, radius, mix, positive)), 1e-9) << "trial " << trial;
    if (positive) EXPECT_GE(d.minCoeff(), 0.0);
    const Vector again = enet_projection(d, radius, mix, positive);
    EXPECT_LT(linf(again, d), 1e-12);
  }
}

TEST(EnetProjection, ScaleInvarianceOfL2Case) {
  const Vector u = vec({0.3, -1.2, 2.0, 0.0});
  const Vector d = enet_projection(u, 0.5, 1.0, false);
  EXPECT_NEAR(d.norm(), 1.0, 1e-14);
  EXPECT_LT(linf(d, u / u.norm()), 1e-14);
}

TEST(SolveCode, Examples) {
  ElasticNetParams p;
  p.lambda = 1.0;
  const Vector a = solve_code(Matrix::Identity(2, 2), vec({2, -0.5}), p, CodeSolverOptions::oracle_grade());
  EXPECT_NEAR(a[0], 1.0, 1e-14);
  EXPECT_EQ(a[1], 0.0);

  ElasticNetParams pos;
  pos.lambda = 0.1;
  pos.positive_code = true;
  EXPECT_EQ(solve_code(Matrix::Identity(1, 1), vec({-2}), pos)[0], 0.0);

  ElasticNetParams ls;
  Matrix G(2, 2);
  G << 2, 0, 0, 4;
  const Vector b = solve_code(G, vec({2, 2}), ls, CodeSolverOptions::oracle_grade());
  EXPECT_NEAR(b[0], 1.0, 1e-14);
  EXPECT_NEAR(b[1], 0.5, 1e-14);
}

TEST(SolveCode, RandomSpdMatchesProximalGradient) {
  std::mt19937_64 gen(3);
  ElasticNetParams p;
  p.lambda = 0.3;
  p.nu = 0.2;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix G = oracle::random_spd(5, gen);
    const Vector beta = oracle::random_vector(5, gen);
    p.positive_code = trial % 2 == 1;
    const Vector a = solve_code(G, beta, p, CodeSolverOptions{1e-12, 100000});
    const Vector ref = oracle::lasso_fista(G, beta, p.lambda, p.nu, p.positive_code);
    EXPECT_LT(linf(a, ref), 1e-6);
  }
}

TEST(SolveCode, UnpenalizedMatchesLinearSolve) {
  std::mt19937_64 gen(4);
  ElasticNetParams p;
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix G = oracle::random_spd(6, gen, 0.5);
    const Vector beta = oracle::random_vector(6, gen);
    const Vector a = solve_code(G, beta, p, CodeSolverOptions{1e-14, 100000});
    EXPECT_LT(linf(a, G.ldlt().solve(beta)), 1e-8);
  }
}

TEST(SolveCode, ObjectiveNonIncreasingPerSweep) {
  std::mt19937_64 gen(5);
  ElasticNetParams p;
  p.lambda = 0.2;
  p.nu = 0.1;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix G = oracle::random_spd(8, gen, 0.01);
    const Vector beta = oracle::random_vector(8, gen);
    Vector a = Vector::Zero(8);
    double prev = code_objective(G, beta, a, p);
    for (int sweep = 0; sweep < 30; ++sweep) {
      a = solve_code(G, beta, p, a, CodeSolverOptions{0.0, 1});
      const double now = code_objective(G, beta, a, p);
      EXPECT_LE(now, prev + 1e-13);
      prev = now;
    }
  }
}

TEST(SolveCode, ShuffledOrderReachesSameSolution) {
  std::mt19937_64 gen(6);
  ElasticNetParams p;
  p.lambda = 0.1;
  const Matrix G = oracle::random_spd(7, gen);
  const Vector beta = oracle::random_vector(7, gen);
  const Vector cyclic = solve_code(G, beta, p, CodeSolverOptions{1e-13, 100000});
  const Vector shuffled = solve_code(G, beta, p, CodeSolverOptions{1e-13, 100000, true, 99});
  EXPECT_LT(linf(cyclic, shuffled), 1e-9);
}

TEST(SolveCode, WarmStartIsClippedWhenPositive) {
  ElasticNetParams p;
  p.positive_code = true;
  const Vector a = solve_code(Matrix::Identity(2, 2), vec({1, 1}), p, vec({-5, -5}), CodeSolverOptions{0.0, 1});
  EXPECT_GE(a.minCoeff(), 0.0);
}

TEST(SolveCode, SingularCoordinateThrows) {
  ElasticNetParams p;
  Matrix G = Matrix::Zero(2, 2);
  G(0, 0) = 1.0;
  EXPECT_THROW(solve_code(G, vec({1, 1}), p), SingularityError);
  // zero curvature with zero linear term is harmless
  EXPECT_NO_THROW(solve_code(G, vec({1, 0}), p));
}

TEST(SolveCode, DimensionMismatchThrows) {
  ElasticNetParams p;
  EXPECT_THROW(solve_code(Matrix::Identity(3, 3), vec({1, 1}), p), DimensionError);
}

TEST(SolveCode, CountsFlops) {
  FlopCounter flops;
  ElasticNetParams p;
  p.lambda = 0.1;
  solve_code(Matrix::Identity(4, 4), vec({1, 2, 3, 4}), p, {}, &flops);
  EXPECT_GT(flops[FlopCounter::Kind::CodeSolve], 0u);
}
