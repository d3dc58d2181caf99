#include <gtest/gtest.h>

#include <random>

#include "perhom/solver.hpp"

using namespace perhom;

namespace {

Grid torus3(int n) { return Grid(3, {n, n, n}, 1.0 / n, Topology::periodic); }

WeightedOperator dirichlet_box_laplacian(int d, int n, double side) {
  std::array<int, 3> nn{n, n, n};
  Grid g(d, nn, side / n, Topology::box);
  ScalarField one(g, 1.0);
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  return assemble_weighted_stiffness(g, one, {}, ao);
}

}  // namespace

TEST(CgTest, IdentityScaledSystem) {
  SpMat A(5, 5);
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < 5; ++i) t.emplace_back(i, i, 2.0);
  A.setFromTriplets(t.begin(), t.end());
  Eigen::VectorXd b(5);
  b << 1, -2, 3, 0.5, 4;
  Eigen::VectorXd x = cg_solve(A, b);
  EXPECT_NEAR((x - b / 2.0).norm(), 0.0, 1e-12);
}

TEST(CgTest, TorusLaplacianMeanZeroRhs) {
  Grid g = torus3(8);
  ScalarField w(g, 1.0);
  WeightedOperator op = assemble_weighted_stiffness(g, w, {});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss;
  Eigen::VectorXd b(op.active_count());
  for (int i = 0; i < b.size(); ++i) b[i] = gauss(rng);
  b.array() -= b.mean();
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(op.active_count());
  CgOptions co;
  co.mean_zero_weights = &ones;
  Eigen::VectorXd x = cg_solve(op.A, b, co);
  EXPECT_LE((op.A * x - b).norm() / b.norm(), 1e-9);
  EXPECT_NEAR(x.mean(), 0.0, 1e-12);
}

TEST(CgTest, InconsistentRhsRejected) {
  Grid g = torus3(6);
  ScalarField w(g, 1.0);
  WeightedOperator op = assemble_weighted_stiffness(g, w, {});
  Eigen::VectorXd b = Eigen::VectorXd::Ones(op.active_count());
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(op.active_count());
  CgOptions co;
  co.mean_zero_weights = &ones;
  EXPECT_THROW(cg_solve(op.A, b, co), SolverStalled);
}

TEST(SpectralPoissonTest, ExactInverseOfDirichletStencil) {
  // the sine-transform solve inverts the assembled mirror-Dirichlet operator
  WeightedOperator op = dirichlet_box_laplacian(3, 10, 1.0);
  SpectralPoisson sp(op.grid);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss;
  Eigen::VectorXd x(op.active_count());
  for (int i = 0; i < x.size(); ++i) x[i] = gauss(rng);
  Eigen::VectorXd y = sp.solve_full(op.A * x, false);
  EXPECT_LE((y - x).norm() / x.norm(), 1e-12);
}

TEST(SpectralPoissonTest, ExactInverseOnTorus) {
  Grid g = torus3(8);
  ScalarField w(g, 1.0);
  WeightedOperator op = assemble_weighted_stiffness(g, w, {});
  SpectralPoisson sp(g);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss;
  Eigen::VectorXd x(op.active_count());
  for (int i = 0; i < x.size(); ++i) x[i] = gauss(rng);
  x.array() -= x.mean();
  Eigen::VectorXd y = sp.solve_full(op.A * x, true);
  EXPECT_LE((y - x).norm() / x.norm(), 1e-12);
}

TEST(PeriodicPoissonTest, ZeroRhs) {
  Grid g = torus3(8);
  ScalarField rhs(g, 0.0);
  ScalarField u = periodic_poisson(rhs);
  EXPECT_EQ(u.v.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PeriodicPoissonTest, ConstantRhsGivesZero) {
  Grid g = torus3(8);
  ScalarField rhs(g, 4.2);
  ScalarField u = periodic_poisson(rhs);
  EXPECT_NEAR(u.v.cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(PeriodicPoissonTest, SingleFourierMode) {
  // u = cos(2 pi x) / lam_h with the exact discrete symbol
  const int n = 16;
  Grid g = torus3(n);
  ScalarField rhs(g);
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    rhs.v[idx] = std::cos(2 * M_PI * g.cell_center(i)[0]);
  });
  ScalarField u = periodic_poisson(rhs);
  const double lam_h = (2 - 2 * std::cos(2 * M_PI * g.h)) / (g.h * g.h);
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    EXPECT_NEAR(u.v[idx], rhs.v[idx] / lam_h, 1e-12);
  });
  // and the divergence of the gradient reproduces the rhs
  ScalarField back = divergence(gradient(u));
  EXPECT_LE((back.v + rhs.v).cwiseAbs().maxCoeff(), 1e-10);
}

// ---------------------------------------------------------------------------

TEST(DenseOracleTest, DiagonalSystem) {
  SpMat A(2, 2);
  std::vector<Eigen::Triplet<double>> t{{0, 0, 1.0}, {1, 1, 4.0}};
  A.setFromTriplets(t.begin(), t.end());
  Eigen::VectorXd B = Eigen::VectorXd::Ones(2);
  EigenSolution s = dense_eig_oracle(A, B);
  EXPECT_NEAR(s.values[0], 1.0, 1e-14);
  EXPECT_NEAR(s.values[1], 4.0, 1e-14);
  // B = 2I halves the eigenvalues
  EigenSolution s2 = dense_eig_oracle(A, 2 * B);
  EXPECT_NEAR(s2.values[0], 0.5, 1e-14);
  EXPECT_NEAR(s2.values[1], 2.0, 1e-14);
}

TEST(DenseOracleTest, ThreeByThreeAgainstCharacteristicPolynomial) {
  Eigen::Matrix3d M;
  M << 4, 1, 0.5, 1, 3, 0.2, 0.5, 0.2, 5;
  SpMat A(3, 3);
  std::vector<Eigen::Triplet<double>> t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.emplace_back(r, c, M(r, c));
  A.setFromTriplets(t.begin(), t.end());
  Eigen::VectorXd B = Eigen::VectorXd::Ones(3);
  EigenSolution s = dense_eig_oracle(A, B);
  // roots of det(M - x I) located by bisection on the characteristic polynomial
  auto charpoly = [&](double x) { return (M - x * Eigen::Matrix3d::Identity()).determinant(); };
  for (int k = 0; k < 3; ++k) {
    double lo = s.values[k] - 1e-3, hi = s.values[k] + 1e-3;
    EXPECT_LT(charpoly(lo) * charpoly(hi), 0.0) << "no sign change around eigenvalue " << k;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      if (charpoly(lo) * charpoly(mid) <= 0)
        hi = mid;
      else
        lo = mid;
    }
    EXPECT_NEAR(s.values[k], 0.5 * (lo + hi), 1e-8);
  }
}

TEST(DenseOracleTest, SizeLimit) {
  SpMat A(5000, 5000);
  Eigen::VectorXd B = Eigen::VectorXd::Ones(5000);
  EXPECT_THROW(dense_eig_oracle(A, B), OracleTooLarge);
}

// ---------------------------------------------------------------------------

TEST(EigenSolverTest, UnitCubeDirichletGroundState) {
  WeightedOperator op = dirichlet_box_laplacian(3, 24, 1.0);
  Eigen::VectorXd B = weighted_mass(op, ScalarField(op.grid, 1.0));
  SpectralPreconditioner prec(op);
  EigenOptions eo;
  eo.prec = &prec;
  EigenSolution s = smallest_eigenpairs(op.A, B, 1, eo);
  // the discrete value is 3 (2 - 2 cos(pi h)) / h^2, below 3 pi^2
  double exact_h = 3 * (2 - 2 * std::cos(M_PI * op.grid.h)) / (op.grid.h * op.grid.h);
  EXPECT_NEAR(s.values[0], exact_h, 1e-7 * exact_h);
  EXPECT_NEAR(s.values[0], 3 * M_PI * M_PI, 0.01 * 3 * M_PI * M_PI);
}

TEST(EigenSolverTest, UnitSquareMultiplicity) {
  WeightedOperator op = dirichlet_box_laplacian(2, 40, 1.0);
  Eigen::VectorXd B = weighted_mass(op, ScalarField(op.grid, 1.0));
  SpectralPreconditioner prec(op);
  EigenOptions eo;
  eo.prec = &prec;
  EigenSolution s = smallest_eigenpairs(op.A, B, 3, eo);
  EXPECT_NEAR(s.values[0], 2 * M_PI * M_PI, 0.005 * 2 * M_PI * M_PI);
  EXPECT_NEAR(s.values[1], 5 * M_PI * M_PI, 0.005 * 5 * M_PI * M_PI);
  EXPECT_NEAR(s.values[2], s.values[1], 1e-6 * s.values[1]);  // double eigenvalue
}

TEST(EigenSolverTest, MatchesDenseOracleOnTinySystems) {
  // random SPD stencil problems under 512 dofs, iterative vs dense
  Grid g(2, {18, 14, 1}, 0.1, Topology::box);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uni(0.2, 2.0);
  ScalarField w(g);
  for (std::int64_t c = 0; c < g.cell_count(); ++c) w.v[c] = uni(rng);
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  WeightedOperator op = assemble_weighted_stiffness(g, w, {}, ao);
  Eigen::VectorXd B = weighted_mass(op, w);
  const int K = 6;
  EigenOptions eo;
  eo.tol = 1e-10;
  eo.seed = 3;
  eo.block_extra = 6;
  EigenSolution it = smallest_eigenpairs(op.A, B, K, eo);
  EigenSolution dn = dense_eig_oracle(op.A, B);
  for (int k = 0; k < K; ++k) EXPECT_NEAR(it.values[k], dn.values[k], 1e-8 * (1 + std::abs(dn.values[k])));
}

TEST(EigenSolverTest, BOrthonormalAndResidualsWithinTolerance) {
  WeightedOperator op = dirichlet_box_laplacian(3, 12, 1.0);
  Eigen::VectorXd B = weighted_mass(op, ScalarField(op.grid, 1.0));
  EigenOptions eo;
  eo.tol = 1e-9;
  EigenSolution s = smallest_eigenpairs(op.A, B, 4, eo);
  Eigen::MatrixXd G = s.vectors.transpose() * (B.asDiagonal() * s.vectors);
  EXPECT_LE((G - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  for (int k = 0; k < 4; ++k) EXPECT_LE(s.residuals[k], 1e-9);
  for (int k = 1; k < 4; ++k) EXPECT_GE(s.values[k], s.values[k - 1]);
}

TEST(EigenSolverTest, ShiftInvariance) {
  // anisotropic rectangle: simple spectrum, so the vectors are well defined
  Grid g(2, {24, 16, 1}, 1.0 / 24, Topology::box);
  ScalarField one_f(g, 1.0);
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  WeightedOperator op = assemble_weighted_stiffness(g, one_f, {}, ao);
  Eigen::VectorXd B = weighted_mass(op, ScalarField(op.grid, 1.0));
  EigenOptions eo;
  eo.tol = 1e-10;
  eo.seed = 11;
  EigenSolution s0 = smallest_eigenpairs(op.A, B, 2, eo);
  SpMat As = op.A;
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < As.rows(); ++i) t.emplace_back(i, i, B[i]);
  SpMat Bs(As.rows(), As.cols());
  Bs.setFromTriplets(t.begin(), t.end());
  SpMat shifted = As + Bs;
  EigenSolution s1 = smallest_eigenpairs(shifted, B, 2, eo);
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(s1.values[k], s0.values[k] + 1.0, 1e-8 * (1 + s0.values[k]));
    double overlap = std::abs(s0.vectors.col(k).dot(B.cwiseProduct(s1.vectors.col(k))));
    EXPECT_NEAR(overlap, 1.0, 1e-6);
  }
}

TEST(EigenSolverTest, DirichletGrowthMonotonicity) {
  // enlarging the Dirichlet mask never lowers the smallest eigenvalue
  Grid g(2, {20, 20, 1}, 1.0 / 20, Topology::box);
  ScalarField one(g, 1.0);
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  std::vector<std::uint8_t> small_mask(g.cell_count(), 0), big_mask(g.cell_count(), 0);
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    bool inner = std::abs(i[0] - 10) <= 1 && std::abs(i[1] - 10) <= 1;
    bool outer = std::abs(i[0] - 10) <= 2 && std::abs(i[1] - 10) <= 2;
    small_mask[idx] = inner;
    big_mask[idx] = outer;
  });
  WeightedOperator op1 = assemble_weighted_stiffness(g, one, small_mask, ao);
  WeightedOperator op2 = assemble_weighted_stiffness(g, one, big_mask, ao);
  EigenSolution s1 = smallest_eigenpairs(op1.A, weighted_mass(op1, one), 1, {});
  EigenSolution s2 = smallest_eigenpairs(op2.A, weighted_mass(op2, one), 1, {});
  EXPECT_GE(s2.values[0], s1.values[0] - 1e-9);
}

TEST(EigenSolverTest, RankExceededAndDeterminism) {
  WeightedOperator op = dirichlet_box_laplacian(2, 8, 1.0);
  Eigen::VectorXd B = weighted_mass(op, ScalarField(op.grid, 1.0));
  EXPECT_THROW(smallest_eigenpairs(op.A, B, op.active_count() + 1, {}), RankExceeded);
  EigenOptions eo;
  eo.seed = 42;
  EigenSolution a = smallest_eigenpairs(op.A, B, 3, eo);
  EigenSolution b = smallest_eigenpairs(op.A, B, 3, eo);
  EXPECT_EQ((a.values - b.values).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((a.vectors - b.vectors).cwiseAbs().maxCoeff(), 0.0);
}
