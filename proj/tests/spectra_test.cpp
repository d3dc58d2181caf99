#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "perhom/spectra.hpp"

using namespace perhom;

namespace {

PerforationSpec ball_spec(int d, double radius, double eta, double c0 = 0.2) {
  PerforationSpec s;
  s.dim = d;
  s.eta = eta;
  s.c0 = c0;
  Hole h;
  h.center = {0.5, 0.5, 0.5};
  h.radius = radius;
  s.holes = {h};
  return s;
}

PerforationSpec no_holes(int d, double eta = 0.3) {
  PerforationSpec s;
  s.dim = d;
  s.eta = eta;
  return s;
}

BoxDomain unit_box(int d, double eps) {
  BoxDomain b;
  b.dim = d;
  b.L = {1, 1, 1};
  b.epsilon = eps;
  return b;
}

constexpr double kPi2 = M_PI * M_PI;

}  // namespace

TEST(DirectSpectrumTest, NoHoleCubeGroundState) {
  MacroContext mc = make_macro_context(unit_box(3, 0.5), no_holes(3), 12);
  SpectralSet s = direct_spectrum(mc.pd, 1);
  EXPECT_NEAR(s.eig.values[0], 3 * kPi2, 0.01 * 3 * kPi2);
}

TEST(DirectSpectrumTest, HolesRaiseTheGroundState) {
  SpectraOptions so;
  MacroContext plain = make_macro_context(unit_box(3, 0.5), no_holes(3), 12);
  MacroContext holey = make_macro_context(unit_box(3, 0.5), ball_spec(3, 0.5, 0.4), 12);
  double a = direct_spectrum(plain.pd, 1, so).eig.values[0];
  double b = direct_spectrum(holey.pd, 1, so).eig.values[0];
  EXPECT_GT(b, a);
}

TEST(DirectSpectrumTest, TinyInstanceMatchesDenseOracle) {
  MacroContext mc = make_macro_context(unit_box(2, 0.5), ball_spec(2, 0.5, 0.4), 10);  // 20^2 grid
  SpectraOptions so;
  so.eig_tol = 1e-10;
  SpectralSet s = direct_spectrum(mc.pd, 5, so);
  EigenSolution dense = dense_eig_oracle(s.op.A, s.mass);
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(s.eig.values[k], dense.values[k], 1e-8 * (1 + dense.values[k]));
  double ang = subspace_angle(s.eig.vectors, dense.vectors.leftCols(5), s.mass);
  EXPECT_LE(ang, 1e-6);
}

TEST(DegenerateSpectrumTest, NoHolesMatchesDirect) {
  MacroContext mc = make_macro_context(unit_box(3, 0.5), no_holes(3), 10);
  SpectraOptions so;
  so.eig_tol = 1e-10;
  SpectralSet direct = direct_spectrum(mc.pd, 3, so);
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 3, so);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(degen.eig.values[k], direct.eig.values[k], 1e-8 * direct.eig.values[k]);
}

TEST(DegenerateSpectrumTest, WeightedPoincareHolds) {
  MacroContext mc = make_macro_context(unit_box(2, 0.25), ball_spec(2, 0.5, 0.4), 12);
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 2);
  EXPECT_GT(degen.eig.values[0], 0.0);
  // orthonormal in the weighted inner product
  Eigen::MatrixXd G = degen.eig.vectors.transpose() * (degen.mass.asDiagonal() * degen.eig.vectors);
  EXPECT_LE((G - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(DegenerateSpectrumTest, PoincareStableUnderRefinement) {
  // the bottom of the weighted spectrum does not collapse when h halves
  SpectraOptions so;
  auto mu1 = [&](int r) {
    MacroContext mc = make_macro_context(unit_box(2, 0.5), ball_spec(2, 0.5, 0.5), r);
    return degenerate_spectrum(mc.pd, mc.phi_eps, 1, so).eig.values[0];
  };
  double coarse = mu1(8), fine = mu1(16);
  EXPECT_GE(fine, 0.9 * coarse);
}

TEST(IntermediateSpectrumTest, MassFloorMatchesSchurComplementOnTinyInstance) {
  MacroContext mc = make_macro_context(unit_box(2, 0.5), ball_spec(2, 0.5, 0.5), 9);
  SpectraOptions so;
  so.eig_tol = 1e-11;
  SpectralSet inter = intermediate_spectrum(mc.cell->tensor.A_bar, mc.phi_eps, mc.pd.grid, 4, so);

  // exact reduced pencil: eliminate the zero-mass cells statically
  Eigen::MatrixXd A = Eigen::MatrixXd(inter.op.A);
  std::vector<int> pos, zer;
  for (int k = 0; k < inter.op.active_count(); ++k) {
    if (mc.phi_eps_sq.v[inter.op.cell_of_active[k]] > 0)
      pos.push_back(k);
    else
      zer.push_back(k);
  }
  ASSERT_GT(zer.size(), 0u);
  Eigen::MatrixXd App(pos.size(), pos.size()), Apz(pos.size(), zer.size()), Azz(zer.size(), zer.size());
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < pos.size(); ++j) App(i, j) = A(pos[i], pos[j]);
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < zer.size(); ++j) Apz(i, j) = A(pos[i], zer[j]);
  for (std::size_t i = 0; i < zer.size(); ++i)
    for (std::size_t j = 0; j < zer.size(); ++j) Azz(i, j) = A(zer[i], zer[j]);
  Eigen::MatrixXd S = App - Apz * Azz.ldlt().solve(Apz.transpose());
  Eigen::VectorXd Bpp(pos.size());
  const double vol = mc.pd.grid.cell_volume();
  for (std::size_t i = 0; i < pos.size(); ++i) Bpp[i] = mc.phi_eps_sq.v[inter.op.cell_of_active[pos[i]]] * vol;
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(S, Eigen::MatrixXd(Bpp.asDiagonal()));
  for (int k = 0; k < 4; ++k)
    EXPECT_NEAR(inter.eig.values[k], ges.eigenvalues()[k], 1e-9 * (1 + std::abs(ges.eigenvalues()[k])));
}

TEST(HomogenizedSpectrumTest, IdentityTensorLadderAndScaling) {
  Grid g(3, {20, 20, 20}, 1.0 / 20, Topology::box);
  Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  SpectraOptions so;
  so.eig_tol = 1e-10;
  SpectralSet a = homogenized_spectrum(I, g, 4, so);
  EXPECT_NEAR(a.eig.values[0], 3 * kPi2, 0.02 * 3 * kPi2);
  for (int k = 1; k < 4; ++k) EXPECT_NEAR(a.eig.values[k], 6 * kPi2, 0.02 * 6 * kPi2);
  Eigen::Matrix3d two = 2 * I;
  SpectralSet b = homogenized_spectrum(two, g, 4, so);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(b.eig.values[k], 2 * a.eig.values[k], 1e-8 * b.eig.values[k]);
}

// ---------------------------------------------------------------------------

TEST(ReassembleTest, ArithmeticAndNoHoleIdentity) {
  MacroContext mc = make_macro_context(unit_box(2, 0.5), no_holes(2), 10);
  SpectraOptions so;
  so.eig_tol = 1e-10;
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 2, so);
  Reassembled re = reassemble(2.0, 0.5, degen, mc.phi_eps);
  // lambda = eps^-2 * 2 + mu = 8 + mu
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(re.lambdas[k], 8.0 + degen.eig.values[k], 1e-12 * re.lambdas[k]);
  // with the true lambda_bar = 0 the reassembly reproduces the direct values
  SpectralSet direct = direct_spectrum(mc.pd, 2, so);
  Reassembled re0 = reassemble(0.0, 0.5, degen, mc.phi_eps);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(re0.lambdas[k], direct.eig.values[k], 1e-8 * direct.eig.values[k]);
}

TEST(ReassembleTest, ResidualShrinksUnderRefinement) {
  auto spec = ball_spec(3, 0.5, 0.3);
  SpectraOptions so;
  auto gap_at = [&](int r) {
    MacroContext mc = make_macro_context(unit_box(3, 0.5), spec, r);
    SpectralSet direct = direct_spectrum(mc.pd, 2, so);
    SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 2, so);
    Reassembled re = reassemble(mc.cell->eigenpair.lambda_bar, 0.5, degen, mc.phi_eps);
    double worst = 0;
    for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(direct.eig.values[k] - re.lambdas[k]));
    return worst;
  };
  double coarse = gap_at(14), fine = gap_at(28);
  EXPECT_GE(coarse / fine, 1.5);
}

TEST(TwoScaleIdentityTest, ExactWithoutHoles) {
  MacroContext mc = make_macro_context(unit_box(3, 0.5), no_holes(3), 10);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(-1, 1);
  ScalarField v(mc.pd.grid);
  for (std::int64_t c = 0; c < mc.pd.grid.cell_count(); ++c) v.v[c] = uni(rng);
  EXPECT_LE(two_scale_identity_check(mc, v), 1e-12);
}

TEST(TwoScaleIdentityTest, MismatchShrinksUnderRefinement) {
  auto spec = ball_spec(3, 0.5, 0.3);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(-1, 1);
  auto mismatch = [&](int r) {
    MacroContext mc = make_macro_context(unit_box(3, 0.25), spec, r);
    ScalarField v(mc.pd.grid);
    for (std::int64_t c = 0; c < mc.pd.grid.cell_count(); ++c) v.v[c] = uni(rng);
    return two_scale_identity_check(mc, v);
  };
  double coarse = mismatch(14), fine = mismatch(28);
  EXPECT_GE(coarse / fine, 1.5);
}

TEST(TwoScaleIdentityTest, EigenfunctionGivesReassembledValue) {
  // plugging the first degenerate eigenfunction into the identity makes the
  // energy ratio the reassembled eigenvalue, up to the identity defect
  auto spec = ball_spec(3, 0.5, 0.3);
  MacroContext mc = make_macro_context(unit_box(3, 0.5), spec, 16);
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 1);
  ScalarField rho = degen.eigenfunction(0);
  double mismatch = two_scale_identity_check(mc, rho);
  EXPECT_LE(mismatch, 0.02);
  // the ratio itself: compute both sides with the check's conventions
  ScalarField v = rho;
  for (std::int64_t c = 0; c < mc.pd.grid.cell_count(); ++c)
    if (!mc.pd.fluid[c] || mc.pd.gamma[c]) v.v[c] = 0;
  ScalarField u(mc.pd.grid);
  u.v = mc.phi_eps.v.array() * v.v.array();
  double lhs = 0;
  const double s = std::pow(mc.pd.grid.h, mc.pd.grid.dim - 2);
  detail::for_each_cell(mc.pd.grid, [&](std::int64_t idx, const std::array<int, 3>& i) {
    for (int a = 0; a < mc.pd.grid.dim; ++a) {
      std::int64_t up = detail::neighbor_up(mc.pd.grid, idx, i, a);
      if (up < 0) continue;
      double du = u.v[up] - u.v[idx];
      lhs += s * du * du;
    }
  });
  double mass = weighted_inner_product(v, v, mc.phi_eps_sq);
  double expected = mc.cell->eigenpair.lambda_bar / 0.25 + degen.eig.values[0];
  // zeroing the boundary layer of rho perturbs the quotient at the few-percent scale
  EXPECT_NEAR(lhs / mass, expected, 0.08 * expected);
}

// ---------------------------------------------------------------------------

TEST(ResolventTest, ZeroSourceGivesZero) {
  MacroContext mc = make_macro_context(unit_box(2, 0.5), ball_spec(2, 0.5, 0.4), 10);
  ScalarField f(mc.pd.grid, 0.0);
  EXPECT_EQ(degenerate_resolvent(mc, f).v.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(homogenized_resolvent(mc.cell->tensor.A_bar, mc.pd.grid, f).v.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ResolventTest, DegenerateResolventSelfAdjoint) {
  MacroContext mc = make_macro_context(unit_box(2, 0.25), ball_spec(2, 0.5, 0.4), 12);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(-1, 1);
  ScalarField f(mc.pd.grid), g(mc.pd.grid);
  for (std::int64_t c = 0; c < mc.pd.grid.cell_count(); ++c) {
    f.v[c] = uni(rng);
    g.v[c] = uni(rng);
  }
  ScalarField Tf = degenerate_resolvent(mc, f, 1e-12);
  ScalarField Tg = degenerate_resolvent(mc, g, 1e-12);
  double a = weighted_inner_product(Tf, g, mc.phi_eps_sq);
  double b = weighted_inner_product(f, Tg, mc.phi_eps_sq);
  EXPECT_NEAR(a, b, 1e-10 * (std::abs(a) + 1));
}

TEST(ResolventTest, HomogenizedMatchesSeparableSeries) {
  // -lap u = 1 on the unit cube: center value from the sine series
  Grid g(3, {33, 33, 33}, 1.0 / 33, Topology::box);
  ScalarField f(g, 1.0);
  ScalarField u = homogenized_resolvent(Eigen::Matrix3d::Identity(), g, f, 1e-12);
  double series = 0;
  for (int i = 1; i <= 41; i += 2)
    for (int j = 1; j <= 41; j += 2)
      for (int k = 1; k <= 41; k += 2) {
        double sgn = ((i + j + k - 3) / 2) % 2 == 0 ? 1.0 : -1.0;
        series += 64.0 * sgn / (std::pow(M_PI, 5) * i * j * k * (i * i + j * j + k * k));
      }
  double center = u.v[g.index({16, 16, 16})];
  EXPECT_NEAR(center, series, 0.01 * series);
}

// ---------------------------------------------------------------------------

TEST(FirstOrderTest, NoHolesLeavesTinyRemainder) {
  MacroContext mc = make_macro_context(unit_box(3, 0.25), no_holes(3), 12);
  ScalarField f(mc.pd.grid);
  detail::for_each_cell(mc.pd.grid, [&](std::int64_t idx, const std::array<int, 3>& i) {
    auto x = mc.pd.grid.cell_center(i);
    f.v[idx] = std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2]);
  });
  FirstOrderOptions fo;
  fo.mollified = false;
  FirstOrderApproximation fa = first_order_approximation(mc, f, fo);
  EXPECT_LE(fa.w_l2, 1e-8);
  EXPECT_LE(fa.w_h1, 1e-7);
}

TEST(FirstOrderTest, RemainderDecaysWithEpsilon) {
  // mollifier-friendly clearance so the default kernel radius c0/4 resolves
  auto spec = ball_spec(3, 0.35, 0.25, 0.4);
  FirstOrderOptions fo;
  fo.c1 = 0.1;
  std::vector<double> h1;
  for (double eps : {0.5, 1.0 / 3.0, 0.25}) {
    BoxDomain box = unit_box(3, eps);
    MacroContext mc = make_macro_context(box, spec, 24);
    ScalarField f(mc.pd.grid);
    detail::for_each_cell(mc.pd.grid, [&](std::int64_t idx, const std::array<int, 3>& i) {
      auto x = mc.pd.grid.cell_center(i);
      f.v[idx] = std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2]);
    });
    FirstOrderApproximation fa = first_order_approximation(mc, f, fo);
    h1.push_back(fa.w_h1);
  }
  EXPECT_LT(h1[1], h1[0]);
  EXPECT_LT(h1[2], h1[1]);
}

TEST(FirstOrderTest, BoundaryLayerImprovesTheRemainder) {
  // off-center hole: the outer boundary passes close to the perforation, so
  // the corrector term has a visible trace there and the lifted layer both
  // lowers the remainder and speeds up its decay
  PerforationSpec spec;
  spec.dim = 3;
  spec.eta = 0.25;
  spec.c0 = 0.2;
  Hole h;
  h.center = {0.3, 0.5, 0.5};
  h.radius = 0.35;
  spec.holes = {h};
  FirstOrderOptions plain;
  plain.mollified = false;
  plain.c1 = 0.1;
  FirstOrderOptions layered = plain;
  layered.boundary_layer = true;
  std::array<double, 2> a{}, b{};
  int lvl = 0;
  for (double eps : {0.5, 0.25}) {
    MacroContext mc = make_macro_context(unit_box(3, eps), spec, 24);
    ScalarField f(mc.pd.grid);
    detail::for_each_cell(mc.pd.grid, [&](std::int64_t idx, const std::array<int, 3>& i) {
      auto x = mc.pd.grid.cell_center(i);
      f.v[idx] = std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2]);
    });
    a[lvl] = first_order_approximation(mc, f, plain).w_h1;
    b[lvl] = first_order_approximation(mc, f, layered).w_h1;
    EXPECT_LT(b[lvl], a[lvl]);
    ++lvl;
  }
  // subtracting the layer also decays no slower across the ladder
  EXPECT_LE(b[1] / b[0], a[1] / a[0] * 1.05);
}

// ---------------------------------------------------------------------------

TEST(GapFinderTest, ConstructedGap) {
  std::vector<double> l{1, 2, 3, 10, 11};
  GapReport rep = find_spectral_gap(2, {l, l, l}, 2);
  EXPECT_EQ(rep.N1, 3);
  EXPECT_NEAR(rep.H, 7.0, 1e-14);
  // perturbations keep the location
  std::array<std::vector<double>, 3> pert{l, l, l};
  for (int i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < l.size(); ++j) pert[i][j] += 0.1 * ((i + j) % 2 ? 1 : -1);
  EXPECT_EQ(find_spectral_gap(2, pert, 2).N1, 3);
}

TEST(GapFinderTest, MatchesExhaustiveScanOnRandomLists) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> step(0.01, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    int k = 1 + static_cast<int>(rng() % 4);
    int M = 8;
    std::array<std::vector<double>, 3> lists;
    for (auto& l : lists) {
      double acc = 0.5;
      for (int j = 0; j < M * k + 3; ++j) {
        acc += step(rng);
        l.push_back(acc);
      }
    }
    GapReport rep = find_spectral_gap(k, lists, M);
    // independent scan
    int best_n = -1;
    double best = -1e300;
    for (int N1 = k; N1 < M * k; ++N1) {
      double lo = std::max({lists[0][N1 - 1], lists[1][N1 - 1], lists[2][N1 - 1]});
      double hi = std::min({lists[0][N1], lists[1][N1], lists[2][N1]});
      if (hi - lo > best) {
        best = hi - lo;
        best_n = N1;
      }
    }
    EXPECT_EQ(rep.N1, best_n);
    EXPECT_NEAR(rep.H, best, 1e-13);
    EXPECT_GE(rep.N1, k);
    EXPECT_LT(rep.N1, M * k);
    // the reported gap is consistent with its own lists
    double lo = std::max({lists[0][rep.N1 - 1], lists[1][rep.N1 - 1], lists[2][rep.N1 - 1]});
    double hi = std::min({lists[0][rep.N1], lists[1][rep.N1], lists[2][rep.N1]});
    EXPECT_NEAR(rep.H, hi - lo, 1e-13);
  }
}

TEST(GapFinderTest, ShortListRejected) {
  std::vector<double> l{1, 2, 3};
  EXPECT_THROW(find_spectral_gap(2, {l, l, l}, 2), ListTooShort);
}

// ---------------------------------------------------------------------------

TEST(BandProjectionTest, EmptyBandThrows) {
  MacroContext mc = make_macro_context(unit_box(2, 0.5), no_holes(2), 10);
  SpectralSet homog = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, 3);
  ScalarField rho = homog.eigenfunction(0);
  EXPECT_THROW(band_projection(rho, homog, homog.eig.values[0] + 100.0, 0.5, mc.phi_eps_sq), EmptyBand);
}

TEST(BandProjectionTest, NoHolesResidualTinyAndMonotoneInT) {
  MacroContext mc = make_macro_context(unit_box(2, 0.5), no_holes(2), 12);
  SpectraOptions so;
  so.eig_tol = 1e-10;
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 1, so);
  SpectralSet homog = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, 6, so);
  ScalarField rho = degen.eigenfunction(0);
  double theta = homog.eig.values[0];
  double tight = band_projection(rho, homog, theta, 0.05, mc.phi_eps_sq);
  EXPECT_LE(tight, 1e-6);
  double wide = band_projection(rho, homog, theta, 100.0, mc.phi_eps_sq);
  EXPECT_LE(wide, tight + 1e-12);
}

TEST(BandProjectionTest, WideningNeverIncreasesResidual) {
  MacroContext mc = make_macro_context(unit_box(3, 0.25), ball_spec(3, 0.5, 0.3), 14);
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 2);
  SpectralSet homog = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, 10);
  ScalarField rho = degen.eigenfunction(1);
  double theta = homog.eig.values[1];
  double prev = std::numeric_limits<double>::max();
  for (double t : {0.05, 0.5, 5.0, 50.0}) {
    double r = band_projection(rho, homog, theta, t, mc.phi_eps_sq);
    EXPECT_LE(r, prev + 1e-12);
    prev = r;
  }
}

TEST(AlmostOrthogonalityTest, NoHolesGivesIdentityPairing) {
  // anisotropic box: the first two eigenvalues are simple, so the pairing is
  // well defined entrywise
  BoxDomain box;
  box.dim = 2;
  box.L = {1.0, 0.75, 1.0};
  box.epsilon = 0.5;
  MacroContext mc = make_macro_context(box, no_holes(2), 12);
  SpectraOptions so;
  so.eig_tol = 1e-10;
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 2, so);
  SpectralSet homog = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, 2, so);
  PairingMatrix pm = almost_orthogonality_matrix(degen, homog, mc.phi_eps_sq, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(std::abs(pm.value(i, j)), i == j ? 1.0 : 0.0, 1e-6);
}

TEST(AlmostOrthogonalityTest, MatchesDirectQuadrature) {
  MacroContext mc = make_macro_context(unit_box(2, 0.25), ball_spec(2, 0.5, 0.4), 10);
  SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 3);
  SpectralSet homog = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, 3);
  PairingMatrix pm = almost_orthogonality_matrix(degen, homog, mc.phi_eps_sq, 3);
  const double vol = mc.pd.grid.cell_volume();
  for (int j = 0; j < 3; ++j)
    for (int l = 0; l < 3; ++l) {
      ScalarField rj = degen.eigenfunction(j), hl = homog.eigenfunction(l);
      double direct = 0;
      for (std::int64_t c = 0; c < mc.pd.grid.cell_count(); ++c)
        direct += vol * mc.phi_eps_sq.v[c] * rj.v[c] * hl.v[c];
      EXPECT_NEAR(pm.value(j, l), direct, 1e-12 * (1 + std::abs(direct)));
      EXPECT_NEAR(pm.separation(j, l), std::abs(homog.eig.values[l] - degen.eig.values[j]), 1e-12);
    }
}

TEST(MinimaxTest, UpperBoundAndNoHoleExactness) {
  SpectraOptions so;
  so.eig_tol = 1e-10;
  {
    MacroContext mc = make_macro_context(unit_box(2, 0.25), no_holes(2), 12);
    SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 2, so);
    SpectralSet homog = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, 2, so);
    double bound = minimax_upper_test(2, mc, homog);
    EXPECT_NEAR(bound, degen.eig.values[1], 1e-6 * degen.eig.values[1]);
  }
  {
    MacroContext mc = make_macro_context(unit_box(3, 0.25), ball_spec(3, 0.5, 0.3), 14);
    SpectralSet degen = degenerate_spectrum(mc.pd, mc.phi_eps, 3, so);
    SpectralSet homog = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, 3, so);
    for (int k = 1; k <= 3; ++k) {
      double bound = minimax_upper_test(k, mc, homog);
      EXPECT_GE(bound, degen.eig.values[k - 1] - 1e-6);
    }
  }
}

TEST(DualityPairingTest, ZeroAndSelfAdjointPieces) {
  MacroContext mc = make_macro_context(unit_box(2, 0.25), ball_spec(2, 0.5, 0.4), 12);
  ScalarField zero(mc.pd.grid, 0.0);
  EXPECT_EQ(duality_pairing(zero, zero, mc), 0.0);
  // each resolvent is symmetric in its own pairing
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-1, 1);
  ScalarField f(mc.pd.grid), g(mc.pd.grid);
  for (std::int64_t c = 0; c < mc.pd.grid.cell_count(); ++c) {
    f.v[c] = uni(rng);
    g.v[c] = uni(rng);
  }
  ScalarField Tf = homogenized_resolvent(mc.cell->tensor.A_bar, mc.pd.grid, f, 1e-12);
  ScalarField Tg = homogenized_resolvent(mc.cell->tensor.A_bar, mc.pd.grid, g, 1e-12);
  ScalarField one(mc.pd.grid, 1.0);
  EXPECT_NEAR(weighted_inner_product(Tf, g, one), weighted_inner_product(f, Tg, one),
              1e-9 * (1 + std::abs(weighted_inner_product(Tf, g, one))));
}

TEST(SpectraExportTest, SaveSpectralSet) {
  MacroContext mc = make_macro_context(unit_box(2, 0.5), no_holes(2), 10);
  SpectralSet s = homogenized_spectrum(mc.cell->tensor.A_bar, mc.pd.grid, 2);
  auto dir = std::filesystem::temp_directory_path() / "perhom_specset";
  std::filesystem::remove_all(dir);
  save_spectral_set(dir.string(), s);
  std::ifstream is(dir / "eigenvalues.json");
  ASSERT_TRUE(is.good());
  json j;
  is >> j;
  EXPECT_EQ(j.at("problem").get<std::string>(), "homogenized");
  EXPECT_EQ(j.at("eigenvalues").size(), 2u);
  ScalarField e0 = read_field_binary((dir / "eigenfunction_0.bin").string());
  EXPECT_EQ(e0.v.size(), mc.pd.grid.cell_count());
  std::filesystem::remove_all(dir);
}

TEST(SpectraBudgetTest, BudgetEnforced) {
  MacroContext mc = make_macro_context(unit_box(3, 0.5), no_holes(3), 12);
  SpectraOptions so;
  so.dof_budget = 100;
  EXPECT_THROW(direct_spectrum(mc.pd, 1, so), BudgetExceeded);
}
