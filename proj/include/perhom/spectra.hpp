#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <memory>
#include <vector>

#include "perhom/cell.hpp"

namespace perhom {

enum class ProblemKind { direct, degenerate, intermediate, homogenized };

inline const char* problem_name(ProblemKind k) {
  switch (k) {
    case ProblemKind::direct: return "direct";
    case ProblemKind::degenerate: return "degenerate";
    case ProblemKind::intermediate: return "intermediate";
    case ProblemKind::homogenized: return "homogenized";
  }
  return "?";
}

struct SpectraOptions {
  double eig_tol = 1e-8;
  std::uint64_t seed = 0;
  int block_extra = -1;
  std::int64_t dof_budget = 500000;
};

/// Eigenvalues and eigenfunctions of one of the four problems, orthonormal in
/// the declared inner product (phi^2-weighted or plain).
struct SpectralSet {
  ProblemKind kind = ProblemKind::direct;
  WeightedOperator op;
  Eigen::VectorXd mass;  // diagonal of the inner product
  EigenSolution eig;
  bool phi_weighted = false;

  int count() const { return static_cast<int>(eig.values.size()); }
  ScalarField eigenfunction(int k) const { return op.extend_to_field(eig.vectors.col(k)); }
};

/// Everything tied to one (perforation, epsilon, resolution) triple: the
/// perforated domain, the matching-resolution cell data, and the sampled
/// weight and corrector fields on the macroscopic grid.
struct MacroContext {
  PerforatedDomain pd;
  std::shared_ptr<const CellData> cell;
  ScalarField phi_eps;
  ScalarField phi_eps_sq;
  std::array<ScalarField, 3> chi_eps;
};

inline MacroContext make_macro_context(const BoxDomain& box, const PerforationSpec& spec, int resolution_per_cell,
                                       const CellSolveOptions& copts = {},
                                       std::shared_ptr<const CellData> precomputed = nullptr) {
  MacroContext mc;
  mc.pd = perforate_domain(box, spec, resolution_per_cell);
  if (precomputed) {
    if (precomputed->eigenpair.resolution != resolution_per_cell)
      throw GridMismatch("cell data resolution does not match the macroscopic grid");
    mc.cell = std::move(precomputed);
  } else {
    mc.cell = std::make_shared<const CellData>(compute_cell_data(spec, resolution_per_cell, copts));
  }
  mc.phi_eps = sample_periodic(mc.cell->eigenpair.phi, mc.pd.grid, box.epsilon);
  mc.phi_eps_sq = ScalarField(mc.pd.grid);
  mc.phi_eps_sq.v = mc.phi_eps.v.array().square();
  for (int a = 0; a < box.dim; ++a) {
    if (spec.holes.empty())
      mc.chi_eps[a] = ScalarField(mc.pd.grid, 0.0);
    else
      mc.chi_eps[a] = sample_periodic(mc.cell->correctors.chi[a], mc.pd.grid, box.epsilon);
  }
  // every fluid cell must carry positive weight
  for (std::int64_t c = 0; c < mc.pd.grid.cell_count(); ++c)
    if (mc.pd.fluid[c] && !(mc.phi_eps.v[c] > 0)) throw InvariantViolation("fluid cell with vanishing weight");
  return mc;
}

namespace detail {

inline void check_budget(std::int64_t dofs, const SpectraOptions& o) {
  if (dofs > o.dof_budget) throw BudgetExceeded("eigen-solve of " + std::to_string(dofs) + " dofs over budget");
}

inline EigenSolution run_eig(const WeightedOperator& op, const Eigen::VectorXd& B, int K, const SpectraOptions& o) {
  EigenOptions eo;
  eo.tol = o.eig_tol;
  eo.seed = o.seed;
  eo.block_extra = o.block_extra;
  SmoothedSpectralPreconditioner prec(op);
  eo.prec = &prec;
  return smallest_eigenpairs(op.A, B, K, eo);
}

}  // namespace detail

/// Dirichlet spectrum of minus the Laplacian on the perforated box (zero on
/// the hole cells and on the outer boundary), plain L2 orthonormal.
inline SpectralSet direct_spectrum(const PerforatedDomain& pd, int K, const SpectraOptions& o = {}) {
  if (pd.fluid_count() == 0) throw GeometryUnresolved("empty fluid set");
  SpectralSet s;
  s.kind = ProblemKind::direct;
  ScalarField ones(pd.grid, 1.0);
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  s.op = assemble_weighted_stiffness(pd.grid, ones, pd.hole, ao);
  detail::check_budget(s.op.active_count(), o);
  s.mass = weighted_mass(s.op, ones);
  s.eig = detail::run_eig(s.op, s.mass, K, o);
  return s;
}

/// Weighted pencil of the factored problem on the fluid cells, Dirichlet only
/// on the outer boundary, phi^2-orthonormal.
inline SpectralSet degenerate_spectrum(const PerforatedDomain& pd, const ScalarField& phi_eps, int K,
                                       const SpectraOptions& o = {}) {
  SpectralSet s;
  s.kind = ProblemKind::degenerate;
  s.phi_weighted = true;
  ScalarField w(pd.grid);
  w.v = phi_eps.v.array().square();
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  s.op = assemble_weighted_stiffness(pd.grid, w, {}, ao);
  detail::check_budget(s.op.active_count(), o);
  s.mass = weighted_mass(s.op, w);
  s.eig = detail::run_eig(s.op, s.mass, K, o);
  return s;
}

/// Constant-coefficient operator on the full box against the oscillating
/// mass, with a tiny mass floor on the hole footprint to keep the pencil
/// definite.
inline SpectralSet intermediate_spectrum(const Eigen::Matrix3d& A_bar, const ScalarField& phi_eps, const Grid& box_grid,
                                         int K, const SpectraOptions& o = {}) {
  SpectralSet s;
  s.kind = ProblemKind::intermediate;
  s.phi_weighted = true;
  ScalarField ones(box_grid, 1.0);
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  ao.matrix_weight = &A_bar;
  s.op = assemble_weighted_stiffness(box_grid, ones, {}, ao);
  detail::check_budget(s.op.active_count(), o);
  ScalarField w(box_grid);
  w.v = phi_eps.v.array().square();
  s.mass = weighted_mass(s.op, w, 1e-12);
  s.eig = detail::run_eig(s.op, s.mass, K, o);
  return s;
}

inline SpectralSet homogenized_spectrum(const Eigen::Matrix3d& A_bar, const Grid& box_grid, int K,
                                        const SpectraOptions& o = {}) {
  SpectralSet s;
  s.kind = ProblemKind::homogenized;
  ScalarField ones(box_grid, 1.0);
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  ao.matrix_weight = &A_bar;
  s.op = assemble_weighted_stiffness(box_grid, ones, {}, ao);
  detail::check_budget(s.op.active_count(), o);
  s.mass = weighted_mass(s.op, ones);
  s.eig = detail::run_eig(s.op, s.mass, K, o);
  return s;
}

// ---------------------------------------------------------------------------

struct Reassembled {
  Eigen::VectorXd lambdas;
  std::vector<ScalarField> psi;  // plain-L2 normalized
};

/// Two-scale reassembly: lambda^k = lambda_bar / eps^2 + mu^k and
/// psi^k = phi_eps rho^k.
inline Reassembled reassemble(double lambda_bar, double eps, const SpectralSet& degen, const ScalarField& phi_eps) {
  Reassembled out;
  out.lambdas = degen.eig.values.array() + lambda_bar / (eps * eps);
  const double vol = phi_eps.grid.cell_volume();
  for (int k = 0; k < degen.count(); ++k) {
    ScalarField rho = degen.eigenfunction(k);
    ScalarField psi(phi_eps.grid);
    psi.v = phi_eps.v.array() * rho.v.array();
    double nrm = std::sqrt(vol) * psi.v.norm();
    if (nrm > 0) psi.v /= nrm;
    out.psi.push_back(std::move(psi));
  }
  return out;
}

/// Relative defect of the discrete two-scale energy identity for a test field
/// supported on the fluid cells and vanishing on the outer boundary layer.
inline double two_scale_identity_check(const MacroContext& mc, const ScalarField& v_in) {
  const Grid& g = mc.pd.grid;
  ScalarField v = v_in;
  for (std::int64_t c = 0; c < g.cell_count(); ++c)
    if (!mc.pd.fluid[c] || mc.pd.gamma[c]) v.v[c] = 0;

  ScalarField u(g);
  u.v = mc.phi_eps.v.array() * v.v.array();

  const double s = std::pow(g.h, g.dim - 2);
  double lhs = 0, rhs2 = 0;
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    for (int a = 0; a < g.dim; ++a) {
      std::int64_t up = detail::neighbor_up(g, idx, i, a);
      if (up < 0) continue;
      double du = u.v[up] - u.v[idx];
      lhs += s * du * du;
      if (mc.pd.fluid[idx] && mc.pd.fluid[up]) {
        double wf = 0.5 * (mc.phi_eps_sq.v[idx] + mc.phi_eps_sq.v[up]);
        double dv = v.v[up] - v.v[idx];
        rhs2 += s * wf * dv * dv;
      }
    }
  });
  double mass = weighted_inner_product(v, v, mc.phi_eps_sq);
  double eps = mc.pd.box.epsilon;
  double rhs = mc.cell->eigenpair.lambda_bar / (eps * eps) * mass + rhs2;
  if (lhs == 0) return 0;
  return std::abs(lhs - rhs) / std::abs(lhs);
}

// ---------------------------------------------------------------------------
// Source problems (resolvents).

inline ScalarField degenerate_resolvent(const MacroContext& mc, const ScalarField& f, double tol = 1e-10) {
  ScalarField w = mc.phi_eps_sq;
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  WeightedOperator op = assemble_weighted_stiffness(mc.pd.grid, w, {}, ao);
  const double vol = mc.pd.grid.cell_volume();
  Eigen::VectorXd b(op.active_count());
  for (int k = 0; k < op.active_count(); ++k) {
    auto c = op.cell_of_active[k];
    b[k] = w.v[c] * f.v[c] * vol;
  }
  SmoothedSpectralPreconditioner prec(op);
  CgOptions co;
  co.tol = tol;
  co.prec = &prec;
  return op.extend_to_field(cg_solve(op.A, b, co));
}

inline ScalarField intermediate_resolvent(const Eigen::Matrix3d& A_bar, const ScalarField& phi_eps_sq, const Grid& grid,
                                          const ScalarField& f, double tol = 1e-10) {
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  ao.matrix_weight = &A_bar;
  WeightedOperator op = assemble_weighted_stiffness(grid, ScalarField(grid, 1.0), {}, ao);
  const double vol = grid.cell_volume();
  Eigen::VectorXd b(op.active_count());
  for (int k = 0; k < op.active_count(); ++k) {
    auto c = op.cell_of_active[k];
    b[k] = phi_eps_sq.v[c] * f.v[c] * vol;
  }
  SmoothedSpectralPreconditioner prec(op);
  CgOptions co;
  co.tol = tol;
  co.prec = &prec;
  return op.extend_to_field(cg_solve(op.A, b, co));
}

inline ScalarField homogenized_resolvent(const Eigen::Matrix3d& A_bar, const Grid& grid, const ScalarField& f,
                                         double tol = 1e-10) {
  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  ao.matrix_weight = &A_bar;
  WeightedOperator op = assemble_weighted_stiffness(grid, ScalarField(grid, 1.0), {}, ao);
  const double vol = grid.cell_volume();
  Eigen::VectorXd b(op.active_count());
  for (int k = 0; k < op.active_count(); ++k) b[k] = f.v[op.cell_of_active[k]] * vol;
  SmoothedSpectralPreconditioner prec(op);
  CgOptions co;
  co.tol = tol;
  co.prec = &prec;
  return op.extend_to_field(cg_solve(op.A, b, co));
}

inline ScalarField resolvent_apply(ProblemKind kind, const MacroContext& mc, const ScalarField& f, double tol = 1e-10) {
  switch (kind) {
    case ProblemKind::degenerate: return degenerate_resolvent(mc, f, tol);
    case ProblemKind::intermediate:
      return intermediate_resolvent(mc.cell->tensor.A_bar, mc.phi_eps_sq, mc.pd.grid, f, tol);
    case ProblemKind::homogenized: return homogenized_resolvent(mc.cell->tensor.A_bar, mc.pd.grid, f, tol);
    default: throw ConfigError("resolvent_apply supports the source problems only");
  }
}

// ---------------------------------------------------------------------------

struct FirstOrderOptions {
  bool mollified = true;        // smooth the gradient of the macroscopic solution
  bool boundary_layer = false;  // subtract the lifted boundary mismatch
  double c1 = 0.05;             // cutoff / kernel radius parameter
  double tol = 1e-10;
};

struct FirstOrderApproximation {
  ScalarField u_eps;      // solution of the degenerate problem
  ScalarField u_eta;      // solution of the homogenized problem
  ScalarField corrector;  // eps * chi_eps . (grad u_eta) (mollified/cut off)
  ScalarField w;          // u_eps - u_eta - corrector (+ boundary layer)
  ScalarField v_layer;    // boundary layer (zero unless requested)
  double w_l2 = 0;        // || phi w ||
  double w_h1 = 0;        // || phi grad w ||
};

inline FirstOrderApproximation first_order_approximation(const MacroContext& mc, const ScalarField& f,
                                                         const FirstOrderOptions& opts = {}) {
  const Grid& g = mc.pd.grid;
  const double eps = mc.pd.box.epsilon;
  FirstOrderApproximation out;
  out.u_eps = degenerate_resolvent(mc, f, opts.tol);
  out.u_eta = homogenized_resolvent(mc.cell->tensor.A_bar, g, f, opts.tol);

  VectorField grad_u = centered_gradient(out.u_eta);
  ScalarField theta = cutoff_theta(g, eps, opts.c1);

  out.corrector = ScalarField(g, 0.0);
  for (int a = 0; a < g.dim; ++a) {
    ScalarField da(g);
    da.v = grad_u.comp[a];
    if (opts.mollified) da = mollify(da, eps, opts.c1);
    if (opts.mollified)
      out.corrector.v += eps * (mc.chi_eps[a].v.array() * da.v.array() * theta.v.array()).matrix();
    else
      out.corrector.v += eps * (mc.chi_eps[a].v.array() * da.v.array()).matrix();
  }

  out.v_layer = ScalarField(g, 0.0);
  if (opts.boundary_layer) {
    // harmonic lift of the boundary mismatch: the degenerate operator with
    // zero interior load and eps chi_eps . grad u_eta as Dirichlet data on
    // the outer faces, entering through the mirror-ghost right-hand side
    ScalarField data(g, 0.0);
    for (int a = 0; a < g.dim; ++a)
      data.v += eps * (mc.chi_eps[a].v.array() * grad_u.comp[a].array()).matrix();
    AssemblyOptions ao;
    ao.dirichlet_outer = true;
    WeightedOperator op = assemble_weighted_stiffness(g, mc.phi_eps_sq, {}, ao);
    const double s = std::pow(g.h, g.dim - 2);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(op.active_count());
    detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
      const std::int32_t ai = op.active_of_cell[idx];
      if (ai < 0) return;
      int boundary_faces = 0;
      for (int a = 0; a < g.dim; ++a) {
        if (i[a] == 0) ++boundary_faces;
        if (i[a] == g.n[a] - 1) ++boundary_faces;
      }
      if (boundary_faces > 0) b[ai] = 2.0 * s * mc.phi_eps_sq.v[idx] * boundary_faces * data.v[idx];
    });
    SmoothedSpectralPreconditioner prec(op);
    CgOptions co;
    co.tol = opts.tol;
    co.prec = &prec;
    out.v_layer = op.extend_to_field(cg_solve(op.A, b, co));
  }

  out.w = ScalarField(g);
  out.w.v = out.u_eps.v - out.u_eta.v - out.corrector.v + out.v_layer.v;
  for (std::int64_t c = 0; c < g.cell_count(); ++c)
    if (!mc.pd.fluid[c]) out.w.v[c] = 0;

  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  WeightedOperator op = assemble_weighted_stiffness(g, mc.phi_eps_sq, {}, ao);
  Eigen::VectorXd x = op.restrict_to_active(out.w);
  out.w_l2 = weighted_norm(out.w, mc.phi_eps_sq);
  out.w_h1 = std::sqrt(std::max(0.0, quadratic_form(op, x)));
  return out;
}

// ---------------------------------------------------------------------------

struct GapReport {
  int k = 0;
  int N1 = 0;       // 1-based index of the gap location
  double H = 0;     // eigenvalue-scale common gap
  double G = 0;     // reciprocal-scale common gap
  std::array<double, 3> per_list_gap{0, 0, 0};
};

/// Largest common spectral gap over a window [k, Mk): scans N1 and maximizes
/// min over the lists of value N1+1 minus max over the lists of value N1.
inline GapReport find_spectral_gap(int k, const std::array<std::vector<double>, 3>& lists, int M = 8) {
  if (k < 1 || M < 2) throw ConfigError("gap finder needs k >= 1, M >= 2");
  const std::size_t need = static_cast<std::size_t>(M) * k + 1;
  for (const auto& l : lists)
    if (l.size() < need) throw ListTooShort("need at least M*k+1 eigenvalues per list");

  GapReport rep;
  rep.k = k;
  double best = -std::numeric_limits<double>::max();
  for (int N1 = k; N1 < M * k; ++N1) {
    double lo = -std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::max();
    for (const auto& l : lists) {
      lo = std::max(lo, l[N1 - 1]);
      hi = std::min(hi, l[N1]);
    }
    double H = hi - lo;
    if (H > best) {
      best = H;
      rep.N1 = N1;
    }
  }
  rep.H = best;
  {
    double lo = -std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::max();
    for (int i = 0; i < 3; ++i) {
      const auto& l = lists[i];
      rep.per_list_gap[i] = l[rep.N1] - l[rep.N1 - 1];
      hi = std::min(hi, 1.0 / l[rep.N1 - 1]);
      lo = std::max(lo, 1.0 / l[rep.N1]);
    }
    rep.G = hi - lo;
  }
  return rep;
}

// ---------------------------------------------------------------------------

/// phi^2-weighted distance from a field to the span of the homogenized
/// eigenfunctions with eigenvalue within t of theta (least squares through
/// the Gram system; the homogenized functions are not phi^2-orthogonal).
inline double band_projection(const ScalarField& rho, const SpectralSet& homog, double theta, double t,
                              const ScalarField& phi_eps_sq) {
  std::vector<int> band;
  for (int j = 0; j < homog.count(); ++j)
    if (std::abs(homog.eig.values[j] - theta) <= t) band.push_back(j);
  if (band.empty()) throw EmptyBand("no homogenized eigenvalue within the band");

  const int m = static_cast<int>(band.size());
  std::vector<ScalarField> basis;
  basis.reserve(m);
  for (int j : band) basis.push_back(homog.eigenfunction(j));
  Eigen::MatrixXd G(m, m);
  Eigen::VectorXd c(m);
  for (int a = 0; a < m; ++a) {
    c[a] = weighted_inner_product(rho, basis[a], phi_eps_sq);
    for (int b = a; b < m; ++b) {
      G(a, b) = weighted_inner_product(basis[a], basis[b], phi_eps_sq);
      G(b, a) = G(a, b);
    }
  }
  Eigen::VectorXd y = G.ldlt().solve(c);
  double n2 = weighted_inner_product(rho, rho, phi_eps_sq) - 2 * y.dot(c) + y.dot(G * y);
  return std::sqrt(std::max(0.0, n2));
}

/// Raw pairing matrix between the degenerate and homogenized eigenfunctions
/// in the phi^2 inner product, with the eigenvalue separations.
struct PairingMatrix {
  Eigen::MatrixXd value;       // (j, l) -> <rho_eps^j, rho_eta^l>_w
  Eigen::MatrixXd separation;  // |mu_eta^l - mu_eps^j|
};

inline PairingMatrix almost_orthogonality_matrix(const SpectralSet& degen, const SpectralSet& homog,
                                                 const ScalarField& phi_eps_sq, int k) {
  if (degen.count() < k || homog.count() < k) throw ListTooShort("need k eigenpairs in both sets");
  PairingMatrix pm;
  pm.value.resize(k, k);
  pm.separation.resize(k, k);
  for (int j = 0; j < k; ++j) {
    ScalarField rj = degen.eigenfunction(j);
    for (int l = 0; l < k; ++l) {
      ScalarField hl = homog.eigenfunction(l);
      pm.value(j, l) = weighted_inner_product(rj, hl, phi_eps_sq);
      pm.separation(j, l) = std::abs(homog.eig.values[l] - degen.eig.values[j]);
    }
  }
  return pm;
}

/// Builds the corrector-improved trial space from the first k homogenized
/// eigenfunctions and returns the largest Rayleigh quotient of the degenerate
/// form over it; by minimax this bounds the k-th degenerate eigenvalue from
/// above.
inline double minimax_upper_test(int k, const MacroContext& mc, const SpectralSet& homog, double c1 = 0.05) {
  if (homog.count() < k) throw ListTooShort("need k homogenized eigenpairs");
  const Grid& g = mc.pd.grid;
  const double eps = mc.pd.box.epsilon;
  ScalarField theta = cutoff_theta(g, eps, c1);

  AssemblyOptions ao;
  ao.dirichlet_outer = true;
  WeightedOperator op = assemble_weighted_stiffness(g, mc.phi_eps_sq, {}, ao);
  Eigen::VectorXd mass = weighted_mass(op, mc.phi_eps_sq);

  Eigen::MatrixXd V(op.active_count(), k);
  for (int j = 0; j < k; ++j) {
    ScalarField rho = homog.eigenfunction(j);
    VectorField grad = centered_gradient(rho);
    ScalarField trial(g);
    trial.v = rho.v;
    for (int a = 0; a < g.dim; ++a)
      trial.v += eps * (mc.chi_eps[a].v.array() * grad.comp[a].array() * theta.v.array()).matrix();
    V.col(j) = op.restrict_to_active(trial);
  }
  Eigen::MatrixXd At = V.transpose() * (op.A * V);
  Eigen::MatrixXd Bt = V.transpose() * (mass.asDiagonal() * V);
  At = 0.5 * (At + At.transpose());
  Bt = 0.5 * (Bt + Bt.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> btest(Bt);
  if (btest.eigenvalues().minCoeff() <= 1e-10 * btest.eigenvalues().maxCoeff())
    throw RankDeficientTrialSpace("trial Gram matrix numerically singular");
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(At, Bt);
  return ges.eigenvalues().maxCoeff();
}

/// Weak-error pairing <(T_eps - T_eta) f, g> in the phi^2 inner product.
inline double duality_pairing(const ScalarField& f, const ScalarField& g_fun, const MacroContext& mc,
                              double tol = 1e-10) {
  ScalarField uf_eps = degenerate_resolvent(mc, f, tol);
  ScalarField uf_eta = homogenized_resolvent(mc.cell->tensor.A_bar, mc.pd.grid, f, tol);
  ScalarField diff(mc.pd.grid);
  diff.v = uf_eps.v - uf_eta.v;
  for (std::int64_t c = 0; c < mc.pd.grid.cell_count(); ++c)
    if (!mc.pd.fluid[c]) diff.v[c] = 0;
  return weighted_inner_product(diff, g_fun, mc.phi_eps_sq);
}

// ---------------------------------------------------------------------------

/// Largest principal angle between two column spans, orthonormalized in the
/// given diagonal inner product. Used for cluster-safe eigenvector checks.
inline double subspace_angle(Eigen::MatrixXd U, Eigen::MatrixXd V, const Eigen::VectorXd& B) {
  U *= detail::gram_ortho_transform(U, B);
  V *= detail::gram_ortho_transform(V, B);
  Eigen::MatrixXd C = U.transpose() * (B.asDiagonal() * V);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C);
  double cmin = svd.singularValues().size() ? svd.singularValues().minCoeff() : 0.0;
  cmin = std::min(1.0, cmin);
  return std::acos(cmin);
}

// Export of a spectral set: eigenvalues as a JSON array next to the stacked
// eigenfunctions in the field binary convention.
inline void save_spectral_set(const std::string& dir, const SpectralSet& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json j;
  j["problem"] = problem_name(s.kind);
  j["phi_weighted"] = s.phi_weighted;
  j["eigenvalues"] = std::vector<double>(s.eig.values.data(), s.eig.values.data() + s.eig.values.size());
  std::ofstream os(dir + "/eigenvalues.json");
  os << j.dump(2) << "\n";
  for (int k = 0; k < s.count(); ++k)
    write_field_binary(dir + "/eigenfunction_" + std::to_string(k) + ".bin", s.eigenfunction(k));
}

}  // namespace perhom
