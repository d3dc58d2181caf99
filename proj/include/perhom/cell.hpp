#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <fstream>
#include <vector>

#include "perhom/geometry.hpp"
#include "perhom/solver.hpp"

namespace perhom {

struct CellSolveOptions {
  double eig_tol = 1e-10;
  double lin_tol = 1e-11;
  std::uint64_t seed = 0;
};

/// Principal eigenpair of the cell problem: minus Laplacian on the unit torus
/// with the hole cells held at zero. The eigenfunction is extended by zero
/// into the holes, positive on the fluid cells, and unit L2 norm over the
/// cell.
struct CellEigenpair {
  PerforationSpec spec;
  int resolution = 0;
  ScalarField phi;       // on the periodic cell grid, zero on holes
  double lambda_bar = 0;
  double rayleigh = 0;   // recomputed quotient, equals lambda_bar to solver tol
};

inline void require_resolved(const PerforationSpec& spec, int resolution) {
  for (const auto& h : spec.holes) {
    double cells_across = h.pre_scale_diameter(spec.dim) * spec.eta * resolution;
    if (cells_across < 4.0) throw GeometryUnresolved("a hole spans fewer than 4 cells at this resolution");
  }
}

inline CellEigenpair cell_eigenpair(const PerforationSpec& spec, int resolution, const CellSolveOptions& opts = {}) {
  spec.validate();
  Grid g(spec.dim, {resolution, resolution, resolution}, 1.0 / resolution, Topology::periodic);
  CellEigenpair out;
  out.spec = spec;
  out.resolution = resolution;
  if (spec.holes.empty()) {
    out.phi = ScalarField(g, 1.0);
    out.lambda_bar = 0.0;
    out.rayleigh = 0.0;
    return out;
  }
  require_resolved(spec, resolution);
  auto holes = build_hole_indicator(spec, resolution);

  ScalarField ones(g, 1.0);
  WeightedOperator op = assemble_weighted_stiffness(g, ones, holes);
  Eigen::VectorXd B = weighted_mass(op, ones);

  EigenOptions eo;
  eo.tol = opts.eig_tol;
  eo.seed = opts.seed;
  SmoothedSpectralPreconditioner prec(op);
  eo.prec = &prec;
  EigenSolution sol = smallest_eigenpairs(op.A, B, 1, eo);

  Eigen::VectorXd x = sol.vectors.col(0);
  double total = x.sum();
  if (total < 0) x = -x;
  if (x.minCoeff() <= 0) throw InvariantViolation("cell eigenfunction not positive on the fluid set");
  // exact unit L2 normalization over the cell
  x /= std::sqrt(x.dot(B.cwiseProduct(x)));
  out.phi = op.extend_to_field(x);
  out.lambda_bar = sol.values[0];
  out.rayleigh = x.dot(op.A * x) / x.dot(B.cwiseProduct(x));
  return out;
}

// ---------------------------------------------------------------------------

struct CorrectorSet {
  std::array<ScalarField, 3> chi;      // zero-extended into the holes
  std::array<ScalarField, 3> chi_hat;  // phi * chi
  std::array<double, 3> mean_abs{0, 0, 0};
  std::array<double, 3> weak_residual{0, 0, 0};
};

namespace detail {

/// Weighted operator with weight phi^2 on the torus; faces adjacent to the
/// holes carry no flux (the natural condition of the degenerate problems).
inline WeightedOperator degenerate_cell_operator(const CellEigenpair& cp) {
  ScalarField w(cp.phi.grid);
  w.v = cp.phi.v.array().square();
  return assemble_weighted_stiffness(cp.phi.grid, w, {});
}

/// Arithmetic face weight of phi^2 across the forward face of cell idx in
/// direction a, zero when either endpoint is inactive.
struct FaceFlux {
  const Grid& g;
  const Eigen::VectorXd& w;  // phi^2 per cell
  double face_weight(std::int64_t idx, const std::array<int, 3>& i, int a) const {
    std::int64_t up = neighbor_up(g, idx, i, a);
    if (up < 0) return 0.0;
    double wa = w[idx], wb = w[up];
    if (wa <= 0 || wb <= 0) return 0.0;
    return 0.5 * (wa + wb);
  }
  std::int64_t up(std::int64_t idx, const std::array<int, 3>& i, int a) const { return neighbor_up(g, idx, i, a); }
};

}  // namespace detail

inline CorrectorSet solve_correctors(const CellEigenpair& cp, const CellSolveOptions& opts = {}) {
  const Grid& g = cp.phi.grid;
  CorrectorSet out;
  // with no holes the load telescopes to zero exactly and the solves return
  // zero correctors at no cost, so no shortcut is needed
  WeightedOperator op = detail::degenerate_cell_operator(cp);
  Eigen::VectorXd w = cp.phi.v.array().square();
  detail::FaceFlux flux{g, w};
  SmoothedSpectralPreconditioner prec(op);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(op.active_count());

  const double hd1 = std::pow(g.h, g.dim - 1);
  for (int j = 0; j < g.dim; ++j) {
    // load of the corrector problem: cellwise divergence of the face flux of
    // phi^2 e_j, which sums to zero over the active set exactly
    Eigen::VectorXd b = Eigen::VectorXd::Zero(op.active_count());
    detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
      const std::int32_t ai = op.active_of_cell[idx];
      if (ai < 0) return;
      double fwd = flux.face_weight(idx, i, j);
      std::int64_t dn = detail::neighbor_down(g, idx, i, j);
      double bwd = 0;
      if (dn >= 0) {
        auto id = g.decode(dn);
        bwd = flux.face_weight(dn, id, j);
      }
      b[ai] = hd1 * (fwd - bwd);
    });

    CgOptions co;
    co.tol = opts.lin_tol;
    co.prec = &prec;
    co.mean_zero_weights = &ones;
    Eigen::VectorXd x = cg_solve(op.A, b, co);
    out.mean_abs[j] = std::abs(x.sum()) * g.cell_volume();
    out.weak_residual[j] = (op.A * x - b).norm();
    out.chi[j] = op.extend_to_field(x);
    out.chi_hat[j] = ScalarField(g);
    out.chi_hat[j].v = cp.phi.v.array() * out.chi[j].v.array();
  }
  return out;
}

// ---------------------------------------------------------------------------

struct HomogenizedTensor {
  Eigen::Matrix3d A_bar = Eigen::Matrix3d::Identity();  // canonical: the Gram form
  Eigen::Matrix3d A_def = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d A_sym = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d A_hat = Eigen::Matrix3d::Identity();
  double agreement_gap = 0;
  int dim = 3;

  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A_bar.topLeftCorner(dim, dim));
    return es.eigenvalues().minCoeff();
  }
  double distance_to_identity() const {
    return (A_bar.topLeftCorner(dim, dim) - Eigen::MatrixXd::Identity(dim, dim)).cwiseAbs().maxCoeff();
  }
};

inline HomogenizedTensor homogenized_tensor(const CellEigenpair& cp, const CorrectorSet& cs) {
  const Grid& g = cp.phi.grid;
  const int d = g.dim;
  const double vol = g.cell_volume();
  HomogenizedTensor t;
  t.dim = d;
  Eigen::Matrix3d A_def = Eigen::Matrix3d::Zero(), A_sym = Eigen::Matrix3d::Zero(), A_hat = Eigen::Matrix3d::Zero();

  Eigen::VectorXd w = cp.phi.v.array().square();
  detail::FaceFlux flux{g, w};

  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    for (int l = 0; l < d; ++l) {
      std::int64_t up = flux.up(idx, i, l);
      if (up < 0) continue;
      const double wf = flux.face_weight(idx, i, l);
      const double phi_face = 0.5 * (cp.phi.v[idx] + cp.phi.v[up]);
      for (int j = 0; j < d; ++j) {
        const double dhat = (cs.chi_hat[j].v[up] - cs.chi_hat[j].v[idx]) / g.h;
        A_hat(l, j) += 2 * vol * phi_face * dhat;
        if (wf <= 0) continue;
        const double dj = (cs.chi[j].v[up] - cs.chi[j].v[idx]) / g.h;
        A_def(l, j) += vol * wf * dj;
        for (int m = 0; m < d; ++m) {
          const double dm = (cs.chi[m].v[up] - cs.chi[m].v[idx]) / g.h;
          A_sym(m, j) += vol * wf * ((l == m ? 1.0 : 0.0) + dm) * ((l == j ? 1.0 : 0.0) + dj);
        }
      }
    }
  });
  for (int a = 0; a < d; ++a) {
    A_def(a, a) += 1.0;
    A_hat(a, a) += 1.0;
  }
  t.A_def.setIdentity();
  t.A_sym.setIdentity();
  t.A_hat.setIdentity();
  t.A_def.topLeftCorner(d, d) = A_def.topLeftCorner(d, d);
  t.A_sym.topLeftCorner(d, d) = A_sym.topLeftCorner(d, d);
  t.A_hat.topLeftCorner(d, d) = A_hat.topLeftCorner(d, d);
  t.A_bar = t.A_sym;
  double gap = 0;
  gap = std::max(gap, (t.A_def - t.A_sym).cwiseAbs().maxCoeff());
  gap = std::max(gap, (t.A_def - t.A_hat).cwiseAbs().maxCoeff());
  gap = std::max(gap, (t.A_sym - t.A_hat).cwiseAbs().maxCoeff());
  t.agreement_gap = gap;
  return t;
}

// ---------------------------------------------------------------------------

/// Periodic potentials that rewrite mean-free cell quantities as divergences.
/// The constants entering each right-hand side use the quadrature that makes
/// the discrete mean vanish exactly, so each solve is compatible to solver
/// precision.
struct FluxPotentials {
  VectorField Psi;                                   // div Psi = phi^2 - 1
  std::array<std::array<ScalarField, 3>, 3> f_pot;   // Phi_kij = d_k f_ij - d_i f_kj
  std::array<std::array<ScalarField, 3>, 3> Xi;
  std::array<std::array<ScalarField, 3>, 3> Theta;
  double psi_div_residual = 0;
  double phi_div_residual = 0;     // worst over (i,j) of ||d_k Phi_kij - b_ij||
  double theta_energy = 0;         // max_jl of || phi grad Theta^{jl} ||_{L2}
  double max_rhs_mean = 0;         // worst |mean| over compatible right-hand sides

  ScalarField phi_component(int k, int i, int j, const Grid& g) const {
    // d_k f_ij - d_i f_kj as a cell field (forward differences)
    ScalarField out(g);
    VectorField gij = gradient(f_pot[i][j]);
    VectorField gkj = gradient(f_pot[k][j]);
    out.v = gij.comp[k] - gkj.comp[i];
    return out;
  }
};

inline FluxPotentials flux_potentials(const CellEigenpair& cp, const CorrectorSet& cs, const HomogenizedTensor& t,
                                      const CellSolveOptions& opts = {}) {
  const Grid& g = cp.phi.grid;
  const int d = g.dim;
  const double vol = g.cell_volume();
  FluxPotentials out;

  Eigen::VectorXd w = cp.phi.v.array().square();
  detail::FaceFlux flux{g, w};

  // Psi = grad q with -lap q = 1 - phi^2; the mean vanishes by the unit
  // normalization of phi.
  ScalarField rhs_q(g);
  rhs_q.v = 1.0 - w.array();
  out.max_rhs_mean = std::abs(rhs_q.v.mean());
  ScalarField q = periodic_poisson(rhs_q);
  out.Psi = gradient(q);
  {
    ScalarField divPsi = divergence(out.Psi);
    ScalarField target(g);
    target.v = w.array() - 1.0;
    target.v.array() -= target.v.mean();
    out.psi_div_residual = std::sqrt(vol) * (divPsi.v - target.v).norm();
  }

  // flux corrector of b_ij = abar_ij - [face flux of phi^2 (e_j + grad chi^j)]
  // with the face-consistent constant, divergence-free and mean-free exactly.
  std::array<std::array<ScalarField, 3>, 3> bfield;
  Eigen::Matrix3d a_face = Eigen::Matrix3d::Zero();
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    for (int k = 0; k < d; ++k) {
      double wf = flux.face_weight(idx, i, k);
      if (wf <= 0) continue;
      std::int64_t up = flux.up(idx, i, k);
      for (int j = 0; j < d; ++j)
        a_face(k, j) += vol * wf * ((k == j ? 1.0 : 0.0) + (cs.chi[j].v[up] - cs.chi[j].v[idx]) / g.h);
    }
  });
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < d; ++j) {
      bfield[k][j] = ScalarField(g);
      detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
        double wf = flux.face_weight(idx, i, k);
        double fl = 0;
        if (wf > 0) {
          std::int64_t up = flux.up(idx, i, k);
          fl = wf * ((k == j ? 1.0 : 0.0) + (cs.chi[j].v[up] - cs.chi[j].v[idx]) / g.h);
        }
        bfield[k][j].v[idx] = a_face(k, j) - fl;
      });
      out.max_rhs_mean = std::max(out.max_rhs_mean, std::abs(bfield[k][j].v.mean()));
      ScalarField neg(g);
      neg.v = -bfield[k][j].v;
      out.f_pot[k][j] = periodic_poisson(neg);
    }
  // divergence residual of the antisymmetrized potential
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      ScalarField div_kij(g, 0.0);
      for (int k = 0; k < d; ++k) {
        ScalarField phik = out.phi_component(k, i, j, g);
        detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& c) {
          std::int64_t dn = detail::neighbor_down(g, idx, c, k);
          div_kij.v[idx] += (phik.v[idx] - phik.v[dn]) / g.h;
        });
      }
      double r = std::sqrt(vol) * (div_kij.v - bfield[i][j].v).norm();
      out.phi_div_residual = std::max(out.phi_div_residual, r);
    }

  // Xi potentials: -lap Xi_mn = asym_mn - [Gram face flux]
  for (int m = 0; m < d; ++m)
    for (int n = 0; n < d; ++n) {
      ScalarField rhs(g);
      detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
        double p = 0;
        for (int l = 0; l < d; ++l) {
          double wf = flux.face_weight(idx, i, l);
          if (wf <= 0) continue;
          std::int64_t up = flux.up(idx, i, l);
          double dm = (cs.chi[m].v[up] - cs.chi[m].v[idx]) / g.h;
          double dn_ = (cs.chi[n].v[up] - cs.chi[n].v[idx]) / g.h;
          p += wf * ((l == m ? 1.0 : 0.0) + dm) * ((l == n ? 1.0 : 0.0) + dn_);
        }
        rhs.v[idx] = t.A_sym(m, n) - p;
      });
      out.max_rhs_mean = std::max(out.max_rhs_mean, std::abs(rhs.v.mean()));
      out.Xi[m][n] = periodic_poisson(rhs);
    }

  // Theta potentials: degenerate solves div(phi^2 grad Theta^{jl})
  //                   = phi^2(-adef_jl + delta_jl) + face flux of phi^2 d_j chi^l
  if (!cp.spec.holes.empty()) {
    WeightedOperator op = detail::degenerate_cell_operator(cp);
    SmoothedSpectralPreconditioner prec(op);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(op.active_count());
    for (int j = 0; j < d; ++j)
      for (int l = 0; l < d; ++l) {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(op.active_count());
        detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
          const std::int32_t ai = op.active_of_cell[idx];
          if (ai < 0) return;
          double fl = 0;
          double wf = flux.face_weight(idx, i, j);
          if (wf > 0) {
            std::int64_t up = flux.up(idx, i, j);
            fl = wf * (cs.chi[l].v[up] - cs.chi[l].v[idx]) / g.h;
          }
          b[ai] = w[idx] * ((j == l ? 1.0 : 0.0) - t.A_def(j, l)) + fl;
        });
        double mean_abs = std::abs(b.sum()) * vol;
        out.max_rhs_mean = std::max(out.max_rhs_mean, mean_abs);
        if (mean_abs > 1e-9) throw MeanZeroViolated("incompatible load for the weighted potential");
        // the operator is -div(phi^2 grad .), the equation wants +div
        b = (-vol * b).eval();
        CgOptions co;
        co.tol = opts.lin_tol;
        co.prec = &prec;
        co.mean_zero_weights = &ones;
        Eigen::VectorXd x = cg_solve(op.A, b, co);
        out.Theta[j][l] = op.extend_to_field(x);
        double energy = std::sqrt(x.dot(op.A * x));
        out.theta_energy = std::max(out.theta_energy, energy);
      }
  } else {
    for (int j = 0; j < d; ++j)
      for (int l = 0; l < d; ++l) out.Theta[j][l] = ScalarField(g, 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct CellEstimateReport {
  double degeneracy_ratio_min = 0, degeneracy_ratio_max = 0;   // phi / min(1, dist/eta)
  double interior_ratio_max = 0;                               // |phi-1| * max(1, (dist/eta)^{(d-2)/2})
  double corrector_ratio_max = 0;                              // |chi| * same factor
  double near_hole_correlation = 1.0;                          // corr(phi, dist/eta) where dist < eta
  bool pass = true;
};

inline CellEstimateReport verify_cell_estimates(const CellEigenpair& cp, const CorrectorSet& cs) {
  const Grid& g = cp.phi.grid;
  const int d = g.dim;
  CellEstimateReport rep;
  rep.degeneracy_ratio_min = std::numeric_limits<double>::max();
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  std::int64_t nnear = 0;
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    if (cp.phi.v[idx] <= 0 && !cp.spec.holes.empty()) return;
    double dist = distance_to_holes(cp.spec, g.cell_center(i));
    if (dist <= 0) return;
    double scaled = dist / cp.spec.eta;
    double denom = std::min(1.0, scaled);
    // the grid cannot resolve distances below one spacing; closer cells see
    // the staircase boundary, not the true one, and would skew the ratio
    if (dist >= g.h) {
      double ratio = cp.phi.v[idx] / denom;
      rep.degeneracy_ratio_min = std::min(rep.degeneracy_ratio_min, ratio);
      rep.degeneracy_ratio_max = std::max(rep.degeneracy_ratio_max, ratio);
    }
    double grow = std::max(1.0, std::pow(scaled, 0.5 * (d - 2)));
    rep.interior_ratio_max = std::max(rep.interior_ratio_max, std::abs(cp.phi.v[idx] - 1.0) * grow);
    for (int j = 0; j < d; ++j)
      rep.corrector_ratio_max = std::max(rep.corrector_ratio_max, std::abs(cs.chi[j].v[idx]) * grow);
    if (scaled < 1.0) {
      ++nnear;
      sx += scaled;
      sy += cp.phi.v[idx];
      sxx += scaled * scaled;
      syy += cp.phi.v[idx] * cp.phi.v[idx];
      sxy += scaled * cp.phi.v[idx];
    }
  });
  if (cp.spec.holes.empty()) {
    rep.degeneracy_ratio_min = rep.degeneracy_ratio_max = 1.0;
    rep.near_hole_correlation = 1.0;
    return rep;
  }
  if (nnear > 2) {
    double n = static_cast<double>(nnear);
    double cov = sxy / n - (sx / n) * (sy / n);
    double vx = sxx / n - (sx / n) * (sx / n);
    double vy = syy / n - (sy / n) * (sy / n);
    rep.near_hole_correlation = (vx > 0 && vy > 0) ? cov / std::sqrt(vx * vy) : 0.0;
  }
  rep.pass = rep.degeneracy_ratio_max / rep.degeneracy_ratio_min <= 50.0;
  return rep;
}

// ---------------------------------------------------------------------------

struct CellData {
  CellEigenpair eigenpair;
  CorrectorSet correctors;
  HomogenizedTensor tensor;
};

inline CellData compute_cell_data(const PerforationSpec& spec, int resolution, const CellSolveOptions& opts = {}) {
  CellData cd;
  cd.eigenpair = cell_eigenpair(spec, resolution, opts);
  cd.correctors = solve_correctors(cd.eigenpair, opts);
  cd.tensor = homogenized_tensor(cd.eigenpair, cd.correctors);
  return cd;
}

inline void save_cell_data(const std::string& dir, const CellData& cd) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json j;
  j["spec"] = to_json(cd.eigenpair.spec);
  j["resolution"] = cd.eigenpair.resolution;
  j["lambda_bar"] = cd.eigenpair.lambda_bar;
  const int d = cd.tensor.dim;
  auto mat = [&](const Eigen::Matrix3d& M) {
    json rows = json::array();
    for (int r = 0; r < d; ++r) {
      json row = json::array();
      for (int c = 0; c < d; ++c) row.push_back(M(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  j["A_bar"] = mat(cd.tensor.A_bar);
  j["A_def"] = mat(cd.tensor.A_def);
  j["A_sym"] = mat(cd.tensor.A_sym);
  j["A_hat"] = mat(cd.tensor.A_hat);
  j["agreement_gap"] = cd.tensor.agreement_gap;
  std::ofstream os(dir + "/tensor.json");
  os << j.dump(2) << "\n";
  write_field_binary(dir + "/phi.bin", cd.eigenpair.phi);
  for (int a = 0; a < d; ++a) {
    if (cd.correctors.chi[a].grid.cell_count() > 0)
      write_field_binary(dir + "/chi" + std::to_string(a) + ".bin", cd.correctors.chi[a]);
  }
}

}  // namespace perhom
