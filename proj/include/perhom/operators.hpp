#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <optional>
#include <vector>

#include "perhom/grid.hpp"

namespace perhom {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Discrete form of -div(w grad u) on the active cells of a grid.
///
/// The matrix is the bilinear form scaled by h^d (entries carry h^{d-2}), so
/// that together with the diagonal mass w*h^d the generalized eigenvalues
/// approximate the continuum Rayleigh quotients directly.
///
/// Face handling:
///   - both cells active: face coefficient = arithmetic mean of the two cell
///     weights (or the constant matrix entry),
///   - active vs Dirichlet-masked cell: the row of the masked cell is
///     eliminated with ghost value 0; the face coefficient stays on the
///     diagonal of the active cell,
///   - active vs zero-weight unmasked cell: the face carries no flux (natural
///     condition of the degenerate problems),
///   - box boundary face with dirichlet_outer: mirror ghost, contributing
///     2*w_i to the diagonal, which keeps the boundary located on the face
///     itself to second order.
struct WeightedOperator {
  Grid grid;
  SpMat A;
  std::vector<std::int32_t> active_of_cell;  // -1 when the cell carries no dof
  std::vector<std::int64_t> cell_of_active;
  ScalarField weight;
  bool dirichlet_outer = false;
  std::optional<Eigen::Matrix3d> matrix_weight;

  int active_count() const { return static_cast<int>(cell_of_active.size()); }

  Eigen::VectorXd restrict_to_active(const ScalarField& f) const {
    Eigen::VectorXd x(active_count());
    for (int k = 0; k < active_count(); ++k) x[k] = f.v[cell_of_active[k]];
    return x;
  }
  ScalarField extend_to_field(const Eigen::VectorXd& x) const {
    ScalarField f(grid, 0.0);
    for (int k = 0; k < active_count(); ++k) f.v[cell_of_active[k]] = x[k];
    return f;
  }
};

struct AssemblyOptions {
  bool dirichlet_outer = false;
  const Eigen::Matrix3d* matrix_weight = nullptr;  // constant SPD coefficient
};

inline WeightedOperator assemble_weighted_stiffness(const Grid& g, const ScalarField& weight,
                                                    const std::vector<std::uint8_t>& dirichlet,
                                                    const AssemblyOptions& opts = {}) {
  const std::int64_t nc = g.cell_count();
  if (!weight.grid.same_shape(g)) throw GridMismatch("weight grid mismatch");
  if (!dirichlet.empty() && static_cast<std::int64_t>(dirichlet.size()) != nc)
    throw GridMismatch("dirichlet mask size mismatch");
  if ((weight.v.array() < 0).any()) throw InvalidWeight("negative weight entries");

  WeightedOperator op;
  op.grid = g;
  op.weight = weight;
  op.dirichlet_outer = opts.dirichlet_outer;
  if (opts.matrix_weight) op.matrix_weight = *opts.matrix_weight;

  auto is_dirichlet = [&](std::int64_t c) { return !dirichlet.empty() && dirichlet[c]; };

  op.active_of_cell.assign(nc, -1);
  for (std::int64_t c = 0; c < nc; ++c) {
    if (!is_dirichlet(c) && weight.v[c] > 0) {
      op.active_of_cell[c] = static_cast<std::int32_t>(op.cell_of_active.size());
      op.cell_of_active.push_back(c);
    }
  }
  const int na = op.active_count();
  const double s = std::pow(g.h, g.dim - 2);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(na) * (2 * g.dim + 1));
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(na);

  const Eigen::Matrix3d* M = opts.matrix_weight;

  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    const std::int32_t ai = op.active_of_cell[idx];
    if (ai < 0) return;
    const double wi = weight.v[idx];
    for (int a = 0; a < g.dim; ++a) {
      const double axis_coeff = M ? (*M)(a, a) : 0.0;
      // upper face in direction a
      std::int64_t up = detail::neighbor_up(g, idx, i, a);
      if (up < 0) {
        if (opts.dirichlet_outer) diag[ai] += 2 * s * (M ? axis_coeff : wi);
      } else if (op.active_of_cell[up] >= 0) {
        const double wf = M ? axis_coeff : 0.5 * (wi + weight.v[up]);
        const std::int32_t aj = op.active_of_cell[up];
        diag[ai] += s * wf;
        diag[aj] += s * wf;
        trip.emplace_back(ai, aj, -s * wf);
        trip.emplace_back(aj, ai, -s * wf);
      } else if (is_dirichlet(up)) {
        const double wf = M ? axis_coeff : 0.5 * (wi + weight.v[up]);
        diag[ai] += s * wf;
      }
      // lower boundary face (interior lower faces were handled as the upper
      // face of the cell below)
      std::int64_t dn = detail::neighbor_down(g, idx, i, a);
      if (dn < 0) {
        if (opts.dirichlet_outer) diag[ai] += 2 * s * (M ? axis_coeff : wi);
      } else if (op.active_of_cell[dn] < 0 && is_dirichlet(dn)) {
        const double wf = M ? axis_coeff : 0.5 * (wi + weight.v[dn]);
        diag[ai] += s * wf;
      }
    }
    // cross couplings of a constant matrix coefficient
    if (M) {
      for (int a = 0; a < g.dim; ++a)
        for (int b = a + 1; b < g.dim; ++b) {
          const double c = (*M)(a, b);
          if (c == 0.0) continue;
          // corners (+a,+b) and (+a,-b); the mirrored pairs come from the
          // corresponding cells, keeping the matrix symmetric
          std::int64_t ua = detail::neighbor_up(g, idx, i, a);
          if (ua < 0) continue;
          auto ia = g.decode(ua);
          std::int64_t upp = detail::neighbor_up(g, ua, ia, b);
          std::int64_t upm = detail::neighbor_down(g, ua, ia, b);
          if (upp >= 0 && op.active_of_cell[upp] >= 0) {
            trip.emplace_back(ai, op.active_of_cell[upp], -0.5 * s * c);
            trip.emplace_back(op.active_of_cell[upp], ai, -0.5 * s * c);
          }
          if (upm >= 0 && op.active_of_cell[upm] >= 0) {
            trip.emplace_back(ai, op.active_of_cell[upm], 0.5 * s * c);
            trip.emplace_back(op.active_of_cell[upm], ai, 0.5 * s * c);
          }
        }
    }
  });

  for (int k = 0; k < na; ++k) trip.emplace_back(k, k, diag[k]);
  op.A.resize(na, na);
  op.A.setFromTriplets(trip.begin(), trip.end());
  return op;
}

/// Diagonal mass over the active set: w_cell * h^d, optionally floored to keep
/// a pencil definite when the weight vanishes on active cells.
inline Eigen::VectorXd weighted_mass(const WeightedOperator& op, const ScalarField& w, double floor_value = 0.0) {
  if (!w.grid.same_shape(op.grid)) throw GridMismatch("mass weight grid mismatch");
  if ((w.v.array() < 0).any()) throw InvalidWeight("negative mass weight");
  const double vol = op.grid.cell_volume();
  Eigen::VectorXd b(op.active_count());
  for (int k = 0; k < op.active_count(); ++k) {
    double wc = w.v[op.cell_of_active[k]];
    if (wc <= 0) {
      if (floor_value <= 0) throw DegenerateMass("zero mass weight on active cell");
      wc = floor_value;
    }
    b[k] = wc * vol;
  }
  return b;
}

inline double quadratic_form(const WeightedOperator& op, const Eigen::VectorXd& x) { return x.dot(op.A * x); }

}  // namespace perhom
