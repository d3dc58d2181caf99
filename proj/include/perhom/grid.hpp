#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include "perhom/errors.hpp"

namespace perhom {

enum class Topology { periodic, box };

/// Uniform cell-centered grid in d = 2 or 3 dimensions, isotropic spacing h.
/// Cells are addressed by a row-major linear index; cell (i0,..,i_{d-1}) has
/// center ((i0+1/2)h, ..). On a periodic grid indices wrap; on a box grid the
/// sides are n[a]*h.
struct Grid {
  int dim = 3;
  std::array<int, 3> n{1, 1, 1};
  double h = 1.0;
  Topology topology = Topology::periodic;

  Grid() = default;
  Grid(int d, std::array<int, 3> n_, double h_, Topology t) : dim(d), n(n_), h(h_), topology(t) {
    for (int a = 0; a < dim; ++a)
      if (n[a] < 4) throw GridMismatch("grid needs at least 4 cells per side");
    for (int a = dim; a < 3; ++a) n[a] = 1;
  }

  std::int64_t cell_count() const {
    std::int64_t c = 1;
    for (int a = 0; a < dim; ++a) c *= n[a];
    return c;
  }
  double side(int a) const { return n[a] * h; }
  double cell_volume() const { return std::pow(h, dim); }

  std::int64_t index(const std::array<int, 3>& i) const {
    std::int64_t idx = i[0];
    for (int a = 1; a < dim; ++a) idx = idx * n[a] + i[a];
    return idx;
  }
  std::array<int, 3> decode(std::int64_t idx) const {
    std::array<int, 3> i{0, 0, 0};
    for (int a = dim - 1; a >= 0; --a) {
      i[a] = static_cast<int>(idx % n[a]);
      idx /= n[a];
    }
    return i;
  }
  std::array<double, 3> cell_center(const std::array<int, 3>& i) const {
    std::array<double, 3> x{0, 0, 0};
    for (int a = 0; a < dim; ++a) x[a] = (i[a] + 0.5) * h;
    return x;
  }
  /// Stride of axis a in the linear index.
  std::int64_t stride(int a) const {
    std::int64_t s = 1;
    for (int b = a + 1; b < dim; ++b) s *= n[b];
    return s;
  }
  bool same_shape(const Grid& o) const {
    if (dim != o.dim || topology != o.topology) return false;
    for (int a = 0; a < dim; ++a)
      if (n[a] != o.n[a]) return false;
    return std::abs(h - o.h) <= 1e-14 * h;
  }
  /// Distance from a point to the box boundary (box topology only).
  double boundary_distance(const std::array<double, 3>& x) const {
    double d = side(0);
    for (int a = 0; a < dim; ++a) d = std::min({d, x[a], side(a) - x[a]});
    return d;
  }
};

struct ScalarField {
  Grid grid;
  Eigen::VectorXd v;

  ScalarField() = default;
  explicit ScalarField(const Grid& g, double fill = 0.0) : grid(g), v(Eigen::VectorXd::Constant(g.cell_count(), fill)) {}

  double& operator[](std::int64_t i) { return v[i]; }
  double operator[](std::int64_t i) const { return v[i]; }
  void check_finite() const {
    if (!v.allFinite()) throw InvariantViolation("field contains NaN/Inf");
  }
};

struct VectorField {
  Grid grid;
  std::array<Eigen::VectorXd, 3> comp;

  VectorField() = default;
  explicit VectorField(const Grid& g) : grid(g) {
    for (int a = 0; a < g.dim; ++a) comp[a] = Eigen::VectorXd::Zero(g.cell_count());
  }
};

namespace detail {

/// Neighbor of cell idx one step along +axis. Returns -1 when the step leaves
/// a box grid; periodic grids wrap.
inline std::int64_t neighbor_up(const Grid& g, std::int64_t idx, const std::array<int, 3>& i, int axis) {
  if (i[axis] + 1 < g.n[axis]) return idx + g.stride(axis);
  if (g.topology == Topology::periodic) return idx - static_cast<std::int64_t>(g.n[axis] - 1) * g.stride(axis);
  return -1;
}
inline std::int64_t neighbor_down(const Grid& g, std::int64_t idx, const std::array<int, 3>& i, int axis) {
  if (i[axis] > 0) return idx - g.stride(axis);
  if (g.topology == Topology::periodic) return idx + static_cast<std::int64_t>(g.n[axis] - 1) * g.stride(axis);
  return -1;
}

template <typename F>
void for_each_cell(const Grid& g, F&& f) {
  const std::int64_t nc = g.cell_count();
  std::array<int, 3> i{0, 0, 0};
  for (std::int64_t idx = 0; idx < nc; ++idx) {
    f(idx, i);
    for (int a = g.dim - 1; a >= 0; --a) {
      if (++i[a] < g.n[a]) break;
      i[a] = 0;
    }
  }
}

}  // namespace detail

/// Forward-difference gradient. On box grids the missing upper neighbor is a
/// zero ghost, so the pair (gradient, divergence) stays adjoint with the
/// convention used by divergence below; exactness of the duality holds on the
/// torus.
inline VectorField gradient(const ScalarField& f) {
  const Grid& g = f.grid;
  VectorField out(g);
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    for (int a = 0; a < g.dim; ++a) {
      std::int64_t up = detail::neighbor_up(g, idx, i, a);
      double fu = (up >= 0) ? f.v[up] : 0.0;
      out.comp[a][idx] = (fu - f.v[idx]) / g.h;
    }
  });
  return out;
}

/// Backward-difference divergence, the negative adjoint of gradient().
inline ScalarField divergence(const VectorField& F) {
  const Grid& g = F.grid;
  ScalarField out(g);
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    double s = 0;
    for (int a = 0; a < g.dim; ++a) {
      std::int64_t dn = detail::neighbor_down(g, idx, i, a);
      double fd = (dn >= 0) ? F.comp[a][dn] : 0.0;
      s += (F.comp[a][idx] - fd) / g.h;
    }
    out.v[idx] = s;
  });
  return out;
}

/// Centered gradient, used where a symmetric O(h^2) derivative of a smooth
/// field is wanted (corrector terms, trial spaces). Box boundaries fall back
/// to one-sided differences.
inline VectorField centered_gradient(const ScalarField& f) {
  const Grid& g = f.grid;
  VectorField out(g);
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    for (int a = 0; a < g.dim; ++a) {
      std::int64_t up = detail::neighbor_up(g, idx, i, a);
      std::int64_t dn = detail::neighbor_down(g, idx, i, a);
      if (up >= 0 && dn >= 0)
        out.comp[a][idx] = (f.v[up] - f.v[dn]) / (2 * g.h);
      else if (up >= 0)
        out.comp[a][idx] = (f.v[up] - f.v[idx]) / g.h;
      else if (dn >= 0)
        out.comp[a][idx] = (f.v[idx] - f.v[dn]) / g.h;
      else
        out.comp[a][idx] = 0;
    }
  });
  return out;
}

/// h^d * sum_i w_i f_i g_i.
inline double weighted_inner_product(const ScalarField& f, const ScalarField& g, const ScalarField& w) {
  if (!f.grid.same_shape(g.grid) || !f.grid.same_shape(w.grid)) throw GridMismatch("inner product on mismatched grids");
  return f.grid.cell_volume() * (w.v.array() * f.v.array() * g.v.array()).sum();
}

inline double weighted_norm(const ScalarField& f, const ScalarField& w) {
  return std::sqrt(std::max(0.0, weighted_inner_product(f, f, w)));
}

inline double field_mean(const ScalarField& f) { return f.v.mean(); }

/// Cutoff that vanishes within c1*eps of the box boundary and equals one
/// beyond 2*c1*eps, with a linear ramp in between.
inline ScalarField cutoff_theta(const Grid& g, double eps, double c1) {
  if (g.topology != Topology::box) throw GridMismatch("cutoff_theta needs a box grid");
  ScalarField out(g);
  const double r0 = c1 * eps;
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    double d = g.boundary_distance(g.cell_center(i));
    out.v[idx] = std::clamp((d - r0) / r0, 0.0, 1.0);
  });
  return out;
}

/// Discrete smoothing by a compactly supported radial bump of radius c1*eps,
/// profile (1 - r^2/R^2)^4, normalized to unit discrete mass. Near box
/// boundaries the truncated kernel is renormalized so constants are preserved
/// everywhere.
inline ScalarField mollify(const ScalarField& f, double eps, double c1) {
  const Grid& g = f.grid;
  const double R = c1 * eps;
  const int m = static_cast<int>(std::floor(R / g.h));
  if (m < 1 || R < 2 * g.h) throw KernelUnresolved("mollifier radius under 2 cells");

  // tabulate kernel offsets once
  std::vector<std::array<int, 3>> offs;
  std::vector<double> wts;
  std::array<int, 3> o{0, 0, 0};
  std::array<int, 3> lo{-m, -m, -m}, hi{m, m, m};
  for (int a = g.dim; a < 3; ++a) lo[a] = hi[a] = 0;
  double total = 0;
  for (o[0] = lo[0]; o[0] <= hi[0]; ++o[0])
    for (o[1] = lo[1]; o[1] <= hi[1]; ++o[1])
      for (o[2] = lo[2]; o[2] <= hi[2]; ++o[2]) {
        double r2 = 0;
        for (int a = 0; a < g.dim; ++a) r2 += (o[a] * g.h) * (o[a] * g.h);
        if (r2 >= R * R) continue;
        double t = 1.0 - r2 / (R * R);
        double w = t * t * t * t;
        offs.push_back(o);
        wts.push_back(w);
        total += w;
      }
  for (double& w : wts) w /= total;

  ScalarField out(g);
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    double acc = 0, wsum = 0;
    for (std::size_t q = 0; q < offs.size(); ++q) {
      std::array<int, 3> j = i;
      bool inside = true;
      for (int a = 0; a < g.dim; ++a) {
        j[a] += offs[q][a];
        if (g.topology == Topology::periodic) {
          j[a] %= g.n[a];
          if (j[a] < 0) j[a] += g.n[a];
        } else if (j[a] < 0 || j[a] >= g.n[a]) {
          inside = false;
          break;
        }
      }
      if (!inside) continue;
      acc += wts[q] * f.v[g.index(j)];
      wsum += wts[q];
    }
    out.v[idx] = acc / wsum;
  });
  return out;
}

/// Replicates a periodic unit-cell field onto a macroscopic grid whose
/// spacing is commensurate (macro cell maps to exactly one cell of the unit
/// grid). No interpolation happens: values are copied.
inline ScalarField sample_periodic(const ScalarField& cell_field, const Grid& macro, double eps) {
  const Grid& yg = cell_field.grid;
  if (yg.topology != Topology::periodic) throw GridMismatch("unit-cell field must be periodic");
  if (yg.dim != macro.dim) throw GridMismatch("dimension mismatch in periodic sampling");
  const double ratio = eps / macro.h;
  const long r = std::lround(ratio);
  if (std::abs(ratio - r) > 1e-9 || r < 1) throw GridMismatch("macro spacing does not divide epsilon");
  for (int a = 0; a < yg.dim; ++a)
    if (yg.n[a] != r) throw GridMismatch("unit-cell resolution does not match cells per period");

  ScalarField out(macro);
  detail::for_each_cell(macro, [&](std::int64_t idx, const std::array<int, 3>& i) {
    std::array<int, 3> j{0, 0, 0};
    for (int a = 0; a < macro.dim; ++a) j[a] = static_cast<int>(i[a] % r);
    out.v[idx] = cell_field.v[yg.index(j)];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Field serialization: flat little-endian binary with a small header, and a
// legacy VTK structured-points writer for visualization.

inline void write_field_binary(const std::string& path, const ScalarField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  const char magic[4] = {'P', 'H', 'F', '1'};
  os.write(magic, 4);
  std::int32_t dim = f.grid.dim;
  os.write(reinterpret_cast<const char*>(&dim), 4);
  for (int a = 0; a < dim; ++a) {
    std::int32_t na = f.grid.n[a];
    os.write(reinterpret_cast<const char*>(&na), 4);
  }
  double h = f.grid.h;
  os.write(reinterpret_cast<const char*>(&h), 8);
  std::int32_t topo = f.grid.topology == Topology::periodic ? 0 : 1;
  os.write(reinterpret_cast<const char*>(&topo), 4);
  os.write(reinterpret_cast<const char*>(f.v.data()), static_cast<std::streamsize>(sizeof(double) * f.v.size()));
}

inline ScalarField read_field_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::string(magic, 4) != "PHF1") throw ConfigError("bad field file magic in " + path);
  std::int32_t dim = 0;
  is.read(reinterpret_cast<char*>(&dim), 4);
  std::array<int, 3> n{1, 1, 1};
  for (int a = 0; a < dim; ++a) {
    std::int32_t na = 0;
    is.read(reinterpret_cast<char*>(&na), 4);
    n[a] = na;
  }
  double h = 0;
  is.read(reinterpret_cast<char*>(&h), 8);
  std::int32_t topo = 0;
  is.read(reinterpret_cast<char*>(&topo), 4);
  Grid g(dim, n, h, topo == 0 ? Topology::periodic : Topology::box);
  ScalarField f(g);
  is.read(reinterpret_cast<char*>(f.v.data()), static_cast<std::streamsize>(sizeof(double) * f.v.size()));
  if (!is) throw ConfigError("truncated field file " + path);
  return f;
}

inline void write_field_vtk(const std::string& path, const ScalarField& f, const std::string& name) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  const Grid& g = f.grid;
  os << "# vtk DataFile Version 3.0\n" << name << "\nASCII\nDATASET STRUCTURED_POINTS\n";
  os << "DIMENSIONS " << g.n[0] << " " << (g.dim > 1 ? g.n[1] : 1) << " " << (g.dim > 2 ? g.n[2] : 1) << "\n";
  os << "ORIGIN 0 0 0\nSPACING " << g.h << " " << g.h << " " << g.h << "\n";
  os << "POINT_DATA " << g.cell_count() << "\nSCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
  // VTK structured points run x fastest; our linear index runs the last axis
  // fastest, so emit in VTK order.
  std::array<int, 3> i{0, 0, 0};
  const int nz = g.dim > 2 ? g.n[2] : 1, ny = g.dim > 1 ? g.n[1] : 1;
  for (i[2] = 0; i[2] < nz; ++i[2])
    for (i[1] = 0; i[1] < ny; ++i[1])
      for (i[0] = 0; i[0] < g.n[0]; ++i[0]) os << f.v[g.index(i)] << "\n";
}

}  // namespace perhom
