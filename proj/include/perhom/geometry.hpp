#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "perhom/grid.hpp"

namespace perhom {

using nlohmann::json;

enum class HoleShape { ball, rounded_box };

/// One hole primitive in the unit cell. Sizes are in cell units before the
/// eta scaling; the realized hole is the shape scaled by eta about its
/// center.
struct Hole {
  HoleShape shape = HoleShape::ball;
  std::array<double, 3> center{0.5, 0.5, 0.5};
  double radius = 0.25;                        // ball
  std::array<double, 3> half_widths{0, 0, 0};  // rounded box
  double corner_radius = 0.0;                  // rounded box

  double pre_scale_diameter(int dim) const {
    if (shape == HoleShape::ball) return 2 * radius;
    double d2 = 0;
    for (int a = 0; a < dim; ++a) d2 += 4 * half_widths[a] * half_widths[a];
    return std::sqrt(d2) + 2 * corner_radius;
  }

  /// Signed distance from a point (cell coordinates) to the eta-scaled hole
  /// placed at its center; negative inside.
  double signed_distance(const std::array<double, 3>& x, double eta, int dim) const {
    if (shape == HoleShape::ball) {
      double r2 = 0;
      for (int a = 0; a < dim; ++a) r2 += (x[a] - center[a]) * (x[a] - center[a]);
      return std::sqrt(r2) - eta * radius;
    }
    double out2 = 0, inner = -std::numeric_limits<double>::max();
    for (int a = 0; a < dim; ++a) {
      double q = std::abs(x[a] - center[a]) - eta * half_widths[a];
      if (q > 0) out2 += q * q;
      inner = std::max(inner, q);
    }
    double d = (out2 > 0) ? std::sqrt(out2) : inner;
    return d - eta * corner_radius;
  }
};

struct PerforationSpec {
  int dim = 3;
  std::vector<Hole> holes;
  double eta = 1.0;
  double c0 = 0.2;

  void validate() const {
    if (dim != 2 && dim != 3) throw GeometryUnresolved("dimension must be 2 or 3");
    if (!(eta > 0 && eta <= 1)) throw GeometryUnresolved("eta must lie in (0,1]");
    if (!(c0 > 0)) throw GeometryUnresolved("clearance must be positive");
    for (const auto& hsp : holes) {
      double diam = hsp.pre_scale_diameter(dim);
      if (diam < 0.05 || diam > 1.0) throw GeometryUnresolved("hole diameter before scaling must lie in [0.05, 1]");
      // scaled hole must sit inside the cell with clearance c0 to the faces
      for (int a = 0; a < dim; ++a) {
        double reach = eta * 0.5 * diam;
        if (hsp.center[a] - reach <= c0 || hsp.center[a] + reach >= 1.0 - c0)
          throw GeometryUnresolved("hole too close to the cell boundary");
      }
    }
    // pairwise clearance, measured by center distance minus reaches
    for (std::size_t i = 0; i < holes.size(); ++i)
      for (std::size_t j = i + 1; j < holes.size(); ++j) {
        double dc = 0;
        for (int a = 0; a < dim; ++a) dc += (holes[i].center[a] - holes[j].center[a]) * (holes[i].center[a] - holes[j].center[a]);
        dc = std::sqrt(dc);
        double gap = dc - eta * 0.5 * holes[i].pre_scale_diameter(dim) - eta * 0.5 * holes[j].pre_scale_diameter(dim);
        if (gap <= c0) throw GeometryUnresolved("holes closer than the clearance");
      }
  }
};

struct BoxDomain {
  int dim = 3;
  std::array<double, 3> L{1, 1, 1};
  double epsilon = 0.5;

  void validate() const {
    if (dim != 2 && dim != 3) throw GeometryUnresolved("dimension must be 2 or 3");
    for (int a = 0; a < dim; ++a)
      if (!(L[a] > 0)) throw GeometryUnresolved("box sides must be positive");
    if (!(epsilon > 0 && epsilon <= 1)) throw GeometryUnresolved("epsilon must lie in (0,1]");
    double q = 1.0 / epsilon;
    if (std::abs(q - std::lround(q)) > 1e-9 || std::lround(q) < 2)
      throw GeometryUnresolved("epsilon must equal 1/q for an integer q >= 2");
    for (int a = 0; a < dim; ++a)
      if (epsilon > L[a] + 1e-12) throw GeometryUnresolved("epsilon exceeds a box side");
  }
};

/// Unsigned periodic distance to the hole set, in cell coordinates; zero
/// inside holes, capped at 1 when there are no holes in reach.
inline double distance_to_holes(const PerforationSpec& spec, const std::array<double, 3>& point) {
  double best = 1.0;
  std::array<int, 3> t{0, 0, 0};
  const int lo = -1, hi = 1;
  for (const auto& hole : spec.holes) {
    for (t[0] = lo; t[0] <= hi; ++t[0])
      for (t[1] = lo; t[1] <= (spec.dim > 1 ? hi : lo); ++t[1])
        for (t[2] = (spec.dim > 2 ? lo : 0); t[2] <= (spec.dim > 2 ? hi : 0); ++t[2]) {
          std::array<double, 3> x = point;
          for (int a = 0; a < spec.dim; ++a) x[a] += t[a];
          best = std::min(best, std::max(0.0, hole.signed_distance(x, spec.eta, spec.dim)));
        }
  }
  return best;
}

/// Marks the cells of a resolution^d grid on the unit cell whose centers lie
/// in the closed hole set.
inline std::vector<std::uint8_t> build_hole_indicator(const PerforationSpec& spec, int resolution) {
  if (resolution < 8) throw GeometryUnresolved("cell resolution below 8");
  spec.validate();
  Grid g(spec.dim, {resolution, resolution, resolution}, 1.0 / resolution, Topology::periodic);
  std::vector<std::uint8_t> mark(g.cell_count(), 0);
  if (spec.holes.empty()) return mark;
  std::int64_t count = 0;
  detail::for_each_cell(g, [&](std::int64_t idx, const std::array<int, 3>& i) {
    auto x = g.cell_center(i);
    for (const auto& hole : spec.holes)
      if (hole.signed_distance(x, spec.eta, spec.dim) <= 0) {
        mark[idx] = 1;
        ++count;
        break;
      }
  });
  if (count == 0) throw GeometryUnresolved("resolution too coarse to mark any hole cell");
  return mark;
}

/// The box domain minus the periodically tiled hole set, on the grid with
/// spacing epsilon / resolution_per_cell, with the boundary decomposition.
struct PerforatedDomain {
  BoxDomain box;
  PerforationSpec spec;
  int resolution_per_cell = 0;
  Grid grid;                         // box topology
  Grid cell_grid;                    // periodic unit-cell grid at matching resolution
  std::vector<std::uint8_t> hole;    // tiled indicator
  std::vector<std::uint8_t> fluid;   // complement
  std::vector<std::uint8_t> gamma;   // fluid cells on the outer boundary layer
  std::vector<std::uint8_t> sigma;   // fluid cells adjacent to holes, minus gamma

  std::int64_t fluid_count() const {
    std::int64_t c = 0;
    for (auto f : fluid) c += f;
    return c;
  }
};

inline PerforatedDomain perforate_domain(const BoxDomain& box, const PerforationSpec& spec, int resolution_per_cell) {
  box.validate();
  spec.validate();
  if (box.dim != spec.dim) throw GeometryUnresolved("box and perforation dimension mismatch");
  if (resolution_per_cell < 2) throw GridMismatch("need at least 2 grid cells per period");
  const double h = box.epsilon / resolution_per_cell;
  std::array<int, 3> n{1, 1, 1};
  for (int a = 0; a < box.dim; ++a) {
    double cells = box.L[a] / h;
    long na = std::lround(cells);
    if (std::abs(cells - na) > 1e-9 * std::max(1.0, cells)) throw GridMismatch("box side not commensurate with the grid");
    n[a] = static_cast<int>(na);
  }

  PerforatedDomain pd;
  pd.box = box;
  pd.spec = spec;
  pd.resolution_per_cell = resolution_per_cell;
  pd.grid = Grid(box.dim, n, h, Topology::box);
  pd.cell_grid = Grid(spec.dim, {resolution_per_cell, resolution_per_cell, resolution_per_cell}, 1.0 / resolution_per_cell,
                      Topology::periodic);

  std::vector<std::uint8_t> indicator;
  if (!spec.holes.empty()) indicator = build_hole_indicator(spec, resolution_per_cell);

  const std::int64_t nc = pd.grid.cell_count();
  pd.hole.assign(nc, 0);
  pd.fluid.assign(nc, 1);
  if (!indicator.empty()) {
    detail::for_each_cell(pd.grid, [&](std::int64_t idx, const std::array<int, 3>& i) {
      std::array<int, 3> j{0, 0, 0};
      for (int a = 0; a < pd.grid.dim; ++a) j[a] = static_cast<int>(i[a] % resolution_per_cell);
      if (indicator[pd.cell_grid.index(j)]) {
        pd.hole[idx] = 1;
        pd.fluid[idx] = 0;
      }
    });
  }

  pd.gamma.assign(nc, 0);
  pd.sigma.assign(nc, 0);
  detail::for_each_cell(pd.grid, [&](std::int64_t idx, const std::array<int, 3>& i) {
    if (!pd.fluid[idx]) return;
    bool on_boundary = false, near_hole = false;
    for (int a = 0; a < pd.grid.dim; ++a) {
      if (i[a] == 0 || i[a] == pd.grid.n[a] - 1) on_boundary = true;
      std::int64_t up = detail::neighbor_up(pd.grid, idx, i, a);
      std::int64_t dn = detail::neighbor_down(pd.grid, idx, i, a);
      if (up >= 0 && pd.hole[up]) near_hole = true;
      if (dn >= 0 && pd.hole[dn]) near_hole = true;
    }
    if (on_boundary)
      pd.gamma[idx] = 1;
    else if (near_hole)
      pd.sigma[idx] = 1;
  });
  return pd;
}

// ---------------------------------------------------------------------------
// Geometric assumption check: each hole image is either clear of the outer
// boundary or cut by it with both sides forming connected sets (a sampled
// proxy for the Lipschitz requirement on cut holes).

struct HoleImageRecord {
  std::array<int, 3> lattice{0, 0, 0};
  int hole_index = 0;
  enum class Kind { interior, cut, violation } kind = Kind::interior;
  bool connectivity_ok = true;
};

struct AssumptionReport {
  bool ok = true;
  int interior_count = 0;
  int cut_count = 0;
  std::vector<HoleImageRecord> violations;
  std::vector<HoleImageRecord> cut_holes;
};

namespace detail {

/// Connectedness of the marked subset of a small local index box under face
/// adjacency.
inline bool connected_subset(const std::vector<std::uint8_t>& mark, const std::array<int, 3>& n, int dim) {
  std::int64_t total = 1;
  for (int a = 0; a < dim; ++a) total *= n[a];
  std::int64_t first = -1, count = 0;
  for (std::int64_t i = 0; i < total; ++i)
    if (mark[i]) {
      if (first < 0) first = i;
      ++count;
    }
  if (count <= 1) return true;
  std::vector<std::uint8_t> seen(total, 0);
  std::vector<std::int64_t> stack{first};
  seen[first] = 1;
  std::int64_t reached = 1;
  std::array<std::int64_t, 3> stride{1, 1, 1};
  for (int a = dim - 2; a >= 0; --a) stride[a] = stride[a + 1] * n[a + 1];
  while (!stack.empty()) {
    std::int64_t c = stack.back();
    stack.pop_back();
    std::array<int, 3> i{0, 0, 0};
    std::int64_t rem = c;
    for (int a = 0; a < dim; ++a) {
      i[a] = static_cast<int>(rem / stride[a]);
      rem %= stride[a];
    }
    for (int a = 0; a < dim; ++a)
      for (int s = -1; s <= 1; s += 2) {
        if (i[a] + s < 0 || i[a] + s >= n[a]) continue;
        std::int64_t nb = c + s * stride[a];
        if (mark[nb] && !seen[nb]) {
          seen[nb] = 1;
          ++reached;
          stack.push_back(nb);
        }
      }
  }
  return reached == count;
}

}  // namespace detail

inline AssumptionReport check_assumption_A(const PerforatedDomain& pd) {
  AssumptionReport rep;
  const double eps = pd.box.epsilon;
  const double margin = pd.spec.c0 * eps * pd.spec.eta;
  const int dim = pd.grid.dim;
  const int probe = 16;  // sampling resolution per hole bounding box

  std::array<int, 3> zmax{1, 1, 1};
  for (int a = 0; a < dim; ++a) zmax[a] = static_cast<int>(std::lround(pd.box.L[a] / eps));

  for (std::size_t hi = 0; hi < pd.spec.holes.size(); ++hi) {
    const Hole& hole = pd.spec.holes[hi];
    const double reach = pd.spec.eta * 0.5 * hole.pre_scale_diameter(dim);
    std::array<int, 3> z{0, 0, 0};
    auto loop = [&](auto&& self, int axis) -> void {
      if (axis == dim) {
        HoleImageRecord rec;
        rec.lattice = z;
        rec.hole_index = static_cast<int>(hi);
        // macroscopic center and reach of this image
        std::array<double, 3> c{0, 0, 0};
        for (int a = 0; a < dim; ++a) c[a] = eps * (z[a] + hole.center[a]);
        double r_mac = eps * reach;
        double bdist = pd.grid.boundary_distance(c);
        bool any_inside = bdist > -r_mac;  // bounding sphere reaches the box
        if (!any_inside) return;           // image entirely outside, irrelevant
        double surface_clearance = bdist - r_mac;
        if (surface_clearance > margin) {
          rec.kind = HoleImageRecord::Kind::interior;
          ++rep.interior_count;
          return;
        }
        // sample the bounding box of the image to classify cut vs grazing
        std::array<int, 3> pn{probe, probe, probe};
        std::int64_t total = 1;
        for (int a = 0; a < dim; ++a) total *= pn[a];
        std::vector<std::uint8_t> in_hole_in(total, 0), in_hole_out(total, 0), shell_in(total, 0);
        std::int64_t cnt_in = 0, cnt_out = 0;
        for (std::int64_t s = 0; s < total; ++s) {
          std::int64_t rem = s;
          std::array<double, 3> x{0, 0, 0};
          std::array<int, 3> ii{0, 0, 0};
          for (int a = dim - 1; a >= 0; --a) {
            ii[a] = static_cast<int>(rem % pn[a]);
            rem /= pn[a];
          }
          bool inside_box = true;
          for (int a = 0; a < dim; ++a) {
            x[a] = c[a] + (2.0 * (ii[a] + 0.5) / probe - 1.0) * 1.6 * r_mac;
            if (x[a] < 0 || x[a] > pd.grid.side(a)) inside_box = false;
          }
          std::array<double, 3> xc;
          for (int a = 0; a < dim; ++a) xc[a] = (x[a] - eps * z[a]) / eps;
          double sd = hole.signed_distance(xc, pd.spec.eta, dim) * eps;
          if (sd <= 0) {
            if (inside_box) {
              in_hole_in[s] = 1;
              ++cnt_in;
            } else {
              in_hole_out[s] = 1;
              ++cnt_out;
            }
          } else if (sd <= 0.6 * r_mac && inside_box) {
            shell_in[s] = 1;
          }
        }
        if (cnt_out == 0) {
          // hole fully inside but too close to the boundary
          rec.kind = HoleImageRecord::Kind::violation;
          rep.violations.push_back(rec);
          rep.ok = false;
          return;
        }
        if (cnt_in == 0) return;  // image essentially outside
        rec.kind = HoleImageRecord::Kind::cut;
        rec.connectivity_ok = detail::connected_subset(in_hole_in, pn, dim) && detail::connected_subset(shell_in, pn, dim);
        ++rep.cut_count;
        rep.cut_holes.push_back(rec);
        if (!rec.connectivity_ok) {
          rep.violations.push_back(rec);
          rep.ok = false;
        }
      } else {
        for (z[axis] = -1; z[axis] <= zmax[axis]; ++z[axis]) self(self, axis + 1);
      }
    };
    loop(loop, 0);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// JSON round trip for the geometric inputs.

inline json to_json(const Hole& h) {
  json j;
  j["shape"] = h.shape == HoleShape::ball ? "ball" : "rounded_box";
  j["center"] = h.center;
  if (h.shape == HoleShape::ball) {
    j["radius"] = h.radius;
  } else {
    j["half_widths"] = h.half_widths;
    j["corner_radius"] = h.corner_radius;
  }
  return j;
}

inline Hole hole_from_json(const json& j) {
  Hole h;
  std::string s = j.at("shape").get<std::string>();
  if (s == "ball")
    h.shape = HoleShape::ball;
  else if (s == "rounded_box")
    h.shape = HoleShape::rounded_box;
  else
    throw ConfigError("unknown hole shape " + s);
  auto c = j.at("center").get<std::vector<double>>();
  for (std::size_t a = 0; a < c.size() && a < 3; ++a) h.center[a] = c[a];
  if (h.shape == HoleShape::ball) {
    h.radius = j.at("radius").get<double>();
  } else {
    auto w = j.at("half_widths").get<std::vector<double>>();
    for (std::size_t a = 0; a < w.size() && a < 3; ++a) h.half_widths[a] = w[a];
    h.corner_radius = j.value("corner_radius", 0.0);
  }
  return h;
}

inline json to_json(const PerforationSpec& s) {
  json j;
  j["d"] = s.dim;
  j["eta"] = s.eta;
  j["c0"] = s.c0;
  j["holes"] = json::array();
  for (const auto& h : s.holes) j["holes"].push_back(to_json(h));
  return j;
}

inline PerforationSpec perforation_from_json(const json& j) {
  PerforationSpec s;
  s.dim = j.at("d").get<int>();
  s.eta = j.at("eta").get<double>();
  s.c0 = j.value("c0", 0.2);
  for (const auto& hj : j.value("holes", json::array())) s.holes.push_back(hole_from_json(hj));
  return s;
}

inline json to_json(const BoxDomain& b) {
  json j;
  j["d"] = b.dim;
  j["L"] = std::vector<double>(b.L.begin(), b.L.begin() + b.dim);
  j["epsilon"] = b.epsilon;
  return j;
}

inline BoxDomain box_from_json(const json& j) {
  BoxDomain b;
  b.dim = j.at("d").get<int>();
  auto L = j.at("L").get<std::vector<double>>();
  for (std::size_t a = 0; a < L.size() && a < 3; ++a) b.L[a] = L[a];
  b.epsilon = j.at("epsilon").get<double>();
  return b;
}

}  // namespace perhom
