#pragma once

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <iostream>
#include <random>
#include <vector>

#include "perhom/operators.hpp"

namespace perhom {

struct Preconditioner {
  virtual ~Preconditioner() = default;
  virtual Eigen::VectorXd apply(const Eigen::VectorXd& r) const = 0;
};

struct JacobiPreconditioner final : Preconditioner {
  Eigen::VectorXd inv_diag;
  explicit JacobiPreconditioner(const SpMat& A) {
    inv_diag = A.diagonal();
    for (int i = 0; i < inv_diag.size(); ++i) inv_diag[i] = inv_diag[i] > 0 ? 1.0 / inv_diag[i] : 1.0;
  }
  Eigen::VectorXd apply(const Eigen::VectorXd& r) const override { return inv_diag.cwiseProduct(r); }
};

namespace detail {

struct FftwPlan {
  fftw_plan p = nullptr;
  FftwPlan() = default;
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
  ~FftwPlan() {
    if (p) fftw_destroy_plan(p);
  }
};

}  // namespace detail

/// Exact inverse of the constant-coefficient stencil on the full grid, via
/// real FFT on the torus or cell-centered sine transforms on a box with
/// mirror Dirichlet faces. Doubles as a direct periodic Poisson solver and as
/// a preconditioner for the variable-coefficient and perforated operators.
///
/// The symbol is kept in form scale (entries h^{d-2}), matching
/// assemble_weighted_stiffness.
class SpectralPoisson {
 public:
  SpectralPoisson(const Grid& g, std::array<double, 3> axis_coeff = {1, 1, 1}, double scale = 1.0)
      : grid_(g), n_total_(g.cell_count()) {
    const int d = g.dim;
    std::array<int, 3> n = g.n;
    const double s = scale * std::pow(g.h, g.dim - 2);
    real_.assign(n_total_, 0.0);
    if (g.topology == Topology::periodic) {
      std::int64_t nc = 1;
      for (int a = 0; a < d - 1; ++a) nc *= n[a];
      const int last = n[d - 1] / 2 + 1;
      nc *= last;
      cplx_.assign(nc, std::complex<double>(0, 0));
      fwd_.p = fftw_plan_dft_r2c(d, n.data(), real_.data(), reinterpret_cast<fftw_complex*>(cplx_.data()),
                                 FFTW_ESTIMATE);
      bwd_.p = fftw_plan_dft_c2r(d, n.data(), reinterpret_cast<fftw_complex*>(cplx_.data()), real_.data(),
                                 FFTW_ESTIMATE);
      symbol_.resize(nc);
      fill_symbol(n, last, d, [&](const std::array<int, 3>& k) {
        double lam = 0;
        for (int a = 0; a < d; ++a) lam += axis_coeff[a] * (2.0 - 2.0 * std::cos(2.0 * M_PI * k[a] / n[a]));
        return s * lam;
      });
      norm_ = static_cast<double>(n_total_);
    } else {
      work_.assign(n_total_, 0.0);
      std::array<fftw_r2r_kind, 3> kf{FFTW_RODFT10, FFTW_RODFT10, FFTW_RODFT10};
      std::array<fftw_r2r_kind, 3> kb{FFTW_RODFT01, FFTW_RODFT01, FFTW_RODFT01};
      fwd_.p = fftw_plan_r2r(d, n.data(), real_.data(), work_.data(), kf.data(), FFTW_ESTIMATE);
      bwd_.p = fftw_plan_r2r(d, n.data(), work_.data(), real_.data(), kb.data(), FFTW_ESTIMATE);
      symbol_.resize(n_total_);
      fill_symbol(n, n[d - 1], d, [&](const std::array<int, 3>& k) {
        double lam = 0;
        for (int a = 0; a < d; ++a) lam += axis_coeff[a] * (2.0 - 2.0 * std::cos(M_PI * (k[a] + 1) / n[a]));
        return s * lam;
      });
      norm_ = 1.0;
      for (int a = 0; a < d; ++a) norm_ *= 2.0 * n[a];
    }
    double smallest = std::numeric_limits<double>::max();
    for (double v : symbol_)
      if (v > 0) smallest = std::min(smallest, v);
    zero_mode_inverse_ = 1.0 / smallest;
  }

  /// Solves (stencil) u = rhs with the form-scaled rhs. On the torus the
  /// kernel mode is either dropped (zero_mean) or damped at the scale of the
  /// smallest positive symbol, which keeps the map SPD for preconditioning.
  Eigen::VectorXd solve_full(const Eigen::VectorXd& rhs, bool zero_mean) const {
    std::copy(rhs.data(), rhs.data() + n_total_, real_.data());
    fftw_execute(fwd_.p);
    if (grid_.topology == Topology::periodic) {
      for (std::size_t i = 0; i < cplx_.size(); ++i) {
        if (symbol_[i] <= 0)
          cplx_[i] *= zero_mean ? 0.0 : zero_mode_inverse_;
        else
          cplx_[i] /= symbol_[i];
      }
    } else {
      for (std::int64_t i = 0; i < n_total_; ++i) work_[i] /= symbol_[i];
    }
    fftw_execute(bwd_.p);
    Eigen::VectorXd out(n_total_);
    for (std::int64_t i = 0; i < n_total_; ++i) out[i] = real_[i] / norm_;
    return out;
  }

  const Grid& grid() const { return grid_; }

 private:
  template <typename F>
  void fill_symbol(const std::array<int, 3>& n, int last, int d, F&& f) {
    std::array<int, 3> k{0, 0, 0};
    std::int64_t idx = 0;
    while (true) {
      symbol_[idx++] = f(k);
      int a = d - 1;
      for (; a >= 0; --a) {
        int lim = (a == d - 1) ? last : n[a];
        if (++k[a] < lim) break;
        k[a] = 0;
      }
      if (a < 0) break;
    }
  }

  Grid grid_;
  std::int64_t n_total_;
  std::vector<double> symbol_;
  mutable std::vector<double> real_, work_;
  mutable std::vector<std::complex<double>> cplx_;
  detail::FftwPlan fwd_, bwd_;
  double norm_ = 1;
  double zero_mode_inverse_ = 0;
};

/// Embeds an active-set residual into the full grid, applies the constant
/// coefficient inverse, restricts back.
struct SpectralPreconditioner final : Preconditioner {
  const WeightedOperator* op;
  std::shared_ptr<SpectralPoisson> poisson;

  SpectralPreconditioner(const WeightedOperator& o, std::shared_ptr<SpectralPoisson> p)
      : op(&o), poisson(std::move(p)) {}
  explicit SpectralPreconditioner(const WeightedOperator& o) : op(&o), poisson(make_for(o)) {}

  static std::shared_ptr<SpectralPoisson> make_for(const WeightedOperator& o) {
    std::array<double, 3> ax{1, 1, 1};
    double scale = 1.0;
    if (o.matrix_weight) {
      for (int a = 0; a < o.grid.dim; ++a) ax[a] = (*o.matrix_weight)(a, a);
    } else if (o.active_count() > 0) {
      double s = 0;
      for (auto c : o.cell_of_active) s += o.weight.v[c];
      scale = std::max(s / o.active_count(), 1e-12);
    }
    return std::make_shared<SpectralPoisson>(o.grid, ax, scale);
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& r) const override {
    if (static_cast<std::int64_t>(op->active_count()) == op->grid.cell_count()) {
      return poisson->solve_full(r, false);
    }
    Eigen::VectorXd full = Eigen::VectorXd::Zero(op->grid.cell_count());
    for (int k = 0; k < op->active_count(); ++k) full[op->cell_of_active[k]] = r[k];
    Eigen::VectorXd sol = poisson->solve_full(full, false);
    Eigen::VectorXd out(op->active_count());
    for (int k = 0; k < op->active_count(); ++k) out[k] = sol[op->cell_of_active[k]];
    return out;
  }
};

/// V(1,1) cycle around the constant-coefficient inverse: damped Jacobi
/// absorbs the local error near holes and weight jumps that the global solve
/// cannot see. Symmetric by construction, so usable inside CG and LOBPCG.
struct SmoothedSpectralPreconditioner final : Preconditioner {
  const WeightedOperator* op;
  SpectralPreconditioner inner;
  Eigen::VectorXd inv_diag;
  double omega = 0.7;

  explicit SmoothedSpectralPreconditioner(const WeightedOperator& o) : op(&o), inner(o) {
    inv_diag = o.A.diagonal();
    for (int i = 0; i < inv_diag.size(); ++i) inv_diag[i] = inv_diag[i] > 0 ? 1.0 / inv_diag[i] : 1.0;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& r) const override {
    Eigen::VectorXd x = omega * inv_diag.cwiseProduct(r);
    Eigen::VectorXd res = r - op->A * x;
    x += inner.apply(res);
    res = r - op->A * x;
    x += omega * inv_diag.cwiseProduct(res);
    return x;
  }
};

// ---------------------------------------------------------------------------

struct CgOptions {
  double tol = 1e-10;
  int max_iter = 20000;
  const Preconditioner* prec = nullptr;
  /// Treat the system as singular with the constants spanning the kernel:
  /// iterates stay mean-free, the result is shifted to zero mean against
  /// these weights, and an inconsistent right-hand side is rejected.
  const Eigen::VectorXd* mean_zero_weights = nullptr;
};

inline Eigen::VectorXd cg_solve(const SpMat& A, const Eigen::VectorXd& b, const CgOptions& opts = {}) {
  const auto n = b.size();
  const double bnorm = b.norm();
  std::vector<double> history;
  if (bnorm == 0) return Eigen::VectorXd::Zero(n);

  auto deflate = [&](Eigen::VectorXd& v) {
    if (opts.mean_zero_weights) v.array() -= v.mean();
  };
  if (opts.mean_zero_weights && std::abs(b.sum()) > 1e-8 * bnorm * std::sqrt(static_cast<double>(n)))
    throw SolverStalled("right-hand side not orthogonal to the constants", {std::abs(b.sum()) / bnorm});

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd r = b;
  deflate(r);
  Eigen::VectorXd z = opts.prec ? opts.prec->apply(r) : r;
  deflate(z);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  for (int it = 0; it < opts.max_iter; ++it) {
    Eigen::VectorXd Ap = A * p;
    double pAp = p.dot(Ap);
    if (pAp <= 0) throw SolverStalled("indefinite direction in cg", history);
    double alpha = rz / pAp;
    x += alpha * p;
    r -= alpha * Ap;
    deflate(r);
    double rel = r.norm() / bnorm;
    history.push_back(rel);
    if (rel <= opts.tol) {
      if (opts.mean_zero_weights) {
        const Eigen::VectorXd& w = *opts.mean_zero_weights;
        x.array() -= w.dot(x) / w.sum();
      }
      return x;
    }
    z = opts.prec ? opts.prec->apply(r) : r;
    deflate(z);
    double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  throw SolverStalled("cg did not reach tolerance", history);
}

// ---------------------------------------------------------------------------

struct EigenSolution {
  Eigen::VectorXd values;     // ascending
  Eigen::MatrixXd vectors;    // columns, B-orthonormal, sign-fixed
  Eigen::VectorXd residuals;  // ||Ax - mu Bx|| / ((1 + |mu|) ||Bx||)
  bool b_orthonormal = true;
  int iterations = 0;
};

struct EigenOptions {
  double tol = 1e-8;
  int max_iter = 1500;
  std::uint64_t seed = 0;
  int block_extra = -1;  // auto
  const Preconditioner* prec = nullptr;
  bool verbose = false;
};

namespace detail {

inline void fix_signs(Eigen::MatrixXd& V) {
  for (int j = 0; j < V.cols(); ++j) {
    int imax = 0;
    double best = 0;
    for (int i = 0; i < V.rows(); ++i)
      if (std::abs(V(i, j)) > best) {
        best = std::abs(V(i, j));
        imax = i;
      }
    if (V(imax, j) < 0) V.col(j) = -V.col(j);
  }
}

/// Rank-revealing transform R with (V R)^T B (V R) = I, columns with relative
/// Gram eigenvalue below the drop tolerance removed.
inline void normalize_columns(Eigen::MatrixXd& V, const Eigen::VectorXd& B) {
  int kept = 0;
  for (int j = 0; j < V.cols(); ++j) {
    double nrm = std::sqrt(std::max(0.0, V.col(j).dot(B.asDiagonal() * V.col(j))));
    if (nrm > 1e-150) V.col(kept++) = V.col(j) / nrm;
  }
  V.conservativeResize(Eigen::NoChange, kept);
}

inline void normalize_columns_pair(Eigen::MatrixXd& V, Eigen::MatrixXd& AV, const Eigen::VectorXd& B) {
  int kept = 0;
  for (int j = 0; j < V.cols(); ++j) {
    double nrm = std::sqrt(std::max(0.0, V.col(j).dot(B.asDiagonal() * V.col(j))));
    if (nrm > 1e-150) {
      V.col(kept) = V.col(j) / nrm;
      AV.col(kept) = AV.col(j) / nrm;
      ++kept;
    }
  }
  V.conservativeResize(Eigen::NoChange, kept);
  AV.conservativeResize(Eigen::NoChange, kept);
}

inline Eigen::MatrixXd gram_ortho_transform(const Eigen::MatrixXd& V, const Eigen::VectorXd& B, double drop = 1e-14) {
  Eigen::MatrixXd G = V.transpose() * (B.asDiagonal() * V);
  G = 0.5 * (G + G.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  const double gmax = es.eigenvalues().size() ? std::max(es.eigenvalues().maxCoeff(), 0.0) : 0.0;
  int kept = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()[i] > drop * gmax && es.eigenvalues()[i] > 0) ++kept;
  Eigen::MatrixXd R(V.cols(), kept);
  int c = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()[i] > drop * gmax && es.eigenvalues()[i] > 0)
      R.col(c++) = es.eigenvectors().col(i) / std::sqrt(es.eigenvalues()[i]);
  return R;
}

}  // namespace detail

inline EigenSolution dense_eig_oracle(const SpMat& A, const Eigen::VectorXd& Bdiag) {
  if (A.rows() > 4096) throw OracleTooLarge("dense oracle limited to 4096 dofs");
  const auto n = A.rows();
  Eigen::MatrixXd Ad = Eigen::MatrixXd(A);
  Ad = 0.5 * (Ad + Ad.transpose());
  // Work on the inverse of the shifted pencil: eigenvalues of (A + B, B) are
  // the reciprocals of those of (B, A + B). This keeps the bottom of the
  // spectrum accurate even when B spans many orders of magnitude (the mass
  // floor of the intermediate problem), where whitening by B^{-1/2} would
  // lose it to roundoff.
  Eigen::MatrixXd S = Ad + Eigen::MatrixXd(Bdiag.asDiagonal());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esS(S);
  Eigen::VectorXd li = esS.eigenvalues().cwiseMax(0.0).cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd W = esS.eigenvectors() * li.asDiagonal();  // S^{-1/2}
  Eigen::MatrixXd C = W.transpose() * Bdiag.asDiagonal() * W;
  C = 0.5 * (C + C.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  EigenSolution out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (int k = 0; k < n; ++k) {
    // nu descending <-> mu ascending
    double nu = es.eigenvalues()[n - 1 - k];
    out.values[k] = 1.0 / nu - 1.0;
    Eigen::VectorXd x = W * es.eigenvectors().col(n - 1 - k);
    out.vectors.col(k) = x / std::sqrt(x.dot(Bdiag.cwiseProduct(x)));
  }
  detail::fix_signs(out.vectors);
  out.residuals = Eigen::VectorXd::Zero(out.values.size());
  for (int k = 0; k < out.values.size(); ++k) {
    Eigen::VectorXd bx = Bdiag.cwiseProduct(out.vectors.col(k));
    Eigen::VectorXd r = Ad * out.vectors.col(k) - out.values[k] * bx;
    out.residuals[k] = r.norm() / ((1.0 + std::abs(out.values[k])) * bx.norm());
  }
  return out;
}

/// Locally optimal block preconditioned CG for the K smallest eigenpairs of
/// A x = mu B x with diagonal SPD B. Deterministic for a fixed seed;
/// eigenvectors are defined up to rotations inside degenerate clusters.
inline EigenSolution smallest_eigenpairs(const SpMat& A, const Eigen::VectorXd& Bdiag, int K,
                                         const EigenOptions& opts = {}) {
  const auto n = A.rows();
  if (K < 1 || K > n) throw RankExceeded("requested more eigenpairs than dofs");

  const int extra = opts.block_extra >= 0 ? opts.block_extra : std::clamp(K / 2 + 2, 2, 10);
  const int m = static_cast<int>(std::min<std::int64_t>(K + extra, n));

  if (n <= std::max<std::int64_t>(260, 3 * m + 2)) {
    EigenSolution full = dense_eig_oracle(A, Bdiag);
    EigenSolution out;
    out.values = full.values.head(K);
    out.vectors = full.vectors.leftCols(K);
    out.residuals = full.residuals.head(K);
    return out;
  }

  std::mt19937_64 rng(opts.seed * 0x9e3779b97f4a7c15ULL + 0x2545F4914F6CDD1DULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd X(n, m);
  for (int j = 0; j < m; ++j)
    for (std::int64_t i = 0; i < n; ++i) X(i, j) = gauss(rng);

  JacobiPreconditioner jacobi(A);
  const Preconditioner* prec = opts.prec ? opts.prec : &jacobi;
  const Eigen::VectorXd& B = Bdiag;

  X *= detail::gram_ortho_transform(X, B);
  if (X.cols() < m) throw SolverStalled("rank-deficient start block", {});
  Eigen::MatrixXd AX = A * X;
  Eigen::MatrixXd P(n, 0), AP(n, 0);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd resnorm = Eigen::VectorXd::Constant(m, 1.0);
  bool restarted = false;
  double best_sum = std::numeric_limits<double>::max();
  int stagnant = 0;

  auto project_out = [&](Eigen::MatrixXd& V, Eigen::MatrixXd* AV, const Eigen::MatrixXd& Q, const Eigen::MatrixXd& AQ) {
    if (Q.cols() == 0 || V.cols() == 0) return;
    Eigen::MatrixXd C = Q.transpose() * (B.asDiagonal() * V);
    V.noalias() -= Q * C;
    if (AV && AV->cols() > 0) AV->noalias() -= AQ * C;
  };

  int iterations_used = 0;
  for (int it = 0; it < opts.max_iter; ++it) {
    iterations_used = it + 1;
    Eigen::MatrixXd G = X.transpose() * AX;
    G = 0.5 * (G + G.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz_x(G);
    theta = ritz_x.eigenvalues();
    X = X * ritz_x.eigenvectors();
    AX = AX * ritz_x.eigenvectors();

    Eigen::MatrixXd BX = B.asDiagonal() * X;
    Eigen::MatrixXd R = AX - BX * theta.asDiagonal();
    for (int k = 0; k < m; ++k)
      resnorm[k] = R.col(k).norm() / ((1.0 + std::abs(theta[k])) * BX.col(k).norm());
    if (opts.verbose && it % 10 == 0) {
      std::cerr << "lobpcg it=" << it << " theta=";
      for (int k = 0; k < m; ++k) std::cerr << theta[k] << " ";
      std::cerr << " res=";
      for (int k = 0; k < m; ++k) std::cerr << resnorm[k] << " ";
      std::cerr << "\n";
    }
    if (resnorm.head(K).maxCoeff() <= 0.5 * opts.tol) break;

    double rsum = resnorm.head(K).sum();
    if (rsum >= best_sum * 0.9999) {
      if (++stagnant > 80) {
        if (!restarted) {
          P.resize(n, 0);
          AP.resize(n, 0);
          restarted = true;
          stagnant = 0;
        } else {
          throw SolverStalled("eigensolver stagnated", {resnorm.head(K).maxCoeff()});
        }
      }
    } else {
      stagnant = 0;
      best_sum = rsum;
    }

    Eigen::MatrixXd W(n, m);
    for (int k = 0; k < m; ++k) W.col(k) = prec->apply(R.col(k));
    // equalize the column scales before any orthogonalization: the
    // preconditioned residuals of converged and struggling columns differ by
    // many orders of magnitude, and a Gram factorization would lose the
    // small directions to the dominant ones
    detail::normalize_columns(W, B);
    project_out(W, nullptr, X, AX);
    detail::normalize_columns(W, B);
    W *= detail::gram_ortho_transform(W, B, 1e-24);
    project_out(W, nullptr, X, AX);
    {
      Eigen::MatrixXd t = detail::gram_ortho_transform(W, B, 1e-20);
      W *= t;
    }
    Eigen::MatrixXd AW = A * W;

    detail::normalize_columns_pair(P, AP, B);
    project_out(P, &AP, X, AX);
    project_out(P, &AP, W, AW);
    if (P.cols() > 0) {
      Eigen::MatrixXd t = detail::gram_ortho_transform(P, B, 1e-16);
      P *= t;
      AP *= t;
    }

    const int total = static_cast<int>(m + W.cols() + P.cols());
    Eigen::MatrixXd S(n, total), AS(n, total);
    S << X, W, P;
    AS << AX, AW, AP;

    Eigen::MatrixXd Gs = S.transpose() * AS;
    Gs = 0.5 * (Gs + Gs.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz(Gs);
    Eigen::MatrixXd C = ritz.eigenvectors().leftCols(m);
    Eigen::MatrixXd Cp = C;
    Cp.topRows(m).setZero();

    Eigen::MatrixXd Xn = S * C, AXn = AS * C;
    P = S * Cp;
    AP = AS * Cp;
    X = Xn;
    AX = AXn;
  }

  {
    Eigen::MatrixXd t = detail::gram_ortho_transform(X, B);
    X *= t;
    AX *= t;
    Eigen::MatrixXd G = X.transpose() * AX;
    G = 0.5 * (G + G.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz_x(G);
    theta = ritz_x.eigenvalues();
    X = X * ritz_x.eigenvectors();
    AX = AX * ritz_x.eigenvectors();
  }
  EigenSolution out;
  out.iterations = iterations_used;
  out.values = theta.head(K);
  out.vectors = X.leftCols(K);
  out.residuals.resize(K);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd bx = Bdiag.cwiseProduct(X.col(k));
    Eigen::VectorXd r = AX.col(k) - theta[k] * bx;
    out.residuals[k] = r.norm() / ((1.0 + std::abs(theta[k])) * bx.norm());
  }
  for (int k = 0; k < K; ++k)
    if (out.residuals[k] > opts.tol * 50) throw SolverStalled("eigenpair residual above tolerance", {out.residuals[k]});
  detail::fix_signs(out.vectors);
  return out;
}

/// Solves -lap u = rhs - mean(rhs) on the torus with zero-mean u, exact in
/// the discrete symbol of the backward-forward difference Laplacian.
inline ScalarField periodic_poisson(const ScalarField& rhs) {
  if (rhs.grid.topology != Topology::periodic) throw GridMismatch("periodic_poisson needs a torus grid");
  SpectralPoisson sp(rhs.grid);
  Eigen::VectorXd u = sp.solve_full(rhs.v * rhs.grid.cell_volume(), true);
  ScalarField out(rhs.grid);
  out.v = u;
  return out;
}

}  // namespace perhom
