#pragma once
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "homog/errors.hpp"
#include "homog/field.hpp"
#include "homog/linalg.hpp"
#include "homog/modes.hpp"
#include "homog/symbol.hpp"
#include "homog/types.hpp"

namespace homog {

enum class FiberVariant { hat, sandwiched, effective };

inline const char* to_string(FiberVariant v) {
  switch (v) {
    case FiberVariant::hat: return "hat";
    case FiberVariant::sandwiched: return "sandwiched";
    case FiberVariant::effective: return "effective";
  }
  return "?";
}

// One periodic coefficient problem: symbol b, weight g, optional border f.
struct CellProblem {
  Lattice lattice;
  Symbol sym;
  PeriodicField g;
  PeriodicField f;  // n x n; empty coeffs means f = 1
  ModeSet modes;

  bool has_f() const { return !f.coeffs.empty(); }
  int n() const { return sym.n; }
  int m() const { return sym.m; }
  int K() const { return modes.count(); }
};

inline CellProblem make_cell(const Lattice& lat, const Symbol& sym,
                             const PeriodicField& g, const PeriodicField& f,
                             int cutoff) {
  if (!g.is_hermitian())
    throw HomogError("coefficient g must be a Hermitian-valued field");
  CellProblem c;
  c.lattice = lat;
  c.sym = sym;
  c.g = g;
  c.f = f;
  c.modes = make_modes(lat, cutoff);
  return c;
}

// ---------------------------------------------------------------------------
// fiber assembly

// Dense A(k) for the hat family B(k)* G B(k); the sparse coefficient support
// is walked directly so no mK x mK convolution matrix is formed.
inline Mat assemble_hat_fiber(const CellProblem& c, const RVec& k) {
  const int n = c.n(), K = c.K();
  Mat A = Mat::Zero(n * K, n * K);
  std::vector<Mat> bk(K);
  for (int i = 0; i < K; ++i) bk[i] = c.sym.at(RVec(c.modes.vec[i] + k));
  for (int j = 0; j < K; ++j) {
    for (const auto& [dg, Mg] : c.g.coeffs) {
      IVec ti(c.lattice.dim);
      for (int a = 0; a < c.lattice.dim; ++a) ti[a] = c.modes.idx[j][a] + dg[a];
      int i = c.modes.find(ti);
      if (i < 0) continue;
      A.block(i * n, j * n, n, n) += bk[i].adjoint() * Mg * bk[j];
    }
  }
  return herm(A);
}

// n-block convolution matrix of an n x n field (for borders f, 1/f).
inline Mat conv_matrix(const PeriodicField& f, const ModeSet& ms) {
  const int n = f.rows, K = ms.count();
  Mat F = Mat::Zero(n * K, n * K);
  for (int j = 0; j < K; ++j)
    for (const auto& [d, Md] : f.coeffs) {
      IVec ti(ms.idx[j].size());
      for (size_t a = 0; a < ti.size(); ++a) ti[a] = ms.idx[j][a] + d[a];
      int i = ms.find(ti);
      if (i >= 0) F.block(i * n, j * n, n, n) = Md;
    }
  return F;
}

// matrix-free application of the hat fiber (used by the corrector solver)
struct HatApply {
  const CellProblem* c;
  std::vector<Mat> bk;       // b(b_i + k)
  bool drop_zero_mode = true;

  explicit HatApply(const CellProblem& cp, const RVec& k) : c(&cp) {
    bk.resize(cp.K());
    for (int i = 0; i < cp.K(); ++i) bk[i] = cp.sym.at(RVec(cp.modes.vec[i] + k));
  }
  Vec operator()(const Vec& x) const {
    const int n = c->n(), m = c->m(), K = c->K();
    Vec mid = Vec::Zero(static_cast<Eigen::Index>(m) * K);
    for (int j = 0; j < K; ++j) {
      if (drop_zero_mode && j == c->modes.zero) continue;
      Vec bx = bk[j] * x.segment(static_cast<Eigen::Index>(j) * n, n);
      for (const auto& [dg, Mg] : c->g.coeffs) {
        IVec ti(c->lattice.dim);
        for (int a = 0; a < c->lattice.dim; ++a) ti[a] = c->modes.idx[j][a] + dg[a];
        int i = c->modes.find(ti);
        if (i < 0) continue;
        mid.segment(static_cast<Eigen::Index>(i) * m, m) += Mg * bx;
      }
    }
    Vec y = Vec::Zero(x.size());
    for (int i = 0; i < K; ++i) {
      if (drop_zero_mode && i == c->modes.zero) continue;
      y.segment(static_cast<Eigen::Index>(i) * n, n) =
          bk[i].adjoint() * mid.segment(static_cast<Eigen::Index>(i) * m, m);
    }
    return y;
  }
};

namespace detail {

// preconditioned CG on the zero-mode-free subspace
inline Vec cell_pcg(const HatApply& op, const Vec& rhs, const Vec& diag_inv,
                    Real tol = 1e-13, int max_it = 4000) {
  Vec x = Vec::Zero(rhs.size());
  Vec r = rhs;
  Vec z = diag_inv.cwiseProduct(r);
  Vec p = z;
  Cplx rz = r.dot(z);
  Real rhs_norm = rhs.norm();
  if (rhs_norm < 1e-300) return x;
  for (int it = 0; it < max_it; ++it) {
    Vec Ap = op(p);
    Cplx pAp = p.dot(Ap);
    Cplx alpha = rz / pAp;
    x += alpha * p;
    r -= alpha * Ap;
    if (r.norm() <= tol * rhs_norm) return x;
    z = diag_inv.cwiseProduct(r);
    Cplx rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  throw SolveFailure("cell corrector solve did not converge");
}

}  // namespace detail

// Everything solved on the cell at k = 0: correctors, averaged coefficients
// and the weighted (bordered) companions.
struct CorrectorSet {
  Mat Lambda;                  // (n K) x m, zero mean
  std::vector<Mat> Lambda2;    // per direction, (n K) x m
  PeriodicField g_tilde;
  Mat g0, g_bar, g_lower;
  Real vr_upper_min = 0, vr_lower_min = 0;  // min eig of gbar - g0, g0 - glower
  Mat mean_LL;                 // mean(Lambda* Lambda), m x m

  // border data (f != 1)
  Mat Q_bar, f0, G_f;          // mean (f f*)^{-1}, (Q_bar)^{-1/2}, mean(f f*)
  Mat Lambda_Q;                // with the Q-mean-zero constant in the zero mode
  std::vector<Mat> Lambda2_Q;
  Mat mean_LQL;                // mean(Lambda_Q* Q Lambda_Q), m x m
  PeriodicField Qf;            // truncated coefficients of (f f*)^{-1}
  PeriodicField f_inv;         // truncated coefficients of f^{-1}

  Real c_star_est = 0, delta_est = 0, t_hat0 = 0;
};

namespace detail {

inline Mat solve_columns(const CellProblem& c, const HatApply& op,
                         const Vec& diag_inv, const Mat& rhs) {
  Mat out(rhs.rows(), rhs.cols());
  for (int col = 0; col < rhs.cols(); ++col) {
    Vec r = rhs.col(col);
    r.segment(static_cast<Eigen::Index>(c.modes.zero) * c.n(), c.n()).setZero();
    out.col(col) = cell_pcg(op, r, diag_inv);
  }
  return out;
}

inline Vec hat_diag_inv(const CellProblem& c, const HatApply& op) {
  const int n = c.n(), K = c.K();
  Mat g0mean = c.g.mean();
  Vec d(static_cast<Eigen::Index>(n) * K);
  for (int i = 0; i < K; ++i) {
    Mat blk = op.bk[i].adjoint() * g0mean * op.bk[i];
    for (int a = 0; a < n; ++a) {
      Real v = std::real(blk(a, a));
      d[static_cast<Eigen::Index>(i) * n + a] = v > 1e-14 ? 1.0 / v : 1.0;
    }
  }
  return d;
}

// coefficients of g_tilde = g (b(D) Lambda + 1)
inline PeriodicField gtilde_field(const CellProblem& c, const Mat& Lambda) {
  PeriodicField gt;
  gt.dim = c.lattice.dim;
  gt.rows = c.m();
  gt.cols = c.m();
  for (const auto& [dg, Mg] : c.g.coeffs) gt.add(dg, Mg);
  const int n = c.n();
  for (int i = 0; i < c.K(); ++i) {
    Mat BL = c.sym.at(c.modes.vec[i]) * Lambda.middleRows(static_cast<Eigen::Index>(i) * n, n);
    if (BL.norm() < 1e-300) continue;
    for (const auto& [dg, Mg] : c.g.coeffs) {
      IVec t(c.lattice.dim);
      for (int a = 0; a < c.lattice.dim; ++a) t[a] = dg[a] + c.modes.idx[i][a];
      gt.add(t, Mat(Mg * BL));
    }
  }
  return gt;
}

}  // namespace detail

inline CorrectorSet solve_cell(const CellProblem& c) {
  CorrectorSet cs;
  const int n = c.n(), m = c.m(), K = c.K(), d = c.lattice.dim;
  RVec k0 = RVec::Zero(d);
  HatApply op(c, k0);
  Vec diag_inv = detail::hat_diag_inv(c, op);

  // first corrector: b(D)* g (b(D) Lambda + 1_m) = 0
  Mat rhs0 = Mat::Zero(static_cast<Eigen::Index>(n) * K, m);
  for (int i = 0; i < K; ++i) {
    Mat acc = Mat::Zero(n, m);
    IVec d0 = c.modes.idx[i];
    if (c.g.has(d0)) acc = op.bk[i].adjoint() * c.g.coeff(d0);
    rhs0.middleRows(static_cast<Eigen::Index>(i) * n, n) = -acc;
  }
  cs.Lambda = detail::solve_columns(c, op, diag_inv, rhs0);

  cs.g_tilde = detail::gtilde_field(c, cs.Lambda);
  cs.g0 = herm(cs.g_tilde.mean());
  cs.g_bar = herm(c.g.mean());

  {
    // g^{-1} is not band-limited; the sampling grid must push its aliasing
    // well below the bracket tolerance
    std::vector<int> vgrid = grid_for(c.g, 4);
    for (auto& v : vgrid) v = std::max(v, 48);
    FieldGrid gg = materialize(c.g, vgrid);
    cs.g_lower = herm(Mat(grid_mean(grid_inverse(gg))));
    cs.g_lower = herm(Mat(cs.g_lower.partialPivLu()
                              .solve(Mat::Identity(m, m))));
    cs.vr_upper_min = hermitian_eigvals(Mat(cs.g_bar - cs.g0)).minCoeff();
    cs.vr_lower_min = hermitian_eigvals(Mat(cs.g0 - cs.g_lower)).minCoeff();
    if (std::min(cs.vr_upper_min, cs.vr_lower_min) < -1e-6)
      throw VoigtReussViolation("effective matrix escapes the Voigt-Reuss bracket");
  }

  cs.mean_LL = Mat::Zero(m, m);
  for (int i = 0; i < K; ++i) {
    Mat Li = cs.Lambda.middleRows(static_cast<Eigen::Index>(i) * n, n);
    cs.mean_LL += Li.adjoint() * Li;
  }

  // second correctors, one per coordinate direction
  cs.Lambda2.resize(d);
  for (int l = 0; l < d; ++l) {
    Mat bl = c.sym.b[l];
    Mat rhs = Mat::Zero(static_cast<Eigen::Index>(n) * K, m);
    // source field b_l^*(g0 - g_tilde)
    for (int i = 0; i < K; ++i) {
      Mat s = Mat::Zero(n, m);
      IVec di = c.modes.idx[i];
      if (i == c.modes.zero) s += bl.adjoint() * cs.g0;
      if (cs.g_tilde.has(di)) s -= bl.adjoint() * cs.g_tilde.coeff(di);
      rhs.middleRows(static_cast<Eigen::Index>(i) * n, n) = s;
    }
    // minus the operator applied to the known part b_l Lambda
    Mat blL(static_cast<Eigen::Index>(m) * K, m);
    for (int i = 0; i < K; ++i)
      blL.middleRows(static_cast<Eigen::Index>(i) * m, m) =
          bl * cs.Lambda.middleRows(static_cast<Eigen::Index>(i) * n, n);
    for (int col = 0; col < m; ++col) {
      Vec mid = Vec::Zero(static_cast<Eigen::Index>(m) * K);
      for (int j = 0; j < K; ++j) {
        Vec v = blL.block(static_cast<Eigen::Index>(j) * m, col, m, 1);
        if (v.norm() < 1e-300) continue;
        for (const auto& [dg, Mg] : c.g.coeffs) {
          IVec ti(d);
          for (int a = 0; a < d; ++a) ti[a] = c.modes.idx[j][a] + dg[a];
          int i2 = c.modes.find(ti);
          if (i2 >= 0) mid.segment(static_cast<Eigen::Index>(i2) * m, m) += Mg * v;
        }
      }
      for (int i = 0; i < K; ++i)
        rhs.block(static_cast<Eigen::Index>(i) * n, col, n, 1) -=
            op.bk[i].adjoint() * mid.segment(static_cast<Eigen::Index>(i) * m, m);
    }
    // solvability: the zero-mode source row must vanish
    Real solv = rhs.middleRows(static_cast<Eigen::Index>(c.modes.zero) * n, n).norm();
    if (solv > 1e-8 * std::max(rhs.norm(), Real(1)))
      throw SolvabilityViolation("second corrector source has a mean component");
    cs.Lambda2[l] = detail::solve_columns(c, op, diag_inv, rhs);
  }

  // rough operator scales for the fit/scan windows
  {
    SymbolBounds sb = estimate_symbol_bounds(c.sym, c.lattice.dim == 3 ? 2000 : 720);
    std::vector<int> sgrid = grid_for(c.g, 4);
    for (auto& v : sgrid) v = std::max(v, 48);
    FieldGrid gg = materialize(c.g, sgrid);
    Real g_sup = sup_operator_norm(gg);
    Real ginv_sup = sup_operator_norm(grid_inverse(gg));
    Real f_sup = 1, finv_sup = 1;
    if (c.has_f()) {
      std::vector<int> fgrid = grid_for(c.f, 4);
      for (auto& v : fgrid) v = std::max(v, 48);
      FieldGrid fg = materialize(c.f, fgrid);
      f_sup = sup_operator_norm(fg);
      finv_sup = sup_operator_norm(grid_inverse(fg));
    }
    cs.c_star_est = sb.alpha0 / (finv_sup * finv_sup * ginv_sup);
    cs.delta_est = 0.25 * cs.c_star_est * c.lattice.r0 * c.lattice.r0;
    cs.t_hat0 = std::sqrt(cs.delta_est / (sb.alpha1 * g_sup)) / f_sup;
  }

  if (!c.has_f()) return cs;

  // ---- border data ----
  {
    // one dense grid for everything derived from (f f*)^{-1}, so the mean,
    // the truncated coefficients, and the corrector gauge stay consistent
    int bwf = std::max(c.f.bandwidth(), 1);
    int qbw = std::max(6 * bwf, 24);
    std::vector<int> qgrid(d, 2 * qbw + 2);
    FieldGrid fg2 = materialize(c.f, qgrid);
    FieldGrid ffg2 = fg2;
    for (auto& v : ffg2.values) v = v * v.adjoint();
    cs.G_f = herm(Mat(grid_mean(ffg2)));
    FieldGrid qg = grid_inverse(ffg2);
    cs.Q_bar = herm(Mat(grid_mean(qg)));
    cs.f0 = inv_sqrt_pd(cs.Q_bar);
    cs.Qf = truncate_to_field(qg, qbw);

    int maxinf = 0;
    for (const auto& ix : c.modes.idx)
      for (int v : ix) maxinf = std::max(maxinf, std::abs(v));
    int rad = 2 * maxinf;
    std::vector<int> igrid(d, 2 * rad + 16);
    cs.f_inv = truncate_to_field(grid_inverse(materialize(c.f, igrid)), rad);
  }

  // Lambda_Q = Lambda - Qbar^{-1} mean(Q Lambda)
  {
    Mat mQL = Mat::Zero(n, m);
    for (int i = 0; i < K; ++i) {
      IVec neg(d);
      for (int a = 0; a < d; ++a) neg[a] = -c.modes.idx[i][a];
      if (!cs.Qf.has(neg)) continue;
      mQL += cs.Qf.coeff(neg) * cs.Lambda.middleRows(static_cast<Eigen::Index>(i) * n, n);
    }
    cs.Lambda_Q = cs.Lambda;
    cs.Lambda_Q.middleRows(static_cast<Eigen::Index>(c.modes.zero) * n, n) =
        -cs.Q_bar.partialPivLu().solve(mQL);
  }

  // mean(Lambda_Q* Q Lambda_Q)
  cs.mean_LQL = Mat::Zero(m, m);
  for (int i = 0; i < K; ++i) {
    Mat Li = cs.Lambda_Q.middleRows(static_cast<Eigen::Index>(i) * n, n);
    for (int j = 0; j < K; ++j) {
      IVec dij(d);
      for (int a = 0; a < d; ++a) dij[a] = c.modes.idx[i][a] - c.modes.idx[j][a];
      if (!cs.Qf.has(dij)) continue;
      Mat Lj = cs.Lambda_Q.middleRows(static_cast<Eigen::Index>(j) * n, n);
      cs.mean_LQL += Li.adjoint() * cs.Qf.coeff(dij) * Lj;
    }
  }
  cs.mean_LQL = herm(cs.mean_LQL);

  // weighted second correctors
  cs.Lambda2_Q.resize(d);
  Mat Qbar_inv = cs.Q_bar.partialPivLu().solve(Mat::Identity(n, n));
  for (int l = 0; l < d; ++l) {
    Mat bl = c.sym.b[l];
    Mat rhs = Mat::Zero(static_cast<Eigen::Index>(n) * K, m);
    Mat blg0 = Qbar_inv * bl.adjoint() * cs.g0;
    for (int i = 0; i < K; ++i) {
      Mat s = Mat::Zero(n, m);
      IVec di = c.modes.idx[i];
      if (cs.g_tilde.has(di)) s -= bl.adjoint() * cs.g_tilde.coeff(di);
      if (cs.Qf.has(di)) s += cs.Qf.coeff(di) * blg0;
      rhs.middleRows(static_cast<Eigen::Index>(i) * n, n) = s;
    }
    Mat blL(static_cast<Eigen::Index>(m) * K, m);
    for (int i = 0; i < K; ++i)
      blL.middleRows(static_cast<Eigen::Index>(i) * m, m) =
          bl * cs.Lambda_Q.middleRows(static_cast<Eigen::Index>(i) * n, n);
    for (int col = 0; col < m; ++col) {
      Vec mid = Vec::Zero(static_cast<Eigen::Index>(m) * K);
      for (int j = 0; j < K; ++j) {
        Vec v = blL.block(static_cast<Eigen::Index>(j) * m, col, m, 1);
        if (v.norm() < 1e-300) continue;
        for (const auto& [dg, Mg] : c.g.coeffs) {
          IVec ti(d);
          for (int a = 0; a < d; ++a) ti[a] = c.modes.idx[j][a] + dg[a];
          int i2 = c.modes.find(ti);
          if (i2 >= 0) mid.segment(static_cast<Eigen::Index>(i2) * m, m) += Mg * v;
        }
      }
      for (int i = 0; i < K; ++i)
        rhs.block(static_cast<Eigen::Index>(i) * n, col, n, 1) -=
            op.bk[i].adjoint() * mid.segment(static_cast<Eigen::Index>(i) * m, m);
    }
    Real solv = rhs.middleRows(static_cast<Eigen::Index>(c.modes.zero) * n, n).norm();
    if (solv > 1e-8 * std::max(rhs.norm(), Real(1)))
      throw SolvabilityViolation("weighted second corrector source has a mean component");
    Mat sol = detail::solve_columns(c, op, diag_inv, rhs);
    // shift so that mean(Q Lambda2_Q) = 0
    Mat mQL2 = Mat::Zero(n, m);
    for (int i = 0; i < K; ++i) {
      IVec neg(d);
      for (int a = 0; a < d; ++a) neg[a] = -c.modes.idx[i][a];
      if (!cs.Qf.has(neg)) continue;
      mQL2 += cs.Qf.coeff(neg) * sol.middleRows(static_cast<Eigen::Index>(i) * n, n);
    }
    sol.middleRows(static_cast<Eigen::Index>(c.modes.zero) * n, n) =
        -cs.Q_bar.partialPivLu().solve(mQL2);
    cs.Lambda2_Q[l] = sol;
  }
  return cs;
}

// Effective-variant fiber: block-diagonal symbol of b(b+k)* g0 b(b+k),
// bordered by the constant f0 when present.
inline Mat assemble_effective_fiber(const CellProblem& c, const CorrectorSet& cs,
                                    const RVec& k) {
  const int n = c.n(), K = c.K();
  Mat A = Mat::Zero(static_cast<Eigen::Index>(n) * K, static_cast<Eigen::Index>(n) * K);
  bool border = c.has_f();
  for (int i = 0; i < K; ++i) {
    Mat bt = c.sym.at(RVec(c.modes.vec[i] + k));
    Mat blk = bt.adjoint() * cs.g0 * bt;
    if (border) blk = cs.f0 * blk * cs.f0;
    A.block(static_cast<Eigen::Index>(i) * n, static_cast<Eigen::Index>(i) * n, n, n) = herm(blk);
  }
  return A;
}

inline Mat assemble_fiber(const CellProblem& c, const CorrectorSet& cs,
                          FiberVariant variant, const RVec& k) {
  if (variant == FiberVariant::effective) return assemble_effective_fiber(c, cs, k);
  Mat A = assemble_hat_fiber(c, k);
  if (variant == FiberVariant::hat) return A;
  Mat F = conv_matrix(c.has_f() ? c.f : PeriodicField::identity(c.lattice.dim, c.n()),
                      c.modes);
  return herm(Mat(F.adjoint() * A * F));
}

// Factor X(k) with A(k) = X(k)* X(k), via the Cholesky factor of the g
// convolution matrix (the field square root of g is never formed).
inline Mat fiber_factor(const CellProblem& c, FiberVariant variant, const RVec& k) {
  const int n = c.n(), m = c.m(), K = c.K();
  Mat G = Mat::Zero(static_cast<Eigen::Index>(m) * K, static_cast<Eigen::Index>(m) * K);
  for (int j = 0; j < K; ++j)
    for (const auto& [dg, Mg] : c.g.coeffs) {
      IVec ti(c.lattice.dim);
      for (int a = 0; a < c.lattice.dim; ++a) ti[a] = c.modes.idx[j][a] + dg[a];
      int i = c.modes.find(ti);
      if (i >= 0) G.block(static_cast<Eigen::Index>(i) * m, static_cast<Eigen::Index>(j) * m, m, m) = Mg;
    }
  Mat L = cholesky_factor(herm(G));
  Mat B = Mat::Zero(static_cast<Eigen::Index>(m) * K, static_cast<Eigen::Index>(n) * K);
  for (int i = 0; i < K; ++i)
    B.block(static_cast<Eigen::Index>(i) * m, static_cast<Eigen::Index>(i) * n, m, n) =
        c.sym.at(RVec(c.modes.vec[i] + k));
  Mat X = L.adjoint() * B;
  if (variant == FiberVariant::sandwiched && c.has_f()) X = X * conv_matrix(c.f, c.modes);
  return X;
}

}  // namespace homog
