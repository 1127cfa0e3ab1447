#pragma once
#include <complex>
#include <vector>

#include "homog/errors.hpp"
#include "homog/pencil.hpp"

// Window-uniform residual ratios ||F(t)-P||/t and ||A(t)F(t)-t^2 SP-t^3 K||/t^4
// for a pencil family.  At the small end of the window the second defect sits
// far below the double roundoff floor (|A| eps ~ 1e-15 vs t^4 ~ 1e-19), so the
// evaluation runs in quad precision on the (<= 8x8) family matrices.

namespace homog {
namespace quad {

using Q = __float128;
using CQ = std::complex<Q>;

inline Q qabs(Q x) { return x < 0 ? -x : x; }

// Newton refinement from the double estimate; each step doubles the digits.
inline Q qsqrt(Q x) {
  if (!(x > 0)) return 0;
  Q r = static_cast<Q>(std::sqrt(static_cast<double>(x)));
  for (int i = 0; i < 3; ++i) r = (r + x / r) / 2;
  return r;
}

inline Q qnorm2(const CQ& z) { return z.real() * z.real() + z.imag() * z.imag(); }
inline Q qmod(const CQ& z) { return qsqrt(qnorm2(z)); }

struct QMat {
  int r = 0, c = 0;
  std::vector<CQ> a;
  QMat() = default;
  QMat(int r_, int c_) : r(r_), c(c_), a(static_cast<size_t>(r_) * c_, CQ(0, 0)) {}
  CQ& operator()(int i, int j) { return a[static_cast<size_t>(i) * c + j]; }
  const CQ& operator()(int i, int j) const { return a[static_cast<size_t>(i) * c + j]; }
};

inline QMat from_double(const Mat& A) {
  QMat B(static_cast<int>(A.rows()), static_cast<int>(A.cols()));
  for (int i = 0; i < B.r; ++i)
    for (int j = 0; j < B.c; ++j)
      B(i, j) = CQ(static_cast<Q>(A(i, j).real()), static_cast<Q>(A(i, j).imag()));
  return B;
}

inline QMat mul(const QMat& A, const QMat& B) {
  QMat C(A.r, B.c);
  for (int i = 0; i < A.r; ++i)
    for (int k = 0; k < A.c; ++k) {
      CQ aik = A(i, k);
      if (aik == CQ(0, 0)) continue;
      for (int j = 0; j < B.c; ++j) C(i, j) += aik * B(k, j);
    }
  return C;
}

inline QMat adjoint(const QMat& A) {
  QMat B(A.c, A.r);
  for (int i = 0; i < A.r; ++i)
    for (int j = 0; j < A.c; ++j) B(j, i) = std::conj(A(i, j));
  return B;
}

inline QMat axpy(const QMat& A, const QMat& B, Q alpha) {  // A + alpha B
  QMat C = A;
  for (size_t i = 0; i < C.a.size(); ++i) C.a[i] += alpha * B.a[i];
  return C;
}

// Cyclic complex Jacobi for a Hermitian matrix; returns ascending eigenvalues
// with the matching unitary in V.
inline void hermitian_eig_quad(QMat A, std::vector<Q>& w, QMat& V) {
  const int n = A.r;
  V = QMat(n, n);
  for (int i = 0; i < n; ++i) V(i, i) = CQ(1, 0);
  Q scale = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) scale += qnorm2(A(i, j));
  scale = qsqrt(scale);
  if (scale == 0) {
    w.assign(n, 0);
    return;
  }
  const Q tol = scale * static_cast<Q>(1e-35);
  for (int sweep = 0; sweep < 60; ++sweep) {
    Q off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += qnorm2(A(p, q));
    if (qsqrt(off) < tol) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        Q apq = qmod(A(p, q));
        if (apq < tol / n) continue;
        CQ phase = A(p, q) / CQ(apq, 0);
        Q theta = (A(q, q).real() - A(p, p).real()) / (2 * apq);
        Q tt = (theta >= 0 ? Q(1) : Q(-1)) / (qabs(theta) + qsqrt(1 + theta * theta));
        Q cc = 1 / qsqrt(1 + tt * tt);
        Q ss = tt * cc;
        CQ gpq = CQ(ss, 0) * phase;
        // columns: [p q] <- [p q] * [[c, gpq], [-conj(gpq), c]]
        for (int i = 0; i < n; ++i) {
          CQ ap = A(i, p), aq = A(i, q);
          A(i, p) = CQ(cc, 0) * ap - std::conj(gpq) * aq;
          A(i, q) = gpq * ap + CQ(cc, 0) * aq;
          CQ vp = V(i, p), vq = V(i, q);
          V(i, p) = CQ(cc, 0) * vp - std::conj(gpq) * vq;
          V(i, q) = gpq * vp + CQ(cc, 0) * vq;
        }
        for (int j = 0; j < n; ++j) {
          CQ ap = A(p, j), aq = A(q, j);
          A(p, j) = CQ(cc, 0) * ap - gpq * aq;
          A(q, j) = std::conj(gpq) * ap + CQ(cc, 0) * aq;
        }
      }
  }
  w.resize(n);
  std::vector<int> ord(n);
  for (int i = 0; i < n; ++i) ord[i] = i;
  std::sort(ord.begin(), ord.end(),
            [&](int i, int j) { return A(i, i).real() < A(j, j).real(); });
  QMat Vs(n, n);
  for (int j = 0; j < n; ++j) {
    w[j] = A(ord[j], ord[j]).real();
    for (int i = 0; i < n; ++i) Vs(i, j) = V(i, ord[j]);
  }
  V = Vs;
}

inline Q op_norm_quad(const QMat& D) {
  QMat G = mul(adjoint(D), D);
  for (int i = 0; i < G.r; ++i)  // symmetrize roundoff
    for (int j = i + 1; j < G.c; ++j) {
      CQ h = (G(i, j) + std::conj(G(j, i))) / CQ(2, 0);
      G(i, j) = h;
      G(j, i) = std::conj(h);
    }
  std::vector<Q> w;
  QMat V;
  hermitian_eig_quad(G, w, V);
  Q top = w.empty() ? Q(0) : w.back();
  return top > 0 ? qsqrt(top) : Q(0);
}

}  // namespace quad

struct ResidualVariation {
  Real proj_min = 0, proj_max = 0;       // ||F(t)-P|| / t
  Real defect_min = 0, defect_max = 0;   // ||A(t)F(t) - t^2 SP - t^3 K|| / t^4
  Real proj_variation() const { return proj_max / proj_min; }
  Real defect_variation() const { return defect_max / defect_min; }
};

inline ResidualVariation residual_variation(const PencilFamily& f,
                                            const ThresholdSet& th,
                                            Real lo_rel = 1e-3, Real hi_rel = 1e-1,
                                            int npts = 12) {
  using namespace quad;
  QMat X0e = from_double(f.X0e), X1e = from_double(f.X1e);
  QMat P = from_double(f.P);
  QMat SP = from_double(Mat(th.S * f.P));
  QMat K = from_double(th.K);

  ResidualVariation rv;
  rv.proj_min = rv.defect_min = std::numeric_limits<Real>::infinity();
  RVec ts = log_grid(lo_rel * f.t0, hi_rel * f.t0, npts);
  for (int i = 0; i < ts.size(); ++i) {
    Q t = static_cast<Q>(ts[i]);
    QMat X = axpy(X0e, X1e, t);
    QMat A = mul(adjoint(X), X);
    std::vector<Q> w;
    QMat V;
    hermitian_eig_quad(A, w, V);
    int cnt = 0;
    while (cnt < static_cast<int>(w.size()) && w[cnt] < static_cast<Q>(f.delta))
      ++cnt;
    if (cnt != f.n)
      throw NoSpectralGap("quad spectral cluster below delta has dimension " +
                          std::to_string(cnt) + " != n");
    QMat Vn(V.r, f.n);
    for (int r = 0; r < V.r; ++r)
      for (int c = 0; c < f.n; ++c) Vn(r, c) = V(r, c);
    QMat F = mul(Vn, adjoint(Vn));

    Q r1 = op_norm_quad(axpy(F, P, Q(-1))) / t;
    QMat D = mul(A, F);
    D = axpy(D, SP, -t * t);
    D = axpy(D, K, -t * t * t);
    Q r2 = op_norm_quad(D) / (t * t * t * t);

    rv.proj_min = std::min(rv.proj_min, static_cast<Real>(r1));
    rv.proj_max = std::max(rv.proj_max, static_cast<Real>(r1));
    rv.defect_min = std::min(rv.defect_min, static_cast<Real>(r2));
    rv.defect_max = std::max(rv.defect_max, static_cast<Real>(r2));
  }
  return rv;
}

}  // namespace homog
