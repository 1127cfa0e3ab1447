#pragma once
#include <lapacke.h>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "homog/errors.hpp"
#include "homog/types.hpp"

namespace homog {

struct EigH {
  RVec w;  // ascending
  Mat V;   // columns are eigenvectors
};

// Hermitian eigendecomposition; LAPACK divide&conquer above the crossover dim.
inline EigH hermitian_eig(const Mat& A, bool vectors = true) {
  const int n = static_cast<int>(A.rows());
  if (n < 128) {
    Eigen::SelfAdjointEigenSolver<Mat> es;
    es.compute(A, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw SolveFailure("hermitian_eig did not converge");
    EigH out;
    out.w = es.eigenvalues();
    if (vectors) out.V = es.eigenvectors();
    return out;
  }
  EigH out;
  out.w.resize(n);
  Mat work = A;
  int info = LAPACKE_zheevd(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', 'L', n,
                            reinterpret_cast<lapack_complex_double*>(work.data()), n,
                            out.w.data());
  if (info != 0) throw SolveFailure("zheevd info=" + std::to_string(info));
  if (vectors) out.V = std::move(work);
  return out;
}

inline RVec hermitian_eigvals(const Mat& A) { return hermitian_eig(A, false).w; }

inline RVec singular_values(const Mat& A) {
  if (A.rows() <= 96 && A.cols() <= 96)
    return Eigen::JacobiSVD<Mat>(A).singularValues();
  return Eigen::BDCSVD<Mat>(A).singularValues();
}

inline Real op_norm(const Mat& A) {
  if (A.size() == 0) return 0.0;
  return singular_values(A)[0];
}

// Largest singular value of a matrix-free operator, Golub-Kahan-Lanczos with
// full reorthogonalization and a fixed start for reproducibility.
inline Real op_norm_free(int cols, const std::function<Vec(const Vec&)>& apply,
                         const std::function<Vec(const Vec&)>& apply_adj,
                         int max_steps = 40, Real tol = 1e-3) {
  if (cols == 0) return 0.0;
  Vec v = Vec::Ones(cols) / std::sqrt(Real(cols));
  std::vector<Vec> us, vs;
  std::vector<Real> alphas, betas;
  vs.push_back(v);
  Real prev = 0.0;
  for (int j = 0; j < max_steps; ++j) {
    Vec u = apply(vs.back());
    if (j > 0) u -= betas.back() * us.back();
    for (const auto& uo : us) u -= uo.dot(u) * uo;
    Real alpha = u.norm();
    if (alpha < 1e-300) break;
    u /= alpha;
    us.push_back(u);
    alphas.push_back(alpha);

    Vec w = apply_adj(u) - alpha * vs.back();
    for (const auto& vo : vs) w -= vo.dot(w) * vo;
    Real beta = w.norm();

    // sigma_max of the current lower-bidiagonal block
    int m = static_cast<int>(alphas.size());
    RMat B = RMat::Zero(m + 1, m);
    for (int i = 0; i < m; ++i) {
      B(i, i) = alphas[i];
      B(i + 1, i) = (i + 1 < static_cast<int>(betas.size()) + 1 && i < static_cast<int>(betas.size())) ? betas[i] : 0.0;
    }
    B(m, m - 1) = beta;
    Real sig = Eigen::JacobiSVD<RMat>(B).singularValues()[0];
    if (j > 2 && sig - prev <= tol * sig) return sig;
    prev = sig;

    if (beta < 1e-300) return sig;
    w /= beta;
    vs.push_back(w);
    betas.push_back(beta);
  }
  return prev;
}

// Least squares with column equilibration; A is tall, well-conditioned after scaling.
inline RVec lstsq(const RMat& A, const RVec& b) {
  RVec scale(A.cols());
  for (int j = 0; j < A.cols(); ++j) {
    Real s = A.col(j).cwiseAbs().maxCoeff();
    scale[j] = (s > 0) ? s : 1.0;
  }
  RMat As = A * scale.cwiseInverse().asDiagonal();
  RVec y = As.colPivHouseholderQr().solve(b);
  return scale.cwiseInverse().asDiagonal() * y;
}

inline Mat cholesky_factor(const Mat& A) {
  Eigen::LLT<Mat> llt(A);
  if (llt.info() != Eigen::Success)
    throw SolveFailure("cholesky_factor: matrix not positive definite");
  return llt.matrixL();
}

inline Mat herm(const Mat& A) { return 0.5 * (A + A.adjoint()); }

// inverse square root of a Hermitian positive definite matrix
inline Mat inv_sqrt_pd(const Mat& A) {
  EigH e = hermitian_eig(A);
  if (e.w.minCoeff() <= 0)
    throw SolveFailure("inv_sqrt_pd: matrix not positive definite");
  return e.V * e.w.cwiseSqrt().cwiseInverse().asDiagonal() * e.V.adjoint();
}

}  // namespace homog
