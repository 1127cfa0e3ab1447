#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "homog/cell.hpp"
#include "homog/json_out.hpp"
#include "homog/linalg.hpp"
#include "homog/pencil.hpp"

namespace homog {

// Threshold data of one fiber direction: germ eigenstructure plus the cubic
// and quartic coefficient operators, all reduced to the n-dimensional kernel.
struct GermPoint {
  RVec theta;
  Mat S, Nmat, N1mat, Wmat;  // quadratic forms in standard coordinates
  RVec gamma, mu, nu;
  Mat zeta;                  // Q_bar-orthonormal columns, cascade-refined
  Mat Nz, N0z, Nstarz;       // matrices in the zeta coordinates
  std::vector<Cluster> clusters;
  std::vector<Subcluster> subclusters;
  Real norm_N = 0, norm_N0 = 0, norm_Nstar = 0, norm_W = 0;
};

namespace detail {

// sum_b Lam(b)^H b(th)^H gt(b) + gt(b)^H b(th) Lam(b)
inline Mat germ_cubic_form(const CellProblem& c, const Mat& Lam,
                           const PeriodicField& gt, const Mat& bth) {
  const int n = c.n(), m = c.m();
  Mat L = Mat::Zero(m, m);
  for (int i = 0; i < c.K(); ++i) {
    if (!gt.has(c.modes.idx[i])) continue;
    Mat Li = Lam.middleRows(static_cast<Eigen::Index>(i) * n, n);
    Mat Gt = gt.coeff(c.modes.idx[i]);
    L += Li.adjoint() * bth.adjoint() * Gt + Gt.adjoint() * bth * Li;
  }
  return L;
}

// sum_{b,b'} F(b)^H g(b-b') F(b') with F(b) = b(b) Lam2(b) + b(th) Lam(b)
inline Mat germ_quartic_flux(const CellProblem& c, const Mat& Lam,
                             const Mat& Lam2th, const Mat& bth) {
  const int n = c.n(), m = c.m(), K = c.K();
  std::vector<Mat> F(K);
  for (int i = 0; i < K; ++i)
    F[i] = c.sym.at(c.modes.vec[i]) *
               Lam2th.middleRows(static_cast<Eigen::Index>(i) * n, n) +
           bth * Lam.middleRows(static_cast<Eigen::Index>(i) * n, n);
  Mat T = Mat::Zero(m, m);
  for (int j = 0; j < K; ++j)
    for (const auto& [dg, Mg] : c.g.coeffs) {
      IVec ti(c.lattice.dim);
      for (int a = 0; a < c.lattice.dim; ++a) ti[a] = c.modes.idx[j][a] + dg[a];
      int i = c.modes.find(ti);
      if (i >= 0) T += F[i].adjoint() * Mg * F[j];
    }
  return T;
}

}  // namespace detail

inline GermPoint germ_at(const CellProblem& c, const CorrectorSet& cs,
                         const RVec& theta, Real cluster_rel_gap = 1e-8,
                         Real subcluster_tol = 1e-7) {
  GermPoint gp;
  gp.theta = theta;
  const int n = c.n();
  Mat bth = c.sym.at(theta);
  gp.S = herm(Mat(bth.adjoint() * cs.g0 * bth));

  const bool wf = c.has_f();
  Mat Qb = wf ? cs.Q_bar : Mat(Mat::Identity(n, n));
  const Mat& Lam = wf ? cs.Lambda_Q : cs.Lambda;
  const auto& L2v = wf ? cs.Lambda2_Q : cs.Lambda2;
  Mat Lam2th = Mat::Zero(Lam.rows(), Lam.cols());
  for (int l = 0; l < c.lattice.dim; ++l) Lam2th += theta[l] * L2v[l];

  Mat Lc = detail::germ_cubic_form(c, Lam, cs.g_tilde, bth);
  gp.Nmat = herm(Mat(bth.adjoint() * Lc * bth));
  Mat L2 = detail::germ_cubic_form(c, Lam2th, cs.g_tilde, bth) +
           detail::germ_quartic_flux(c, Lam, Lam2th, bth);
  gp.N1mat = herm(Mat(bth.adjoint() * L2 * bth));
  gp.Wmat = herm(Mat(bth.adjoint() * (wf ? cs.mean_LQL : cs.mean_LL) * bth));

  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(gp.S, Qb);
  if (ges.info() != Eigen::Success)
    throw SolveFailure("generalized germ eigenproblem failed");
  gp.gamma = ges.eigenvalues();
  gp.zeta = ges.eigenvectors();
  Real gmax = gp.gamma.cwiseAbs().maxCoeff();
  if (!(gmax > 0) || gp.gamma[0] <= 1e-12 * gmax)
    throw DegenerateGerm("germ not positive definite along the given direction");

  gp.Nz = herm(Mat(gp.zeta.adjoint() * gp.Nmat * gp.zeta));
  auto cl = detail::group_runs(gp.gamma, cluster_rel_gap * gmax);
  for (size_t q = 0; q + 1 < cl.size(); ++q) {
    Real gap = gp.gamma[cl[q + 1].first] - gp.gamma[cl[q].second - 1];
    if (gap < 10 * cluster_rel_gap * gmax)
      throw ClusterResolutionFailure("germ eigenvalue gap " + std::to_string(gap) +
                                     " too close to the cluster tolerance");
  }
  gp.clusters.reserve(cl.size());
  for (auto [lo, hi] : cl)
    gp.clusters.push_back({gp.gamma.segment(lo, hi - lo).mean(), lo, hi});

  gp.mu.resize(n);
  for (const auto& q : gp.clusters) {
    int k = q.hi - q.lo;
    EigH eb = hermitian_eig(herm(Mat(gp.Nz.block(q.lo, q.lo, k, k))));
    gp.zeta.middleCols(q.lo, k) = gp.zeta.middleCols(q.lo, k) * eb.V;
    gp.mu.segment(q.lo, k) = eb.w;
  }
  gp.Nz = herm(Mat(gp.zeta.adjoint() * gp.Nmat * gp.zeta));

  // W and S are kernel-supported quadratic forms; their operator product
  // contracts through the inverse Gram matrix of the kernel basis.
  Mat Qinv = Qb.llt().solve(Mat(Mat::Identity(n, n)));
  Mat core = gp.N1mat - 0.5 * (gp.Wmat * Qinv * gp.S + gp.S * Qinv * gp.Wmat);
  Mat Cz = gp.zeta.adjoint() * core * gp.zeta;
  gp.nu.resize(n);
  for (size_t qi = 0; qi < gp.clusters.size(); ++qi) {
    const auto& q = gp.clusters[qi];
    int k = q.hi - q.lo;
    RVec muq = gp.mu.segment(q.lo, k);
    Real mu_scale = std::max(muq.cwiseAbs().maxCoeff(), Real(1));
    auto subs = detail::group_runs(muq, subcluster_tol * mu_scale);
    for (auto [slo, shi] : subs) {
      Subcluster sc;
      sc.cluster = static_cast<int>(qi);
      sc.lo = q.lo + slo;
      sc.hi = q.lo + shi;
      sc.mu = muq.segment(slo, shi - slo).mean();
      int ks = shi - slo;
      Mat block = Cz.block(sc.lo, sc.lo, ks, ks);
      for (size_t ji = 0; ji < gp.clusters.size(); ++ji) {
        if (ji == qi) continue;
        const auto& qj = gp.clusters[ji];
        Mat cross = gp.Nz.block(qj.lo, sc.lo, qj.hi - qj.lo, ks);
        block += (cross.adjoint() * cross) / (q.gamma - qj.gamma);
      }
      EigH eb = hermitian_eig(herm(block));
      gp.zeta.middleCols(sc.lo, ks) = gp.zeta.middleCols(sc.lo, ks) * eb.V;
      gp.nu.segment(sc.lo, ks) = eb.w;
      gp.subclusters.push_back(sc);
    }
  }

  gp.Nz = herm(Mat(gp.zeta.adjoint() * gp.Nmat * gp.zeta));
  gp.N0z = Mat::Zero(n, n);
  for (const auto& q : gp.clusters) {
    int k = q.hi - q.lo;
    gp.N0z.block(q.lo, q.lo, k, k) = gp.Nz.block(q.lo, q.lo, k, k);
  }
  gp.Nstarz = gp.Nz - gp.N0z;
  gp.norm_N = op_norm(gp.Nz);
  gp.norm_N0 = op_norm(gp.N0z);
  gp.norm_Nstar = op_norm(gp.Nstarz);
  gp.norm_W = op_norm(Mat(gp.zeta.adjoint() * gp.Wmat * gp.zeta));
  return gp;
}

// Direction scan with the aggregate flags the error estimates branch on.
struct GermScan {
  std::vector<GermPoint> points;
  Real scale_S = 0;  // max germ eigenvalue over the scan
  Real max_norm_N = 0, max_norm_N0 = 0, max_norm_Nstar = 0, max_norm_W = 0;
  Real c_star = std::numeric_limits<Real>::infinity();
  Real c_circ = std::numeric_limits<Real>::infinity();  // coupled-pair margin
  int max_clusters = 0;

  bool N_zero() const { return max_norm_N <= 1e-9 * scale_S; }
  bool N0_zero() const { return max_norm_N0 <= 1e-9 * scale_S; }
  bool Z_zero() const { return max_norm_W <= 1e-9 * scale_S; }
};

inline GermScan scan_germ(const CellProblem& c, const CorrectorSet& cs,
                          const std::vector<RVec>& dirs) {
  GermScan gs;
  gs.points.reserve(dirs.size());
  for (const auto& th : dirs) {
    GermPoint gp = germ_at(c, cs, th);
    gs.scale_S = std::max(gs.scale_S, gp.gamma.maxCoeff());
    gs.c_star = std::min(gs.c_star, gp.gamma[0]);
    gs.max_norm_N = std::max(gs.max_norm_N, gp.norm_N);
    gs.max_norm_N0 = std::max(gs.max_norm_N0, gp.norm_N0);
    gs.max_norm_Nstar = std::max(gs.max_norm_Nstar, gp.norm_Nstar);
    gs.max_norm_W = std::max(gs.max_norm_W, gp.norm_W);
    gs.max_clusters = std::max(gs.max_clusters, static_cast<int>(gp.clusters.size()));
    gs.points.push_back(std::move(gp));
  }
  // coupled cluster pairs: nonzero inter-cluster block of N
  for (const auto& gp : gs.points) {
    Real sc = std::max(gp.gamma.maxCoeff(), Real(1e-300));
    int n = static_cast<int>(gp.gamma.size());
    for (size_t a = 0; a < gp.clusters.size(); ++a)
      for (size_t b = a + 1; b < gp.clusters.size(); ++b) {
        const auto& qa = gp.clusters[a];
        const auto& qb = gp.clusters[b];
        Real blk = gp.Nz.block(qa.lo, qb.lo, qa.hi - qa.lo, qb.hi - qb.lo).norm();
        if (blk <= 1e-9 * sc) continue;
        Real cand = std::min(gp.gamma[0], std::abs(qb.gamma - qa.gamma) / n);
        gs.c_circ = std::min(gs.c_circ, cand);
      }
  }
  return gs;
}

inline std::string germ_csv(const GermScan& gs, int dim, int n) {
  std::ostringstream os;
  for (int a = 0; a < dim; ++a) os << "theta_" << (a + 1) << ",";
  for (int l = 0; l < n; ++l) os << "gamma_" << (l + 1) << ",";
  for (int l = 0; l < n; ++l) os << "mu_" << (l + 1) << ",";
  for (int l = 0; l < n; ++l) os << "nu_" << (l + 1) << ",";
  os << "norm_N,norm_N0,norm_Nstar,clusters\n";
  for (const auto& gp : gs.points) {
    for (int a = 0; a < dim; ++a) os << JsonValue::fmt(gp.theta[a]) << ",";
    for (int l = 0; l < n; ++l) os << JsonValue::fmt(gp.gamma[l]) << ",";
    for (int l = 0; l < n; ++l) os << JsonValue::fmt(gp.mu[l]) << ",";
    for (int l = 0; l < n; ++l) os << JsonValue::fmt(gp.nu[l]) << ",";
    os << JsonValue::fmt(gp.norm_N) << "," << JsonValue::fmt(gp.norm_N0) << ","
       << JsonValue::fmt(gp.norm_Nstar) << "," << gp.clusters.size() << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// route agreement: germ formulas vs the abstract threshold machinery applied
// to the discrete fiber factorization along the same direction

struct TwoWayReport {
  Real dev_S = 0, dev_N = 0, dev_N1 = 0, dev_nu = 0;
  Real max_dev() const { return std::max({dev_S, dev_N, dev_N1, dev_nu}); }
};

inline TwoWayReport germ_two_way(const CellProblem& c, const CorrectorSet& cs,
                                 const RVec& theta) {
  const int n = c.n(), K = c.K();
  const Eigen::Index h = static_cast<Eigen::Index>(n) * K;

  Mat X0m = fiber_factor(c, FiberVariant::hat, RVec(RVec::Zero(c.lattice.dim)));
  // direction part: same Cholesky sandwich with the constant symbol b(theta)
  Mat Bth = Mat::Zero(static_cast<Eigen::Index>(c.m()) * K, h);
  Mat bth = c.sym.at(theta);
  for (int i = 0; i < K; ++i)
    Bth.block(static_cast<Eigen::Index>(i) * c.m(), static_cast<Eigen::Index>(i) * n,
              c.m(), n) = bth;
  Mat G = Mat::Zero(static_cast<Eigen::Index>(c.m()) * K, static_cast<Eigen::Index>(c.m()) * K);
  for (int j = 0; j < K; ++j)
    for (const auto& [dg, Mg] : c.g.coeffs) {
      IVec ti(c.lattice.dim);
      for (int a = 0; a < c.lattice.dim; ++a) ti[a] = c.modes.idx[j][a] + dg[a];
      int i = c.modes.find(ti);
      if (i >= 0)
        G.block(static_cast<Eigen::Index>(i) * c.m(), static_cast<Eigen::Index>(j) * c.m(),
                c.m(), c.m()) = Mg;
    }
  Mat X1m = cholesky_factor(herm(G)).adjoint() * Bth;

  Mat M;
  if (c.has_f()) M = conv_matrix(c.f, c.modes);
  PencilFamily fam = build_family(X0m, X1m, M);
  if (fam.n != n)
    throw DegenerateKernel("fiber factor kernel dimension " + std::to_string(fam.n));
  ThresholdSet th = compute_threshold_set(fam);

  Mat E = Mat::Zero(h, n);
  E.block(static_cast<Eigen::Index>(c.modes.zero) * n, 0, n, n) = Mat::Identity(n, n);
  Mat Y = c.has_f() ? Mat(M.partialPivLu().solve(E)) : E;

  GermPoint gp = germ_at(c, cs, theta);
  Real floor = 1e-2 * gp.gamma.maxCoeff();  // vanishing blocks stay comparable
  auto rel = [floor](const Mat& got, const Mat& want) {
    return op_norm(Mat(got - want)) / std::max(op_norm(want), floor);
  };
  TwoWayReport rep;
  rep.dev_S = rel(Mat(Y.adjoint() * th.S * Y), gp.S);
  rep.dev_N = rel(Mat(Y.adjoint() * th.N * Y), gp.Nmat);
  rep.dev_N1 = rel(Mat(Y.adjoint() * th.N10 * Y), gp.N1mat);
  RVec na = th.nu, ng = gp.nu;
  std::sort(na.data(), na.data() + na.size());
  std::sort(ng.data(), ng.data() + ng.size());
  Real sc = std::max(gp.gamma.maxCoeff(), Real(1));
  rep.dev_nu = (na - ng).cwiseAbs().maxCoeff() / sc;
  return rep;
}

}  // namespace homog
