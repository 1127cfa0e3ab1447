#pragma once
#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "homog/cell.hpp"
#include "homog/germ.hpp"
#include "homog/json_out.hpp"
#include "homog/linalg.hpp"
#include "homog/pencil.hpp"

namespace homog {

// Per-mode scalar smoothing weight eps^s (|b+k|^2 + eps^2)^{-s/2}, replicated
// over the n vector components of each mode.
inline RVec smoothing_weights(const CellProblem& c, const RVec& k, Real eps, Real s) {
  const int n = c.n(), K = c.K();
  RVec w(static_cast<Eigen::Index>(n) * K);
  for (int i = 0; i < K; ++i) {
    Real q = (c.modes.vec[i] + k).squaredNorm();
    Real wi = std::pow(eps, s) * std::pow(q + eps * eps, -s / 2);
    w.segment(static_cast<Eigen::Index>(i) * n, n).setConstant(wi);
  }
  return w;
}

// k-independent border matrices of the sandwiched functional
struct Borders {
  bool active = false;
  Mat Fc, Finvc;  // convolution matrices of f and of the truncated f^{-1}
  Mat f0, f0inv;
};

inline Borders make_borders(const CellProblem& c, const CorrectorSet& cs) {
  Borders b;
  if (!c.has_f()) return b;
  b.active = true;
  b.Fc = conv_matrix(c.f, c.modes);
  b.Finvc = conv_matrix(cs.f_inv, c.modes);
  b.f0 = cs.f0;
  b.f0inv = cs.f0.partialPivLu().solve(Mat::Identity(c.n(), c.n()));
  return b;
}

// One fiber's propagator data: eigendecomposition of the exact operator plus
// the per-mode blocks of the effective comparison operator.
struct FiberPropagator {
  const CellProblem* c = nullptr;
  const Borders* borders = nullptr;
  FiberVariant variant = FiberVariant::hat;
  RVec k;
  EigH eig;               // exact operator
  std::vector<EigH> eff;  // effective operator, block per mode

  FiberPropagator(const CellProblem& cp, const CorrectorSet& cs, const Borders& bd,
                  FiberVariant var, const RVec& kk)
      : c(&cp), borders(&bd), variant(var), k(kk) {
    Mat A = assemble_fiber(cp, cs, var, kk);
    eig = hermitian_eig(A);
    const bool dress = (var == FiberVariant::sandwiched) && bd.active;
    eff.resize(cp.K());
    for (int i = 0; i < cp.K(); ++i) {
      Mat bt = cp.sym.at(RVec(cp.modes.vec[i] + kk));
      Mat blk = bt.adjoint() * cs.g0 * bt;
      if (dress) blk = bd.f0 * blk * bd.f0;
      eff[i] = hermitian_eig(herm(blk));
    }
  }

  Vec u_exact(const Vec& x, Real phi, bool adjoint) const {
    Vec y = eig.V.adjoint() * x;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      y[i] *= std::exp(Cplx(0, (adjoint ? phi : -phi) * eig.w[i]));
    return eig.V * y;
  }

  Vec u_eff(const Vec& x, Real phi, bool adjoint) const {
    const int n = c->n();
    Vec y(x.size());
    for (int q = 0; q < c->K(); ++q) {
      Vec xq = eff[q].V.adjoint() * x.segment(static_cast<Eigen::Index>(q) * n, n);
      for (int a = 0; a < n; ++a)
        xq[a] *= std::exp(Cplx(0, (adjoint ? phi : -phi) * eff[q].w[a]));
      y.segment(static_cast<Eigen::Index>(q) * n, n) = eff[q].V * xq;
    }
    return y;
  }

  Vec block_mul(const Mat& blk, const Vec& x, bool adjoint) const {
    const int n = c->n();
    Vec y(x.size());
    for (int q = 0; q < c->K(); ++q)
      y.segment(static_cast<Eigen::Index>(q) * n, n) =
          (adjoint ? Mat(blk.adjoint()) : blk) *
          x.segment(static_cast<Eigen::Index>(q) * n, n);
    return y;
  }

  // spectral norm of the smoothed propagator difference
  Real error_norm(Real eps, Real tau, Real s) const {
    Real phi = tau / (eps * eps);
    RVec wr = smoothing_weights(*c, k, eps, s);
    Vec w = wr.cast<Cplx>();
    const bool sw = (variant == FiberVariant::sandwiched) && borders->active;
    auto fwd = [&](const Vec& x) -> Vec {
      Vec wx = w.cwiseProduct(x);
      if (!sw) return u_exact(wx, phi, false) - u_eff(wx, phi, false);
      Vec a = borders->Fc * u_exact(borders->Finvc * wx, phi, false);
      Vec b = block_mul(borders->f0, u_eff(block_mul(borders->f0inv, wx, false), phi, false), false);
      return a - b;
    };
    auto adj = [&](const Vec& x) -> Vec {
      Vec r;
      if (!sw) {
        r = u_exact(x, phi, true) - u_eff(x, phi, true);
      } else {
        Vec a = borders->Finvc.adjoint() * u_exact(borders->Fc.adjoint() * x, phi, true);
        Vec b = block_mul(borders->f0inv, u_eff(block_mul(borders->f0, x, true), phi, true), true);
        r = a - b;
      }
      return w.conjugate().cwiseProduct(r);
    };
    return op_norm_free(static_cast<int>(w.size()), fwd, adj);
  }
};

// ---------------------------------------------------------------------------
// band functions and expansion fits

// via_factor: squared singular values of the fiber factor instead of
// eigenvalues of the assembled fiber; the absolute sigma error maps to a
// lambda error ~ 2 sigma_min |X| eps, far below the eigensolver floor |A| eps,
// which matters when fitting the t^3/t^4 coefficients of the lowest bands.
inline RMat band_values(const CellProblem& c, const CorrectorSet& cs,
                        FiberVariant variant, const RVec& theta, const RVec& ts,
                        bool via_factor = false) {
  const int n = c.n();
  RMat lam(ts.size(), n);
  for (Eigen::Index i = 0; i < ts.size(); ++i) {
    RVec k = ts[i] * theta;
    if (via_factor && variant != FiberVariant::effective) {
      Mat X = fiber_factor(c, variant, k);
      Eigen::BDCSVD<Mat> svd(X);
      RVec sv = svd.singularValues();  // descending
      for (int l = 0; l < n; ++l) {
        Real s = sv[sv.size() - 1 - l];
        lam(i, l) = s * s;
      }
    } else {
      Mat A = assemble_fiber(c, cs, variant, k);
      RVec w = hermitian_eigvals(A);
      lam.row(i) = w.head(n).transpose();
    }
  }
  return lam;
}

// Joint least-squares fit lambda(t) = gamma t^2 + mu t^3 + nu t^4 + ... per column.
inline std::vector<BranchFit> fit_series(const RVec& ts, const RMat& lambda) {
  const int npts = static_cast<int>(ts.size()), n = static_cast<int>(lambda.cols());
  RMat basis(npts, 5);
  for (int i = 0; i < npts; ++i)
    for (int p = 0; p < 5; ++p) basis(i, p) = std::pow(ts[i], p + 2);
  std::vector<BranchFit> fits(n);
  for (int l = 0; l < n; ++l) {
    RVec y = lambda.col(l);
    RVec coef = lstsq(basis, y);
    fits[l].gamma = coef[0];
    fits[l].mu = coef[1];
    fits[l].nu = coef[2];
    fits[l].c5 = coef[3];
    fits[l].resid_rel = (y - basis * coef).norm() / std::max(y.norm(), Real(1e-300));
  }
  return fits;
}

inline RVec fit_window(const CorrectorSet& cs, int npts = 12) {
  return log_grid(0.01 * cs.t_hat0, 0.1 * cs.t_hat0, npts);
}

// ---------------------------------------------------------------------------
// (eps, tau, s) scans of the smoothed propagator error

struct ScanPoint {
  std::string variant;
  Real s = 0, eps = 0, tau = 0, t = 0;
  int theta_index = -1;
  Real value = 0, ratio_linear = 0, ratio_sqrt = 0;
  bool is_sup = false;
};

struct ScanResult {
  std::vector<ScanPoint> rows;
};

inline ScanResult scan_errors(const CellProblem& c, const CorrectorSet& cs,
                              FiberVariant variant, const std::vector<Real>& s_list,
                              const std::vector<Real>& eps_list,
                              const std::vector<Real>& tau_list, int n_theta = 8,
                              int n_t = 24, bool sup_only = false) {
  ScanResult sr;
  Borders bd = make_borders(c, cs);
  std::vector<RVec> dirs = sphere_grid(c.lattice.dim, n_theta);
  RVec ts = log_grid(1e-3 * c.lattice.r0, c.lattice.r0, n_t);

  std::vector<ScanPoint> sups;
  for (Real s : s_list)
    for (Real eps : eps_list)
      for (Real tau : tau_list) {
        ScanPoint p;
        p.variant = to_string(variant);
        p.s = s;
        p.eps = eps;
        p.tau = tau;
        p.is_sup = true;
        p.value = -1;
        sups.push_back(p);
      }

  for (size_t di = 0; di < dirs.size(); ++di)
    for (Eigen::Index ti = 0; ti < ts.size(); ++ti) {
      FiberPropagator prop(c, cs, bd, variant, RVec(ts[ti] * dirs[di]));
      size_t cell = 0;
      for (Real s : s_list)
        for (Real eps : eps_list)
          for (Real tau : tau_list) {
            ScanPoint p;
            p.variant = to_string(variant);
            p.s = s;
            p.eps = eps;
            p.tau = tau;
            p.t = ts[ti];
            p.theta_index = static_cast<int>(di);
            p.value = prop.error_norm(eps, tau, s);
            p.ratio_linear = p.value / ((1 + std::abs(tau)) * eps);
            p.ratio_sqrt = p.value / ((1 + std::sqrt(std::abs(tau))) * eps);
            if (p.value > sups[cell].value) {
              sups[cell].value = p.value;
              sups[cell].t = ts[ti];
              sups[cell].theta_index = static_cast<int>(di);
              sups[cell].ratio_linear = p.ratio_linear;
              sups[cell].ratio_sqrt = p.ratio_sqrt;
            }
            ++cell;
            if (!sup_only) sr.rows.push_back(std::move(p));
          }
    }
  for (auto& p : sups) sr.rows.push_back(std::move(p));
  return sr;
}

inline std::string scan_csv(const ScanResult& sr) {
  std::ostringstream os;
  os << "variant,s,eps,tau,t,theta_index,value,ratio_linear,ratio_sqrt\n";
  for (const auto& p : sr.rows) {
    os << p.variant << "," << JsonValue::fmt(p.s) << "," << JsonValue::fmt(p.eps)
       << "," << JsonValue::fmt(p.tau) << ",";
    if (p.is_sup)
      os << "sup";
    else
      os << JsonValue::fmt(p.t);
    os << "," << p.theta_index << "," << JsonValue::fmt(p.value) << ","
       << JsonValue::fmt(p.ratio_linear) << "," << JsonValue::fmt(p.ratio_sqrt)
       << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// sharpness probes at the proof schedules

struct PdeProbe {
  std::string kind;
  Real s_threshold = 0, s_eval = 0;
  RVec theta;
  int branch = 0;
  Real coeff = 0;
  std::vector<ProbePoint> points;
};

namespace detail {

struct ProbeDriver {
  RVec theta;
  int branch = 0;
  Real coeff = 0;
};

inline ProbeDriver argmax_coeff(const GermScan& gs, bool use_nu) {
  ProbeDriver d;
  Real best = -1;
  for (const auto& gp : gs.points) {
    const RVec& v = use_nu ? gp.nu : gp.mu;
    for (int l = 0; l < v.size(); ++l)
      if (std::abs(v[l]) > best) {
        best = std::abs(v[l]);
        d.theta = gp.theta;
        d.branch = l;
        d.coeff = v[l];
      }
  }
  return d;
}

}  // namespace detail

inline PdeProbe sharpness_probe_pde(const CellProblem& c, const CorrectorSet& cs,
                                    const GermScan& gs, const std::string& kind,
                                    Real base_eps = 0.1, int steps = 4,
                                    bool assert_modulus = true) {
  PdeProbe pr;
  pr.kind = kind;
  Borders bd = make_borders(c, cs);
  FiberVariant variant = c.has_f() ? FiberVariant::sandwiched : FiberVariant::hat;
  Real scale = std::max(gs.scale_S, Real(1e-300));
  Real r0 = c.lattice.r0;

  auto eval_point = [&](Real t, Real eps, Real tau, Real s, const RVec& theta,
                        int branch, Real coeff, int order) {
    FiberPropagator prop(c, cs, bd, variant, RVec(t * theta));
    ProbePoint p;
    p.eps = eps;
    p.tau = tau;
    p.t = t;
    p.value = prop.error_norm(eps, tau, s);
    p.ratio = p.value / eps;
    Real lambda = prop.eig.w[branch];
    Real gam = 0;  // germ eigenvalue of the driving branch at this direction
    for (const auto& gp : gs.points)
      if ((gp.theta - theta).norm() < 1e-12) gam = gp.gamma[branch];
    Real phi = tau / (eps * eps);
    Real lam0 = gam * t * t;
    p.modulus = std::abs(std::exp(Cplx(0, -phi * lambda)) - std::exp(Cplx(0, -phi * lam0)));
    Real resid = phi * std::abs(lambda - lam0 - coeff * std::pow(t, order));
    if (resid > 0.3) p.regime_ok = false;
    return p;
  };

  if (kind == "time") {
    detail::ProbeDriver d = detail::argmax_coeff(gs, false);
    if (std::abs(d.coeff) < 1e-9 * scale)
      throw CoefficientZero("time probe needs a direction with nonzero cubic term");
    pr.theta = d.theta;
    pr.branch = d.branch;
    pr.coeff = d.coeff;
    pr.s_threshold = 3;
    pr.s_eval = 3;
    for (int j = 0; j < steps; ++j) {
      Real eps = base_eps / std::pow(2.0, j);
      Real tau = 1.0 / eps;
      Real td = std::cbrt(2 * pi / 3) * std::pow(std::abs(d.coeff * tau), -1.0 / 3) *
                std::pow(eps, 2.0 / 3);
      ProbePoint p = eval_point(td, eps, tau, 3, d.theta, d.branch, d.coeff, 3);
      p.bound = (std::sqrt(2.0) / 3) * eps * tau /
                (2 * pi / (3 * std::abs(d.coeff)) + eps * tau);
      bool zone = td <= r0 &&
                  eps <= std::pow(2 * pi, -0.5) * std::sqrt(std::abs(d.coeff * tau)) *
                             std::pow(r0, 1.5);
      p.regime_ok = p.regime_ok && zone;
      if (assert_modulus && p.regime_ok && p.modulus < std::sqrt(2.0))
        throw HomogError("time probe phase modulus below sqrt(2) inside the regime");
      pr.points.push_back(p);
    }
    return pr;
  }

  if (kind != "smoothing_s2" && kind != "smoothing")
    throw HomogError("unknown probe kind: " + kind);
  if (!gs.N0_zero())
    throw CoefficientZero("smoothing probe requires the cubic block to vanish");
  detail::ProbeDriver d = detail::argmax_coeff(gs, true);
  if (std::abs(d.coeff) < 1e-9 * scale)
    throw CoefficientZero("smoothing probe needs a nonzero quartic coefficient");
  pr.theta = d.theta;
  pr.branch = d.branch;
  pr.coeff = d.coeff;
  pr.s_threshold = 2;
  pr.s_eval = 4.0 / 3;
  Real tau = 1.0;
  Real tcap = std::min(r0, 0.95 * cs.t_hat0);
  auto t_of = [&](Real eps) {
    return std::pow(pi, 0.25) * std::pow(std::abs(d.coeff * tau), -0.25) * std::sqrt(eps);
  };
  Real eps0 = base_eps;
  for (int g = 0; g < 40 && t_of(eps0) > tcap; ++g) eps0 /= 2;
  if (t_of(eps0) > tcap)
    throw HomogError("smoothing probe found no admissible base epsilon");
  for (int j = 0; j < steps; ++j) {
    Real eps = eps0 / std::pow(2.0, j);
    Real te = t_of(eps);
    ProbePoint p = eval_point(te, eps, tau, pr.s_eval, d.theta, d.branch, d.coeff, 4);
    p.regime_ok = p.regime_ok && te <= tcap;
    if (assert_modulus && p.regime_ok && p.modulus < std::sqrt(2.0))
      throw HomogError("smoothing probe phase modulus below sqrt(2) inside the regime");
    pr.points.push_back(p);
  }
  return pr;
}

}  // namespace homog
