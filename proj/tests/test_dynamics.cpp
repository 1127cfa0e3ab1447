#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "homog/cell.hpp"
#include "homog/dynamics.hpp"
#include "homog/germ.hpp"
#include "homog/scenario.hpp"

using namespace homog;

namespace {

struct Solved {
  CellProblem c;
  CorrectorSet cs;
};

Solved solved_builtin(const std::string& name, int cutoff) {
  Scenario sc = builtin_scenario(name);
  CellProblem c = make_cell(sc.lattice, sc.sym, sc.g, sc.f, cutoff);
  CorrectorSet cs = solve_cell(c);
  return {std::move(c), std::move(cs)};
}

Vec random_state(Eigen::Index n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> g;
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = Cplx(g(rng), g(rng));
  return v / v.norm();
}

}  // namespace

TEST_CASE("smoothing weights follow the resolvent profile") {
  Solved sv = solved_builtin("1d_scalar", 4);
  RVec k(1);
  k << 0.2;
  const Real eps = 0.1, s = 2.0;
  RVec w = smoothing_weights(sv.c, k, eps, s);
  REQUIRE(w.size() == sv.c.K());
  for (int i = 0; i < sv.c.K(); ++i) {
    Real q = (sv.c.modes.vec[i] + k).squaredNorm();
    Real ref = std::pow(eps, s) * std::pow(q + eps * eps, -s / 2);
    CHECK(std::abs(w[i] - ref) <= 1e-15);
    CHECK(w[i] > 0);
    CHECK(w[i] <= 1.0 + 1e-15);
  }
  RVec w0 = smoothing_weights(sv.c, RVec(RVec::Zero(1)), eps, s);
  CHECK(std::abs(w0[sv.c.modes.zero] - 1.0) <= 1e-15);  // weight 1 at b + k = 0
}

TEST_CASE("borders activate only under a sandwich weight") {
  Solved plain = solved_builtin("1d_scalar", 6);
  CHECK(!make_borders(plain.c, plain.cs).active);
  Solved sw = solved_builtin("sandwich_f", 6);
  Borders b = make_borders(sw.c, sw.cs);
  REQUIRE(b.active);
  CHECK((b.f0 * b.f0inv - Mat::Identity(1, 1)).norm() <= 1e-13);
  // truncated 1/f is an approximate convolution inverse away from the edge
  Mat FiF = b.Finvc * b.Fc;
  const int mid = sw.c.modes.zero;
  CHECK(std::abs(FiF(mid, mid).real() - 1.0) <= 1e-6);
}

TEST_CASE("exact propagator is unitary and satisfies the group law") {
  Solved sv = solved_builtin("sandwich_f", 6);
  Borders bd = make_borders(sv.c, sv.cs);
  RVec k(1);
  k << 0.31;
  FiberPropagator prop(sv.c, sv.cs, bd, FiberVariant::sandwiched, k);
  Vec v = random_state(prop.eig.w.size(), 77);
  Vec u1 = prop.u_exact(v, 3.7, false);
  CHECK(std::abs(u1.norm() - 1.0) <= 1e-12);
  Vec u2 = prop.u_exact(prop.u_exact(v, 1.4, false), 2.3, false);
  CHECK((u1 - u2).norm() <= 1e-12);
  CHECK((prop.u_exact(u1, 3.7, true) - v).norm() <= 1e-12);  // adjoint inverts
  Vec e1 = prop.u_eff(v, 3.7, false);
  CHECK(std::abs(e1.norm() - 1.0) <= 1e-12);
  Vec e2 = prop.u_eff(prop.u_eff(v, 1.4, false), 2.3, false);
  CHECK((e1 - e2).norm() <= 1e-12);
}

TEST_CASE("propagator error vanishes at tau = 0 and stays within range") {
  for (const char* name : {"1d_scalar", "sandwich_f"}) {
    Solved sv = solved_builtin(name, 6);
    Borders bd = make_borders(sv.c, sv.cs);
    FiberVariant var =
        sv.c.has_f() ? FiberVariant::sandwiched : FiberVariant::hat;
    RVec k(1);
    k << 0.2;
    FiberPropagator prop(sv.c, sv.cs, bd, var, k);
    // at tau = 0 only the border truncation survives (exactly zero without f)
    CHECK(prop.error_norm(0.1, 0.0, 2.0) <= (sv.c.has_f() ? 2e-2 : 1e-12));
    Real e = prop.error_norm(0.1, 1.0, 2.0);
    CHECK(e >= 0);
    CHECK(e <= 4.0);  // bounded by the conjugation norms
  }
}

TEST_CASE("factor-side band values agree with the assembled eigenvalues") {
  Solved sv = solved_builtin("sandwich_f", 8);
  RVec th(1);
  th << 1.0;
  RVec ts = log_grid(0.05, 0.3, 4);
  for (FiberVariant var : {FiberVariant::hat, FiberVariant::sandwiched}) {
    RMat a = band_values(sv.c, sv.cs, var, th, ts, false);
    RMat b = band_values(sv.c, sv.cs, var, th, ts, true);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-10 * a.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("fit_series recovers planted expansion coefficients") {
  RVec ts = log_grid(1e-3, 1e-2, 12);
  RMat lam(ts.size(), 2);
  for (int i = 0; i < ts.size(); ++i) {
    Real t = ts[i];
    lam(i, 0) = 1.7 * t * t - 0.3 * t * t * t + 0.05 * std::pow(t, 4);
    lam(i, 1) = 0.9 * t * t + 0.11 * std::pow(t, 3) - 0.2 * std::pow(t, 4) +
                0.4 * std::pow(t, 5);
  }
  auto fits = fit_series(ts, lam);
  REQUIRE(fits.size() == 2);
  CHECK(std::abs(fits[0].gamma - 1.7) <= 1e-9);
  CHECK(std::abs(fits[0].mu + 0.3) <= 1e-6);
  CHECK(std::abs(fits[0].nu - 0.05) <= 1e-3);
  CHECK(std::abs(fits[1].gamma - 0.9) <= 1e-9);
  CHECK(std::abs(fits[1].mu - 0.11) <= 1e-6);
  CHECK(fits[0].resid_rel <= 1e-10);
}

TEST_CASE("fitted lowest band matches the germ data") {
  Solved sv = solved_builtin("1d_scalar", 12);
  GermPoint gp = germ_at(sv.c, sv.cs, RVec(RVec::Ones(1)));
  RVec ts = fit_window(sv.cs);
  CHECK(ts[0] >= 0.009 * sv.cs.t_hat0);
  CHECK(ts[ts.size() - 1] <= 0.11 * sv.cs.t_hat0);
  RMat lam = band_values(sv.c, sv.cs, FiberVariant::hat, RVec(RVec::Ones(1)), ts,
                         true);
  auto fits = fit_series(ts, lam);
  CHECK(std::abs(fits[0].gamma - gp.gamma[0]) <= 1e-8 * gp.gamma[0]);
  CHECK(std::abs(fits[0].nu - gp.nu[0]) <= 1e-3 * std::abs(gp.nu[0]));
}

TEST_CASE("scan rows enumerate the grid and csv has the fixed header") {
  Solved sv = solved_builtin("1d_scalar", 4);
  ScanResult sr = scan_errors(sv.c, sv.cs, FiberVariant::hat, {2.0}, {0.1},
                              {1.0}, 2, 3);
  REQUIRE(sr.rows.size() == 2 * 3 + 1);
  const ScanPoint& sup = sr.rows.back();
  CHECK(sup.is_sup);
  Real vmax = 0;
  for (const auto& p : sr.rows)
    if (!p.is_sup) {
      vmax = std::max(vmax, p.value);
      CHECK(std::abs(p.ratio_linear - p.value / (2.0 * 0.1)) <= 1e-15);
      CHECK(std::abs(p.ratio_sqrt - p.value / (2.0 * 0.1)) <= 1e-15);
    }
  CHECK(std::abs(sup.value - vmax) <= 1e-300);

  std::string csv = scan_csv(sr);
  std::istringstream is(csv);
  std::string header;
  std::getline(is, header);
  CHECK(header == "variant,s,eps,tau,t,theta_index,value,ratio_linear,ratio_sqrt");
  int rows = 0;
  std::string last;
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) {
      ++rows;
      last = line;
    }
  CHECK(rows == 7);
  CHECK(last.find(",sup,") != std::string::npos);
}

TEST_CASE("sup_only keeps only the per-cell suprema") {
  Solved sv = solved_builtin("1d_scalar", 4);
  ScanResult sr = scan_errors(sv.c, sv.cs, FiberVariant::hat, {2.0}, {0.1, 0.05},
                              {1.0, 10.0}, 2, 3, true);
  REQUIRE(sr.rows.size() == 4);
  for (const auto& p : sr.rows) CHECK(p.is_sup);
}

TEST_CASE("smoothing probe runs its schedule with growing ratios") {
  Solved sv = solved_builtin("1d_scalar", 8);
  std::vector<RVec> dirs = sphere_grid(1, 2);
  GermScan gs = scan_germ(sv.c, sv.cs, dirs);
  REQUIRE(gs.N0_zero());
  PdeProbe pr = sharpness_probe_pde(sv.c, sv.cs, gs, "smoothing", 0.1, 3);
  CHECK(pr.kind == "smoothing");
  CHECK(pr.s_threshold == 2.0);
  CHECK(std::abs(pr.s_eval - 4.0 / 3) <= 1e-15);
  REQUIRE(pr.points.size() == 3);
  for (size_t j = 0; j < pr.points.size(); ++j) {
    const auto& p = pr.points[j];
    CHECK(p.regime_ok);
    CHECK(p.modulus >= std::sqrt(2.0) - 1e-12);
    CHECK(std::abs(p.tau - 1.0) <= 1e-15);
    if (j > 0) {
      CHECK(std::abs(p.eps - pr.points[j - 1].eps / 2) <= 1e-15);
      CHECK(p.ratio > pr.points[j - 1].ratio);
    }
  }
}

TEST_CASE("time probe rejects scans without a cubic term") {
  Solved sv = solved_builtin("1d_scalar", 8);
  GermScan gs = scan_germ(sv.c, sv.cs, sphere_grid(1, 2));
  CHECK_THROWS_AS(sharpness_probe_pde(sv.c, sv.cs, gs, "time", 0.1, 2),
                  CoefficientZero);
}
