// Acceptance gate: one pass/fail line per criterion, exit 0/1/2 on
// ok / criterion failure / unexpected error.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "homog/cell.hpp"
#include "homog/dynamics.hpp"
#include "homog/germ.hpp"
#include "homog/pencil.hpp"
#include "homog/residual_check.hpp"
#include "homog/scenario.hpp"

using namespace homog;

namespace {

int g_failures = 0;
int g_errors = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void criterion(int id, const std::string& label,
               const std::function<Outcome()>& body) {
  auto t0 = std::chrono::steady_clock::now();
  Outcome oc;
  bool errored = false;
  try {
    oc = body();
  } catch (const std::exception& e) {
    errored = true;
    oc.pass = false;
    oc.detail = std::string("error: ") + e.what();
  }
  double dt = seconds_since(t0);
  std::printf("C%02d %s  %s: %s (%.1f s)\n", id, oc.pass ? "PASS" : "FAIL",
              label.c_str(), oc.detail.c_str(), dt);
  std::fflush(stdout);
  if (!oc.pass) ++g_failures;
  if (errored) ++g_errors;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct SeededFamily {
  PencilFamily f;
  ThresholdSet th;
};

std::vector<SeededFamily> g_families;  // shared by criteria 1 and 2

void build_families(int count, uint64_t base_seed) {
  g_families.clear();
  g_families.reserve(count);
  for (int j = 0; j < count; ++j) {
    FamilySpec fs = make_random_family(base_seed + 1000003ull * j);
    SeededFamily sf;
    sf.f = build_family(fs.X0, fs.X1, fs.M);
    sf.th = compute_threshold_set(sf.f);
    g_families.push_back(std::move(sf));
  }
}

struct Solved {
  CellProblem c;
  CorrectorSet cs;
};

Solved solve_builtin(const std::string& name, int cutoff = 0) {
  Scenario sc = builtin_scenario(name);
  CellProblem c = make_cell(sc.lattice, sc.sym, sc.g, sc.f,
                            cutoff > 0 ? cutoff : sc.resolved_cutoff());
  CorrectorSet cs = solve_cell(c);
  return {std::move(c), std::move(cs)};
}

std::vector<RVec> circle_grid(int count) {
  std::vector<RVec> dirs;
  dirs.reserve(count);
  for (int i = 0; i < count; ++i) {
    RVec p(2);
    p << std::cos(2 * pi * i / count), std::sin(2 * pi * i / count);
    dirs.push_back(p);
  }
  return dirs;
}

RVec sorted(RVec v) {
  std::sort(v.data(), v.data() + v.size());
  return v;
}

Real sup_ratio_spread(const ScanResult& sr, bool use_sqrt) {
  Real lo = 1e300, hi = 0;
  for (const auto& p : sr.rows) {
    if (!p.is_sup) continue;
    Real r = use_sqrt ? p.ratio_sqrt : p.ratio_linear;
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return hi / lo;
}

}  // namespace

int main() {
  criterion(1, "abstract oracle suite (50 seeded families)", [] {
    auto t0 = std::chrono::steady_clock::now();
    build_families(50, 20240801ull);
    Real worst_g = 0, worst_m = 0, worst_n = 0, worst_sw = 0;
    for (const auto& sf : g_families) {
      auto fits = fit_branch_expansion(sf.f, sf.th);
      Real gscale = sf.th.gamma.maxCoeff();
      for (int l = 0; l < sf.f.n; ++l) {
        worst_g = std::max(worst_g, std::abs(fits[l].gamma - sf.th.gamma[l]) /
                                        sf.th.gamma[l]);
        worst_m = std::max(
            worst_m, std::abs(fits[l].mu - sf.th.mu[l]) /
                         std::max(std::abs(sf.th.mu[l]),
                                  1e-3 * gscale / sf.f.t0));
        worst_n = std::max(
            worst_n, std::abs(fits[l].nu - sf.th.nu[l]) /
                         std::max(std::abs(sf.th.nu[l]),
                                  1e-3 * gscale / (sf.f.t0 * sf.f.t0)));
      }
      worst_sw = std::max(worst_sw, sandwich_check(sf.f, 1e-10, false).max_dev());
    }
    double dt = seconds_since(t0);
    Outcome oc;
    oc.pass = worst_g <= 1e-6 && worst_m <= 1e-4 && worst_n <= 1e-3 &&
              worst_sw <= 1e-10 && dt < 60.0;
    oc.detail = "gamma " + fmt(worst_g) + ", mu " + fmt(worst_m) + ", nu " +
                fmt(worst_n) + ", sandwich " + fmt(worst_sw);
    return oc;
  });

  criterion(2, "threshold residuals flat over the t-window", [] {
    Real worst_proj = 0, worst_defect = 0;
    for (const auto& sf : g_families) {
      ResidualVariation rv = residual_variation(sf.f, sf.th);
      worst_proj = std::max(worst_proj, rv.proj_variation());
      worst_defect = std::max(worst_defect, rv.defect_variation());
    }
    Outcome oc;
    oc.pass = !g_families.empty() && worst_proj < 2.0 && worst_defect < 2.0;
    oc.detail = "projector variation " + fmt(worst_proj) + ", defect variation " +
                fmt(worst_defect);
    return oc;
  });

  criterion(3, "1d effective coefficient equals sqrt(3)", [] {
    auto t0 = std::chrono::steady_clock::now();
    Solved sv = solve_builtin("1d_scalar", 16);
    Real dev = std::abs(sv.cs.g0(0, 0).real() - std::sqrt(3.0)) +
               std::abs(sv.cs.g0(0, 0).imag());
    double dt = seconds_since(t0);
    Outcome oc;
    oc.pass = dev <= 1e-8 && dt < 5.0;
    oc.detail = "|g0 - sqrt(3)| = " + fmt(dev);
    return oc;
  });

  criterion(4, "Voigt-Reuss bracket in every builtin", [] {
    Real worst = 0;
    for (const auto& name : builtin_scenario_names()) {
      Solved sv = solve_builtin(name);
      worst = std::min({worst, sv.cs.vr_upper_min, sv.cs.vr_lower_min});
    }
    Outcome oc;
    oc.pass = worst >= -1e-10;
    oc.detail = "min bracket eigenvalue " + fmt(worst);
    return oc;
  });

  criterion(5, "2d complex cubic term matches (3/2) c^3 sin^3", [] {
    auto t0 = std::chrono::steady_clock::now();
    Solved sv = solve_builtin("2d_complex_beta", 24);
    GermScan gs = scan_germ(sv.c, sv.cs, circle_grid(360));
    const Real c3 = 1.5 * std::pow(0.2, 3);
    Real worst = 0, axis = 0;
    for (const auto& gp : gs.points) {
      Real model = c3 * std::pow(gp.theta[1], 3);
      Real got = gp.Nz(0, 0).real();
      Real tol = std::max(1e-6 * std::abs(model), 1e-12);
      worst = std::max(worst, std::abs(got - model) / tol);
      if (std::abs(std::abs(gp.theta[0]) - 1.0) < 1e-12)
        axis = std::max(axis, gp.norm_N);
    }
    double dt = seconds_since(t0);
    Outcome oc;
    oc.pass = worst <= 1.0 && axis <= 1e-12 && dt < 120.0;
    oc.detail = "worst dev/tol " + fmt(worst) + ", |N| on the axes " + fmt(axis);
    return oc;
  });

  criterion(6, "cubic term vanishes for the real and m=n builtins", [] {
    Real worst = 0;
    for (const char* name : {"2d_real_scalar", "matrix_m_eq_n"}) {
      Solved sv = solve_builtin(name);
      GermScan gs = scan_germ(sv.c, sv.cs, circle_grid(360));
      worst = std::max(worst, gs.max_norm_N);
    }
    Outcome oc;
    oc.pass = worst <= 1e-9;
    oc.detail = "max |N| " + fmt(worst);
    return oc;
  });

  criterion(7, "1d quartic coefficient nonzero and matched by the band fit", [] {
    Solved sv = solve_builtin("1d_scalar");
    Outcome oc;
    oc.pass = true;
    Real worst = 0, nu_min = 1e300;
    for (Real sign : {1.0, -1.0}) {
      RVec th(1);
      th << sign;
      GermPoint gp = germ_at(sv.c, sv.cs, th);
      nu_min = std::min(nu_min, std::abs(gp.nu[0]));
      RVec ts = fit_window(sv.cs);
      RMat lam = band_values(sv.c, sv.cs, FiberVariant::hat, th, ts, true);
      auto fits = fit_series(ts, lam);
      worst = std::max(worst,
                       std::abs(fits[0].nu - gp.nu[0]) / std::abs(gp.nu[0]));
    }
    oc.pass = nu_min > 1e-6 && worst <= 1e-3;
    oc.detail = "|nu| = " + fmt(nu_min) + ", fit dev " + fmt(worst);
    return oc;
  });

  criterion(8, "scaling-law spreads across the (eps, tau) grid", [] {
    auto t0 = std::chrono::steady_clock::now();
    const std::vector<Real> eps = {0.1, 0.05, 0.025}, tau = {1.0, 10.0, 100.0};
    Scenario beta = builtin_scenario("2d_complex_beta");
    Solved gen = solve_builtin("2d_complex_beta", 16);
    ScanResult sg = scan_errors(gen.c, gen.cs, FiberVariant::hat, {3.0}, eps,
                                tau, beta.scan_theta, beta.scan_t, true);
    Real spread_gen = sup_ratio_spread(sg, false);
    Solved zero = solve_builtin("1d_scalar", 16);
    ScanResult sz = scan_errors(zero.c, zero.cs, FiberVariant::hat, {2.0}, eps,
                                tau, 2, 24, true);
    Real spread_zero = sup_ratio_spread(sz, true);
    double dt = seconds_since(t0);
    Outcome oc;
    oc.pass = spread_gen < 2.0 && spread_zero < 2.0 && dt < 600.0;
    oc.detail = "s=3 linear-ratio spread " + fmt(spread_gen) +
                ", s=2 sqrt-ratio spread " + fmt(spread_zero);
    return oc;
  });

  criterion(9, "sharpness probes at the proof scales", [] {
    Solved beta = solve_builtin("2d_complex_beta", 16);
    GermScan gsb = scan_germ(beta.c, beta.cs, circle_grid(360));
    PdeProbe tp = sharpness_probe_pde(beta.c, beta.cs, gsb, "time", 0.1, 4);
    bool mono = true;
    for (size_t j = 1; j < tp.points.size(); ++j)
      if (tp.points[j].ratio < tp.points[j - 1].ratio - 1e-12) mono = false;
    const ProbePoint& last = tp.points.back();
    bool time_ok = mono && last.ratio > 0.2 && last.ratio >= last.bound;

    Solved oned = solve_builtin("1d_scalar", 16);
    GermScan gs1 = scan_germ(oned.c, oned.cs, sphere_grid(1, 2));
    PdeProbe sp = sharpness_probe_pde(oned.c, oned.cs, gs1, "smoothing", 0.1, 4);
    Real min_growth = 1e300;
    for (size_t j = 1; j < sp.points.size(); ++j)
      min_growth =
          std::min(min_growth, sp.points[j].ratio / sp.points[j - 1].ratio);
    bool smooth_ok = sp.points.size() == 4 && min_growth >= 1.15;

    Outcome oc;
    oc.pass = time_ok && smooth_ok;
    oc.detail = "time probe final ratio " + fmt(last.ratio) + " (bound " +
                fmt(last.bound) + ", monotone " + (mono ? "yes" : "no") +
                "), smoothing growth " + fmt(min_growth) + "x per halving";
    return oc;
  });

  criterion(10, "germ data stable under cutoff doubling", [] {
    Real worst_g = 0, worst_N = 0, worst_nu = 0;
    for (const auto& name : builtin_scenario_names()) {
      Scenario sc = builtin_scenario(name);
      int base = sc.resolved_cutoff();
      Solved a = solve_builtin(name, base);
      Solved b = solve_builtin(name, 2 * base);
      worst_g = std::max(worst_g, op_norm(Mat(a.cs.g0 - b.cs.g0)));
      RVec th0;
      if (sc.lattice.dim == 1) {
        th0.resize(1);
        th0 << 1.0;
      } else {
        th0.resize(2);
        th0 << 1.0, 0.0;
      }
      GermPoint ga = germ_at(a.c, a.cs, th0);
      GermPoint gb = germ_at(b.c, b.cs, th0);
      worst_N = std::max(worst_N, op_norm(Mat(ga.Nz - gb.Nz)));
      worst_nu = std::max(
          worst_nu,
          (sorted(ga.nu) - sorted(gb.nu)).cwiseAbs().maxCoeff());
    }
    Outcome oc;
    oc.pass = worst_g < 1e-8 && worst_N < 1e-6 && worst_nu < 1e-4;
    oc.detail = "dg0 " + fmt(worst_g) + ", dN " + fmt(worst_N) + ", dnu " +
                fmt(worst_nu);
    return oc;
  });

  if (g_errors) return 2;
  return g_failures ? 1 : 0;
}
