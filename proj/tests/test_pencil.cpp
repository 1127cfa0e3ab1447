#include "doctest.h"

#include <algorithm>
#include <random>
#include <vector>

#include "homog/errors.hpp"
#include "homog/pencil.hpp"
#include "homog/residual_check.hpp"

using namespace homog;

namespace {

PencilFamily family_from_seed(uint64_t seed) {
  FamilySpec fs = make_random_family(seed);
  return build_family(fs.X0, fs.X1, fs.M);
}

// first seed at or after `seed` whose admissible family carries a weight M
PencilFamily weighted_family_from_seed(uint64_t seed) {
  for (int hop = 0; hop < 64; ++hop, ++seed) {
    PencilFamily f = family_from_seed(seed);
    if (f.has_M()) return f;
  }
  throw std::runtime_error("no weighted family in seed range");
}

RVec sorted(RVec v) {
  std::sort(v.data(), v.data() + v.size());
  return v;
}

}  // namespace

TEST_CASE("log_grid hits its endpoints geometrically") {
  RVec t = log_grid(0.1, 10.0, 3);
  REQUIRE(t.size() == 3);
  CHECK(std::abs(t[0] - 0.1) <= 1e-15);
  CHECK(std::abs(t[1] - 1.0) <= 1e-12);
  CHECK(std::abs(t[2] - 10.0) <= 1e-12);
}

TEST_CASE("make_random_family is deterministic in the seed") {
  FamilySpec a = make_random_family(42);
  FamilySpec b = make_random_family(42);
  CHECK(a.seed_used == b.seed_used);
  CHECK((a.X0 - b.X0).norm() == 0);
  CHECK((a.X1 - b.X1).norm() == 0);
  CHECK(a.M.size() == b.M.size());
  FamilySpec c = make_random_family(43);
  CHECK((a.seed_used != c.seed_used || (a.X0 - c.X0).norm() > 0));
}

TEST_CASE("build_family produces consistent projectors and kernel bases") {
  PencilFamily f = family_from_seed(7);
  const int h = f.dim_in();
  CHECK(f.n >= 1);
  CHECK(f.nstar >= f.n);
  CHECK((f.P - f.P.adjoint()).norm() <= 1e-13);
  CHECK((f.P * f.P - f.P).norm() <= 1e-12);
  CHECK(std::abs(f.P.trace().real() - f.n) <= 1e-10);
  CHECK(std::abs(f.Pstar.trace().real() - f.nstar) <= 1e-10);
  CHECK((f.X0e * f.P).norm() <= 1e-12);
  CHECK((f.X0e.adjoint() * f.Pstar).norm() <= 1e-12);
  CHECK((f.X0e * f.Kn).norm() <= 1e-12);
  CHECK((f.Kn.adjoint() * f.Kn - Mat::Identity(f.n, f.n)).norm() <= 1e-12);
  CHECK((f.Kn * f.Kn.adjoint() - f.P).norm() <= 1e-12);
  for (int i = 0; i + 1 < f.sig.size(); ++i) CHECK(f.sig[i] >= f.sig[i + 1]);
  CHECK(f.d0 > 0);
  CHECK(f.delta > 0);
  CHECK(f.delta < f.d0);
  CHECK(f.t0 > 0);
  CHECK((f.X_at(0.5) - (f.X0e + 0.5 * f.X1e)).norm() <= 1e-15);
  Mat A = f.A_at(0.5);
  CHECK((A - A.adjoint()).norm() <= 1e-13 * A.norm());
  (void)h;
}

TEST_CASE("full-rank X0 has no kernel and is rejected") {
  Mat X0 = Mat::Identity(5, 5);
  Mat X1 = Mat::Identity(5, 5);
  CHECK_THROWS_AS(build_family(X0, X1), DegenerateKernel);
}

TEST_CASE("correctors satisfy their defining equations") {
  for (uint64_t seed : {3u, 9u}) {
    PencilFamily f = family_from_seed(seed);
    CorrectorOps c = compute_correctors(f);
    const int h = f.dim_in();
    Mat Ih = Mat::Identity(h, h);
    CHECK((c.Z - c.Z * f.P).norm() <= 1e-12);          // supported on the kernel
    CHECK((f.Kn.adjoint() * c.Z).norm() <= 1e-12);     // range orthogonal to it
    CHECK((f.X0e * c.Z + (Ih - f.Pstar) * f.X1e * f.P).norm() <= 1e-12);
    CHECK((c.R - f.Pstar * f.X1e * f.P).norm() <= 1e-14);
    CHECK((c.R2 - (f.X0e * c.Z2 + f.X1e * c.Z)).norm() <= 1e-14);
    CHECK((f.X0e.adjoint() * c.R2 + (Ih - f.P) * (f.X1e.adjoint() * c.R)).norm() <=
          1e-12);
  }
}

TEST_CASE("threshold set diagonalizes the cascade in its refined basis") {
  PencilFamily f = family_from_seed(5);
  ThresholdSet th = compute_threshold_set(f);
  const int n = f.n;
  REQUIRE(th.gamma.size() == n);
  for (int l = 0; l < n; ++l) CHECK(th.gamma[l] > 0);
  for (int l = 0; l + 1 < n; ++l) CHECK(th.gamma[l] <= th.gamma[l + 1]);
  CHECK(std::abs(th.c_star - th.gamma[0]) <= 1e-14);
  CHECK((th.S - f.P * th.S * f.P).norm() <= 1e-11 * std::max(1.0, op_norm(th.S)));
  CHECK((th.basis.adjoint() * th.basis - Mat::Identity(n, n)).norm() <= 1e-12);
  Mat Sg = th.basis.adjoint() * th.S * th.basis;
  Mat N0g = th.basis.adjoint() * th.N0 * th.basis;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      Real sref = a == b ? th.gamma[a] : 0.0;
      Real mref = a == b ? th.mu[a] : 0.0;
      CHECK(std::abs(Sg(a, b) - sref) <= 1e-10 * th.gamma.maxCoeff());
      CHECK(std::abs(N0g(a, b) - mref) <=
            1e-9 * std::max(1e-300, op_norm(th.N)));
    }
  CHECK((th.N - th.N0 - th.Nstar).norm() <= 1e-13 * std::max(1.0, op_norm(th.N)));
  CHECK((th.K - th.K0 - th.N).norm() <= 1e-13 * std::max(1.0, op_norm(th.K)));
}

TEST_CASE("fitted band coefficients match the threshold eigen-data") {
  for (uint64_t seed : {1u, 6u, 14u}) {
    PencilFamily f = family_from_seed(seed);
    ThresholdSet th = compute_threshold_set(f);
    auto fits = fit_branch_expansion(f, th);
    REQUIRE(static_cast<int>(fits.size()) == f.n);
    Real gscale = th.gamma.maxCoeff();
    for (int l = 0; l < f.n; ++l) {
      CHECK(std::abs(fits[l].gamma - th.gamma[l]) <= 1e-6 * th.gamma[l]);
      CHECK(std::abs(fits[l].mu - th.mu[l]) <=
            1e-4 * std::max(std::abs(th.mu[l]), 1e-3 * gscale / f.t0));
      CHECK(std::abs(fits[l].nu - th.nu[l]) <=
            1e-3 * std::max(std::abs(th.nu[l]), 1e-3 * gscale / (f.t0 * f.t0)));
    }
  }
}

TEST_CASE("weighted families pass the conjugation identities") {
  PencilFamily f = weighted_family_from_seed(20);
  REQUIRE(f.has_M());
  SandwichReport rep = sandwich_check(f, 1e-10, false);
  CHECK(rep.max_dev() <= 1e-10);
}

TEST_CASE("riesz projector tracks P for small t") {
  PencilFamily f = family_from_seed(8);
  for (Real rel : {1e-3, 1e-2}) {
    Real t = rel * f.t0;
    Mat F = riesz_projector(f, t);
    CHECK((F * F - F).norm() <= 1e-11);
    CHECK(std::abs(F.trace().real() - f.n) <= 1e-9);
    CHECK(op_norm(Mat(F - f.P)) <= 0.5);
  }
}

TEST_CASE("low-band residuals are flat over the fit window") {
  for (uint64_t seed : {2u, 12u}) {
    PencilFamily f = family_from_seed(seed);
    ThresholdSet th = compute_threshold_set(f);
    ResidualVariation rv = residual_variation(f, th);
    CHECK(rv.proj_min > 0);
    CHECK(rv.defect_min > 0);
    CHECK(rv.proj_variation() < 2.0);
    CHECK(rv.defect_variation() < 2.0);
  }
}

TEST_CASE("doubled families resolve clusters with pair-copied coefficients") {
  FamilySpec fs = make_random_family(11);
  const int hs = static_cast<int>(fs.X0.rows());
  const int h = static_cast<int>(fs.X0.cols());
  Mat M = fs.M.size() > 0 ? fs.M : Mat(Mat::Identity(h, h));

  Mat X0d = Mat::Zero(2 * hs, 2 * h), X1d = Mat::Zero(2 * hs, 2 * h);
  X0d.topLeftCorner(hs, h) = fs.X0;
  X0d.bottomRightCorner(hs, h) = fs.X0;
  X1d.topLeftCorner(hs, h) = fs.X1;
  X1d.bottomRightCorner(hs, h) = fs.X1;
  Mat Md = Mat::Zero(2 * h, 2 * h);
  Md.topLeftCorner(h, h) = M;
  Md.bottomRightCorner(h, h) = M;
  std::mt19937_64 rng(991);
  Mat U = detail::random_unitary(rng, 2 * h);  // mixes the two copies

  PencilFamily base = build_family(fs.X0, fs.X1, fs.M);
  ThresholdSet tb = compute_threshold_set(base);
  PencilFamily dbl = build_family(X0d, X1d, Mat(Md * U));
  ThresholdSet td = compute_threshold_set(dbl);

  REQUIRE(dbl.n == 2 * base.n);
  for (const auto& q : td.clusters) CHECK(q.hi - q.lo == 2);
  RVec gd = sorted(td.gamma), md = sorted(td.mu), nd = sorted(td.nu);
  Real gs = tb.gamma.maxCoeff();
  Real ns = std::max({std::abs(tb.nu.minCoeff()), std::abs(tb.nu.maxCoeff()),
                      Real(1e-300)});
  RVec gb = sorted(tb.gamma), mb = sorted(tb.mu), nb = sorted(tb.nu);
  for (int l = 0; l < base.n; ++l) {
    CHECK(std::abs(gd[2 * l] - gb[l]) <= 1e-10 * gs);
    CHECK(std::abs(gd[2 * l + 1] - gb[l]) <= 1e-10 * gs);
    CHECK(std::abs(md[2 * l] - mb[l]) <= 1e-10 * gs);
    CHECK(std::abs(md[2 * l + 1] - mb[l]) <= 1e-10 * gs);
    CHECK(std::abs(nd[2 * l] - nb[l]) <= 1e-9 * std::max(gs, ns));
    CHECK(std::abs(nd[2 * l + 1] - nb[l]) <= 1e-9 * std::max(gs, ns));
  }
}

TEST_CASE("smoothed propagator error records stay in range") {
  PencilFamily f = family_from_seed(4);
  ThresholdSet th = compute_threshold_set(f);
  RVec ts = log_grid(1e-2 * f.t0, 1e-1 * f.t0, 5);
  auto recs = exp_error_abstract(f, th, ts, 0.1, 1.0, 2.0);
  REQUIRE(recs.size() == 5);
  for (const auto& r : recs) {
    CHECK(r.value >= 0);
    CHECK(r.value <= 2.0 + 1e-12);  // difference of unitaries, weight <= 1
    CHECK(std::abs(r.ratio_linear - r.value / (2.0 * 0.1)) <= 1e-15);
    CHECK(std::abs(r.ratio_sqrt - r.value / (2.0 * 0.1)) <= 1e-15);
  }
}
