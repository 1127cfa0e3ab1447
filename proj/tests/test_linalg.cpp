#include "doctest.h"

#include <random>

#include "homog/errors.hpp"
#include "homog/linalg.hpp"

using namespace homog;

namespace {

Mat random_hermitian(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> g;
  Mat A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = Cplx(g(rng), g(rng));
  return herm(A);
}

Mat random_complex(int r, int c, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> g;
  Mat A(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) A(i, j) = Cplx(g(rng), g(rng));
  return A;
}

}  // namespace

TEST_CASE("hermitian_eig diagonalizes and sorts ascending") {
  Mat A = random_hermitian(12, 101);
  EigH e = hermitian_eig(A);
  REQUIRE(e.w.size() == 12);
  for (int i = 0; i + 1 < 12; ++i) CHECK(e.w[i] <= e.w[i + 1]);
  Mat D = Mat::Zero(12, 12);
  for (int i = 0; i < 12; ++i) D(i, i) = e.w[i];
  CHECK((A * e.V - e.V * D).norm() <= 1e-12 * A.norm());
  CHECK((e.V.adjoint() * e.V - Mat::Identity(12, 12)).norm() <= 1e-12);
}

TEST_CASE("hermitian_eig large-dimension path matches small path") {
  const int n = 140;  // above the LAPACK switchover
  Mat A = random_hermitian(n, 202);
  EigH e = hermitian_eig(A);
  Mat D = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) D(i, i) = e.w[i];
  CHECK((A * e.V - e.V * D).norm() <= 1e-11 * A.norm());
  CHECK((e.V.adjoint() * e.V - Mat::Identity(n, n)).norm() <= 1e-11);
  RVec w2 = hermitian_eigvals(A);
  CHECK((e.w - w2).cwiseAbs().maxCoeff() <= 1e-11 * A.norm());
}

TEST_CASE("singular_values and op_norm agree with a known matrix") {
  Mat A = Mat::Zero(3, 2);
  A(0, 0) = 3.0;
  A(1, 1) = Cplx(0, 4.0);
  RVec sv = singular_values(A);
  REQUIRE(sv.size() == 2);
  CHECK(std::abs(sv[0] - 4.0) <= 1e-14);
  CHECK(std::abs(sv[1] - 3.0) <= 1e-14);
  CHECK(std::abs(op_norm(A) - 4.0) <= 1e-14);
}

TEST_CASE("op_norm_free matches dense op_norm") {
  Mat A = random_complex(13, 9, 303);
  auto fwd = [&](const Vec& x) -> Vec { return A * x; };
  auto adj = [&](const Vec& x) -> Vec { return A.adjoint() * x; };
  Real free_norm = op_norm_free(9, fwd, adj, 60, 1e-12);
  CHECK(std::abs(free_norm - op_norm(A)) <= 1e-9 * op_norm(A));
}

TEST_CASE("lstsq recovers the exact solution of a consistent system") {
  std::mt19937_64 rng(404);
  std::normal_distribution<Real> g;
  RMat A(10, 4);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 4; ++j) A(i, j) = g(rng);
  // badly scaled columns exercise the equilibration
  A.col(1) *= 1e-6;
  A.col(3) *= 1e5;
  RVec x0(4);
  x0 << 1.5, -2.0, 0.25, 3.0;
  RVec x = lstsq(A, RVec(A * x0));
  CHECK((x - x0).cwiseAbs().maxCoeff() <= 1e-9 * x0.cwiseAbs().maxCoeff());
}

TEST_CASE("cholesky_factor reproduces the matrix and rejects indefinite input") {
  Mat B = random_complex(6, 6, 505);
  Mat A = B * B.adjoint() + 0.1 * Mat::Identity(6, 6);
  Mat L = cholesky_factor(A);
  CHECK((L * L.adjoint() - A).norm() <= 1e-12 * A.norm());
  CHECK_THROWS_AS(cholesky_factor(Mat(-Mat::Identity(4, 4))), SolveFailure);
}

TEST_CASE("herm symmetrizes") {
  Mat A = random_complex(5, 5, 606);
  Mat H = herm(A);
  CHECK((H - H.adjoint()).norm() <= 1e-15 * A.norm());
  CHECK((H - 0.5 * (A + A.adjoint())).norm() <= 1e-15 * A.norm());
}

TEST_CASE("inv_sqrt_pd inverts the square") {
  Mat B = random_complex(7, 7, 707);
  Mat A = B * B.adjoint() + 0.5 * Mat::Identity(7, 7);
  Mat S = inv_sqrt_pd(A);
  CHECK((S - S.adjoint()).norm() <= 1e-12 * S.norm());
  CHECK((S * A * S - Mat::Identity(7, 7)).norm() <= 1e-11);
}
