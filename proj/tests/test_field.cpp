#include "doctest.h"

#include <cmath>

#include "homog/errors.hpp"
#include "homog/field.hpp"

using namespace homog;

namespace {

Mat m1(Cplx a) {
  Mat m(1, 1);
  m << a;
  return m;
}

// g = 2 + cos x as a 1d scalar field
PeriodicField cos_field(Real mean, Real amp) {
  PeriodicField f;
  f.dim = 1;
  f.rows = f.cols = 1;
  f.coeffs[{0}] = m1(mean);
  f.coeffs[{1}] = m1(amp / 2);
  f.coeffs[{-1}] = m1(amp / 2);
  return f;
}

}  // namespace

TEST_CASE("coeff, add, has, mean") {
  PeriodicField f = cos_field(2.0, 1.0);
  CHECK(f.has({1}));
  CHECK(!f.has({2}));
  CHECK(std::abs(f.coeff({1})(0, 0) - 0.5) <= 1e-15);
  CHECK(f.coeff({7})(0, 0) == Cplx(0, 0));
  f.add({1}, m1(0.25));
  CHECK(std::abs(f.coeff({1})(0, 0) - 0.75) <= 1e-15);
  f.add({2}, m1(0.1));
  CHECK(f.has({2}));
  CHECK(std::abs(f.mean()(0, 0) - 2.0) <= 1e-15);
}

TEST_CASE("bandwidth is the l2 ceiling of the support") {
  PeriodicField f;
  f.dim = 2;
  f.rows = f.cols = 1;
  f.coeffs[{0, 0}] = m1(1);
  CHECK(f.bandwidth() == 0);
  f.coeffs[{1, 1}] = m1(0.1);
  f.coeffs[{-1, -1}] = m1(0.1);
  CHECK(f.bandwidth() == 2);  // ceil(sqrt(2))
  f.coeffs[{3, 0}] = m1(0.1);
  f.coeffs[{-3, 0}] = m1(0.1);
  CHECK(f.bandwidth() == 3);
}

TEST_CASE("is_hermitian checks the conjugate-transpose pairing") {
  PeriodicField f;
  f.dim = 1;
  f.rows = f.cols = 2;
  Mat c(2, 2);
  c << Cplx(0.5, 0), Cplx(0, 0.25), Cplx(0.1, 0), Cplx(0.3, 0);
  f.coeffs[{0}] = Mat::Identity(2, 2);
  f.coeffs[{1}] = c;
  f.coeffs[{-1}] = c.adjoint();
  CHECK(f.is_hermitian());
  f.coeffs[{-1}] = c;  // breaks the pairing
  CHECK(!f.is_hermitian());
  PeriodicField rect;
  rect.dim = 1;
  rect.rows = 2;
  rect.cols = 1;
  rect.coeffs[{0}] = Mat::Ones(2, 1);
  CHECK(!rect.is_hermitian());
}

TEST_CASE("constant and identity builders") {
  PeriodicField id = PeriodicField::identity(2, 3);
  CHECK(id.dim == 2);
  CHECK(id.rows == 3);
  CHECK(id.coeffs.size() == 1);
  CHECK((id.mean() - Mat::Identity(3, 3)).norm() == 0);
}

TEST_CASE("materialize then truncate recovers a band-limited field exactly") {
  PeriodicField f;
  f.dim = 2;
  f.rows = f.cols = 2;
  Mat c(2, 2);
  c << Cplx(0.3, 0.1), Cplx(0, -0.2), Cplx(0.05, 0), Cplx(0.4, 0);
  f.coeffs[{0, 0}] = Mat::Identity(2, 2) * 2.0;
  f.coeffs[{1, 0}] = c;
  f.coeffs[{-1, 0}] = c.adjoint();
  f.coeffs[{0, 2}] = 0.5 * c;
  f.coeffs[{0, -2}] = 0.5 * c.adjoint();

  FieldGrid g = materialize(f, grid_for(f));
  PeriodicField back = truncate_to_field(g, f.bandwidth());
  for (const auto& [idx, mat] : f.coeffs)
    CHECK((back.coeff(idx) - mat).norm() <= 1e-13);
  // modes absent from f come back as zero
  CHECK(back.coeff({1, 1}).norm() <= 1e-13);
  CHECK((grid_mean(g) - f.mean()).norm() <= 1e-13);
}

TEST_CASE("grid_inverse is the pointwise inverse") {
  PeriodicField f = cos_field(2.0, 1.0);  // 2 + cos >= 1 > 0
  FieldGrid g = materialize(f, {32});
  FieldGrid gi = grid_inverse(g);
  for (int i = 0; i < g.total(); ++i)
    CHECK((g.values[i] * gi.values[i] - Mat::Identity(1, 1)).norm() <= 1e-14);
}

TEST_CASE("grid_inverse rejects a singular point value") {
  PeriodicField f = cos_field(1.0, 1.0);  // 1 + cos vanishes at x = pi
  FieldGrid g = materialize(f, {8});
  bool hit_zero = false;
  for (int i = 0; i < g.total(); ++i)
    if (g.values[i].norm() <= 1e-12) hit_zero = true;
  if (!hit_zero) {  // fall back to an exact zero sample
    g.values[0] = Mat::Zero(1, 1);
  }
  CHECK_THROWS_AS(grid_inverse(g), SingularPointValue);
}

TEST_CASE("sup_operator_norm on a known profile") {
  PeriodicField f = cos_field(2.0, 1.0);
  FieldGrid g = materialize(f, {64});
  CHECK(std::abs(sup_operator_norm(g) - 3.0) <= 1e-12);  // max of 2 + cos on the grid
}
