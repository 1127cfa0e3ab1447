#pragma once
#include <cmath>
#include <vector>

#include "homog/errors.hpp"
#include "homog/linalg.hpp"
#include "homog/types.hpp"

namespace homog {

// First-order symbol b(xi) = sum_l xi_l b_l, with m x n coefficient matrices,
// m >= n and b(theta) of full column rank on the unit sphere.
struct Symbol {
  int dim = 0, m = 0, n = 0;
  std::vector<Mat> b;  // dim matrices, each m x n

  Mat at(const RVec& xi) const {
    Mat out = Mat::Zero(m, n);
    for (int l = 0; l < dim; ++l) out += Cplx(xi[l], 0) * b[l];
    return out;
  }
};

inline std::vector<RVec> sphere_grid(int dim, int count) {
  std::vector<RVec> pts;
  if (dim == 1) {
    RVec p(1), q(1);
    p[0] = 1;
    q[0] = -1;
    pts = {p, q};
  } else if (dim == 2) {
    pts.reserve(count);
    for (int i = 0; i < count; ++i) {
      Real a = 2 * pi * i / count;
      RVec p(2);
      p << std::cos(a), std::sin(a);
      pts.push_back(p);
    }
  } else {
    // Fibonacci sphere
    pts.reserve(count);
    const Real ga = pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
      Real z = 1.0 - 2.0 * (i + 0.5) / count;
      Real r = std::sqrt(std::max(0.0, 1.0 - z * z));
      RVec p(3);
      p << r * std::cos(ga * i), r * std::sin(ga * i), z;
      pts.push_back(p);
    }
  }
  return pts;
}

struct SymbolBounds {
  Real alpha0 = 0, alpha1 = 0;
};

// min/max of the spectrum of b(theta)* b(theta) over the sphere (grid estimate).
inline SymbolBounds estimate_symbol_bounds(const Symbol& s, int grid = 720) {
  SymbolBounds out;
  out.alpha0 = 1e300;
  out.alpha1 = 0;
  for (const auto& th : sphere_grid(s.dim, grid)) {
    Mat bt = s.at(th);
    RVec ev = hermitian_eigvals(Mat(bt.adjoint() * bt));
    out.alpha0 = std::min(out.alpha0, ev[0]);
    out.alpha1 = std::max(out.alpha1, ev[ev.size() - 1]);
  }
  if (out.alpha0 <= 1e-12 * std::max(out.alpha1, Real(1)))
    throw RankDeficientSymbol("b(theta) loses rank on the sphere");
  return out;
}

}  // namespace homog
