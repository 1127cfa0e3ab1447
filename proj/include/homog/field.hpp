#pragma once
#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "homog/errors.hpp"
#include "homog/lattice.hpp"
#include "homog/linalg.hpp"
#include "homog/types.hpp"

namespace homog {

// Matrix-valued trigonometric polynomial on the cell, stored as Fourier
// coefficients indexed by integer dual-lattice exponents.
struct PeriodicField {
  int dim = 0, rows = 0, cols = 0;
  std::map<IVec, Mat> coeffs;

  Mat coeff(const IVec& idx) const {
    auto it = coeffs.find(idx);
    return it != coeffs.end() ? it->second : Mat(Mat::Zero(rows, cols));
  }
  void add(const IVec& idx, const Mat& c) {
    auto it = coeffs.find(idx);
    if (it != coeffs.end())
      it->second += c;
    else
      coeffs[idx] = c;
  }
  bool has(const IVec& idx) const { return coeffs.count(idx) > 0; }

  int bandwidth() const {  // max |index|_2, integer ceiling
    Real b = 0;
    for (const auto& [idx, c] : coeffs) {
      Real s = 0;
      for (int v : idx) s += Real(v) * v;
      b = std::max(b, std::sqrt(s));
    }
    return static_cast<int>(std::ceil(b - 1e-12));
  }

  bool is_hermitian(Real tol = 1e-12) const {
    if (rows != cols) return false;
    Real scale = 0;
    for (const auto& [idx, c] : coeffs) scale = std::max(scale, c.norm());
    for (const auto& [idx, c] : coeffs) {
      IVec neg(idx.size());
      for (size_t i = 0; i < idx.size(); ++i) neg[i] = -idx[i];
      if ((coeff(neg) - c.adjoint()).norm() > tol * std::max(scale, Real(1)))
        return false;
    }
    return true;
  }

  Mat mean() const { return coeff(IVec(dim, 0)); }

  static PeriodicField constant(int dim, const Mat& value) {
    PeriodicField f;
    f.dim = dim;
    f.rows = static_cast<int>(value.rows());
    f.cols = static_cast<int>(value.cols());
    f.coeffs[IVec(dim, 0)] = value;
    return f;
  }

  static PeriodicField identity(int dim, int n) {
    return constant(dim, Mat::Identity(n, n));
  }
};

// Pointwise samples of a field on a uniform grid over the unit cell in lattice
// coordinates; exact for trigonometric polynomials once npts exceeds the
// bandwidth range.
struct FieldGrid {
  int dim = 0, rows = 0, cols = 0;
  std::vector<int> npts;          // per axis
  std::vector<Mat> values;        // row-major over the grid

  long total() const {
    long t = 1;
    for (int n : npts) t *= n;
    return t;
  }
};

inline FieldGrid materialize(const PeriodicField& f, const std::vector<int>& npts) {
  FieldGrid g;
  g.dim = f.dim;
  g.rows = f.rows;
  g.cols = f.cols;
  g.npts = npts;
  long tot = g.total();
  g.values.assign(tot, Mat::Zero(f.rows, f.cols));
  std::vector<int> pos(f.dim, 0);
  for (long lin = 0; lin < tot; ++lin) {
    long rem = lin;
    for (int a = f.dim - 1; a >= 0; --a) {
      pos[a] = static_cast<int>(rem % npts[a]);
      rem /= npts[a];
    }
    Mat v = Mat::Zero(f.rows, f.cols);
    for (const auto& [idx, c] : f.coeffs) {
      Real phase = 0;
      for (int a = 0; a < f.dim; ++a)
        phase += 2 * pi * Real(idx[a]) * pos[a] / npts[a];
      v += c * std::exp(Cplx(0, phase));
    }
    g.values[lin] = v;
  }
  return g;
}

inline std::vector<int> grid_for(const PeriodicField& f, int min_factor = 2) {
  int bw = std::max(f.bandwidth(), 1);
  int n = 2 * min_factor * bw + 1;
  return std::vector<int>(f.dim, std::max(n, 8));
}

inline Mat grid_mean(const FieldGrid& g) {
  Mat m = Mat::Zero(g.rows, g.cols);
  for (const auto& v : g.values) m += v;
  return m / Real(g.total());
}

// Pointwise inverse on a grid; throws when a point value is singular.
inline FieldGrid grid_inverse(const FieldGrid& g) {
  FieldGrid out = g;
  for (size_t i = 0; i < g.values.size(); ++i) {
    const Mat& v = g.values[i];
    Eigen::PartialPivLU<Mat> lu(v);
    Real cond_floor = v.norm();
    Mat inv = lu.solve(Mat::Identity(v.rows(), v.cols()));
    if (!inv.allFinite() || inv.norm() * cond_floor > 1e14)
      throw SingularPointValue("field value nearly singular on the sampling grid");
    out.values[i] = inv;
  }
  return out;
}

// Fourier coefficients of grid samples, truncated to |index|_inf <= max_idx.
// Exact for band-limited data when the grid resolves the requested range.
inline PeriodicField truncate_to_field(const FieldGrid& g, int max_idx) {
  PeriodicField f;
  f.dim = g.dim;
  f.rows = g.rows;
  f.cols = g.cols;
  std::vector<int> idx(g.dim, -max_idx);
  for (;;) {
    Mat c = Mat::Zero(g.rows, g.cols);
    std::vector<int> pos(g.dim, 0);
    long tot = g.total();
    for (long lin = 0; lin < tot; ++lin) {
      long rem = lin;
      for (int a = g.dim - 1; a >= 0; --a) {
        pos[a] = static_cast<int>(rem % g.npts[a]);
        rem /= g.npts[a];
      }
      Real phase = 0;
      for (int a = 0; a < g.dim; ++a)
        phase += 2 * pi * Real(idx[a]) * pos[a] / g.npts[a];
      c += g.values[lin] * std::exp(Cplx(0, -phase));
    }
    c /= Real(tot);
    if (c.norm() > 1e-300) f.coeffs[IVec(idx.begin(), idx.end())] = c;
    int a = g.dim - 1;
    while (a >= 0 && idx[a] == max_idx) idx[a--] = -max_idx;
    if (a < 0) break;
    ++idx[a];
  }
  return f;
}

inline Real sup_operator_norm(const FieldGrid& g) {
  Real s = 0;
  for (const auto& v : g.values) s = std::max(s, op_norm(v));
  return s;
}

}  // namespace homog
