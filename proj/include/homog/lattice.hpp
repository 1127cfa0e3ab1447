#pragma once
#include <cmath>
#include <functional>
#include <vector>

#include "homog/errors.hpp"
#include "homog/types.hpp"

namespace homog {

// Period lattice with basis columns a_j, dual basis b_l with <b_l, a_j> = 2 pi d_lj.
struct Lattice {
  int dim = 0;
  RMat basis;       // d x d, columns a_j
  RMat dual;        // d x d, columns b_l
  Real cell_volume = 0;
  Real dual_volume = 0;
  Real r0 = 0;      // half the shortest nonzero dual vector

  RVec dual_vector(const IVec& m) const {
    RVec v = RVec::Zero(dim);
    for (int l = 0; l < dim; ++l) v += Real(m[l]) * dual.col(l);
    return v;
  }
};

inline Lattice make_lattice(const RMat& basis) {
  Lattice lat;
  lat.dim = static_cast<int>(basis.rows());
  if (basis.cols() != lat.dim) throw SingularBasis("basis must be square");
  Real det = basis.determinant();
  if (std::abs(det) < 1e-12 * std::pow(basis.norm() + 1e-300, lat.dim))
    throw SingularBasis("basis vectors are linearly dependent");
  lat.basis = basis;
  lat.dual = 2 * pi * basis.inverse().transpose();
  lat.cell_volume = std::abs(det);
  lat.dual_volume = std::abs(lat.dual.determinant());

  Real best = -1;
  const int range = 6;
  IVec m(lat.dim, 0);
  std::vector<IVec> box;
  std::function<void(int)> rec = [&](int axis) {
    if (axis == lat.dim) {
      bool zero = true;
      for (int v : m) zero = zero && v == 0;
      if (!zero) box.push_back(m);
      return;
    }
    for (int v = -range; v <= range; ++v) {
      m[axis] = v;
      rec(axis + 1);
    }
  };
  rec(0);
  for (const auto& mm : box) {
    Real nv = lat.dual_vector(mm).norm();
    if (best < 0 || nv < best) best = nv;
  }
  lat.r0 = best / 2;
  return lat;
}

inline Lattice cubic_lattice(int dim) {
  return make_lattice(RMat(2 * pi * RMat::Identity(dim, dim)));
}

}  // namespace homog
