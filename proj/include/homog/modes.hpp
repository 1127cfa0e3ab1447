#pragma once
#include <algorithm>
#include <functional>
#include <map>
#include <vector>

#include "homog/errors.hpp"
#include "homog/lattice.hpp"
#include "homog/types.hpp"

namespace homog {

// Finite dual-lattice mode set {b : |b| <= cutoff * 2 r0}, closed under
// negation, with deterministic ordering (by |b|, then lexicographic index).
struct ModeSet {
  Lattice lattice;
  int cutoff = 0;
  Real radius = 0;
  std::vector<IVec> idx;        // integer exponents
  std::vector<RVec> vec;        // dual vectors
  std::map<IVec, int> lookup;
  int zero = -1;                // position of the zero mode

  int count() const { return static_cast<int>(idx.size()); }
  int find(const IVec& m) const {
    auto it = lookup.find(m);
    return it != lookup.end() ? it->second : -1;
  }
  int negate(int i) const {
    IVec m = idx[i];
    for (auto& v : m) v = -v;
    return find(m);
  }
};

inline ModeSet make_modes(const Lattice& lat, int cutoff) {
  ModeSet ms;
  ms.lattice = lat;
  ms.cutoff = cutoff;
  ms.radius = cutoff * 2 * lat.r0;

  // |m_l| <= |a_l| |b| / (2 pi), so a Frobenius-norm box is safe
  int range = static_cast<int>(std::ceil(ms.radius * lat.basis.norm() / (2 * pi))) + 2;

  std::vector<std::pair<std::pair<Real, IVec>, RVec>> items;
  IVec m(lat.dim, 0);
  std::function<void(int)> rec = [&](int axis) {
    if (axis == lat.dim) {
      RVec v = lat.dual_vector(m);
      if (v.norm() <= ms.radius + 1e-9) items.push_back({{v.norm(), m}, v});
      return;
    }
    for (int q = -range; q <= range; ++q) {
      m[axis] = q;
      rec(axis + 1);
    }
  };
  rec(0);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.first.first != b.first.first) return a.first.first < b.first.first;
    return a.first.second < b.first.second;
  });
  for (size_t i = 0; i < items.size(); ++i) {
    ms.idx.push_back(items[i].first.second);
    ms.vec.push_back(items[i].second);
    ms.lookup[items[i].first.second] = static_cast<int>(i);
  }
  ms.zero = ms.find(IVec(lat.dim, 0));
  if (ms.zero < 0) throw HomogError("mode set misses the zero mode");
  for (int i = 0; i < ms.count(); ++i)
    if (ms.negate(i) < 0) throw HomogError("mode set not closed under negation");
  return ms;
}

}  // namespace homog
