#pragma once
#include <Eigen/Dense>
#include <complex>
#include <vector>
#include <string>

namespace homog {

using Real = double;
using Cplx = std::complex<double>;
using Mat  = Eigen::MatrixXcd;
using Vec  = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;
using IVec = std::vector<int>;

inline constexpr Real pi = 3.14159265358979323846;

inline Vec to_vec(std::initializer_list<Cplx> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (auto& x : xs) v[i++] = x;
  return v;
}

}  // namespace homog
