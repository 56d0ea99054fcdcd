#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "hessobs/penalized_operator.hpp"

namespace support {

using hessobs::SmallVector;
using ScalarField = std::function<double(const SmallVector &)>;

inline double ustar(const SmallVector &x) { return std::exp(0.5 * x.squaredNorm()); }

/// sqrt(det) of the Hessian of exp(|x|^2/2) in 2D: u* sqrt(1 + |x|^2).
inline double ma_rhs(const SmallVector &x) {
  return ustar(x) * std::sqrt(1.0 + x.squaredNorm());
}

inline hessobs::Problem flat_problem(hessobs::SymmetricFunctionSpec spec, int m,
                                     double lo, double hi,
                                     hessobs::CoefficientField coeff,
                                     const ScalarField &obstacle,
                                     const ScalarField &boundary,
                                     const ScalarField *subsolution = nullptr) {
  auto grid = hessobs::ChartGrid::uniform(spec.n, lo, hi, m);
  return hessobs::Problem::build(spec, grid, hessobs::MetricField::flat(grid),
                                 std::move(coeff), obstacle, boundary, subsolution);
}

/// Manufactured det^(1/2) problem on [-1,1]^2 with an inactive obstacle.
inline hessobs::Problem manufactured_ma(int m) {
  static const ScalarField sub = [](const SmallVector &x) {
    return ustar(x) - 0.25 * (1 - x[0] * x[0]) * (1 - x[1] * x[1]);
  };
  return flat_problem(hessobs::SymmetricFunctionSpec::sigma_k_root(2, 2), m, -1.0,
                      1.0,
                      hessobs::CoefficientField::zero(
                          hessobs::CoefficientField::psi_of_x(ma_rhs)),
                      [](const SmallVector &x) { return ustar(x) + 1.0; }, ustar,
                      &sub);
}

inline std::string problem_dir() { return HESSOBS_PROBLEM_DIR; }

} // namespace support
