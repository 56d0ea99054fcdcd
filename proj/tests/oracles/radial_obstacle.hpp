#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

/// Poisson obstacle problem Lap u = psi off {u = h}, u <= h, with
/// h = a r^2 / 2 and psi < 2a. The solution equals h on r <= r_star and is
/// radial outside, matching h to first order at r_star.
struct RadialObstacle {
  double a = 0.0275;
  double psi = 0.005;
  double r_star = 16.0;

  double obstacle(double x, double y) const { return 0.5 * a * (x * x + y * y); }

  double solution(double x, double y) const {
    const double r2 = x * x + y * y;
    const double s2 = r_star * r_star;
    if (r2 <= s2)
      return 0.5 * a * r2;
    const double b = (a - 0.5 * psi) * s2;
    return 0.5 * a * s2 + 0.25 * psi * (r2 - s2) + 0.5 * b * std::log(r2 / s2);
  }
};

/// Projected SOR for the five-point discretization on [lo,hi]^2 with m points
/// per axis, first coordinate slowest: u <= h, Lap_h u >= psi,
/// complementarity, u = g on the boundary.
struct PsorResult {
  std::vector<double> u;
  int sweeps = 0;
  double last_change = 0.0;
};

template <class Obstacle, class Boundary>
PsorResult psor(int m, double lo, double hi, double psi, const Obstacle &h,
                const Boundary &g, double omega = 1.95, double tol = 1e-13,
                int max_sweeps = 200000) {
  const double dx = (hi - lo) / (m - 1);
  auto coord = [&](int i) { return lo + dx * i; };
  std::vector<double> u(static_cast<std::size_t>(m) * m), ob(u.size());
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const std::size_t p = static_cast<std::size_t>(j) * m + i;
      ob[p] = h(coord(j), coord(i));
      const bool edge = i == 0 || j == 0 || i == m - 1 || j == m - 1;
      u[p] = edge ? g(coord(j), coord(i)) : ob[p];
    }
  PsorResult res;
  for (res.sweeps = 1; res.sweeps <= max_sweeps; ++res.sweeps) {
    double change = 0.0;
    for (int j = 1; j < m - 1; ++j)
      for (int i = 1; i < m - 1; ++i) {
        const std::size_t p = static_cast<std::size_t>(j) * m + i;
        const double gs =
            0.25 * (u[p - 1] + u[p + 1] + u[p - m] + u[p + m] - dx * dx * psi);
        const double next = std::min(ob[p], u[p] + omega * (gs - u[p]));
        change = std::max(change, std::abs(next - u[p]));
        u[p] = next;
      }
    res.last_change = change;
    if (change < tol)
      break;
  }
  res.u = std::move(u);
  return res;
}

} // namespace oracle
