#pragma once

// Discrete penalized operator
//   r(u) = f(lambda(nabla^2 u + A[u])) - psi[u] - beta_eps(u - h)
// at interior grid points, its Jacobian, and the linear operator
//   L v = F^{ij} nabla_ij v + (F^{ij} A^{ij}_{p_k} - psi_{p_k}) nabla_k v.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "hessobs/chart_geometry.hpp"
#include "hessobs/cone_calculus.hpp"
#include "hessobs/errors.hpp"
#include "hessobs/random.hpp"

namespace hessobs {

// ---------------------------------------------------------------------------
// Coefficients A(x, z, p) and psi(x, z, p)

struct TensorCoefficient {
  SmallMatrix value;
  SmallMatrix dz;
  std::array<SmallMatrix, 3> dp; // dp[k] = d A / d p_k
};

struct ScalarCoefficient {
  double value = 0.0;
  double dz = 0.0;
  SmallVector dp;
};

enum class CoefficientKind { Zero, KappaZG, FixedField, Custom };

inline const char *to_string(CoefficientKind k) {
  switch (k) {
  case CoefficientKind::Zero:
    return "zero";
  case CoefficientKind::KappaZG:
    return "kappa_zg";
  case CoefficientKind::FixedField:
    return "fixed_field";
  case CoefficientKind::Custom:
    return "custom";
  }
  return "?";
}

struct CoefficientField {
  using TensorFn = std::function<TensorCoefficient(
      const SmallVector &x, double z, const SmallVector &p)>;
  using ScalarFn = std::function<ScalarCoefficient(
      const SmallVector &x, double z, const SmallVector &p)>;

  CoefficientKind kind = CoefficientKind::Zero;
  double kappa = 0.0; // KappaZG: A = kappa z g
  TensorFn tensor;    // FixedField / Custom
  ScalarFn psi;
  /// Set after sampling certification of concavity in p and z-monotonicity.
  std::optional<bool> certified;

  static CoefficientField zero(ScalarFn psi) {
    CoefficientField c;
    c.kind = CoefficientKind::Zero;
    c.psi = std::move(psi);
    return c;
  }
  static CoefficientField kappa_zg(double kappa, ScalarFn psi) {
    CoefficientField c;
    c.kind = CoefficientKind::KappaZG;
    c.kappa = kappa;
    c.psi = std::move(psi);
    return c;
  }
  static CoefficientField custom(TensorFn a, ScalarFn psi,
                                 CoefficientKind kind = CoefficientKind::Custom) {
    CoefficientField c;
    c.kind = kind;
    c.tensor = std::move(a);
    c.psi = std::move(psi);
    return c;
  }

  /// psi depending on x only.
  static ScalarFn psi_of_x(std::function<double(const SmallVector &)> fn) {
    return [fn = std::move(fn)](const SmallVector &x, double,
                                const SmallVector &p) {
      ScalarCoefficient s;
      s.value = fn(x);
      s.dz = 0.0;
      s.dp = SmallVector::Zero(p.size());
      return s;
    };
  }
};

inline TensorCoefficient zero_tensor(int n) {
  TensorCoefficient t;
  t.value = SmallMatrix::Zero(n, n);
  t.dz = SmallMatrix::Zero(n, n);
  for (auto &d : t.dp)
    d = SmallMatrix::Zero(n, n);
  return t;
}

// ---------------------------------------------------------------------------
// Problem

/// Fully sampled problem on a chart grid: metric, coefficients, obstacle h,
/// Dirichlet data phi and (optionally) a subsolution.
struct Problem {
  SymmetricFunctionSpec function;
  GridPtr grid;
  MetricField metric;
  CoefficientField coefficients;
  GridFunction obstacle;
  GridFunction boundary;
  std::optional<GridFunction> subsolution;

  static Problem build(
      SymmetricFunctionSpec function, GridPtr grid, MetricField metric,
      CoefficientField coefficients,
      const std::function<double(const SmallVector &)> &obstacle,
      const std::function<double(const SmallVector &)> &boundary,
      const std::function<double(const SmallVector &)> *subsolution = nullptr) {
    function.validate();
    if (function.n != grid->dim())
      throw Error("problem: function dimension n=" + std::to_string(function.n) +
                  " does not match grid dimension " +
                  std::to_string(grid->dim()));
    Problem prob{function,
                 grid,
                 std::move(metric),
                 std::move(coefficients),
                 GridFunction::sample(grid, obstacle),
                 GridFunction::sample(grid, boundary),
                 std::nullopt};
    if (subsolution)
      prob.subsolution = GridFunction::sample(grid, *subsolution);
    return prob;
  }

  /// min over boundary points of h - phi; a well-posed problem has it > 0.
  double boundary_obstacle_gap() const {
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t b : grid->boundary())
      gap = std::min(gap, obstacle[b] - boundary[b]);
    return gap;
  }

  TensorCoefficient eval_A(std::size_t p, const SmallVector &x, double z,
                           const SmallVector &grad) const {
    const int n = grid->dim();
    switch (coefficients.kind) {
    case CoefficientKind::Zero:
      return zero_tensor(n);
    case CoefficientKind::KappaZG: {
      TensorCoefficient t = zero_tensor(n);
      t.value = coefficients.kappa * z * metric.g(p);
      t.dz = coefficients.kappa * metric.g(p);
      return t;
    }
    case CoefficientKind::FixedField:
    case CoefficientKind::Custom:
      return coefficients.tensor(x, z, grad);
    }
    return zero_tensor(n);
  }

  ScalarCoefficient eval_psi(const SmallVector &x, double z,
                             const SmallVector &grad) const {
    return coefficients.psi(x, z, grad);
  }

  /// Boundary values pinned to phi, interior values from `interior`.
  GridFunction with_boundary(GridFunction u) const {
    u.pin_boundary(boundary);
    return u;
  }
};

// ---------------------------------------------------------------------------
// Penalty beta_eps(z) = z^3 / eps for z > 0, 0 otherwise.

struct PenaltyValue {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

inline void require_epsilon(double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw BadEpsilon("penalty parameter epsilon must lie in (0, 1), got " +
                     std::to_string(epsilon));
}

inline PenaltyValue penalty(double epsilon, double z) {
  require_epsilon(epsilon);
  if (z <= 0.0)
    return {};
  return {z * z * z / epsilon, 3.0 * z * z / epsilon, 6.0 * z / epsilon};
}

// ---------------------------------------------------------------------------
// Per-point evaluation

inline constexpr double kPsiFloor = 1e-12;

struct PointEval {
  bool admissible = false;
  Membership membership = Membership::Outside;
  double margin = 0.0; // min_j sigma_j(lambda(U))
  SmallVector x, grad;
  double z = 0.0;
  SmallMatrix raw_hessian;
  SmallMatrix U;
  MetricEigen eig;
  double f = 0.0;
  SmallVector f_i; // tie-averaged df/dlambda_i, aligned with eig.lambda
  SmallMatrix F;   // F^{ij} = dF/dU_ij
  TensorCoefficient A;
  ScalarCoefficient psi;
  PenaltyValue beta;
  double residual = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Averages f_i across clusters of (numerically) repeated eigenvalues.
inline void average_ties(const SmallVector &lambda, SmallVector &fi) {
  const int n = static_cast<int>(lambda.size());
  const double tol = 1e-10 * lambda.norm();
  int start = 0;
  while (start < n) {
    int end = start + 1;
    while (end < n && std::abs(lambda[end - 1] - lambda[end]) <= tol)
      ++end;
    if (end - start > 1) {
      const double mean = fi.segment(start, end - start).mean();
      fi.segment(start, end - start).setConstant(mean);
    }
    start = end;
  }
}

} // namespace detail

/// Evaluates everything the residual (order 0) or the linearization
/// (order 1) needs at interior point p.
inline PointEval evaluate_point(const Problem &prob,
                                const std::vector<double> &u, std::size_t p,
                                double epsilon, int order) {
  const ChartGrid &grid = *prob.grid;
  const int n = grid.dim();
  PointEval e;
  e.x = grid.coord(p);
  e.z = u[p];
  e.grad = fd::gradient(u, grid, p);
  e.raw_hessian = fd::hessian(u, grid, p);
  const SmallMatrix H =
      prob.metric.is_flat()
          ? e.raw_hessian
          : covariant_from_raw(e.raw_hessian, e.grad,
                               prob.metric.christoffel(p), n);
  e.A = prob.eval_A(p, e.x, e.z, e.grad);
  e.U = H + e.A.value;
  e.eig = prob.metric.is_flat()
              ? eigen_flat(e.U)
              : eigen_wrt_metric(e.U, prob.metric.g(p),
                                 &prob.metric.cholesky(p));
  const Eigen::VectorXd lambda = e.eig.lambda;
  const ConePoint cp = cone_membership(prob.function, lambda);
  e.membership = cp.membership;
  e.margin = cp.min_sigma;
  e.admissible = cp.membership == Membership::Interior;
  e.psi = prob.eval_psi(e.x, e.z, e.grad);
  if (!(e.psi.value >= kPsiFloor))
    throw Error("right-hand side psi must be positive; psi=" +
                std::to_string(e.psi.value) + " at grid point " +
                std::to_string(p));
  e.beta = penalty(epsilon, e.z - prob.obstacle[p]);
  if (!e.admissible)
    return e;
  const auto fd = evaluate(prob.function, lambda, order >= 1 ? 1 : 0);
  e.f = fd.value;
  e.residual = e.f - e.psi.value - e.beta.value;
  if (order < 1)
    return e;
  e.f_i = fd.grad;
  detail::average_ties(e.eig.lambda, e.f_i);
  e.F = e.eig.frame * e.f_i.asDiagonal() * e.eig.frame.transpose();
  return e;
}

// ---------------------------------------------------------------------------
// Residual

struct ResidualResult {
  std::vector<double> values;            // per grid point; NaN where undefined
  std::vector<std::size_t> inadmissible; // flat indices
  double margin = std::numeric_limits<double>::infinity();
  double max_norm = 0.0; // over admissible interior points
  double l2_sq = 0.0;

  bool admissible() const noexcept { return inadmissible.empty(); }
};

inline ResidualResult residual(const GridFunction &u, const Problem &prob,
                               double epsilon) {
  require_epsilon(epsilon);
  ResidualResult r;
  r.values.assign(prob.grid->size(), 0.0);
  for (std::size_t p : prob.grid->interior()) {
    const PointEval e = evaluate_point(prob, u.values, p, epsilon, 0);
    r.margin = std::min(r.margin, e.margin);
    if (!e.admissible) {
      r.inadmissible.push_back(p);
      r.values[p] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    r.values[p] = e.residual;
    r.max_norm = std::max(r.max_norm, std::abs(e.residual));
    r.l2_sq += e.residual * e.residual;
  }
  return r;
}

/// Throws NotAdmissible if any interior point leaves the cone.
inline ResidualResult require_residual(const GridFunction &u,
                                       const Problem &prob, double epsilon) {
  ResidualResult r = residual(u, prob, epsilon);
  if (!r.admissible())
    throw NotAdmissible("state not admissible at " +
                            std::to_string(r.inadmissible.size()) + " points",
                        r.inadmissible);
  return r;
}

// ---------------------------------------------------------------------------
// Linearization

struct LinearizedSystem {
  std::vector<SmallMatrix> F;           // F^{ij} per grid point (interior)
  std::vector<SmallVector> first_order; // F^{ij} A^{ij}_{p_k} - psi_{p_k}
  std::vector<double> zero_order;       // F^{ij} A^{ij}_z - psi_z - beta'
  std::vector<double> residual;         // per interior unknown
  Eigen::SparseMatrix<double> jacobian; // interior x interior
  double min_ellipticity = std::numeric_limits<double>::infinity();
  double margin = std::numeric_limits<double>::infinity();
};

namespace detail {

inline double contract(const SmallMatrix &F, const SmallMatrix &B) {
  return (F.array() * B.array()).sum();
}

inline SmallVector first_order_coefficient(const PointEval &e, int n) {
  SmallVector b(n);
  for (int k = 0; k < n; ++k)
    b[k] = contract(e.F, e.A.dp[k]) - e.psi.dp[k];
  return b;
}

inline double zero_order_coefficient(const PointEval &e) {
  return contract(e.F, e.A.dz) - e.psi.dz - e.beta.d1;
}

} // namespace detail

inline LinearizedSystem linearize(const GridFunction &u, const Problem &prob,
                                  double epsilon) {
  require_epsilon(epsilon);
  const ChartGrid &grid = *prob.grid;
  const int n = grid.dim();
  LinearizedSystem sys;
  sys.F.assign(grid.size(), SmallMatrix::Zero(n, n));
  sys.first_order.assign(grid.size(), SmallVector::Zero(n));
  sys.zero_order.assign(grid.size(), 0.0);
  sys.residual.assign(grid.interior_count(), 0.0);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(grid.interior_count() * (n == 2 ? 9 : 19));
  std::vector<std::size_t> bad;
  for (std::size_t p : grid.interior()) {
    const PointEval e = evaluate_point(prob, u.values, p, epsilon, 1);
    sys.margin = std::min(sys.margin, e.margin);
    if (!e.admissible) {
      bad.push_back(p);
      continue;
    }
    const long row = grid.slot(p);
    sys.residual[row] = e.residual;
    sys.F[p] = e.F;
    sys.first_order[p] = detail::first_order_coefficient(e, n);
    sys.zero_order[p] = detail::zero_order_coefficient(e);
    // F = V diag(f_i) V^T with V^T g V = I, so F is g^{-1}-relative
    // diagonal with entries f_i.
    sys.min_ellipticity = std::min(sys.min_ellipticity, e.f_i.minCoeff());

    // d(nabla_ij v) = d_ij v - Gamma^k_ij d_k v contributes -F:Gamma^k.
    SmallVector b = sys.first_order[p];
    if (!prob.metric.is_flat()) {
      const Christoffel &gamma = prob.metric.christoffel(p);
      for (int k = 0; k < n; ++k)
        b[k] -= detail::contract(e.F, gamma[k]);
    }
    fd::stencil(grid, e.F, b, sys.zero_order[p], [&](long offset, double w) {
      const long col = grid.slot(static_cast<std::size_t>(long(p) + offset));
      if (col >= 0)
        triplets.emplace_back(row, col, w);
    });
  }
  if (!bad.empty())
    throw NotAdmissible("linearize: state not admissible at " +
                            std::to_string(bad.size()) + " points",
                        bad);
  const auto N = static_cast<Eigen::Index>(grid.interior_count());
  sys.jacobian.resize(N, N);
  sys.jacobian.setFromTriplets(triplets.begin(), triplets.end());
  sys.jacobian.makeCompressed();
  return sys;
}

// ---------------------------------------------------------------------------
// The operator L (principal and first-order parts only)

/// Applies L, linearized at u, to v (v carries its own boundary values).
inline std::vector<double> apply_operator_L(const LinearizedSystem &sys,
                                            const Problem &prob,
                                            const GridFunction &v) {
  const ChartGrid &grid = *prob.grid;
  const int n = grid.dim();
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t p : grid.interior()) {
    const SmallMatrix raw = fd::hessian(v.values, grid, p);
    const SmallVector dv = fd::gradient(v.values, grid, p);
    const SmallMatrix cov =
        prob.metric.is_flat()
            ? raw
            : covariant_from_raw(raw, dv, prob.metric.christoffel(p), n);
    out[p] = detail::contract(sys.F[p], cov) + sys.first_order[p].dot(dv);
  }
  return out;
}

inline std::vector<double> operator_L(const GridFunction &u,
                                      const Problem &prob, double epsilon,
                                      const GridFunction &v) {
  return apply_operator_L(linearize(u, prob, epsilon), prob, v);
}

// ---------------------------------------------------------------------------
// Laplace-Beltrami operator g^{ij} nabla_ij (used to blend initial iterates)

inline Eigen::SparseMatrix<double> laplace_beltrami_matrix(const Problem &prob) {
  const ChartGrid &grid = *prob.grid;
  const int n = grid.dim();
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t p : grid.interior()) {
    const long row = grid.slot(p);
    const SmallMatrix &ginv = prob.metric.g_inv(p);
    SmallVector b = SmallVector::Zero(n);
    if (!prob.metric.is_flat())
      for (int k = 0; k < n; ++k)
        b[k] = -detail::contract(ginv, prob.metric.christoffel(p)[k]);
    fd::stencil(grid, ginv, b, 0.0, [&](long offset, double w) {
      const long col = grid.slot(static_cast<std::size_t>(long(p) + offset));
      if (col >= 0)
        triplets.emplace_back(row, col, w);
    });
  }
  const auto N = static_cast<Eigen::Index>(grid.interior_count());
  Eigen::SparseMatrix<double> A(N, N);
  A.setFromTriplets(triplets.begin(), triplets.end());
  A.makeCompressed();
  return A;
}

/// Right-hand side contribution of known boundary values to the
/// Laplace-Beltrami rows: returns -(stencil applied to boundary entries).
inline Eigen::VectorXd laplace_beltrami_boundary_rhs(const Problem &prob,
                                                    const GridFunction &data) {
  const ChartGrid &grid = *prob.grid;
  const int n = grid.dim();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(grid.interior_count());
  for (std::size_t p : grid.interior()) {
    const long row = grid.slot(p);
    const SmallMatrix &ginv = prob.metric.g_inv(p);
    SmallVector b = SmallVector::Zero(n);
    if (!prob.metric.is_flat())
      for (int k = 0; k < n; ++k)
        b[k] = -detail::contract(ginv, prob.metric.christoffel(p)[k]);
    fd::stencil(grid, ginv, b, 0.0, [&](long offset, double w) {
      const auto q = static_cast<std::size_t>(long(p) + offset);
      if (grid.slot(q) < 0)
        rhs[row] -= w * data[q];
    });
  }
  return rhs;
}

// ---------------------------------------------------------------------------
// Sampling certification of the coefficient conditions:
//   p_concavity:    -psi and A^{xi xi} concave in p
//   z_monotonicity: -psi_z >= 0 and A^{xi xi}_z >= 0
//   psi_positivity: psi > 0

struct CoefficientCertificate {
  std::vector<ConditionResult> conditions;
  int sample_count = 0;
  std::uint64_t seed = 0;

  bool passed() const {
    return std::all_of(conditions.begin(), conditions.end(),
                       [](const ConditionResult &c) { return c.passed; });
  }
  const ConditionResult *find(const std::string &name) const {
    for (const auto &c : conditions)
      if (c.name == name)
        return &c;
    return nullptr;
  }
};

struct CertificationOptions {
  int samples = 1000;
  std::uint64_t seed = 42;
  double p_range = 10.0; // p_k uniform in [-p_range, p_range]
  double tol = 1e-9;
};

inline CoefficientCertificate certify_coefficients(const Problem &prob,
                                                   const CertificationOptions &opt = {}) {
  const ChartGrid &grid = *prob.grid;
  const int n = grid.dim();
  CoefficientCertificate cert;
  cert.sample_count = opt.samples;
  cert.seed = opt.seed;

  // z range: the span of the boundary data and finite obstacle values, widened by 1.
  double zlo = std::numeric_limits<double>::infinity(), zhi = -zlo;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    zlo = std::min(zlo, prob.boundary[p]);
    zhi = std::max(zhi, prob.boundary[p]);
    if (std::abs(prob.obstacle[p]) < 1e6) {
      zlo = std::min(zlo, prob.obstacle[p]);
      zhi = std::max(zhi, prob.obstacle[p]);
    }
  }
  zlo -= 1.0;
  zhi += 1.0;

  ConditionResult concave{"p_concavity", "-psi and A^{xi xi} concave in p", true,
                          false, std::numeric_limits<double>::infinity(), {}};
  ConditionResult monotone{"z_monotonicity", "-psi_z >= 0 and A^{xi xi}_z >= 0",
                           true, false, std::numeric_limits<double>::infinity(), {}};
  ConditionResult positive{"psi_positivity", "psi > 0", true, false,
                           std::numeric_limits<double>::infinity(), {}};

  auto witness = [&](const SmallVector &x, double z, const SmallVector &p) {
    Eigen::VectorXd w(2 * n + 1);
    w.head(n) = x;
    w[n] = z;
    w.tail(n) = p;
    return w;
  };
  auto record = [&](ConditionResult &c, double slack, const Eigen::VectorXd &w) {
    if (slack < c.observed) {
      c.observed = slack;
      c.witness = w;
    }
  };
  auto min_eig = [](const SmallMatrix &M) {
    Eigen::SelfAdjointEigenSolver<SmallMatrix> es(0.5 * (M + M.transpose()),
                                                  Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  };

  Rng rng(opt.seed);
  for (int s = 0; s < opt.samples; ++s) {
    const auto idx = static_cast<std::size_t>(rng.uniform() * grid.size()) % grid.size();
    const SmallVector x = grid.coord(idx);
    const double z = rng.uniform(zlo, zhi);
    SmallVector p(n), q(n);
    for (int k = 0; k < n; ++k) {
      p[k] = rng.uniform(-opt.p_range, opt.p_range);
      q[k] = rng.uniform(-opt.p_range, opt.p_range);
    }
    const SmallVector mid = 0.5 * (p + q);

    const ScalarCoefficient sp = prob.eval_psi(x, z, p);
    const ScalarCoefficient sq = prob.eval_psi(x, z, q);
    const ScalarCoefficient sm = prob.eval_psi(x, z, mid);
    const TensorCoefficient ap = prob.eval_A(idx, x, z, p);
    const TensorCoefficient aq = prob.eval_A(idx, x, z, q);
    const TensorCoefficient am = prob.eval_A(idx, x, z, mid);

    const double scale_psi = 1.0 + std::abs(sp.value) + std::abs(sq.value);
    const double scale_A = 1.0 + ap.value.cwiseAbs().maxCoeff() +
                           aq.value.cwiseAbs().maxCoeff();
    // midpoint inequalities for concavity of -psi and A^{xi xi}
    const double psi_gap = (0.5 * (sp.value + sq.value) - sm.value) / scale_psi;
    const double A_gap = min_eig(am.value - 0.5 * (ap.value + aq.value)) / scale_A;
    record(concave, std::min(psi_gap, A_gap), witness(x, z, p));

    const double mono = std::min(-sp.dz / (1.0 + std::abs(sp.value)),
                                 min_eig(ap.dz) / scale_A);
    record(monotone, mono, witness(x, z, p));
    record(positive, sp.value, witness(x, z, p));
  }
  concave.passed = concave.observed >= -opt.tol;
  monotone.passed = monotone.observed >= -opt.tol;
  positive.passed = positive.observed >= kPsiFloor;
  cert.conditions = {concave, monotone, positive};
  return cert;
}

} // namespace hessobs
