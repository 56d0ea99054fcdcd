#pragma once

// Damped Newton for the penalized equation with a cone-admissibility
// safeguard, continuation over a decreasing penalty schedule, and the
// initial-iterate builder.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "hessobs/chart_geometry.hpp"
#include "hessobs/errors.hpp"
#include "hessobs/estimate_monitors.hpp"
#include "hessobs/penalized_operator.hpp"

namespace hessobs {

// ---------------------------------------------------------------------------
// Schedule and configuration

struct PenaltySchedule {
  double eps0 = 1e-1;
  double ratio = 1e-1;
  double eps_min = 1e-6;

  void validate() const {
    if (!(eps0 > 0.0 && eps0 < 1.0))
      throw BadEpsilon("schedule: eps0 must lie in (0, 1)");
    if (!(ratio > 0.0 && ratio < 1.0))
      throw BadEpsilon("schedule: ratio must lie in (0, 1)");
    if (!(eps_min > 0.0 && eps_min <= eps0))
      throw BadEpsilon("schedule: eps_min must lie in (0, eps0]");
  }

  /// eps_k = eps0 ratio^k clipped at eps_min. Values are rounded to 12
  /// significant digits so decade schedules print as 1e-3 and not
  /// 0.0010000000000000002.
  std::vector<double> values() const {
    validate();
    auto tidy = [](double x) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.12g", x);
      return std::strtod(buf, nullptr);
    };
    std::vector<double> out{eps0};
    for (int k = 1; k < 10000; ++k) {
      const double e = tidy(eps0 * std::pow(ratio, k));
      if (e <= eps_min * (1.0 + 1e-12))
        break;
      out.push_back(e);
    }
    if (out.back() > eps_min)
      out.push_back(eps_min);
    return out;
  }
};

struct NewtonConfig {
  double tol_residual = 1e-8; // max-norm
  int max_iters = 50;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double fraction_to_boundary = 0.99;
  double min_step = 1e-10;

  /// tol_residual 1e-9 for the linear case sigma_1, 1e-8 otherwise.
  static NewtonConfig defaults_for(const SymmetricFunctionSpec &spec) {
    NewtonConfig c;
    const bool linear = spec.family == Family::SigmaKRoot && spec.k == 1;
    c.tol_residual = linear ? 1e-9 : 1e-8;
    return c;
  }

  void validate() const {
    if (!(tol_residual > 0.0))
      throw Error("newton: tol_residual must be > 0");
    if (max_iters < 1)
      throw Error("newton: max_iters must be >= 1");
    auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!open_unit(armijo_c) || !open_unit(backtrack) ||
        !open_unit(fraction_to_boundary))
      throw Error("newton: armijo_c, backtrack and fraction_to_boundary must "
                  "lie in (0, 1)");
  }
};

enum class SolveStatus {
  Converged,
  LineSearchStall,
  MaxItersExceeded,
  SingularJacobian
};

inline const char *to_string(SolveStatus s) {
  switch (s) {
  case SolveStatus::Converged:
    return "converged";
  case SolveStatus::LineSearchStall:
    return "line_search_stall";
  case SolveStatus::MaxItersExceeded:
    return "max_iters_exceeded";
  case SolveStatus::SingularJacobian:
    return "singular_jacobian";
  }
  return "?";
}

struct SolveReport {
  double epsilon = 0.0;
  SolveStatus status = SolveStatus::MaxItersExceeded;
  int iterations = 0;
  std::vector<double> residual_history; // max-norm, starting iterate first
  std::vector<double> step_history;     // accepted step lengths
  double margin = 0.0;                  // min_j sigma_j over interior points
  double min_ellipticity = 0.0;         // min f_i over the last linearization
  /// min(u - u_sub); NaN without a subsolution.
  double subsolution_dominance = std::numeric_limits<double>::quiet_NaN();
  std::string diagnosis;

  bool converged() const noexcept { return status == SolveStatus::Converged; }
  double final_residual() const {
    return residual_history.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : residual_history.back();
  }
};

struct NewtonResult {
  GridFunction u;
  SolveReport report;
};

// ---------------------------------------------------------------------------
// Newton

namespace detail {

inline double min_difference(const GridFunction &a, const GridFunction &b) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < a.values.size(); ++p)
    m = std::min(m, a[p] - b[p]);
  return m;
}

} // namespace detail

inline NewtonResult newton_solve(const GridFunction &u0, const Problem &prob,
                                 double epsilon, const NewtonConfig &cfg,
                                 const GridFunction *u_sub = nullptr) {
  cfg.validate();
  require_epsilon(epsilon);
  const ChartGrid &grid = *prob.grid;
  NewtonResult out{prob.with_boundary(u0), {}};
  SolveReport &rep = out.report;
  rep.epsilon = epsilon;
  GridFunction &u = out.u;

  ResidualResult r = residual(u, prob, epsilon);
  if (!r.admissible())
    throw NotAdmissible("newton_solve: starting iterate not admissible at " +
                            std::to_string(r.inadmissible.size()) + " points",
                        r.inadmissible);
  rep.residual_history.push_back(r.max_norm);
  rep.margin = r.margin;

  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  bool analyzed = false;
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(grid.interior_count()));
  const auto &interior = grid.interior();

  auto finish = [&](SolveStatus s, std::string why) {
    rep.status = s;
    rep.diagnosis = std::move(why);
    if (u_sub)
      rep.subsolution_dominance = detail::min_difference(u, *u_sub);
    return out;
  };

  for (int it = 0;; ++it) {
    if (r.max_norm <= cfg.tol_residual)
      return finish(SolveStatus::Converged, "");
    if (it >= cfg.max_iters) {
      char buf[128];
      std::snprintf(buf, sizeof buf,
                    "no convergence in %d iterations; residual %.3e", it,
                    r.max_norm);
      return finish(SolveStatus::MaxItersExceeded, buf);
    }
    const LinearizedSystem sys = linearize(u, prob, epsilon);
    rep.min_ellipticity = sys.min_ellipticity;
    if (!analyzed) {
      lu.analyzePattern(sys.jacobian);
      analyzed = true;
    }
    lu.factorize(sys.jacobian);
    if (lu.info() != Eigen::Success)
      return finish(SolveStatus::SingularJacobian,
                    "sparse factorization failed: " + lu.lastErrorMessage());
    for (Eigen::Index i = 0; i < rhs.size(); ++i)
      rhs[i] = -sys.residual[static_cast<std::size_t>(i)];
    const Eigen::VectorXd delta = lu.solve(rhs);
    if (!delta.allFinite())
      return finish(SolveStatus::SingularJacobian,
                    "Newton direction is not finite");

    // Backtracking: admissible with margin >= (1 - tau) margin, and Armijo
    // decrease of ||r||_2^2 (directional derivative -2 ||r||^2).
    const double margin_floor = (1.0 - cfg.fraction_to_boundary) * r.margin;
    double t = 1.0;
    bool accepted = false;
    GridFunction trial = u;
    ResidualResult rt;
    while (t >= cfg.min_step) {
      for (std::size_t s = 0; s < interior.size(); ++s)
        trial.values[interior[s]] =
            u.values[interior[s]] + t * delta[static_cast<Eigen::Index>(s)];
      rt = residual(trial, prob, epsilon);
      if (rt.admissible() && rt.margin >= margin_floor &&
          rt.l2_sq <= (1.0 - 2.0 * cfg.armijo_c * t) * r.l2_sq) {
        accepted = true;
        break;
      }
      t *= cfg.backtrack;
    }
    if (!accepted) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "line search stalled below step %.1e; residual %.3e, "
                    "admissibility margin %.3e",
                    cfg.min_step, r.max_norm, r.margin);
      return finish(SolveStatus::LineSearchStall, buf);
    }
    u = std::move(trial);
    r = std::move(rt);
    rep.iterations = it + 1;
    rep.step_history.push_back(t);
    rep.residual_history.push_back(r.max_norm);
    rep.margin = r.margin;
  }
}

// ---------------------------------------------------------------------------
// Initial iterate

namespace detail {

inline bool dominated_by_obstacle(const GridFunction &u, const Problem &prob) {
  for (std::size_t p = 0; p < u.values.size(); ++p)
    if (u[p] > prob.obstacle[p])
      return false;
  return true;
}

/// Admissible everywhere with f(lambda(U)) >= psi pointwise (beta = 0 is
/// implied by u <= h).
inline bool is_subsolution(const GridFunction &u, const Problem &prob,
                           std::string *why = nullptr) {
  if (!dominated_by_obstacle(u, prob)) {
    if (why)
      *why = "exceeds the obstacle";
    return false;
  }
  const ResidualResult r = residual(u, prob, 0.5);
  if (!r.admissible()) {
    if (why)
      *why = "not admissible at " + std::to_string(r.inadmissible.size()) +
             " points";
    return false;
  }
  for (std::size_t p : prob.grid->interior())
    if (r.values[p] < 0.0) {
      if (why)
        *why = "f(lambda) < psi at grid point " + std::to_string(p);
      return false;
    }
  return true;
}

} // namespace detail

/// The supplied subsolution, or a builder: u = a w + v with
/// w = |x - x_c|^2 / 2 and v discrete-harmonic (Laplace-Beltrami) with
/// boundary data phi - a w, scanning a until u is an admissible
/// subsolution below the obstacle. If some candidate is only admissible and
/// below the obstacle, it is lifted by a solve with a larger right side.
inline GridFunction default_initializer(const Problem &prob) {
  const ChartGrid &grid = *prob.grid;
  if (prob.subsolution) {
    const GridFunction &s = *prob.subsolution;
    for (std::size_t b : grid.boundary())
      if (std::abs(s[b] - prob.boundary[b]) >
          1e-9 * (1.0 + std::abs(prob.boundary[b])))
        throw NoAdmissibleStart(
            "supplied subsolution does not match the boundary data");
    const ResidualResult r = residual(s, prob, 0.5);
    if (!r.admissible())
      throw NoAdmissibleStart("supplied subsolution is not admissible at " +
                              std::to_string(r.inadmissible.size()) +
                              " points");
    if (!detail::dominated_by_obstacle(s, prob))
      throw NoAdmissibleStart("supplied subsolution exceeds the obstacle");
    return s;
  }

  const int n = grid.dim();
  SmallVector xc(n);
  for (int a = 0; a < n; ++a)
    xc[a] = 0.5 * (grid.lo(a) + grid.hi(a));
  GridFunction w(prob.grid);
  for (std::size_t p = 0; p < grid.size(); ++p)
    w[p] = 0.5 * (grid.coord(p) - xc).squaredNorm();

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(laplace_beltrami_matrix(prob));
  if (lu.info() != Eigen::Success)
    throw NoAdmissibleStart("Laplace-Beltrami factorization failed");
  GridFunction phi_data(prob.grid), w_data(prob.grid);
  phi_data.pin_boundary(prob.boundary);
  w_data.pin_boundary(w);
  const Eigen::VectorXd v_phi =
      lu.solve(laplace_beltrami_boundary_rhs(prob, phi_data));
  const Eigen::VectorXd v_w = lu.solve(laplace_beltrami_boundary_rhs(prob, w_data));

  std::string why;
  std::optional<GridFunction> admissible_start;
  for (int step = 0; step <= 160; ++step) {
    const double a = std::exp2(0.25 * step);
    GridFunction u(prob.grid);
    u.pin_boundary(prob.boundary);
    for (std::size_t s = 0; s < grid.interior_count(); ++s) {
      const std::size_t p = grid.interior()[s];
      const auto i = static_cast<Eigen::Index>(s);
      u[p] = a * w[p] + v_phi[i] - a * v_w[i];
    }
    if (detail::is_subsolution(u, prob, &why))
      return u;
    if (!admissible_start && residual(u, prob, 0.5).admissible() &&
        detail::dominated_by_obstacle(u, prob))
      admissible_start = std::move(u);
  }

  // Lift an admissible start: the solution of the penalized problem with
  // right side c psi has f(lambda) = c psi + beta >= psi.
  if (admissible_start) {
    for (double c : {1.1, 1.5, 2.0, 4.0}) {
      Problem lifted = prob;
      lifted.coefficients.psi = [psi = prob.coefficients.psi,
                                 c](const SmallVector &x, double z,
                                    const SmallVector &p) {
        ScalarCoefficient s = psi(x, z, p);
        s.value *= c;
        s.dz *= c;
        s.dp *= c;
        return s;
      };
      lifted.subsolution.reset();
      NewtonConfig cfg = NewtonConfig::defaults_for(prob.function);
      cfg.max_iters = 100;
      const NewtonResult nr =
          newton_solve(*admissible_start, lifted, 0.1, cfg, nullptr);
      if (nr.report.converged() && detail::is_subsolution(nr.u, prob, &why))
        return nr.u;
      if (!nr.report.converged())
        why = "lifting solve " + std::string(to_string(nr.report.status));
    }
  }
  throw NoAdmissibleStart("builtin subsolution search failed (" + why +
                          "); supply a subsolution");
}

// ---------------------------------------------------------------------------
// Continuation

struct ContinuationOptions {
  bool audit = true;
  AuditOptions audit_options;
  bool quiet = true;
};

struct ContinuationStep {
  double epsilon = 0.0;
  GridFunction u;
  SolveReport report;
  NormBundle norms;
  ContactSet contact;
  std::optional<InequalityAudit> audit;
};

struct ContinuationResult {
  std::vector<ContinuationStep> steps;
  SweepReport sweep;
  GridFunction initial;
  bool failed = false;
  double failed_epsilon = std::numeric_limits<double>::quiet_NaN();
  std::string diagnosis;

  bool converged() const noexcept { return !failed && !steps.empty(); }
  /// Solution at the smallest epsilon reached.
  const GridFunction &limit_candidate() const { return steps.back().u; }
};

inline ContinuationResult continuation_solve(const Problem &prob,
                                             const PenaltySchedule &schedule,
                                             const NewtonConfig &cfg,
                                             const ContinuationOptions &opt = {}) {
  const std::vector<double> eps = schedule.values();
  ContinuationResult res;
  res.initial = default_initializer(prob);
  GridFunction current = res.initial;
  std::vector<NormBundle> rows;
  for (double e : eps) {
    NewtonResult nr = newton_solve(current, prob, e, cfg, &res.initial);
    if (!opt.quiet) {
      std::fprintf(stderr, "eps %.3g: %s after %d iterations, residual %.3e\n",
                   e, to_string(nr.report.status), nr.report.iterations,
                   nr.report.final_residual());
    }
    ContinuationStep step;
    step.epsilon = e;
    step.report = nr.report;
    step.u = std::move(nr.u);
    if (!step.report.converged()) {
      res.failed = true;
      res.failed_epsilon = e;
      res.diagnosis = "eps " + std::to_string(e) + ": " + step.report.diagnosis;
      res.steps.push_back(std::move(step));
      break;
    }
    step.norms = compute_norm_bundle(step.u, prob, e);
    step.contact = extract_contact_set(step.u, prob.obstacle, e,
                                       step.norms.penalty_sup,
                                       step.norms.hess_norm);
    if (opt.audit)
      step.audit =
          audit_inequalities(step.u, res.initial, prob, e, opt.audit_options);
    rows.push_back(step.norms);
    current = step.u;
    res.steps.push_back(std::move(step));
  }
  res.sweep = sweep_summary(rows);
  return res;
}

} // namespace hessobs
