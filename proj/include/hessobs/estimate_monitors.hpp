#pragma once

// Run-time monitors for a solved penalized state: the norms the a priori
// estimates bound, pointwise audits of the comparison inequalities against
// the subsolution, and the discrete contact set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hessobs/chart_geometry.hpp"
#include "hessobs/cone_calculus.hpp"
#include "hessobs/penalized_operator.hpp"

namespace hessobs {

// ---------------------------------------------------------------------------
// Norms

struct NormBundle {
  double epsilon = 0.0;
  double c0_norm = 0.0;           // max |u|
  double grad_norm = 0.0;         // max |grad u|_g over interior points
  double hess_norm = 0.0;         // max |lambda_i(U)|
  double hess_entry_norm = 0.0;   // max |d_ij u| (chart entries)
  double penalty_sup = 0.0;       // max beta_eps(u - h)
  double obstacle_violation = 0.0; // max (u - h)_+
  double violation_bound = 0.0;   // (penalty_sup * eps)^(1/3)
  bool bound_holds = true;        // violation <= bound + 1e-12
};

inline NormBundle compute_norm_bundle(const GridFunction &u,
                                      const Problem &prob, double epsilon) {
  require_epsilon(epsilon);
  const ChartGrid &grid = *prob.grid;
  NormBundle nb;
  nb.epsilon = epsilon;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    nb.c0_norm = std::max(nb.c0_norm, std::abs(u[p]));
    const double z = u[p] - prob.obstacle[p];
    if (z > 0.0) {
      nb.obstacle_violation = std::max(nb.obstacle_violation, z);
      nb.penalty_sup = std::max(nb.penalty_sup, penalty(epsilon, z).value);
    }
  }
  for (std::size_t p : grid.interior()) {
    const PointEval e = evaluate_point(prob, u.values, p, epsilon, 0);
    nb.grad_norm = std::max(nb.grad_norm,
                            std::sqrt(prob.metric.covector_norm_sq(p, e.grad)));
    nb.hess_norm = std::max(nb.hess_norm, e.eig.lambda.cwiseAbs().maxCoeff());
    nb.hess_entry_norm =
        std::max(nb.hess_entry_norm, e.raw_hessian.cwiseAbs().maxCoeff());
  }
  nb.violation_bound = std::cbrt(nb.penalty_sup * epsilon);
  nb.bound_holds = nb.obstacle_violation <= nb.violation_bound + 1e-12;
  return nb;
}

// ---------------------------------------------------------------------------
// Inequality audit

struct AuditOptions {
  /// tol_audit = C_audit h^2; unset means 10 * hess_norm of the state.
  std::optional<double> C_audit;
  int theta_samples = 10000;
  std::uint64_t seed = 42;
};

struct InequalityAudit {
  double zeta0 = 0.0;
  std::optional<double> theta_hat; // nullopt: Vacuous
  ThetaCertificate certificate;
  double tol_audit = 0.0;
  std::size_t case1_points = 0;
  std::size_t case2_points = 0;
  std::size_t case1_violations = 0;
  std::size_t case2_violations = 0;
  double worst_slack_case1 = std::numeric_limits<double>::infinity();
  double worst_slack_case2 = std::numeric_limits<double>::infinity();
  /// min over case-2 points of f_i - (zeta0 / sqrt n) sum_k f_k.
  double fprime_worst = std::numeric_limits<double>::infinity();
  std::size_t fprime_violations = 0;
  /// max over all points of max_i f_i - min_i f_i.
  double fprime_spread = 0.0;

  std::size_t violations() const noexcept {
    return case1_violations + case2_violations + fprime_violations;
  }
};

/// zeta0 = min(min_x min_i nu_i(mu(x)) / 2, (1 - 1e-6) / (2 sqrt n)).
inline double zeta_zero(const SymmetricFunctionSpec &spec,
                        std::span<const Eigen::VectorXd> mu) {
  double z = (1.0 - 1e-6) / (2.0 * std::sqrt(double(spec.n)));
  for (const auto &m : mu)
    z = std::min(z, 0.5 * normal_vector(spec, m).nu.minCoeff());
  return z;
}

/// Eigenvalue tuples lambda(U) of a state at every interior point.
inline std::vector<Eigen::VectorXd> state_eigenvalues(const GridFunction &u,
                                                      const Problem &prob,
                                                      double epsilon) {
  std::vector<Eigen::VectorXd> out;
  std::vector<std::size_t> bad;
  out.reserve(prob.grid->interior_count());
  for (std::size_t p : prob.grid->interior()) {
    const PointEval e = evaluate_point(prob, u.values, p, epsilon, 0);
    if (!e.admissible)
      bad.push_back(p);
    out.emplace_back(e.eig.lambda);
  }
  if (!bad.empty())
    throw NotAdmissible("state not admissible at " +
                            std::to_string(bad.size()) + " points",
                        bad);
  return out;
}

inline InequalityAudit audit_inequalities(const GridFunction &u,
                                          const GridFunction &u_sub,
                                          const Problem &prob, double epsilon,
                                          const AuditOptions &opt = {}) {
  require_epsilon(epsilon);
  const ChartGrid &grid = *prob.grid;
  const SymmetricFunctionSpec &spec = prob.function;
  const int n = spec.n;

  const std::vector<Eigen::VectorXd> mu = state_eigenvalues(u_sub, prob, epsilon);
  const std::vector<Eigen::VectorXd> lam = state_eigenvalues(u, prob, epsilon);

  InequalityAudit audit;
  audit.zeta0 = zeta_zero(spec, mu);

  std::vector<Eigen::VectorXd> samples;
  samples.reserve(opt.theta_samples + lam.size());
  ConeSampler sampler(spec, opt.seed);
  for (int s = 0; s < opt.theta_samples; ++s)
    samples.push_back(sampler.interior());
  samples.insert(samples.end(), lam.begin(), lam.end());
  audit.certificate = estimate_theta(spec, mu, audit.zeta0, samples);
  audit.theta_hat = audit.certificate.theta_hat;

  const LinearizedSystem sys = linearize(u, prob, epsilon);
  GridFunction diff(prob.grid);
  for (std::size_t p = 0; p < grid.size(); ++p)
    diff[p] = u_sub[p] - u[p];
  const std::vector<double> Ld = apply_operator_L(sys, prob, diff);

  double hess_norm = 0.0;
  for (const auto &l : lam)
    hess_norm = std::max(hess_norm, l.cwiseAbs().maxCoeff());
  const double C = opt.C_audit ? *opt.C_audit : 10.0 * hess_norm;
  const double hg = grid.max_spacing();
  audit.tol_audit = C * hg * hg;
  const double half_theta = audit.theta_hat ? 0.5 * *audit.theta_hat : 0.0;
  const double fprime_factor = audit.zeta0 / std::sqrt(double(n));

  for (std::size_t p : grid.interior()) {
    const std::size_t s = static_cast<std::size_t>(grid.slot(p));
    const auto dl = evaluate(spec, lam[s], 1);
    const Eigen::VectorXd nu_l = dl.grad / dl.grad.norm();
    const Eigen::VectorXd nu_m = normal_vector(spec, mu[s]).nu;
    const double beta = penalty(epsilon, u[p] - prob.obstacle[p]).value;
    const double sum_f = dl.grad.sum();
    audit.fprime_spread =
        std::max(audit.fprime_spread, dl.grad.maxCoeff() - dl.grad.minCoeff());
    if ((nu_m - nu_l).norm() >= audit.zeta0) {
      ++audit.case1_points;
      const double slack = Ld[p] - half_theta * (1.0 + sum_f) + beta;
      audit.worst_slack_case1 = std::min(audit.worst_slack_case1, slack);
      if (slack < -audit.tol_audit)
        ++audit.case1_violations;
    } else {
      ++audit.case2_points;
      const double slack = Ld[p] + beta;
      audit.worst_slack_case2 = std::min(audit.worst_slack_case2, slack);
      if (slack < -audit.tol_audit)
        ++audit.case2_violations;
      const double fs = dl.grad.minCoeff() - fprime_factor * sum_f;
      audit.fprime_worst = std::min(audit.fprime_worst, fs);
      if (fs < 0.0)
        ++audit.fprime_violations;
    }
  }
  return audit;
}

// ---------------------------------------------------------------------------
// Contact set

struct ContactSet {
  double tau = 0.0;
  std::vector<std::uint8_t> indicator; // per grid point, 0 on the boundary
  std::vector<std::size_t> contact;    // interior points with u >= h - tau
  std::vector<std::size_t> interface;  // contact points with a free neighbour
  bool touches_boundary = false;       // a contact point is adjacent to dM

  bool empty() const noexcept { return contact.empty(); }
};

/// Contact set at an explicit threshold tau.
inline ContactSet contact_set_at(const GridFunction &u, const GridFunction &h,
                                 double tau) {
  const ChartGrid &grid = *u.grid;
  ContactSet cs;
  cs.tau = tau;
  cs.indicator.assign(grid.size(), 0);
  for (std::size_t p : grid.interior())
    if (u[p] >= h[p] - tau) {
      cs.indicator[p] = 1;
      cs.contact.push_back(p);
      if (grid.touches_boundary(p))
        cs.touches_boundary = true;
    }
  for (std::size_t p : cs.contact)
    for (int a = 0; a < grid.dim(); ++a) {
      const long s = grid.stride(a);
      if (!cs.indicator[p + s] || !cs.indicator[p - s]) {
        cs.interface.push_back(p);
        break;
      }
    }
  return cs;
}

/// tau = (penalty_sup eps)^(1/3) + 2 h_grid^2 hess_norm.
inline ContactSet extract_contact_set(const GridFunction &u,
                                      const GridFunction &h, double epsilon,
                                      double penalty_sup, double hess_norm) {
  const double hg = u.grid->max_spacing();
  return contact_set_at(u, h,
                        std::cbrt(penalty_sup * epsilon) +
                            2.0 * hg * hg * hess_norm);
}

// ---------------------------------------------------------------------------
// Sweep summary

struct UniformityRatio {
  std::string field;
  double ratio = 1.0;
  bool warning = false;
};

struct SweepReport {
  std::vector<NormBundle> rows;
  std::vector<UniformityRatio> ratios; // c0, grad, hess, penalty_sup
  /// max (u - h)_+ never increased as eps decreased.
  bool violation_monotone = true;

  bool uniform() const {
    return std::none_of(ratios.begin(), ratios.end(),
                        [](const UniformityRatio &r) { return r.warning; });
  }
  const UniformityRatio *find(const std::string &field) const {
    for (const auto &r : ratios)
      if (r.field == field)
        return &r;
    return nullptr;
  }
};

inline constexpr double kUniformityLimit = 2.0;

inline double max_min_ratio(const std::vector<double> &v) {
  if (v.empty())
    return 1.0;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*hi == 0.0)
    return 1.0;
  if (*lo <= 0.0)
    return std::numeric_limits<double>::infinity();
  return *hi / *lo;
}

inline SweepReport sweep_summary(std::span<const NormBundle> rows) {
  SweepReport rep;
  rep.rows.assign(rows.begin(), rows.end());
  auto column = [&](double NormBundle::*field) {
    std::vector<double> v;
    for (const auto &r : rows)
      v.push_back(r.*field);
    return v;
  };
  const std::pair<const char *, double NormBundle::*> fields[] = {
      {"c0_norm", &NormBundle::c0_norm},
      {"grad_norm", &NormBundle::grad_norm},
      {"hess_norm", &NormBundle::hess_norm},
      {"penalty_sup", &NormBundle::penalty_sup}};
  for (const auto &[name, field] : fields) {
    const double r = max_min_ratio(column(field));
    rep.ratios.push_back({name, r, r > kUniformityLimit});
  }
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].epsilon < rows[i - 1].epsilon &&
        rows[i].obstacle_violation > rows[i - 1].obstacle_violation)
      rep.violation_monotone = false;
  return rep;
}

} // namespace hessobs
