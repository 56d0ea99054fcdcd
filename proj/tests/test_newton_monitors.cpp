#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "hessobs/estimate_monitors.hpp"
#include "hessobs/newton_continuation.hpp"
#include "hessobs/random.hpp"
#include "support.hpp"

using namespace hessobs;
using support::ustar;

namespace {

double huge(const SmallVector &) { return 1e30; }

CoefficientField constant_psi(double c) {
  return CoefficientField::zero(
      CoefficientField::psi_of_x([c](const SmallVector &) { return c; }));
}

double max_error(const GridFunction &u, const support::ScalarField &exact) {
  double e = 0.0;
  for (std::size_t p = 0; p < u.grid->size(); ++p)
    e = std::max(e, std::abs(u[p] - exact(u.grid->coord(p))));
  return e;
}

/// Poisson problem with a paraboloid obstacle that is active in the middle.
Problem laplace_obstacle(int m) {
  return support::flat_problem(
      SymmetricFunctionSpec::sigma_k_root(1, 2), m, -1.0, 1.0, constant_psi(1.0),
      [](const SmallVector &x) { return 0.85 * x.squaredNorm() - 0.3; },
      [](const SmallVector &x) { return 0.25 * x.squaredNorm(); });
}

} // namespace

TEST(Schedule, Values) {
  EXPECT_EQ(PenaltySchedule{}.values(),
            (std::vector<double>{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6}));
  EXPECT_EQ((PenaltySchedule{1e-1, 1e-1, 1e-2}.values()),
            (std::vector<double>{1e-1, 1e-2}));
  EXPECT_EQ((PenaltySchedule{1e-2, 1e-1, 1e-2}.values()), (std::vector<double>{1e-2}));
  // The last value is clipped at the floor.
  const auto v = PenaltySchedule{0.5, 0.3, 0.1}.values();
  ASSERT_EQ(v.size(), 3u);
  EXPECT_DOUBLE_EQ(v[1], 0.15);
  EXPECT_DOUBLE_EQ(v[2], 0.1);
}

TEST(Schedule, Validation) {
  EXPECT_THROW((PenaltySchedule{1.0, 0.1, 1e-3}.validate()), Error);
  EXPECT_THROW((PenaltySchedule{0.1, 1.0, 1e-3}.validate()), Error);
  EXPECT_THROW((PenaltySchedule{0.1, 0.1, 0.2}.validate()), Error);
  EXPECT_THROW((PenaltySchedule{0.1, 0.1, 0.0}.validate()), Error);
  EXPECT_NO_THROW((PenaltySchedule{0.1, 0.1, 0.1}.validate()));
}

TEST(NewtonConfig, DefaultsAndValidation) {
  EXPECT_EQ(NewtonConfig::defaults_for(SymmetricFunctionSpec::sigma_k_root(1, 2))
                .tol_residual,
            1e-9);
  EXPECT_EQ(NewtonConfig::defaults_for(SymmetricFunctionSpec::sigma_k_root(2, 2))
                .tol_residual,
            1e-8);
  NewtonConfig c;
  c.armijo_c = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.max_iters = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Newton, LinearProblemConvergesInOneStep) {
  auto phi = [](const SmallVector &x) { return std::sin(x[0]) + x[1] * x[1]; };
  auto psi = [](const SmallVector &x) { return 2.0 + std::cos(x[0] * x[1]); };
  const auto prob = support::flat_problem(
      SymmetricFunctionSpec::sigma_k_root(1, 2), 33, 0.0, 1.0,
      CoefficientField::zero(CoefficientField::psi_of_x(psi)), huge, phi);
  const GridFunction u0 = default_initializer(prob);
  const auto res = newton_solve(u0, prob, 0.1, NewtonConfig::defaults_for(prob.function));
  EXPECT_TRUE(res.report.converged());
  EXPECT_EQ(res.report.iterations, 1);
  EXPECT_LE(res.report.final_residual(), 1e-9);
}

TEST(Newton, ManufacturedQuadraticTailAndSecondOrder) {
  std::vector<double> err;
  for (int m : {17, 33, 65}) {
    const auto prob = support::manufactured_ma(m);
    const auto res = newton_solve(*prob.subsolution, prob, 1e-6,
                                  NewtonConfig::defaults_for(prob.function),
                                  &*prob.subsolution);
    ASSERT_TRUE(res.report.converged()) << res.report.diagnosis;
    const auto &h = res.report.residual_history;
    ASSERT_GE(h.size(), 3u);
    const std::size_t k = h.size() - 1;
    // super-linear: the last drop beats the previous one
    EXPECT_LT(h[k] / h[k - 1], h[k - 1] / h[k - 2]);
    EXPECT_LT(h[k] / (h[k - 1] * h[k - 1]), 10.0);
    EXPECT_GE(res.report.subsolution_dominance, -1e-7);
    err.push_back(max_error(res.u, ustar));
  }
  EXPECT_GE(std::log2(err[0] / err[1]), 1.9);
  EXPECT_GE(std::log2(err[1] / err[2]), 1.9);
}

TEST(Newton, FirstStepFromSubsolutionDecreasesResidual) {
  const auto prob = support::manufactured_ma(33);
  NewtonConfig cfg = NewtonConfig::defaults_for(prob.function);
  cfg.max_iters = 1;
  const auto res = newton_solve(*prob.subsolution, prob, 1e-3, cfg);
  const double r0 = residual(*prob.subsolution, prob, 1e-3).l2_sq;
  const double r1 = residual(res.u, prob, 1e-3).l2_sq;
  EXPECT_LT(r1, r0);
}

TEST(Newton, IteratesStayAdmissibleAndPinned) {
  const auto prob = laplace_obstacle(33);
  const GridFunction u0 = default_initializer(prob);
  NewtonConfig cfg = NewtonConfig::defaults_for(prob.function);
  for (int iters = 1; iters <= 4; ++iters) {
    cfg.max_iters = iters;
    const auto res = newton_solve(u0, prob, 1e-4, cfg);
    EXPECT_TRUE(residual(res.u, prob, 1e-4).admissible());
    for (std::size_t b : prob.grid->boundary())
      EXPECT_EQ(res.u[b], prob.boundary[b]);
  }
}

TEST(Newton, ReportsMaxIters) {
  const auto prob = laplace_obstacle(33);
  NewtonConfig cfg = NewtonConfig::defaults_for(prob.function);
  cfg.max_iters = 1;
  const auto res = newton_solve(default_initializer(prob), prob, 1e-6, cfg);
  EXPECT_EQ(res.report.status, SolveStatus::MaxItersExceeded);
  EXPECT_FALSE(res.report.diagnosis.empty());
}

TEST(Newton, RejectsInadmissibleStart) {
  const auto prob = support::manufactured_ma(9);
  const GridFunction saddle = prob.with_boundary(GridFunction::sample(
      prob.grid, [](const SmallVector &x) { return x[0] * x[0] - x[1] * x[1]; }));
  EXPECT_THROW(newton_solve(saddle, prob, 0.1, NewtonConfig{}), NotAdmissible);
}

TEST(Initializer, BuiltinPoissonOnUnitSquare) {
  const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(1, 2), 17,
                                          0.0, 1.0, constant_psi(1.0), huge,
                                          [](const SmallVector &) { return 0.0; });
  const GridFunction u = default_initializer(prob);
  const auto r = residual(u, prob, 0.5);
  ASSERT_TRUE(r.admissible());
  for (std::size_t p : prob.grid->interior())
    EXPECT_GE(r.values[p], 0.0);
  for (std::size_t b : prob.grid->boundary())
    EXPECT_EQ(u[b], 0.0);
}

TEST(Initializer, SuppliedSubsolutionReturnedUnchanged) {
  const auto prob = support::manufactured_ma(17);
  const GridFunction u = default_initializer(prob);
  EXPECT_EQ(u.values, prob.subsolution->values);
}

TEST(Initializer, InadmissibleSubsolutionRejected) {
  const support::ScalarField bad = [](const SmallVector &x) {
    return ustar(x) + (1 - x[0] * x[0]) * (1 - x[1] * x[1]);
  };
  const auto prob = support::flat_problem(
      SymmetricFunctionSpec::sigma_k_root(2, 2), 17, -1.0, 1.0,
      CoefficientField::zero(CoefficientField::psi_of_x(support::ma_rhs)),
      [](const SmallVector &x) { return ustar(x) + 1.0; }, ustar, &bad);
  EXPECT_THROW(default_initializer(prob), NoAdmissibleStart);
}

TEST(Initializer, SubsolutionAboveObstacleRejected) {
  const support::ScalarField sub = [](const SmallVector &x) {
    return ustar(x) - 0.25 * (1 - x[0] * x[0]) * (1 - x[1] * x[1]);
  };
  const auto prob = support::flat_problem(
      SymmetricFunctionSpec::sigma_k_root(2, 2), 17, -1.0, 1.0,
      CoefficientField::zero(CoefficientField::psi_of_x(support::ma_rhs)),
      [](const SmallVector &x) { return ustar(x) - 0.5 + 0.6 * x.squaredNorm(); },
      ustar, &sub);
  EXPECT_THROW(default_initializer(prob), NoAdmissibleStart);
}

TEST(Continuation, SingleEntryMatchesNewton) {
  const auto prob = support::manufactured_ma(17);
  const auto cfg = NewtonConfig::defaults_for(prob.function);
  ContinuationOptions opt;
  opt.audit = false;
  const auto res = continuation_solve(prob, {1e-3, 0.1, 1e-3}, cfg, opt);
  ASSERT_EQ(res.steps.size(), 1u);
  const auto direct = newton_solve(*prob.subsolution, prob, 1e-3, cfg);
  EXPECT_EQ(res.steps[0].u.values, direct.u.values);
  EXPECT_EQ(res.steps[0].report.iterations, direct.report.iterations);
  ASSERT_EQ(res.sweep.ratios.size(), 4u);
  for (const auto &r : res.sweep.ratios)
    EXPECT_EQ(r.ratio, 1.0);
}

TEST(Continuation, WarmStartsAndObstacleBound) {
  const auto prob = laplace_obstacle(33);
  ContinuationOptions opt;
  opt.audit = false;
  const auto res = continuation_solve(prob, {1e-2, 0.1, 1e-6},
                                      NewtonConfig::defaults_for(prob.function), opt);
  ASSERT_TRUE(res.converged()) << res.diagnosis;
  ASSERT_EQ(res.steps.size(), 5u);
  for (std::size_t k = 1; k < res.steps.size(); ++k) {
    const auto cold = newton_solve(res.initial, prob, res.steps[k].epsilon,
                                   NewtonConfig::defaults_for(prob.function));
    if (cold.report.converged())
      EXPECT_LE(res.steps[k].report.iterations, cold.report.iterations);
  }
  for (const auto &s : res.steps) {
    EXPECT_TRUE(s.norms.bound_holds);
    EXPECT_GT(s.norms.penalty_sup, 0.0);
    EXPECT_FALSE(s.contact.empty());
    EXPECT_FALSE(s.contact.touches_boundary);
    EXPECT_GE(s.report.subsolution_dominance, -10 * 1e-9);
  }
  EXPECT_TRUE(res.sweep.violation_monotone);
  // successive solutions differ by O(eps^(1/3)) where the obstacle is active
  for (std::size_t k = 1; k < res.steps.size(); ++k) {
    double d = 0.0;
    for (std::size_t p : res.steps[k].contact.contact)
      d = std::max(d, std::abs(res.steps[k].u[p] - res.steps[k - 1].u[p]));
    EXPECT_LE(d, 2.0 * std::cbrt(res.steps[k - 1].norms.penalty_sup *
                                 res.steps[k - 1].epsilon));
  }
}

TEST(Continuation, FailureCarriesEpsilon) {
  const auto prob = laplace_obstacle(17);
  NewtonConfig cfg = NewtonConfig::defaults_for(prob.function);
  cfg.max_iters = 1;
  ContinuationOptions opt;
  opt.audit = false;
  const auto res = continuation_solve(prob, {1e-2, 0.1, 1e-4}, cfg, opt);
  EXPECT_TRUE(res.failed);
  EXPECT_EQ(res.failed_epsilon, 1e-2);
  EXPECT_FALSE(res.diagnosis.empty());
}

// ---------------------------------------------------------------------------
// Monitors

TEST(NormBundle, BelowObstacleHasNoPenalty) {
  const auto prob = support::manufactured_ma(17);
  const auto nb = compute_norm_bundle(GridFunction::sample(prob.grid, ustar), prob, 1e-3);
  EXPECT_EQ(nb.penalty_sup, 0.0);
  EXPECT_EQ(nb.obstacle_violation, 0.0);
  EXPECT_TRUE(nb.bound_holds);
  EXPECT_NEAR(nb.c0_norm, std::exp(1.0), 1e-12);
  EXPECT_GT(nb.hess_norm, 0.0);
  EXPECT_GT(nb.grad_norm, 0.0);
}

TEST(NormBundle, ViolationExample) {
  auto q = [](const SmallVector &x) { return x.squaredNorm(); };
  const auto prob = support::flat_problem(
      SymmetricFunctionSpec::sigma_k_root(1, 2), 5, -1.0, 1.0, constant_psi(1.0),
      [](const SmallVector &x) { return x.squaredNorm() - 0.01; }, q);
  const auto nb = compute_norm_bundle(GridFunction::sample(prob.grid, q), prob, 1e-6);
  EXPECT_NEAR(nb.obstacle_violation, 0.01, 1e-15);
  EXPECT_NEAR(nb.penalty_sup, 1.0, 1e-9);
  EXPECT_NEAR(nb.penalty_sup,
              nb.obstacle_violation * nb.obstacle_violation * nb.obstacle_violation / 1e-6,
              1e-12);
  EXPECT_TRUE(nb.bound_holds);
}

TEST(NormBundle, ZeroStateAtZeroObstacle) {
  auto zero = [](const SmallVector &) { return 0.0; };
  const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(1, 2), 5,
                                          -1.0, 1.0, constant_psi(1.0), zero, zero);
  const GridFunction u(prob.grid, 0.0);
  // U = 0 is outside the open cone, so only the penalty fields are meaningful
  // at order 0; compute them directly.
  double psup = 0.0, viol = 0.0;
  for (std::size_t p : prob.grid->interior()) {
    psup = std::max(psup, penalty(1e-3, u[p] - prob.obstacle[p]).value);
    viol = std::max(viol, std::max(0.0, u[p] - prob.obstacle[p]));
  }
  EXPECT_EQ(psup, 0.0);
  EXPECT_EQ(viol, 0.0);
}

TEST(Zeta, RangeAndPositivity) {
  Rng rng(4);
  for (const auto spec : {SymmetricFunctionSpec::sigma_k_root(1, 2),
                          SymmetricFunctionSpec::sigma_k_root(2, 2),
                          SymmetricFunctionSpec::sigma_k_root(2, 3),
                          SymmetricFunctionSpec::sigma_quotient_root(3, 1, 3)}) {
    ConeSampler s(spec, 3);
    std::vector<Eigen::VectorXd> mu;
    for (int i = 0; i < 200; ++i)
      mu.push_back(s.interior());
    const double z = zeta_zero(spec, mu);
    EXPECT_GT(z, 0.0);
    EXPECT_LT(z, 1.0 / (2.0 * std::sqrt(double(spec.n))));
    for (const auto &m : mu) {
      const Eigen::VectorXd nu = normal_vector(spec, m).nu;
      EXPECT_GE((nu.array() - 2.0 * z).minCoeff(), 0.0);
    }
  }
}

TEST(Audit, SigmaOneIsCaseTwoWithZeroSpread) {
  const auto prob = laplace_obstacle(33);
  ContinuationOptions opt;
  const auto res = continuation_solve(prob, {1e-3, 0.1, 1e-3},
                                      NewtonConfig::defaults_for(prob.function), opt);
  ASSERT_TRUE(res.converged());
  const auto &a = *res.steps.back().audit;
  EXPECT_TRUE(a.certificate.vacuous());
  EXPECT_EQ(a.case1_points, 0u);
  EXPECT_EQ(a.case2_points, prob.grid->interior_count());
  EXPECT_EQ(a.fprime_spread, 0.0);
  EXPECT_GE(a.fprime_worst, 0.0);
  EXPECT_EQ(a.violations(), 0u);
}

TEST(Audit, StateEqualToSubsolution) {
  const auto prob = support::manufactured_ma(17);
  const GridFunction &s = *prob.subsolution;
  AuditOptions opt;
  opt.theta_samples = 500;
  const auto a = audit_inequalities(s, s, prob, 1e-3, opt);
  EXPECT_EQ(a.case1_points, 0u);
  EXPECT_EQ(a.case1_points + a.case2_points, prob.grid->interior_count());
  EXPECT_EQ(a.case2_violations, 0u);
  // L(0) + beta(u_sub - h) = 0 here
  EXPECT_NEAR(a.worst_slack_case2, 0.0, 1e-12);
}

TEST(Audit, ManufacturedHasNoViolations) {
  const auto prob = support::manufactured_ma(33);
  const auto sol = newton_solve(*prob.subsolution, prob, 1e-4,
                                NewtonConfig::defaults_for(prob.function));
  ASSERT_TRUE(sol.report.converged());
  AuditOptions opt;
  opt.theta_samples = 2000;
  const auto a = audit_inequalities(sol.u, *prob.subsolution, prob, 1e-4, opt);
  EXPECT_EQ(a.case1_points + a.case2_points, prob.grid->interior_count());
  ASSERT_TRUE(a.theta_hat.has_value());
  EXPECT_GT(*a.theta_hat, 0.0);
  EXPECT_EQ(a.violations(), 0u);
  const double h = prob.grid->max_spacing();
  const auto nb = compute_norm_bundle(sol.u, prob, 1e-4);
  EXPECT_NEAR(a.tol_audit, 10.0 * nb.hess_norm * h * h, 1e-12 * a.tol_audit);
}

TEST(Audit, CustomConstant) {
  const auto prob = support::manufactured_ma(17);
  AuditOptions opt;
  opt.theta_samples = 100;
  opt.C_audit = 2.0;
  const auto a = audit_inequalities(*prob.subsolution, *prob.subsolution, prob, 0.1, opt);
  const double h = prob.grid->max_spacing();
  EXPECT_DOUBLE_EQ(a.tol_audit, 2.0 * h * h);
}

TEST(Contact, EmptyWhenObstacleFarAbove) {
  const auto prob = support::manufactured_ma(17);
  const auto u = GridFunction::sample(prob.grid, ustar);
  const auto cs = extract_contact_set(u, prob.obstacle, 1e-3, 0.0, 10.0);
  EXPECT_TRUE(cs.empty());
  EXPECT_TRUE(cs.interface.empty());
}

TEST(Contact, NestedInThreshold) {
  const auto prob = laplace_obstacle(33);
  const auto res = newton_solve(default_initializer(prob), prob, 1e-4,
                                NewtonConfig::defaults_for(prob.function));
  ASSERT_TRUE(res.report.converged());
  std::size_t prev = 0;
  std::vector<std::uint8_t> prev_ind;
  for (double tau : {1e-6, 1e-4, 1e-3, 1e-2, 1e-1}) {
    const auto cs = contact_set_at(res.u, prob.obstacle, tau);
    EXPECT_GE(cs.contact.size(), prev);
    if (!prev_ind.empty())
      for (std::size_t p = 0; p < prev_ind.size(); ++p)
        if (prev_ind[p])
          EXPECT_TRUE(cs.indicator[p]);
    for (std::size_t p : cs.interface)
      EXPECT_TRUE(cs.indicator[p]);
    prev = cs.contact.size();
    prev_ind = cs.indicator;
  }
}

TEST(Sweep, RatiosAndWarnings) {
  NormBundle a, b;
  a.epsilon = 1e-2;
  b.epsilon = 1e-3;
  a.c0_norm = 1.0;
  b.c0_norm = 1.0;
  a.grad_norm = 1.0;
  b.grad_norm = 1.5;
  a.hess_norm = 1.0;
  b.hess_norm = 2.5;
  a.penalty_sup = 0.0;
  b.penalty_sup = 0.0;
  a.obstacle_violation = 0.1;
  b.obstacle_violation = 0.2;
  const std::vector<NormBundle> rows{a, b};
  const auto rep = sweep_summary(rows);
  EXPECT_DOUBLE_EQ(rep.find("grad_norm")->ratio, 1.5);
  EXPECT_FALSE(rep.find("grad_norm")->warning);
  EXPECT_DOUBLE_EQ(rep.find("hess_norm")->ratio, 2.5);
  EXPECT_TRUE(rep.find("hess_norm")->warning);
  EXPECT_EQ(rep.find("penalty_sup")->ratio, 1.0);
  EXPECT_FALSE(rep.uniform());
  EXPECT_FALSE(rep.violation_monotone);
  const std::vector<NormBundle> one{a};
  const auto single = sweep_summary(one);
  for (const auto &r : single.ratios)
    EXPECT_EQ(r.ratio, 1.0);
  EXPECT_TRUE(single.uniform());
}
