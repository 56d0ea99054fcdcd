#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "hessobs/penalized_operator.hpp"
#include "hessobs/random.hpp"
#include "support.hpp"

using namespace hessobs;
using support::ustar;

namespace {

constexpr double kHuge = 1e30;

double huge(const SmallVector &) { return kHuge; }

CoefficientField constant_psi(double c) {
  return CoefficientField::zero(
      CoefficientField::psi_of_x([c](const SmallVector &) { return c; }));
}

/// psi = 0.5 + 0.1 e^{-z} + 0.05 sqrt(1 + |p|^2): depends on z and p.
CoefficientField::ScalarFn coupled_psi() {
  return [](const SmallVector &, double z, const SmallVector &p) {
    const double s = std::sqrt(1.0 + p.squaredNorm());
    ScalarCoefficient c;
    c.value = 0.5 + 0.1 * std::exp(-z) + 0.05 * s;
    c.dz = -0.1 * std::exp(-z);
    c.dp = 0.05 * p / s;
    return c;
  };
}

GridFunction perturbed(const GridFunction &u, Rng &rng, double amp) {
  GridFunction v = u;
  for (std::size_t p : u.grid->interior())
    v[p] += amp * rng.normal();
  return v;
}

double max_abs(const std::vector<double> &v, const ChartGrid &g) {
  double m = 0.0;
  for (std::size_t p : g.interior())
    m = std::max(m, std::abs(v[p]));
  return m;
}

} // namespace

TEST(Penalty, Examples) {
  const auto neg = penalty(0.5, -1.0);
  EXPECT_EQ(neg.value, 0.0);
  EXPECT_EQ(neg.d1, 0.0);
  EXPECT_EQ(neg.d2, 0.0);
  const auto b = penalty(1e-3, 0.1);
  EXPECT_NEAR(b.value, 1.0, 1e-12);
  EXPECT_NEAR(b.d1, 30.0, 1e-10);
  EXPECT_NEAR(b.d2, 600.0, 1e-9);
  const auto zero = penalty(1e-3, 0.0);
  EXPECT_EQ(zero.value, 0.0);
  EXPECT_EQ(zero.d1, 0.0);
  EXPECT_EQ(zero.d2, 0.0);
}

TEST(Penalty, RejectsBadEpsilon) {
  EXPECT_THROW(penalty(0.0, 1.0), BadEpsilon);
  EXPECT_THROW(penalty(1.0, 1.0), BadEpsilon);
  EXPECT_THROW(penalty(-0.1, 1.0), BadEpsilon);
  EXPECT_THROW(penalty(std::nan(""), 1.0), BadEpsilon);
}

TEST(Penalty, SignAndMonotonicityProperties) {
  for (int i = 0; i <= 200; ++i) {
    const double z = -1.0 + 0.01 * i;
    double prev = -1.0;
    for (double eps = 1e-1; eps >= 1e-6 * 0.99; eps *= 0.1) {
      const auto b = penalty(eps, z);
      EXPECT_GE(b.value, 0.0);
      EXPECT_GE(b.d1, 0.0);
      EXPECT_GE(b.d2, 0.0);
      if (z <= 0.0) {
        EXPECT_EQ(b.value, 0.0);
      } else {
        EXPECT_GT(b.value, prev);
        prev = b.value;
      }
    }
  }
}

TEST(Penalty, SecondOrderSmoothAtZero) {
  // One-sided limits of value, d1 and d2 meet at z = 0.
  for (double t : {1e-2, 1e-4, 1e-6}) {
    const auto b = penalty(0.1, t);
    EXPECT_LT(b.value, 11.0 * t * t * t);
    EXPECT_LT(b.d1, 31.0 * t * t);
    EXPECT_LT(b.d2, 61.0 * t);
  }
  // d1 and d2 are the derivatives of value.
  const double z = 0.3, eps = 0.2, h = 1e-6;
  EXPECT_NEAR((penalty(eps, z + h).value - penalty(eps, z - h).value) / (2 * h),
              penalty(eps, z).d1, 1e-6);
  EXPECT_NEAR((penalty(eps, z + h).d1 - penalty(eps, z - h).d1) / (2 * h),
              penalty(eps, z).d2, 1e-6);
}

TEST(Residual, QuadraticLaplacianIsZero) {
  auto q = [](const SmallVector &x) { return 0.5 * x.squaredNorm(); };
  for (int n : {2, 3}) {
    const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(1, n),
                                            9, -1.0, 1.0, constant_psi(n), huge, q);
    const auto u = GridFunction::sample(prob.grid, q);
    const auto r = residual(u, prob, 0.1);
    EXPECT_TRUE(r.admissible());
    EXPECT_LT(r.max_norm, 1e-12);
  }
}

TEST(Residual, FlagsInadmissiblePoints) {
  auto saddle = [](const SmallVector &x) { return x[0] * x[0] - 3.0 * x[1] * x[1]; };
  const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(1, 2), 7,
                                          -1.0, 1.0, constant_psi(1.0), huge, saddle);
  const auto u = GridFunction::sample(prob.grid, saddle);
  const auto r = residual(u, prob, 0.1);
  EXPECT_EQ(r.inadmissible.size(), prob.grid->interior_count());
  for (std::size_t p : prob.grid->interior())
    EXPECT_TRUE(std::isnan(r.values[p]));
  EXPECT_THROW(require_residual(u, prob, 0.1), NotAdmissible);
  try {
    require_residual(u, prob, 0.1);
  } catch (const NotAdmissible &e) {
    EXPECT_EQ(e.points().size(), prob.grid->interior_count());
  }
}

TEST(Residual, ManufacturedSecondOrder) {
  std::vector<double> err;
  for (int m : {33, 65, 129}) {
    const auto prob = support::manufactured_ma(m);
    const auto u = GridFunction::sample(prob.grid, ustar);
    const auto r = residual(u, prob, 1e-3);
    ASSERT_TRUE(r.admissible());
    err.push_back(r.max_norm);
  }
  EXPECT_GE(std::log2(err[0] / err[1]), 1.9);
  EXPECT_GE(std::log2(err[1] / err[2]), 1.9);
}

TEST(Residual, PsiMustBePositive) {
  auto q = [](const SmallVector &x) { return 0.5 * x.squaredNorm(); };
  const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(1, 2), 5,
                                          -1.0, 1.0, constant_psi(0.0), huge, q);
  EXPECT_THROW(residual(GridFunction::sample(prob.grid, q), prob, 0.1), Error);
}

TEST(Residual, SubsolutionHasNonnegativeResidual) {
  for (int m : {17, 33, 65}) {
    const auto prob = support::manufactured_ma(m);
    const auto r = residual(*prob.subsolution, prob, 1e-6);
    ASSERT_TRUE(r.admissible());
    for (std::size_t p : prob.grid->interior())
      EXPECT_GE(r.values[p], -1e-8);
  }
}

TEST(Linearize, SigmaOneIsLaplacian) {
  auto q = [](const SmallVector &x) { return 0.5 * x.squaredNorm() + x[0]; };
  const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(1, 2), 6,
                                          0.0, 1.0, constant_psi(2.0), huge, q);
  const auto u = GridFunction::sample(prob.grid, q);
  const auto sys = linearize(u, prob, 0.1);
  const ChartGrid &g = *prob.grid;
  const double h2 = g.spacing(0) * g.spacing(0);
  for (std::size_t p : g.interior()) {
    EXPECT_LT((sys.F[p] - SmallMatrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(sys.zero_order[p], 0.0);
  }
  const Eigen::MatrixXd J(sys.jacobian);
  for (std::size_t p : g.interior()) {
    const long r = g.slot(p);
    EXPECT_NEAR(J(r, r), -4.0 / h2, 1e-9);
    double off = 0.0;
    for (long c = 0; c < J.cols(); ++c)
      if (c != r)
        off += J(r, c);
    int interior_neighbours = 0;
    for (int a = 0; a < 2; ++a)
      for (long s : {g.stride(a), -g.stride(a)})
        interior_neighbours += g.slot(static_cast<std::size_t>(long(p) + s)) >= 0;
    EXPECT_NEAR(off, interior_neighbours / h2, 1e-9);
  }
}

TEST(Linearize, MetricInverseForSigmaOne) {
  auto grid = ChartGrid::uniform(2, -0.5, 0.5, 9);
  auto metric = MetricField::sample(grid, [](const SmallVector &x) {
    SmallMatrix g(2, 2);
    g << 2.0 + x[0], 0.3, 0.3, 1.5;
    return g;
  });
  auto q = [](const SmallVector &x) { return x.squaredNorm(); };
  const auto prob = Problem::build(SymmetricFunctionSpec::sigma_k_root(1, 2), grid,
                                   metric, constant_psi(0.5), huge, q);
  const auto sys = linearize(GridFunction::sample(grid, q), prob, 0.1);
  for (std::size_t p : grid->interior())
    EXPECT_LT((sys.F[p] - prob.metric.g_inv(p)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Linearize, EllipticAtAdmissibleStates) {
  Rng rng(5);
  const auto prob = support::manufactured_ma(17);
  const auto u = perturbed(GridFunction::sample(prob.grid, ustar), rng, 1e-4);
  const auto sys = linearize(u, prob, 1e-2);
  EXPECT_GT(sys.min_ellipticity, 0.0);
  for (std::size_t p : prob.grid->interior()) {
    Eigen::SelfAdjointEigenSolver<SmallMatrix> es(sys.F[p]);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(Linearize, ThrowsWhenNotAdmissible) {
  auto saddle = [](const SmallVector &x) { return x[0] * x[0] - 3.0 * x[1] * x[1]; };
  const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(2, 2), 7,
                                          -1.0, 1.0, constant_psi(1.0), huge, saddle);
  EXPECT_THROW(linearize(GridFunction::sample(prob.grid, saddle), prob, 0.1),
               NotAdmissible);
}

struct JacobianCase {
  SymmetricFunctionSpec spec;
  bool conformal;
};

void PrintTo(const JacobianCase &c, std::ostream *os) {
  *os << "k" << c.spec.k << "l" << c.spec.l << "n" << c.spec.n
      << (c.conformal ? "conformal" : "flat");
}

class JacobianOracle : public ::testing::TestWithParam<JacobianCase> {};

TEST_P(JacobianOracle, MatchesDirectionalDifferences) {
  const auto [spec, conformal] = GetParam();
  const int n = spec.n;
  const int m = n == 2 ? 13 : 7;
  auto grid = ChartGrid::uniform(n, -1.0, 1.0, m);
  MetricField metric =
      conformal ? MetricField::sample(grid,
                                      [n](const SmallVector &x) {
                                        return SmallMatrix(std::exp(0.3 * x[0]) *
                                                           SmallMatrix::Identity(n, n));
                                      })
                : MetricField::flat(grid);
  // Penalty active on part of the domain so beta' enters.
  auto h = [](const SmallVector &x) { return ustar(x) + 0.05 - 0.2 * x[0]; };
  const auto prob = Problem::build(spec, grid, std::move(metric),
                                   CoefficientField::kappa_zg(0.5, coupled_psi()), h,
                                   ustar);
  Rng rng(17);
  const auto u = perturbed(GridFunction::sample(grid, ustar), rng, 1e-3);
  const double eps = 1e-2;
  const auto sys = linearize(u, prob, eps);
  const auto r0 = residual(u, prob, eps);
  ASSERT_TRUE(r0.admissible());

  const std::size_t ni = grid->interior_count();
  const double t = 1e-6;
  double worst = 0.0;
  bool penalty_seen = false;
  for (std::size_t p : grid->interior())
    penalty_seen = penalty_seen || u[p] > prob.obstacle[p];
  EXPECT_TRUE(penalty_seen);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd d(ni);
    for (std::size_t s = 0; s < ni; ++s)
      d[s] = rng.normal();
    GridFunction ut = u;
    for (std::size_t s = 0; s < ni; ++s)
      ut[grid->interior()[s]] += t * d[s];
    const auto rt = residual(ut, prob, eps);
    ASSERT_TRUE(rt.admissible());
    const Eigen::VectorXd Jd = sys.jacobian * d;
    double diff = 0.0;
    for (std::size_t s = 0; s < ni; ++s) {
      const std::size_t p = grid->interior()[s];
      diff = std::max(diff, std::abs((rt.values[p] - r0.values[p]) / t - Jd[s]));
    }
    worst = std::max(worst, diff / Jd.cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(
    Families, JacobianOracle,
    ::testing::Values(JacobianCase{SymmetricFunctionSpec::sigma_k_root(2, 2), false},
                      JacobianCase{SymmetricFunctionSpec::sigma_quotient_root(2, 1, 2),
                                   false},
                      JacobianCase{SymmetricFunctionSpec::sigma_k_root(2, 3), false},
                      JacobianCase{SymmetricFunctionSpec::sigma_k_root(3, 3), false},
                      JacobianCase{SymmetricFunctionSpec::sigma_quotient_root(3, 1, 3),
                                   false},
                      JacobianCase{SymmetricFunctionSpec::sigma_k_root(2, 2), true},
                      JacobianCase{SymmetricFunctionSpec::sigma_quotient_root(2, 1, 2),
                                   true}),
    [](const auto &info) {
      const auto &s = info.param.spec;
      const std::string name =
          s.family == Family::SigmaKRoot
              ? "sigma" + std::to_string(s.k)
              : "quotient" + std::to_string(s.k) + std::to_string(s.l);
      return name + "_n" + std::to_string(s.n) +
             (info.param.conformal ? "_conformal" : "_flat");
    });

TEST(OperatorL, ConstantsVanish) {
  const auto prob = support::manufactured_ma(17);
  const auto u = GridFunction::sample(prob.grid, ustar);
  const GridFunction c(prob.grid, 3.7);
  const auto L = operator_L(u, prob, 1e-2, c);
  EXPECT_LT(max_abs(L, *prob.grid), 1e-9);
}

TEST(OperatorL, SigmaOneIsDiscreteLaplacian) {
  auto q = [](const SmallVector &x) { return 0.5 * x.squaredNorm(); };
  const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(1, 2), 9,
                                          0.0, 1.0, constant_psi(1.0), huge, q);
  const auto u = GridFunction::sample(prob.grid, q);
  Rng rng(2);
  GridFunction v(prob.grid);
  for (std::size_t p = 0; p < v.values.size(); ++p)
    v[p] = rng.normal();
  const auto L = operator_L(u, prob, 0.1, v);
  const ChartGrid &g = *prob.grid;
  const double h2 = g.spacing(0) * g.spacing(0);
  for (std::size_t p : g.interior()) {
    double lap = -4.0 * v[p];
    for (int a = 0; a < 2; ++a)
      lap += v[p + g.stride(a)] + v[p - g.stride(a)];
    EXPECT_NEAR(L[p], lap / h2, 1e-9 * (1.0 + std::abs(lap / h2)));
  }
}

TEST(OperatorL, Linearity) {
  const auto prob = support::manufactured_ma(17);
  const auto sys = linearize(GridFunction::sample(prob.grid, ustar), prob, 1e-2);
  Rng rng(8);
  GridFunction v(prob.grid), w(prob.grid), c(prob.grid);
  for (std::size_t p = 0; p < v.values.size(); ++p) {
    v[p] = rng.normal();
    w[p] = rng.normal();
    c[p] = 1.5 * v[p] - 2.0 * w[p];
  }
  const auto Lv = apply_operator_L(sys, prob, v);
  const auto Lw = apply_operator_L(sys, prob, w);
  const auto Lc = apply_operator_L(sys, prob, c);
  for (std::size_t p : prob.grid->interior())
    EXPECT_NEAR(Lc[p], 1.5 * Lv[p] - 2.0 * Lw[p], 1e-8 * (1.0 + std::abs(Lc[p])));
}

TEST(Certification, ZeroAndNonNegativeKappaPass) {
  auto flat = [](CoefficientField c) {
    return support::flat_problem(SymmetricFunctionSpec::sigma_k_root(2, 2), 5, -1.0,
                                 1.0, std::move(c), huge, ustar);
  };
  EXPECT_TRUE(certify_coefficients(flat(constant_psi(1.0))).passed());
  EXPECT_TRUE(
      certify_coefficients(flat(CoefficientField::kappa_zg(0.5, coupled_psi())))
          .passed());
  const auto neg = certify_coefficients(
      flat(CoefficientField::kappa_zg(-0.5, CoefficientField::psi_of_x(
                                                [](const SmallVector &) { return 1.0; }))));
  EXPECT_FALSE(neg.passed());
  EXPECT_FALSE(neg.find("z_monotonicity")->passed);
  EXPECT_TRUE(neg.find("p_concavity")->passed);
}

TEST(Certification, ExponentialInZFailsMonotonicity) {
  CoefficientField::ScalarFn psi = [](const SmallVector &, double z,
                                      const SmallVector &p) {
    ScalarCoefficient c;
    c.value = std::exp(z);
    c.dz = std::exp(z);
    c.dp = SmallVector::Zero(p.size());
    return c;
  };
  const auto prob = support::flat_problem(SymmetricFunctionSpec::sigma_k_root(2, 2), 5,
                                          -1.0, 1.0, CoefficientField::zero(psi), huge,
                                          ustar);
  const auto cert = certify_coefficients(prob);
  EXPECT_FALSE(cert.passed());
  const auto *c = cert.find("z_monotonicity");
  ASSERT_NE(c, nullptr);
  EXPECT_FALSE(c->passed);
  EXPECT_LT(c->observed, 0.0);
  EXPECT_EQ(c->witness.size(), 5);
  EXPECT_TRUE(cert.find("psi_positivity")->passed);
}

TEST(Certification, ConvexInPTensorFailsConcavity) {
  CoefficientField::TensorFn A = [](const SmallVector &, double, const SmallVector &p) {
    TensorCoefficient t = zero_tensor(2);
    t.value(0, 0) = p[0] * p[0];
    t.dp[0](0, 0) = 2.0 * p[0];
    return t;
  };
  const auto prob = support::flat_problem(
      SymmetricFunctionSpec::sigma_k_root(2, 2), 5, -1.0, 1.0,
      CoefficientField::custom(A, CoefficientField::psi_of_x(
                                      [](const SmallVector &) { return 1.0; })),
      huge, ustar);
  const auto cert = certify_coefficients(prob);
  EXPECT_FALSE(cert.find("p_concavity")->passed);
  EXPECT_TRUE(cert.find("z_monotonicity")->passed);
}

TEST(Certification, Reproducible) {
  const auto prob = support::flat_problem(
      SymmetricFunctionSpec::sigma_k_root(2, 2), 5, -1.0, 1.0,
      CoefficientField::kappa_zg(0.2, coupled_psi()), huge, ustar);
  const auto a = certify_coefficients(prob, {300, 9});
  const auto b = certify_coefficients(prob, {300, 9});
  ASSERT_EQ(a.conditions.size(), b.conditions.size());
  for (std::size_t i = 0; i < a.conditions.size(); ++i) {
    EXPECT_EQ(a.conditions[i].observed, b.conditions[i].observed);
    EXPECT_EQ(a.conditions[i].witness, b.conditions[i].witness);
  }
}
