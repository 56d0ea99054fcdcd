#pragma once

// Symmetric functions of eigenvalue tuples and their cones:
//   f = sigma_k^{1/k}                 on Gamma_k
//   f = (sigma_k / sigma_l)^{1/(k-l)} on Gamma_k
// where Gamma_k = { lambda : sigma_j(lambda) > 0, j = 1..k }.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hessobs/errors.hpp"
#include "hessobs/random.hpp"

namespace hessobs {

enum class Family { SigmaKRoot, SigmaQuotientRoot };

struct SymmetricFunctionSpec {
  Family family = Family::SigmaKRoot;
  int k = 1;
  int l = 0; // only meaningful for SigmaQuotientRoot
  int n = 2;

  static SymmetricFunctionSpec sigma_k_root(int k, int n) {
    SymmetricFunctionSpec s{Family::SigmaKRoot, k, 0, n};
    s.validate();
    return s;
  }
  static SymmetricFunctionSpec sigma_quotient_root(int k, int l, int n) {
    SymmetricFunctionSpec s{Family::SigmaQuotientRoot, k, l, n};
    s.validate();
    return s;
  }

  void validate() const {
    if (n < 2)
      throw Error("symmetric function: dimension n must be >= 2");
    if (k < 1 || k > n)
      throw Error("symmetric function: k must satisfy 1 <= k <= n (k=" +
                  std::to_string(k) + ", n=" + std::to_string(n) + ")");
    if (family == Family::SigmaQuotientRoot && (l < 1 || l >= k))
      throw Error("symmetric function: quotient requires 1 <= l < k (k=" +
                  std::to_string(k) + ", l=" + std::to_string(l) + ")");
  }

  /// The cone is Gamma_k for both families.
  int cone_order() const noexcept { return k; }

  std::string name() const {
    if (family == Family::SigmaKRoot)
      return "sigma_" + std::to_string(k) + "^(1/" + std::to_string(k) + ")";
    return "(sigma_" + std::to_string(k) + "/sigma_" + std::to_string(l) +
           ")^(1/" + std::to_string(k - l) + ")";
  }

  bool operator==(const SymmetricFunctionSpec &) const = default;
};

// ---------------------------------------------------------------------------
// Elementary symmetric polynomials

/// sigma_0..sigma_kmax of `lambda` by the product recursion
/// prod_i (1 + lambda_i t); O(n * kmax).
inline std::vector<double> elementary_symmetric(std::span<const double> lambda,
                                                int kmax) {
  std::vector<double> e(static_cast<std::size_t>(kmax) + 1, 0.0);
  e[0] = 1.0;
  int filled = 0;
  for (double li : lambda) {
    filled = std::min(filled + 1, kmax);
    for (int j = filled; j >= 1; --j)
      e[j] += li * e[j - 1];
  }
  return e;
}

inline std::vector<double> elementary_symmetric(const Eigen::VectorXd &lambda,
                                                int kmax) {
  return elementary_symmetric(
      std::span<const double>(lambda.data(), lambda.size()), kmax);
}

/// sigma_j(lambda); sigma_0 = 1 and sigma_j = 0 for j > n.
inline double sigma(int j, const Eigen::VectorXd &lambda) {
  if (j < 0)
    throw Error("sigma: negative order");
  if (j == 0)
    return 1.0;
  if (j > lambda.size())
    return 0.0;
  return elementary_symmetric(lambda, j)[j];
}

namespace detail {

// Polynomial product of (1 + lambda_m t) truncated at degree kmax.
inline void multiply_linear(std::vector<double> &poly, double li, int kmax) {
  for (int j = kmax; j >= 1; --j)
    poly[j] += li * poly[j - 1];
}

// Row i holds sigma_0..sigma_kmax of lambda with entry i removed. Built from
// prefix and suffix products so no subtraction (deflation) is involved.
inline Eigen::MatrixXd sigma_drop_one(const Eigen::VectorXd &lambda, int kmax) {
  const int n = static_cast<int>(lambda.size());
  const std::size_t width = static_cast<std::size_t>(kmax) + 1;
  std::vector<std::vector<double>> prefix(n + 1, std::vector<double>(width, 0));
  std::vector<std::vector<double>> suffix(n + 1, std::vector<double>(width, 0));
  prefix[0][0] = 1.0;
  suffix[n][0] = 1.0;
  for (int i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i];
    multiply_linear(prefix[i + 1], lambda[i], kmax);
  }
  for (int i = n - 1; i >= 0; --i) {
    suffix[i] = suffix[i + 1];
    multiply_linear(suffix[i], lambda[i], kmax);
  }
  Eigen::MatrixXd out(n, kmax + 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= kmax; ++j) {
      double s = 0.0;
      for (int a = 0; a <= j; ++a)
        s += prefix[i][a] * suffix[i + 1][j - a];
      out(i, j) = s;
    }
  return out;
}

// sigma_j of lambda with entries i and m removed (i != m).
inline double sigma_drop_two(const Eigen::VectorXd &lambda, int i, int m,
                             int j) {
  if (j < 0)
    return 0.0;
  std::vector<double> e(static_cast<std::size_t>(j) + 1, 0.0);
  e[0] = 1.0;
  for (int q = 0; q < lambda.size(); ++q)
    if (q != i && q != m)
      multiply_linear(e, lambda[q], j);
  return e[j];
}

struct SigmaDerivatives {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

// sigma_k with its first and (optionally) second derivatives:
// d sigma_k / d lambda_i = sigma_{k-1}(lambda|i),
// d^2 sigma_k / d lambda_i d lambda_m = sigma_{k-2}(lambda|i,m), zero diagonal.
inline SigmaDerivatives sigma_derivatives(const Eigen::VectorXd &lambda, int k,
                                          int order) {
  const int n = static_cast<int>(lambda.size());
  SigmaDerivatives d;
  d.value = elementary_symmetric(lambda, k)[k];
  if (order < 1)
    return d;
  const Eigen::MatrixXd drop = sigma_drop_one(lambda, k);
  d.grad = drop.col(k - 1);
  if (order < 2)
    return d;
  d.hess = Eigen::MatrixXd::Zero(n, n);
  if (k >= 2)
    for (int i = 0; i < n; ++i)
      for (int m = i + 1; m < n; ++m) {
        const double v = sigma_drop_two(lambda, i, m, k - 2);
        d.hess(i, m) = v;
        d.hess(m, i) = v;
      }
  return d;
}

inline void check_dimension(const SymmetricFunctionSpec &spec,
                            const Eigen::VectorXd &lambda) {
  if (lambda.size() != spec.n)
    throw Error("eigenvalue tuple has dimension " +
                std::to_string(lambda.size()) + ", expected " +
                std::to_string(spec.n));
}

inline void require_open_cone(const SymmetricFunctionSpec &spec,
                              const Eigen::VectorXd &lambda) {
  const auto e = elementary_symmetric(lambda, spec.cone_order());
  for (int j = 1; j <= spec.cone_order(); ++j)
    if (!(e[j] > 0.0))
      throw OutsideCone("lambda outside Gamma_" +
                            std::to_string(spec.cone_order()) + ": sigma_" +
                            std::to_string(j) + " <= 0",
                        lambda);
}

} // namespace detail

// ---------------------------------------------------------------------------
// f and its derivatives

struct FunctionDerivatives {
  double value = 0.0;
  Eigen::VectorXd grad; // empty when order < 1
  Eigen::MatrixXd hess; // empty when order < 2
};

/// f(lambda) with derivatives up to `order` (0, 1 or 2).
/// Throws OutsideCone unless sigma_1..sigma_k are all strictly positive.
inline FunctionDerivatives evaluate(const SymmetricFunctionSpec &spec,
                                    const Eigen::VectorXd &lambda,
                                    int order = 2) {
  detail::check_dimension(spec, lambda);
  detail::require_open_cone(spec, lambda);
  FunctionDerivatives out;
  const int k = spec.k;

  if (spec.family == Family::SigmaKRoot) {
    const auto sk = detail::sigma_derivatives(lambda, k, order);
    out.value = (k == 1) ? sk.value : std::pow(sk.value, 1.0 / k);
    if (order < 1)
      return out;
    // Df = f / (k sigma_k) D sigma_k
    const double scale = out.value / (k * sk.value);
    out.grad = scale * sk.grad;
    if (order < 2)
      return out;
    // D^2 f = f / (k sigma_k) [D^2 sigma_k + (1/k - 1) D sigma_k D sigma_k^T / sigma_k]
    out.hess = scale * (sk.hess + ((1.0 / k - 1.0) / sk.value) *
                                      (sk.grad * sk.grad.transpose()));
    return out;
  }

  // Quotient family by logarithmic differentiation:
  // log f = (log sigma_k - log sigma_l) / (k - l).
  const int l = spec.l;
  const double e = 1.0 / (k - l);
  const auto sk = detail::sigma_derivatives(lambda, k, order);
  const auto sl = detail::sigma_derivatives(lambda, l, order);
  out.value = std::pow(sk.value / sl.value, e);
  if (order < 1)
    return out;
  const Eigen::VectorXd a = sk.grad / sk.value;
  const Eigen::VectorXd b = sl.grad / sl.value;
  const Eigen::VectorXd glog = e * (a - b);
  out.grad = out.value * glog;
  if (order < 2)
    return out;
  const Eigen::MatrixXd dglog =
      e * (sk.hess / sk.value - a * a.transpose() - sl.hess / sl.value +
           b * b.transpose());
  out.hess = out.value * (glog * glog.transpose() + dglog);
  return out;
}

inline double eval_f(const SymmetricFunctionSpec &spec,
                     const Eigen::VectorXd &lambda) {
  return evaluate(spec, lambda, 0).value;
}

inline Eigen::VectorXd grad_f(const SymmetricFunctionSpec &spec,
                              const Eigen::VectorXd &lambda) {
  return evaluate(spec, lambda, 1).grad;
}

inline Eigen::MatrixXd hess_f(const SymmetricFunctionSpec &spec,
                              const Eigen::VectorXd &lambda) {
  return evaluate(spec, lambda, 2).hess;
}

/// nu_lambda = Df / |Df|, the unit normal to the level set of f.
struct NormalVector {
  Eigen::VectorXd nu;
};

inline NormalVector normal_vector(const SymmetricFunctionSpec &spec,
                                  const Eigen::VectorXd &lambda) {
  const Eigen::VectorXd g = grad_f(spec, lambda);
  return NormalVector{g / g.norm()};
}

// ---------------------------------------------------------------------------
// Cone membership

enum class Membership { Interior, Boundary, Outside };

inline const char *to_string(Membership m) {
  switch (m) {
  case Membership::Interior:
    return "interior";
  case Membership::Boundary:
    return "boundary";
  case Membership::Outside:
    return "outside";
  }
  return "?";
}

struct ConePoint {
  Eigen::VectorXd lambda;
  Membership membership = Membership::Outside;
  double tolerance = 0.0;
  double min_sigma = 0.0; // min_{j<=k} sigma_j(lambda)
};

/// Band used for membership: 1e-12 (1 + |lambda|)^k.
inline double default_cone_tolerance(const SymmetricFunctionSpec &spec,
                                     const Eigen::VectorXd &lambda) {
  return 1e-12 * std::pow(1.0 + lambda.norm(), spec.cone_order());
}

/// min_{j<=k} sigma_j(lambda).
inline double cone_margin(const SymmetricFunctionSpec &spec,
                          const Eigen::VectorXd &lambda) {
  const auto e = elementary_symmetric(lambda, spec.cone_order());
  return *std::min_element(e.begin() + 1, e.end());
}

inline ConePoint cone_membership(const SymmetricFunctionSpec &spec,
                                 const Eigen::VectorXd &lambda,
                                 double tol_cone) {
  detail::check_dimension(spec, lambda);
  ConePoint p;
  p.lambda = lambda;
  p.tolerance = tol_cone;
  p.min_sigma = cone_margin(spec, lambda);
  if (p.min_sigma > tol_cone)
    p.membership = Membership::Interior;
  else if (p.min_sigma >= 0.0)
    p.membership = Membership::Boundary;
  else
    p.membership = Membership::Outside;
  return p;
}

inline ConePoint cone_membership(const SymmetricFunctionSpec &spec,
                                 const Eigen::VectorXd &lambda) {
  return cone_membership(spec, lambda, default_cone_tolerance(spec, lambda));
}

inline bool in_open_cone(const SymmetricFunctionSpec &spec,
                         const Eigen::VectorXd &lambda) {
  const auto e = elementary_symmetric(lambda, spec.cone_order());
  for (int j = 1; j <= spec.cone_order(); ++j)
    if (!(e[j] > 0.0))
      return false;
  return true;
}

// ---------------------------------------------------------------------------
// Sampling of the cone

/// Scale-free distance from the cone boundary:
/// min_j sigma_j(l/|l|) / sigma_j(1/sqrt(n)). Values in (0, 1] inside Gamma_k.
inline double relative_cone_margin(const SymmetricFunctionSpec &spec,
                                   const Eigen::VectorXd &lambda) {
  const int n = spec.n;
  const Eigen::VectorXd unit = lambda / lambda.norm();
  const auto e = elementary_symmetric(unit, spec.cone_order());
  const Eigen::VectorXd center =
      Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(double(n)));
  const auto c = elementary_symmetric(center, spec.cone_order());
  double m = std::numeric_limits<double>::infinity();
  for (int j = 1; j <= spec.cone_order(); ++j)
    m = std::min(m, e[j] / c[j]);
  return m;
}

class ConeSampler {
public:
  ConeSampler(SymmetricFunctionSpec spec, std::uint64_t seed)
      : spec_(spec), rng_(seed) {}

  /// Unit vector inside Gamma_k with relative margin >= min_margin.
  Eigen::VectorXd direction(double min_margin = 0.0) {
    const int n = spec_.n;
    const Eigen::VectorXd center =
        Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(double(n)));
    for (int attempt = 0; attempt < 1000000; ++attempt) {
      Eigen::VectorXd g(n);
      for (int i = 0; i < n; ++i)
        g[i] = rng_.normal();
      // Mixing in the cone axis keeps acceptance high for Gamma_n in larger
      // n while still reaching the cone boundary when the shift is small.
      const double shift = rng_.uniform(0.0, 1.5);
      Eigen::VectorXd w = g / g.norm() + shift * center;
      if (w.norm() == 0.0)
        continue;
      w /= w.norm();
      if (in_open_cone(spec_, w) && relative_cone_margin(spec_, w) >= min_margin)
        return w;
    }
    return center;
  }

  /// Interior point with log-uniform radius in [r_lo, r_hi].
  Eigen::VectorXd interior(double r_lo = 1e-3, double r_hi = 1e3,
                           double min_margin = 0.0) {
    const Eigen::VectorXd d = direction(min_margin);
    return rng_.log_uniform(r_lo, r_hi) * d;
  }

  /// A random ray from an interior point `start` until it leaves the cone;
  /// returns the exit parameter t_b (start + t_b * dir lies on the boundary).
  struct Ray {
    Eigen::VectorXd start;
    Eigen::VectorXd dir;
    double t_exit = 0.0;
  };

  Ray boundary_ray(double r_lo = 1e-3, double r_hi = 1e3) {
    Ray ray;
    ray.start = interior(r_lo, r_hi, 0.2);
    const int n = spec_.n;
    for (;;) {
      Eigen::VectorXd d(n);
      for (int i = 0; i < n; ++i)
        d[i] = rng_.normal();
      ray.dir = d / d.norm() * ray.start.norm();
      double hi = 1.0;
      while (in_open_cone(spec_, ray.start + hi * ray.dir) && hi < 1e6)
        hi *= 2.0;
      if (in_open_cone(spec_, ray.start + hi * ray.dir))
        continue; // ray stays inside (possible for directions in the cone)
      double lo = 0.0;
      for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (in_open_cone(spec_, ray.start + mid * ray.dir) ? lo : hi) = mid;
      }
      ray.t_exit = lo;
      return ray;
    }
  }

  Rng &rng() { return rng_; }

private:
  SymmetricFunctionSpec spec_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Structure conditions

struct ConditionResult {
  std::string name;
  std::string description;
  bool passed = true;
  bool vacuous = false;
  double observed = 0.0; // the condition's summary statistic
  Eigen::VectorXd witness; // worst sample
};

struct StructureReport {
  SymmetricFunctionSpec spec;
  int sample_count = 0;
  std::uint64_t seed = 0;
  double K0 = 0.0;
  std::vector<ConditionResult> conditions;

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

struct StructureOptions {
  double K0 = 0.0;
  double tol_psd = 1e-8;
  double r_lo = 1e-3;
  double r_hi = 1e3;
  int boundary_rays = 64;
};

/// Samples the cone and checks, in order: f_i > 0; concavity; f > 0 with
/// f -> 0 along rays to the boundary; sum f_i l_i >= -K0 (1 + sum f_i);
/// the empirical nu_0 on samples with a negative entry; and growth of f(R 1).
inline StructureReport check_structure_conditions(
    const SymmetricFunctionSpec &spec, int sample_count, std::uint64_t seed,
    const StructureOptions &opt = {}) {
  spec.validate();
  if (sample_count < 1)
    throw Error("check_structure_conditions: sample_count must be >= 1");
  StructureReport rep;
  rep.spec = spec;
  rep.sample_count = sample_count;
  rep.seed = seed;
  rep.K0 = opt.K0;

  ConeSampler sampler(spec, seed);
  const int n = spec.n;

  ConditionResult mono{"monotonicity", "f_i > 0 in Gamma", true, false,
                       std::numeric_limits<double>::infinity(), {}};
  ConditionResult concave{"concavity",
                          "lambda_max(D^2 f) <= tol (1 + |D^2 f|_inf)", true,
                          false, -std::numeric_limits<double>::infinity(), {}};
  ConditionResult positive{"positivity",
                           "f > 0 in Gamma and f -> 0 on the boundary", true,
                           false, std::numeric_limits<double>::infinity(), {}};
  ConditionResult euler{"K0_condition",
                        "sum f_i lambda_i + K0 (1 + sum f_i) >= 0", true,
                        false, std::numeric_limits<double>::infinity(), {}};
  ConditionResult nu0{"nu0_condition",
                      "f_j >= nu0 (1 + sum f_i) where lambda_j < 0", true,
                      true, std::numeric_limits<double>::infinity(), {}};
  ConditionResult growth{"growth", "f(R 1) -> infinity as R -> infinity", true,
                         false, 0.0, {}};

  for (int s = 0; s < sample_count; ++s) {
    const Eigen::VectorXd lambda = sampler.interior(opt.r_lo, opt.r_hi);
    const auto d = evaluate(spec, lambda, 2);

    const double min_fi = d.grad.minCoeff();
    const double scaled = min_fi / d.grad.norm();
    if (scaled < mono.observed) {
      mono.observed = scaled;
      mono.witness = lambda;
    }
    if (!(min_fi > 0.0))
      mono.passed = false;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(d.hess,
                                                       Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    const double normalized = top / (1.0 + d.hess.cwiseAbs().maxCoeff());
    if (normalized > concave.observed) {
      concave.observed = normalized;
      concave.witness = lambda;
    }
    if (normalized > opt.tol_psd)
      concave.passed = false;

    const double f_scaled = d.value / lambda.norm();
    if (f_scaled < positive.observed) {
      positive.observed = f_scaled;
      positive.witness = lambda;
    }
    if (!(d.value > 0.0))
      positive.passed = false;

    const double sum_fi = d.grad.sum();
    const double k0_term = d.grad.dot(lambda) + opt.K0 * (1.0 + sum_fi);
    if (k0_term < euler.observed) {
      euler.observed = k0_term;
      euler.witness = lambda;
    }
    if (k0_term < 0.0)
      euler.passed = false;

    for (int j = 0; j < n; ++j)
      if (lambda[j] < 0.0) {
        nu0.vacuous = false;
        const double ratio = d.grad[j] / (1.0 + sum_fi);
        if (ratio < nu0.observed) {
          nu0.observed = ratio;
          nu0.witness = lambda;
        }
        if (!(ratio > 0.0))
          nu0.passed = false;
      }
  }
  if (nu0.vacuous)
    nu0.observed = 0.0;

  // f -> 0 toward the boundary: along each ray, f at fractions 1 - 10^-j of
  // the exit parameter must decrease and decay like a positive power.
  const int rays = std::min(opt.boundary_rays, sample_count);
  const double expected_exponent =
      spec.family == Family::SigmaKRoot ? 1.0 / spec.k : 1.0 / (spec.k - spec.l);
  for (int r = 0; r < rays; ++r) {
    const auto ray = sampler.boundary_ray(opt.r_lo, opt.r_hi);
    double previous = eval_f(spec, ray.start);
    double f6 = 0.0, f12 = 0.0;
    for (int j = 1; j <= 12; ++j) {
      const double t = ray.t_exit * (1.0 - std::pow(10.0, -j));
      const Eigen::VectorXd p = ray.start + t * ray.dir;
      if (!in_open_cone(spec, p))
        break;
      const double fv = eval_f(spec, p);
      if (j >= 3 && fv > previous) {
        positive.passed = false;
        positive.witness = p;
      }
      previous = fv;
      if (j == 6)
        f6 = fv;
      if (j == 12)
        f12 = fv;
    }
    if (f6 > 0.0 && f12 > 0.0) {
      const double observed_exponent = std::log10(f6 / f12) / 6.0;
      if (observed_exponent < 0.5 * expected_exponent) {
        positive.passed = false;
        positive.witness = ray.start + ray.t_exit * ray.dir;
      }
    }
  }

  // Growth along the diagonal on a doubling ladder R = 2^0..2^40.
  {
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    double prev = eval_f(spec, ones);
    const double f1 = prev;
    for (int e = 1; e <= 40; ++e) {
      const double R = std::ldexp(1.0, e);
      const double fv = eval_f(spec, R * ones);
      if (!(fv > prev)) {
        growth.passed = false;
        growth.witness = R * ones;
      }
      prev = fv;
    }
    growth.observed = prev / f1; // f(2^40 1) / f(1)
    if (growth.observed < std::ldexp(1.0, 39))
      growth.passed = false;
  }

  rep.conditions = {mono, concave, positive, euler, nu0, growth};
  return rep;
}

/// Throwing form of check_structure_conditions.
inline void require_structure_conditions(const SymmetricFunctionSpec &spec,
                                         int sample_count, std::uint64_t seed,
                                         const StructureOptions &opt = {}) {
  const auto rep = check_structure_conditions(spec, sample_count, seed, opt);
  for (const auto &c : rep.conditions)
    if (!c.passed)
      throw StructureViolation(c.name, c.witness,
                               "structure condition failed: " + c.name);
}

// ---------------------------------------------------------------------------
// Sampled certificate for the Guan-type inequality
//   sum f_i(l) (m_i - l_i) >= f(m) - f(l) + theta (1 + sum f_i(l))
// over pairs with |nu_m - nu_l| >= zeta.

struct ThetaCertificate {
  std::optional<double> theta_hat; // nullopt means Vacuous
  double zeta = 0.0;
  std::size_t sample_count = 0; // lambda samples
  std::size_t mu_count = 0;
  std::size_t pairs_evaluated = 0;
  std::size_t pairs_in_premise = 0;
  std::size_t violations_at_zero = 0; // pairs breaking the inequality at theta = 0
  Eigen::VectorXd worst_mu;
  Eigen::VectorXd worst_lambda;

  bool vacuous() const noexcept { return !theta_hat.has_value(); }
  /// theta_hat > 0 whenever the premise was met, and concavity never failed.
  bool holds() const noexcept {
    return violations_at_zero == 0 && (vacuous() || *theta_hat > 0.0);
  }
};

inline ThetaCertificate
estimate_theta(const SymmetricFunctionSpec &spec,
               std::span<const Eigen::VectorXd> mu_samples, double zeta,
               std::span<const Eigen::VectorXd> lambda_samples) {
  if (!(zeta > 0.0))
    throw Error("estimate_theta: zeta must be > 0");
  const int n = spec.n;
  const std::size_t nm = mu_samples.size();
  const std::size_t nl = lambda_samples.size();

  // Per-mu: f(mu), nu_mu. Per-lambda: Df(lambda), nu_lambda,
  // f(lambda) - Df.lambda and 1 + sum f_i.
  Eigen::MatrixXd mu(n, nm), nu_mu(n, nm);
  Eigen::VectorXd f_mu(nm);
  for (std::size_t a = 0; a < nm; ++a) {
    const auto d = evaluate(spec, mu_samples[a], 1);
    mu.col(a) = mu_samples[a];
    f_mu[a] = d.value;
    nu_mu.col(a) = d.grad / d.grad.norm();
  }
  Eigen::MatrixXd df(n, nl), nu_l(n, nl);
  Eigen::VectorXd offset(nl), denom(nl), scale(nl);
  for (std::size_t b = 0; b < nl; ++b) {
    const auto d = evaluate(spec, lambda_samples[b], 1);
    df.col(b) = d.grad;
    nu_l.col(b) = d.grad / d.grad.norm();
    const double euler = d.grad.dot(lambda_samples[b]);
    offset[b] = d.value - euler;
    denom[b] = 1.0 + d.grad.sum();
    scale[b] = std::abs(d.value) + std::abs(euler);
  }

  ThetaCertificate cert;
  cert.zeta = zeta;
  cert.sample_count = nl;
  cert.mu_count = nm;
  const double gap_sq_threshold = zeta * zeta;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_a = 0, best_b = 0;
  for (std::size_t b = 0; b < nl; ++b) {
    const double *dfb = df.col(b).data();
    const double *nub = nu_l.col(b).data();
    for (std::size_t a = 0; a < nm; ++a) {
      const double *mua = mu.col(a).data();
      const double *nua = nu_mu.col(a).data();
      double dot_f = 0.0, dot_nu = 0.0, abs_f = 0.0;
      for (int i = 0; i < n; ++i) {
        dot_f += dfb[i] * mua[i];
        abs_f += std::abs(dfb[i] * mua[i]);
        dot_nu += nub[i] * nua[i];
      }
      const double excess = dot_f + offset[b] - f_mu[a];
      ++cert.pairs_evaluated;
      const double tol = 1e-10 * (abs_f + scale[b] + std::abs(f_mu[a]));
      if (excess < -tol)
        ++cert.violations_at_zero;
      if (2.0 - 2.0 * dot_nu >= gap_sq_threshold) {
        ++cert.pairs_in_premise;
        const double ratio = excess / denom[b];
        if (ratio < best) {
          best = ratio;
          best_a = a;
          best_b = b;
        }
      }
    }
  }
  if (cert.pairs_in_premise > 0) {
    cert.theta_hat = best;
    cert.worst_mu = mu_samples[best_a];
    cert.worst_lambda = lambda_samples[best_b];
  }
  return cert;
}

} // namespace hessobs
