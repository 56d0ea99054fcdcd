#pragma once

// Subcommands behind the command-line tool. Each returns a process exit code:
// 0 ok, 1 configuration error, 2 solver failure, 3 condition violation,
// 4 uniformity warning.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "hessobs/config.hpp"
#include "hessobs/estimate_monitors.hpp"
#include "hessobs/newton_continuation.hpp"
#include "hessobs/report.hpp"

namespace hessobs::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kSolverFailure = 2,
  kConditionViolation = 3,
  kUniformityWarning = 4,
};

struct CommandOptions {
  std::string out_dir; // empty: no files
  config::Overrides overrides;
  bool quiet = false;
  report::FieldFormat field_format = report::FieldFormat::Text;
};

struct LemmaOptions {
  std::optional<double> zeta;
  std::optional<int> samples;
};

namespace detail {

inline std::optional<config::BuiltProblem>
load(const std::string &path, const CommandOptions &opt, std::ostream &err) {
  try {
    config::ProblemConfig cfg = config::load_config(path);
    config::apply_overrides(cfg, opt.overrides);
    return config::build_problem(cfg);
  } catch (const ConfigError &e) {
    err << path << ": " << e.what() << "\n";
  } catch (const Error &e) {
    err << path << ": " << e.what() << "\n";
  }
  return std::nullopt;
}

inline report::Json problem_json(const config::BuiltProblem &bp) {
  const Problem &p = bp.problem;
  report::Json j;
  j["function"] = p.function.name();
  j["n"] = p.function.n;
  report::Json m = report::Json::array();
  for (int a = 0; a < p.grid->dim(); ++a)
    m.push_back(p.grid->points(a));
  j["grid_points"] = m;
  j["interior_points"] = p.grid->interior_count();
  j["max_spacing"] = report::number(p.grid->max_spacing());
  j["metric"] = bp.config.metric_type;
  j["coefficients"] = to_string(p.coefficients.kind);
  if (p.coefficients.certified)
    j["coefficients_certified"] = *p.coefficients.certified;
  j["boundary_obstacle_gap"] = report::number(p.boundary_obstacle_gap());
  j["subsolution"] = p.subsolution ? "configured" : "builtin";
  return j;
}

inline void ensure_dir(const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw Error("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void print_json(std::ostream &out, const report::Json &j) {
  out << j.dump(2) << "\n";
}

inline void write_json(const CommandOptions &opt, const std::string &name,
                       const report::Json &j) {
  if (opt.out_dir.empty())
    return;
  const std::filesystem::path dir(opt.out_dir);
  ensure_dir(dir);
  report::write_file(dir / name, j.dump(2) + "\n");
}

/// Shared body of solve and sweep.
inline int run_continuation(const std::string &command, const std::string &path,
                            const CommandOptions &opt, bool uniformity_exit,
                            std::ostream &out, std::ostream &err) {
  const auto bp = load(path, opt, err);
  if (!bp)
    return kConfigError;
  const config::ProblemConfig &cfg = bp->config;
  const Problem &prob = bp->problem;

  ContinuationOptions copt;
  copt.audit = cfg.audit_enabled;
  copt.audit_options.C_audit = cfg.C_audit;
  copt.audit_options.theta_samples = cfg.theta_samples;
  copt.audit_options.seed = cfg.seed;

  report::Json doc;
  doc["command"] = command;
  doc["config"] = config::to_text(cfg);
  doc["problem"] = problem_json(*bp);
  report::Json sched = report::Json::array();
  for (double e : cfg.schedule().values())
    sched.push_back(report::number(e));
  doc["schedule"] = sched;
  const NewtonConfig ncfg = cfg.newton();
  doc["newton"] = {{"tol_residual", report::number(ncfg.tol_residual)},
                   {"max_iters", ncfg.max_iters},
                   {"armijo_c", report::number(ncfg.armijo_c)},
                   {"backtrack", report::number(ncfg.backtrack)},
                   {"fraction_to_boundary", report::number(ncfg.fraction_to_boundary)},
                   {"min_step", report::number(ncfg.min_step)}};

  ContinuationResult res;
  int code = kOk;
  try {
    res = continuation_solve(prob, cfg.schedule(), ncfg, copt);
    if (res.failed) {
      code = kSolverFailure;
      doc["status"] = "solver_failure";
      doc["diagnosis"] = res.diagnosis;
    } else {
      doc["status"] = "converged";
    }
  } catch (const ConfigError &e) {
    err << path << ": " << e.what() << "\n";
    return kConfigError;
  } catch (const Error &e) {
    code = kSolverFailure;
    doc["status"] = "solver_failure";
    doc["diagnosis"] = e.what();
  }

  report::Json steps = report::Json::array();
  std::vector<NormBundle> rows;
  for (const auto &s : res.steps) {
    report::Json j;
    j["epsilon"] = report::number(s.epsilon);
    j["solve"] = report::to_json(s.report);
    if (s.report.converged()) {
      j["norms"] = report::to_json(s.norms);
      j["contact"] = report::to_json(s.contact);
      rows.push_back(s.norms);
    }
    if (s.audit)
      j["audit"] = report::to_json(*s.audit);
    steps.push_back(j);
  }
  doc["steps"] = steps;
  if (!rows.empty())
    doc["sweep"] = report::to_json(res.sweep);

  if (code == kOk && uniformity_exit && !res.sweep.uniform())
    code = kUniformityWarning;
  std::size_t audit_violations = 0;
  for (const auto &s : res.steps)
    if (s.audit)
      audit_violations += s.audit->violations();
  doc["audit_violations"] = audit_violations;
  doc["exit_code"] = code;

  try {
    if (!opt.out_dir.empty()) {
      const std::filesystem::path dir(opt.out_dir);
      ensure_dir(dir);
      report::write_file(dir / "report.json", doc.dump(2) + "\n");
      report::write_file(dir / "norms.csv", report::norms_table(rows).str());
      report::write_file(dir / "contact.csv", report::contact_table(res, prob).str());
      report::write_file(dir / "residuals.csv", report::residual_table(res).str());
      report::write_file(dir / "audit.csv", report::audit_table(res).str());
      ensure_dir(dir / "fields");
      char name[32];
      for (std::size_t i = 0; i < res.steps.size(); ++i) {
        const auto &s = res.steps[i];
        if (opt.field_format == report::FieldFormat::Text) {
          std::snprintf(name, sizeof name, "u_%03zu.txt", i);
          report::write_file(dir / "fields" / name, report::field_text(s.u, s.epsilon));
        } else {
          std::snprintf(name, sizeof name, "u_%03zu.bin", i);
          report::write_file(dir / "fields" / name,
                             report::field_binary(s.u, s.epsilon));
        }
      }
    }
  } catch (const Error &e) {
    err << e.what() << "\n";
    return kSolverFailure;
  }

  if (!opt.quiet) {
    for (const auto &s : res.steps) {
      out << "eps " << config::format_number(s.epsilon) << ": "
          << to_string(s.report.status) << ", " << s.report.iterations
          << " iterations, residual "
          << config::format_number(s.report.final_residual());
      if (s.report.converged())
        out << ", penalty_sup " << config::format_number(s.norms.penalty_sup)
            << ", contact points " << s.contact.contact.size();
      out << "\n";
    }
    if (!rows.empty())
      for (const auto &r : res.sweep.ratios)
        out << r.field << " ratio " << config::format_number(r.ratio)
            << (r.warning ? "  WARNING: exceeds 2" : "") << "\n";
    if (doc.contains("diagnosis"))
      out << "diagnosis: " << doc["diagnosis"].get<std::string>() << "\n";
  }
  if (code == kSolverFailure)
    err << path << ": solver failure: "
        << (doc.contains("diagnosis") ? doc["diagnosis"].get<std::string>()
                                      : std::string("unknown"))
        << "\n";
  return code;
}

} // namespace detail

inline int cmd_solve(const std::string &path, const CommandOptions &opt,
                     std::ostream &out = std::cout, std::ostream &err = std::cerr) {
  return detail::run_continuation("solve", path, opt, false, out, err);
}

inline int cmd_sweep(const std::string &path, const CommandOptions &opt,
                     std::ostream &out = std::cout, std::ostream &err = std::cerr) {
  return detail::run_continuation("sweep", path, opt, true, out, err);
}

inline int cmd_check_structure(const std::string &path, const CommandOptions &opt,
                               std::ostream &out = std::cout,
                               std::ostream &err = std::cerr) {
  const auto bp = detail::load(path, opt, err);
  if (!bp)
    return kConfigError;
  const config::ProblemConfig &cfg = bp->config;
  StructureOptions sopt;
  sopt.K0 = cfg.K0;
  report::Json doc;
  doc["command"] = "check-structure";
  doc["config"] = config::to_text(cfg);
  int code = kOk;
  try {
    const StructureReport sr = check_structure_conditions(
        bp->problem.function, cfg.structure_samples, cfg.seed, sopt);
    const CoefficientCertificate cc = certify_coefficients(
        bp->problem, {cfg.structure_samples, cfg.seed});
    report::Json conds = report::Json::array();
    std::vector<const ConditionResult *> failed;
    for (const auto &c : sr.conditions) {
      conds.push_back(report::to_json(c));
      if (!c.passed)
        failed.push_back(&c);
    }
    for (const auto &c : cc.conditions) {
      conds.push_back(report::to_json(c));
      if (!c.passed)
        failed.push_back(&c);
    }
    doc["function"] = bp->problem.function.name();
    doc["samples"] = cfg.structure_samples;
    doc["seed"] = cfg.seed;
    doc["K0"] = report::number(cfg.K0);
    doc["conditions"] = conds;
    doc["passed"] = failed.empty();
    if (!failed.empty())
      code = kConditionViolation;
    for (const ConditionResult *c : failed) {
      err << "condition " << c->name << " violated: " << c->description
          << "; observed " << config::format_number(c->observed) << " at witness (";
      for (Eigen::Index i = 0; i < c->witness.size(); ++i)
        err << (i ? ", " : "") << config::format_number(c->witness[i]);
      err << ")\n";
    }
  } catch (const Error &e) {
    err << path << ": " << e.what() << "\n";
    return kSolverFailure;
  }
  doc["exit_code"] = code;
  detail::write_json(opt, "structure.json", doc);
  if (!opt.quiet)
    detail::print_json(out, doc);
  return code;
}

inline int cmd_verify_lemma(const std::string &path, const CommandOptions &opt,
                            const LemmaOptions &lopt, std::ostream &out = std::cout,
                            std::ostream &err = std::cerr) {
  const auto bp = detail::load(path, opt, err);
  if (!bp)
    return kConfigError;
  const config::ProblemConfig &cfg = bp->config;
  const Problem &prob = bp->problem;
  const int samples = lopt.samples.value_or(10000);
  if (samples < 1) {
    err << "--samples: must be >= 1\n";
    return kConfigError;
  }
  if (lopt.zeta && !(*lopt.zeta > 0.0)) {
    err << "--zeta: must be > 0\n";
    return kConfigError;
  }
  report::Json doc;
  doc["command"] = "verify-lemma";
  doc["config"] = config::to_text(cfg);
  int code = kOk;
  try {
    const GridFunction u_sub = default_initializer(prob);
    const std::vector<Eigen::VectorXd> mu =
        state_eigenvalues(u_sub, prob, cfg.schedule().eps0);
    const double zeta = lopt.zeta.value_or(zeta_zero(prob.function, mu));
    std::vector<Eigen::VectorXd> lambda;
    lambda.reserve(static_cast<std::size_t>(samples));
    ConeSampler sampler(prob.function, cfg.seed);
    for (int s = 0; s < samples; ++s)
      lambda.push_back(sampler.interior());
    const ThetaCertificate cert = estimate_theta(prob.function, mu, zeta, lambda);
    doc["function"] = prob.function.name();
    doc["seed"] = cfg.seed;
    doc["subsolution"] = prob.subsolution ? "configured" : "builtin";
    doc["certificate"] = report::to_json(cert);
    if (!cert.holds()) {
      code = kConditionViolation;
      err << "lemma check failed: " << cert.violations_at_zero
          << " sampled pairs violate the inequality at theta = 0\n";
    }
  } catch (const Error &e) {
    err << path << ": " << e.what() << "\n";
    return kSolverFailure;
  }
  doc["exit_code"] = code;
  detail::write_json(opt, "lemma.json", doc);
  if (!opt.quiet)
    detail::print_json(out, doc);
  return code;
}

} // namespace hessobs::cli
