#pragma once

// Report emission: JSON documents, CSV tables and grid field dumps.
// All numbers are written as the shortest decimal that round-trips, so equal
// inputs give byte-identical files.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hessobs/config.hpp"
#include "hessobs/estimate_monitors.hpp"
#include "hessobs/newton_continuation.hpp"

namespace hessobs::report {

using Json = nlohmann::ordered_json;

inline Json number(double v) {
  if (std::isfinite(v))
    return v;
  return std::isnan(v) ? Json("nan") : Json(v > 0 ? "inf" : "-inf");
}

inline Json vector_json(const Eigen::VectorXd &v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    a.push_back(number(v[i]));
  return a;
}

inline Json to_json(const ConditionResult &c) {
  Json j;
  j["name"] = c.name;
  j["description"] = c.description;
  j["passed"] = c.passed;
  j["vacuous"] = c.vacuous;
  j["observed"] = number(c.observed);
  j["witness"] = vector_json(c.witness);
  return j;
}

inline Json to_json(const ThetaCertificate &c) {
  Json j;
  j["theta_hat"] = c.theta_hat ? number(*c.theta_hat) : Json("vacuous");
  j["zeta"] = number(c.zeta);
  j["sample_count"] = c.sample_count;
  j["mu_count"] = c.mu_count;
  j["pairs_evaluated"] = c.pairs_evaluated;
  j["pairs_in_premise"] = c.pairs_in_premise;
  j["violations_at_zero"] = c.violations_at_zero;
  j["worst_mu"] = vector_json(c.worst_mu);
  j["worst_lambda"] = vector_json(c.worst_lambda);
  j["holds"] = c.holds();
  return j;
}

inline Json to_json(const NormBundle &b) {
  Json j;
  j["epsilon"] = number(b.epsilon);
  j["c0_norm"] = number(b.c0_norm);
  j["grad_norm"] = number(b.grad_norm);
  j["hess_norm"] = number(b.hess_norm);
  j["hess_entry_norm"] = number(b.hess_entry_norm);
  j["penalty_sup"] = number(b.penalty_sup);
  j["obstacle_violation"] = number(b.obstacle_violation);
  j["violation_bound"] = number(b.violation_bound);
  j["bound_holds"] = b.bound_holds;
  return j;
}

inline Json to_json(const SolveReport &r) {
  Json j;
  j["epsilon"] = number(r.epsilon);
  j["status"] = to_string(r.status);
  j["iterations"] = r.iterations;
  Json res = Json::array(), steps = Json::array();
  for (double v : r.residual_history)
    res.push_back(number(v));
  for (double v : r.step_history)
    steps.push_back(number(v));
  j["residual_history"] = res;
  j["step_history"] = steps;
  j["margin"] = number(r.margin);
  j["min_ellipticity"] = number(r.min_ellipticity);
  j["subsolution_dominance"] = number(r.subsolution_dominance);
  j["diagnosis"] = r.diagnosis;
  return j;
}

inline Json to_json(const InequalityAudit &a) {
  Json j;
  j["zeta0"] = number(a.zeta0);
  j["theta_hat"] = a.theta_hat ? number(*a.theta_hat) : Json("vacuous");
  j["tol_audit"] = number(a.tol_audit);
  j["case1_points"] = a.case1_points;
  j["case2_points"] = a.case2_points;
  j["case1_violations"] = a.case1_violations;
  j["case2_violations"] = a.case2_violations;
  j["worst_slack_case1"] = number(a.worst_slack_case1);
  j["worst_slack_case2"] = number(a.worst_slack_case2);
  j["fprime_worst"] = number(a.fprime_worst);
  j["fprime_violations"] = a.fprime_violations;
  j["fprime_spread"] = number(a.fprime_spread);
  j["violations"] = a.violations();
  j["certificate"] = to_json(a.certificate);
  return j;
}

inline Json to_json(const ContactSet &c) {
  Json j;
  j["tau"] = number(c.tau);
  j["points"] = c.contact.size();
  j["interface_points"] = c.interface.size();
  j["touches_boundary"] = c.touches_boundary;
  return j;
}

inline Json to_json(const SweepReport &s) {
  Json j;
  Json ratios = Json::object();
  for (const auto &r : s.ratios) {
    Json e;
    e["ratio"] = number(r.ratio);
    e["warning"] = r.warning;
    ratios[r.field] = e;
  }
  j["ratios"] = ratios;
  j["uniformity_limit"] = number(kUniformityLimit);
  j["uniform"] = s.uniform();
  j["violation_monotone"] = s.violation_monotone;
  return j;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + "\"";
}

/// A CSV table with one `#` metadata row, a header row and data rows.
class CsvTable {
public:
  CsvTable(std::string metadata, std::vector<std::string> header)
      : metadata_(std::move(metadata)), header_(std::move(header)) {}

  CsvTable &row() {
    rows_.emplace_back();
    return *this;
  }
  CsvTable &add(const std::string &s) {
    rows_.back().push_back(csv_field(s));
    return *this;
  }
  CsvTable &add(double v) {
    rows_.back().push_back(config::format_number(v));
    return *this;
  }
  CsvTable &add(std::size_t v) {
    rows_.back().push_back(std::to_string(v));
    return *this;
  }
  CsvTable &add(int v) {
    rows_.back().push_back(std::to_string(v));
    return *this;
  }
  CsvTable &add(bool v) {
    rows_.back().push_back(v ? "1" : "0");
    return *this;
  }

  std::size_t size() const noexcept { return rows_.size(); }

  std::string str() const {
    std::string out = "# " + metadata_ + "\n";
    auto line = [&out](const std::vector<std::string> &cells) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        out += (i ? "," : "") + cells[i];
      out += "\n";
    };
    std::vector<std::string> h;
    for (const auto &c : header_)
      h.push_back(csv_field(c));
    line(h);
    for (const auto &r : rows_)
      line(r);
    return out;
  }

private:
  std::string metadata_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline CsvTable norms_table(const std::vector<NormBundle> &rows) {
  CsvTable t("epsilon: penalty parameter; c0_norm: max|u|; grad_norm: max|grad u|_g; "
             "hess_norm: max|lambda_i(U)|; hess_entry_norm: max|d_ij u| (chart); "
             "penalty_sup: max (u-h)_+^3/eps; obstacle_violation: max (u-h)_+; "
             "violation_bound: (penalty_sup*eps)^(1/3); bound_holds: 1 if "
             "violation <= bound + 1e-12",
             {"epsilon", "c0_norm", "grad_norm", "hess_norm", "hess_entry_norm",
              "penalty_sup", "obstacle_violation", "violation_bound", "bound_holds"});
  for (const auto &b : rows)
    t.row()
        .add(b.epsilon)
        .add(b.c0_norm)
        .add(b.grad_norm)
        .add(b.hess_norm)
        .add(b.hess_entry_norm)
        .add(b.penalty_sup)
        .add(b.obstacle_violation)
        .add(b.violation_bound)
        .add(b.bound_holds);
  return t;
}

inline CsvTable contact_table(const ContinuationResult &res, const Problem &prob) {
  const ChartGrid &grid = *prob.grid;
  const int n = grid.dim();
  std::vector<std::string> header = {"epsilon", "point", "i", "j"};
  if (n == 3)
    header.push_back("k");
  for (int a = 0; a < n; ++a)
    header.push_back("x" + std::to_string(a + 1));
  for (const char *c : {"u", "h", "gap", "interface"})
    header.push_back(c);
  CsvTable t("one row per contact cell {u >= h - tau}; point: row-major grid index; "
             "i,j,k: axis indices; x: chart coordinates; gap: h - u; interface: "
             "1 if an axis neighbour lies outside the set",
             header);
  for (const auto &s : res.steps) {
    if (!s.report.converged())
      continue;
    std::vector<std::uint8_t> iface(grid.size(), 0);
    for (std::size_t p : s.contact.interface)
      iface[p] = 1;
    for (std::size_t p : s.contact.contact) {
      const auto ijk = grid.multi(p);
      const SmallVector x = grid.coord(p);
      t.row().add(s.epsilon).add(p);
      for (int a = 0; a < n; ++a)
        t.add(ijk[a]);
      for (int a = 0; a < n; ++a)
        t.add(x[a]);
      t.add(s.u[p]).add(prob.obstacle[p]).add(prob.obstacle[p] - s.u[p]);
      t.add(iface[p] != 0);
    }
  }
  return t;
}

inline CsvTable residual_table(const ContinuationResult &res) {
  CsvTable t("epsilon: penalty parameter; iteration: Newton step (0 = warm start); "
             "residual: max-norm of the penalized residual; step: accepted "
             "line-search length (empty at iteration 0)",
             {"epsilon", "iteration", "residual", "step"});
  for (const auto &s : res.steps) {
    const auto &h = s.report.residual_history;
    for (std::size_t i = 0; i < h.size(); ++i) {
      t.row().add(s.epsilon).add(i).add(h[i]);
      if (i == 0 || i - 1 >= s.report.step_history.size())
        t.add(std::string());
      else
        t.add(s.report.step_history[i - 1]);
    }
  }
  return t;
}

inline CsvTable audit_table(const ContinuationResult &res) {
  CsvTable t("zeta0: normal-gap threshold; theta_hat: sampled constant (empty if "
             "vacuous); tol_audit: C_audit*h^2; case1/case2: interior points with "
             "normal gap >= / < zeta0; slack: worst value of the audited "
             "inequality (>= -tol_audit passes); fprime_worst: min_i f_i - "
             "(zeta0/sqrt n) sum f_i over case-2 points; fprime_spread: max_i f_i - "
             "min_i f_i",
             {"epsilon", "zeta0", "theta_hat", "tol_audit", "case1_points",
              "case2_points", "case1_violations", "case2_violations",
              "worst_slack_case1", "worst_slack_case2", "fprime_worst",
              "fprime_violations", "fprime_spread"});
  for (const auto &s : res.steps) {
    if (!s.audit)
      continue;
    const auto &a = *s.audit;
    t.row().add(s.epsilon).add(a.zeta0);
    if (a.theta_hat)
      t.add(*a.theta_hat);
    else
      t.add(std::string());
    t.add(a.tol_audit)
        .add(a.case1_points)
        .add(a.case2_points)
        .add(a.case1_violations)
        .add(a.case2_violations)
        .add(a.worst_slack_case1)
        .add(a.worst_slack_case2)
        .add(a.fprime_worst)
        .add(a.fprime_violations)
        .add(a.fprime_spread);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Field dumps

enum class FieldFormat { Text, Binary };

/// Text: a `#` header line with n, m, lo, hi and epsilon, then one value per
/// line in row-major order with 17 significant digits.
inline std::string field_text(const GridFunction &u, double epsilon) {
  const ChartGrid &g = *u.grid;
  std::string out = "# hessobs-field n " + std::to_string(g.dim()) + " m";
  for (int a = 0; a < g.dim(); ++a)
    out += " " + std::to_string(g.points(a));
  out += " lo";
  for (int a = 0; a < g.dim(); ++a)
    out += " " + config::format_number(g.lo(a));
  out += " hi";
  for (int a = 0; a < g.dim(); ++a)
    out += " " + config::format_number(g.hi(a));
  out += " epsilon " + config::format_number(epsilon) + "\n";
  char buf[40];
  for (std::size_t p = 0; p < g.size(); ++p) {
    std::snprintf(buf, sizeof buf, "%.17g\n", u[p]);
    out += buf;
  }
  return out;
}

/// Binary: the same header line, then little-endian IEEE doubles.
inline std::string field_binary(const GridFunction &u, double epsilon) {
  std::string text = field_text(u, epsilon);
  std::string out = text.substr(0, text.find('\n') + 1);
  out.replace(0, 16, "# hessobs-binary ");
  out.append(reinterpret_cast<const char *>(u.values.data()),
             u.values.size() * sizeof(double));
  return out;
}

inline void write_file(const std::filesystem::path &path, const std::string &data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw Error("cannot write '" + path.string() + "'");
  f << data;
  if (!f)
    throw Error("write failed for '" + path.string() + "'");
}

} // namespace hessobs::report
