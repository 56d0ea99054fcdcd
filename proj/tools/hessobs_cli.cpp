#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hessobs/commands.hpp"

using namespace hessobs;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<double> eps_min;
  std::optional<int> grid_m;
  std::optional<std::uint64_t> seed;
  std::string audit;
  bool quiet = false;
  std::string fields = "text";
};

void add_common(CLI::App *cmd, Flags &f) {
  cmd->add_option("config", f.config, "problem configuration file")->required();
  cmd->add_option("--out", f.out, "directory for the report bundle");
  cmd->add_option("--eps-min", f.eps_min, "override schedule.eps_min");
  cmd->add_option("--grid-m", f.grid_m, "override grid.m on every axis");
  cmd->add_option("--seed", f.seed, "override audit.seed");
  cmd->add_option("--audit", f.audit, "override audit.enabled")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_flag("--quiet", f.quiet, "suppress progress output");
}

cli::CommandOptions options(const Flags &f) {
  cli::CommandOptions o;
  o.out_dir = f.out;
  o.quiet = f.quiet;
  o.overrides.grid_m = f.grid_m;
  o.overrides.eps_min = f.eps_min;
  o.overrides.seed = f.seed;
  if (!f.audit.empty())
    o.overrides.audit = f.audit == "on";
  o.field_format =
      f.fields == "binary" ? report::FieldFormat::Binary : report::FieldFormat::Text;
  return o;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Penalized Newton solver for Hessian-type obstacle problems"};
  app.require_subcommand(1);
  Flags f;
  cli::LemmaOptions lemma;

  auto *solve = app.add_subcommand("solve", "run the epsilon continuation");
  add_common(solve, f);
  solve->add_option("--fields", f.fields, "field dump format")
      ->check(CLI::IsMember({"text", "binary"}));

  auto *sweep = app.add_subcommand(
      "sweep", "run the continuation with monitors; exit 4 on uniformity warnings");
  add_common(sweep, f);
  sweep->add_option("--fields", f.fields, "field dump format")
      ->check(CLI::IsMember({"text", "binary"}));

  auto *structure =
      app.add_subcommand("check-structure", "sample the structure conditions");
  add_common(structure, f);

  auto *verify = app.add_subcommand("verify-lemma", "estimate the normal-gap constant");
  add_common(verify, f);
  verify->add_option("--zeta", lemma.zeta, "normal-gap threshold");
  verify->add_option("--samples", lemma.samples, "number of cone samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kConfigError;
  }

  const cli::CommandOptions opt = options(f);
  if (solve->parsed())
    return cli::cmd_solve(f.config, opt);
  if (sweep->parsed())
    return cli::cmd_sweep(f.config, opt);
  if (structure->parsed())
    return cli::cmd_check_structure(f.config, opt);
  return cli::cmd_verify_lemma(f.config, opt, lemma);
}
