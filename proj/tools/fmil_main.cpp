#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "fmil/errors.hpp"
#include "harness.hpp"

namespace {

struct VerbArgs {
  CLI::App* sub = nullptr;
  std::string config_path;
  long long seed = -1;
  std::string out_dir = "out";
  bool force = false;
  bool no_timing = false;
  int jobs = 1;
  std::vector<std::string> overrides;
};

void attach_common(CLI::App* sub, VerbArgs* args) {
  args->sub = sub;
  sub->add_option("--config", args->config_path, "config file (key = value lines)")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", args->seed, "seed override (replaces the config's seed list)");
  sub->add_option("--out", args->out_dir, "output directory")->capture_default_str();
  sub->add_flag("--force", args->force, "rerun and overwrite existing runs");
  sub->add_flag("--no-timing", args->no_timing, "zero wall-clock columns for golden files");
  sub->add_option("--jobs", args->jobs, "parallel independent runs")
      ->check(CLI::PositiveNumber);
  sub->add_option("--set", args->overrides, "config override, e.g. --set train.iterations=50");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divergence-minimization imitation learning lab"};
  app.require_subcommand(1);

  VerbArgs expert_gen;
  attach_common(app.add_subcommand("expert-gen", "solve the expert and write a demo set"),
                &expert_gen);
  VerbArgs benchmark;
  attach_common(app.add_subcommand("benchmark", "run the imitation grid and summarize"),
                &benchmark);
  VerbArgs identity;
  attach_common(
      app.add_subcommand("identity-suite", "check the analytic identities in a batch"),
      &identity);
  VerbArgs smm;
  attach_common(app.add_subcommand("smm", "train state-marginal matching on a point target"),
                &smm);
  VerbArgs plot;
  attach_common(app.add_subcommand("plot", "emit reward-curve, divergence, or scatter plots"),
                &plot);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const VerbArgs* picked = nullptr;
  int (*entry)(const fmil::harness::Config&, const fmil::harness::RunOptions&) = nullptr;
  if (expert_gen.sub->parsed()) {
    picked = &expert_gen;
    entry = fmil::harness::run_expert_gen;
  } else if (benchmark.sub->parsed()) {
    picked = &benchmark;
    entry = fmil::harness::run_benchmark;
  } else if (identity.sub->parsed()) {
    picked = &identity;
    entry = fmil::harness::run_identity_suite;
  } else if (smm.sub->parsed()) {
    picked = &smm;
    entry = fmil::harness::run_smm;
  } else {
    picked = &plot;
    entry = fmil::harness::run_plot;
  }

  try {
    fmil::harness::Config cfg;
    if (!picked->config_path.empty()) {
      cfg = fmil::harness::Config::load(picked->config_path);
    }
    for (const std::string& line : picked->overrides) {
      try {
        for (const auto& [key, value] : fmil::harness::Config::parse(line).entries()) {
          cfg.set(key, value);
        }
      } catch (const fmil::ConfigError& e) {
        throw fmil::ConfigError("--set " + line + ": " + e.what());
      }
    }

    fmil::harness::RunOptions opt;
    opt.out_dir = picked->out_dir;
    opt.force = picked->force;
    opt.no_timing = picked->no_timing;
    opt.jobs = picked->jobs;
    opt.seed_override = picked->seed;
    return entry(cfg, opt);
  } catch (const fmil::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
