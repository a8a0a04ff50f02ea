// posmdp: builds TMAs, runs policy searches and writes experiment CSVs.
//
//   posmdp build-tma --config configs/air_vehicle_tma.json --out runs/tma
//   posmdp compare-search --config configs/package_delivery.json --seeds 20 --out runs/cmp
//   posmdp success-curve --config ... --policy runs/cmp/seed_6/mmcs_policy.json --runs 250 --out runs/curve

#include <CLI11.hpp>
#include <iostream>

#include "posmdp/harness.hpp"

int main(int argc, char** argv) {
  using posmdp::harness::Options;
  CLI::App app{"Policy search over joint finite-state controllers of TMAs"};
  app.require_subcommand(1);

  Options opts;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "Domain or TMA config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "Output directory");
    sub->add_option("--seed", seed, "Seed");
  };

  auto* build = app.add_subcommand("build-tma", "Construct a TMA and save it as tma.json");
  common(build);
  auto* solve = app.add_subcommand("solve", "Masked Monte Carlo search");
  auto* mc = app.add_subcommand("mc-baseline", "Unmasked Monte Carlo search");
  auto* compare = app.add_subcommand("compare-search", "Paired MMCS / MC runs over several seeds");
  for (auto* s : {solve, mc, compare}) {
    common(s);
    s->add_option("--budget", opts.budget, "Policy evaluations per search");
    s->add_option("--threads", opts.threads, "Parallel candidate evaluations")->check(CLI::PositiveNumber);
  }
  compare->add_option("--seeds", opts.seeds, "Number of consecutive seeds from --seed")->check(CLI::PositiveNumber);

  auto* curve = app.add_subcommand("success-curve", "P(delivered >= k) of a policy");
  common(curve);
  curve->add_option("--policy", opts.policy, "Policy file")->required()->check(CLI::ExistingFile);
  curve->add_option("--runs", opts.runs, "Simulated runs")->check(CLI::PositiveNumber);
  curve->add_option("--horizon", opts.horizon, "Macro segments per run")->check(CLI::PositiveNumber);
  curve->add_option("--threads", opts.threads, "Parallel rollouts")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate-policy", "Check a policy file against a domain");
  common(validate);
  validate->add_option("--policy", opts.policy, "Policy file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : posmdp::harness::kConfigError;
  }
  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed") > 0) opts.seed = seed;
  return posmdp::harness::run_command(sub->get_name(), opts, std::cout);
}
