#include <cstdint>
#include <string>

#include "CLI11.hpp"

#include "lfmpc/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"latent force occupancy estimation and predictive building control"};
  app.require_subcommand(1);

  lfmpc::harness::CliOptions opt;
  std::uint64_t seed = 0;
  std::string out, scenario;
  int span_days = 0;

  const std::pair<const char*, const char*> names[] = {
      {"fit", "fit weekday occupancy hyperparameters"},
      {"estimate", "estimate occupancy from CO2 measurements"},
      {"predict", "roll the occupancy predictor and report horizon RMSE"},
      {"simulate", "run one closed-loop scenario"},
      {"benchmark", "run all configured scenarios and compare"},
      {"verify", "run the oracle and invariant checks"},
  };
  for (const auto& [name, desc] : names) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", opt.config_path, "JSON config file");
    sub->add_option("--seed", seed, "random seed override");
    sub->add_option("--out", out, "output directory override");
    sub->add_option("--scenario", scenario, "scenario override");
    sub->add_option("--span-days", span_days, "evaluation span override");
    sub->add_flag("--strict", opt.strict, "escalate warnings to errors");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  opt.subcommand = sub->get_name();
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--out")) opt.out_dir = out;
  if (sub->count("--scenario")) opt.scenario = scenario;
  if (sub->count("--span-days")) opt.span_days = span_days;

  return lfmpc::harness::dispatch(opt);
}
