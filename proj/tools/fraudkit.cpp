// fraudkit command-line frontend.

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fraudkit/pipeline.hpp"
#include "fraudkit/synth.hpp"

namespace {

using fraudkit::pipeline::ExperimentConfig;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("--out", c.out, "Override the output directory");
}

ExperimentConfig load(const Common& c) {
  auto cfg = fraudkit::pipeline::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fraudkit: imbalanced fraud-detection experiments"};
  app.require_subcommand(1);

  Common common;
  std::string stage;
  for (const char* name : {"prep", "balance", "train", "occ", "explain", "cf", "report"}) {
    auto* cmd = app.add_subcommand(name, std::string("Run the ") + name + " stage");
    add_common(cmd, common);
  }
  auto* run = app.add_subcommand("run", "Run every stage of the configured pipeline");
  add_common(run, common);
  run->add_option("--stage", stage, "Run only this stage");

  fraudkit::synth::SynthOptions synth;
  std::string synth_out;
  auto* syn = app.add_subcommand("synth", "Write a synthetic labeled dataset (data.csv, schema.json)");
  syn->add_option("--rows", synth.rows, "Row count (>= 20)");
  syn->add_option("--positive-fraction", synth.positive_fraction, "Fraction of label-1 rows");
  syn->add_option("--features", synth.numeric_features, "Numeric feature count");
  syn->add_option("--difficulty", synth.difficulty, "Class overlap, 0 (disjoint) to 1 (identical)");
  syn->add_option("--seed", synth.seed, "Random seed");
  syn->add_option("--out", synth_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (syn->parsed()) {
      fraudkit::synth::write_dataset(synth_out, fraudkit::synth::synthesize(synth));
      return 0;
    }
    const auto cfg = load(common);
    if (run->parsed()) {
      if (stage.empty()) {
        fraudkit::pipeline::run(cfg);
      } else {
        fraudkit::pipeline::run_stage(cfg, stage);
      }
      return 0;
    }
    for (auto* cmd : app.get_subcommands()) fraudkit::pipeline::run_stage(cfg, cmd->get_name());
    return 0;
  } catch (const fraudkit::Error& e) {
    std::cerr << "fraudkit: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "fraudkit: error: " << e.what() << "\n";
    return 1;
  }
}
