// metasel: select a keep-ratio subset of a driving corpus whose metadata
// distribution matches an expected table.
//
//   metasel <verb> --config run.json [--seed N] [--out DIR] [--threads N]
//
// Verbs: extract, synth, train, select, evaluate, sweep, report.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "metasel/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Metadata-driven data selection"};
  app.require_subcommand(1);

  metasel::GlobalFlags flags;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t threads = 1;
  auto* config_opt = app.add_option("--config", config_path, "run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "global seed (overrides the config)");
  auto* out_opt = app.add_option("--out", out_dir, "output directory (overrides the config)");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.fallthrough();

  const char* verbs[][2] = {
      {"extract", "GPS traces -> per-sample map-attribute durations"},
      {"synth", "generate a synthetic metadata corpus"},
      {"train", "train the scoring network against the expected distribution"},
      {"select", "train (or reuse a checkpoint), score and select"},
      {"evaluate", "metrics and diversity for one or more manifests"},
      {"sweep", "train+select over keep ratios and expected tables"},
      {"report", "distribution table and similarity matrix for a manifest"},
  };
  for (const auto& [name, help] : verbs) app.add_subcommand(name, help);

  CLI11_PARSE(app, argc, argv);

  if (*config_opt) flags.config_path = config_path;
  if (*seed_opt) flags.seed = seed;
  if (*out_opt) flags.out_dir = out_dir;
  if (*threads_opt) flags.threads = threads;

  const auto verb = app.get_subcommands().front()->get_name();
  return metasel::run_verb(verb, flags, std::cerr);
}
