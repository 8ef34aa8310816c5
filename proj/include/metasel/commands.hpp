#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasel/metadata.hpp"
#include "metasel/net.hpp"
#include "metasel/selector.hpp"
#include "metasel/trainer.hpp"

namespace metasel {

/// Exit codes shared by every verb.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitExtractionEmpty = 2,
  kExitTrainingFailed = 3,
};

struct PipelineOptions {
  std::vector<std::size_t> hidden{128, 128};
  std::uint64_t seed = 0;
  TrainConfig train;
  SelectorConfig selector;
};

struct PipelineResult {
  TrainResult trained;
  std::vector<double> scores;
  SelectionResult selection;
};

/// Train on the corpus, score it, and run the filtered selector. Seeds for
/// initialisation and shuffling are derived from options.seed.
PipelineResult run_pipeline(const DenseCorpus& corpus, const MetadataSchema& schema, const DistributionTable& e,
                            const PipelineOptions& options);

/// Order-independent digest used to tie checkpoints to their inputs.
std::string fingerprint(const std::string& text);
std::string corpus_fingerprint(const DenseCorpus& corpus);

struct RunConfig {
  nlohmann::json doc;
  std::filesystem::path base_dir;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Resolves a path from the config relative to the config file.
  std::filesystem::path resolve(const std::string& path) const;
  /// Stable hash of the configuration document (seed included).
  std::string hash() const;
};

struct GlobalFlags {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> threads;
};

/// Reads the config file and applies command-line overrides. A seed is
/// mandatory, from either source.
RunConfig load_run_config(const GlobalFlags& flags);

int cmd_extract(const RunConfig& config, std::ostream& log);
int cmd_synth(const RunConfig& config, std::ostream& log);
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_select(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& log);
int cmd_sweep(const RunConfig& config, std::ostream& log);
int cmd_report(const RunConfig& config, std::ostream& log);

/// Dispatches a verb, mapping library errors onto exit codes.
int run_verb(const std::string& verb, const GlobalFlags& flags, std::ostream& log);

/// cell,Original,E,Achieved
std::string distribution_csv(const MetadataSchema& schema, const DistributionTable& original,
                             const DistributionTable& expected, const DistributionTable& achieved);

}  // namespace metasel
