#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasel/metadata.hpp"
#include "metasel/selector.hpp"
#include "metasel/trainer.hpp"

namespace metasel {

/// Occupancy model of one cell inside a mixture component: with probability
/// `presence` the cell is observed, and its fraction of the sample is then
/// Beta-distributed with mean `mean`.
struct CellOccupancy {
  double mean = 0.0;
  double presence = 1.0;
};

struct MixtureComponent {
  std::string name;
  double weight = 1.0;
  std::map<CellKey, CellOccupancy> cells;
};

struct SynthProfile {
  std::string name;
  std::vector<MixtureComponent> components;
  double min_duration_s = 20.0;
  double max_duration_s = 60.0;
  /// Beta concentration; large values make samples of a component near-duplicates.
  double concentration = 20.0;
  std::uint64_t seed = 0;

  void validate(const MetadataSchema& schema) const;
  /// Expected per-cell ratio of an infinitely large corpus.
  std::vector<double> analytic_mean(const MetadataSchema& schema) const;

  /// Built-in profiles over MetadataSchema::road_attributes():
  /// "road-mix", "highway-heavy", "clustered".
  static SynthProfile builtin(const std::string& name, std::uint64_t seed);
  static SynthProfile from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

/// Samples are named "<profile>-<index>" with zero-padded indices.
std::vector<SampleMetadata> generate_synthetic(std::size_t n, const MetadataSchema& schema,
                                               const SynthProfile& profile);

/// Objective maximised by the oracle: S_c, S_d, or the blend of the two.
double selection_score(const MetadataSchema& schema, const DistributionTable& a, const DistributionTable& e,
                       const MetricChoice& choice);

struct OracleResult {
  std::vector<std::string> ids;
  std::vector<std::size_t> index;
  double score = 0.0;
  std::size_t enumerated = 0;
  /// Worst size-N_s subset score, for bracketing heuristics.
  double worst_score = 0.0;

  nlohmann::json to_json() const;
};

inline constexpr std::size_t kOracleSizeLimit = 20;

/// Exhaustive search over all size ceil(rho * n) subsets (n <= 20). Ties go to
/// the lexicographically smallest sorted id list.
OracleResult brute_force_best_subset(const DenseCorpus& corpus, const MetadataSchema& schema,
                                     const DistributionTable& e, double keep_ratio, const MetricChoice& choice,
                                     std::size_t threads = 1);

SelectionResult random_select(const DenseCorpus& corpus, const MetadataSchema& schema,
                              const DistributionTable* expected, double keep_ratio, std::uint64_t seed);

/// Diversity/complexity surrogate: Shannon entropy of the normalised ratio
/// vector plus the fraction of nonzero cells.
double dc_surrogate_score(std::span<const double> ratios);

SelectionResult dc_surrogate_select(const DenseCorpus& corpus, const MetadataSchema& schema,
                                    const DistributionTable* expected, double keep_ratio);

}  // namespace metasel
