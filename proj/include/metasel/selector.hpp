#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasel/metadata.hpp"
#include "metasel/metrics.hpp"

namespace metasel {

enum class Relaxation {
  /// epsilon <- 1 - eta (1 - epsilon): loosens the filter after each short pass.
  TowardOne,
  /// epsilon <- epsilon * eta, the literal published rule; tightens the filter.
  PaperDecay,
};

struct SelectorConfig {
  double keep_ratio = 0.2;
  double epsilon0 = 0.9;
  double eta = 0.85;
  Relaxation relaxation = Relaxation::TowardOne;
  std::size_t max_passes = 64;
  /// When false the selection is the plain top-N_s of the ranking.
  bool filter = true;

  void validate() const;
};

/// ceil(rho * n) with a guard against rho * n landing a hair above an integer.
std::size_t selection_quota(double keep_ratio, std::size_t n);

struct PassRecord {
  std::size_t pass = 0;
  double epsilon = 0.0;
  std::size_t admitted = 0;
  /// True for the final rank-order fill.
  bool fallback = false;
};

struct SelectionResult {
  std::string method;
  std::vector<std::string> selected_ids;
  std::vector<std::size_t> selected_index;
  std::size_t n = 0;
  std::size_t quota = 0;
  double keep_ratio = 0.0;
  DistributionTable achieved;
  std::optional<MetricReport> report;
  std::vector<PassRecord> audit;
};

/// Descending by score, ties by ascending id. Returns positions into the input.
std::vector<std::size_t> rank(std::span<const std::pair<std::string, double>> scores);

SelectionResult select(const DenseCorpus& corpus, std::span<const double> scores, const MetadataSchema& schema,
                       const DistributionTable* expected, const SelectorConfig& config);

/// Fills achieved distribution and (when expected is given) the metric report.
void finish_selection(SelectionResult& result, const DenseCorpus& corpus, const MetadataSchema& schema,
                      const DistributionTable* expected);

/// Cosine similarities among (a seeded sample of at most sample_cap of) the
/// given vectors. Returns the chosen input positions alongside the matrix.
struct SimilarityMatrix {
  std::vector<std::size_t> rows;
  std::vector<std::vector<double>> values;

  std::string to_csv(std::span<const std::string> labels) const;
};

SimilarityMatrix pairwise_similarity_matrix(std::span<const RatioVector> vectors, std::size_t sample_cap,
                                            std::uint64_t seed);

nlohmann::json manifest_json(const SelectionResult& result, const MetadataSchema& schema);

}  // namespace metasel
