#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasel/metadata.hpp"

namespace metasel {

struct MetricReport {
  double s_c = 0.0;
  /// NaN when E has no positive included cell (S_d undefined).
  double s_d = 0.0;
  std::map<std::string, double> per_domain_abs_error;
  std::size_t included_cell_count = 0;
};

nlohmann::json to_json(const MetricReport& report);

/// Category-based similarity: 1 - (sum of |a_j - e_j| over cells included in
/// both tables) / (number of domains with at least one such cell). Not clamped.
double score_category(const MetadataSchema& schema, const DistributionTable& a,
                      const DistributionTable& e);

/// Domain-based similarity: 1 - mean over included cells with e_j > 0 of
/// min(1, |a_j - e_j| / e_j).
double score_domain(const MetadataSchema& schema, const DistributionTable& a,
                    const DistributionTable& e);

MetricReport metric_report(const MetadataSchema& schema, const DistributionTable& a,
                           const DistributionTable& e);

/// Zero when either vector has zero norm.
double cosine_similarity(std::span<const double> u, std::span<const double> v);
inline double cosine_similarity(const RatioVector& u, const RatioVector& v) {
  return cosine_similarity(std::span<const double>(u.values), std::span<const double>(v.values));
}

double mean_abs_error(std::span<const double> u, std::span<const double> v);

/// Mean over pairs of the per-cell MAE. With more than pair_cap pairs, a
/// seeded uniform sample of pair_cap distinct pairs is averaged instead.
double avg_pairwise_mae(std::span<const RatioVector> vectors, std::size_t pair_cap, std::uint64_t seed);

}  // namespace metasel
