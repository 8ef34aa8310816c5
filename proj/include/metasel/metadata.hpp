#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace metasel {

/// One (domain, category) pair. Textual form is "domain/category".
struct CellKey {
  std::string domain;
  std::string category;

  auto operator<=>(const CellKey&) const = default;

  std::string str() const { return domain + "/" + category; }
  static CellKey parse(const std::string& text);
};

struct DomainSpec {
  std::string name;
  std::vector<std::string> categories;
};

/// Ordered domains, each with ordered categories. Cells are flattened in
/// declaration order into [0, cell_count()).
class MetadataSchema {
 public:
  explicit MetadataSchema(std::vector<DomainSpec> domains);

  /// Way type, lane count and the six single-category road flags.
  static MetadataSchema road_attributes();

  const std::vector<DomainSpec>& domains() const noexcept { return domains_; }
  std::size_t domain_count() const noexcept { return domains_.size(); }
  std::size_t cell_count() const noexcept { return cells_.size(); }

  std::size_t index_of(const CellKey& key) const;
  std::optional<std::size_t> find(const CellKey& key) const;
  const CellKey& cell(std::size_t index) const { return cells_.at(index); }
  /// Domain position of a flat cell index.
  std::size_t domain_of(std::size_t index) const { return domain_of_.at(index); }

  bool operator==(const MetadataSchema& other) const { return cells_ == other.cells_; }

  nlohmann::json to_json() const;
  static MetadataSchema from_json(const nlohmann::json& doc);

 private:
  std::vector<DomainSpec> domains_;
  std::vector<CellKey> cells_;
  std::vector<std::size_t> domain_of_;
  std::map<CellKey, std::size_t> lookup_;
};

/// Per-sample tag durations (seconds) keyed by cell. Missing cells mean zero.
struct SampleMetadata {
  std::string sample_id;
  double total_duration_s = 0.0;
  std::map<CellKey, double> tag_durations;

  bool operator==(const SampleMetadata&) const = default;
};

/// Ingestion check: finite nonnegative durations, positive total, every tag
/// within the sample length, and every key known to the schema.
void validate_sample(const SampleMetadata& sample, const MetadataSchema& schema);

nlohmann::json to_json(const SampleMetadata& sample);
SampleMetadata sample_from_json(const nlohmann::json& record);

/// Per-cell occupancy ratios in flat schema order.
struct RatioVector {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const RatioVector&) const = default;
};

/// A distribution over schema cells plus the mask of cells that take part in
/// metrics. Used both for the expected table E and for achieved tables A.
struct DistributionTable {
  std::vector<double> values;
  std::vector<bool> included;

  static DistributionTable all_included(std::vector<double> values);

  std::size_t size() const noexcept { return values.size(); }
  std::size_t included_count() const;
  bool operator==(const DistributionTable&) const = default;
};

/// Expected-distribution file: {"cells": {"domain/category": ratio}}. Cells
/// absent from the object are excluded from metrics.
DistributionTable distribution_from_json(const nlohmann::json& doc, const MetadataSchema& schema);
nlohmann::json to_json(const DistributionTable& table, const MetadataSchema& schema);

RatioVector phi_sample(const SampleMetadata& sample, const MetadataSchema& schema);

/// Duration-weighted aggregate: per cell, summed tag seconds over summed
/// sample seconds.
DistributionTable aggregate_distribution(std::span<const SampleMetadata> subset,
                                         const MetadataSchema& schema);

struct ValidatedDistribution {
  DistributionTable table;
  std::vector<std::string> warnings;
};

ValidatedDistribution validate_expected(const DistributionTable& e, const MetadataSchema& schema);

/// Row-major dense copy of a corpus: tag seconds (n x M) and totals (n).
/// Hot paths (training, selection, enumeration) work on this form.
class DenseCorpus {
 public:
  DenseCorpus(std::span<const SampleMetadata> samples, const MetadataSchema& schema);

  std::size_t size() const noexcept { return totals_.size(); }
  std::size_t cells() const noexcept { return cells_; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  double total(std::size_t i) const { return totals_[i]; }
  std::span<const double> tags(std::size_t i) const {
    return {tags_.data() + i * cells_, cells_};
  }
  std::span<const double> ratios(std::size_t i) const {
    return {ratios_.data() + i * cells_, cells_};
  }
  RatioVector ratio_vector(std::size_t i) const;

  /// Aggregate over the given sample positions.
  DistributionTable aggregate(std::span<const std::size_t> members) const;
  DistributionTable aggregate_all() const;

 private:
  std::size_t cells_;
  std::vector<std::string> ids_;
  std::vector<double> totals_;
  std::vector<double> tags_;
  std::vector<double> ratios_;
};

/// Newline-delimited sample records.
std::vector<SampleMetadata> read_samples(const std::string& path, const MetadataSchema& schema);
void write_samples(const std::string& path, std::span<const SampleMetadata> samples);

nlohmann::json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace metasel
