#include "metasel/metadata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "metasel/error.hpp"

namespace metasel {

CellKey CellKey::parse(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos || slash == 0 || slash + 1 == text.size()) {
    fail(ErrorKind::Parse, fmt::format("cell key '{}' is not of the form domain/category", text));
  }
  return {text.substr(0, slash), text.substr(slash + 1)};
}

MetadataSchema::MetadataSchema(std::vector<DomainSpec> domains) : domains_(std::move(domains)) {
  if (domains_.empty()) fail(ErrorKind::SchemaMismatch, "schema needs at least one domain");
  std::set<std::string> names;
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    const auto& spec = domains_[d];
    if (spec.name.empty() || spec.name.find('/') != std::string::npos) {
      fail(ErrorKind::SchemaMismatch, fmt::format("invalid domain name '{}'", spec.name));
    }
    if (!names.insert(spec.name).second) {
      fail(ErrorKind::SchemaMismatch, fmt::format("duplicate domain '{}'", spec.name));
    }
    if (spec.categories.empty()) {
      fail(ErrorKind::SchemaMismatch, fmt::format("domain '{}' has no categories", spec.name));
    }
    for (const auto& category : spec.categories) {
      CellKey key{spec.name, category};
      if (category.empty()) {
        fail(ErrorKind::SchemaMismatch, fmt::format("empty category in domain '{}'", spec.name));
      }
      if (!lookup_.emplace(key, cells_.size()).second) {
        fail(ErrorKind::SchemaMismatch, fmt::format("duplicate category '{}'", key.str()));
      }
      cells_.push_back(std::move(key));
      domain_of_.push_back(d);
    }
  }
}

MetadataSchema MetadataSchema::road_attributes() {
  return MetadataSchema({
      {"Way type", {"Highway", "Primary way", "Secondary way", "Link way"}},
      {"Number of lanes", {"1-lane", "2-lanes", "3-lanes", "4-lanes", "5-lanes", "6-lanes"}},
      {"Bridge", {"Bridge"}},
      {"One way", {"One way"}},
      {"Toll", {"Toll"}},
      {"Tunnel", {"Tunnel"}},
      {"Roundabout", {"Roundabout"}},
      {"Shoulder", {"Shoulder"}},
  });
}

std::size_t MetadataSchema::index_of(const CellKey& key) const {
  const auto it = lookup_.find(key);
  if (it == lookup_.end()) {
    fail(ErrorKind::SchemaMismatch, fmt::format("cell '{}' is not in the schema", key.str()));
  }
  return it->second;
}

std::optional<std::size_t> MetadataSchema::find(const CellKey& key) const {
  const auto it = lookup_.find(key);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json MetadataSchema::to_json() const {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& spec : domains_) {
    domains.push_back({{"name", spec.name}, {"categories", spec.categories}});
  }
  return {{"domains", domains}};
}

MetadataSchema MetadataSchema::from_json(const nlohmann::json& doc) {
  try {
    std::vector<DomainSpec> domains;
    for (const auto& entry : doc.at("domains")) {
      domains.push_back(
          {entry.at("name").get<std::string>(), entry.at("categories").get<std::vector<std::string>>()});
    }
    return MetadataSchema(std::move(domains));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("schema document: {}", e.what()));
  }
}

void validate_sample(const SampleMetadata& sample, const MetadataSchema& schema) {
  const double total = sample.total_duration_s;
  if (!std::isfinite(total) || total <= 0.0) {
    fail(ErrorKind::DegenerateSample,
         fmt::format("sample '{}' has non-positive duration {}", sample.sample_id, total));
  }
  for (const auto& [key, seconds] : sample.tag_durations) {
    schema.index_of(key);
    if (!std::isfinite(seconds) || seconds < 0.0) {
      fail(ErrorKind::InvalidSample,
           fmt::format("sample '{}' cell '{}' has invalid duration {}", sample.sample_id, key.str(), seconds));
    }
    if (seconds > total * (1.0 + 1e-12)) {
      fail(ErrorKind::InvalidSample,
           fmt::format("sample '{}' cell '{}' lasts {} s, longer than the sample ({} s)",
                       sample.sample_id, key.str(), seconds, total));
    }
  }
}

nlohmann::json to_json(const SampleMetadata& sample) {
  nlohmann::json tags = nlohmann::json::object();
  for (const auto& [key, seconds] : sample.tag_durations) tags[key.str()] = seconds;
  return {{"sample_id", sample.sample_id}, {"total_duration_s", sample.total_duration_s}, {"tags", tags}};
}

SampleMetadata sample_from_json(const nlohmann::json& record) {
  try {
    SampleMetadata sample;
    sample.sample_id = record.at("sample_id").get<std::string>();
    sample.total_duration_s = record.at("total_duration_s").get<double>();
    if (record.contains("tags")) {
      for (const auto& [text, seconds] : record.at("tags").items()) {
        sample.tag_durations[CellKey::parse(text)] = seconds.get<double>();
      }
    }
    return sample;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("sample record: {}", e.what()));
  }
}

DistributionTable DistributionTable::all_included(std::vector<double> values) {
  DistributionTable table;
  table.included.assign(values.size(), true);
  table.values = std::move(values);
  return table;
}

std::size_t DistributionTable::included_count() const {
  return static_cast<std::size_t>(std::count(included.begin(), included.end(), true));
}

DistributionTable distribution_from_json(const nlohmann::json& doc, const MetadataSchema& schema) {
  DistributionTable table;
  table.values.assign(schema.cell_count(), 0.0);
  table.included.assign(schema.cell_count(), false);
  try {
    for (const auto& [text, value] : doc.at("cells").items()) {
      const auto index = schema.index_of(CellKey::parse(text));
      table.values[index] = value.get<double>();
      table.included[index] = true;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("distribution document: {}", e.what()));
  }
  return table;
}

nlohmann::json to_json(const DistributionTable& table, const MetadataSchema& schema) {
  if (table.size() != schema.cell_count()) {
    fail(ErrorKind::SchemaMismatch, "distribution size differs from schema cell count");
  }
  nlohmann::json cells = nlohmann::json::object();
  for (std::size_t j = 0; j < table.size(); ++j) {
    if (table.included[j]) cells[schema.cell(j).str()] = table.values[j];
  }
  return {{"cells", cells}};
}

RatioVector phi_sample(const SampleMetadata& sample, const MetadataSchema& schema) {
  if (!(sample.total_duration_s > 0.0)) {
    fail(ErrorKind::DegenerateSample, fmt::format("sample '{}' has zero duration", sample.sample_id));
  }
  RatioVector ratios;
  ratios.values.assign(schema.cell_count(), 0.0);
  for (const auto& [key, seconds] : sample.tag_durations) {
    ratios.values[schema.index_of(key)] = std::clamp(seconds / sample.total_duration_s, 0.0, 1.0);
  }
  return ratios;
}

DistributionTable aggregate_distribution(std::span<const SampleMetadata> subset,
                                         const MetadataSchema& schema) {
  if (subset.empty()) fail(ErrorKind::EmptySubset, "cannot aggregate an empty subset");
  std::vector<double> seconds(schema.cell_count(), 0.0);
  double total = 0.0;
  for (const auto& sample : subset) {
    for (const auto& [key, value] : sample.tag_durations) seconds[schema.index_of(key)] += value;
    total += sample.total_duration_s;
  }
  if (!(total > 0.0)) fail(ErrorKind::DegenerateSample, "subset has zero total duration");
  for (auto& value : seconds) value = std::clamp(value / total, 0.0, 1.0);
  return DistributionTable::all_included(std::move(seconds));
}

ValidatedDistribution validate_expected(const DistributionTable& e, const MetadataSchema& schema) {
  if (e.values.size() != schema.cell_count() || e.included.size() != schema.cell_count()) {
    fail(ErrorKind::SchemaMismatch,
         fmt::format("expected distribution has {} cells, schema has {}", e.values.size(), schema.cell_count()));
  }
  if (e.included_count() == 0) fail(ErrorKind::NoCells, "expected distribution has no included cells");

  ValidatedDistribution out{e, {}};
  std::vector<double> domain_sum(schema.domain_count(), 0.0);
  std::vector<std::size_t> domain_included(schema.domain_count(), 0);
  for (std::size_t j = 0; j < e.size(); ++j) {
    if (!e.included[j]) continue;
    const double v = e.values[j];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      fail(ErrorKind::InvalidDistribution,
           fmt::format("cell '{}' has ratio {} outside [0, 1]", schema.cell(j).str(), v));
    }
    domain_sum[schema.domain_of(j)] += v;
    ++domain_included[schema.domain_of(j)];
  }
  for (std::size_t d = 0; d < schema.domain_count(); ++d) {
    if (domain_included[d] > 1 && domain_sum[d] > 1.0 + 1e-9) {
      out.warnings.push_back(fmt::format("domain '{}' ratios sum to {:.6g} (> 1): categories overlap in time",
                                         schema.domains()[d].name, domain_sum[d]));
    }
  }
  return out;
}

DenseCorpus::DenseCorpus(std::span<const SampleMetadata> samples, const MetadataSchema& schema)
    : cells_(schema.cell_count()) {
  ids_.reserve(samples.size());
  totals_.reserve(samples.size());
  tags_.assign(samples.size() * cells_, 0.0);
  ratios_.assign(samples.size() * cells_, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& sample = samples[i];
    validate_sample(sample, schema);
    ids_.push_back(sample.sample_id);
    totals_.push_back(sample.total_duration_s);
    for (const auto& [key, seconds] : sample.tag_durations) {
      const auto j = schema.index_of(key);
      tags_[i * cells_ + j] = seconds;
      ratios_[i * cells_ + j] = std::clamp(seconds / sample.total_duration_s, 0.0, 1.0);
    }
  }
}

RatioVector DenseCorpus::ratio_vector(std::size_t i) const {
  const auto row = ratios(i);
  return RatioVector{{row.begin(), row.end()}};
}

DistributionTable DenseCorpus::aggregate(std::span<const std::size_t> members) const {
  if (members.empty()) fail(ErrorKind::EmptySubset, "cannot aggregate an empty subset");
  std::vector<double> seconds(cells_, 0.0);
  double total = 0.0;
  for (const auto i : members) {
    const auto row = tags(i);
    for (std::size_t j = 0; j < cells_; ++j) seconds[j] += row[j];
    total += totals_[i];
  }
  for (auto& value : seconds) value = std::clamp(value / total, 0.0, 1.0);
  return DistributionTable::all_included(std::move(seconds));
}

DistributionTable DenseCorpus::aggregate_all() const {
  std::vector<std::size_t> members(size());
  for (std::size_t i = 0; i < members.size(); ++i) members[i] = i;
  return aggregate(members);
}

std::vector<SampleMetadata> read_samples(const std::string& path, const MetadataSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, fmt::format("cannot open '{}'", path));
  std::vector<SampleMetadata> samples;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, fmt::format("{}:{}: {}", path, line_no, e.what()));
    }
    auto sample = sample_from_json(record);
    validate_sample(sample, schema);
    if (!seen.insert(sample.sample_id).second) {
      fail(ErrorKind::InvalidSample, fmt::format("{}:{}: duplicate sample id '{}'", path, line_no, sample.sample_id));
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

void write_samples(const std::string& path, std::span<const SampleMetadata> samples) {
  std::ostringstream out;
  for (const auto& sample : samples) out << to_json(sample).dump() << '\n';
  write_text_file(path, out.str());
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, fmt::format("cannot open '{}'", path));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("{}: {}", path, e.what()));
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, fmt::format("cannot write '{}'", path));
  out << text;
  if (!out) fail(ErrorKind::Io, fmt::format("write to '{}' failed", path));
}

}  // namespace metasel
