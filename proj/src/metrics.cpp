#include "metasel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_set>

#include <fmt/format.h>

#include "metasel/error.hpp"

namespace metasel {
namespace {

void check_tables(const MetadataSchema& schema, const DistributionTable& a, const DistributionTable& e) {
  const auto m = schema.cell_count();
  if (a.values.size() != m || a.included.size() != m || e.values.size() != m || e.included.size() != m) {
    fail(ErrorKind::SchemaMismatch,
         fmt::format("tables of size {} and {} do not match schema with {} cells", a.size(), e.size(), m));
  }
}

}  // namespace

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json out;
  out["s_c"] = report.s_c;
  out["s_d"] = std::isnan(report.s_d) ? nlohmann::json(nullptr) : nlohmann::json(report.s_d);
  out["per_domain_abs_error"] = report.per_domain_abs_error;
  out["included_cell_count"] = report.included_cell_count;
  return out;
}

double score_category(const MetadataSchema& schema, const DistributionTable& a,
                      const DistributionTable& e) {
  check_tables(schema, a, e);
  std::vector<bool> domain_seen(schema.domain_count(), false);
  double l1 = 0.0;
  std::size_t domains = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (!a.included[j] || !e.included[j]) continue;
    l1 += std::abs(a.values[j] - e.values[j]);
    const auto d = schema.domain_of(j);
    if (!domain_seen[d]) {
      domain_seen[d] = true;
      ++domains;
    }
  }
  if (domains == 0) fail(ErrorKind::NoCells, "no cell is included in both tables");
  return 1.0 - l1 / static_cast<double>(domains);
}

double score_domain(const MetadataSchema& schema, const DistributionTable& a,
                    const DistributionTable& e) {
  check_tables(schema, a, e);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (!a.included[j] || !e.included[j] || !(e.values[j] > 0.0)) continue;
    total += std::min(1.0, std::abs(a.values[j] - e.values[j]) / e.values[j]);
    ++count;
  }
  if (count == 0) fail(ErrorKind::NoCells, "no included cell with a positive expected ratio");
  return 1.0 - total / static_cast<double>(count);
}

MetricReport metric_report(const MetadataSchema& schema, const DistributionTable& a,
                           const DistributionTable& e) {
  MetricReport report;
  report.s_c = score_category(schema, a, e);
  try {
    report.s_d = score_domain(schema, a, e);
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::NoCells) throw;
    report.s_d = std::numeric_limits<double>::quiet_NaN();
  }
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (!a.included[j] || !e.included[j]) continue;
    report.per_domain_abs_error[schema.domains()[schema.domain_of(j)].name] += std::abs(a.values[j] - e.values[j]);
    ++report.included_cell_count;
  }
  return report;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::SchemaMismatch, fmt::format("vector lengths {} and {} differ", u.size(), v.size()));
  }
  double dot = 0.0;
  double uu = 0.0;
  double vv = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    dot += u[j] * v[j];
    uu += u[j] * u[j];
    vv += v[j] * v[j];
  }
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), 0.0, 1.0);
}

double mean_abs_error(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::SchemaMismatch, fmt::format("vector lengths {} and {} differ", u.size(), v.size()));
  }
  if (u.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) total += std::abs(u[j] - v[j]);
  return total / static_cast<double>(u.size());
}

double avg_pairwise_mae(std::span<const RatioVector> vectors, std::size_t pair_cap, std::uint64_t seed) {
  const std::size_t n = vectors.size();
  if (n < 2) fail(ErrorKind::InsufficientData, "pairwise MAE needs at least two vectors");
  const std::size_t pairs = n * (n - 1) / 2;
  double total = 0.0;
  if (pair_cap == 0 || pairs <= pair_cap) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = i + 1; k < n; ++k) total += mean_abs_error(vectors[i].values, vectors[k].values);
    }
    return total / static_cast<double>(pairs);
  }
  // Sample distinct unordered pairs by their linear index in the upper triangle.
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pairs - 1);
  std::unordered_set<std::size_t> chosen;
  std::vector<std::size_t> order;
  order.reserve(pair_cap);
  while (order.size() < pair_cap) {
    const auto p = pick(rng);
    if (chosen.insert(p).second) order.push_back(p);
  }
  std::sort(order.begin(), order.end());
  std::size_t i = 0;
  std::size_t row_start = 0;
  for (const auto p : order) {
    while (p >= row_start + (n - 1 - i)) {
      row_start += n - 1 - i;
      ++i;
    }
    const std::size_t k = i + 1 + (p - row_start);
    total += mean_abs_error(vectors[i].values, vectors[k].values);
  }
  return total / static_cast<double>(pair_cap);
}

}  // namespace metasel
