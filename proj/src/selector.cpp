#include "metasel/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "metasel/error.hpp"

namespace metasel {

void SelectorConfig::validate() const {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) fail(ErrorKind::InvalidConfig, "keep ratio must be in (0, 1]");
  if (!(epsilon0 > 0.0 && epsilon0 < 1.0)) fail(ErrorKind::InvalidConfig, "epsilon0 must be in (0, 1)");
  if (!(eta > 0.0 && eta < 1.0)) fail(ErrorKind::InvalidConfig, "eta must be in (0, 1)");
}

std::size_t selection_quota(double keep_ratio, std::size_t n) {
  const double exact = keep_ratio * static_cast<double>(n);
  const double nearest = std::round(exact);
  // 0.7 * 10 evaluates to 7.000000000000001; treat that as 7, not 8.
  const double quota = std::abs(exact - nearest) < 1e-9 ? nearest : std::ceil(exact);
  return std::min(n, static_cast<std::size_t>(quota));
}

std::vector<std::size_t> rank(std::span<const std::pair<std::string, double>> scores) {
  for (const auto& [id, score] : scores) {
    if (std::isnan(score)) fail(ErrorKind::Numeric, fmt::format("score of '{}' is NaN", id));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (scores[x].second != scores[y].second) return scores[x].second > scores[y].second;
    return scores[x].first < scores[y].first;
  });
  return order;
}

SelectionResult select(const DenseCorpus& corpus, std::span<const double> scores, const MetadataSchema& schema,
                       const DistributionTable* expected, const SelectorConfig& config) {
  config.validate();
  const std::size_t n = corpus.size();
  if (n == 0) fail(ErrorKind::EmptyCorpus, "cannot select from an empty corpus");
  if (scores.size() != n) fail(ErrorKind::Shape, fmt::format("{} scores for {} samples", scores.size(), n));

  std::vector<std::pair<std::string, double>> keyed;
  keyed.reserve(n);
  for (std::size_t i = 0; i < n; ++i) keyed.emplace_back(corpus.id(i), scores[i]);
  const auto order = rank(keyed);

  SelectionResult result;
  result.method = config.filter ? "trained+filter" : "trained";
  result.n = n;
  result.keep_ratio = config.keep_ratio;
  result.quota = selection_quota(config.keep_ratio, n);

  std::vector<bool> taken(n, false);
  auto admit = [&](std::size_t i) {
    taken[i] = true;
    result.selected_index.push_back(i);
  };

  if (config.filter) {
    // Max similarity of each candidate to the selected set, refreshed lazily:
    // checked[i] counts how many selected samples are already folded in.
    std::vector<double> max_similarity(n, 0.0);
    std::vector<std::size_t> checked(n, 0);
    double epsilon = config.epsilon0;
    for (std::size_t pass = 1; result.selected_index.size() < result.quota; ++pass) {
      if (pass > config.max_passes || epsilon >= 1.0 - 1e-9) break;
      std::size_t admitted = 0;
      for (const auto i : order) {
        if (result.selected_index.size() >= result.quota) break;
        if (taken[i]) continue;
        bool blocked = max_similarity[i] >= epsilon;
        while (!blocked && checked[i] < result.selected_index.size()) {
          const auto j = result.selected_index[checked[i]++];
          max_similarity[i] = std::max(max_similarity[i], cosine_similarity(corpus.ratios(i), corpus.ratios(j)));
          blocked = max_similarity[i] >= epsilon;
        }
        if (!blocked) {
          admit(i);
          ++admitted;
        }
      }
      result.audit.push_back({pass, epsilon, admitted, false});
      epsilon = config.relaxation == Relaxation::TowardOne ? 1.0 - config.eta * (1.0 - epsilon)
                                                           : epsilon * config.eta;
    }
  }

  if (result.selected_index.size() < result.quota) {
    std::size_t filled = 0;
    for (const auto i : order) {
      if (result.selected_index.size() >= result.quota) break;
      if (taken[i]) continue;
      admit(i);
      ++filled;
    }
    result.audit.push_back({result.audit.size() + 1, 1.0, filled, true});
  }

  for (const auto i : result.selected_index) result.selected_ids.push_back(corpus.id(i));
  finish_selection(result, corpus, schema, expected);
  return result;
}

void finish_selection(SelectionResult& result, const DenseCorpus& corpus, const MetadataSchema& schema,
                      const DistributionTable* expected) {
  result.achieved = corpus.aggregate(result.selected_index);
  if (expected) result.report = metric_report(schema, result.achieved, *expected);
}

std::string SimilarityMatrix::to_csv(std::span<const std::string> labels) const {
  std::ostringstream out;
  out << "id";
  for (const auto r : rows) out << ',' << labels[r];
  out << '\n';
  for (std::size_t a = 0; a < rows.size(); ++a) {
    out << labels[rows[a]];
    for (const double v : values[a]) out << fmt::format(",{:.6f}", v);
    out << '\n';
  }
  return out.str();
}

SimilarityMatrix pairwise_similarity_matrix(std::span<const RatioVector> vectors, std::size_t sample_cap,
                                            std::uint64_t seed) {
  if (vectors.size() < 2) fail(ErrorKind::InsufficientData, "similarity matrix needs at least two vectors");
  SimilarityMatrix matrix;
  matrix.rows.resize(vectors.size());
  std::iota(matrix.rows.begin(), matrix.rows.end(), std::size_t{0});
  if (sample_cap >= 2 && vectors.size() > sample_cap) {
    std::vector<std::size_t> picked;
    std::sample(matrix.rows.begin(), matrix.rows.end(), std::back_inserter(picked), sample_cap,
                std::mt19937_64(seed));
    matrix.rows = std::move(picked);
  }
  const auto k = matrix.rows.size();
  matrix.values.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a; b < k; ++b) {
      const double s = cosine_similarity(vectors[matrix.rows[a]], vectors[matrix.rows[b]]);
      matrix.values[a][b] = s;
      matrix.values[b][a] = s;
    }
  }
  return matrix;
}

nlohmann::json manifest_json(const SelectionResult& result, const MetadataSchema& schema) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& p : result.audit) {
    trace.push_back({{"pass", p.pass}, {"epsilon", p.epsilon}, {"admitted", p.admitted}, {"fallback", p.fallback}});
  }
  nlohmann::json distribution = nlohmann::json::object();
  for (std::size_t j = 0; j < result.achieved.size(); ++j) {
    distribution[schema.cell(j).str()] = result.achieved.values[j];
  }
  nlohmann::json doc;
  doc["method"] = result.method;
  doc["selected_ids"] = result.selected_ids;
  doc["n"] = result.n;
  doc["N_s"] = result.quota;
  doc["rho"] = result.keep_ratio;
  doc["epsilon_trace"] = trace;
  if (result.report) {
    const auto report = to_json(*result.report);
    doc["s_c"] = report["s_c"];
    doc["s_d"] = report["s_d"];
  } else {
    doc["s_c"] = nullptr;
    doc["s_d"] = nullptr;
  }
  doc["distribution"] = distribution;
  return doc;
}

}  // namespace metasel
