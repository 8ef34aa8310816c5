#include "metasel/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "metasel/error.hpp"
#include "metasel/metrics.hpp"

namespace metasel {
namespace {

double draw_beta(std::mt19937_64& rng, double mean, double concentration) {
  if (mean <= 0.0) return 0.0;
  if (mean >= 1.0) return 1.0;
  std::gamma_distribution<double> x(mean * concentration, 1.0);
  std::gamma_distribution<double> y((1.0 - mean) * concentration, 1.0);
  const double a = x(rng);
  const double b = y(rng);
  return a + b > 0.0 ? a / (a + b) : mean;
}

MixtureComponent component(std::string name, double weight,
                           std::initializer_list<std::tuple<const char*, const char*, double, double>> cells) {
  MixtureComponent c{std::move(name), weight, {}};
  for (const auto& [domain, category, mean, presence] : cells) c.cells[{domain, category}] = {mean, presence};
  return c;
}

}  // namespace

void SynthProfile::validate(const MetadataSchema& schema) const {
  if (components.empty()) fail(ErrorKind::InvalidProfile, fmt::format("profile '{}' has no components", name));
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight >= 0.0)) fail(ErrorKind::InvalidProfile, fmt::format("component '{}' has negative weight", c.name));
    total += c.weight;
    for (const auto& [key, occupancy] : c.cells) {
      if (!schema.find(key)) {
        fail(ErrorKind::InvalidProfile, fmt::format("component '{}' names unknown cell '{}'", c.name, key.str()));
      }
      if (!(occupancy.mean >= 0.0 && occupancy.mean <= 1.0) ||
          !(occupancy.presence >= 0.0 && occupancy.presence <= 1.0)) {
        fail(ErrorKind::InvalidProfile, fmt::format("component '{}' cell '{}' has parameters outside [0, 1]",
                                                    c.name, key.str()));
      }
    }
  }
  if (std::abs(total - 1.0) > 1e-9) {
    fail(ErrorKind::InvalidProfile, fmt::format("profile '{}' weights sum to {}", name, total));
  }
  if (!(min_duration_s > 0.0) || !(max_duration_s >= min_duration_s)) {
    fail(ErrorKind::InvalidProfile, fmt::format("profile '{}' has an invalid duration range", name));
  }
  if (!(concentration > 0.0)) fail(ErrorKind::InvalidProfile, "concentration must be positive");
}

std::vector<double> SynthProfile::analytic_mean(const MetadataSchema& schema) const {
  std::vector<double> mean(schema.cell_count(), 0.0);
  for (const auto& c : components) {
    for (const auto& [key, occupancy] : c.cells) mean[schema.index_of(key)] += c.weight * occupancy.presence * occupancy.mean;
  }
  return mean;
}

SynthProfile SynthProfile::builtin(const std::string& name, std::uint64_t seed) {
  SynthProfile profile;
  profile.name = name;
  profile.seed = seed;
  if (name == "road-mix") {
    profile.components = {
        component("urban", 0.35,
                  {{"Way type", "Primary way", 0.35, 0.8}, {"Way type", "Secondary way", 0.35, 0.8},
                   {"Way type", "Link way", 0.05, 0.3}, {"Way type", "Highway", 0.05, 0.1},
                   {"Number of lanes", "1-lane", 0.5, 0.9}, {"Number of lanes", "2-lanes", 0.35, 0.7},
                   {"Number of lanes", "3-lanes", 0.1, 0.3}, {"Number of lanes", "4-lanes", 0.05, 0.2},
                   {"One way", "One way", 0.5, 0.7}, {"Bridge", "Bridge", 0.1, 0.2},
                   {"Roundabout", "Roundabout", 0.1, 0.1}, {"Tunnel", "Tunnel", 0.1, 0.02}}),
        component("highway", 0.2,
                  {{"Way type", "Highway", 0.8, 0.95}, {"Way type", "Link way", 0.15, 0.5},
                   {"Number of lanes", "3-lanes", 0.4, 0.7}, {"Number of lanes", "4-lanes", 0.4, 0.6},
                   {"Number of lanes", "5-lanes", 0.2, 0.2}, {"Number of lanes", "6-lanes", 0.1, 0.1},
                   {"One way", "One way", 0.9, 0.95}, {"Bridge", "Bridge", 0.2, 0.5}, {"Toll", "Toll", 0.2, 0.2},
                   {"Tunnel", "Tunnel", 0.2, 0.1}, {"Shoulder", "Shoulder", 0.5, 0.3}}),
        component("suburban", 0.3,
                  {{"Way type", "Secondary way", 0.5, 0.9}, {"Way type", "Primary way", 0.2, 0.5},
                   {"Number of lanes", "1-lane", 0.6, 0.9}, {"Number of lanes", "2-lanes", 0.3, 0.6},
                   {"One way", "One way", 0.2, 0.4}, {"Roundabout", "Roundabout", 0.2, 0.2},
                   {"Bridge", "Bridge", 0.05, 0.1}}),
        component("residential", 0.15,
                  {{"Number of lanes", "1-lane", 0.7, 0.8}, {"One way", "One way", 0.3, 0.3}}),
    };
  } else if (name == "highway-heavy") {
    profile.components = {
        component("highway", 1.0,
                  {{"Way type", "Highway", 0.7, 1.0}, {"Way type", "Link way", 0.1, 0.6},
                   {"Number of lanes", "3-lanes", 0.5, 0.8}, {"Number of lanes", "4-lanes", 0.3, 0.6},
                   {"One way", "One way", 0.9, 1.0}, {"Bridge", "Bridge", 0.2, 0.5}}),
    };
  } else if (name == "clustered") {
    profile.concentration = 400.0;
    profile.components = {
        component("motorway", 0.2,
                  {{"Way type", "Highway", 0.9, 1.0}, {"Number of lanes", "4-lanes", 0.8, 1.0},
                   {"One way", "One way", 0.95, 1.0}}),
        component("downtown", 0.2,
                  {{"Way type", "Primary way", 0.8, 1.0}, {"Number of lanes", "2-lanes", 0.7, 1.0},
                   {"One way", "One way", 0.6, 1.0}}),
        component("village", 0.2,
                  {{"Way type", "Secondary way", 0.85, 1.0}, {"Number of lanes", "1-lane", 0.9, 1.0}}),
        component("interchange", 0.2,
                  {{"Way type", "Link way", 0.8, 1.0}, {"Number of lanes", "1-lane", 0.7, 1.0},
                   {"Bridge", "Bridge", 0.6, 1.0}, {"One way", "One way", 0.9, 1.0}}),
        component("tollroad", 0.2,
                  {{"Way type", "Highway", 0.6, 1.0}, {"Number of lanes", "3-lanes", 0.7, 1.0},
                   {"Toll", "Toll", 0.5, 1.0}, {"Tunnel", "Tunnel", 0.3, 1.0}, {"Shoulder", "Shoulder", 0.5, 1.0}}),
    };
  } else {
    fail(ErrorKind::InvalidProfile, fmt::format("unknown built-in profile '{}'", name));
  }
  return profile;
}

SynthProfile SynthProfile::from_json(const nlohmann::json& doc) {
  try {
    SynthProfile profile;
    profile.name = doc.at("name").get<std::string>();
    profile.seed = doc.value("seed", std::uint64_t{0});
    profile.concentration = doc.value("concentration", 20.0);
    if (doc.contains("duration_range_s")) {
      const auto range = doc.at("duration_range_s").get<std::vector<double>>();
      if (range.size() != 2) fail(ErrorKind::InvalidProfile, "duration_range_s needs two values");
      profile.min_duration_s = range[0];
      profile.max_duration_s = range[1];
    }
    for (const auto& entry : doc.at("components")) {
      MixtureComponent c;
      c.name = entry.value("name", std::string{});
      c.weight = entry.at("weight").get<double>();
      for (const auto& [text, cell] : entry.at("cells").items()) {
        c.cells[CellKey::parse(text)] = {cell.at("mean").get<double>(), cell.value("presence", 1.0)};
      }
      profile.components.push_back(std::move(c));
    }
    return profile;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("profile document: {}", e.what()));
  }
}

nlohmann::json SynthProfile::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : components) {
    nlohmann::json cells = nlohmann::json::object();
    for (const auto& [key, o] : c.cells) cells[key.str()] = {{"mean", o.mean}, {"presence", o.presence}};
    comps.push_back({{"name", c.name}, {"weight", c.weight}, {"cells", cells}});
  }
  return {{"name", name},
          {"seed", seed},
          {"concentration", concentration},
          {"duration_range_s", {min_duration_s, max_duration_s}},
          {"components", comps}};
}

std::vector<SampleMetadata> generate_synthetic(std::size_t n, const MetadataSchema& schema,
                                               const SynthProfile& profile) {
  if (n == 0) fail(ErrorKind::InvalidProfile, "sample count must be at least 1");
  profile.validate(schema);
  std::mt19937_64 rng(profile.seed);
  std::vector<double> weights;
  for (const auto& c : profile.components) weights.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<double> duration(profile.min_duration_s, profile.max_duration_s);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<SampleMetadata> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = profile.components[pick(rng)];
    SampleMetadata sample;
    sample.sample_id = fmt::format("{}-{:06d}", profile.name, i);
    sample.total_duration_s = duration(rng);
    for (const auto& [key, occupancy] : c.cells) {
      // Draw both variates unconditionally so the stream layout does not
      // depend on outcomes.
      const bool present = unit(rng) < occupancy.presence;
      const double fraction = draw_beta(rng, occupancy.mean, profile.concentration);
      if (present && fraction > 0.0) sample.tag_durations[key] = fraction * sample.total_duration_s;
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

double selection_score(const MetadataSchema& schema, const DistributionTable& a, const DistributionTable& e,
                       const MetricChoice& choice) {
  return 1.0 - loss(schema, a, e, choice);
}

nlohmann::json OracleResult::to_json() const {
  return {{"ids", ids}, {"score", score}, {"enumerated_count", enumerated}};
}

OracleResult brute_force_best_subset(const DenseCorpus& corpus, const MetadataSchema& schema,
                                     const DistributionTable& e, double keep_ratio, const MetricChoice& choice,
                                     std::size_t threads) {
  const std::size_t n = corpus.size();
  if (n == 0) fail(ErrorKind::EmptyCorpus, "oracle needs a nonempty corpus");
  if (n > kOracleSizeLimit) {
    fail(ErrorKind::SizeLimit, fmt::format("oracle enumerates at most {} samples, got {}", kOracleSizeLimit, n));
  }
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) fail(ErrorKind::InvalidConfig, "keep ratio must be in (0, 1]");
  const std::size_t k = selection_quota(keep_ratio, n);
  threads = std::max<std::size_t>(1, threads);

  // Ids sorted once; a subset's sorted id list is the rank-ordered member list.
  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](auto x, auto y) { return corpus.id(x) < corpus.id(y); });
  // Remap bit positions so bit r is the sample with the r-th smallest id; the
  // lexicographically smaller sorted-id list is then the mask whose lowest
  // differing bit is set.
  auto id_less = [](std::uint32_t x, std::uint32_t y) {
    const std::uint32_t diff = x ^ y;
    if (diff == 0) return false;
    return (x & (diff & -diff)) != 0;
  };

  struct Best {
    double score = -std::numeric_limits<double>::infinity();
    double worst = std::numeric_limits<double>::infinity();
    std::uint32_t mask = 0;
    std::size_t count = 0;
  };
  std::vector<Best> partial(threads);

  auto work = [&](std::size_t t) {
    Best& best = partial[t];
    DistributionTable a = DistributionTable::all_included(std::vector<double>(corpus.cells(), 0.0));
    std::vector<double> seconds(corpus.cells());
    std::size_t counter = 0;
    const std::uint32_t limit = 1u << n;
    for (std::uint32_t mask = (1u << k) - 1u; mask < limit && mask != 0;) {
      if (counter++ % threads == t) {
        std::fill(seconds.begin(), seconds.end(), 0.0);
        double total = 0.0;
        for (std::uint32_t bits = mask; bits != 0; bits &= bits - 1) {
          const auto i = by_id[static_cast<std::size_t>(std::countr_zero(bits))];
          const auto row = corpus.tags(i);
          for (std::size_t j = 0; j < seconds.size(); ++j) seconds[j] += row[j];
          total += corpus.total(i);
        }
        for (std::size_t j = 0; j < seconds.size(); ++j) a.values[j] = std::clamp(seconds[j] / total, 0.0, 1.0);
        const double s = selection_score(schema, a, e, choice);
        ++best.count;
        best.worst = std::min(best.worst, s);
        if (s > best.score || (s == best.score && id_less(mask, best.mask))) {
          best.score = s;
          best.mask = mask;
        }
      }
      // Gosper's hack: next mask with the same popcount.
      const std::uint32_t low = mask & -mask;
      const std::uint32_t ripple = mask + low;
      if (ripple == 0) break;
      mask = ripple | (((mask ^ ripple) >> 2) / low);
    }
  };

  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }

  Best best;
  for (const auto& p : partial) {
    best.count += p.count;
    best.worst = std::min(best.worst, p.worst);
    if (p.count == 0) continue;
    if (p.score > best.score || (p.score == best.score && id_less(p.mask, best.mask))) {
      best.score = p.score;
      best.mask = p.mask;
    }
  }

  OracleResult result;
  result.score = best.score;
  result.worst_score = best.worst;
  result.enumerated = best.count;
  for (std::uint32_t bits = best.mask; bits != 0; bits &= bits - 1) {
    const auto i = by_id[static_cast<std::size_t>(std::countr_zero(bits))];
    result.index.push_back(i);
    result.ids.push_back(corpus.id(i));
  }
  return result;
}

SelectionResult random_select(const DenseCorpus& corpus, const MetadataSchema& schema,
                              const DistributionTable* expected, double keep_ratio, std::uint64_t seed) {
  if (corpus.size() == 0) fail(ErrorKind::EmptyCorpus, "cannot select from an empty corpus");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) fail(ErrorKind::InvalidConfig, "keep ratio must be in (0, 1]");
  SelectionResult result;
  result.method = "random";
  result.n = corpus.size();
  result.keep_ratio = keep_ratio;
  result.quota = selection_quota(keep_ratio, corpus.size());
  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::sample(all.begin(), all.end(), std::back_inserter(result.selected_index), result.quota,
              std::mt19937_64(seed));
  for (const auto i : result.selected_index) result.selected_ids.push_back(corpus.id(i));
  finish_selection(result, corpus, schema, expected);
  return result;
}

double dc_surrogate_score(std::span<const double> ratios) {
  double sum = 0.0;
  std::size_t nonzero = 0;
  for (const double r : ratios) {
    sum += r;
    if (r > 0.0) ++nonzero;
  }
  double entropy = 0.0;
  if (sum > 0.0) {
    for (const double r : ratios) {
      if (r > 0.0) {
        const double p = r / sum;
        entropy -= p * std::log(p);
      }
    }
  }
  return entropy + static_cast<double>(nonzero) / static_cast<double>(ratios.size());
}

SelectionResult dc_surrogate_select(const DenseCorpus& corpus, const MetadataSchema& schema,
                                    const DistributionTable* expected, double keep_ratio) {
  if (corpus.size() == 0) fail(ErrorKind::EmptyCorpus, "cannot select from an empty corpus");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) fail(ErrorKind::InvalidConfig, "keep ratio must be in (0, 1]");
  std::vector<std::pair<std::string, double>> keyed;
  keyed.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) keyed.emplace_back(corpus.id(i), dc_surrogate_score(corpus.ratios(i)));
  const auto order = rank(keyed);

  SelectionResult result;
  result.method = "dc-surrogate";
  result.n = corpus.size();
  result.keep_ratio = keep_ratio;
  result.quota = selection_quota(keep_ratio, corpus.size());
  result.selected_index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(result.quota));
  for (const auto i : result.selected_index) result.selected_ids.push_back(corpus.id(i));
  finish_selection(result, corpus, schema, expected);
  return result;
}

}  // namespace metasel
