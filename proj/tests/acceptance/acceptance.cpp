// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails. Reports for the experiment criteria are written under
// the directory given as the first argument (default: ./acceptance_out).

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "metasel/commands.hpp"
#include "metasel/error.hpp"
#include "metasel/metrics.hpp"
#include "metasel/osm.hpp"
#include "metasel/selector.hpp"
#include "metasel/synth.hpp"
#include "metasel/trainer.hpp"
#include "reference.hpp"

#ifndef METASEL_TEST_DATA
#define METASEL_TEST_DATA "tests/data"
#endif

namespace fs = std::filesystem;
using namespace metasel;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  std::string report;  // deterministic artifact, compared by criterion 10
};

const MetadataSchema& road() {
  static const MetadataSchema schema = MetadataSchema::road_attributes();
  return schema;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

DistributionTable random_table(std::mt19937_64& rng, std::size_t cells, double include_p) {
  DistributionTable t;
  for (std::size_t j = 0; j < cells; ++j) {
    t.values.push_back(uniform(rng, 0.0, 1.0));
    t.included.push_back(uniform(rng, 0.0, 1.0) < include_p);
  }
  t.included[rng() % cells] = true;
  return t;
}

std::vector<RatioVector> vectors_of(const DenseCorpus& corpus, const std::vector<std::size_t>& index) {
  std::vector<RatioVector> out;
  for (const auto i : index) out.push_back(corpus.ratio_vector(i));
  return out;
}

// Expected table of a task that prefers some scenarios: the aggregate of the
// top `fraction` of samples under a seeded random linear preference.
DistributionTable preference_target(const DenseCorpus& corpus, double fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> w(corpus.cells());
  for (auto& x : w) x = normal(rng);
  std::vector<double> pref(corpus.size(), 0.0);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t j = 0; j < corpus.cells(); ++j) pref[i] += w[j] * corpus.ratios(i)[j];
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pref[a] > pref[b]; });
  order.resize(static_cast<std::size_t>(fraction * static_cast<double>(corpus.size())));
  return corpus.aggregate(order);
}

PipelineOptions pipeline_options(double rho, std::uint64_t seed, bool filter) {
  PipelineOptions o;
  o.seed = seed;
  o.train.keep_ratio = rho;
  o.selector.keep_ratio = rho;
  o.selector.filter = filter;
  return o;
}

// 1 ---------------------------------------------------------------------------

Outcome metric_identities() {
  std::mt19937_64 rng(1);
  const auto& schema = road();
  int identity_failures = 0;
  for (int k = 0; k < 100; ++k) {
    auto e = random_table(rng, schema.cell_count(), 0.8);
    e.values[std::find(e.included.begin(), e.included.end(), true) - e.included.begin()] = 0.5;
    const double sc = score_category(schema, e, e);
    const double sd = score_domain(schema, e, e);
    if (std::fabs(sc - 1.0) > 1e-12 || std::fabs(sd - 1.0) > 1e-12) ++identity_failures;
  }
  int bound_failures = 0;
  for (int k = 0; k < 1000; ++k) {
    auto a = random_table(rng, schema.cell_count(), 1.0);
    auto e = random_table(rng, schema.cell_count(), 0.7);
    for (auto& v : a.values) v *= uniform(rng, 0.0, 3.0);
    e.values[rng() % e.size()] = 0.0;
    e.values[std::find(e.included.begin(), e.included.end(), true) - e.included.begin()] += 0.01;
    const double sd = score_domain(schema, a, e);
    if (!(sd >= 0.0 && sd <= 1.0)) ++bound_failures;
  }
  return {identity_failures == 0 && bound_failures == 0,
          fmt::format("identity failures {}/100, S_d out of [0,1] {}/1000", identity_failures, bound_failures),
          {}};
}

// 2 ---------------------------------------------------------------------------

MetadataSchema small_schema() {
  return MetadataSchema({{"Weather", {"Clear", "Rainy"}}, {"Time", {"Day", "Night"}}, {"Road", {"Urban", "Rural"}}});
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  if (scale < 1e-7) return std::fabs(analytic - numeric) < 1e-9 ? 0.0 : 1.0;
  return std::fabs(analytic - numeric) / scale;
}

template <class F>
double worst_fd_error(NetParams& params, const NetGrads& grads, F&& objective) {
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto probe = [&](double& slot, double analytic) {
      const double saved = slot;
      slot = saved + h;
      const double up = objective();
      slot = saved - h;
      const double down = objective();
      slot = saved;
      worst = std::max(worst, relative_error(analytic, (up - down) / (2.0 * h)));
    };
    auto& layer = params.layers[l];
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) probe(layer.weights(r, c), grads.layers[l].weights(r, c));
    }
    for (Eigen::Index c = 0; c < layer.bias.size(); ++c) probe(layer.bias(c), grads.layers[l].bias(c));
  }
  return worst;
}

// Random batch whose soft aggregate stays clear of every |a - e| and
// |a - e| / e kink by at least `margin`.
bool far_from_kinks(const std::vector<double>& a, const DistributionTable& e, double margin) {
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (std::fabs(a[j] - e.values[j]) < margin) return false;
    if (std::fabs(std::fabs(a[j] - e.values[j]) / e.values[j] - 1.0) < margin) return false;
  }
  return true;
}

Outcome gradient_fidelity() {
  const auto schema = small_schema();
  double worst_net = 0.0;
  double worst_loss[2] = {0.0, 0.0};
  int skipped = 0;
  for (int c = 0; c < 20; ++c) {
    std::mt19937_64 rng(200 + c);
    auto params = init_params(NetConfig{{6, 4, 1}, static_cast<std::uint64_t>(c)});
    for (auto& layer : params.layers) {
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = uniform(rng, -0.3, 0.3);
    }

    // Pure network: objective sum_i u_i * score_i.
    Matrix x(8, 6);
    Vector u(8);
    for (Eigen::Index i = 0; i < 8; ++i) {
      for (Eigen::Index j = 0; j < 6; ++j) x(i, j) = uniform(rng, 0.0, 1.0);
      u(i) = uniform(rng, -1.0, 1.0);
    }
    const auto net_grads = backprop(params, x, u);
    worst_net = std::max(worst_net, worst_fd_error(params, net_grads, [&] {
                           double total = 0.0;
                           for (Eigen::Index i = 0; i < 8; ++i) {
                             const std::vector<double> row(x.row(i).data(), x.row(i).data() + 6);
                             total += u(i) * reference::forward(params, row);
                           }
                           return total;
                         }));

    // End-to-end loss.
    std::vector<SampleMetadata> samples;
    for (int i = 0; i < 8; ++i) {
      SampleMetadata s{fmt::format("g{}", i), uniform(rng, 20.0, 60.0), {}};
      for (std::size_t j = 0; j < schema.cell_count(); ++j) {
        s.tag_durations[schema.cell(j)] = s.total_duration_s * uniform(rng, 0.0, 1.0);
      }
      samples.push_back(s);
    }
    const DenseCorpus corpus(samples, schema);
    std::vector<std::size_t> members(8);
    std::iota(members.begin(), members.end(), std::size_t{0});
    const auto batch = Batch::gather(corpus, members);

    for (int m = 0; m < 2; ++m) {
      TrainConfig config;
      config.keep_ratio = 0.25 + 0.05 * static_cast<double>(c % 10);
      config.temperature = 0.5;
      config.metric.kind = m == 0 ? MetricChoice::Kind::Category : MetricChoice::Kind::Domain;
      DistributionTable e;
      BatchResult result;
      bool ok = false;
      for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
        std::vector<double> values;
        for (std::size_t j = 0; j < schema.cell_count(); ++j) values.push_back(uniform(rng, 0.05, 0.95));
        e = DistributionTable::all_included(std::move(values));
        result = evaluate_batch(schema, params, batch, e, config);
        ok = far_from_kinks(result.achieved.values, e, 1e-3);
      }
      if (!ok) {
        ++skipped;
        continue;
      }
      const double alpha = m == 0 ? 1.0 : 0.0;
      const double err = worst_fd_error(params, result.grads, [&] {
        return reference::batch_loss(schema, params, corpus, members, e, result.threshold, config.temperature, alpha);
      });
      worst_loss[m] = std::max(worst_loss[m], err);
    }
  }
  const bool pass = worst_net < 1e-4 && worst_loss[0] < 1e-3 && worst_loss[1] < 1e-3 && skipped == 0;
  return {pass,
          fmt::format("worst relative error: network {:.2e}, category loss {:.2e}, domain loss {:.2e}", worst_net,
                      worst_loss[0], worst_loss[1]),
          {}};
}

// 3 ---------------------------------------------------------------------------

Outcome oracle_proximity() {
  const auto& schema = road();
  int close = 0;
  int close_filtered = 0;
  int exceeded = 0;
  std::string report = "seed,oracle,pipeline,pipeline_filtered,worst\n";
  for (int s = 0; s < 20; ++s) {
    const auto samples = generate_synthetic(16, schema, SynthProfile::builtin("road-mix", 300 + s));
    const DenseCorpus corpus(samples, schema);
    std::vector<std::size_t> half(16);
    std::iota(half.begin(), half.end(), std::size_t{0});
    std::mt19937_64 rng(3000 + s);
    std::shuffle(half.begin(), half.end(), rng);
    half.resize(8);
    const auto e = corpus.aggregate(half);

    const auto oracle = brute_force_best_subset(corpus, schema, e, 0.5, MetricChoice{});
    const auto run = run_pipeline(corpus, schema, e, pipeline_options(0.5, s, false));
    const auto filtered = select(corpus, run.scores, schema, &e, pipeline_options(0.5, s, true).selector);
    const double sc = run.selection.report->s_c;
    const double sc_filtered = filtered.report->s_c;
    if (oracle.score - sc <= 0.05) ++close;
    if (oracle.score - sc_filtered <= 0.05) ++close_filtered;
    if (sc > oracle.score + 1e-12 || sc_filtered > oracle.score + 1e-12) ++exceeded;
    report += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", s, oracle.score, sc, sc_filtered, oracle.worst_score);
  }
  return {close >= 16 && exceeded == 0,
          fmt::format("{}/20 within 0.05 of the oracle (similarity filter off; {}/20 with it on), {} above oracle",
                      close, close_filtered, exceeded),
          report};
}

// 4 ---------------------------------------------------------------------------

// Counts adjacent decreases; fails if there is more than one or any is larger
// than the tolerance.
bool nearly_nondecreasing(const std::vector<double>& v, double tolerance) {
  int inversions = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[i - 1]) {
      ++inversions;
      if (v[i - 1] - v[i] > tolerance) return false;
    }
  }
  return inversions <= 1;
}

Outcome rho_trend() {
  const auto& schema = road();
  const std::vector<double> rhos{0.1, 0.3, 0.5, 0.7, 0.9};
  const auto samples = generate_synthetic(200, schema, SynthProfile::builtin("clustered", 4000));
  const DenseCorpus corpus(samples, schema);
  const auto original = corpus.aggregate_all();

  std::vector<double> mean_sc(rhos.size(), 0.0);
  std::vector<double> mean_sd(rhos.size(), 0.0);
  std::string report = "table,rho,s_c,s_d\n";
  for (int k = 0; k < 10; ++k) {
    std::mt19937_64 rng(4100 + k);
    auto e = original;
    for (auto& v : e.values) v = std::clamp(v * uniform(rng, 0.9, 1.1), 0.0, 1.0);
    for (std::size_t r = 0; r < rhos.size(); ++r) {
      const auto run = run_pipeline(corpus, schema, e, pipeline_options(rhos[r], 40 + k, true));
      mean_sc[r] += run.selection.report->s_c / 10.0;
      mean_sd[r] += run.selection.report->s_d / 10.0;
      report += fmt::format("{},{},{:.17g},{:.17g}\n", k, rhos[r], run.selection.report->s_c,
                            run.selection.report->s_d);
    }
  }
  const double rise = mean_sc.back() - mean_sc.front();
  const bool pass = nearly_nondecreasing(mean_sc, 0.02) && nearly_nondecreasing(mean_sd, 0.02) && rise >= 0.1;
  std::string curve;
  for (std::size_t r = 0; r < rhos.size(); ++r) curve += fmt::format(" {}:{:.3f}/{:.3f}", rhos[r], mean_sc[r], mean_sd[r]);
  return {pass, fmt::format("mean S_c/S_d by rho{}; S_c rise {:.3f}", curve, rise), report};
}

// 5 ---------------------------------------------------------------------------

Outcome filtering_diversity() {
  const auto& schema = road();
  const auto samples = generate_synthetic(300, schema, SynthProfile::builtin("clustered", 5000));
  const DenseCorpus corpus(samples, schema);
  const auto e = preference_target(corpus, 0.3, 5100);

  bool pass = true;
  std::string detail;
  std::string report = "rho,mae_filtered,mae_unfiltered\n";
  for (const double rho : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const auto run = run_pipeline(corpus, schema, e, pipeline_options(rho, 50, true));
    auto plain_config = pipeline_options(rho, 50, false).selector;
    const auto plain = select(corpus, run.scores, schema, &e, plain_config);
    const double with = avg_pairwise_mae(vectors_of(corpus, run.selection.selected_index), 0, 0);
    const double without = avg_pairwise_mae(vectors_of(corpus, plain.selected_index), 0, 0);
    pass = pass && with > without;
    detail += fmt::format(" {}:{:.4f}>{:.4f}", rho, with, without);
    report += fmt::format("{},{:.17g},{:.17g}\n", rho, with, without);
  }
  return {pass, "filtered vs unfiltered MAE by rho" + detail, report};
}

// 6 ---------------------------------------------------------------------------

Outcome baseline_comparison() {
  const auto& schema = road();
  double trained = 0.0;
  double trained_filtered = 0.0;
  double random = 0.0;
  double dc = 0.0;
  std::string report = "pair,trained,trained_filtered,random,dc\n";
  for (int k = 0; k < 10; ++k) {
    const auto samples = generate_synthetic(500, schema, SynthProfile::builtin("road-mix", 6000 + k));
    const DenseCorpus corpus(samples, schema);
    // Reachable at rho = 0.2 but far from the corpus average.
    const auto e = preference_target(corpus, 0.2, 6100 + k);

    const auto run = run_pipeline(corpus, schema, e, pipeline_options(0.2, 60 + k, false));
    const auto filtered = select(corpus, run.scores, schema, &e, pipeline_options(0.2, 60 + k, true).selector);
    const auto rnd = random_select(corpus, schema, &e, 0.2, 6200 + k);
    const auto surrogate = dc_surrogate_select(corpus, schema, &e, 0.2);
    trained += run.selection.report->s_c / 10.0;
    trained_filtered += filtered.report->s_c / 10.0;
    random += rnd.report->s_c / 10.0;
    dc += surrogate.report->s_c / 10.0;
    report += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", k, run.selection.report->s_c,
                          filtered.report->s_c, rnd.report->s_c, surrogate.report->s_c);
  }
  return {trained - random >= 0.05 && trained - dc >= 0.05,
          fmt::format("mean S_c trained {:.4f} (similarity filter on: {:.4f}), random {:.4f}, dc-surrogate {:.4f}",
                      trained, trained_filtered, random, dc),
          report};
}

// 7 ---------------------------------------------------------------------------

Outcome quota_exactness() {
  const auto& schema = road();
  int failures = 0;
  std::mt19937_64 rng(7);
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 1 + rng() % 300;
    const std::uint64_t permille = 1 + rng() % 1000;
    const double rho = static_cast<double>(permille) / 1000.0;
    const std::size_t expected = (permille * n + 999) / 1000;

    std::vector<SampleMetadata> samples;
    if (k % 4 == 0) {
      const auto one = generate_synthetic(1, schema, SynthProfile::builtin("road-mix", 7000 + k)).front();
      for (std::size_t i = 0; i < n; ++i) {
        auto copy = one;
        copy.sample_id = fmt::format("dup-{:04d}", i);
        samples.push_back(copy);
      }
    } else {
      samples = generate_synthetic(n, schema, SynthProfile::builtin(k % 2 ? "clustered" : "road-mix", 7000 + k));
    }
    const DenseCorpus corpus(samples, schema);
    std::vector<double> scores(n);
    for (auto& s : scores) s = k % 3 == 0 ? 1.0 : uniform(rng, -1.0, 1.0);
    SelectorConfig config;
    config.keep_ratio = rho;
    config.relaxation = k % 5 == 0 ? Relaxation::PaperDecay : Relaxation::TowardOne;
    const auto result = select(corpus, scores, schema, nullptr, config);
    auto ids = result.selected_ids;
    std::sort(ids.begin(), ids.end());
    const bool unique = std::adjacent_find(ids.begin(), ids.end()) == ids.end();
    if (result.selected_ids.size() != expected || !unique) ++failures;
  }
  return {failures == 0, fmt::format("{}/200 fuzzed selections missed the quota", failures), {}};
}

// 8 ---------------------------------------------------------------------------

Outcome extraction_conformance() {
  const auto& schema = road();
  auto provider = FixtureProvider::from_file(std::string(METASEL_TEST_DATA) + "/fixture_ways.json");
  const auto traces = read_traces(std::string(METASEL_TEST_DATA) + "/fig4_trace.ndjson");
  const auto sample = accumulate_tags(traces.front().sample_id, traces.front().fixes, provider, schema);
  std::map<CellKey, double> want{{{"One way", "One way"}, 41.0},
                                 {{"Way type", "Link way"}, 41.0},
                                 {{"Number of lanes", "1-lane"}, 41.0}};
  bool pass = sample.total_duration_s == 41.0;
  for (std::size_t j = 0; j < schema.cell_count(); ++j) {
    const auto& key = schema.cell(j);
    const auto it = sample.tag_durations.find(key);
    const double got = it == sample.tag_durations.end() ? 0.0 : it->second;
    const double expect = want.count(key) ? want[key] : 0.0;
    pass = pass && got == expect;
  }
  std::string got;
  for (const auto& [key, seconds] : sample.tag_durations) got += fmt::format(" {}={}", key.str(), seconds);
  return {pass, fmt::format("total {}s,{}", sample.total_duration_s, got), {}};
}

// 9 ---------------------------------------------------------------------------

Outcome performance_envelope() {
  const auto& schema = road();
  const auto started = std::chrono::steady_clock::now();
  const auto samples = generate_synthetic(10000, schema, SynthProfile::builtin("road-mix", 9000));
  const DenseCorpus corpus(samples, schema);
  auto e = corpus.aggregate_all();
  e.values[schema.index_of({"Way type", "Highway"})] *= 1.5;
  const auto run = run_pipeline(corpus, schema, e, pipeline_options(0.2, 9, true));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  const double peak_mb = static_cast<double>(usage.ru_maxrss) / 1024.0;
  return {seconds < 120.0 && peak_mb < 1024.0 && run.selection.selected_ids.size() == 2000,
          fmt::format("10000 samples, T={}, K={}: {:.1f}s, peak RSS {:.0f} MB", run.trained.log.epochs.size(),
                      TrainConfig{}.batch_size, seconds, peak_mb),
          {}};
}

// -----------------------------------------------------------------------------

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  const std::vector<Criterion> criteria{
      {1, "metric identities", 1.0, metric_identities},
      {2, "gradient fidelity", 10.0, gradient_fidelity},
      {3, "oracle proximity", 120.0, oracle_proximity},
      {4, "keep-ratio trend", 300.0, rho_trend},
      {5, "filtering diversity", 120.0, filtering_diversity},
      {6, "baseline comparison", 180.0, baseline_comparison},
      {7, "quota exactness", 30.0, quota_exactness},
      {8, "extraction conformance", 1.0, extraction_conformance},
      {9, "performance envelope", 120.0, performance_envelope},
  };

  int failed = 0;
  auto emit = [&](int id, const char* name, bool pass, const std::string& detail) {
    if (!pass) ++failed;
    std::cout << fmt::format("{} criterion {} ({}): {}\n", pass ? "PASS" : "FAIL", id, name, detail) << std::flush;
  };

  std::map<int, std::function<Outcome()>> reported;
  for (const auto& c : criteria) {
    Outcome outcome;
    const auto started = std::chrono::steady_clock::now();
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, fmt::format("threw: {}", e.what()), {}};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const bool in_time = seconds < c.budget_s;
    emit(c.id, c.name, outcome.pass && in_time,
         fmt::format("{} [{:.2f}s of {:.0f}s]", outcome.detail, seconds, c.budget_s));
    if (!outcome.report.empty()) {
      fs::create_directories(out / "first");
      std::ofstream(out / "first" / fmt::format("criterion{}.csv", c.id), std::ios::binary) << outcome.report;
      reported[c.id] = c.run;
    }
  }

  // 10: rerun the report-producing criteria and compare bytes.
  std::vector<int> differing;
  try {
    fs::create_directories(out / "second");
    for (const auto& [id, run] : reported) {
      const auto name = fmt::format("criterion{}.csv", id);
      std::ofstream(out / "second" / name, std::ios::binary) << run().report;
      if (read_file(out / "first" / name) != read_file(out / "second" / name)) differing.push_back(id);
    }
    emit(10, "determinism", differing.empty() && reported.size() == 4,
         fmt::format("{} report(s) rerun, {} differ", reported.size(), differing.size()));
  } catch (const std::exception& e) {
    emit(10, "determinism", false, fmt::format("threw: {}", e.what()));
  }

  std::cout << fmt::format("{} of 10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
