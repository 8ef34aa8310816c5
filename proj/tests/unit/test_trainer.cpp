#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <random>

#include "check.hpp"
#include "metasel/metrics.hpp"
#include "metasel/synth.hpp"
#include "metasel/trainer.hpp"
#include "reference.hpp"

using namespace metasel;
using metasel::testing::error_kind;

namespace {

const MetadataSchema road = MetadataSchema::road_attributes();
const MetadataSchema one_cell(std::vector<DomainSpec>{{"Weather", {"Clear"}}});

SampleMetadata sample(std::string id, double total, std::map<CellKey, double> tags) {
  return {std::move(id), total, std::move(tags)};
}

MetricChoice metric(MetricChoice::Kind kind, double alpha = 0.5) {
  MetricChoice m;
  m.kind = kind;
  m.alpha = alpha;
  return m;
}

// Cluster X leans Highway / 4 lanes, cluster Y leans Primary / 2 lanes.
std::vector<SampleMetadata> two_clusters(std::size_t per_cluster, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::vector<SampleMetadata> out;
  for (std::size_t i = 0; i < 2 * per_cluster; ++i) {
    const bool x = i % 2 == 0;
    const double total = 30.0 + 10.0 * jitter(rng) * 10.0;
    SampleMetadata s{fmt::format("{}-{:03d}", x ? "x" : "y", i), total, {}};
    s.tag_durations[{"Way type", x ? "Highway" : "Primary way"}] = total * (0.85 + jitter(rng));
    s.tag_durations[{"Number of lanes", x ? "4-lanes" : "2-lanes"}] = total * (0.8 + jitter(rng));
    s.tag_durations[{"One way", "One way"}] = total * (x ? 0.9 + jitter(rng) : 0.3 + jitter(rng));
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("empirical quantile interpolates linearly") {
  const std::vector<double> v{4.0, 1.0, 3.0, 2.0};
  CHECK(empirical_quantile(v, 0.0) == 1.0);
  CHECK(empirical_quantile(v, 1.0) == 4.0);
  CHECK(empirical_quantile(v, 0.5) == 2.5);
  CHECK(empirical_quantile(v, 0.8) == doctest::Approx(3.4));
}

TEST_CASE("soft selection examples") {
  const std::vector<double> equal{2.0, 2.0, 2.0};
  for (const double w : soft_select_weights(equal, 0.3, 0.05).weights) CHECK(w == 0.5);

  const std::vector<double> apart{0.0, 10.0};
  const auto sel = soft_select_weights(apart, 0.5, 0.05);
  CHECK(sel.weights[0] < 1e-20);
  CHECK(std::fabs(sel.weights[1] - 1.0) < 1e-9);
  CHECK(sel.weights[0] == doctest::Approx(reference::logistic(-100.0)).epsilon(1e-9));

  const std::vector<double> distinct{0.3, -1.0, 2.0, 0.9};
  const auto all = soft_select_weights(distinct, 1.0, 0.1);
  CHECK(all.threshold == -1.0);
  for (const double w : all.weights) CHECK(w >= 0.5);

  CHECK(error_kind([] { soft_select_weights(std::vector<double>{1.0}, 0.5, 0.1); }) == ErrorKind::InsufficientBatch);
}

TEST_CASE("soft selection is shift invariant") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> s(64);
  for (auto& x : s) x = n(rng);
  auto shifted = s;
  for (auto& x : shifted) x += 3.0;
  const auto a = soft_select_weights(s, 0.2, 0.5);
  const auto b = soft_select_weights(shifted, 0.2, 0.5);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(a.weights[i] == doctest::Approx(b.weights[i]).epsilon(1e-12));
}

TEST_CASE("soft aggregate examples") {
  const CellKey hw{"Way type", "Highway"};
  const std::vector<SampleMetadata> two{sample("a", 20.0, {{hw, 10.0}}), sample("b", 20.0, {{hw, 20.0}})};
  const std::vector<double> ones{1.0, 1.0};
  CHECK(soft_aggregate(ones, two, road) == aggregate_distribution(two, road));
  const std::vector<double> first{1.0, 0.0};
  CHECK(soft_aggregate(first, two, road).values == phi_sample(two[0], road).values);
  const std::vector<double> halves{0.5, 0.5};
  CHECK(soft_aggregate(halves, two, road).values[0] == doctest::Approx(0.75));
  const std::vector<double> zero{0.0, 0.0};
  CHECK(error_kind([&] { soft_aggregate(zero, two, road); }) == ErrorKind::DegenerateBatch);
}

TEST_CASE("loss examples") {
  const auto e = DistributionTable::all_included({0.5});
  CHECK(loss(one_cell, e, e, MetricChoice{}) == 0.0);
  const auto a = DistributionTable::all_included({0.3});
  CHECK(loss(one_cell, a, e, metric(MetricChoice::Kind::Category)) == doctest::Approx(0.2).epsilon(1e-12));
  // 1 - S_c = 0.2 and 1 - S_d = 0.4 on this pair.
  CHECK(loss(one_cell, a, e, metric(MetricChoice::Kind::Domain)) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(loss(one_cell, a, e, metric(MetricChoice::Kind::Blend, 0.5)) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("loss gradient") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (const auto kind : {MetricChoice::Kind::Category, MetricChoice::Kind::Domain, MetricChoice::Kind::Blend}) {
    for (int k = 0; k < 20; ++k) {
      std::vector<double> av(road.cell_count());
      std::vector<double> ev(road.cell_count());
      for (std::size_t j = 0; j < av.size(); ++j) {
        ev[j] = u(rng);
        // Keep |a - e| / e strictly inside (0, 1) so no kink is crossed.
        av[j] = ev[j] * (1.0 + (j % 2 ? 0.5 : -0.5) * u(rng));
      }
      const auto a = DistributionTable::all_included(av);
      const auto e = DistributionTable::all_included(ev);
      const auto g = loss_gradient(road, a, e, metric(kind, 0.3));
      for (std::size_t j = 0; j < av.size(); ++j) {
        auto up = a;
        auto down = a;
        up.values[j] += 1e-6;
        down.values[j] -= 1e-6;
        const double numeric = (loss(road, up, e, metric(kind, 0.3)) - loss(road, down, e, metric(kind, 0.3))) / 2e-6;
        CHECK(g[j] == doctest::Approx(numeric).epsilon(1e-6));
      }
    }
  }
  // Zero subgradient at the L1 kink and on the clamped side of the domain metric.
  const auto e = DistributionTable::all_included({0.5});
  CHECK(loss_gradient(one_cell, e, e, MetricChoice{})[0] == 0.0);
  CHECK(loss_gradient(one_cell, e, e, metric(MetricChoice::Kind::Domain))[0] == 0.0);
  const auto far = DistributionTable::all_included({1.0});
  const auto small = DistributionTable::all_included({0.2});
  CHECK(loss_gradient(one_cell, far, small, metric(MetricChoice::Kind::Domain))[0] == 0.0);
}

TEST_CASE("hard and soft losses agree at low temperature") {
  const auto samples = generate_synthetic(40, road, SynthProfile::builtin("road-mix", 23));
  const DenseCorpus corpus(samples, road);
  const auto e = corpus.aggregate_all();
  std::vector<double> scores(samples.size());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>((i * 17) % 40);
  for (const double rho : {0.25, 0.5}) {
    const auto soft = soft_select_weights(scores, rho, 1e-6);
    const auto soft_a = soft_aggregate(soft.weights, samples, road);
    std::vector<std::size_t> top;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] > soft.threshold) top.push_back(i);
    }
    const auto hard_a = corpus.aggregate(top);
    CHECK(std::fabs(loss(road, soft_a, e, MetricChoice{}) - loss(road, hard_a, e, MetricChoice{})) < 1e-6);
  }
}

TEST_CASE("batch gradient matches central differences with the threshold held") {
  const MetadataSchema small(std::vector<DomainSpec>{{"Weather", {"Clear", "Rainy"}}, {"Time", {"Day", "Night"}}, {"Road", {"Urban", "Rural"}}});
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<SampleMetadata> samples;
  for (int i = 0; i < 8; ++i) {
    SampleMetadata s{fmt::format("s{}", i), 40.0, {}};
    for (std::size_t j = 0; j < small.cell_count(); ++j) s.tag_durations[small.cell(j)] = 40.0 * u(rng);
    samples.push_back(s);
  }
  const DenseCorpus corpus(samples, small);
  std::vector<std::size_t> members(8);
  std::iota(members.begin(), members.end(), std::size_t{0});
  const auto batch = Batch::gather(corpus, members);
  auto params = init_params(NetConfig{{6, 4, 1}, 24});
  for (const auto kind : {MetricChoice::Kind::Category, MetricChoice::Kind::Domain}) {
    TrainConfig config;
    config.keep_ratio = 0.5;
    config.metric = metric(kind);
    const auto e = DistributionTable::all_included({0.9, 0.05, 0.8, 0.1, 0.85, 0.15});
    const auto result = evaluate_batch(small, params, batch, e, config);
    const double alpha = kind == MetricChoice::Kind::Category ? 1.0 : 0.0;
    CHECK(result.loss == doctest::Approx(reference::batch_loss(small, params, corpus, members, e, result.threshold,
                                                               config.temperature, alpha))
                             .epsilon(1e-12));
    auto& w = params.layers[0].weights;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const double saved = w(r, c);
        w(r, c) = saved + 1e-5;
        const double plus = reference::batch_loss(small, params, corpus, members, e, result.threshold,
                                                  config.temperature, alpha);
        w(r, c) = saved - 1e-5;
        const double minus = reference::batch_loss(small, params, corpus, members, e, result.threshold,
                                                   config.temperature, alpha);
        w(r, c) = saved;
        const double numeric = (plus - minus) / 2e-5;
        const double analytic = result.grads.layers[0].weights(r, c);
        CHECK(std::fabs(analytic - numeric) <= 1e-3 * std::max({std::fabs(analytic), std::fabs(numeric), 1e-6}));
      }
    }
  }
}

TEST_CASE("train config validation") {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return error_kind([&] { c.validate(); });
  };
  CHECK(bad([](TrainConfig& c) { c.keep_ratio = 0.0; }) == ErrorKind::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.keep_ratio = 1.5; }) == ErrorKind::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.epochs = 0; }) == ErrorKind::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.batch_size = 1; }) == ErrorKind::InvalidConfig);
  CHECK(bad([](TrainConfig& c) { c.temperature = 0.0; }) == ErrorKind::InvalidConfig);
  CHECK_FALSE(bad([](TrainConfig&) {}));
  CHECK(TrainConfig{}.epochs == 120);
  CHECK(TrainConfig{}.batch_size == 1024);
  CHECK(TrainConfig{}.lr == 0.01);
}

TEST_CASE("metric choice parsing") {
  CHECK(MetricChoice::parse("category").kind == MetricChoice::Kind::Category);
  CHECK(MetricChoice::parse("domain").kind == MetricChoice::Kind::Domain);
  const auto blend = MetricChoice::parse("blend", 0.3);
  CHECK(blend.kind == MetricChoice::Kind::Blend);
  CHECK(blend.alpha == 0.3);
  CHECK(error_kind([] { MetricChoice::parse("cosine"); }).has_value());
}

TEST_CASE("training from an optimum stays there") {
  // Identical ratio vectors: any weighting reproduces e exactly.
  std::vector<SampleMetadata> samples;
  for (int i = 0; i < 6; ++i) {
    const double total = 10.0 + 5.0 * i;
    samples.push_back(sample(fmt::format("s{}", i), total, {{{"Way type", "Highway"}, 0.5 * total}}));
  }
  const DenseCorpus corpus(samples, road);
  TrainConfig config;
  config.keep_ratio = 1.0;
  config.epochs = 5;
  const auto result = train(corpus, road, corpus.aggregate_all(), NetConfig{{16, 8, 1}, 1}, config);
  REQUIRE(result.log.epochs.size() == 5);
  for (const auto& epoch : result.log.epochs) CHECK(epoch.loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("training separates a matching cluster") {
  const auto samples = two_clusters(20, 25);
  const DenseCorpus corpus(samples, road);
  std::vector<std::size_t> x;
  for (std::size_t i = 0; i < samples.size(); i += 2) x.push_back(i);
  const auto e = corpus.aggregate(x);
  TrainConfig config;
  config.keep_ratio = 0.5;
  config.shuffle_seed = 25;
  const auto result = train(corpus, road, e, NetConfig::standard(16, 25), config);
  CHECK(result.log.epochs.back().loss <= result.log.epochs.front().loss);

  const auto scores = score_corpus(result.params, corpus);
  double mean_x = 0.0;
  double mean_y = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) (i % 2 == 0 ? mean_x : mean_y) += scores[i] / 20.0;
  CHECK(mean_x > mean_y);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  order.resize(20);
  CHECK(score_category(road, corpus.aggregate(order), e) >= 0.95);
}

TEST_CASE("training is deterministic and does not end above its start") {
  for (const std::uint64_t seed : {31u, 32u, 33u, 34u, 35u}) {
    const auto samples = generate_synthetic(300, road, SynthProfile::builtin("road-mix", seed));
    const DenseCorpus corpus(samples, road);
    auto e = corpus.aggregate_all();
    e.values[0] = std::min(1.0, e.values[0] * 3.0);
    TrainConfig config;
    config.epochs = 30;
    config.shuffle_seed = seed;
    const auto a = train(corpus, road, e, NetConfig{{16, 32, 32, 1}, seed}, config);
    const auto b = train(corpus, road, e, NetConfig{{16, 32, 32, 1}, seed}, config);
    REQUIRE(a.log.epochs.size() == 30);
    for (std::size_t k = 0; k < a.log.epochs.size(); ++k) CHECK(a.log.epochs[k].loss == b.log.epochs[k].loss);
    CHECK(a.params == b.params);
    CHECK(a.log.epochs.back().loss <= a.log.epochs.front().loss);
  }
}

TEST_CASE("short tail batches are skipped with a warning") {
  const auto samples = generate_synthetic(3, road, SynthProfile::builtin("road-mix", 34));
  const DenseCorpus corpus(samples, road);
  TrainConfig config;
  config.batch_size = 2;
  config.epochs = 2;
  const auto result = train(corpus, road, corpus.aggregate_all(), NetConfig{{16, 4, 1}, 1}, config);
  CHECK(result.log.epochs.size() == 2);
  CHECK(result.log.warnings.size() == 2);

  const auto one = generate_synthetic(1, road, SynthProfile::builtin("road-mix", 34));
  const DenseCorpus tiny(one, road);
  CHECK(error_kind([&] { train(tiny, road, tiny.aggregate_all(), NetConfig{{16, 4, 1}, 1}, config); }) ==
        ErrorKind::InsufficientData);
  CHECK(error_kind([&] { train(corpus, road, corpus.aggregate_all(), NetConfig{{6, 4, 1}, 1}, config); }) ==
        ErrorKind::Shape);
}

TEST_CASE("train log csv") {
  TrainLog log;
  log.epochs.push_back({1, 0.5, 0.5, 0.25, 0.0});
  const auto csv = log.to_csv();
  CHECK(csv.rfind("epoch,loss,s_c,s_d,seconds\n", 0) == 0);
  CHECK(csv.find("\n1,0.5,0.5,0.25,") != std::string::npos);
}
