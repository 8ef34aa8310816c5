#include "metasel/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "metasel/error.hpp"
#include "metasel/metrics.hpp"

namespace metasel {
namespace {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void check_metric_tables(const MetadataSchema& schema, const DistributionTable& a, const DistributionTable& e) {
  const auto m = schema.cell_count();
  if (a.size() != m || e.size() != m || a.included.size() != m || e.included.size() != m) {
    fail(ErrorKind::SchemaMismatch, "table sizes do not match the schema");
  }
}

std::vector<double> category_gradient(const MetadataSchema& schema, const DistributionTable& a,
                                      const DistributionTable& e) {
  std::vector<double> grad(a.size(), 0.0);
  std::vector<bool> seen(schema.domain_count(), false);
  std::size_t domains = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (!a.included[j] || !e.included[j]) continue;
    grad[j] = sign(a.values[j] - e.values[j]);
    if (!seen[schema.domain_of(j)]) {
      seen[schema.domain_of(j)] = true;
      ++domains;
    }
  }
  if (domains == 0) fail(ErrorKind::NoCells, "no cell is included in both tables");
  for (auto& g : grad) g /= static_cast<double>(domains);
  return grad;
}

std::vector<double> domain_gradient(const DistributionTable& a, const DistributionTable& e) {
  std::vector<double> grad(a.size(), 0.0);
  std::size_t count = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (!a.included[j] || !e.included[j] || !(e.values[j] > 0.0)) continue;
    ++count;
    const double delta = a.values[j] - e.values[j];
    if (std::abs(delta) / e.values[j] < 1.0) grad[j] = sign(delta) / e.values[j];
  }
  if (count == 0) fail(ErrorKind::NoCells, "no included cell with a positive expected ratio");
  for (auto& g : grad) g /= static_cast<double>(count);
  return grad;
}

}  // namespace

MetricChoice MetricChoice::parse(const std::string& text, double alpha) {
  if (text == "category") return {Kind::Category, alpha};
  if (text == "domain") return {Kind::Domain, alpha};
  if (text == "blend") {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::InvalidConfig, "blend weight must be in [0, 1]");
    return {Kind::Blend, alpha};
  }
  fail(ErrorKind::InvalidConfig, fmt::format("unknown metric '{}' (category, domain, blend)", text));
}

std::string MetricChoice::name() const {
  switch (kind) {
    case Kind::Category: return "category";
    case Kind::Domain: return "domain";
    case Kind::Blend: return fmt::format("blend({})", alpha);
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) fail(ErrorKind::InvalidConfig, "keep ratio must be in (0, 1]");
  if (epochs < 1) fail(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (batch_size < 2) fail(ErrorKind::InvalidConfig, "batch size must be >= 2");
  if (!(temperature > 0.0)) fail(ErrorKind::InvalidConfig, "temperature must be positive");
  if (!(lr > 0.0)) fail(ErrorKind::InvalidConfig, "learning rate must be positive");
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,loss,s_c,s_d,seconds\n";
  for (const auto& e : epochs) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.3f}\n", e.epoch, e.loss, e.s_c, e.s_d, e.seconds);
  }
  return out.str();
}

double empirical_quantile(std::span<const double> values, double q) {
  if (values.empty()) fail(ErrorKind::InsufficientData, "quantile of an empty set");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? sorted[lo] : sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

SoftSelection soft_select_weights(std::span<const double> scores, double keep_ratio, double temperature) {
  if (scores.size() < 2) fail(ErrorKind::InsufficientBatch, "soft selection needs at least two scores");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) fail(ErrorKind::InvalidConfig, "keep ratio must be in (0, 1]");
  if (!(temperature > 0.0)) fail(ErrorKind::InvalidConfig, "temperature must be positive");
  for (const double s : scores) {
    if (!std::isfinite(s)) fail(ErrorKind::Numeric, "non-finite score");
  }
  SoftSelection out;
  out.threshold = empirical_quantile(scores, 1.0 - keep_ratio);
  out.weights.reserve(scores.size());
  for (const double s : scores) out.weights.push_back(logistic((s - out.threshold) / temperature));
  return out;
}

DistributionTable soft_aggregate(std::span<const double> weights, std::span<const SampleMetadata> samples,
                                 const MetadataSchema& schema) {
  if (weights.size() != samples.size()) {
    fail(ErrorKind::Shape, fmt::format("{} weights for {} samples", weights.size(), samples.size()));
  }
  std::vector<double> seconds(schema.cell_count(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto& [key, value] : samples[i].tag_durations) seconds[schema.index_of(key)] += weights[i] * value;
    total += weights[i] * samples[i].total_duration_s;
  }
  if (!(total > 0.0)) fail(ErrorKind::DegenerateBatch, "weighted duration of the batch is zero");
  for (auto& value : seconds) value = std::clamp(value / total, 0.0, 1.0);
  return DistributionTable::all_included(std::move(seconds));
}

double loss(const MetadataSchema& schema, const DistributionTable& a, const DistributionTable& e,
            const MetricChoice& choice) {
  switch (choice.kind) {
    case MetricChoice::Kind::Category: return 1.0 - score_category(schema, a, e);
    case MetricChoice::Kind::Domain: return 1.0 - score_domain(schema, a, e);
    case MetricChoice::Kind::Blend:
      return choice.alpha * (1.0 - score_category(schema, a, e)) +
             (1.0 - choice.alpha) * (1.0 - score_domain(schema, a, e));
  }
  return 0.0;
}

std::vector<double> loss_gradient(const MetadataSchema& schema, const DistributionTable& a,
                                  const DistributionTable& e, const MetricChoice& choice) {
  check_metric_tables(schema, a, e);
  switch (choice.kind) {
    case MetricChoice::Kind::Category: return category_gradient(schema, a, e);
    case MetricChoice::Kind::Domain: return domain_gradient(a, e);
    case MetricChoice::Kind::Blend: {
      auto grad = category_gradient(schema, a, e);
      const auto domain = domain_gradient(a, e);
      for (std::size_t j = 0; j < grad.size(); ++j) {
        grad[j] = choice.alpha * grad[j] + (1.0 - choice.alpha) * domain[j];
      }
      return grad;
    }
  }
  return {};
}

Batch Batch::gather(const DenseCorpus& corpus, std::span<const std::size_t> members) {
  const auto m = static_cast<Eigen::Index>(corpus.cells());
  Batch batch{Matrix(members.size(), m), Matrix(members.size(), m), Vector(members.size())};
  for (std::size_t r = 0; r < members.size(); ++r) {
    const auto i = members[r];
    const auto row = static_cast<Eigen::Index>(r);
    batch.ratios.row(row) = Eigen::Map<const Eigen::RowVectorXd>(corpus.ratios(i).data(), m);
    batch.tags.row(row) = Eigen::Map<const Eigen::RowVectorXd>(corpus.tags(i).data(), m);
    batch.totals(row) = corpus.total(i);
  }
  return batch;
}

BatchResult evaluate_batch(const MetadataSchema& schema, const NetParams& params, const Batch& batch,
                           const DistributionTable& e, const TrainConfig& config) {
  const Vector scores = score_batch(params, batch.ratios);
  const auto soft = soft_select_weights(std::span<const double>(scores.data(), scores.size()),
                                        config.keep_ratio, config.temperature);
  const Eigen::Map<const Vector> weights(soft.weights.data(), static_cast<Eigen::Index>(soft.weights.size()));

  const double weighted_total = weights.dot(batch.totals);
  if (!(weighted_total > 0.0)) fail(ErrorKind::DegenerateBatch, "weighted duration of the batch is zero");
  const Eigen::RowVectorXd weighted_tags = weights.transpose() * batch.tags;

  BatchResult result;
  result.threshold = soft.threshold;
  std::vector<double> values(schema.cell_count());
  for (std::size_t j = 0; j < values.size(); ++j) {
    values[j] = std::clamp(weighted_tags(static_cast<Eigen::Index>(j)) / weighted_total, 0.0, 1.0);
  }
  result.achieved = DistributionTable::all_included(std::move(values));
  result.loss = loss(schema, result.achieved, e, config.metric);
  result.s_c = score_category(schema, result.achieved, e);
  try {
    result.s_d = score_domain(schema, result.achieved, e);
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::NoCells) throw;
    result.s_d = std::numeric_limits<double>::quiet_NaN();
  }

  // dL/da -> dL/dw_i = sum_j g_j (tags_ij - a_j total_i) / W -> dL/ds_i.
  const auto grad_a = loss_gradient(schema, result.achieved, e, config.metric);
  const Eigen::Map<const Vector> g(grad_a.data(), static_cast<Eigen::Index>(grad_a.size()));
  const Eigen::Map<const Vector> a(result.achieved.values.data(), static_cast<Eigen::Index>(grad_a.size()));
  const Vector grad_w = (batch.tags * g - batch.totals * a.dot(g)) / weighted_total;
  const Vector slope = weights.array() * (1.0 - weights.array()) / config.temperature;
  const Vector upstream = grad_w.cwiseProduct(slope);
  result.grads = backprop(params, batch.ratios, upstream);
  return result;
}

TrainResult train(const DenseCorpus& corpus, const MetadataSchema& schema, const DistributionTable& e,
                  const NetConfig& net_config, const TrainConfig& config) {
  config.validate();
  net_config.validate();
  if (corpus.size() < 2) fail(ErrorKind::InsufficientData, "training needs at least two samples");
  if (net_config.layer_sizes.front() != corpus.cells()) {
    fail(ErrorKind::Shape, fmt::format("network input {} does not match {} schema cells",
                                       net_config.layer_sizes.front(), corpus.cells()));
  }
  validate_expected(e, schema);

  TrainResult result{init_params(net_config), {}};
  auto state = AdamState::for_params(result.params, config.lr);
  std::mt19937_64 rng(config.shuffle_seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t n = corpus.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch + 1;
    std::size_t processed = 0;
    // Balanced split into ceil(n / K) batches so no tail batch is tiny.
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * n / batches;
      const std::size_t end = (b + 1) * n / batches;
      const std::span<const std::size_t> members(order.data() + begin, end - begin);
      try {
        const auto batch = Batch::gather(corpus, members);
        const auto step = evaluate_batch(schema, result.params, batch, e, config);
        adam_step(result.params, step.grads, state);
        stats.loss += step.loss;
        stats.s_c += step.s_c;
        stats.s_d += step.s_d;
        ++processed;
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::DegenerateBatch && err.kind() != ErrorKind::InsufficientBatch) throw;
        result.log.warnings.push_back(fmt::format("epoch {} batch {}: skipped ({})", epoch + 1, b + 1, err.what()));
      }
    }
    if (processed == 0) {
      fail(ErrorKind::TrainingFailed, fmt::format("every batch of epoch {} was degenerate", epoch + 1));
    }
    const auto count = static_cast<double>(processed);
    stats.loss /= count;
    stats.s_c /= count;
    stats.s_d /= count;
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(stats);
  }
  return result;
}

std::vector<double> score_corpus(const NetParams& params, const DenseCorpus& corpus) {
  std::vector<double> scores;
  scores.reserve(corpus.size());
  constexpr std::size_t chunk = 4096;
  std::vector<std::size_t> members;
  for (std::size_t begin = 0; begin < corpus.size(); begin += chunk) {
    const std::size_t end = std::min(corpus.size(), begin + chunk);
    members.resize(end - begin);
    std::iota(members.begin(), members.end(), begin);
    const auto batch = Batch::gather(corpus, members);
    const Vector s = score_batch(params, batch.ratios);
    scores.insert(scores.end(), s.data(), s.data() + s.size());
  }
  return scores;
}

}  // namespace metasel
