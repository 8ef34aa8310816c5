#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasel/metadata.hpp"
#include "metasel/net.hpp"

namespace metasel {

struct MetricChoice {
  enum class Kind { Category, Domain, Blend };
  Kind kind = Kind::Category;
  /// Weight of the category term when kind == Blend.
  double alpha = 0.5;

  static MetricChoice parse(const std::string& text, double alpha = 0.5);
  std::string name() const;
};

struct TrainConfig {
  std::size_t epochs = 120;
  std::size_t batch_size = 1024;
  double keep_ratio = 0.2;
  MetricChoice metric;
  double temperature = 0.5;
  double lr = 0.01;
  std::uint64_t shuffle_seed = 0;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double s_c = 0.0;
  double s_d = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::vector<std::string> warnings;

  /// epoch,loss,s_c,s_d,seconds
  std::string to_csv() const;
};

struct SoftSelection {
  std::vector<double> weights;
  double threshold = 0.0;
};

/// Linear-interpolation empirical quantile, q in [0, 1].
double empirical_quantile(std::span<const double> values, double q);

/// w_i = logistic((s_i - tau) / t) with tau the (1 - rho) score quantile.
SoftSelection soft_select_weights(std::span<const double> scores, double keep_ratio, double temperature);

/// sum_i w_i tags_i / sum_i w_i total_i, all cells included.
DistributionTable soft_aggregate(std::span<const double> weights, std::span<const SampleMetadata> samples,
                                 const MetadataSchema& schema);

double loss(const MetadataSchema& schema, const DistributionTable& a, const DistributionTable& e,
            const MetricChoice& choice);

/// Subgradient of loss() with respect to a.values; zero at kinks and on the
/// saturated side of the relative-error clamp.
std::vector<double> loss_gradient(const MetadataSchema& schema, const DistributionTable& a,
                                  const DistributionTable& e, const MetricChoice& choice);

/// Dense rows of one training batch.
struct Batch {
  Matrix ratios;  // rows x M
  Matrix tags;    // rows x M, seconds
  Vector totals;  // rows

  static Batch gather(const DenseCorpus& corpus, std::span<const std::size_t> members);
};

struct BatchResult {
  double loss = 0.0;
  double s_c = 0.0;
  double s_d = 0.0;
  double threshold = 0.0;
  DistributionTable achieved;
  NetGrads grads;
};

/// Forward through scores, soft weights, soft aggregate and loss, then back
/// into the network with the threshold held constant.
BatchResult evaluate_batch(const MetadataSchema& schema, const NetParams& params, const Batch& batch,
                           const DistributionTable& e, const TrainConfig& config);

struct TrainResult {
  NetParams params;
  TrainLog log;
};

TrainResult train(const DenseCorpus& corpus, const MetadataSchema& schema, const DistributionTable& e,
                  const NetConfig& net_config, const TrainConfig& config);

/// Scores every sample of the corpus with the trained network.
std::vector<double> score_corpus(const NetParams& params, const DenseCorpus& corpus);

}  // namespace metasel
