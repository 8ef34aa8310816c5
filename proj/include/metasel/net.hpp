#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace metasel {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Fully connected scorer: relu hidden layers, one linear output unit.
struct NetConfig {
  std::vector<std::size_t> layer_sizes;
  std::uint64_t init_seed = 0;

  /// [inputs, 128, 128, 1]
  static NetConfig standard(std::size_t inputs, std::uint64_t seed);
  void validate() const;
};

struct Layer {
  Matrix weights;  // fan_in x fan_out
  Vector bias;     // fan_out
};

struct NetParams {
  std::vector<Layer> layers;

  std::size_t input_size() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weights.rows()); }
  std::size_t parameter_count() const;
  bool operator==(const NetParams& other) const;
};

/// Same shapes as NetParams; holds dLoss/dtheta.
using NetGrads = NetParams;

NetParams zeros_like(const NetParams& params);

/// Glorot-uniform weights, zero biases.
NetParams init_params(const NetConfig& config);

/// Row i of the batch is one ratio vector; returns one score per row.
Vector score_batch(const NetParams& params, const Matrix& batch);

/// Gradient of sum_i upstream[i] * score_i with respect to every parameter.
NetGrads backprop(const NetParams& params, const Matrix& batch, const Vector& upstream);

struct AdamState {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  NetParams first_moment;
  NetParams second_moment;

  static AdamState for_params(const NetParams& params, double lr = 0.01);
};

void adam_step(NetParams& params, const NetGrads& grads, AdamState& state);

nlohmann::json params_to_json(const NetConfig& config, const NetParams& params);
/// Rebuilds parameters from a checkpoint and checks them against config.
NetParams params_from_json(const nlohmann::json& doc, NetConfig* config_out = nullptr);

}  // namespace metasel
