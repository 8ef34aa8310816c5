#include "metasel/net.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "metasel/error.hpp"

namespace metasel {
namespace {

void check_finite(const NetParams& params, const char* what) {
  for (const auto& layer : params.layers) {
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      fail(ErrorKind::Numeric, fmt::format("non-finite {}", what));
    }
  }
}

void check_input(const NetParams& params, const Matrix& batch) {
  if (params.layers.empty()) fail(ErrorKind::Shape, "network has no layers");
  if (static_cast<std::size_t>(batch.cols()) != params.input_size()) {
    fail(ErrorKind::Shape,
         fmt::format("input width {} does not match network input {}", batch.cols(), params.input_size()));
  }
}

}  // namespace

NetConfig NetConfig::standard(std::size_t inputs, std::uint64_t seed) {
  return NetConfig{{inputs, 128, 128, 1}, seed};
}

void NetConfig::validate() const {
  if (layer_sizes.size() < 3) fail(ErrorKind::InvalidConfig, "network needs at least one hidden layer");
  if (layer_sizes.back() != 1) fail(ErrorKind::InvalidConfig, "network output must be a single unit");
  for (const auto size : layer_sizes) {
    if (size == 0) fail(ErrorKind::InvalidConfig, "layer sizes must be positive");
  }
}

std::size_t NetParams::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers) count += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  return count;
}

bool NetParams::operator==(const NetParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& x = layers[l];
    const auto& y = other.layers[l];
    if (x.weights.rows() != y.weights.rows() || x.weights.cols() != y.weights.cols()) return false;
    if (x.weights != y.weights || x.bias != y.bias) return false;
  }
  return true;
}

NetParams zeros_like(const NetParams& params) {
  NetParams out;
  for (const auto& layer : params.layers) {
    out.layers.push_back({Matrix::Zero(layer.weights.rows(), layer.weights.cols()), Vector::Zero(layer.bias.size())});
  }
  return out;
}

NetParams init_params(const NetConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.init_seed);
  NetParams params;
  for (std::size_t l = 0; l + 1 < config.layer_sizes.size(); ++l) {
    const auto fan_in = config.layer_sizes[l];
    const auto fan_out = config.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> draw(-limit, limit);
    Layer layer{Matrix(fan_in, fan_out), Vector::Zero(static_cast<Eigen::Index>(fan_out))};
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = draw(rng);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Vector score_batch(const NetParams& params, const Matrix& batch) {
  check_input(params, batch);
  Matrix activations = batch;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Matrix next = activations * layer.weights;
    next.rowwise() += layer.bias.transpose();
    if (l + 1 < params.layers.size()) next = next.cwiseMax(0.0);
    activations = std::move(next);
  }
  Vector scores = activations.col(0);
  if (!scores.allFinite()) fail(ErrorKind::Numeric, "network produced a non-finite score");
  return scores;
}

NetGrads backprop(const NetParams& params, const Matrix& batch, const Vector& upstream) {
  check_input(params, batch);
  if (upstream.size() != batch.rows()) {
    fail(ErrorKind::Shape, fmt::format("{} upstream gradients for a batch of {}", upstream.size(), batch.rows()));
  }
  const std::size_t depth = params.layers.size();
  // inputs[l] is the input to layer l; the last entry is unused.
  std::vector<Matrix> inputs;
  inputs.reserve(depth);
  inputs.push_back(batch);
  for (std::size_t l = 0; l + 1 < depth; ++l) {
    Matrix next = inputs.back() * params.layers[l].weights;
    next.rowwise() += params.layers[l].bias.transpose();
    inputs.push_back(next.cwiseMax(0.0));
  }

  NetGrads grads = zeros_like(params);
  Matrix delta = upstream;  // dL/d(pre-activation) of the output layer, batch x 1
  for (std::size_t l = depth; l-- > 0;) {
    grads.layers[l].weights.noalias() = inputs[l].transpose() * delta;
    grads.layers[l].bias = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix back = delta * params.layers[l].weights.transpose();
    // relu mask: the stored activation is positive exactly where the unit was active
    delta = back.cwiseProduct((inputs[l].array() > 0.0).cast<double>().matrix());
  }
  check_finite(grads, "gradient");
  return grads;
}

AdamState AdamState::for_params(const NetParams& params, double lr) {
  AdamState state;
  state.lr = lr;
  state.first_moment = zeros_like(params);
  state.second_moment = zeros_like(params);
  return state;
}

void adam_step(NetParams& params, const NetGrads& grads, AdamState& state) {
  if (grads.layers.size() != params.layers.size() || state.first_moment.layers.size() != params.layers.size()) {
    fail(ErrorKind::Shape, "optimizer state does not match parameters");
  }
  check_finite(grads, "gradient passed to the optimizer");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    theta.array() -= state.lr * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + state.epsilon);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    const auto& g = grads.layers[l];
    if (g.weights.rows() != layer.weights.rows() || g.weights.cols() != layer.weights.cols() ||
        g.bias.size() != layer.bias.size()) {
      fail(ErrorKind::Shape, fmt::format("gradient shape mismatch in layer {}", l));
    }
    update(layer.weights, g.weights, state.first_moment.layers[l].weights, state.second_moment.layers[l].weights);
    update(layer.bias, g.bias, state.first_moment.layers[l].bias, state.second_moment.layers[l].bias);
  }
}

nlohmann::json params_to_json(const NetConfig& config, const NetParams& params) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : params.layers) {
    std::vector<double> weights(layer.weights.data(), layer.weights.data() + layer.weights.size());
    std::vector<double> bias(layer.bias.data(), layer.bias.data() + layer.bias.size());
    layers.push_back({{"rows", layer.weights.rows()}, {"cols", layer.weights.cols()},
                      {"weights", weights}, {"bias", bias}});
  }
  return {{"config", {{"layer_sizes", config.layer_sizes},
                      {"hidden_activation", "relu"},
                      {"init_seed", config.init_seed}}},
          {"layers", layers}};
}

NetParams params_from_json(const nlohmann::json& doc, NetConfig* config_out) {
  try {
    NetConfig config;
    config.layer_sizes = doc.at("config").at("layer_sizes").get<std::vector<std::size_t>>();
    config.init_seed = doc.at("config").at("init_seed").get<std::uint64_t>();
    config.validate();
    if (doc.at("config").value("hidden_activation", "relu") != "relu") {
      fail(ErrorKind::Parse, "only relu hidden activation is supported");
    }
    const auto& layers = doc.at("layers");
    if (layers.size() + 1 != config.layer_sizes.size()) fail(ErrorKind::Shape, "checkpoint layer count mismatch");
    NetParams params;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto rows = layers[l].at("rows").get<std::size_t>();
      const auto cols = layers[l].at("cols").get<std::size_t>();
      const auto weights = layers[l].at("weights").get<std::vector<double>>();
      const auto bias = layers[l].at("bias").get<std::vector<double>>();
      if (rows != config.layer_sizes[l] || cols != config.layer_sizes[l + 1] || weights.size() != rows * cols ||
          bias.size() != cols) {
        fail(ErrorKind::Shape, fmt::format("checkpoint layer {} has inconsistent shape", l));
      }
      Layer layer{Matrix(rows, cols), Vector(static_cast<Eigen::Index>(cols))};
      std::copy(weights.begin(), weights.end(), layer.weights.data());
      std::copy(bias.begin(), bias.end(), layer.bias.data());
      params.layers.push_back(std::move(layer));
    }
    check_finite(params, "checkpoint parameter");
    if (config_out) *config_out = config;
    return params;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, fmt::format("checkpoint: {}", e.what()));
  }
}

}  // namespace metasel
