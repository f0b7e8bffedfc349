#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fraudkit/types.hpp"
#include "json.hpp"

// A small dense feed-forward engine: enough for the MLP classifier, the two
// GANs and the VAE detector.
namespace fraudkit::neural {

enum class Activation { kRelu, kLeakyRelu, kTanh, kLogistic, kLinear };
enum class Loss { kBinaryCrossEntropy, kMse, kWassersteinCritic };
enum class Optimizer { kSgd, kAdam };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);
std::string loss_name(Loss l);
Loss parse_loss(const std::string& name);
std::string optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

struct LayerSpec {
  std::size_t width = 1;
  Activation activation = Activation::kLinear;
};

struct NetworkSpec {
  std::size_t input_dim = 1;
  std::vector<LayerSpec> layers;
  Loss loss = Loss::kMse;
  double leaky_slope = 0.2;

  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().width; }
  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);
};

struct TrainConfig {
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::optional<double> weight_clip;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct Layer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::kLinear;
};

struct Network {
  NetworkSpec spec;
  std::vector<Layer> layers;

  std::size_t parameter_count() const;
  double max_abs_parameter() const;
};

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
Network init_network(const NetworkSpec& spec, std::uint64_t seed);

Matrix forward(const Network& net, const Matrix& batch);

// Everything backward() needs from a forward pass.
struct ForwardTrace {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // affine output of each layer
  Matrix output;
};
ForwardTrace forward_trace(const Network& net, const Matrix& batch);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> bias;
};

// Backpropagates d_output (dL/d output). When `wrt_preactivation` is set,
// d_output is already dL/d(pre-activation) of the last layer. `d_input`,
// when non-null, receives dL/d(batch).
Gradients backward(const Network& net, const ForwardTrace& trace, const Matrix& d_output,
                   bool wrt_preactivation = false, Matrix* d_input = nullptr);

// Mean loss over the batch. Targets: probabilities for BCE, values for MSE,
// +1 (real) / -1 (fake) for the Wasserstein critic.
double loss_value(const Network& net, const ForwardTrace& trace, const Matrix& targets);

struct LossGradient {
  Matrix grad;
  bool wrt_preactivation = false;
};
LossGradient loss_gradient(const Network& net, const ForwardTrace& trace, const Matrix& targets);

class OptimizerState {
 public:
  OptimizerState(const Network& net, const TrainConfig& cfg);
  // One update; applies weight clipping when configured.
  void step(Network& net, const Gradients& grads);

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_w_, v_w_;
  std::vector<Vector> m_b_, v_b_;
};

void clip_parameters(Network& net, double c);

struct TrainResult {
  std::vector<double> loss_history;  // one entry per epoch
};

// Mini-batch training on the network's own loss. Throws ModelError when the
// loss turns non-finite.
TrainResult train(Network& net, const Matrix& inputs, const Matrix& targets,
                  const TrainConfig& cfg);

// Flat parameter views, layer by layer: weights (row-major) then bias.
Vector flatten(const Network& net);
void unflatten(Network& net, const Vector& params);
Vector flatten(const Gradients& grads);

nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);

}  // namespace fraudkit::neural
