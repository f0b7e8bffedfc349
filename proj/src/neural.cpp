#include "fraudkit/neural.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

namespace fraudkit::neural {

namespace {

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Matrix activate(Activation a, const Matrix& z, double slope) {
  switch (a) {
    case Activation::kRelu: return z.cwiseMax(0.0);
    case Activation::kLeakyRelu: return z.unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
    case Activation::kTanh: return z.array().tanh().matrix();
    case Activation::kLogistic: return z.unaryExpr([](double v) { return logistic(v); });
    case Activation::kLinear: return z;
  }
  return z;
}

// f'(z), using the cached output where it is cheaper.
Matrix derivative(Activation a, const Matrix& z, const Matrix& out, double slope) {
  switch (a) {
    case Activation::kRelu: return z.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; });
    case Activation::kLeakyRelu:
      return z.unaryExpr([slope](double v) { return v > 0 ? 1.0 : slope; });
    case Activation::kTanh: return (1.0 - out.array().square()).matrix();
    case Activation::kLogistic: return (out.array() * (1.0 - out.array())).matrix();
    case Activation::kLinear: return Matrix::Ones(z.rows(), z.cols());
  }
  return Matrix::Ones(z.rows(), z.cols());
}

template <typename Enum, std::size_t N>
Enum parse_enum(const std::string& name, const std::array<Enum, N>& values,
                std::string (*namer)(Enum), const char* what) {
  for (auto v : values) {
    if (namer(v) == name) return v;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + name + "'");
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i) arr.push_back(format_double(m.data()[i]));
  return arr;
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(format_double(v(i)));
  return arr;
}

double parse_weight(const nlohmann::json& j) {
  return j.is_string() ? std::stod(j.get<std::string>()) : j.get<double>();
}

}  // namespace

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kLogistic: return "logistic";
    case Activation::kLinear: return "linear";
  }
  return "linear";
}

Activation parse_activation(const std::string& name) {
  return parse_enum(name,
                    std::array{Activation::kRelu, Activation::kLeakyRelu, Activation::kTanh,
                               Activation::kLogistic, Activation::kLinear},
                    &activation_name, "activation");
}

std::string loss_name(Loss l) {
  switch (l) {
    case Loss::kBinaryCrossEntropy: return "binary_cross_entropy";
    case Loss::kMse: return "mse";
    case Loss::kWassersteinCritic: return "wasserstein_critic";
  }
  return "mse";
}

Loss parse_loss(const std::string& name) {
  return parse_enum(name,
                    std::array{Loss::kBinaryCrossEntropy, Loss::kMse, Loss::kWassersteinCritic},
                    &loss_name, "loss");
}

std::string optimizer_name(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& name) {
  return parse_enum(name, std::array{Optimizer::kSgd, Optimizer::kAdam}, &optimizer_name,
                    "optimizer");
}

// ---------------------------------------------------------------------------

void NetworkSpec::validate() const {
  if (input_dim == 0) throw ConfigError("network: input_dim must be positive");
  if (layers.empty()) throw ConfigError("network: at least one layer required");
  for (const auto& l : layers) {
    if (l.width == 0) throw ConfigError("network: layer widths must be positive");
  }
  if (loss == Loss::kBinaryCrossEntropy && layers.back().activation != Activation::kLogistic) {
    throw ConfigError("network: binary_cross_entropy needs a logistic output layer");
  }
}

nlohmann::json NetworkSpec::to_json() const {
  nlohmann::json ls = nlohmann::json::array();
  for (const auto& l : layers) {
    ls.push_back({{"width", l.width}, {"activation", activation_name(l.activation)}});
  }
  return {{"input_dim", input_dim}, {"layers", ls}, {"loss", loss_name(loss)},
          {"leaky_slope", leaky_slope}};
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  for (const auto& l : j.at("layers")) {
    s.layers.push_back({l.at("width").get<std::size_t>(),
                        parse_activation(l.at("activation").get<std::string>())});
  }
  s.loss = parse_loss(j.at("loss").get<std::string>());
  s.leaky_slope = j.value("leaky_slope", 0.2);
  s.validate();
  return s;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be finite and non-negative");
  }
  if (epochs == 0) throw ConfigError("train: epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (weight_clip && !(*weight_clip > 0.0)) throw ConfigError("train: weight_clip must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"optimizer", optimizer_name(optimizer)},
                      {"learning_rate", learning_rate},
                      {"epochs", epochs},
                      {"batch_size", batch_size},
                      {"seed", seed}};
  if (weight_clip) j["weight_clip"] = *weight_clip;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.optimizer = parse_optimizer(j.value("optimizer", std::string("adam")));
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("weight_clip") && !j["weight_clip"].is_null()) {
    c.weight_clip = j["weight_clip"].get<double>();
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

double Network::max_abs_parameter() const {
  double m = 0.0;
  for (const auto& l : layers) {
    if (l.weights.size()) m = std::max(m, l.weights.cwiseAbs().maxCoeff());
    if (l.bias.size()) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
  }
  return m;
}

Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec = spec;
  std::mt19937_64 rng(seed);
  std::size_t fan_in = spec.input_dim;
  for (const auto& ls : spec.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + ls.width));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Layer layer;
    layer.weights.resize(static_cast<Eigen::Index>(ls.width), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = dist(rng);
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(ls.width));
    layer.activation = ls.activation;
    net.layers.push_back(std::move(layer));
    fan_in = ls.width;
  }
  return net;
}

ForwardTrace forward_trace(const Network& net, const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != net.spec.input_dim) {
    throw DataError("network: input has " + std::to_string(batch.cols()) + " columns, expected " +
                    std::to_string(net.spec.input_dim));
  }
  ForwardTrace t;
  t.inputs.reserve(net.layers.size());
  t.pre.reserve(net.layers.size());
  Matrix current = batch;
  for (const auto& layer : net.layers) {
    Matrix z = current * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    t.inputs.push_back(std::move(current));
    current = activate(layer.activation, z, net.spec.leaky_slope);
    t.pre.push_back(std::move(z));
  }
  t.output = std::move(current);
  return t;
}

Matrix forward(const Network& net, const Matrix& batch) { return forward_trace(net, batch).output; }

Gradients backward(const Network& net, const ForwardTrace& trace, const Matrix& d_output,
                   bool wrt_preactivation, Matrix* d_input) {
  const std::size_t L = net.layers.size();
  Gradients g;
  g.weights.resize(L);
  g.bias.resize(L);
  Matrix delta;
  for (std::size_t step = 0; step < L; ++step) {
    const std::size_t l = L - 1 - step;
    const auto& layer = net.layers[l];
    const Matrix& out = l + 1 < L ? trace.inputs[l + 1] : trace.output;
    const Matrix& upstream = step == 0 ? d_output : delta;
    if (step == 0 && wrt_preactivation) {
      delta = upstream;
    } else {
      delta = upstream.cwiseProduct(
          derivative(layer.activation, trace.pre[l], out, net.spec.leaky_slope));
    }
    g.weights[l] = delta.transpose() * trace.inputs[l];
    g.bias[l] = delta.colwise().sum().transpose();
    delta = delta * layer.weights;  // now dL/d(input of layer l)
  }
  if (d_input) *d_input = delta;
  return g;
}

double loss_value(const Network& net, const ForwardTrace& trace, const Matrix& targets) {
  const Matrix& a = trace.output;
  if (a.rows() != targets.rows() || a.cols() != targets.cols()) {
    throw DataError("loss: target shape does not match network output");
  }
  const double count = static_cast<double>(a.size());
  switch (net.spec.loss) {
    case Loss::kBinaryCrossEntropy: {
      const Matrix& z = trace.pre.back();
      double total = 0.0;
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double y = targets.data()[i];
        const double zi = z.data()[i];
        // -[y log s(z) + (1-y) log(1-s(z))]
        total += y * softplus(-zi) + (1.0 - y) * softplus(zi);
      }
      return total / count;
    }
    case Loss::kMse: return (a - targets).squaredNorm() / count;
    case Loss::kWassersteinCritic: return -(a.cwiseProduct(targets)).sum() / count;
  }
  return 0.0;
}

LossGradient loss_gradient(const Network& net, const ForwardTrace& trace, const Matrix& targets) {
  const Matrix& a = trace.output;
  const double count = static_cast<double>(a.size());
  switch (net.spec.loss) {
    case Loss::kBinaryCrossEntropy: return {(a - targets) / count, true};
    case Loss::kMse: return {2.0 * (a - targets) / count, false};
    case Loss::kWassersteinCritic: return {-targets / count, false};
  }
  return {};
}

// ---------------------------------------------------------------------------

OptimizerState::OptimizerState(const Network& net, const TrainConfig& cfg) : cfg_(cfg) {
  if (cfg_.optimizer == Optimizer::kAdam) {
    for (const auto& l : net.layers) {
      m_w_.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
      v_w_.push_back(Matrix::Zero(l.weights.rows(), l.weights.cols()));
      m_b_.push_back(Vector::Zero(l.bias.size()));
      v_b_.push_back(Vector::Zero(l.bias.size()));
    }
  }
}

void clip_parameters(Network& net, double c) {
  for (auto& l : net.layers) {
    l.weights = l.weights.cwiseMax(-c).cwiseMin(c);
    l.bias = l.bias.cwiseMax(-c).cwiseMin(c);
  }
}

void OptimizerState::step(Network& net, const Gradients& grads) {
  const double lr = cfg_.learning_rate;
  if (cfg_.optimizer == Optimizer::kSgd) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      net.layers[l].weights -= lr * grads.weights[l];
      net.layers[l].bias -= lr * grads.bias[l];
    }
  } else {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
      param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      update(net.layers[l].weights, m_w_[l], v_w_[l], grads.weights[l]);
      update(net.layers[l].bias, m_b_[l], v_b_[l], grads.bias[l]);
    }
  }
  if (cfg_.weight_clip) clip_parameters(net, *cfg_.weight_clip);
}

TrainResult train(Network& net, const Matrix& inputs, const Matrix& targets,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (inputs.rows() != targets.rows()) {
    throw DataError("train: inputs and targets differ in row count");
  }
  const auto n = static_cast<std::size_t>(inputs.rows());
  if (n == 0) throw DataError("train: empty training set");
  const std::size_t batch = std::min(cfg.batch_size, n);

  OptimizerState opt(net, cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  TrainResult result;
  result.loss_history.reserve(cfg.epochs);
  Matrix xb, yb;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      const auto m = static_cast<Eigen::Index>(end - start);
      xb.resize(m, inputs.cols());
      yb.resize(m, targets.cols());
      for (Eigen::Index r = 0; r < m; ++r) {
        xb.row(r) = inputs.row(order[start + static_cast<std::size_t>(r)]);
        yb.row(r) = targets.row(order[start + static_cast<std::size_t>(r)]);
      }
      const auto trace = forward_trace(net, xb);
      const double loss = loss_value(net, trace, yb);
      if (!std::isfinite(loss)) {
        throw ModelError("train: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      weighted += loss * static_cast<double>(m);
      const auto lg = loss_gradient(net, trace, yb);
      opt.step(net, backward(net, trace, lg.grad, lg.wrt_preactivation));
    }
    result.loss_history.push_back(weighted / static_cast<double>(n));
  }
  return result;
}

// ---------------------------------------------------------------------------

Vector flatten(const Network& net) {
  Vector out(static_cast<Eigen::Index>(net.parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : net.layers) {
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) out(k++) = l.weights.data()[i];
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out(k++) = l.bias(i);
  }
  return out;
}

void unflatten(Network& net, const Vector& params) {
  if (static_cast<std::size_t>(params.size()) != net.parameter_count()) {
    throw DataError("unflatten: parameter count mismatch");
  }
  Eigen::Index k = 0;
  for (auto& l : net.layers) {
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = params(k++);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = params(k++);
  }
}

Vector flatten(const Gradients& grads) {
  Eigen::Index total = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    total += grads.weights[l].size() + grads.bias[l].size();
  }
  Vector out(total);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < grads.weights[l].size(); ++i) out(k++) = grads.weights[l].data()[i];
    for (Eigen::Index i = 0; i < grads.bias[l].size(); ++i) out(k++) = grads.bias[l](i);
  }
  return out;
}

nlohmann::json to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"rows", l.weights.rows()},
                      {"cols", l.weights.cols()},
                      {"weights", matrix_to_json(l.weights)},
                      {"bias", vector_to_json(l.bias)}});
  }
  return {{"format", "fraudkit.network"}, {"version", 1}, {"spec", net.spec.to_json()},
          {"layers", layers}};
}

Network network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "fraudkit.network" || j.at("version") != 1) {
      throw DataError("network: unsupported document format/version");
    }
    Network net;
    net.spec = NetworkSpec::from_json(j.at("spec"));
    const auto& layers = j.at("layers");
    if (layers.size() != net.spec.layers.size()) throw DataError("network: layer count mismatch");
    std::size_t fan_in = net.spec.input_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& lj = layers[l];
      Layer layer;
      layer.activation = net.spec.layers[l].activation;
      const auto rows = static_cast<Eigen::Index>(net.spec.layers[l].width);
      const auto cols = static_cast<Eigen::Index>(fan_in);
      if (lj.at("rows").get<Eigen::Index>() != rows || lj.at("cols").get<Eigen::Index>() != cols ||
          lj.at("weights").size() != static_cast<std::size_t>(rows * cols) ||
          lj.at("bias").size() != static_cast<std::size_t>(rows)) {
        throw DataError("network: layer " + std::to_string(l) + " shape mismatch");
      }
      layer.weights.resize(rows, cols);
      for (Eigen::Index i = 0; i < rows * cols; ++i) {
        layer.weights.data()[i] = parse_weight(lj["weights"][static_cast<std::size_t>(i)]);
      }
      layer.bias.resize(rows);
      for (Eigen::Index i = 0; i < rows; ++i) {
        layer.bias(i) = parse_weight(lj["bias"][static_cast<std::size_t>(i)]);
      }
      net.layers.push_back(std::move(layer));
      fan_in = net.spec.layers[l].width;
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("network: malformed document: ") + e.what());
  }
}

}  // namespace fraudkit::neural
