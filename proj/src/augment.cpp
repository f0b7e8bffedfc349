#include "fraudkit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fraudkit/resample.hpp"

namespace fraudkit::augment {

using neural::Activation;
using neural::Loss;
using neural::Network;

namespace {

Matrix latent_batch(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  return z;
}

Matrix real_batch(const Matrix& data, std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
  Matrix out(static_cast<Eigen::Index>(n), data.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = data.row(pick(rng));
  return out;
}

void check_finite(double loss, std::size_t epoch, const char* who) {
  if (!std::isfinite(loss)) {
    throw ModelError(std::string("gan: non-finite ") + who + " loss at epoch " +
                     std::to_string(epoch));
  }
}

}  // namespace

std::string variant_name(GanVariant v) { return v == GanVariant::kVgan ? "vgan" : "wgan"; }

GanVariant parse_variant(const std::string& name) {
  if (name == "vgan") return GanVariant::kVgan;
  if (name == "wgan") return GanVariant::kWgan;
  throw ConfigError("unknown GAN variant '" + name + "'");
}

void GanSpec::validate(std::size_t feature_count) const {
  discriminator.validate();
  generator.validate();
  train.validate();
  if (latent_dim == 0) throw ConfigError("gan: latent_dim must be positive");
  if (critic_steps == 0) throw ConfigError("gan: critic_steps must be positive");
  if (generator.input_dim != latent_dim) throw ConfigError("gan: generator input != latent_dim");
  if (generator.output_dim() != feature_count || discriminator.input_dim != feature_count) {
    throw ConfigError("gan: network widths do not match the feature count");
  }
  if (discriminator.output_dim() != 1) throw ConfigError("gan: discriminator must output 1 unit");
  const auto head = discriminator.layers.back().activation;
  if (variant == GanVariant::kVgan && head != Activation::kLogistic) {
    throw ConfigError("gan: vgan discriminator needs a logistic head");
  }
  if (variant == GanVariant::kWgan && head != Activation::kLinear) {
    throw ConfigError("gan: wgan critic needs a linear head");
  }
}

nlohmann::json GanSpec::to_json() const {
  return {{"variant", variant_name(variant)},     {"latent_dim", latent_dim},
          {"discriminator", discriminator.to_json()}, {"generator", generator.to_json()},
          {"train", train.to_json()},             {"critic_steps", critic_steps}};
}

GanSpec GanSpec::from_json(const nlohmann::json& j) {
  GanSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.latent_dim = j.at("latent_dim").get<std::size_t>();
  s.discriminator = neural::NetworkSpec::from_json(j.at("discriminator"));
  s.generator = neural::NetworkSpec::from_json(j.at("generator"));
  s.train = neural::TrainConfig::from_json(j.at("train"));
  s.critic_steps = j.value("critic_steps", std::size_t{5});
  return s;
}

GanSpec default_gan_spec(GanVariant variant, std::size_t feature_count) {
  if (feature_count == 0) throw ConfigError("gan: feature_count must be positive");
  GanSpec spec;
  spec.variant = variant;
  const std::vector<std::size_t> hidden = variant == GanVariant::kVgan
                                              ? std::vector<std::size_t>{128, 64, 32, 8}
                                              : std::vector<std::size_t>{256, 128, 64, 32};
  spec.discriminator.input_dim = feature_count;
  for (auto w : hidden) spec.discriminator.layers.push_back({w, Activation::kLeakyRelu});
  if (variant == GanVariant::kVgan) {
    spec.discriminator.layers.push_back({1, Activation::kLogistic});
    spec.discriminator.loss = Loss::kBinaryCrossEntropy;
  } else {
    spec.discriminator.layers.push_back({1, Activation::kLinear});
    spec.discriminator.loss = Loss::kWassersteinCritic;
  }

  spec.generator.input_dim = spec.latent_dim;
  for (auto it = hidden.rbegin(); it != hidden.rend(); ++it) {
    spec.generator.layers.push_back({*it, Activation::kLeakyRelu});
  }
  spec.generator.layers.push_back({feature_count, Activation::kLogistic});
  spec.generator.loss = Loss::kMse;  // unused; the generator trains through D

  spec.train.optimizer = neural::Optimizer::kAdam;
  spec.train.epochs = 10'000;
  spec.train.batch_size = 64;
  if (variant == GanVariant::kVgan) {
    spec.train.learning_rate = 2e-4;
  } else {
    spec.train.learning_rate = 1e-4;
    spec.train.weight_clip = 0.01;
  }
  return spec;
}

Gan train_gan(const Matrix& minority, const GanSpec& spec, const EpochHook& hook) {
  const auto d = static_cast<std::size_t>(minority.cols());
  spec.validate(d);
  if (minority.rows() < 2) throw DataError("gan: need at least 2 minority rows");
  if (minority.size() && (minority.minCoeff() < 0.0 || minority.maxCoeff() > 1.0)) {
    throw DataError("gan: minority rows must lie in [0,1]");
  }

  Gan gan;
  gan.spec = spec;
  gan.discriminator = neural::init_network(spec.discriminator, derive_seed(spec.train.seed, 1));
  gan.generator = neural::init_network(spec.generator, derive_seed(spec.train.seed, 2));

  neural::TrainConfig d_cfg = spec.train;
  neural::TrainConfig g_cfg = spec.train;
  g_cfg.weight_clip.reset();
  if (spec.variant == GanVariant::kVgan) d_cfg.weight_clip.reset();
  neural::OptimizerState d_opt(gan.discriminator, d_cfg);
  neural::OptimizerState g_opt(gan.generator, g_cfg);
  if (d_cfg.weight_clip) neural::clip_parameters(gan.discriminator, *d_cfg.weight_clip);

  std::mt19937_64 rng(derive_seed(spec.train.seed, 3));
  const std::size_t m = spec.train.batch_size;
  const bool wgan = spec.variant == GanVariant::kWgan;
  const std::size_t d_steps = wgan ? spec.critic_steps : 1;

  // real rows first, then fake rows
  Matrix d_targets(static_cast<Eigen::Index>(2 * m), 1);
  d_targets.topRows(static_cast<Eigen::Index>(m)).setOnes();
  d_targets.bottomRows(static_cast<Eigen::Index>(m)).setConstant(wgan ? -1.0 : 0.0);
  const Matrix g_targets = Matrix::Ones(static_cast<Eigen::Index>(m), 1);

  gan.discriminator_loss.reserve(spec.train.epochs);
  gan.generator_loss.reserve(spec.train.epochs);
  for (std::size_t epoch = 1; epoch <= spec.train.epochs; ++epoch) {
    // Discriminator phase; the generator is frozen.
    double d_loss = 0.0;
    for (std::size_t s = 0; s < d_steps; ++s) {
      Matrix batch(static_cast<Eigen::Index>(2 * m), static_cast<Eigen::Index>(d));
      batch.topRows(static_cast<Eigen::Index>(m)) = real_batch(minority, m, rng);
      batch.bottomRows(static_cast<Eigen::Index>(m)) =
          neural::forward(gan.generator, latent_batch(m, spec.latent_dim, rng));
      const auto trace = neural::forward_trace(gan.discriminator, batch);
      d_loss = neural::loss_value(gan.discriminator, trace, d_targets);
      check_finite(d_loss, epoch, "discriminator");
      const auto lg = neural::loss_gradient(gan.discriminator, trace, d_targets);
      d_opt.step(gan.discriminator,
                 neural::backward(gan.discriminator, trace, lg.grad, lg.wrt_preactivation));
    }

    // Generator phase; the discriminator is frozen. vgan uses the
    // non-saturating objective (maximise log D(G(z))), wgan maximises the
    // critic score of the fakes.
    const auto g_trace = neural::forward_trace(gan.generator, latent_batch(m, spec.latent_dim, rng));
    const auto d_trace = neural::forward_trace(gan.discriminator, g_trace.output);
    const double g_loss = neural::loss_value(gan.discriminator, d_trace, g_targets);
    check_finite(g_loss, epoch, "generator");
    const auto lg = neural::loss_gradient(gan.discriminator, d_trace, g_targets);
    Matrix d_fake;
    neural::backward(gan.discriminator, d_trace, lg.grad, lg.wrt_preactivation, &d_fake);
    g_opt.step(gan.generator, neural::backward(gan.generator, g_trace, d_fake));

    gan.discriminator_loss.push_back(d_loss);
    gan.generator_loss.push_back(g_loss);
    if (hook) hook(epoch, gan);
  }
  return gan;
}

Matrix sample_synthetic(const Gan& gan, std::size_t n, std::uint64_t seed) {
  if (n == 0) return Matrix(0, static_cast<Eigen::Index>(gan.generator.spec.output_dim()));
  std::mt19937_64 rng(seed);
  Matrix out = neural::forward(gan.generator, latent_batch(n, gan.spec.latent_dim, rng));
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

nlohmann::json to_json(const Gan& gan) {
  return {{"format", "fraudkit.gan"},
          {"version", 1},
          {"spec", gan.spec.to_json()},
          {"discriminator", neural::to_json(gan.discriminator)},
          {"generator", neural::to_json(gan.generator)}};
}

Gan gan_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "fraudkit.gan" || j.value("version", 0) != 1) {
    throw DataError("gan: unsupported document format/version");
  }
  Gan gan;
  gan.spec = GanSpec::from_json(j.at("spec"));
  gan.discriminator = neural::network_from_json(j.at("discriminator"));
  gan.generator = neural::network_from_json(j.at("generator"));
  return gan;
}

data::Dataset gan_oversample(const data::Dataset& data, const GanSpec& spec,
                             double target_ratio, std::uint64_t seed) {
  if (data.schema.has_categoricals()) {
    throw DataError("gan: categorical features must be one-hot encoded first");
  }
  const int minority = resample::minority_label(data);
  const auto& y = data.label_vector();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == minority) rows.push_back(i);
  }
  const std::size_t count =
      resample::synthetic_count(rows.size(), y.size() - rows.size(), target_ratio);
  if (count == 0) return data;

  GanSpec s = spec;
  s.train.seed = seed;
  const Gan gan = train_gan(data.subset(rows).values, s);
  Matrix synth = sample_synthetic(gan, count, derive_seed(seed, 4));

  data::Dataset out;
  out.schema = data.schema;
  out.values.resize(data.values.rows() + synth.rows(), data.values.cols());
  out.values.topRows(data.values.rows()) = data.values;
  for (Eigen::Index i = 0; i < synth.rows(); ++i) {
    resample::project_one_hot(data.schema, synth.row(i));
  }
  out.values.bottomRows(synth.rows()) = synth;
  Labels labels = y;
  labels.insert(labels.end(), count, minority);
  out.labels = std::move(labels);
  return out;
}

}  // namespace fraudkit::augment
