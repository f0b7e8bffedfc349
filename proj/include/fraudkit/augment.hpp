#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fraudkit/data.hpp"
#include "fraudkit/neural.hpp"
#include "json.hpp"

// GAN-based minority oversampling.
namespace fraudkit::augment {

enum class GanVariant { kVgan, kWgan };

std::string variant_name(GanVariant v);
GanVariant parse_variant(const std::string& name);

struct GanSpec {
  GanVariant variant = GanVariant::kVgan;
  std::size_t latent_dim = 8;
  neural::NetworkSpec discriminator;  // the critic for wgan
  neural::NetworkSpec generator;
  // One epoch is one alternating round: a discriminator phase (critic_steps
  // updates for wgan, one for vgan) then one generator update, each on a
  // mini-batch of batch_size rows.
  neural::TrainConfig train;
  std::size_t critic_steps = 5;

  void validate(std::size_t feature_count) const;
  nlohmann::json to_json() const;
  static GanSpec from_json(const nlohmann::json& j);
};

// Discriminator hidden widths: vgan 128-64-32-8, wgan 256-128-64-32, all
// leaky ReLU, 10,000 epochs. The generator mirrors the hidden widths in
// reverse and ends in a logistic layer of feature_count units.
GanSpec default_gan_spec(GanVariant variant, std::size_t feature_count);

struct Gan {
  GanSpec spec;
  neural::Network discriminator;
  neural::Network generator;
  std::vector<double> discriminator_loss;  // per epoch
  std::vector<double> generator_loss;      // per epoch
};

// Called after every epoch with the 1-based epoch number.
using EpochHook = std::function<void(std::size_t epoch, const Gan& gan)>;

// `minority` rows must lie in [0,1]^d; at least two rows.
Gan train_gan(const Matrix& minority, const GanSpec& spec, const EpochHook& hook = {});

// Generator output on standard-normal latents, clamped to [0,1].
Matrix sample_synthetic(const Gan& gan, std::size_t n, std::uint64_t seed);

nlohmann::json to_json(const Gan& gan);
Gan gan_from_json(const nlohmann::json& j);

// Balancer front-end: fits a GAN on the minority rows and appends enough
// synthetic rows to reach target_ratio. One-hot blocks are re-projected.
data::Dataset gan_oversample(const data::Dataset& data, const GanSpec& spec,
                             double target_ratio, std::uint64_t seed);

}  // namespace fraudkit::augment
