#pragma once

#include <cstdint>
#include <filesystem>

#include "fraudkit/data.hpp"

// Two-class Gaussian mixture used as a stand-in transaction dataset.
namespace fraudkit::synth {

struct SynthOptions {
  std::size_t rows = 1000;
  double positive_fraction = 0.122;
  std::size_t numeric_features = 8;
  // 0: class means 8 sigma apart on every numeric feature (disjoint);
  // 1: identical class distributions.
  double difficulty = 0.5;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// Numeric features x1..xd plus one categorical feature "channel". The
// positive count is round_half_up(rows * positive_fraction) and positives
// are scattered through the row order.
data::Dataset synthesize(const SynthOptions& options);

// data.csv (label column "label") and schema.json under dir.
void write_dataset(const std::filesystem::path& dir, const data::Dataset& data);

}  // namespace fraudkit::synth
