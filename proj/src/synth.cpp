#include "fraudkit/synth.hpp"

#include <algorithm>
#include <fstream>
#include <random>

namespace fraudkit::synth {

void SynthOptions::validate() const {
  if (rows < 20) throw ConfigError("synth: rows must be at least 20");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) {
    throw ConfigError("synth: positive_fraction must lie in (0,1)");
  }
  if (numeric_features < 1) throw ConfigError("synth: need at least one numeric feature");
  if (!(difficulty >= 0.0 && difficulty <= 1.0)) {
    throw ConfigError("synth: difficulty must lie in [0,1]");
  }
  const auto positives = static_cast<std::size_t>(
      round_half_up(static_cast<double>(rows) * positive_fraction));
  if (positives == 0 || positives == rows) {
    throw ConfigError("synth: positive_fraction leaves a class empty");
  }
}

data::Dataset synthesize(const SynthOptions& options) {
  options.validate();
  const std::size_t n = options.rows;
  const std::size_t d = options.numeric_features;
  const auto positives = static_cast<std::size_t>(
      round_half_up(static_cast<double>(n) * options.positive_fraction));

  std::vector<data::FeatureSpec> features;
  for (std::size_t j = 0; j < d; ++j) {
    data::FeatureSpec f;
    f.name = "x" + std::to_string(j + 1);
    features.push_back(std::move(f));
  }
  data::FeatureSpec channel;
  channel.name = "channel";
  channel.kind = data::FeatureKind::kCategorical;
  channel.categories = {"type A", "type B", "type C"};
  features.push_back(channel);

  std::mt19937_64 rng(options.seed);
  Labels labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  const double separation = 8.0 * (1.0 - options.difficulty);
  const double mix = options.difficulty;
  const std::vector<double> negative_channel = {0.6, 0.3, 0.1};
  const std::vector<double> positive_channel = {0.1, 0.3, 0.6};
  std::normal_distribution<double> noise(0.0, 1.0);

  Matrix values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d + 1));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const bool pos = labels[i] == 1;
    for (std::size_t j = 0; j < d; ++j) {
      values(r, static_cast<Eigen::Index>(j)) = noise(rng) + (pos ? separation : 0.0);
    }
    const auto& bias = pos ? positive_channel : negative_channel;
    std::vector<double> w(3);
    for (std::size_t c = 0; c < 3; ++c) w[c] = (1.0 - mix) * bias[c] + mix / 3.0;
    std::discrete_distribution<int> pick(w.begin(), w.end());
    values(r, static_cast<Eigen::Index>(d)) = pick(rng);
  }

  data::Dataset out;
  out.schema = data::FeatureSchema(std::move(features));
  out.values = std::move(values);
  out.labels = std::move(labels);
  return out;
}

void write_dataset(const std::filesystem::path& dir, const data::Dataset& data) {
  std::filesystem::create_directories(dir);
  data::write_csv(dir / "data.csv", data, "label");
  std::ofstream schema(dir / "schema.json", std::ios::binary);
  if (!schema) throw DataError("synth: cannot write " + (dir / "schema.json").string());
  schema << data.schema.to_json().dump(2) << "\n";
}

}  // namespace fraudkit::synth
