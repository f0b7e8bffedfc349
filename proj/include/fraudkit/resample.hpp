#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fraudkit/data.hpp"
#include "json.hpp"

namespace fraudkit::resample {

enum class Method { kNone, kSmote, kSmoteEnn, kSmoteTomek, kAdasyn, kVgan, kWgan };

std::string method_name(Method m);
Method parse_method(const std::string& name);  // throws ConfigError

struct BalancerConfig {
  Method method = Method::kNone;
  std::size_t k_neighbors = 5;
  double target_ratio = 1.0;  // minority / majority after balancing
  std::size_t enn_k = 3;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static BalancerConfig from_json(const nlohmann::json& j);
};

// Minority = the rarer label; a tie counts label 1 as minority.
int minority_label(const data::Dataset& data);

// One synthetic SMOTE row: base + u * (neighbor - base).
struct SyntheticRecord {
  std::size_t base;      // row index in the input
  std::size_t neighbor;  // row index in the input
  double u;
};

struct SmoteTrace {
  data::Dataset data;
  std::vector<SyntheticRecord> synthetic;  // one per appended row, in order
};

// Number of synthetic rows needed to reach the target ratio.
std::size_t synthetic_count(std::size_t minority, std::size_t majority, double target_ratio);

SmoteTrace smote_traced(const data::Dataset& data, const BalancerConfig& cfg);
data::Dataset smote(const data::Dataset& data, const BalancerConfig& cfg);

// Rows removed by ENN: candidates of class `target_label` (default: the
// majority) whose enn_k-neighbor vote disagrees with their own label. A tied
// vote is not a disagreement.
std::vector<std::size_t> enn_removals(const data::Dataset& data, std::size_t enn_k,
                                      std::optional<int> target_label = std::nullopt);
data::Dataset enn_filter(const data::Dataset& data, std::size_t enn_k,
                         std::optional<int> target_label = std::nullopt);

// Mutual single-nearest-neighbor pairs of opposite labels, (lower, higher).
std::vector<std::pair<std::size_t, std::size_t>> tomek_links(const data::Dataset& data);
data::Dataset tomek_remove(const data::Dataset& data,
                           std::optional<int> majority = std::nullopt);

data::Dataset smote_enn(const data::Dataset& data, const BalancerConfig& cfg);
data::Dataset smote_tomek(const data::Dataset& data, const BalancerConfig& cfg);

// Hardness ratio per minority row: majority share of its k nearest neighbors
// drawn from every other row.
std::vector<double> adasyn_ratios(const data::Dataset& data, std::size_t k);
// Apportions total samples proportionally to ratios; sums to exactly total.
// Falls back to uniform when every ratio is zero.
std::vector<std::size_t> adasyn_allocation(const std::vector<double>& ratios,
                                           std::size_t total);
data::Dataset adasyn(const data::Dataset& data, const BalancerConfig& cfg);

// Snaps interpolated one-hot blocks back to a single 1 (argmax, lowest
// category on ties).
void project_one_hot(const data::FeatureSchema& schema, Eigen::Ref<RowVector> row);

}  // namespace fraudkit::resample
