#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fraudkit/classify.hpp"
#include "fraudkit/data.hpp"

// Counterfactual search in the model's feature space. A one-hot block (the
// columns sharing a one_hot_group) is one categorical feature.
namespace fraudkit::counterfactual {

// Positive-class probability per row; prediction is proba >= 0.5.
using ProbaFn = std::function<Vector(const Matrix&)>;
ProbaFn proba_of(const classify::TrainedModel& model);

struct CFQuery {
  RowVector instance;
  int desired_class = 1;
  std::size_t total_cfs = 4;
  // Feature (or one-hot group) names allowed to change; default: every
  // mutable feature.
  std::optional<std::vector<std::string>> features_to_vary;
  // Narrower numeric ranges; must sit inside the schema range.
  std::map<std::string, data::Range> permitted_ranges;
  double proximity_weight = 1.0;
  double diversity_weight = 3.0;
  std::uint64_t seed = 0;
};

struct CFSet {
  std::string method;
  Matrix rows;          // one counterfactual per row
  Vector outputs;       // model probability per row
  Vector distances;     // to the query instance
  std::vector<std::size_t> reference_rows;  // kdtree only

  std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
};

// Fills missing numeric ranges from the observed column min/max.
data::FeatureSchema with_observed_ranges(const data::FeatureSchema& schema, const Matrix& rows);

// Throws ConfigError for an invalid query, including one whose instance is
// already predicted as desired_class.
void validate_query(const data::FeatureSchema& schema, const ProbaFn& model, const CFQuery& query);

// Mean over features of |a - b| / schema range width (numeric) or category
// mismatch (categorical).
double distance(const data::FeatureSchema& schema, const Eigen::Ref<const RowVector>& a,
                const Eigen::Ref<const RowVector>& b);

inline constexpr std::size_t kDefaultMaxAttempts = 10'000;

// Each attempt redraws a random non-empty subset of the allowed features
// uniformly within their permitted ranges.
CFSet generate_random(const data::FeatureSchema& schema, const ProbaFn& model,
                      const CFQuery& query, std::size_t max_attempts = kDefaultMaxAttempts);

// Nearest reference rows that the model assigns desired_class and that
// respect immutability and permitted ranges. Empty when none qualify.
CFSet generate_kdtree(const data::FeatureSchema& schema, const ProbaFn& model,
                      const CFQuery& query, const Matrix& reference);

struct GeneticOptions {
  std::size_t generations = 100;
  std::size_t population = 50;
  std::size_t tournament = 3;
  double mutation_rate = 0.2;
};

// Individuals are ranked by validity first, then by the validity hinge,
// then by proximity and diversity to the population. Mutation either
// resets a gene to the instance's value or redraws it within range. The
// final set is picked greedily from every valid individual seen.
CFSet generate_genetic(const data::FeatureSchema& schema, const ProbaFn& model,
                       const CFQuery& query, const GeneticOptions& options = {});

// Fraction of a query's counterfactuals in which each feature differs
// from the instance. Throws DataError on an empty set.
std::map<std::string, double> local_importance(const data::FeatureSchema& schema,
                                               const CFQuery& query, const CFSet& set);

// Feature names as counterfactuals see them (one-hot blocks collapsed).
std::vector<std::string> feature_names(const data::FeatureSchema& schema);

// Text table: the query row with its outcome, then the counterfactuals
// with "-" in every unchanged cell.
std::string render_report(const data::FeatureSchema& schema, const CFQuery& query,
                          int original_outcome, const CFSet& set);

}  // namespace fraudkit::counterfactual
