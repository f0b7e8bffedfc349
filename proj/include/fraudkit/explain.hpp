#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fraudkit/classify.hpp"
#include "json.hpp"

// Shapley attributions under the interventional value function:
// v(S) = mean over background rows z of f(x_S, z_rest).
namespace fraudkit::explain {

// Batch model output, one value per row.
using ModelFn = std::function<Vector(const Matrix&)>;

// Output explained per model kind: positive fraction for dt, vote fraction
// for rf, additive score F for gbt, positive probability otherwise.
ModelFn model_output(const classify::TrainedModel& model);

inline constexpr std::size_t kMaxExactFeatures = 15;

// Exhaustive coalition enumeration; d <= 15.
Vector shapley_exact(const ModelFn& f, const RowVector& instance, const Matrix& background);

struct SamplingResult {
  Vector values;
  Vector standard_errors;
};

// Random feature orderings; each ordering's marginal contributions are
// evaluated against the whole background, so every ordering sums exactly
// to f(x) - base value.
SamplingResult shapley_sampling(const ModelFn& f, const RowVector& instance,
                                const Matrix& background, std::size_t n_permutations,
                                std::uint64_t seed);

// Exact interventional values for dt, rf and gbt by walking each tree once
// per background row; agrees with shapley_exact on model_output(model).
Vector tree_shap(const classify::TrainedModel& model, const RowVector& instance,
                 const Matrix& background);

double base_value(const ModelFn& f, const Matrix& background);

// Up to max_rows rows drawn without replacement, in original order.
Matrix sample_background(const Matrix& rows, std::size_t max_rows, std::uint64_t seed);

struct ShapMatrix {
  Matrix values;  // n x d
  double base_value = 0.0;
  std::vector<std::string> feature_names;
};

enum class Method { kExact, kSampling, kTree };

// Attributions for every row of `rows`. Sampling uses n_permutations.
ShapMatrix explain(const classify::TrainedModel& model, const Matrix& rows,
                   const Matrix& background, Method method, std::size_t n_permutations = 1000,
                   std::uint64_t seed = 0);

// Descending by mean |value|; ties keep feature order.
std::vector<std::pair<std::string, double>> global_importance(const ShapMatrix& shap);

struct SummaryRecord {
  std::string feature;
  std::size_t row = 0;
  double attribution = 0.0;
  double value = 0.0;
};

struct FeatureRange {
  std::string feature;
  double min = 0.0;
  double max = 0.0;
};

struct SummaryExport {
  std::vector<SummaryRecord> records;  // feature-major
  std::vector<FeatureRange> ranges;    // per feature
};

SummaryExport summary_export(const ShapMatrix& shap, const Matrix& instances);
void write_summary_csv(std::ostream& out, const SummaryExport& summary);
// Wide CSV: one column per feature plus base_value.
void write_shap_csv(std::ostream& out, const ShapMatrix& shap);

// Spearman rank correlation with average ranks for ties; 0 when either
// column is constant.
double spearman(const Vector& a, const Vector& b);

struct Merge {
  std::size_t left = 0;   // cluster ids: features are 0..d-1, merge k is d+k
  std::size_t right = 0;
  double redundancy = 0.0;  // average pairwise redundancy between the two
};

struct Redundancy {
  Matrix matrix;  // d x d, |spearman|, 1 = redundant, unit diagonal
  std::vector<Merge> merges;  // d-1 average-linkage merges, most redundant first

  nlohmann::json tree_json(const std::vector<std::string>& names) const;
};

// Requires d >= 2 and n >= 3.
Redundancy redundancy_distances(const ShapMatrix& shap);

}  // namespace fraudkit::explain
