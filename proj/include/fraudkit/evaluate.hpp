#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fraudkit/classify.hpp"
#include "fraudkit/data.hpp"

namespace fraudkit::evaluate {

// Label 1 is the positive (fraud) class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(const Labels& labels, const Labels& predictions);

// TP / (TP + FN); throws DataError when no positives were scored.
double sensitivity(const ConfusionMatrix& cm);
// TN / (TN + FP); throws DataError when no negatives were scored.
double specificity(const ConfusionMatrix& cm);
// (sensitivity + specificity) / 2 of hard predictions, i.e. balanced
// accuracy. This is not the area under a ROC curve.
double auc(const ConfusionMatrix& cm);
double auc(double sensitivity, double specificity);

struct Metrics {
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};
Metrics metrics(const ConfusionMatrix& cm);

struct Fold {
  std::vector<std::size_t> train;       // sorted
  std::vector<std::size_t> validation;  // sorted
};

// Each class is shuffled and dealt round-robin onto the folds, continuing
// the deal where the previous class stopped, so fold sizes differ by at
// most one. Requires 2 <= k <= n.
std::vector<Fold> stratified_kfold(const Labels& labels, std::size_t k, std::uint64_t seed);

// Applied to each fold's training part before fitting (e.g. balancing).
// The validation part is never passed through it.
using TrainPrep = std::function<data::Dataset(const data::Dataset& train, std::size_t fold)>;

struct CvResult {
  std::vector<Metrics> folds;
  Metrics mean;
};

// Every class needs at least k rows so each validation fold scores both.
CvResult cross_validate(const classify::ClassifierConfig& config, const data::Dataset& data,
                        std::size_t k, std::uint64_t seed, const TrainPrep& prep = {});

// Cartesian product in grid order; the last parameter varies fastest.
std::vector<classify::Params> expand_grid(const classify::Grid& grid);

struct GridEntry {
  classify::ClassifierConfig config;
  std::optional<CvResult> result;
  std::string error;  // set when the config failed
};

struct GridResult {
  std::vector<GridEntry> entries;  // one per grid point, in grid order
  std::size_t winner = 0;          // max mean auc; earliest wins ties

  const GridEntry& best() const { return entries.at(winner); }
};

// Failing configs are recorded and skipped; throws ModelError if all fail.
GridResult grid_search(classify::Kind kind, const classify::Grid& grid, const data::Dataset& data,
                       std::size_t k, std::uint64_t seed, const TrainPrep& prep = {});

struct TTest {
  double t = 0.0;
  double p = 1.0;  // two-sided
  std::size_t df = 0;
};

// Paired two-sided t-test on a - b. Throws DataError on unequal or short
// inputs and when the differences have zero variance.
TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
// Student t CDF with df degrees of freedom.
double student_t_cdf(double t, double df);

}  // namespace fraudkit::evaluate
