#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fraudkit/types.hpp"
#include "json.hpp"

// Binary decision trees stored as flat node arrays: CART classification
// trees and least-squares regression trees for boosting.
namespace fraudkit::tree {

enum class Criterion { kGini, kEntropy };

struct Node {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left iff x[feature] <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // classification: positive fraction; regression: leaf output
  std::size_t samples = 0;
  std::size_t positives = 0;  // classification trees only

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<Node> nodes;  // nodes[0] is the root

  std::size_t leaf_of(const Eigen::Ref<const RowVector>& row) const;
  double predict(const Eigen::Ref<const RowVector>& row) const {
    return nodes[leaf_of(row)].value;
  }
  std::size_t depth() const;
};

struct ClassificationOptions {
  Criterion criterion = Criterion::kGini;
  std::size_t max_depth = 5;
  // Features drawn per split; 0 = all. When none of the drawn features can
  // split the node, the remaining ones are tried.
  std::size_t max_features = 0;
  std::uint64_t seed = 0;
};

// CART. A node is split while it is impure, below max_depth and some
// feature has two distinct values, even when the best impurity decrease is
// zero. Thresholds are midpoints between consecutive distinct values. Ties
// in decrease go to the lowest feature index, then the lowest threshold.
Tree fit_classifier(const Matrix& x, const Labels& y, std::span<const std::size_t> rows,
                    const ClassificationOptions& options);

double impurity(Criterion c, std::size_t positives, std::size_t total);

// The winning root split by exhaustive search; exposed for testing.
struct Split {
  int feature = -1;
  double threshold = 0.0;
  double decrease = 0.0;
};
std::optional<Split> best_split(const Matrix& x, const Labels& y,
                                std::span<const std::size_t> rows, Criterion c);

// Least-squares regression tree on `target`; leaf value is
// sum(target) / sum(hessian) over the leaf rows (a Newton step).
Tree fit_regressor(const Matrix& x, const Vector& target, const Vector& hessian,
                   std::span<const std::size_t> rows, std::size_t max_depth);

nlohmann::json to_json(const Tree& t);
Tree tree_from_json(const nlohmann::json& j);

}  // namespace fraudkit::tree
