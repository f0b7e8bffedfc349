#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fraudkit/types.hpp"

namespace fraudkit::neighbors {

double squared_distance(const Eigen::Ref<const RowVector>& a,
                        const Eigen::Ref<const RowVector>& b);

// Exhaustive k-nearest search by Euclidean distance. Candidates are row
// indices into `points`; `exclude` (typically the query's own row) is
// skipped. Result is ordered by (distance, index), so ties go to the lowest
// row index. Returns fewer than k when there are fewer candidates.
std::vector<std::size_t> k_nearest(const Matrix& points,
                                   const Eigen::Ref<const RowVector>& query,
                                   std::size_t k,
                                   std::span<const std::size_t> candidates,
                                   std::optional<std::size_t> exclude = std::nullopt);

// Same, over every row of `points`.
std::vector<std::size_t> k_nearest(const Matrix& points,
                                   const Eigen::Ref<const RowVector>& query,
                                   std::size_t k,
                                   std::optional<std::size_t> exclude = std::nullopt);

// k-d tree under a weighted L1 metric: dist(a, b) = sum_c w_c |a_c - b_c|.
class KdTree {
 public:
  KdTree(Matrix points, Vector weights);

  struct Hit {
    std::size_t index;
    double distance;
  };
  // k nearest, ordered by (distance, index).
  std::vector<Hit> query(const Eigen::Ref<const RowVector>& q, std::size_t k) const;

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }

 private:
  struct Node {
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
    std::size_t begin = 0;  // leaf range into order_
    std::size_t end = 0;
  };

  int build(std::size_t begin, std::size_t end);
  double distance(std::size_t row, const Eigen::Ref<const RowVector>& q) const;

  Matrix points_;
  Vector weights_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  static constexpr std::size_t kLeafSize = 8;
};

}  // namespace fraudkit::neighbors
