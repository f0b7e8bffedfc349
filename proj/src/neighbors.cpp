#include "fraudkit/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace fraudkit::neighbors {

double squared_distance(const Eigen::Ref<const RowVector>& a,
                        const Eigen::Ref<const RowVector>& b) {
  return (a - b).squaredNorm();
}

std::vector<std::size_t> k_nearest(const Matrix& points,
                                   const Eigen::Ref<const RowVector>& query,
                                   std::size_t k,
                                   std::span<const std::size_t> candidates,
                                   std::optional<std::size_t> exclude) {
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(candidates.size());
  for (auto idx : candidates) {
    if (exclude && idx == *exclude) continue;
    scored.emplace_back(
        squared_distance(points.row(static_cast<Eigen::Index>(idx)), query), idx);
  }
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end());
  std::vector<std::size_t> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = scored[i].second;
  return out;
}

std::vector<std::size_t> k_nearest(const Matrix& points,
                                   const Eigen::Ref<const RowVector>& query,
                                   std::size_t k, std::optional<std::size_t> exclude) {
  std::vector<std::size_t> all(static_cast<std::size_t>(points.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  return k_nearest(points, query, k, all, exclude);
}

// ---------------------------------------------------------------------------

KdTree::KdTree(Matrix points, Vector weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (weights_.size() != points_.cols()) {
    throw ConfigError("KdTree: weight vector length must equal column count");
  }
  order_.resize(static_cast<std::size_t>(points_.rows()));
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!order_.empty()) build(0, order_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= kLeafSize) {
    nodes_[static_cast<std::size_t>(id)] = Node{-1, 0.0, -1, -1, begin, end};
    return id;
  }
  // split on the axis of widest weighted spread
  int axis = 0;
  double widest = -1.0;
  for (Eigen::Index c = 0; c < points_.cols(); ++c) {
    double lo = points_(static_cast<Eigen::Index>(order_[begin]), c), hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = points_(static_cast<Eigen::Index>(order_[i]), c);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double spread = (hi - lo) * weights_(c);
    if (spread > widest) {
      widest = spread;
      axis = static_cast<int>(c);
    }
  }
  if (widest <= 0.0) {
    nodes_[static_cast<std::size_t>(id)] = Node{-1, 0.0, -1, -1, begin, end};
    return id;
  }
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     return points_(static_cast<Eigen::Index>(a), axis) <
                            points_(static_cast<Eigen::Index>(b), axis);
                   });
  const double split = points_(static_cast<Eigen::Index>(order_[mid]), axis);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)] = Node{axis, split, left, right, begin, end};
  return id;
}

double KdTree::distance(std::size_t row, const Eigen::Ref<const RowVector>& q) const {
  return ((points_.row(static_cast<Eigen::Index>(row)) - q).cwiseAbs().array() *
          weights_.transpose().array())
      .sum();
}

std::vector<KdTree::Hit> KdTree::query(const Eigen::Ref<const RowVector>& q,
                                       std::size_t k) const {
  if (k == 0 || nodes_.empty()) return {};
  auto worse = [](const Hit& a, const Hit& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  };
  // max-heap on (distance, index): top is the current worst of the best k
  std::priority_queue<Hit, std::vector<Hit>, decltype(worse)> best(worse);

  auto visit = [&](auto&& self, int node_id, double lower_bound) -> void {
    if (best.size() == k && lower_bound > best.top().distance) return;
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        Hit h{order_[i], distance(order_[i], q)};
        if (best.size() < k) {
          best.push(h);
        } else if (worse(h, best.top())) {
          best.pop();
          best.push(h);
        }
      }
      return;
    }
    const double diff = q(node.axis) - node.split;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    self(self, near, lower_bound);
    // Points equal to the split value can sit on either side, so the far
    // bound is only a lower bound, never an exclusion on ties.
    self(self, far, std::max(lower_bound, std::abs(diff) * weights_(node.axis)));
  };
  visit(visit, 0, 0.0);

  std::vector<Hit> out;
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace fraudkit::neighbors
