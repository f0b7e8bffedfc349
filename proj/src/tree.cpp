#include "fraudkit/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fraudkit::tree {

namespace {

constexpr double kTieEps = 1e-12;

struct Candidate {
  int feature = -1;
  double threshold = 0.0;
  double decrease = -1.0;

  bool beats(const Candidate& other) const {
    if (other.feature < 0) return true;
    if (decrease > other.decrease + kTieEps) return true;
    if (decrease < other.decrease - kTieEps) return false;
    if (feature != other.feature) return feature < other.feature;
    return threshold < other.threshold;
  }
};

double midpoint(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return mid < hi ? mid : lo;
}

// Sweeps one feature; `score(left_count, left_stats)` returns the decrease.
template <typename Stat, typename Score>
void sweep_feature(const Matrix& x, std::span<const std::size_t> rows, int f,
                   const std::vector<Stat>& stat, Score score, Candidate& best) {
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) order.emplace_back(x(rows[k], f), k);
  std::sort(order.begin(), order.end());
  Stat acc{};
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    acc += stat[order[i].second];
    if (!(order[i].first < order[i + 1].first)) continue;
    Candidate c{f, midpoint(order[i].first, order[i + 1].first), score(i + 1, acc)};
    if (c.beats(best)) best = c;
  }
}

void partition(const Matrix& x, std::span<const std::size_t> rows, const Candidate& split,
               std::vector<std::size_t>& left, std::vector<std::size_t>& right) {
  for (auto r : rows) {
    (x(r, split.feature) <= split.threshold ? left : right).push_back(r);
  }
}

struct ClassBuilder {
  const Matrix& x;
  const Labels& y;
  const ClassificationOptions& opt;
  std::mt19937_64 rng;
  Tree tree;

  Candidate search(std::span<const std::size_t> rows, std::size_t positives) {
    const auto d = static_cast<std::size_t>(x.cols());
    std::vector<int> features(d);
    std::iota(features.begin(), features.end(), 0);
    std::size_t draw = d;
    if (opt.max_features > 0 && opt.max_features < d) {
      std::shuffle(features.begin(), features.end(), rng);
      draw = opt.max_features;
    }
    std::vector<std::size_t> stat(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) stat[k] = y[rows[k]] == 1 ? 1 : 0;
    const std::size_t n = rows.size();
    const double parent = impurity(opt.criterion, positives, n);
    auto score = [&](std::size_t nl, std::size_t pl) {
      const std::size_t nr = n - nl;
      return parent - (static_cast<double>(nl) * impurity(opt.criterion, pl, nl) +
                       static_cast<double>(nr) * impurity(opt.criterion, positives - pl, nr)) /
                          static_cast<double>(n);
    };
    Candidate best;
    for (std::size_t i = 0; i < d; ++i) {
      if (i >= draw && best.feature >= 0) break;
      sweep_feature(x, rows, features[i], stat, score, best);
    }
    return best;
  }

  int build(std::vector<std::size_t> rows, std::size_t depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    std::size_t positives = 0;
    for (auto r : rows) positives += y[r] == 1 ? 1 : 0;
    {
      Node& node = tree.nodes.back();
      node.samples = rows.size();
      node.positives = positives;
      node.value = rows.empty() ? 0.0
                                : static_cast<double>(positives) / static_cast<double>(rows.size());
    }
    const bool pure = positives == 0 || positives == rows.size();
    if (pure || depth >= opt.max_depth || rows.size() < 2) return id;
    const Candidate split = search(rows, positives);
    if (split.feature < 0) return id;
    std::vector<std::size_t> left, right;
    partition(x, rows, split, left, right);
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    Node& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }
};

struct RegStat {
  double sum = 0.0;
  std::size_t count = 0;
  RegStat& operator+=(const RegStat& o) {
    sum += o.sum;
    count += o.count;
    return *this;
  }
};

struct RegBuilder {
  const Matrix& x;
  const Vector& target;
  const Vector& hessian;
  std::size_t max_depth;
  Tree tree;

  int build(std::vector<std::size_t> rows, std::size_t depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0, hsum = 0.0;
    for (auto r : rows) {
      sum += target(static_cast<Eigen::Index>(r));
      hsum += hessian(static_cast<Eigen::Index>(r));
    }
    {
      Node& node = tree.nodes.back();
      node.samples = rows.size();
      node.value = std::abs(hsum) < 1e-150 ? 0.0 : sum / hsum;
    }
    if (depth >= max_depth || rows.size() < 2) return id;

    std::vector<RegStat> stat(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      stat[k] = {target(static_cast<Eigen::Index>(rows[k])), 1};
    }
    const double n = static_cast<double>(rows.size());
    const double base = sum * sum / n;
    auto score = [&](std::size_t nl, const RegStat& l) {
      const double nr = n - static_cast<double>(nl);
      const double sr = sum - l.sum;
      return l.sum * l.sum / static_cast<double>(nl) + sr * sr / nr - base;
    };
    Candidate best;
    for (int f = 0; f < x.cols(); ++f) sweep_feature(x, rows, f, stat, score, best);
    if (best.feature < 0 || best.decrease <= kTieEps * std::max(1.0, base)) return id;

    std::vector<std::size_t> left, right;
    partition(x, rows, best, left, right);
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    Node& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return id;
  }
};

}  // namespace

std::size_t Tree::leaf_of(const Eigen::Ref<const RowVector>& row) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const Node& n = nodes[i];
    i = static_cast<std::size_t>(row(n.feature) <= n.threshold ? n.left : n.right);
  }
  return i;
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> depth(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, depth[i]);
    if (!nodes[i].is_leaf()) {
      depth[static_cast<std::size_t>(nodes[i].left)] = depth[i] + 1;
      depth[static_cast<std::size_t>(nodes[i].right)] = depth[i] + 1;
    }
  }
  return best;
}

double impurity(Criterion c, std::size_t positives, std::size_t total) {
  if (total == 0) return 0.0;
  const double p = static_cast<double>(positives) / static_cast<double>(total);
  const double q = 1.0 - p;
  if (c == Criterion::kGini) return 1.0 - p * p - q * q;
  double h = 0.0;
  if (p > 0.0) h -= p * std::log2(p);
  if (q > 0.0) h -= q * std::log2(q);
  return h;
}

Tree fit_classifier(const Matrix& x, const Labels& y, std::span<const std::size_t> rows,
                    const ClassificationOptions& options) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw DataError("tree: label count does not match row count");
  }
  if (rows.empty()) throw DataError("tree: no training rows");
  ClassBuilder b{x, y, options, std::mt19937_64(options.seed), {}};
  b.build(std::vector<std::size_t>(rows.begin(), rows.end()), 0);
  return std::move(b.tree);
}

std::optional<Split> best_split(const Matrix& x, const Labels& y,
                                std::span<const std::size_t> rows, Criterion c) {
  ClassificationOptions opt;
  opt.criterion = c;
  ClassBuilder b{x, y, opt, std::mt19937_64(0), {}};
  std::size_t positives = 0;
  for (auto r : rows) positives += y[r] == 1 ? 1 : 0;
  const Candidate best = b.search(rows, positives);
  if (best.feature < 0) return std::nullopt;
  return Split{best.feature, best.threshold, best.decrease};
}

Tree fit_regressor(const Matrix& x, const Vector& target, const Vector& hessian,
                   std::span<const std::size_t> rows, std::size_t max_depth) {
  if (target.size() != x.rows() || hessian.size() != x.rows()) {
    throw DataError("tree: target size does not match row count");
  }
  if (rows.empty()) throw DataError("tree: no training rows");
  RegBuilder b{x, target, hessian, max_depth, {}};
  b.build(std::vector<std::size_t>(rows.begin(), rows.end()), 0);
  return std::move(b.tree);
}

nlohmann::json to_json(const Tree& t) {
  auto node_json = [&](auto&& self, std::size_t i) -> nlohmann::json {
    const Node& n = t.nodes[i];
    nlohmann::json j = {{"value", format_double(n.value)},
                        {"samples", n.samples},
                        {"positives", n.positives}};
    if (!n.is_leaf()) {
      j["feature"] = n.feature;
      j["threshold"] = format_double(n.threshold);
      j["left"] = self(self, static_cast<std::size_t>(n.left));
      j["right"] = self(self, static_cast<std::size_t>(n.right));
    }
    return j;
  };
  return t.nodes.empty() ? nlohmann::json(nullptr) : node_json(node_json, 0);
}

Tree tree_from_json(const nlohmann::json& j) {
  Tree t;
  auto read = [&](auto&& self, const nlohmann::json& jn) -> int {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    Node n;
    n.value = std::stod(jn.at("value").get<std::string>());
    n.samples = jn.at("samples").get<std::size_t>();
    n.positives = jn.value("positives", std::size_t{0});
    if (jn.contains("feature")) {
      n.feature = jn.at("feature").get<int>();
      n.threshold = std::stod(jn.at("threshold").get<std::string>());
      n.left = self(self, jn.at("left"));
      n.right = self(self, jn.at("right"));
    }
    t.nodes[static_cast<std::size_t>(id)] = n;
    return id;
  };
  if (j.is_null()) throw DataError("tree: empty tree document");
  read(read, j);
  return t;
}

}  // namespace fraudkit::tree
