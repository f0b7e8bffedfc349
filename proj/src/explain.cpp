#include "fraudkit/explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>

#include "fraudkit/csv.hpp"

namespace fraudkit::explain {

namespace {

Matrix hybrid(const RowVector& x, const Matrix& background, std::uint64_t mask) {
  Matrix rows = background;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (mask >> j & 1U) rows.col(j).setConstant(x(j));
  }
  return rows;
}

void check_inputs(const RowVector& x, const Matrix& background) {
  if (background.rows() == 0) throw DataError("shapley: empty background");
  if (background.cols() != x.size()) throw DataError("shapley: background width mismatch");
}

// Shapley weight |S|! (d - |S| - 1)! / d!.
double coalition_weight(std::size_t s, std::size_t d) {
  return std::exp(std::lgamma(static_cast<double>(s) + 1.0) +
                  std::lgamma(static_cast<double>(d - s)) - std::lgamma(static_cast<double>(d) + 1.0));
}

struct TreeWalk {
  const tree::Tree& tree;
  const RowVector& x;
  const RowVector& z;
  std::function<double(double)> leaf_output;
  Vector& phi;
  std::vector<char> side;  // 0 unseen, 1 follows x, 2 follows z
  std::vector<std::size_t> a, b;

  void visit(std::size_t i) {
    const tree::Node& n = tree.nodes[i];
    if (n.is_leaf()) {
      const double v = leaf_output(n.value);
      const std::size_t na = a.size(), nb = b.size();
      if (v == 0.0 || na + nb == 0) return;
      const double total = std::lgamma(static_cast<double>(na + nb) + 1.0);
      if (na > 0) {
        const double w = std::exp(std::lgamma(static_cast<double>(na)) +
                                  std::lgamma(static_cast<double>(nb) + 1.0) - total);
        for (auto j : a) phi(static_cast<Eigen::Index>(j)) += v * w;
      }
      if (nb > 0) {
        const double w = std::exp(std::lgamma(static_cast<double>(na) + 1.0) +
                                  std::lgamma(static_cast<double>(nb)) - total);
        for (auto j : b) phi(static_cast<Eigen::Index>(j)) -= v * w;
      }
      return;
    }
    const auto f = static_cast<std::size_t>(n.feature);
    const auto xi = static_cast<std::size_t>(x(n.feature) <= n.threshold ? n.left : n.right);
    const auto zi = static_cast<std::size_t>(z(n.feature) <= n.threshold ? n.left : n.right);
    if (xi == zi) {
      visit(xi);
    } else if (side[f] == 1) {
      visit(xi);
    } else if (side[f] == 2) {
      visit(zi);
    } else {
      side[f] = 1;
      a.push_back(f);
      visit(xi);
      a.pop_back();
      side[f] = 2;
      b.push_back(f);
      visit(zi);
      b.pop_back();
      side[f] = 0;
    }
  }
};

}  // namespace

ModelFn model_output(const classify::TrainedModel& model) {
  if (std::holds_alternative<classify::BoostState>(model.state)) {
    return [&model](const Matrix& rows) { return classify::decision_function(model, rows); };
  }
  return [&model](const Matrix& rows) { return classify::predict_proba(model, rows); };
}

double base_value(const ModelFn& f, const Matrix& background) {
  if (background.rows() == 0) throw DataError("shapley: empty background");
  return f(background).mean();
}

Vector shapley_exact(const ModelFn& f, const RowVector& instance, const Matrix& background) {
  check_inputs(instance, background);
  const auto d = static_cast<std::size_t>(instance.size());
  if (d > kMaxExactFeatures) {
    throw ConfigError("shapley_exact: " + std::to_string(d) + " features exceeds the limit of " +
                      std::to_string(kMaxExactFeatures));
  }
  const std::uint64_t masks = std::uint64_t{1} << d;
  std::vector<double> v(masks);
  for (std::uint64_t m = 0; m < masks; ++m) v[m] = f(hybrid(instance, background, m)).mean();
  Vector phi = Vector::Zero(static_cast<Eigen::Index>(d));
  for (std::uint64_t m = 0; m < masks; ++m) {
    const auto s = static_cast<std::size_t>(std::popcount(m));
    if (s == d) continue;
    const double w = coalition_weight(s, d);
    for (std::size_t j = 0; j < d; ++j) {
      if (m >> j & 1U) continue;
      phi(static_cast<Eigen::Index>(j)) += w * (v[m | (std::uint64_t{1} << j)] - v[m]);
    }
  }
  return phi;
}

SamplingResult shapley_sampling(const ModelFn& f, const RowVector& instance,
                                const Matrix& background, std::size_t n_permutations,
                                std::uint64_t seed) {
  check_inputs(instance, background);
  if (n_permutations == 0) throw ConfigError("shapley_sampling: need at least one permutation");
  const auto d = static_cast<std::size_t>(instance.size());
  if (d > 63) throw ConfigError("shapley_sampling: at most 63 features");
  std::unordered_map<std::uint64_t, double> cache;
  auto value = [&](std::uint64_t mask) {
    auto it = cache.find(mask);
    if (it != cache.end()) return it->second;
    const double v = f(hybrid(instance, background, mask)).mean();
    if (cache.size() < (std::size_t{1} << 20)) cache.emplace(mask, v);
    return v;
  };
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(d));
  Vector sum_sq = Vector::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t p = 0; p < n_permutations; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    std::uint64_t mask = 0;
    double prev = value(0);
    for (auto j : order) {
      mask |= std::uint64_t{1} << j;
      const double cur = value(mask);
      const double m = cur - prev;
      sum(static_cast<Eigen::Index>(j)) += m;
      sum_sq(static_cast<Eigen::Index>(j)) += m * m;
      prev = cur;
    }
  }
  const double n = static_cast<double>(n_permutations);
  SamplingResult out;
  out.values = sum / n;
  out.standard_errors = Vector::Zero(static_cast<Eigen::Index>(d));
  if (n_permutations > 1) {
    for (Eigen::Index j = 0; j < out.values.size(); ++j) {
      const double var = std::max(0.0, (sum_sq(j) - n * out.values(j) * out.values(j)) / (n - 1.0));
      out.standard_errors(j) = std::sqrt(var / n);
    }
  }
  return out;
}

Vector tree_shap(const classify::TrainedModel& model, const RowVector& instance,
                 const Matrix& background) {
  check_inputs(instance, background);
  std::vector<const tree::Tree*> trees;
  std::function<double(double)> leaf;
  if (const auto* s = std::get_if<classify::TreeState>(&model.state)) {
    trees.push_back(&s->tree);
    leaf = [](double v) { return v; };
  } else if (const auto* s = std::get_if<classify::ForestState>(&model.state)) {
    for (const auto& t : s->trees) trees.push_back(&t);
    const double w = 1.0 / static_cast<double>(s->trees.size());
    leaf = [w](double v) { return v >= 0.5 ? w : 0.0; };
  } else if (const auto* s = std::get_if<classify::BoostState>(&model.state)) {
    for (const auto& t : s->trees) trees.push_back(&t);
    const double lr = s->learning_rate;
    leaf = [lr](double v) { return lr * v; };
  } else {
    throw ModelError("tree_shap: model is not tree-based");
  }
  const auto d = static_cast<std::size_t>(instance.size());
  Vector phi = Vector::Zero(instance.size());
  for (Eigen::Index r = 0; r < background.rows(); ++r) {
    const RowVector z = background.row(r);
    for (const auto* t : trees) {
      TreeWalk walk{*t, instance, z, leaf, phi, std::vector<char>(d, 0), {}, {}};
      walk.visit(0);
    }
  }
  return phi / static_cast<double>(background.rows());
}

Matrix sample_background(const Matrix& rows, std::size_t max_rows, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(rows.rows());
  if (n <= max_rows) return rows;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_rows);
  std::sort(idx.begin(), idx.end());
  Matrix out(static_cast<Eigen::Index>(max_rows), rows.cols());
  for (std::size_t i = 0; i < max_rows; ++i) out.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

ShapMatrix explain(const classify::TrainedModel& model, const Matrix& rows,
                   const Matrix& background, Method method, std::size_t n_permutations,
                   std::uint64_t seed) {
  const ModelFn f = model_output(model);
  ShapMatrix out;
  out.feature_names = model.feature_names;
  out.base_value = base_value(f, background);
  out.values.resize(rows.rows(), rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const RowVector x = rows.row(i);
    Vector phi;
    switch (method) {
      case Method::kExact: phi = shapley_exact(f, x, background); break;
      case Method::kSampling:
        phi = shapley_sampling(f, x, background, n_permutations, derive_seed(seed, static_cast<std::uint64_t>(i))).values;
        break;
      case Method::kTree: phi = tree_shap(model, x, background); break;
    }
    out.values.row(i) = phi.transpose();
  }
  return out;
}

std::vector<std::pair<std::string, double>> global_importance(const ShapMatrix& shap) {
  if (shap.values.rows() == 0) throw DataError("global_importance: empty attribution matrix");
  std::vector<std::pair<std::string, double>> out;
  for (Eigen::Index j = 0; j < shap.values.cols(); ++j) {
    // Summing sorted magnitudes makes the mean independent of row order.
    std::vector<double> mags;
    for (Eigen::Index i = 0; i < shap.values.rows(); ++i) mags.push_back(std::abs(shap.values(i, j)));
    std::sort(mags.begin(), mags.end());
    const double total = std::accumulate(mags.begin(), mags.end(), 0.0);
    out.emplace_back(shap.feature_names.at(static_cast<std::size_t>(j)),
                     total / static_cast<double>(mags.size()));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

SummaryExport summary_export(const ShapMatrix& shap, const Matrix& instances) {
  if (instances.rows() != shap.values.rows() || instances.cols() != shap.values.cols()) {
    throw DataError("summary_export: instance shape does not match the attribution matrix");
  }
  SummaryExport out;
  for (Eigen::Index j = 0; j < shap.values.cols(); ++j) {
    const std::string& name = shap.feature_names.at(static_cast<std::size_t>(j));
    for (Eigen::Index i = 0; i < shap.values.rows(); ++i) {
      out.records.push_back({name, static_cast<std::size_t>(i), shap.values(i, j), instances(i, j)});
    }
    if (shap.values.rows() > 0) {
      out.ranges.push_back({name, shap.values.col(j).minCoeff(), shap.values.col(j).maxCoeff()});
    }
  }
  return out;
}

void write_summary_csv(std::ostream& out, const SummaryExport& summary) {
  csv::write_record(out, {"feature", "row", "shap_value", "feature_value"});
  for (const auto& r : summary.records) {
    csv::write_record(out, {r.feature, std::to_string(r.row), format_double(r.attribution),
                            format_double(r.value)});
  }
}

void write_shap_csv(std::ostream& out, const ShapMatrix& shap) {
  std::vector<std::string> header = shap.feature_names;
  header.push_back("base_value");
  csv::write_record(out, header);
  for (Eigen::Index i = 0; i < shap.values.rows(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < shap.values.cols(); ++j) row.push_back(format_double(shap.values(i, j)));
    row.push_back(format_double(shap.base_value));
    csv::write_record(out, row);
  }
}

namespace {

std::vector<double> average_ranks(const Vector& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return v(static_cast<Eigen::Index>(a)) < v(static_cast<Eigen::Index>(b));
  });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v(static_cast<Eigen::Index>(idx[j + 1])) == v(static_cast<Eigen::Index>(idx[i]))) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DataError("spearman: length mismatch");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Redundancy redundancy_distances(const ShapMatrix& shap) {
  const Eigen::Index d = shap.values.cols();
  if (d < 2) throw DataError("redundancy: need at least 2 features");
  if (shap.values.rows() < 3) throw DataError("redundancy: need at least 3 rows");
  Redundancy out;
  out.matrix = Matrix::Identity(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) {
      const double r = std::abs(spearman(shap.values.col(i), shap.values.col(j)));
      out.matrix(i, j) = out.matrix(j, i) = r;
    }
  }
  struct Cluster {
    std::size_t id;
    std::vector<std::size_t> members;
  };
  std::vector<Cluster> active;
  for (Eigen::Index i = 0; i < d; ++i) active.push_back({static_cast<std::size_t>(i), {static_cast<std::size_t>(i)}});
  std::size_t next_id = static_cast<std::size_t>(d);
  while (active.size() > 1) {
    std::size_t bi = 0, bj = 1;
    double best = -1.0;
    for (std::size_t i = 0; i < active.size(); ++i) {
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        double sum = 0.0;
        for (auto p : active[i].members) {
          for (auto q : active[j].members) sum += out.matrix(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
        }
        const double avg = sum / static_cast<double>(active[i].members.size() * active[j].members.size());
        if (avg > best) {
          best = avg;
          bi = i;
          bj = j;
        }
      }
    }
    out.merges.push_back({active[bi].id, active[bj].id, best});
    Cluster merged{next_id++, active[bi].members};
    merged.members.insert(merged.members.end(), active[bj].members.begin(), active[bj].members.end());
    active.erase(active.begin() + static_cast<long>(bj));
    active[bi] = std::move(merged);
  }
  return out;
}

nlohmann::json Redundancy::tree_json(const std::vector<std::string>& names) const {
  const std::size_t d = names.size();
  auto node = [&](auto&& self, std::size_t id) -> nlohmann::json {
    if (id < d) return {{"feature", names[id]}};
    const Merge& m = merges.at(id - d);
    return {{"redundancy", m.redundancy}, {"children", {self(self, m.left), self(self, m.right)}}};
  };
  if (merges.empty()) return nlohmann::json::object();
  return node(node, d + merges.size() - 1);
}

}  // namespace fraudkit::explain
