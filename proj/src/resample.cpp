#include "fraudkit/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fraudkit/neighbors.hpp"

namespace fraudkit::resample {

using data::Dataset;

namespace {

struct ClassCounts {
  int minority;
  int majority;
  std::vector<std::size_t> minority_rows;
  std::vector<std::size_t> majority_rows;
};

ClassCounts split_classes(const Dataset& d) {
  ClassCounts c;
  c.minority = minority_label(d);
  c.majority = 1 - c.minority;
  const auto& y = d.label_vector();
  for (std::size_t i = 0; i < y.size(); ++i) {
    (y[i] == c.minority ? c.minority_rows : c.majority_rows).push_back(i);
  }
  return c;
}

void require_numeric(const Dataset& d, const char* who) {
  if (d.schema.has_categoricals()) {
    throw DataError(std::string(who) + ": categorical features must be one-hot encoded first");
  }
}

void require_smote_preconditions(const ClassCounts& c, const BalancerConfig& cfg,
                                 const char* who) {
  if (c.minority_rows.empty() || c.majority_rows.empty()) {
    throw DataError(std::string(who) + ": both classes must be present");
  }
  if (cfg.k_neighbors == 0) throw ConfigError(std::string(who) + ": k_neighbors must be positive");
  if (c.minority_rows.size() <= cfg.k_neighbors) {
    throw DataError(std::string(who) + ": minority class has " +
                    std::to_string(c.minority_rows.size()) +
                    " rows, needs more than k_neighbors=" + std::to_string(cfg.k_neighbors));
  }
}

// k nearest minority neighbors of every minority row, as input row indices.
std::vector<std::vector<std::size_t>> minority_neighbors(const Dataset& d, const ClassCounts& c,
                                                         std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(c.minority_rows.size());
  for (auto i : c.minority_rows) {
    out.push_back(neighbors::k_nearest(d.values, d.values.row(static_cast<Eigen::Index>(i)), k,
                                       c.minority_rows, i));
  }
  return out;
}

// Appends rows built from records; labels them `label`.
Dataset append_synthetic(const Dataset& d, const std::vector<SyntheticRecord>& records,
                         int label) {
  Dataset out;
  out.schema = d.schema;
  const auto n = d.values.rows();
  out.values.resize(n + static_cast<Eigen::Index>(records.size()), d.values.cols());
  out.values.topRows(n) = d.values;
  Labels y = d.label_vector();
  for (std::size_t s = 0; s < records.size(); ++s) {
    const auto& r = records[s];
    auto row = out.values.row(n + static_cast<Eigen::Index>(s));
    const auto base = d.values.row(static_cast<Eigen::Index>(r.base));
    const auto nn = d.values.row(static_cast<Eigen::Index>(r.neighbor));
    row = base + r.u * (nn - base);
    project_one_hot(d.schema, row);
    y.push_back(label);
  }
  out.labels = std::move(y);
  return out;
}

Dataset drop_rows(const Dataset& d, std::vector<std::size_t> removed) {
  std::sort(removed.begin(), removed.end());
  std::vector<std::size_t> kept;
  kept.reserve(d.rows() - removed.size());
  std::size_t r = 0;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    if (r < removed.size() && removed[r] == i) {
      ++r;
      continue;
    }
    kept.push_back(i);
  }
  return d.subset(kept);
}

int default_majority(const Dataset& d) { return 1 - minority_label(d); }

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::kNone: return "none";
    case Method::kSmote: return "smote";
    case Method::kSmoteEnn: return "smote_enn";
    case Method::kSmoteTomek: return "smote_tomek";
    case Method::kAdasyn: return "adasyn";
    case Method::kVgan: return "vgan";
    case Method::kWgan: return "wgan";
  }
  return "none";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::kNone, Method::kSmote, Method::kSmoteEnn, Method::kSmoteTomek,
                 Method::kAdasyn, Method::kVgan, Method::kWgan}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown balancing method '" + name + "'");
}

void BalancerConfig::validate() const {
  if (k_neighbors == 0) throw ConfigError("balancer: k_neighbors must be positive");
  if (enn_k == 0) throw ConfigError("balancer: enn_k must be positive");
  if (!(target_ratio > 0.0 && target_ratio <= 1.0)) {
    throw ConfigError("balancer: target_ratio must lie in (0, 1]");
  }
}

nlohmann::json BalancerConfig::to_json() const {
  return {{"method", method_name(method)}, {"k_neighbors", k_neighbors},
          {"target_ratio", target_ratio}, {"enn_k", enn_k}, {"seed", seed}};
}

BalancerConfig BalancerConfig::from_json(const nlohmann::json& j) {
  BalancerConfig c;
  try {
    c.method = parse_method(j.value("method", std::string("none")));
    c.k_neighbors = j.value("k_neighbors", c.k_neighbors);
    c.target_ratio = j.value("target_ratio", c.target_ratio);
    c.enn_k = j.value("enn_k", c.enn_k);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("balancer: ") + e.what());
  }
  c.validate();
  return c;
}

int minority_label(const Dataset& data) {
  const auto ones = data.count_label(1);
  const auto zeros = data.rows() - ones;
  return ones <= zeros ? 1 : 0;
}

void project_one_hot(const data::FeatureSchema& schema, Eigen::Ref<RowVector> row) {
  std::size_t j = 0;
  while (j < schema.size()) {
    const auto& group = schema[j].one_hot_group;
    if (group.empty()) {
      ++j;
      continue;
    }
    std::size_t end = j;
    while (end < schema.size() && schema[end].one_hot_group == group) ++end;
    std::size_t best = j;
    for (std::size_t c = j + 1; c < end; ++c) {
      if (row(static_cast<Eigen::Index>(c)) > row(static_cast<Eigen::Index>(best))) best = c;
    }
    for (std::size_t c = j; c < end; ++c) {
      row(static_cast<Eigen::Index>(c)) = c == best ? 1.0 : 0.0;
    }
    j = end;
  }
}

std::size_t synthetic_count(std::size_t minority, std::size_t majority, double target_ratio) {
  const long target = round_half_up(static_cast<double>(majority) * target_ratio);
  return target > static_cast<long>(minority) ? static_cast<std::size_t>(target) - minority : 0;
}

SmoteTrace smote_traced(const Dataset& data, const BalancerConfig& cfg) {
  cfg.validate();
  require_numeric(data, "smote");
  const auto classes = split_classes(data);
  require_smote_preconditions(classes, cfg, "smote");

  const auto nn = minority_neighbors(data, classes, cfg.k_neighbors);
  const std::size_t count =
      synthetic_count(classes.minority_rows.size(), classes.majority_rows.size(),
                      cfg.target_ratio);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_base(0, classes.minority_rows.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_nn(0, cfg.k_neighbors - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<SyntheticRecord> records;
  records.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t b = pick_base(rng);
    const std::size_t n = nn[b][pick_nn(rng)];
    records.push_back({classes.minority_rows[b], n, unit(rng)});
  }
  SmoteTrace trace{append_synthetic(data, records, classes.minority), std::move(records)};
  return trace;
}

Dataset smote(const Dataset& data, const BalancerConfig& cfg) {
  return smote_traced(data, cfg).data;
}

std::vector<std::size_t> enn_removals(const Dataset& data, std::size_t enn_k,
                                      std::optional<int> target_label) {
  if (enn_k == 0) throw ConfigError("enn: enn_k must be positive");
  if (data.rows() <= enn_k) throw DataError("enn: need more rows than enn_k");
  const auto& y = data.label_vector();
  const int target = target_label.value_or(default_majority(data));
  std::vector<std::size_t> removed;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != target) continue;
    const auto nn = neighbors::k_nearest(data.values, data.values.row(static_cast<Eigen::Index>(i)),
                                         enn_k, i);
    std::size_t same = 0;
    for (auto j : nn) same += y[j] == y[i] ? 1 : 0;
    const std::size_t other = nn.size() - same;
    if (other > same) removed.push_back(i);
  }
  return removed;
}

Dataset enn_filter(const Dataset& data, std::size_t enn_k, std::optional<int> target_label) {
  return drop_rows(data, enn_removals(data, enn_k, target_label));
}

std::vector<std::pair<std::size_t, std::size_t>> tomek_links(const Dataset& data) {
  const auto& y = data.label_vector();
  const std::size_t n = data.rows();
  std::vector<std::size_t> nearest(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto nn = neighbors::k_nearest(data.values, data.values.row(static_cast<Eigen::Index>(i)),
                                         1, i);
    nearest[i] = nn.empty() ? i : nn.front();
  }
  std::vector<std::pair<std::size_t, std::size_t>> links;
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t b = nearest[a];
    if (b > a && nearest[b] == a && y[a] != y[b]) links.emplace_back(a, b);
  }
  return links;
}

Dataset tomek_remove(const Dataset& data, std::optional<int> majority) {
  const auto& y = data.label_vector();
  if (data.count_label(0) == 0 || data.count_label(1) == 0) {
    throw DataError("tomek: both classes must be present");
  }
  const int maj = majority.value_or(default_majority(data));
  std::vector<std::size_t> removed;
  for (auto [a, b] : tomek_links(data)) removed.push_back(y[a] == maj ? a : b);
  return drop_rows(data, std::move(removed));
}

Dataset smote_enn(const Dataset& data, const BalancerConfig& cfg) {
  const int majority = default_majority(data);
  return enn_filter(smote(data, cfg), cfg.enn_k, majority);
}

Dataset smote_tomek(const Dataset& data, const BalancerConfig& cfg) {
  const int majority = default_majority(data);
  return tomek_remove(smote(data, cfg), majority);
}

std::vector<double> adasyn_ratios(const Dataset& data, std::size_t k) {
  const auto classes = split_classes(data);
  const auto& y = data.label_vector();
  std::vector<double> ratios;
  ratios.reserve(classes.minority_rows.size());
  for (auto i : classes.minority_rows) {
    const auto nn = neighbors::k_nearest(data.values, data.values.row(static_cast<Eigen::Index>(i)),
                                         k, i);
    std::size_t maj = 0;
    for (auto j : nn) maj += y[j] == classes.majority ? 1 : 0;
    ratios.push_back(nn.empty() ? 0.0 : static_cast<double>(maj) / static_cast<double>(k));
  }
  return ratios;
}

std::vector<std::size_t> adasyn_allocation(const std::vector<double>& ratios, std::size_t total) {
  const std::size_t m = ratios.size();
  std::vector<std::size_t> alloc(m, 0);
  if (m == 0 || total == 0) return alloc;
  double sum = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  std::vector<double> weights = ratios;
  if (!(sum > 0.0)) {
    std::fill(weights.begin(), weights.end(), 1.0);
    sum = static_cast<double>(m);
  }
  // Largest-remainder apportionment; remainders tie-break on lowest index.
  std::vector<double> remainder(m);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double quota = weights[i] / sum * static_cast<double>(total);
    // The 1e-9 slack keeps exact quotas such as 0.6 * 20 from flooring to 11.
    alloc[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    remainder[i] = quota - static_cast<double>(alloc[i]);
    assigned += alloc[i];
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++alloc[order[r % m]];
  return alloc;
}

Dataset adasyn(const Dataset& data, const BalancerConfig& cfg) {
  cfg.validate();
  require_numeric(data, "adasyn");
  const auto classes = split_classes(data);
  require_smote_preconditions(classes, cfg, "adasyn");

  const auto gap = classes.majority_rows.size() - classes.minority_rows.size();
  const auto total = static_cast<std::size_t>(
      round_half_up(static_cast<double>(gap) * cfg.target_ratio));
  const auto alloc = adasyn_allocation(adasyn_ratios(data, cfg.k_neighbors), total);
  const auto nn = minority_neighbors(data, classes, cfg.k_neighbors);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_nn(0, cfg.k_neighbors - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SyntheticRecord> records;
  records.reserve(total);
  for (std::size_t m = 0; m < alloc.size(); ++m) {
    for (std::size_t s = 0; s < alloc[m]; ++s) {
      const std::size_t n = nn[m][pick_nn(rng)];
      records.push_back({classes.minority_rows[m], n, unit(rng)});
    }
  }
  return append_synthetic(data, records, classes.minority);
}

}  // namespace fraudkit::resample
