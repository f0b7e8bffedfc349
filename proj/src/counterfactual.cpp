#include "fraudkit/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fraudkit/neighbors.hpp"

namespace fraudkit::counterfactual {

namespace {

enum class GeneKind { kNumeric, kOneHot, kIndex };

struct Gene {
  std::string name;
  GeneKind kind = GeneKind::kNumeric;
  Eigen::Index column = 0;  // first column
  std::size_t width = 1;    // columns (one-hot) or categories (index)
  double low = 0.0;         // schema range, numeric only
  double high = 0.0;
  double permitted_low = 0.0;
  double permitted_high = 0.0;
  bool is_mutable = true;
  bool allowed = false;  // may change in this query
  std::vector<std::string> categories;
};

std::vector<Gene> genes_of(const data::FeatureSchema& schema) {
  std::vector<Gene> genes;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& f = schema[c];
    Gene g;
    g.column = static_cast<Eigen::Index>(c);
    g.is_mutable = f.is_mutable;
    if (!f.one_hot_group.empty()) {
      if (!genes.empty() && genes.back().kind == GeneKind::kOneHot && genes.back().name == f.one_hot_group) {
        genes.back().width += 1;
        genes.back().categories.push_back(f.name.substr(f.one_hot_group.size() + 1));
        continue;
      }
      g.name = f.one_hot_group;
      g.kind = GeneKind::kOneHot;
      g.categories.push_back(f.name.substr(f.one_hot_group.size() + 1));
    } else if (f.kind == data::FeatureKind::kCategorical) {
      g.name = f.name;
      g.kind = GeneKind::kIndex;
      g.width = f.categories.size();
      g.categories = f.categories;
    } else {
      g.name = f.name;
      if (f.range) {
        g.low = f.range->low;
        g.high = f.range->high;
      } else {
        g.low = -std::numeric_limits<double>::infinity();
        g.high = std::numeric_limits<double>::infinity();
      }
    }
    genes.push_back(std::move(g));
  }
  return genes;
}

std::vector<Gene> genes_for(const data::FeatureSchema& schema, const CFQuery& q) {
  std::vector<Gene> genes = genes_of(schema);
  for (auto& g : genes) {
    g.allowed = g.is_mutable &&
                (!q.features_to_vary || std::find(q.features_to_vary->begin(), q.features_to_vary->end(),
                                                  g.name) != q.features_to_vary->end());
    g.permitted_low = g.low;
    g.permitted_high = g.high;
    if (auto it = q.permitted_ranges.find(g.name); it != q.permitted_ranges.end()) {
      g.permitted_low = it->second.low;
      g.permitted_high = it->second.high;
    }
  }
  return genes;
}

std::size_t category_of(const Gene& g, const Eigen::Ref<const RowVector>& row) {
  if (g.kind == GeneKind::kIndex) return static_cast<std::size_t>(row(g.column));
  std::size_t best = 0;
  for (std::size_t k = 1; k < g.width; ++k) {
    if (row(g.column + static_cast<Eigen::Index>(k)) > row(g.column + static_cast<Eigen::Index>(best))) best = k;
  }
  return best;
}

void set_category(const Gene& g, Eigen::Ref<RowVector> row, std::size_t c) {
  if (g.kind == GeneKind::kIndex) {
    row(g.column) = static_cast<double>(c);
    return;
  }
  for (std::size_t k = 0; k < g.width; ++k) row(g.column + static_cast<Eigen::Index>(k)) = k == c ? 1.0 : 0.0;
}

bool differs(const Gene& g, const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
  if (g.kind == GeneKind::kNumeric) return std::abs(a(g.column) - b(g.column)) > 1e-9;
  return category_of(g, a) != category_of(g, b);
}

double gene_distance(const Gene& g, const Eigen::Ref<const RowVector>& a,
                     const Eigen::Ref<const RowVector>& b) {
  if (g.kind != GeneKind::kNumeric) return category_of(g, a) == category_of(g, b) ? 0.0 : 1.0;
  const double width = g.high - g.low;
  if (!(width > 0.0) || !std::isfinite(width)) return 0.0;
  return std::abs(a(g.column) - b(g.column)) / width;
}

double distance_of(const std::vector<Gene>& genes, const Eigen::Ref<const RowVector>& a,
                   const Eigen::Ref<const RowVector>& b) {
  double sum = 0.0;
  for (const auto& g : genes) sum += gene_distance(g, a, b);
  return genes.empty() ? 0.0 : sum / static_cast<double>(genes.size());
}

void draw_gene(const Gene& g, Eigen::Ref<RowVector> row, std::mt19937_64& rng) {
  if (g.kind == GeneKind::kNumeric) {
    std::uniform_real_distribution<double> u(g.permitted_low, g.permitted_high);
    row(g.column) = g.permitted_high > g.permitted_low ? u(rng) : g.permitted_low;
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, g.width - 1);
    set_category(g, row, pick(rng));
  }
}

// Validity and constraint soundness of a candidate.
bool sound(const std::vector<Gene>& genes, const RowVector& instance,
           const Eigen::Ref<const RowVector>& row) {
  for (const auto& g : genes) {
    if (!differs(g, instance, row)) continue;
    if (!g.allowed) return false;
    if (g.kind == GeneKind::kNumeric &&
        (row(g.column) < g.permitted_low || row(g.column) > g.permitted_high)) {
      return false;
    }
  }
  return true;
}

bool valid_class(double proba, int desired) { return (proba >= 0.5 ? 1 : 0) == desired; }

struct Accepted {
  std::vector<RowVector> rows;
  std::vector<double> outputs;
  std::vector<std::size_t> reference;
};

CFSet assemble(std::string method, const std::vector<Gene>& genes, const RowVector& instance,
               const Accepted& acc) {
  CFSet out;
  out.method = std::move(method);
  const auto n = static_cast<Eigen::Index>(acc.rows.size());
  out.rows.resize(n, instance.size());
  out.outputs.resize(n);
  out.distances.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.rows.row(i) = acc.rows[static_cast<std::size_t>(i)];
    out.outputs(i) = acc.outputs[static_cast<std::size_t>(i)];
    out.distances(i) = distance_of(genes, instance, out.rows.row(i));
  }
  out.reference_rows = acc.reference;
  return out;
}

std::vector<std::size_t> allowed_genes(const std::vector<Gene>& genes) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < genes.size(); ++i) {
    if (genes[i].allowed) out.push_back(i);
  }
  return out;
}

RowVector random_candidate(const std::vector<Gene>& genes, const std::vector<std::size_t>& allowed,
                           const RowVector& instance, std::mt19937_64& rng) {
  RowVector row = instance;
  std::bernoulli_distribution coin(0.5);
  std::vector<std::size_t> chosen;
  for (auto gi : allowed) {
    if (coin(rng)) chosen.push_back(gi);
  }
  if (chosen.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
    chosen.push_back(allowed[pick(rng)]);
  }
  for (auto gi : chosen) draw_gene(genes[gi], row, rng);
  return row;
}

}  // namespace

ProbaFn proba_of(const classify::TrainedModel& model) {
  return [&model](const Matrix& rows) { return classify::predict_proba(model, rows); };
}

data::FeatureSchema with_observed_ranges(const data::FeatureSchema& schema, const Matrix& rows) {
  std::vector<data::FeatureSpec> features = schema.features();
  for (std::size_t c = 0; c < features.size(); ++c) {
    auto& f = features[c];
    if (f.kind != data::FeatureKind::kNumeric || f.range || rows.rows() == 0) continue;
    const auto col = rows.col(static_cast<Eigen::Index>(c));
    f.range = data::Range{col.minCoeff(), col.maxCoeff()};
  }
  return data::FeatureSchema(std::move(features));
}

void validate_query(const data::FeatureSchema& schema, const ProbaFn& model, const CFQuery& query) {
  if (static_cast<std::size_t>(query.instance.size()) != schema.size()) {
    throw ConfigError("cf: instance width does not match the schema");
  }
  if (query.desired_class != 0 && query.desired_class != 1) {
    throw ConfigError("cf: desired_class must be 0 or 1");
  }
  if (query.total_cfs == 0) throw ConfigError("cf: total_cfs must be positive");
  if (query.proximity_weight < 0.0 || query.diversity_weight < 0.0) {
    throw ConfigError("cf: weights must be non-negative");
  }
  const auto genes = genes_of(schema);
  auto find = [&](const std::string& name) -> const Gene* {
    for (const auto& g : genes) {
      if (g.name == name) return &g;
    }
    return nullptr;
  };
  if (query.features_to_vary) {
    for (const auto& name : *query.features_to_vary) {
      const Gene* g = find(name);
      if (!g) throw ConfigError("cf: unknown feature '" + name + "' in features_to_vary");
      if (!g->is_mutable) throw ConfigError("cf: feature '" + name + "' is immutable");
    }
  }
  for (const auto& [name, r] : query.permitted_ranges) {
    const Gene* g = find(name);
    if (!g || g->kind != GeneKind::kNumeric) {
      throw ConfigError("cf: permitted range for unknown or non-numeric feature '" + name + "'");
    }
    if (!(r.low <= r.high) || r.low < g->low || r.high > g->high) {
      throw ConfigError("cf: permitted range for '" + name + "' is outside the schema range");
    }
  }
  for (const auto& g : genes_for(schema, query)) {
    if (g.allowed && g.kind == GeneKind::kNumeric &&
        !(std::isfinite(g.permitted_low) && std::isfinite(g.permitted_high))) {
      throw ConfigError("cf: feature '" + g.name + "' needs a finite range");
    }
  }
  Matrix row = query.instance;
  const double p = model(row)(0);
  if (valid_class(p, query.desired_class)) {
    throw ConfigError("cf: the instance is already predicted as the desired class");
  }
}

double distance(const data::FeatureSchema& schema, const Eigen::Ref<const RowVector>& a,
                const Eigen::Ref<const RowVector>& b) {
  return distance_of(genes_of(schema), a, b);
}

CFSet generate_random(const data::FeatureSchema& schema, const ProbaFn& model,
                      const CFQuery& query, std::size_t max_attempts) {
  validate_query(schema, model, query);
  const auto genes = genes_for(schema, query);
  const auto allowed = allowed_genes(genes);
  Accepted acc;
  if (allowed.empty()) return assemble("random", genes, query.instance, acc);

  std::mt19937_64 rng(query.seed);
  std::set<std::vector<double>> seen;
  constexpr std::size_t kBatch = 256;
  std::size_t attempts = 0;
  while (attempts < max_attempts && acc.rows.size() < query.total_cfs) {
    const std::size_t m = std::min(kBatch, max_attempts - attempts);
    Matrix batch(static_cast<Eigen::Index>(m), query.instance.size());
    for (std::size_t i = 0; i < m; ++i) {
      batch.row(static_cast<Eigen::Index>(i)) = random_candidate(genes, allowed, query.instance, rng);
    }
    const Vector p = model(batch);
    for (std::size_t i = 0; i < m && acc.rows.size() < query.total_cfs; ++i) {
      ++attempts;
      const auto r = static_cast<Eigen::Index>(i);
      if (!valid_class(p(r), query.desired_class)) continue;
      const RowVector row = batch.row(r);
      if (!seen.insert(std::vector<double>(row.data(), row.data() + row.size())).second) continue;
      acc.rows.push_back(row);
      acc.outputs.push_back(p(r));
    }
  }
  return assemble("random", genes, query.instance, acc);
}

CFSet generate_kdtree(const data::FeatureSchema& schema, const ProbaFn& model,
                      const CFQuery& query, const Matrix& reference) {
  validate_query(schema, model, query);
  if (static_cast<std::size_t>(reference.cols()) != schema.size()) {
    throw DataError("cf: reference width does not match the schema");
  }
  const auto genes = genes_for(schema, query);
  Accepted acc;
  if (reference.rows() == 0) return assemble("kdtree", genes, query.instance, acc);
  const Vector p = model(reference);
  std::vector<std::size_t> keep;
  for (Eigen::Index i = 0; i < reference.rows(); ++i) {
    if (valid_class(p(i), query.desired_class) && sound(genes, query.instance, reference.row(i))) {
      keep.push_back(static_cast<std::size_t>(i));
    }
  }
  if (keep.empty()) return assemble("kdtree", genes, query.instance, acc);

  // Weighted L1 equal to `distance`: numeric columns scaled by range, each
  // one-hot column by 1/2 (a category change flips two columns).
  const double g = static_cast<double>(genes.size());
  Vector w = Vector::Zero(reference.cols());
  for (const auto& gene : genes) {
    if (gene.kind == GeneKind::kOneHot) {
      for (std::size_t k = 0; k < gene.width; ++k) w(gene.column + static_cast<Eigen::Index>(k)) = 0.5 / g;
    } else if (gene.kind == GeneKind::kIndex) {
      w(gene.column) = 0.0;  // category indices are not metric; handled below
    } else {
      const double width = gene.high - gene.low;
      w(gene.column) = width > 0.0 && std::isfinite(width) ? 1.0 / (width * g) : 0.0;
    }
  }
  const bool has_index = std::any_of(genes.begin(), genes.end(),
                                     [](const Gene& x) { return x.kind == GeneKind::kIndex; });
  Matrix pts(static_cast<Eigen::Index>(keep.size()), reference.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = reference.row(static_cast<Eigen::Index>(keep[i]));

  std::vector<std::pair<double, std::size_t>> ranked;
  if (has_index) {
    for (std::size_t i = 0; i < keep.size(); ++i) {
      ranked.emplace_back(distance_of(genes, query.instance, pts.row(static_cast<Eigen::Index>(i))), i);
    }
    std::sort(ranked.begin(), ranked.end());
    ranked.resize(std::min(ranked.size(), query.total_cfs));
  } else {
    const neighbors::KdTree tree(pts, w);
    for (const auto& hit : tree.query(query.instance, query.total_cfs)) {
      ranked.emplace_back(hit.distance, hit.index);
    }
  }
  for (const auto& [dist, i] : ranked) {
    acc.rows.push_back(pts.row(static_cast<Eigen::Index>(i)));
    acc.outputs.push_back(p(static_cast<Eigen::Index>(keep[i])));
    acc.reference.push_back(keep[i]);
  }
  return assemble("kdtree", genes, query.instance, acc);
}

CFSet generate_genetic(const data::FeatureSchema& schema, const ProbaFn& model,
                       const CFQuery& query, const GeneticOptions& options) {
  validate_query(schema, model, query);
  if (options.population < 2 || options.tournament == 0) {
    throw ConfigError("cf: genetic search needs population >= 2 and tournament >= 1");
  }
  const auto genes = genes_for(schema, query);
  const auto allowed = allowed_genes(genes);
  Accepted acc;
  if (allowed.empty()) return assemble("genetic", genes, query.instance, acc);

  std::mt19937_64 rng(query.seed);
  const std::size_t pop_size = options.population;
  const auto cols = query.instance.size();
  Matrix pop(static_cast<Eigen::Index>(pop_size), cols);
  for (std::size_t i = 0; i < pop_size; ++i) {
    pop.row(static_cast<Eigen::Index>(i)) = random_candidate(genes, allowed, query.instance, rng);
  }

  // Archive of every valid individual, deduplicated, in discovery order.
  std::vector<RowVector> archive;
  std::vector<double> archive_out;
  std::set<std::vector<double>> seen;

  struct Key {
    int invalid;
    double hinge;
    double cost;
    bool operator<(const Key& o) const {
      if (invalid != o.invalid) return invalid < o.invalid;
      if (hinge != o.hinge) return hinge < o.hinge;
      return cost < o.cost;
    }
  };

  auto evaluate = [&](const Matrix& population) {
    const Vector p = model(population);
    const auto n = static_cast<std::size_t>(population.rows());
    std::vector<Key> keys(n);
    std::vector<double> prox(n);
    for (std::size_t i = 0; i < n; ++i) prox[i] = distance_of(genes, query.instance, population.row(static_cast<Eigen::Index>(i)));
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double pi = p(r);
      const bool ok = valid_class(pi, query.desired_class);
      double spread = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) spread += distance_of(genes, population.row(r), population.row(static_cast<Eigen::Index>(j)));
      }
      spread /= static_cast<double>(n - 1);
      const double hinge = query.desired_class == 1 ? std::max(0.0, 0.5 - pi) : std::max(0.0, pi - 0.5);
      keys[i] = {ok ? 0 : 1, hinge, query.proximity_weight * prox[i] - query.diversity_weight * spread};
      if (ok) {
        const RowVector row = population.row(r);
        if (seen.insert(std::vector<double>(row.data(), row.data() + row.size())).second) {
          archive.push_back(row);
          archive_out.push_back(pi);
        }
      }
    }
    return keys;
  };

  std::vector<Key> keys = evaluate(pop);
  std::uniform_int_distribution<std::size_t> pick(0, pop_size - 1);
  std::bernoulli_distribution coin(0.5), mutate(options.mutation_rate);
  const std::size_t elite = std::max<std::size_t>(1, pop_size / 10);
  for (std::size_t gen = 0; gen < options.generations; ++gen) {
    std::vector<std::size_t> order(pop_size);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    auto tournament = [&] {
      std::size_t best = pick(rng);
      for (std::size_t t = 1; t < options.tournament; ++t) {
        const std::size_t c = pick(rng);
        if (keys[c] < keys[best]) best = c;
      }
      return best;
    };
    Matrix next(static_cast<Eigen::Index>(pop_size), cols);
    for (std::size_t i = 0; i < elite; ++i) next.row(static_cast<Eigen::Index>(i)) = pop.row(static_cast<Eigen::Index>(order[i]));
    for (std::size_t i = elite; i < pop_size; ++i) {
      const RowVector a = pop.row(static_cast<Eigen::Index>(tournament()));
      const RowVector b = pop.row(static_cast<Eigen::Index>(tournament()));
      RowVector child = query.instance;
      for (auto gi : allowed) {
        const Gene& g = genes[gi];
        const RowVector& src = coin(rng) ? a : b;
        const auto w = static_cast<Eigen::Index>(g.kind == GeneKind::kOneHot ? g.width : 1);
        child.segment(g.column, w) = src.segment(g.column, w);
        if (mutate(rng)) {
          if (coin(rng)) {
            child.segment(g.column, w) = query.instance.segment(g.column, w);
          } else {
            draw_gene(g, child, rng);
          }
        }
      }
      next.row(static_cast<Eigen::Index>(i)) = child;
    }
    pop = std::move(next);
    keys = evaluate(pop);
  }

  // Greedy set selection on proximity and diversity.
  std::vector<double> prox(archive.size());
  for (std::size_t i = 0; i < archive.size(); ++i) prox[i] = distance_of(genes, query.instance, archive[i]);
  std::vector<std::size_t> chosen;
  std::vector<bool> used(archive.size(), false);
  while (chosen.size() < query.total_cfs && chosen.size() < archive.size()) {
    std::size_t best = archive.size();
    double best_obj = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < archive.size(); ++c) {
      if (used[c]) continue;
      double prox_sum = prox[c], pair_sum = 0.0;
      for (auto s : chosen) {
        prox_sum += prox[s];
        pair_sum += distance_of(genes, archive[c], archive[s]);
      }
      // Pairwise sum over the existing members does not depend on c.
      const double k = static_cast<double>(chosen.size() + 1);
      const double pairs = k * (k - 1.0) / 2.0;
      const double obj = -query.proximity_weight * prox_sum / k +
                         (pairs > 0.0 ? query.diversity_weight * pair_sum / pairs : 0.0);
      if (obj > best_obj) {
        best_obj = obj;
        best = c;
      }
    }
    used[best] = true;
    chosen.push_back(best);
  }
  for (auto c : chosen) {
    acc.rows.push_back(archive[c]);
    acc.outputs.push_back(archive_out[c]);
  }
  return assemble("genetic", genes, query.instance, acc);
}

std::map<std::string, double> local_importance(const data::FeatureSchema& schema,
                                               const CFQuery& query, const CFSet& set) {
  if (set.size() == 0) throw DataError("local_importance: empty counterfactual set");
  std::map<std::string, double> out;
  for (const auto& g : genes_of(schema)) {
    std::size_t changed = 0;
    for (Eigen::Index i = 0; i < set.rows.rows(); ++i) {
      if (differs(g, query.instance, set.rows.row(i))) ++changed;
    }
    out[g.name] = static_cast<double>(changed) / static_cast<double>(set.size());
  }
  return out;
}

std::vector<std::string> feature_names(const data::FeatureSchema& schema) {
  std::vector<std::string> out;
  for (const auto& g : genes_of(schema)) out.push_back(g.name);
  return out;
}

std::string render_report(const data::FeatureSchema& schema, const CFQuery& query,
                          int original_outcome, const CFSet& set) {
  const auto genes = genes_of(schema);
  auto cell = [&](const Gene& g, const Eigen::Ref<const RowVector>& row) {
    if (g.kind == GeneKind::kNumeric) return format_short(row(g.column));
    const std::size_t c = category_of(g, row);
    return c < g.categories.size() ? g.categories[c] : std::to_string(c);
  };
  std::vector<std::string> header;
  for (const auto& g : genes) header.push_back(g.name);
  header.push_back("outcome");

  std::vector<std::vector<std::string>> table;
  std::vector<std::string> query_row;
  for (const auto& g : genes) query_row.push_back(cell(g, query.instance));
  query_row.push_back(std::to_string(original_outcome));
  std::vector<std::vector<std::string>> cf_rows;
  for (Eigen::Index i = 0; i < set.rows.rows(); ++i) {
    std::vector<std::string> r;
    for (const auto& g : genes) r.push_back(differs(g, query.instance, set.rows.row(i)) ? cell(g, set.rows.row(i)) : "-");
    r.push_back(std::to_string(query.desired_class));
    cf_rows.push_back(std::move(r));
  }

  std::vector<std::size_t> width(header.size());
  auto widen = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  };
  widen(header);
  widen(query_row);
  for (const auto& r : cf_rows) widen(r);
  auto line = [&](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c > 0) s += "  ";
      s += r[c] + std::string(width[c] - r[c].size(), ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };

  std::ostringstream out;
  out << "Query instance (original outcome: " << original_outcome << ")\n";
  out << line(header) << line(query_row) << "\n";
  out << "Diverse Counterfactual set (new outcome: " << query.desired_class << ") [" << set.method
      << ", " << set.size() << " found]\n";
  if (cf_rows.empty()) {
    out << "(no counterfactuals found)\n";
  } else {
    out << line(header);
    for (const auto& r : cf_rows) out << line(r);
  }
  return out.str();
}

}  // namespace fraudkit::counterfactual
