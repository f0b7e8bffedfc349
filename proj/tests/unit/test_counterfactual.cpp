#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fraudkit/counterfactual.hpp"
#include "support.hpp"

using namespace fraudkit;
using namespace fraudkit::counterfactual;
using data::FeatureSpec;
using data::Range;

namespace {

FeatureSpec numeric(const std::string& name, double lo, double hi, bool is_mutable = true) {
  FeatureSpec f;
  f.name = name;
  f.range = Range{lo, hi};
  f.is_mutable = is_mutable;
  return f;
}

FeatureSpec one_hot(const std::string& group, const std::string& cat) {
  FeatureSpec f;
  f.name = group + "=" + cat;
  f.one_hot_group = group;
  f.range = Range{0, 1};
  return f;
}

// Positive when x0 + x1 > 1 on the unit square.
const ProbaFn kDiagonal = [](const Matrix& m) {
  Vector p(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) p[i] = 1.0 / (1.0 + std::exp(-10.0 * (m(i, 0) + m(i, 1) - 1.0)));
  return p;
};

data::FeatureSchema square(bool second_mutable = true) {
  return data::FeatureSchema({numeric("x0", 0, 1), numeric("x1", 0, 1, second_mutable), numeric("x2", 0, 1)});
}

CFQuery query_at(double a, double b, double c, std::uint64_t seed = 1) {
  CFQuery q;
  q.instance.resize(3);
  q.instance << a, b, c;
  q.seed = seed;
  return q;
}

void expect_sound(const data::FeatureSchema& schema, const CFQuery& q, const CFSet& set,
                  const ProbaFn& model) {
  const Vector p = set.size() ? model(set.rows) : Vector();
  std::set<std::vector<double>> unique;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto row = set.rows.row(static_cast<Eigen::Index>(i));
    EXPECT_GE(p[static_cast<Eigen::Index>(i)], 0.5) << set.method;
    EXPECT_NEAR(set.outputs[static_cast<Eigen::Index>(i)], p[static_cast<Eigen::Index>(i)], 1e-15);
    EXPECT_NEAR(set.distances[static_cast<Eigen::Index>(i)], distance(schema, q.instance, row), 1e-15);
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const auto& f = schema[j];
      const auto c = static_cast<Eigen::Index>(j);
      if (!f.is_mutable) {
        EXPECT_EQ(row(c), q.instance(c)) << set.method << " " << f.name;
      }
      if (f.range) {
        EXPECT_GE(row(c), f.range->low);
        EXPECT_LE(row(c), f.range->high);
      }
      const auto pr = q.permitted_ranges.find(f.name);
      if (pr != q.permitted_ranges.end() && row(c) != q.instance(c)) {
        EXPECT_TRUE(pr->second.contains(row(c))) << set.method << " " << f.name;
      }
    }
    unique.insert(std::vector<double>(row.begin(), row.end()));
  }
  EXPECT_EQ(unique.size(), set.size()) << set.method;
  EXPECT_LE(set.size(), q.total_cfs);
}

double mean_distance(const CFSet& s) { return s.size() ? s.distances.mean() : 0.0; }

}  // namespace

TEST(Distance, NumericAndCategorical) {
  const data::FeatureSchema s({numeric("a", 0, 10), numeric("b", 0, 2), one_hot("c", "p"), one_hot("c", "q")});
  RowVector x(4), y(4);
  x << 0, 1, 1, 0;
  y << 5, 1, 0, 1;
  // (0.5 + 0 + 1) / 3 features.
  EXPECT_NEAR(distance(s, x, y), 0.5, 1e-15);
  EXPECT_EQ(distance(s, x, x), 0.0);
  EXPECT_EQ(feature_names(s), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Counterfactual, GeneratorsAreValidAndSound) {
  const auto schema = square();
  std::mt19937_64 rng(2);
  const Matrix reference = testsupport::uniform_matrix(rng, 200, 3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto q = query_at(0.2, 0.3, 0.5, seed);
    q.permitted_ranges["x2"] = Range{0.4, 0.6};
    const auto r = generate_random(schema, kDiagonal, q);
    const auto k = generate_kdtree(schema, kDiagonal, q, reference);
    const auto g = generate_genetic(schema, kDiagonal, q);
    EXPECT_EQ(r.method, "random");
    EXPECT_EQ(k.method, "kdtree");
    EXPECT_EQ(g.method, "genetic");
    for (const auto* s : {&r, &k, &g}) {
      EXPECT_EQ(s->size(), 4u) << s->method;
      expect_sound(schema, q, *s, kDiagonal);
    }
  }
}

TEST(Counterfactual, ImmutableFeatureNeverChanges) {
  const auto schema = square(false);
  std::mt19937_64 rng(3);
  const Matrix reference = testsupport::uniform_matrix(rng, 300, 3);
  auto q = query_at(0.2, 0.6, 0.5);
  for (const auto& s : {generate_random(schema, kDiagonal, q), generate_kdtree(schema, kDiagonal, q, reference),
                        generate_genetic(schema, kDiagonal, q)}) {
    expect_sound(schema, q, s, kDiagonal);
  }
  q.features_to_vary = std::vector<std::string>{"x1"};
  EXPECT_THROW(validate_query(schema, kDiagonal, q), ConfigError);
}

TEST(Counterfactual, FeaturesToVaryRestrictsChanges) {
  const auto schema = square();
  auto q = query_at(0.3, 0.3, 0.5);
  q.features_to_vary = std::vector<std::string>{"x0"};
  for (const auto& s : {generate_random(schema, kDiagonal, q), generate_genetic(schema, kDiagonal, q)}) {
    ASSERT_GT(s.size(), 0u);
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_EQ(s.rows(static_cast<Eigen::Index>(i), 1), 0.3);
      EXPECT_EQ(s.rows(static_cast<Eigen::Index>(i), 2), 0.5);
      EXPECT_GT(s.rows(static_cast<Eigen::Index>(i), 0), 0.7 - 1e-9);
    }
  }
}

TEST(Counterfactual, UnreachableClassGivesEmptySets) {
  const auto schema = square();
  const ProbaFn never = [](const Matrix& m) { return Vector(Vector::Zero(m.rows())); };
  auto q = query_at(0.2, 0.2, 0.2);
  std::mt19937_64 rng(4);
  const auto r = generate_random(schema, never, q, 500);
  const auto k = generate_kdtree(schema, never, q, testsupport::uniform_matrix(rng, 50, 3));
  const auto g = generate_genetic(schema, never, q, GeneticOptions{10, 20, 3, 0.2});
  for (const auto* s : {&r, &k, &g}) {
    EXPECT_EQ(s->size(), 0u);
    EXPECT_NE(render_report(schema, q, 0, *s).find("(no counterfactuals found)"), std::string::npos);
  }
}

// The kd-tree result equals a brute-force scan of qualifying rows by distance.
TEST(Counterfactual, KdtreeMatchesBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const data::FeatureSchema schema({numeric("x0", 0, 1), numeric("x1", 0, 2), numeric("x2", 0, 1, trial % 2 == 0)});
    Matrix reference = testsupport::uniform_matrix(rng, 150, 3);
    reference.col(1) *= 2.0;
    auto q = query_at(0.1, 0.2, reference(0, 2), rng());
    if (trial % 3 == 0) q.permitted_ranges["x0"] = Range{0.5, 0.9};
    q.total_cfs = 1 + rng() % 6;
    const auto set = generate_kdtree(schema, kDiagonal, q, reference);
    const Vector p = kDiagonal(reference);
    std::vector<std::pair<double, std::size_t>> brute;
    for (Eigen::Index i = 0; i < reference.rows(); ++i) {
      if (p[i] < 0.5) continue;
      const auto row = reference.row(i);
      if (trial % 2 != 0 && row(2) != q.instance(2)) continue;
      const auto pr = q.permitted_ranges.find("x0");
      if (pr != q.permitted_ranges.end() && row(0) != q.instance(0) && !pr->second.contains(row(0))) continue;
      brute.emplace_back(distance(schema, q.instance, row), static_cast<std::size_t>(i));
    }
    std::sort(brute.begin(), brute.end());
    const std::size_t want = std::min(q.total_cfs, brute.size());
    ASSERT_EQ(set.size(), want);
    ASSERT_EQ(set.reference_rows.size(), want);
    for (std::size_t i = 0; i < want; ++i) {
      EXPECT_EQ(set.reference_rows[i], brute[i].second);
      EXPECT_NEAR(set.distances[static_cast<Eigen::Index>(i)], brute[i].first, 1e-12);
    }
  }
}

// With the diversity term off the genetic objective is pure proximity.
TEST(Counterfactual, GeneticBeatsRandomOnProximity) {
  const auto schema = square();
  double genetic = 0.0, random = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto q = query_at(0.3, 0.4, 0.5, seed);
    q.diversity_weight = 0.0;
    const auto g = generate_genetic(schema, kDiagonal, q);
    const auto r = generate_random(schema, kDiagonal, q);
    ASSERT_EQ(g.size(), 4u);
    genetic += mean_distance(g);
    random += mean_distance(r);
  }
  EXPECT_LT(genetic, random);
}

TEST(Counterfactual, DeterministicPerSeed) {
  const auto schema = square();
  const auto q = query_at(0.25, 0.25, 0.5, 9);
  EXPECT_EQ(generate_random(schema, kDiagonal, q).rows, generate_random(schema, kDiagonal, q).rows);
  EXPECT_EQ(generate_genetic(schema, kDiagonal, q).rows, generate_genetic(schema, kDiagonal, q).rows);
}

TEST(Counterfactual, OneHotBlocksStayValid) {
  const data::FeatureSchema schema({numeric("x", 0, 1), one_hot("c", "a"), one_hot("c", "b"), one_hot("c", "z")});
  // Positive only for category z.
  const ProbaFn model = [](const Matrix& m) { return Vector(0.2 + 0.6 * m.col(3).array()); };
  CFQuery q;
  q.instance.resize(4);
  q.instance << 0.5, 1, 0, 0;
  for (const auto& s : {generate_random(schema, model, q), generate_genetic(schema, model, q)}) {
    ASSERT_GT(s.size(), 0u);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto row = s.rows.row(static_cast<Eigen::Index>(i));
      EXPECT_EQ(row(1) + row(2) + row(3), 1.0);
      EXPECT_EQ(row(3), 1.0);
    }
    const auto imp = local_importance(schema, q, s);
    EXPECT_EQ(imp.at("c"), 1.0);
  }
}

TEST(Counterfactual, QueryValidation) {
  const auto schema = square();
  auto q = query_at(0.9, 0.9, 0.5);
  EXPECT_THROW(validate_query(schema, kDiagonal, q), ConfigError);  // already positive
  q = query_at(0.1, 0.1, 0.5);
  EXPECT_NO_THROW(validate_query(schema, kDiagonal, q));
  auto bad = q;
  bad.desired_class = 2;
  EXPECT_THROW(validate_query(schema, kDiagonal, bad), ConfigError);
  bad = q;
  bad.total_cfs = 0;
  EXPECT_THROW(validate_query(schema, kDiagonal, bad), ConfigError);
  bad = q;
  bad.features_to_vary = std::vector<std::string>{"nope"};
  EXPECT_THROW(validate_query(schema, kDiagonal, bad), ConfigError);
  bad = q;
  bad.permitted_ranges["x0"] = Range{-1, 0.5};
  EXPECT_THROW(validate_query(schema, kDiagonal, bad), ConfigError);
  bad = q;
  bad.instance.resize(2);
  EXPECT_THROW(validate_query(schema, kDiagonal, bad), ConfigError);
}

TEST(Counterfactual, LocalImportanceFractions) {
  const auto schema = square();
  const auto q = query_at(0.1, 0.1, 0.1);
  CFSet set;
  set.method = "manual";
  set.rows = Matrix::Constant(10, 3, 0.1);
  for (int i = 0; i < 9; ++i) set.rows(i, 0) = 0.9;
  set.rows(0, 1) = 0.8;
  const auto imp = local_importance(schema, q, set);
  EXPECT_DOUBLE_EQ(imp.at("x0"), 0.9);
  EXPECT_DOUBLE_EQ(imp.at("x1"), 0.1);
  EXPECT_DOUBLE_EQ(imp.at("x2"), 0.0);
  EXPECT_THROW(local_importance(schema, q, CFSet{}), DataError);
}

TEST(Counterfactual, ReportMarksUnchangedCells) {
  const auto schema = square();
  const auto q = query_at(0.1, 0.2, 0.3);
  CFSet set;
  set.method = "random";
  set.rows.resize(2, 3);
  set.rows << 0.9, 0.2, 0.3, 0.6, 0.7, 0.3;
  const auto text = render_report(schema, q, 0, set);
  EXPECT_EQ(text,
            "Query instance (original outcome: 0)\n"
            "x0   x1   x2   outcome\n"
            "0.1  0.2  0.3  0\n"
            "\n"
            "Diverse Counterfactual set (new outcome: 1) [random, 2 found]\n"
            "x0   x1   x2   outcome\n"
            "0.9  -    -    1\n"
            "0.6  0.7  -    1\n");
}

TEST(Counterfactual, ObservedRangesFillGaps) {
  FeatureSpec open;
  open.name = "v";
  const data::FeatureSchema s({open, numeric("w", 0, 5)});
  Matrix rows(3, 2);
  rows << -2, 1, 4, 2, 1, 3;
  const auto filled = with_observed_ranges(s, rows);
  ASSERT_TRUE(filled[0].range.has_value());
  EXPECT_EQ(*filled[0].range, (Range{-2, 4}));
  EXPECT_EQ(*filled[1].range, (Range{0, 5}));
}
