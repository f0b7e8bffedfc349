#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fraudkit/resample.hpp"
#include "support.hpp"

using namespace fraudkit;
using resample::BalancerConfig;
using resample::Method;
using testsupport::numeric_dataset;

using LinkSet = std::set<std::pair<std::size_t, std::size_t>>;

namespace {

BalancerConfig cfg_of(Method m, std::size_t k = 5, double ratio = 1.0, std::uint64_t seed = 1) {
  BalancerConfig c;
  c.method = m;
  c.k_neighbors = k;
  c.target_ratio = ratio;
  c.seed = seed;
  return c;
}

bool contains_row(const data::Dataset& d, const RowVector& row) {
  for (Eigen::Index i = 0; i < d.values.rows(); ++i) {
    if (d.values.row(i) == row) return true;
  }
  return false;
}

// Random labeled fixture with `n` rows, minority share about a third.
data::Dataset random_fixture(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  Matrix x = testsupport::uniform_matrix(rng, n, d);
  Labels y(n, 0);
  for (std::size_t i = 0; i < n; ++i) y[i] = i % 3 == 0 ? 1 : 0;
  return numeric_dataset(x, y);
}

}  // namespace

TEST(Smote, IdenticalMinorityPointsGiveThatPoint) {
  Matrix x(6, 2);
  x << 0.3, 0.7, 0.3, 0.7, 0.9, 0.1, 0.8, 0.2, 0.85, 0.15, 0.95, 0.05;
  const auto out = resample::smote(numeric_dataset(x, {1, 1, 0, 0, 0, 0}), cfg_of(Method::kSmote, 1));
  ASSERT_EQ(out.rows(), 8u);
  for (Eigen::Index i = 6; i < 8; ++i) {
    EXPECT_EQ(out.values(i, 0), 0.3);
    EXPECT_EQ(out.values(i, 1), 0.7);
  }
}

TEST(Smote, DiagonalSegment) {
  Matrix x(8, 2);
  x << 0, 0, 1, 1, 0.2, 0.9, 0.3, 0.8, 0.1, 0.7, 0.9, 0.2, 0.8, 0.3, 0.7, 0.1;
  const auto out = resample::smote(numeric_dataset(x, {1, 1, 0, 0, 0, 0, 0, 0}), cfg_of(Method::kSmote, 1));
  ASSERT_EQ(out.rows(), 12u);
  for (Eigen::Index i = 8; i < 12; ++i) {
    EXPECT_NEAR(out.values(i, 0), out.values(i, 1), 1e-15);
    EXPECT_GE(out.values(i, 0), 0.0);
    EXPECT_LE(out.values(i, 0), 1.0);
  }
}

TEST(Smote, CountArithmetic) {
  const auto d = testsupport::gaussian_blobs(88, 12, 3, 2.0, 4);
  const auto out = resample::smote(d, cfg_of(Method::kSmote));
  EXPECT_EQ(out.rows(), 88u + 12u + 76u);
  EXPECT_EQ(out.count_label(1), 88u);
  EXPECT_EQ(resample::synthetic_count(12, 88, 1.0), 76u);
  EXPECT_EQ(resample::synthetic_count(12, 88, 0.1), 0u);
}

TEST(Smote, PreconditionsChecked) {
  const auto d = testsupport::gaussian_blobs(10, 3, 2, 2.0, 4);
  EXPECT_THROW(resample::smote(d, cfg_of(Method::kSmote, 3)), DataError);
  EXPECT_THROW(resample::smote(d, cfg_of(Method::kSmote, 2, 1.5)), ConfigError);
  EXPECT_THROW(resample::smote(testsupport::gaussian_blobs(10, 0, 2, 2.0, 4), cfg_of(Method::kSmote, 1)), DataError);
}

// Containment, label purity and untouched originals across random fixtures.
TEST(Smote, PropertyContainmentPurityRatio) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 12 + rng() % 30;
    const auto d = random_fixture(rng, n, 1 + rng() % 4);
    const std::size_t k = 1 + rng() % 3;
    const auto trace = resample::smote_traced(d, cfg_of(Method::kSmote, k, 1.0, rng()));
    const auto& out = trace.data;
    ASSERT_EQ(out.rows(), d.rows() + trace.synthetic.size());
    EXPECT_EQ(out.values.topRows(d.values.rows()), d.values);
    std::vector<std::size_t> minority;
    for (std::size_t i = 0; i < d.rows(); ++i) {
      if ((*d.labels)[i] == 1) minority.push_back(i);
    }
    Matrix mx(static_cast<Eigen::Index>(minority.size()), d.values.cols());
    for (std::size_t a = 0; a < minority.size(); ++a) mx.row(static_cast<Eigen::Index>(a)) = d.values.row(static_cast<Eigen::Index>(minority[a]));
    for (std::size_t s = 0; s < trace.synthetic.size(); ++s) {
      const auto& r = trace.synthetic[s];
      const auto row = out.values.row(static_cast<Eigen::Index>(d.rows() + s));
      EXPECT_EQ((*out.labels)[d.rows() + s], 1);
      EXPECT_GE(r.u, 0.0);
      EXPECT_LE(r.u, 1.0);
      const RowVector base = d.values.row(static_cast<Eigen::Index>(r.base));
      const RowVector nb = d.values.row(static_cast<Eigen::Index>(r.neighbor));
      EXPECT_LE((row - (base + r.u * (nb - base))).cwiseAbs().maxCoeff(), 1e-9);
      // The neighbour is one of the base's k nearest minority rows.
      const auto pos = static_cast<std::size_t>(std::find(minority.begin(), minority.end(), r.base) - minority.begin());
      std::vector<std::size_t> allowed;
      for (auto a : testsupport::brute_neighbors(mx, pos, k)) allowed.push_back(minority[a]);
      EXPECT_NE(std::find(allowed.begin(), allowed.end(), r.neighbor), allowed.end());
    }
    const long diff = static_cast<long>(out.count_label(1)) - static_cast<long>(out.count_label(0));
    EXPECT_LE(std::abs(diff), static_cast<long>(k));
    EXPECT_EQ(diff, 0);
  }
}

TEST(Smote, Deterministic) {
  const auto d = testsupport::gaussian_blobs(30, 8, 3, 1.0, 2);
  EXPECT_EQ(resample::smote(d, cfg_of(Method::kSmote, 3, 1.0, 5)).values,
            resample::smote(d, cfg_of(Method::kSmote, 3, 1.0, 5)).values);
}

TEST(Smote, OneHotBlocksReprojected) {
  std::vector<data::FeatureSpec> f(3);
  f[0].name = "x";
  f[1].name = "c=a";
  f[1].one_hot_group = "c";
  f[2].name = "c=b";
  f[2].one_hot_group = "c";
  data::Dataset d;
  d.schema = data::FeatureSchema(f);
  d.values.resize(8, 3);
  d.values << 0.1, 1, 0, 0.2, 0, 1, 0.15, 1, 0, 0.9, 1, 0, 0.8, 0, 1, 0.7, 1, 0, 0.95, 0, 1, 0.85, 1, 0;
  d.labels = Labels{1, 1, 1, 0, 0, 0, 0, 0};
  const auto out = resample::smote(d, cfg_of(Method::kSmote, 2));
  for (Eigen::Index i = 8; i < out.values.rows(); ++i) {
    EXPECT_EQ(out.values(i, 1) + out.values(i, 2), 1.0);
    EXPECT_TRUE(out.values(i, 1) == 0.0 || out.values(i, 1) == 1.0);
  }
}

TEST(Enn, MajorityPointSurroundedByMinorityRemoved) {
  Matrix x(9, 2);
  x << 0, 0, 1, 0, -1, 0, 0, 1, 10, 10, 10, 11, 11, 10, 11, 11, 10.5, 10.5;
  const auto d = numeric_dataset(x, {0, 1, 1, 1, 0, 0, 0, 0, 0});
  EXPECT_EQ(resample::enn_removals(d, 3), (std::vector<std::size_t>{0}));
  EXPECT_EQ(resample::enn_filter(d, 3).rows(), 8u);
}

TEST(Enn, SeparatedClustersUntouched) {
  const auto d = testsupport::gaussian_blobs(20, 8, 2, 50.0, 3);
  EXPECT_TRUE(resample::enn_removals(d, 3).empty());
}

TEST(Enn, EightPointFixtureMatchesOracle) {
  Matrix x(8, 2);
  x << 0.1, 0.1, 0.2, 0.15, 0.12, 0.3, 0.5, 0.5, 0.55, 0.45, 0.9, 0.8, 0.85, 0.95, 0.3, 0.2;
  const Labels y = {1, 1, 0, 0, 1, 0, 0, 0};
  const auto removed = resample::enn_removals(numeric_dataset(x, y), 3);
  const auto oracle = testsupport::brute_enn(x, y, 3, 0);
  EXPECT_EQ(std::set<std::size_t>(removed.begin(), removed.end()), oracle);
}

TEST(Enn, RandomFixturesMatchOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 6 + rng() % 15;
    const auto d = random_fixture(rng, n, 1 + rng() % 3);
    const std::size_t k = 1 + rng() % 4;
    const auto removed = resample::enn_removals(d, k);
    EXPECT_EQ(std::set<std::size_t>(removed.begin(), removed.end()),
              testsupport::brute_enn(d.values, *d.labels, k, 0));
  }
}

TEST(Enn, OnlyRemoves) {
  std::mt19937_64 rng(9);
  const auto d = random_fixture(rng, 20, 2);
  const auto out = resample::enn_filter(d, 3);
  for (Eigen::Index i = 0; i < out.values.rows(); ++i) EXPECT_TRUE(contains_row(d, out.values.row(i)));
}

TEST(Tomek, IsolatedOppositePairIsALink) {
  Matrix x(7, 2);
  x << 0, 0, 0.1, 0, 0, 0.1, 0.1, 0.1, 20, 20, 20.2, 20, 5, 5;
  const Labels y = {0, 0, 0, 0, 0, 1, 1};
  const auto d = numeric_dataset(x, y);
  const auto links = resample::tomek_links(d);
  ASSERT_EQ(links.size(), 1u);
  EXPECT_EQ(links[0], (std::pair<std::size_t, std::size_t>{4, 5}));
  const auto out = resample::tomek_remove(d);
  EXPECT_EQ(out.rows(), 6u);
  EXPECT_FALSE(contains_row(out, x.row(4)));
  EXPECT_TRUE(contains_row(out, x.row(5)));
}

TEST(Tomek, FarApartClassCopiesHaveNoLinks) {
  std::mt19937_64 rng(4);
  const Matrix base = testsupport::uniform_matrix(rng, 6, 2);
  Matrix x(12, 2);
  x.topRows(6) = base;
  x.bottomRows(6) = base.array() + 100.0;
  Labels y(12, 0);
  std::fill(y.begin() + 6, y.end(), 1);
  EXPECT_TRUE(resample::tomek_links(numeric_dataset(x, y)).empty());
}

TEST(Tomek, TenPointFixtureMatchesOracle) {
  Matrix x(10, 2);
  x << 0.1, 0.2, 0.15, 0.22, 0.5, 0.5, 0.52, 0.49, 0.9, 0.9, 0.7, 0.1, 0.72, 0.12, 0.3, 0.8, 0.33, 0.79, 0.05, 0.95;
  const Labels y = {0, 1, 0, 1, 0, 0, 1, 1, 0, 0};
  const auto links = resample::tomek_links(numeric_dataset(x, y));
  const auto oracle = testsupport::brute_tomek(x, y);
  EXPECT_EQ(LinkSet(links.begin(), links.end()), oracle);
}

TEST(Tomek, RandomFixturesMatchOracle) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = random_fixture(rng, 4 + rng() % 17, 1 + rng() % 3);
    const auto links = resample::tomek_links(d);
    EXPECT_EQ(LinkSet(links.begin(), links.end()),
              testsupport::brute_tomek(d.values, *d.labels));
  }
}

TEST(Composite, SeparatedClustersEqualSmote) {
  const auto d = testsupport::gaussian_blobs(30, 10, 2, 60.0, 6);
  const auto cfg = cfg_of(Method::kSmoteEnn, 3, 1.0, 2);
  const auto plain = resample::smote(d, cfg);
  EXPECT_EQ(resample::smote_enn(d, cfg).values, plain.values);
  EXPECT_EQ(resample::smote_tomek(d, cfg).values, plain.values);
}

TEST(Composite, SmoteEnnDropsPlantedMajorityPoint) {
  auto d = testsupport::gaussian_blobs(12, 6, 2, 8.0, 12);
  d.values.conservativeResize(19, 2);
  const RowVector planted = d.values.bottomRows(7).topRows(6).colwise().mean();
  d.values.row(18) = planted;
  d.labels->push_back(0);
  ASSERT_TRUE(contains_row(d, planted));
  const auto out = resample::smote_enn(d, cfg_of(Method::kSmoteEnn, 2, 1.0, 3));
  EXPECT_FALSE(contains_row(out, planted));
}

TEST(Composite, SmoteTomekIsCompositionAndDropsLinkMajority) {
  Matrix x(7, 2);
  x << 0, 0, 0.1, 0, 0, 0.1, 0.1, 0.1, 20, 20, 20.2, 20, 5, 5;
  const auto d = numeric_dataset(x, {0, 0, 0, 0, 0, 1, 1});
  // target_ratio 0.4: 2 of 5 already, so SMOTE adds nothing.
  const auto cfg = cfg_of(Method::kSmoteTomek, 1, 0.4, 1);
  const auto out = resample::smote_tomek(d, cfg);
  EXPECT_FALSE(contains_row(out, x.row(4)));
  EXPECT_EQ(out.rows(), 6u);
  const auto grown = cfg_of(Method::kSmoteTomek, 1, 1.0, 1);
  EXPECT_EQ(resample::smote_tomek(d, grown).values,
            resample::tomek_remove(resample::smote(d, grown), 0).values);
}

TEST(Adasyn, AllocationArithmetic) {
  EXPECT_EQ(resample::adasyn_allocation({1.0, 0.0}, 10), (std::vector<std::size_t>{10, 0}));
  EXPECT_EQ(resample::adasyn_allocation({0.6, 0.2, 0.2}, 20), (std::vector<std::size_t>{12, 4, 4}));
  EXPECT_EQ(resample::adasyn_allocation({0.0, 0.0, 0.0}, 9), (std::vector<std::size_t>{3, 3, 3}));
  EXPECT_EQ(resample::adasyn_allocation({0.5, 0.0, 0.5}, 7)[1], 0u);
}

TEST(Adasyn, RatiosAndAllocationOnCraftedLayout) {
  // 1-D: minority at 0, 10, 10.05; majority at 0.1, 0.2, 10.2 and eight far rows.
  Matrix x(14, 1);
  x << 0, 10, 10.05, 0.1, 0.2, 10.2, 100, 101, 102, 103, 104, 105, 106, 107;
  Labels y(14, 0);
  y[0] = y[1] = y[2] = 1;
  const auto d = numeric_dataset(x, y);
  const auto r = resample::adasyn_ratios(d, 2);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_DOUBLE_EQ(r[0], 1.0);
  EXPECT_DOUBLE_EQ(r[1], 0.5);
  EXPECT_DOUBLE_EQ(r[2], 0.5);
  // G = (11 - 3) * 1.0 = 8; shares (0.5, 0.25, 0.25).
  EXPECT_EQ(resample::adasyn_allocation(r, 8), (std::vector<std::size_t>{4, 2, 2}));
  const auto out = resample::adasyn(d, cfg_of(Method::kAdasyn, 2, 1.0, 4));
  EXPECT_EQ(out.count_label(1), 11u);
  EXPECT_EQ(out.count_label(0), 11u);
}

TEST(Adasyn, DeterministicAndInsideMinorityHull) {
  const auto d = testsupport::gaussian_blobs(40, 10, 2, 1.5, 5);
  const auto cfg = cfg_of(Method::kAdasyn, 3, 1.0, 6);
  const auto a = resample::adasyn(d, cfg);
  EXPECT_EQ(a.values, resample::adasyn(d, cfg).values);
  const RowVector lo = d.values.bottomRows(10).colwise().minCoeff();
  const RowVector hi = d.values.bottomRows(10).colwise().maxCoeff();
  for (Eigen::Index i = 50; i < a.values.rows(); ++i) {
    EXPECT_TRUE(((a.values.row(i) - lo).array() >= -1e-12).all());
    EXPECT_TRUE(((hi - a.values.row(i)).array() >= -1e-12).all());
  }
}

TEST(BalancerConfig, JsonAndValidation) {
  auto c = cfg_of(Method::kSmoteEnn, 4, 0.5, 9);
  const auto back = BalancerConfig::from_json(c.to_json());
  EXPECT_EQ(back.method, Method::kSmoteEnn);
  EXPECT_EQ(back.k_neighbors, 4u);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_THROW(BalancerConfig::from_json({{"method", "nope"}}), ConfigError);
  EXPECT_THROW(BalancerConfig::from_json({{"method", "smote"}, {"target_ratio", 0.0}}), ConfigError);
}
