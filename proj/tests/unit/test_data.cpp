#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fraudkit/data.hpp"
#include "support.hpp"

using namespace fraudkit;
using data::Dataset;
using data::FeatureKind;
using data::FeatureSchema;
using data::FeatureSpec;

namespace {

FeatureSchema two_numeric() {
  return FeatureSchema({{"a"}, {"b"}});
}

FeatureSchema color_schema() {
  FeatureSpec color;
  color.name = "color";
  color.kind = FeatureKind::kCategorical;
  color.categories = {"red", "blue"};
  return FeatureSchema({{"x"}, color});
}

Dataset parse(const std::string& text, const FeatureSchema& schema,
              std::optional<std::string> label = std::nullopt) {
  std::istringstream in(text);
  return data::parse_csv(in, schema, label);
}

// Multiset of rows as printable strings, label appended.
std::multiset<std::string> row_multiset(const Dataset& d) {
  std::multiset<std::string> out;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    std::string s;
    for (std::size_t j = 0; j < d.cols(); ++j) s += format_double(d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) + ",";
    if (d.labels) s += std::to_string((*d.labels)[i]);
    out.insert(s);
  }
  return out;
}

}  // namespace

TEST(Schema, RejectsBrokenInvariants) {
  EXPECT_THROW(FeatureSchema({{"a"}, {"a"}}), ConfigError);
  EXPECT_THROW(FeatureSchema({{""}}), ConfigError);
  FeatureSpec cat;
  cat.name = "c";
  cat.kind = FeatureKind::kCategorical;
  EXPECT_THROW(FeatureSchema({cat}), ConfigError);
  FeatureSpec num;
  num.name = "n";
  num.categories = {"x"};
  EXPECT_THROW(FeatureSchema({num}), ConfigError);
  FeatureSpec ranged;
  ranged.name = "r";
  ranged.range = data::Range{2.0, 1.0};
  EXPECT_THROW(FeatureSchema({ranged}), ConfigError);
}

TEST(Schema, JsonRoundTrip) {
  FeatureSpec r;
  r.name = "r";
  r.is_mutable = false;
  r.range = data::Range{0.5, 2.0};
  FeatureSchema s({r, color_schema()[1]});
  EXPECT_EQ(FeatureSchema::from_json(s.to_json()), s);
}

TEST(LoadCsv, ThreeRowsWithoutLabels) {
  const auto d = parse("a,b\n1,2\n3,4\n5,6\n", two_numeric());
  EXPECT_EQ(d.rows(), 3u);
  EXPECT_EQ(d.cols(), 2u);
  EXPECT_FALSE(d.has_labels());
  EXPECT_EQ(d.values(2, 1), 6.0);
}

TEST(LoadCsv, LabelColumn) {
  const auto d = parse("a,b,y\n1,2,0\n3,4,1\n5,6,1\n", two_numeric(), "y");
  EXPECT_EQ(d.label_vector(), (Labels{0, 1, 1}));
}

TEST(LoadCsv, UnknownCategoryIsAnError) {
  try {
    parse("x,color\n1,green\n", color_schema());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown category"), std::string::npos);
  }
}

TEST(LoadCsv, UnparseableNumberBecomesNull) {
  const auto d = parse("a,b\n1,oops\n", two_numeric());
  EXPECT_TRUE(data::is_null(d.values(0, 1)));
}

TEST(LoadCsv, MissingFileAndHeaderMismatch) {
  EXPECT_THROW(data::load_csv("/nonexistent/file.csv", two_numeric(), std::nullopt), DataError);
  EXPECT_THROW(parse("a,c\n1,2\n", two_numeric()), DataError);
  EXPECT_THROW(parse("a,b\n1,2\n", two_numeric(), "y"), DataError);
}

TEST(LoadCsv, WriteThenReadIsIdentity) {
  std::mt19937_64 rng(3);
  auto d = testsupport::numeric_dataset(testsupport::uniform_matrix(rng, 20, 3, -5, 5),
                                        Labels(20, 0));
  std::stringstream s;
  data::write_csv(s, d, "label");
  const auto back = data::parse_csv(s, d.schema, std::string("label"));
  EXPECT_EQ(back.values, d.values);
}

TEST(Cleanse, DuplicatesRemovedFirstKept) {
  const auto d = parse("a,b\n1,2\n1,2\n3,4\n", two_numeric());
  const auto c = data::cleanse(d, 0.9);
  ASSERT_EQ(c.rows(), 2u);
  EXPECT_EQ(c.values(0, 0), 1.0);
  EXPECT_EQ(c.values(1, 0), 3.0);
}

TEST(Cleanse, NullFractionAtThresholdDropsFeature) {
  std::string text = "a,b\n";
  for (int i = 0; i < 10; ++i) text += std::to_string(i) + "," + (i == 0 ? "7" : "") + "\n";
  const auto c = data::cleanse(parse(text, two_numeric()), 0.9);
  EXPECT_EQ(c.cols(), 1u);
  EXPECT_EQ(c.rows(), 10u);
}

TEST(Cleanse, NullFractionBelowThresholdDropsRows) {
  std::string text = "a,b\n";
  std::size_t complete = 0;
  for (int i = 0; i < 10; ++i) {
    const bool has = i < 2;
    complete += has;
    text += std::to_string(i) + "," + (has ? "1" : "NA") + "\n";
  }
  const auto c = data::cleanse(parse(text, two_numeric()), 0.9);
  EXPECT_EQ(c.cols(), 2u);
  EXPECT_EQ(c.rows(), complete);
}

TEST(Cleanse, EmptyResultIsAnError) {
  EXPECT_THROW(data::cleanse(parse("a,b\nNA,1\n1,NA\n", two_numeric()), 0.9), DataError);
}

TEST(Cleanse, IdempotentOnRandomData) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> cell(0, 3);
  std::bernoulli_distribution null(0.15);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix x(30, 4);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = null(rng) ? data::null_cell() : cell(rng);
    }
    Dataset d;
    d.schema = testsupport::numeric_schema(4);
    d.values = x;
    Dataset once;
    try {
      once = data::cleanse(d, 0.5);
    } catch (const DataError&) {
      continue;
    }
    const auto twice = data::cleanse(once, 0.5);
    EXPECT_EQ(twice.values, once.values);
    EXPECT_EQ(twice.schema, once.schema);
  }
}

TEST(OneHot, EncodesAndDecodes) {
  const auto d = parse("x,color\n0.5,red\n0.25,blue\n", color_schema());
  const auto e = data::encode_one_hot(d);
  ASSERT_EQ(e.data.cols(), 3u);
  EXPECT_EQ(e.data.values(0, 1), 1.0);
  EXPECT_EQ(e.data.values(0, 2), 0.0);
  EXPECT_EQ(e.data.schema[1].name, "color=red");
  EXPECT_EQ(e.data.schema[2].one_hot_group, "color");
  const auto& g = e.encoding.groups.at(0);
  for (std::size_t i = 0; i < 2; ++i) {
    const RowVector row = e.data.values.row(static_cast<Eigen::Index>(i));
    EXPECT_EQ(e.encoding.decode(g, std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))),
              i == 0 ? "red" : "blue");
  }
}

TEST(OneHot, NoCategoricalsUnchanged) {
  const auto d = parse("a,b\n1,2\n", two_numeric());
  const auto e = data::encode_one_hot(d);
  EXPECT_EQ(e.data.values, d.values);
  EXPECT_TRUE(e.encoding.groups.empty());
}

TEST(OneHot, RowsSumToOne) {
  FeatureSpec c;
  c.name = "c";
  c.kind = FeatureKind::kCategorical;
  c.categories = {"p", "q", "r"};
  const auto d = parse("c\np\nq\nr\nq\np\n", FeatureSchema({c}));
  const auto e = data::encode_one_hot(d);
  ASSERT_EQ(e.data.cols(), 3u);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_EQ(e.data.values.row(i).sum(), 1.0);
}

TEST(Normalize, MinMax) {
  const auto d = parse("a,b\n2,7\n4,7\n6,7\n", two_numeric());
  const auto p = data::fit_normalize(d);
  const auto n = data::apply_normalize(d, p);
  EXPECT_EQ(n.values(0, 0), 0.0);
  EXPECT_EQ(n.values(1, 0), 0.5);
  EXPECT_EQ(n.values(2, 0), 1.0);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(n.values(i, 1), 0.0);
}

TEST(Normalize, RoundTripWithin1e12) {
  std::mt19937_64 rng(5);
  const auto fit = testsupport::numeric_dataset(testsupport::uniform_matrix(rng, 10, 3, -50, 80), Labels(10, 0));
  const auto p = data::fit_normalize(fit);
  const Matrix lo = fit.values.colwise().minCoeff();
  const Matrix hi = fit.values.colwise().maxCoeff();
  Matrix x(100, 3);
  std::uniform_real_distribution<double> u(0, 1);
  for (Eigen::Index i = 0; i < 100; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = lo(0, j) + u(rng) * (hi(0, j) - lo(0, j));
  }
  const auto d = testsupport::numeric_dataset(x, Labels(100, 0));
  const auto back = data::invert_normalize(data::apply_normalize(d, p), p);
  EXPECT_LE((back.values - d.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Normalize, JsonRoundTrip) {
  const auto d = parse("a,b\n0.1,7\n4.3,9\n", two_numeric());
  const auto p = data::fit_normalize(d);
  const auto q = data::NormParams::from_json(p.to_json());
  EXPECT_EQ(data::apply_normalize(d, q).values, data::apply_normalize(d, p).values);
}

TEST(StratifiedSplit, PerClassHalfUpCounts) {
  Matrix x(100, 1);
  Labels y(100);
  for (int i = 0; i < 100; ++i) {
    x(i, 0) = i;
    y[static_cast<std::size_t>(i)] = i % 8 == 3 && i < 96 ? 1 : 0;
  }
  ASSERT_EQ(std::count(y.begin(), y.end(), 1), 12);
  const auto s = data::stratified_split(testsupport::numeric_dataset(x, y), 0.8, 4);
  EXPECT_EQ(s.train.count_label(0), 70u);  // round(88 * 0.8) = 70.4 -> 70
  EXPECT_EQ(s.train.count_label(1), 10u);  // round(12 * 0.8) = 9.6 -> 10
  EXPECT_EQ(s.test.rows(), 20u);
}

TEST(StratifiedSplit, FractionOneLeavesTestEmpty) {
  const auto d = testsupport::gaussian_blobs(10, 5, 2, 1.0, 1);
  const auto s = data::stratified_split(d, 1.0, 0);
  EXPECT_EQ(s.test.rows(), 0u);
  EXPECT_EQ(s.train.rows(), 15u);
}

TEST(StratifiedSplit, DeterministicAndSeedSensitive) {
  const auto d = testsupport::gaussian_blobs(40, 10, 2, 1.0, 1);
  EXPECT_EQ(data::stratified_split(d, 0.8, 9).train_rows, data::stratified_split(d, 0.8, 9).train_rows);
  EXPECT_NE(data::stratified_split(d, 0.8, 9).train_rows, data::stratified_split(d, 0.8, 10).train_rows);
}

TEST(StratifiedSplit, ClassWithOneRowIsAnError) {
  const auto d = testsupport::gaussian_blobs(10, 1, 2, 1.0, 1);
  EXPECT_THROW(data::stratified_split(d, 0.8, 0), DataError);
}

TEST(StratifiedSplit, PropertyStratifiedAndPartitioning) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t neg = 2 + rng() % 60, pos = 2 + rng() % 20;
    const double frac = 0.1 + 0.8 * std::uniform_real_distribution<double>(0, 1)(rng);
    const auto d = testsupport::gaussian_blobs(neg, pos, 2, 1.0, rng());
    const auto s = data::stratified_split(d, frac, rng());
    if (s.train.rows() > 0) {
      const double overall = static_cast<double>(pos) / static_cast<double>(neg + pos);
      const double train = static_cast<double>(s.train.count_label(1)) / static_cast<double>(s.train.rows());
      EXPECT_LE(std::abs(train - overall), 1.0 / static_cast<double>(s.train.rows()) + 1e-12);
    }
    std::multiset<std::string> joined = row_multiset(s.train);
    const auto t = row_multiset(s.test);
    joined.insert(t.begin(), t.end());
    EXPECT_EQ(joined, row_multiset(d));
    std::vector<std::size_t> all = s.train_rows;
    all.insert(all.end(), s.test_rows.begin(), s.test_rows.end());
    std::sort(all.begin(), all.end());
    EXPECT_TRUE(std::adjacent_find(all.begin(), all.end()) == all.end());
  }
}

TEST(OccSplit, NegativesTrainPositivesTest) {
  const auto d = testsupport::gaussian_blobs(88, 12, 2, 1.0, 1);
  const auto s = data::occ_split(d);
  EXPECT_EQ(s.train.rows(), 88u);
  EXPECT_EQ(s.test.rows(), 12u);
}

TEST(OccSplit, InterleavedKeepsOrder) {
  Matrix x(4, 1);
  x << 0, 1, 2, 3;
  const auto s = data::occ_split(testsupport::numeric_dataset(x, {0, 1, 0, 1}));
  EXPECT_EQ(s.train_rows, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(s.test_rows, (std::vector<std::size_t>{1, 3}));
}

TEST(OccSplit, AllNegativeIsAnError) {
  const auto d = testsupport::numeric_dataset(Matrix::Zero(3, 1), {0, 0, 0});
  EXPECT_THROW(data::occ_split(d), DataError);
}

TEST(WriteSplit, ManifestRecordsSeedAndFraction) {
  const auto d = testsupport::gaussian_blobs(20, 10, 2, 1.0, 1);
  const auto s = data::stratified_split(d, 0.75, 42);
  const auto dir = std::filesystem::temp_directory_path() / "fraudkit_split_test";
  std::filesystem::remove_all(dir);
  data::write_split(dir, s);
  std::ifstream in(dir / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 42u);
  EXPECT_DOUBLE_EQ(j.at("train_fraction").get<double>(), 0.75);
  EXPECT_TRUE(std::filesystem::exists(dir / "train.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "test.csv"));
}
