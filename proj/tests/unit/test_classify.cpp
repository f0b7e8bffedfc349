#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fraudkit/classify.hpp"
#include "support.hpp"

using namespace fraudkit;
using namespace fraudkit::classify;

namespace {

ClassifierConfig cfg(Kind k, Params p = {}, std::uint64_t seed = 0) {
  ClassifierConfig c;
  c.kind = k;
  c.params = std::move(p);
  c.seed = seed;
  return c;
}

// XOR corners, each repeated `copies` times.
data::Dataset xor_data(int copies) {
  Matrix x(4 * copies, 2);
  Labels y;
  const double pts[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  for (int c = 0; c < copies; ++c) {
    for (int p = 0; p < 4; ++p) {
      x(4 * c + p, 0) = pts[p][0];
      x(4 * c + p, 1) = pts[p][1];
      y.push_back(p == 1 || p == 2 ? 1 : 0);
    }
  }
  return testsupport::numeric_dataset(x, y);
}

double log_loss(const Vector& p, const Labels& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], 1e-15, 1 - 1e-15);
    s -= y[static_cast<std::size_t>(i)] ? std::log(q) : std::log(1 - q);
  }
  return s / static_cast<double>(p.size());
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST(Classifier, DecisionTreeSolvesXor) {
  const auto d = xor_data(5);
  const auto m = fit(cfg(Kind::kDt, {{"maxdepth", 2.0}}), d);
  EXPECT_EQ(predict(m, d.values), *d.labels);
  const auto stump = fit(cfg(Kind::kDt, {{"maxdepth", 1.0}}), d);
  std::size_t wrong = 0;
  const auto p = predict(stump, d.values);
  for (std::size_t i = 0; i < p.size(); ++i) wrong += p[i] != (*d.labels)[i];
  EXPECT_GE(wrong, 5u);
}

TEST(Classifier, NaiveBayesSeparatesDistantBlobs) {
  const auto d = testsupport::gaussian_blobs(100, 100, 3, 10.0, 1);
  const auto m = fit(cfg(Kind::kNb), d);
  EXPECT_EQ(predict(m, d.values), *d.labels);
  const auto& s = std::get<NaiveBayesState>(m.state);
  EXPECT_NEAR(std::exp(s.log_prior[0]), 0.5, 1e-12);
  EXPECT_NEAR(s.mean(1, 0) - s.mean(0, 0), 10.0, 0.5);
}

TEST(Classifier, SingleUnbaggedTreeForestEqualsTree) {
  const auto d = testsupport::gaussian_blobs(60, 30, 4, 1.0, 2);
  for (const char* crit : {"gini", "entropy"}) {
    const auto dt = fit(cfg(Kind::kDt, {{"maxdepth", 4.0}, {"criterion", std::string(crit)}}), d);
    const auto rf = fit(cfg(Kind::kRf, {{"maxdepth", 4.0},
                                        {"criterion", std::string(crit)},
                                        {"estimators", 1.0},
                                        {"bootstrap", std::string("false")},
                                        {"max_features", std::string("all")}}),
                        d);
    EXPECT_EQ(predict(rf, d.values), predict(dt, d.values));
  }
}

TEST(Classifier, ZeroLearningRateBoostingPredictsBaseRate) {
  const auto d = testsupport::gaussian_blobs(70, 30, 2, 1.0, 3);
  for (const char* loss : {"deviance", "exponential"}) {
    const auto m = fit(cfg(Kind::kGbt, {{"learning_rate", 0.0}, {"loss", std::string(loss)}}), d);
    const Vector p = predict_proba(m, d.values);
    for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], 0.3, 1e-12) << loss;
  }
}

TEST(Classifier, BoostingTrainingLossNeverRises) {
  const auto d = testsupport::gaussian_blobs(80, 40, 3, 1.0, 4);
  const auto m = fit(cfg(Kind::kGbt, {{"estimators", 30.0}, {"learning_rate", 0.1}}), d);
  const auto stages = staged_proba(m, d.values);
  ASSERT_EQ(stages.size(), 31u);
  EXPECT_EQ(stages.back(), predict_proba(m, d.values));
  double prev = log_loss(stages[0], *d.labels);
  for (std::size_t s = 1; s < stages.size(); ++s) {
    const double cur = log_loss(stages[s], *d.labels);
    EXPECT_LE(cur, prev + 1e-12) << "stage " << s;
    prev = cur;
  }
  EXPECT_THROW(staged_proba(fit(cfg(Kind::kNb), d), d.values), ModelError);
}

TEST(Classifier, EveryKindGivesBoundedProbabilities) {
  const auto d = testsupport::gaussian_blobs(40, 20, 3, 1.5, 5);
  for (auto k : {Kind::kNb, Kind::kLr, Kind::kSvm, Kind::kDt, Kind::kRf, Kind::kGbt, Kind::kMlp}) {
    Params p;
    if (k == Kind::kMlp) p["epochs"] = 20.0;
    if (k == Kind::kRf) p["estimators"] = 10.0;
    const auto m = fit(cfg(k, p, 7), d);
    const Vector proba = predict_proba(m, d.values);
    const auto labels = predict(m, d.values);
    for (Eigen::Index i = 0; i < proba.size(); ++i) {
      EXPECT_GE(proba[i], 0.0);
      EXPECT_LE(proba[i], 1.0);
      EXPECT_EQ(labels[static_cast<std::size_t>(i)], proba[i] >= 0.5 ? 1 : 0);
    }
    EXPECT_EQ(decision_function(m, d.values).size(), proba.size());
    // Seeded fits reproduce exactly.
    EXPECT_EQ(predict_proba(fit(cfg(k, p, 7), d), d.values), proba) << kind_name(k);
    // JSON round trip reproduces predictions bit for bit.
    const auto back = model_from_json(nlohmann::json::parse(to_json(m).dump()));
    EXPECT_EQ(predict_proba(back, d.values), proba) << kind_name(k);
  }
}

TEST(Classifier, LogisticProbabilityMatchesSigmoidOfScore) {
  const auto d = testsupport::gaussian_blobs(50, 50, 2, 1.0, 6);
  const auto m = fit(cfg(Kind::kLr), d);
  const Vector s = decision_function(m, d.values);
  const Vector p = predict_proba(m, d.values);
  for (Eigen::Index i = 0; i < s.size(); ++i) EXPECT_NEAR(p[i], 1.0 / (1.0 + std::exp(-s[i])), 1e-12);
}

// A duplicated column splits its weight evenly; predictions move only through
// the halved effective penalty.
TEST(Classifier, LogisticDuplicateFeatureSplitsWeight) {
  const auto d = testsupport::gaussian_blobs(60, 60, 2, 1.0, 7);
  Matrix dup(d.values.rows(), 3);
  dup.leftCols(2) = d.values;
  dup.col(2) = d.values.col(0);
  const auto base = fit(cfg(Kind::kLr), d);
  const auto twin = fit(cfg(Kind::kLr), dup, *d.labels, {"a", "b", "a2"});
  const auto& bc = std::get<LinearState>(base.state).coef;
  const auto& tc = std::get<LinearState>(twin.state).coef;
  EXPECT_NEAR(tc[0], tc[2], 1e-6);
  EXPECT_NEAR(tc[0] + tc[2], bc[0], 1e-3 * std::abs(bc[0]) + 1e-6);
  EXPECT_LE((predict_proba(twin, dup) - predict_proba(base, d.values)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Tree, BestSplitMatchesExhaustiveSearch) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng() % 25;
    const std::size_t dcols = 1 + rng() % 3;
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dcols));
    Labels y(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dcols; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(rng() % 6);
      y[i] = static_cast<int>(rng() % 2);
    }
    for (auto crit : {tree::Criterion::kGini, tree::Criterion::kEntropy}) {
      const auto rows = all_rows(n);
      std::size_t pos = 0;
      for (auto v : y) pos += v;
      double parent = 0.0;
      {
        const double p = static_cast<double>(pos) / static_cast<double>(n);
        parent = crit == tree::Criterion::kGini ? 2 * p * (1 - p)
                                                 : (p > 0 ? -p * std::log2(p) : 0) + (p < 1 ? -(1 - p) * std::log2(1 - p) : 0);
      }
      double best = -1.0;
      for (std::size_t j = 0; j < dcols; ++j) {
        for (int t = 0; t < 6; ++t) {
          std::size_t nl = 0, pl = 0;
          for (std::size_t i = 0; i < n; ++i) {
            if (x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= t + 0.5) {
              ++nl;
              pl += y[i];
            }
          }
          if (nl == 0 || nl == n) continue;
          auto imp = [&](std::size_t pp, std::size_t nn) {
            const double p = static_cast<double>(pp) / static_cast<double>(nn);
            if (crit == tree::Criterion::kGini) return 2 * p * (1 - p);
            return (p > 0 ? -p * std::log2(p) : 0) + (p < 1 ? -(1 - p) * std::log2(1 - p) : 0);
          };
          const double dec = parent - (static_cast<double>(nl) * imp(pl, nl) +
                                       static_cast<double>(n - nl) * imp(pos - pl, n - nl)) /
                                          static_cast<double>(n);
          best = std::max(best, dec);
        }
      }
      const auto split = tree::best_split(x, y, rows, crit);
      if (best < 0) {
        EXPECT_FALSE(split.has_value());
        continue;
      }
      ASSERT_TRUE(split.has_value());
      EXPECT_NEAR(split->decrease, best, 1e-12);
    }
  }
}

TEST(Tree, DepthRespectsLimit) {
  std::mt19937_64 rng(9);
  const auto d = testsupport::gaussian_blobs(100, 100, 3, 0.3, 9);
  for (std::size_t depth = 1; depth <= 6; ++depth) {
    tree::ClassificationOptions o;
    o.max_depth = depth;
    EXPECT_LE(tree::fit_classifier(d.values, *d.labels, all_rows(200), o).depth(), depth);
  }
}

TEST(Rules, StumpRules) {
  Matrix x(10, 1);
  Labels y;
  for (int i = 0; i < 10; ++i) {
    x(i, 0) = i;
    y.push_back(i >= 5 ? 1 : 0);
  }
  const auto m = fit(cfg(Kind::kDt, {{"maxdepth", 1.0}}), x, y, {"amount"});
  const auto rules = extract_rules(m);
  ASSERT_EQ(rules.size(), 2u);
  EXPECT_EQ(rules[0].text(m.feature_names), "IF amount ≤ 4.5 THEN Negative Class");
  EXPECT_EQ(rules[1].text(m.feature_names), "IF amount > 4.5 THEN Positive Class");
  EXPECT_EQ(rules[0].support, 5u);
  EXPECT_EQ(rules[1].purity, 1.0);
  EXPECT_EQ(render_rules(rules, m.feature_names),
            "IF amount ≤ 4.5 THEN Negative Class  [support=5, purity=1]\n"
            "IF amount > 4.5 THEN Positive Class  [support=5, purity=1]\n");
}

TEST(Rules, XorHasFourPureRules) {
  const auto d = xor_data(3);
  const auto m = fit(cfg(Kind::kDt, {{"maxdepth", 2.0}}), d);
  const auto rules = extract_rules(m);
  ASSERT_EQ(rules.size(), 4u);
  for (const auto& r : rules) {
    EXPECT_EQ(r.conditions.size(), 2u);
    EXPECT_EQ(r.purity, 1.0);
    EXPECT_EQ(r.support, 3u);
  }
  EXPECT_THROW(extract_rules(fit(cfg(Kind::kNb), d)), ModelError);
}

// Every row matches exactly one rule, and that rule's class is the model's.
TEST(Rules, PropertyRulesPartitionTheInputSpace) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const auto d = testsupport::gaussian_blobs(30 + rng() % 30, 10 + rng() % 20, 1 + rng() % 4, 0.7, rng());
    const auto m = fit(cfg(Kind::kDt, {{"maxdepth", static_cast<double>(1 + rng() % 6)}}), d);
    const auto rules = extract_rules(m);
    const auto pred = predict(m, d.values);
    std::size_t support = 0;
    for (const auto& r : rules) support += r.support;
    EXPECT_EQ(support, d.rows());
    const Matrix probe = testsupport::uniform_matrix(rng, 50, d.cols(), -3, 4);
    const auto probe_pred = predict(m, probe);
    for (Eigen::Index i = 0; i < probe.rows(); ++i) {
      int hits = 0;
      for (const auto& r : rules) {
        if (r.matches(probe.row(i))) {
          ++hits;
          EXPECT_EQ(r.predicted, probe_pred[static_cast<std::size_t>(i)]);
        }
      }
      EXPECT_EQ(hits, 1);
    }
    for (std::size_t i = 0; i < d.rows(); ++i) {
      for (const auto& r : rules) {
        if (r.matches(d.values.row(static_cast<Eigen::Index>(i)))) {
          EXPECT_EQ(r.predicted, pred[i]);
        }
      }
    }
  }
}

TEST(Config, LabelsValidationAndGrids) {
  EXPECT_EQ(cfg(Kind::kDt, {{"maxdepth", 4.0}}).label(), "dt(maxdepth=4)");
  EXPECT_EQ(cfg(Kind::kNb).label(), "nb()");
  EXPECT_THROW(cfg(Kind::kDt, {{"maxdepth", 11.0}}).validate(), ConfigError);
  EXPECT_THROW(cfg(Kind::kDt, {{"maxdepth", 2.5}}).validate(), ConfigError);
  EXPECT_THROW(cfg(Kind::kDt, {{"depth", 2.0}}).validate(), ConfigError);
  EXPECT_THROW(cfg(Kind::kLr, {{"regularizer", std::string("l3")}}).validate(), ConfigError);
  EXPECT_THROW(parse_kind("knn"), ConfigError);
  const auto grid = default_grid(Kind::kDt);
  ASSERT_EQ(grid.size(), 2u);
  EXPECT_EQ(grid[1].second.size(), 10u);
  const auto back = ClassifierConfig::from_json(cfg(Kind::kGbt, {{"loss", std::string("exponential")}}, 3).to_json());
  EXPECT_EQ(back.label(), "gbt(loss=exponential)");
  EXPECT_EQ(back.seed, 3u);
}

TEST(Classifier, SingleClassTrainingRejected) {
  Matrix x = Matrix::Zero(5, 2);
  EXPECT_THROW(fit(cfg(Kind::kDt), x, Labels(5, 0), {"a", "b"}), DataError);
}
