#include "fraudkit/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace fraudkit::evaluate {

ConfusionMatrix confusion(const Labels& labels, const Labels& predictions) {
  if (labels.size() != predictions.size()) {
    throw DataError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                    std::to_string(predictions.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) throw DataError("confusion: values must be 0/1");
    if (y == 1) {
      (p == 1 ? cm.tp : cm.fn)++;
    } else {
      (p == 1 ? cm.fp : cm.tn)++;
    }
  }
  return cm;
}

double sensitivity(const ConfusionMatrix& cm) {
  if (cm.tp + cm.fn == 0) throw DataError("sensitivity: no positive rows scored");
  return static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
}

double specificity(const ConfusionMatrix& cm) {
  if (cm.tn + cm.fp == 0) throw DataError("specificity: no negative rows scored");
  return static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
}

double auc(double sens, double spec) { return (sens + spec) / 2.0; }

double auc(const ConfusionMatrix& cm) { return auc(sensitivity(cm), specificity(cm)); }

Metrics metrics(const ConfusionMatrix& cm) {
  Metrics m;
  m.sensitivity = sensitivity(cm);
  m.specificity = specificity(cm);
  m.auc = auc(m.sensitivity, m.specificity);
  return m;
}

std::vector<Fold> stratified_kfold(const Labels& labels, std::size_t k, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (k < 2) throw ConfigError("kfold: k must be at least 2");
  if (k > n) throw DataError("kfold: k exceeds the number of rows");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> owner(n);
  std::size_t next = 0;
  for (int c : {0, 1}) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == c) rows.push_back(i);
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    for (auto r : rows) owner[r] = next++ % k;
  }
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("kfold: labels must be 0/1");
    for (std::size_t f = 0; f < k; ++f) (owner[i] == f ? folds[f].validation : folds[f].train).push_back(i);
  }
  return folds;
}

CvResult cross_validate(const classify::ClassifierConfig& config, const data::Dataset& data,
                        std::size_t k, std::uint64_t seed, const TrainPrep& prep) {
  const Labels& y = data.label_vector();
  if (data.count_label(0) < k || data.count_label(1) < k) {
    throw DataError("cross_validate: each class needs at least k = " + std::to_string(k) + " rows");
  }
  CvResult out;
  const auto folds = stratified_kfold(y, k, seed);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    data::Dataset train = data.subset(folds[f].train);
    if (prep) train = prep(train, f);
    const data::Dataset valid = data.subset(folds[f].validation);
    const auto model = classify::fit(config, train);
    out.folds.push_back(metrics(confusion(valid.label_vector(), classify::predict(model, valid.values))));
  }
  for (const auto& m : out.folds) {
    out.mean.auc += m.auc;
    out.mean.sensitivity += m.sensitivity;
    out.mean.specificity += m.specificity;
  }
  const double kk = static_cast<double>(out.folds.size());
  out.mean.auc /= kk;
  out.mean.sensitivity /= kk;
  out.mean.specificity /= kk;
  return out;
}

std::vector<classify::Params> expand_grid(const classify::Grid& grid) {
  std::vector<classify::Params> out(1);
  for (const auto& [name, values] : grid) {
    if (values.empty()) throw ConfigError("grid: parameter '" + name + "' has no values");
    std::vector<classify::Params> next;
    for (const auto& p : out) {
      for (const auto& v : values) {
        classify::Params q = p;
        q[name] = v;
        next.push_back(std::move(q));
      }
    }
    out = std::move(next);
  }
  return out;
}

GridResult grid_search(classify::Kind kind, const classify::Grid& grid, const data::Dataset& data,
                       std::size_t k, std::uint64_t seed, const TrainPrep& prep) {
  GridResult out;
  std::optional<std::size_t> winner;
  for (auto& params : expand_grid(grid)) {
    GridEntry e;
    e.config.kind = kind;
    e.config.params = std::move(params);
    e.config.seed = seed;
    try {
      e.result = cross_validate(e.config, data, k, seed, prep);
    } catch (const Error& err) {
      e.error = err.what();
    }
    if (e.result && (!winner || e.result->mean.auc > out.entries[*winner].result->mean.auc)) {
      winner = out.entries.size();
    }
    out.entries.push_back(std::move(e));
  }
  if (!winner) {
    throw ModelError("grid_search: every " + classify::kind_name(kind) + " configuration failed" +
                     (out.entries.empty() ? "" : ": " + out.entries.front().error));
  }
  out.winner = *winner;
  return out;
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DataError("incomplete_beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // Continued fraction converges fast for x < (a + 1) / (a + b + 2); use
  // the symmetry I_x(a, b) = 1 - I_{1-x}(b, a) otherwise.
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
               b * std::log1p(-x)) /
      a;
  // Modified Lentz evaluation.
  constexpr double tiny = 1e-300;
  double f = 1.0, c = 1.0, d = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const int m = i / 2;
    double num;
    if (i == 0) {
      num = 1.0;
    } else if (i % 2 == 0) {
      num = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    } else {
      num = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    }
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    const double cd = c * d;
    f *= cd;
    if (std::abs(1.0 - cd) < 1e-15) return front * (f - 1.0);
  }
  return front * (f - 1.0);
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw DataError("student_t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
  return t > 0.0 ? 1.0 - tail : tail;
}

TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("paired_t_test: vectors differ in length");
  if (a.size() < 2) throw DataError("paired_t_test: need at least 2 pairs");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dev = (a[i] - b[i]) - mean;
    ss += dev * dev;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) {
    throw DataError("paired_t_test: differences have zero variance (degenerate test)");
  }
  TTest out;
  out.df = a.size() - 1;
  out.t = mean / (sd / std::sqrt(n));
  const double df = static_cast<double>(out.df);
  out.p = incomplete_beta(df / 2.0, 0.5, df / (df + out.t * out.t));
  return out;
}

}  // namespace fraudkit::evaluate
