#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace testsupport {

using fraudkit::data::Dataset;
using fraudkit::data::FeatureSchema;
using fraudkit::data::FeatureSpec;

FeatureSchema numeric_schema(std::size_t d) {
  std::vector<FeatureSpec> f(d);
  for (std::size_t j = 0; j < d; ++j) f[j].name = "f" + std::to_string(j);
  return FeatureSchema(std::move(f));
}

Dataset numeric_dataset(const Matrix& x, const Labels& y) {
  Dataset out;
  out.schema = numeric_schema(static_cast<std::size_t>(x.cols()));
  out.values = x;
  out.labels = y;
  return out;
}

Matrix uniform_matrix(std::mt19937_64& rng, std::size_t n, std::size_t d, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
  }
  return m;
}

Dataset gaussian_blobs(std::size_t negatives, std::size_t positives, std::size_t d, double shift,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const std::size_t n = negatives + positives;
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i < negatives ? 0 : 1;
    for (std::size_t j = 0; j < d; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z(rng) + (y[i] ? shift : 0.0);
    }
  }
  return numeric_dataset(x, y);
}

std::vector<std::size_t> brute_neighbors(const Matrix& x, std::size_t i, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (static_cast<std::size_t>(r) == i) continue;
    double s = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double diff = x(r, c) - x(static_cast<Eigen::Index>(i), c);
      s += diff * diff;
    }
    d.emplace_back(std::sqrt(s), static_cast<std::size_t>(r));
  }
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < std::min(k, d.size()); ++a) out.push_back(d[a].second);
  return out;
}

std::set<std::size_t> brute_enn(const Matrix& x, const Labels& y, std::size_t k, int label) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != label) continue;
    std::size_t same = 0, other = 0;
    for (auto j : brute_neighbors(x, i, k)) (y[j] == y[i] ? same : other)++;
    if (other > same) out.insert(i);
  }
  return out;
}

std::set<std::pair<std::size_t, std::size_t>> brute_tomek(const Matrix& x, const Labels& y) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  const auto n = y.size();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (y[a] == y[b]) continue;
      if (brute_neighbors(x, a, 1).front() == b && brute_neighbors(x, b, 1).front() == a) {
        out.emplace(a, b);
      }
    }
  }
  return out;
}

Vector permutation_shapley(const OutputFn& f, const RowVector& x, const Matrix& background) {
  const auto d = static_cast<std::size_t>(x.size());
  auto value = [&](const std::vector<bool>& in) {
    Matrix rows = background;
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        if (in[j]) rows(r, static_cast<Eigen::Index>(j)) = x(static_cast<Eigen::Index>(j));
      }
    }
    return f(rows).mean();
  };
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  Vector phi = Vector::Zero(static_cast<Eigen::Index>(d));
  double count = 0.0;
  do {
    std::vector<bool> in(d, false);
    double prev = value(in);
    for (auto j : order) {
      in[j] = true;
      const double next = value(in);
      phi(static_cast<Eigen::Index>(j)) += next - prev;
      prev = next;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  return phi / count;
}

double brute_abod(const Matrix& ref, const RowVector& q) {
  std::vector<double> values;
  for (Eigen::Index a = 0; a < ref.rows(); ++a) {
    const RowVector da = q - ref.row(a);
    if (da.squaredNorm() == 0.0) continue;
    for (Eigen::Index b = a + 1; b < ref.rows(); ++b) {
      const RowVector db = q - ref.row(b);
      if (db.squaredNorm() == 0.0) continue;
      values.push_back(da.dot(db) / (da.squaredNorm() * db.squaredNorm()));
    }
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return var / static_cast<double>(values.size());
}

double exhaustive_mcd_determinant(const Matrix& x, std::size_t h) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(h), true);
  double best = std::numeric_limits<double>::infinity();
  do {
    Matrix sub(static_cast<Eigen::Index>(h), x.cols());
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pick[i]) sub.row(r++) = x.row(static_cast<Eigen::Index>(i));
    }
    const RowVector mean = sub.colwise().mean();
    const Matrix centered = sub.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(h);
    best = std::min(best, cov.determinant());
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

double t_two_sided_p(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0)) / std::sqrt(df * M_PI);
  auto pdf = [&](double u) { return c * std::pow(1.0 + u * u / df, -(df + 1.0) / 2.0); };
  const double a = std::abs(t);
  const int steps = 200000;
  const double hstep = a / steps;
  double s = pdf(0.0) + pdf(a);
  for (int i = 1; i < steps; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * hstep);
  const double central = s * hstep / 3.0;  // integral over [0, |t|]
  return 1.0 - 2.0 * central;
}

}  // namespace testsupport
