#include "fraudkit/occ.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include <boost/math/distributions/chi_squared.hpp>

namespace fraudkit::occ {

using classify::ParamDomain;

namespace {

ParamDomain choice(std::string name, std::vector<std::string> values, std::string fallback) {
  ParamDomain d;
  d.name = std::move(name);
  d.choices = std::move(values);
  d.fallback = std::move(fallback);
  return d;
}

ParamDomain numeric(std::string name, double low, double high, bool integer, double fallback) {
  ParamDomain d;
  d.name = std::move(name);
  d.low = low;
  d.high = high;
  d.integer = integer;
  d.fallback = fallback;
  return d;
}

// ---- one-class SVM -------------------------------------------------------

double kernel(const std::string& k, double gamma, const Eigen::Ref<const RowVector>& a,
              const Eigen::Ref<const RowVector>& b) {
  if (k == "linear") return a.dot(b);
  if (k == "rbf") return std::exp(-gamma * (a - b).squaredNorm());
  if (k == "poly") {
    const double v = a.dot(b) + 1.0;
    return v * v * v;
  }
  return std::tanh(gamma * a.dot(b) + 1.0);
}

class KernelColumns {
 public:
  KernelColumns(const Matrix& x, const std::string& k, double gamma)
      : x_(x), kernel_(k), gamma_(gamma) {}

  const Vector& column(std::size_t i) {
    auto it = cache_.find(i);
    if (it != cache_.end()) return it->second;
    if (cache_.size() >= capacity()) cache_.clear();
    Vector col(x_.rows());
    for (Eigen::Index r = 0; r < x_.rows(); ++r) {
      col(r) = kernel(kernel_, gamma_, x_.row(r), x_.row(static_cast<Eigen::Index>(i)));
    }
    return cache_.emplace(i, std::move(col)).first->second;
  }

 private:
  std::size_t capacity() const {
    // roughly 256 MB of columns
    return std::max<std::size_t>(2, (std::size_t{32} << 20) / static_cast<std::size_t>(x_.rows() + 1));
  }

  const Matrix& x_;
  std::string kernel_;
  double gamma_;
  std::unordered_map<std::size_t, Vector> cache_;
};

// SMO on min 0.5 a'Qa s.t. 0 <= a_i <= 1, sum a = nu n, with maximal
// violating pair selection.
OcsvmState fit_ocsvm(const DetectorConfig& cfg, const Matrix& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  const double nu = cfg.number("nu");
  OcsvmState s;
  s.kernel = cfg.text("kernel");
  s.gamma = 1.0 / static_cast<double>(x.cols());

  Vector alpha = Vector::Zero(static_cast<Eigen::Index>(n));
  const double total = nu * static_cast<double>(n);
  const auto full = static_cast<std::size_t>(std::floor(total));
  for (std::size_t i = 0; i < std::min(full, n); ++i) alpha(static_cast<Eigen::Index>(i)) = 1.0;
  if (full < n) alpha(static_cast<Eigen::Index>(full)) = total - static_cast<double>(full);

  KernelColumns q(x, s.kernel, s.gamma);
  Vector g = Vector::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha(static_cast<Eigen::Index>(i)) > 0.0) g += alpha(static_cast<Eigen::Index>(i)) * q.column(i);
  }

  constexpr double kEps = 1e-5;
  const std::size_t max_iter = std::max<std::size_t>(10'000'000, 100 * n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    Eigen::Index up = -1, low = -1;
    double g_up = std::numeric_limits<double>::infinity();
    double g_low = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < alpha.size(); ++k) {
      if (alpha(k) < 1.0 && g(k) < g_up) {
        g_up = g(k);
        up = k;
      }
      if (alpha(k) > 0.0 && g(k) > g_low) {
        g_low = g(k);
        low = k;
      }
    }
    if (up < 0 || low < 0 || g_low - g_up < kEps) break;
    const Vector qi = q.column(static_cast<std::size_t>(up));
    const Vector qj = q.column(static_cast<std::size_t>(low));
    double curv = qi(up) + qj(low) - 2.0 * qi(low);
    if (curv <= 0.0) curv = 1e-12;
    double t = (g_low - g_up) / curv;
    t = std::min({t, 1.0 - alpha(up), alpha(low)});
    alpha(up) += t;
    alpha(low) -= t;
    g += t * (qi - qj);
  }

  // rho from the free multipliers, else the midpoint of the feasible band.
  double sum_free = 0.0, ub = std::numeric_limits<double>::infinity(),
         lb = -std::numeric_limits<double>::infinity();
  std::size_t n_free = 0;
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    if (alpha(k) >= 1.0) {
      lb = std::max(lb, g(k));
    } else if (alpha(k) <= 0.0) {
      ub = std::min(ub, g(k));
    } else {
      sum_free += g(k);
      ++n_free;
    }
  }
  s.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  std::vector<Eigen::Index> sv;
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    if (alpha(k) > 0.0) sv.push_back(k);
  }
  s.support.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
  s.alpha.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    s.support.row(static_cast<Eigen::Index>(k)) = x.row(sv[k]);
    s.alpha(static_cast<Eigen::Index>(k)) = alpha(sv[k]);
  }
  return s;
}

Vector score_ocsvm(const OcsvmState& s, const Matrix& rows) {
  Vector out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double f = 0.0;
    for (Eigen::Index k = 0; k < s.support.rows(); ++k) {
      f += s.alpha(k) * kernel(s.kernel, s.gamma, s.support.row(k), rows.row(i));
    }
    out(i) = s.rho - f;
  }
  return out;
}

// ---- isolation forest ----------------------------------------------------

struct IsoBuilder {
  const Matrix& x;
  std::size_t height_limit;
  std::mt19937_64& rng;
  std::vector<IsoNode> nodes;

  int build(std::vector<std::size_t> rows, std::size_t depth) {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(IsoNode{-1, 0.0, -1, -1, rows.size()});
    if (depth >= height_limit || rows.size() <= 1) return id;
    std::vector<std::pair<int, std::pair<double, double>>> spread;
    for (int f = 0; f < x.cols(); ++f) {
      double lo = x(rows[0], f), hi = lo;
      for (auto r : rows) {
        lo = std::min(lo, x(r, f));
        hi = std::max(hi, x(r, f));
      }
      if (hi > lo) spread.push_back({f, {lo, hi}});
    }
    if (spread.empty()) return id;
    std::uniform_int_distribution<std::size_t> pick(0, spread.size() - 1);
    const auto& [f, bounds] = spread[pick(rng)];
    std::uniform_real_distribution<double> cut(bounds.first, bounds.second);
    double t = cut(rng);
    while (!(t > bounds.first)) t = cut(rng);
    std::vector<std::size_t> left, right;
    for (auto r : rows) (x(r, f) < t ? left : right).push_back(r);
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    nodes[static_cast<std::size_t>(id)].feature = f;
    nodes[static_cast<std::size_t>(id)].threshold = t;
    nodes[static_cast<std::size_t>(id)].left = l;
    nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }
};

IForestState fit_iforest(const DetectorConfig& cfg, const Matrix& x) {
  IForestState s;
  const auto n = static_cast<std::size_t>(x.rows());
  const auto trees = static_cast<std::size_t>(cfg.number("n_estimators"));
  s.sample_size = std::min(n, static_cast<std::size_t>(cfg.number("max_samples")));
  const auto limit = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(s.sample_size))));
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t t = 0; t < trees; ++t) {
    std::mt19937_64 rng(derive_seed(cfg.seed, t));
    std::vector<std::size_t> sample = all;
    std::shuffle(sample.begin(), sample.end(), rng);
    sample.resize(s.sample_size);
    IsoBuilder b{x, limit, rng, {}};
    b.build(std::move(sample), 0);
    s.trees.push_back(std::move(b.nodes));
  }
  return s;
}

Vector score_iforest(const IForestState& s, const Matrix& rows) {
  const double c = iforest_c(s.sample_size);
  Vector out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double total = 0.0;
    for (const auto& tree : s.trees) {
      std::size_t k = 0;
      double depth = 0.0;
      while (tree[k].feature >= 0) {
        k = static_cast<std::size_t>(rows(i, tree[k].feature) < tree[k].threshold ? tree[k].left
                                                                                  : tree[k].right);
        depth += 1.0;
      }
      total += depth + iforest_c(tree[k].size);
    }
    out(i) = std::pow(2.0, -(total / static_cast<double>(s.trees.size())) / c);
  }
  return out;
}

// ---- COPOD ---------------------------------------------------------------

CopodState fit_copod(const Matrix& x) {
  CopodState s;
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::vector<double> col;
    col.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) col.push_back(x(i, f));
    std::sort(col.begin(), col.end());
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0;
    for (double v : col) {
      m2 += (v - mean) * (v - mean);
      m3 += (v - mean) * (v - mean) * (v - mean);
    }
    m2 /= n;
    m3 /= n;
    s.skewness.push_back(m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0);
    s.sorted.push_back(std::move(col));
  }
  return s;
}

// Left tail (count(x_i <= v) + 1) / (n + 1), right tail (count(x_i >= v) + 1)
// / (n + 1); score = max of the left, right and skewness-picked sums of
// -log tail probability.
Vector score_copod(const CopodState& s, const Matrix& rows) {
  Vector out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double left = 0.0, right = 0.0, skew = 0.0;
    for (std::size_t f = 0; f < s.sorted.size(); ++f) {
      const auto& col = s.sorted[f];
      const double v = rows(i, static_cast<Eigen::Index>(f));
      const double n1 = static_cast<double>(col.size()) + 1.0;
      const auto le = static_cast<double>(std::upper_bound(col.begin(), col.end(), v) - col.begin());
      const auto ge = static_cast<double>(col.end() - std::lower_bound(col.begin(), col.end(), v));
      const double nl = -std::log((le + 1.0) / n1);
      const double nr = -std::log((ge + 1.0) / n1);
      left += nl;
      right += nr;
      skew += s.skewness[f] < 0.0 ? nl : nr;
    }
    out(i) = std::max({left, right, skew});
  }
  return out;
}

// ---- MCD -----------------------------------------------------------------

struct Estimate {
  Vector mean;
  Matrix cov;
  Matrix precision;
  double det = 0.0;
  bool singular = true;
};

Estimate estimate(const Matrix& x, const std::vector<std::size_t>& rows) {
  Estimate e;
  const Eigen::Index p = x.cols();
  e.mean = Vector::Zero(p);
  for (auto r : rows) e.mean += x.row(static_cast<Eigen::Index>(r)).transpose();
  e.mean /= static_cast<double>(rows.size());
  e.cov = Matrix::Zero(p, p);
  for (auto r : rows) {
    const Vector dv = x.row(static_cast<Eigen::Index>(r)).transpose() - e.mean;
    e.cov += dv * dv.transpose();
  }
  e.cov /= static_cast<double>(rows.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(e.cov);
  const auto& ev = eig.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 0.0);
  if (!(top > 0.0) || ev.minCoeff() <= 1e-12 * top) return e;
  e.singular = false;
  e.det = ev.prod();
  e.precision = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return e;
}

Vector mahalanobis_sq(const Matrix& x, const Vector& mean, const Matrix& precision) {
  Vector d(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector dv = x.row(i).transpose() - mean;
    d(i) = dv.dot(precision * dv);
  }
  return d;
}

std::vector<std::size_t> smallest(const Vector& d, std::size_t h) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(d.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return d(static_cast<Eigen::Index>(a)) < d(static_cast<Eigen::Index>(b));
  });
  idx.resize(h);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Candidate {
  std::vector<std::size_t> support;
  Estimate est;
};

Candidate c_step(const Matrix& x, const Estimate& e, std::size_t h) {
  Candidate c;
  c.support = smallest(mahalanobis_sq(x, e.mean, e.precision), h);
  c.est = estimate(x, c.support);
  if (c.est.singular) throw ModelError("mcd: singular covariance on an h-subset (degenerate data)");
  return c;
}

std::size_t mcd_h(const DetectorConfig& cfg, std::size_t n, std::size_t p) {
  if (cfg.params.contains("support_fraction")) {
    const auto h = static_cast<std::size_t>(std::ceil(cfg.number("support_fraction") * static_cast<double>(n)));
    return std::clamp(h, p + 1, n);
  }
  return (n + p + 1) / 2;
}

McdState fit_mcd_full_rank(const DetectorConfig& cfg, const Matrix& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto p = static_cast<std::size_t>(x.cols());
  const std::size_t h = mcd_h(cfg, n, p);
  const McdFit raw = fast_mcd(x, h, static_cast<std::size_t>(cfg.number("starts")), cfg.seed);

  McdState s;
  s.raw_support = raw.support;
  s.raw_determinant = raw.determinant;
  s.raw_location = raw.location;
  const boost::math::chi_squared chi(static_cast<double>(p));

  // Consistency correction: median distance matched to the chi-square median.
  Estimate e = estimate(x, raw.support);
  Vector d = mahalanobis_sq(x, e.mean, e.precision);
  std::vector<double> sorted(d.data(), d.data() + d.size());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(n / 2), sorted.end());
  double median = sorted[n / 2];
  if (n % 2 == 0) {
    median = (median + *std::max_element(sorted.begin(), sorted.begin() + static_cast<long>(n / 2))) / 2.0;
  }
  const double correction = median / boost::math::quantile(chi, 0.5);
  s.raw_covariance = raw.covariance * correction;
  d /= correction;

  // Reweighting on the 97.5% chi-square cut.
  const double cut = boost::math::quantile(chi, 0.975);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i) {
    if (d(static_cast<Eigen::Index>(i)) <= cut) keep.push_back(i);
  }
  Estimate rw = keep.size() > p ? estimate(x, keep) : Estimate{};
  if (rw.singular) {
    s.location = raw.location;
    s.covariance = s.raw_covariance;
    s.precision = e.precision / correction;
  } else {
    s.location = rw.mean;
    s.covariance = rw.cov;
    s.precision = rw.precision;
  }
  return s;
}

// Exactly collinear columns are fitted in the affine span of the training
// rows and lifted back to input coordinates.
McdState fit_mcd_span(const DetectorConfig& cfg, const Matrix& x) {
  std::vector<std::size_t> all(static_cast<std::size_t>(x.rows()));
  std::iota(all.begin(), all.end(), 0);
  const Estimate full = estimate(x, all);
  if (!full.singular) return fit_mcd_full_rank(cfg, x);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(full.cov);
  const auto& ev = eig.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 0.0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (top > 0.0 && ev(i) > 1e-12 * top) keep.push_back(i);
  }
  if (keep.empty()) throw ModelError("mcd: training rows have zero variance");
  Matrix basis(x.cols(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) basis.col(static_cast<Eigen::Index>(j)) = eig.eigenvectors().col(keep[j]);
  const Matrix z = (x.rowwise() - full.mean.transpose()) * basis;
  const McdState sub = fit_mcd_full_rank(cfg, z);
  McdState s;
  s.location = full.mean + basis * sub.location;
  s.covariance = basis * sub.covariance * basis.transpose();
  s.precision = basis * sub.precision * basis.transpose();
  s.raw_location = full.mean + basis * sub.raw_location;
  s.raw_covariance = basis * sub.raw_covariance * basis.transpose();
  s.raw_determinant = sub.raw_determinant;
  s.raw_support = sub.raw_support;
  return s;
}

// Location and scatter are estimated on continuous columns only. A column
// with at most two distinct training values (one-hot indicator, constant)
// collapses the C-step subsets, so it gets zero precision and its mean as
// location.
McdState fit_mcd(const DetectorConfig& cfg, const Matrix& x) {
  std::vector<Eigen::Index> cont;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::vector<double> v(x.col(j).begin(), x.col(j).end());
    std::sort(v.begin(), v.end());
    if (std::unique(v.begin(), v.end()) - v.begin() > 2) cont.push_back(j);
  }
  if (cont.empty()) throw ModelError("mcd: no continuous columns to model");
  if (cont.size() == static_cast<std::size_t>(x.cols())) return fit_mcd_span(cfg, x);
  const auto k = static_cast<Eigen::Index>(cont.size());
  Matrix xc(x.rows(), k);
  for (Eigen::Index j = 0; j < k; ++j) xc.col(j) = x.col(cont[static_cast<std::size_t>(j)]);
  const McdState sub = fit_mcd_span(cfg, xc);
  const Vector mean = x.colwise().mean().transpose();
  auto lift_vec = [&](const Vector& v) {
    Vector out = mean;
    for (Eigen::Index j = 0; j < k; ++j) out(cont[static_cast<std::size_t>(j)]) = v(j);
    return out;
  };
  auto lift_mat = [&](const Matrix& m) {
    Matrix out = Matrix::Zero(x.cols(), x.cols());
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) out(cont[static_cast<std::size_t>(a)], cont[static_cast<std::size_t>(b)]) = m(a, b);
    }
    return out;
  };
  McdState s;
  s.location = lift_vec(sub.location);
  s.covariance = lift_mat(sub.covariance);
  s.precision = lift_mat(sub.precision);
  s.raw_location = lift_vec(sub.raw_location);
  s.raw_covariance = lift_mat(sub.raw_covariance);
  s.raw_determinant = sub.raw_determinant;
  s.raw_support = sub.raw_support;
  return s;
}

Vector score_mcd(const McdState& s, const Matrix& rows) {
  return mahalanobis_sq(rows, s.location, s.precision).cwiseMax(0.0).cwiseSqrt();
}

// ---- VAE -----------------------------------------------------------------

neural::NetworkSpec vae_encoder_spec(std::size_t d, std::size_t latent) {
  neural::NetworkSpec s;
  s.input_dim = d;
  s.layers = {{9, neural::Activation::kRelu},
              {10, neural::Activation::kRelu},
              {2 * latent, neural::Activation::kLinear}};
  return s;
}

neural::NetworkSpec vae_decoder_spec(std::size_t d, std::size_t latent) {
  neural::NetworkSpec s;
  s.input_dim = latent;
  s.layers = {{9, neural::Activation::kRelu},
              {10, neural::Activation::kRelu},
              {d, neural::Activation::kLinear}};
  return s;
}

// Per-row loss: squared reconstruction error summed over features plus
// KL(q(z|x) || N(0, I)); log-variance is clamped to [-10, 10].
VaeState fit_vae(const DetectorConfig& cfg, const Matrix& x) {
  const auto d = static_cast<std::size_t>(x.cols());
  VaeState s;
  s.latent_dim = static_cast<std::size_t>(cfg.number("latent_dim"));
  const auto L = static_cast<Eigen::Index>(s.latent_dim);
  s.encoder = neural::init_network(vae_encoder_spec(d, s.latent_dim), derive_seed(cfg.seed, 1));
  s.decoder = neural::init_network(vae_decoder_spec(d, s.latent_dim), derive_seed(cfg.seed, 2));

  neural::TrainConfig tc;
  tc.optimizer = neural::Optimizer::kAdam;
  tc.learning_rate = cfg.number("learning_rate");
  tc.epochs = static_cast<std::size_t>(cfg.number("epochs"));
  tc.batch_size = static_cast<std::size_t>(cfg.number("batch_size"));
  neural::OptimizerState enc_opt(s.encoder, tc), dec_opt(s.decoder, tc);

  std::mt19937_64 rng(derive_seed(cfg.seed, 3));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(tc.batch_size, n);

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t m = std::min(batch, n - start);
      const auto mb = static_cast<Eigen::Index>(m);
      Matrix xb(mb, x.cols());
      for (std::size_t k = 0; k < m; ++k) xb.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(order[start + k]));

      const auto enc = neural::forward_trace(s.encoder, xb);
      const Matrix mu = enc.output.leftCols(L);
      const Matrix raw_lv = enc.output.rightCols(L);
      const Matrix logvar = raw_lv.cwiseMax(-10.0).cwiseMin(10.0);
      Matrix eps(mb, L);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
      const Matrix sd = (0.5 * logvar.array()).exp().matrix();
      const Matrix z = mu + sd.cwiseProduct(eps);
      const auto dec = neural::forward_trace(s.decoder, z);
      const Matrix diff = dec.output - xb;

      const double recon = diff.squaredNorm();
      const double kl =
          -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum();
      const double loss = (recon + kl) / static_cast<double>(m);
      if (!std::isfinite(loss)) throw ModelError("vae: non-finite loss");
      epoch_loss += loss * static_cast<double>(m);

      const double scale = 1.0 / static_cast<double>(m);
      Matrix dz;
      const auto dec_grads = neural::backward(s.decoder, dec, 2.0 * scale * diff, false, &dz);
      Matrix d_mu = dz + scale * mu;
      Matrix d_lv = dz.cwiseProduct(eps).cwiseProduct(sd) * 0.5 +
                    scale * 0.5 * (logvar.array().exp() - 1.0).matrix();
      for (Eigen::Index i = 0; i < d_lv.size(); ++i) {
        const double r = raw_lv.data()[i];
        if (r < -10.0 || r > 10.0) d_lv.data()[i] = 0.0;
      }
      Matrix d_enc(mb, 2 * L);
      d_enc << d_mu, d_lv;
      const auto enc_grads = neural::backward(s.encoder, enc, d_enc);
      dec_opt.step(s.decoder, dec_grads);
      enc_opt.step(s.encoder, enc_grads);
    }
    s.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  return s;
}

Vector score_vae(const VaeState& s, const Matrix& rows) {
  const Matrix rec = vae_reconstruct(s, rows);
  return (rec - rows).rowwise().squaredNorm() / static_cast<double>(rows.cols());
}

// ---- serialization helpers -----------------------------------------------

nlohmann::json vec_json(const Eigen::Ref<const Vector>& v) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(format_double(v(i)));
  return a;
}

Vector vec_from(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = std::stod(j[i].get<std::string>());
  return v;
}

nlohmann::json mat_json(const Matrix& m) {
  auto a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", a}};
}

Matrix mat_from(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  for (std::size_t i = 0; i < data.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = vec_from(data[i]).transpose();
  return m;
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

std::string kind_name(DetectorKind k) {
  switch (k) {
    case DetectorKind::kOcsvm: return "ocsvm";
    case DetectorKind::kIforest: return "iforest";
    case DetectorKind::kCopod: return "copod";
    case DetectorKind::kAbod: return "abod";
    case DetectorKind::kMcd: return "mcd";
    case DetectorKind::kVae: return "vae";
  }
  return "?";
}

DetectorKind parse_kind(const std::string& name) {
  for (auto k : {DetectorKind::kOcsvm, DetectorKind::kIforest, DetectorKind::kCopod,
                 DetectorKind::kAbod, DetectorKind::kMcd, DetectorKind::kVae}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown detector kind '" + name + "'");
}

const std::vector<ParamDomain>& param_schema(DetectorKind k) {
  static const std::vector<ParamDomain> ocsvm = {
      choice("kernel", {"linear", "rbf", "poly", "sigmoid"}, "rbf"),
      numeric("nu", 1e-9, 1.0, false, 0.5)};
  static const std::vector<ParamDomain> iforest = {
      numeric("n_estimators", 1, 10000, true, 100),
      numeric("max_samples", 2, 1e9, true, 500)};
  static const std::vector<ParamDomain> copod;
  static const std::vector<ParamDomain> abod = {numeric("n_neighbours", 2, 1e9, true, 10)};
  static const std::vector<ParamDomain> mcd = {
      numeric("support_fraction", 1e-9, 1.0, false, 0.5),
      numeric("starts", 1, 1e6, true, 500)};
  static const std::vector<ParamDomain> vae = {
      numeric("latent_dim", 1, 64, true, 2),
      numeric("epochs", 1, 1e6, true, 100),
      numeric("learning_rate", 1e-9, 10.0, false, 1e-3),
      numeric("batch_size", 1, 1e9, true, 32)};
  switch (k) {
    case DetectorKind::kOcsvm: return ocsvm;
    case DetectorKind::kIforest: return iforest;
    case DetectorKind::kCopod: return copod;
    case DetectorKind::kAbod: return abod;
    case DetectorKind::kMcd: return mcd;
    case DetectorKind::kVae: return vae;
  }
  return copod;
}

classify::Grid default_grid(DetectorKind k) {
  using classify::ParamValue;
  switch (k) {
    case DetectorKind::kOcsvm:
      return {{"kernel", {ParamValue("linear"), ParamValue("rbf"), ParamValue("poly"),
                          ParamValue("sigmoid")}}};
    case DetectorKind::kIforest:
      return {{"n_estimators", {10.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0}},
              {"max_samples", {500.0, 1000.0, 1500.0, 2000.0}}};
    case DetectorKind::kAbod:
      return {{"n_neighbours", {5.0, 10.0, 20.0, 30.0, 40.0, 50.0}}};
    default: return {};
  }
}

void DetectorConfig::validate() const {
  classify::validate_params(kind_name(kind), param_schema(kind), params);
  if (!(contamination > 0.0 && contamination <= 0.5)) {
    throw ConfigError(kind_name(kind) + ": contamination must be in (0, 0.5]");
  }
}

double DetectorConfig::number(const std::string& name) const {
  return classify::param_number(kind_name(kind), param_schema(kind), params, name);
}

std::string DetectorConfig::text(const std::string& name) const {
  return classify::param_choice(kind_name(kind), param_schema(kind), params, name);
}

std::string DetectorConfig::label() const { return classify::params_label(kind_name(kind), params); }

nlohmann::json DetectorConfig::to_json() const {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [name, value] : params) p[name] = classify::param_to_json(value);
  return {{"kind", kind_name(kind)}, {"params", p}, {"contamination", contamination}, {"seed", seed}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.kind = parse_kind(j.at("kind").get<std::string>());
  if (j.contains("params")) {
    for (const auto& [name, value] : j.at("params").items()) {
      c.params[name] = classify::param_from_json(value);
    }
  }
  c.contamination = j.value("contamination", 0.05);
  c.seed = j.value("seed", std::uint64_t{0});
  c.validate();
  return c;
}

std::size_t minimum_rows(DetectorKind k) {
  switch (k) {
    case DetectorKind::kAbod: return 3;
    case DetectorKind::kMcd: return 3;
    default: return 2;
  }
}

double iforest_c(std::size_t m) {
  if (m <= 1) return 0.0;
  double harmonic = 0.0;
  for (std::size_t i = 1; i < m; ++i) harmonic += 1.0 / static_cast<double>(i);
  const double md = static_cast<double>(m);
  return 2.0 * harmonic - 2.0 * (md - 1.0) / md;
}

double abod_factor(const Matrix& ref, const Eigen::Ref<const RowVector>& query, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> dist;
  for (Eigen::Index i = 0; i < ref.rows(); ++i) {
    const double d2 = (ref.row(i) - query).squaredNorm();
    if (d2 > 0.0) dist.emplace_back(d2, static_cast<std::size_t>(i));
  }
  const std::size_t m = std::min(k, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(m), dist.end());
  if (m < 2) return 0.0;
  std::vector<RowVector> diff(m);
  std::vector<double> norm2(m);
  for (std::size_t a = 0; a < m; ++a) {
    diff[a] = query - ref.row(static_cast<Eigen::Index>(dist[a].second));
    norm2[a] = dist[a].first;
  }
  double sum = 0.0, sum_sq = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const double v = diff[a].dot(diff[b]) / (norm2[a] * norm2[b]);
      sum += v;
      sum_sq += v * v;
      ++pairs;
    }
  }
  const double mean = sum / static_cast<double>(pairs);
  return std::max(0.0, sum_sq / static_cast<double>(pairs) - mean * mean);
}

McdFit fast_mcd(const Matrix& x, std::size_t h, std::size_t starts, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto p = static_cast<std::size_t>(x.cols());
  if (h < p + 1 || h > n) throw ConfigError("mcd: h must lie in [p + 1, n]");
  if (starts == 0) throw ConfigError("mcd: starts must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);

  std::vector<Candidate> pool;
  for (std::size_t s = 0; s < starts; ++s) {
    std::vector<std::size_t> perm = all;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::size_t size = p + 1;
    std::vector<std::size_t> subset(perm.begin(), perm.begin() + static_cast<long>(size));
    Estimate e = estimate(x, subset);
    while (e.singular && size < n) {
      subset.push_back(perm[size++]);
      e = estimate(x, subset);
    }
    if (e.singular) throw ModelError("mcd: singular covariance (degenerate data)");
    Candidate c = c_step(x, e, h);
    c = c_step(x, c.est, h);
    pool.push_back(std::move(c));
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Candidate& a, const Candidate& b) { return a.est.det < b.est.det; });
  std::vector<Candidate> best;
  for (auto& c : pool) {
    if (best.size() == 10) break;
    if (std::none_of(best.begin(), best.end(), [&](const Candidate& b) { return b.support == c.support; })) {
      best.push_back(std::move(c));
    }
  }
  McdFit fit;
  fit.determinant = std::numeric_limits<double>::infinity();
  for (auto& c : best) {
    for (int it = 0; it < 100; ++it) {
      Candidate next = c_step(x, c.est, h);
      const bool done = next.support == c.support || !(next.est.det < c.est.det);
      if (next.est.det <= c.est.det) c = std::move(next);
      if (done) break;
    }
    if (c.est.det < fit.determinant) {
      fit.determinant = c.est.det;
      fit.support = c.support;
      fit.location = c.est.mean;
      fit.covariance = c.est.cov;
    }
  }
  return fit;
}

Matrix vae_reconstruct(const VaeState& s, const Matrix& rows) {
  const Matrix enc = neural::forward(s.encoder, rows);
  return neural::forward(s.decoder, enc.leftCols(static_cast<Eigen::Index>(s.latent_dim)));
}

double quantile_threshold(const Vector& scores, double contamination) {
  if (scores.size() == 0) throw DataError("threshold: no scores");
  std::vector<double> v(scores.data(), scores.data() + scores.size());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  auto rank = static_cast<std::size_t>(std::ceil((1.0 - contamination) * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

TrainedDetector fit_detector(const DetectorConfig& config, const Matrix& negatives) {
  config.validate();
  const auto n = static_cast<std::size_t>(negatives.rows());
  if (n < minimum_rows(config.kind)) {
    throw DataError(kind_name(config.kind) + ": needs at least " +
                    std::to_string(minimum_rows(config.kind)) + " training rows");
  }
  if (negatives.cols() == 0) throw DataError(kind_name(config.kind) + ": no features");
  if (!negatives.allFinite()) throw DataError(kind_name(config.kind) + ": non-finite feature value");
  TrainedDetector det;
  det.config = config;
  det.feature_count = static_cast<std::size_t>(negatives.cols());
  switch (config.kind) {
    case DetectorKind::kOcsvm: det.state = fit_ocsvm(config, negatives); break;
    case DetectorKind::kIforest: det.state = fit_iforest(config, negatives); break;
    case DetectorKind::kCopod: det.state = fit_copod(negatives); break;
    case DetectorKind::kAbod:
      det.state = AbodState{negatives, static_cast<std::size_t>(config.number("n_neighbours"))};
      break;
    case DetectorKind::kMcd: det.state = fit_mcd(config, negatives); break;
    case DetectorKind::kVae: det.state = fit_vae(config, negatives); break;
  }
  det.threshold = quantile_threshold(score(det, negatives), config.contamination);
  return det;
}

TrainedDetector fit_detector(const DetectorConfig& config, const data::Dataset& negatives) {
  if (negatives.schema.has_categoricals()) {
    throw DataError("occ: categorical features must be one-hot encoded first");
  }
  return fit_detector(config, negatives.values);
}

Vector score(const TrainedDetector& det, const Matrix& rows) {
  if (static_cast<std::size_t>(rows.cols()) != det.feature_count) {
    throw DataError("occ: expected " + std::to_string(det.feature_count) + " columns, got " +
                    std::to_string(rows.cols()));
  }
  return std::visit(
      Overloaded{[&](const OcsvmState& s) { return score_ocsvm(s, rows); },
                 [&](const IForestState& s) { return score_iforest(s, rows); },
                 [&](const CopodState& s) { return score_copod(s, rows); },
                 [&](const AbodState& s) {
                   Vector out(rows.rows());
                   for (Eigen::Index i = 0; i < rows.rows(); ++i) {
                     out(i) = -abod_factor(s.train, rows.row(i), s.neighbours);
                   }
                   return out;
                 },
                 [&](const McdState& s) { return score_mcd(s, rows); },
                 [&](const VaeState& s) { return score_vae(s, rows); }},
      det.state);
}

Labels classify(const TrainedDetector& det, const Matrix& rows) {
  const Vector s = score(det, rows);
  Labels out(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) out[static_cast<std::size_t>(i)] = s(i) > det.threshold ? 1 : 0;
  return out;
}

double classification_rate(const Labels& predictions) {
  if (predictions.empty()) throw DataError("classification_rate: empty prediction vector");
  const double hits = std::count(predictions.begin(), predictions.end(), 1);
  return hits / static_cast<double>(predictions.size());
}

nlohmann::json to_json(const TrainedDetector& det) {
  nlohmann::json state = std::visit(
      Overloaded{
          [](const OcsvmState& s) -> nlohmann::json {
            return {{"type", "ocsvm"},         {"kernel", s.kernel},
                    {"gamma", format_double(s.gamma)}, {"support", mat_json(s.support)},
                    {"alpha", vec_json(s.alpha)},  {"rho", format_double(s.rho)}};
          },
          [](const IForestState& s) -> nlohmann::json {
            auto trees = nlohmann::json::array();
            for (const auto& t : s.trees) {
              auto nodes = nlohmann::json::array();
              for (const auto& n : t) {
                nodes.push_back({n.feature, format_double(n.threshold), n.left, n.right, n.size});
              }
              trees.push_back(nodes);
            }
            return {{"type", "iforest"}, {"sample_size", s.sample_size}, {"trees", trees}};
          },
          [](const CopodState& s) -> nlohmann::json {
            auto cols = nlohmann::json::array();
            for (const auto& c : s.sorted) {
              cols.push_back(vec_json(Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size()))));
            }
            return {{"type", "copod"},
                    {"sorted", cols},
                    {"skewness", vec_json(Eigen::Map<const Vector>(s.skewness.data(),
                                                                   static_cast<Eigen::Index>(s.skewness.size())))}};
          },
          [](const AbodState& s) -> nlohmann::json {
            return {{"type", "abod"}, {"train", mat_json(s.train)}, {"neighbours", s.neighbours}};
          },
          [](const McdState& s) -> nlohmann::json {
            return {{"type", "mcd"},
                    {"location", vec_json(s.location)},
                    {"covariance", mat_json(s.covariance)},
                    {"precision", mat_json(s.precision)},
                    {"raw_location", vec_json(s.raw_location)},
                    {"raw_covariance", mat_json(s.raw_covariance)},
                    {"raw_determinant", format_double(s.raw_determinant)},
                    {"raw_support", s.raw_support}};
          },
          [](const VaeState& s) -> nlohmann::json {
            return {{"type", "vae"},
                    {"latent_dim", s.latent_dim},
                    {"encoder", neural::to_json(s.encoder)},
                    {"decoder", neural::to_json(s.decoder)}};
          }},
      det.state);
  return {{"format", "fraudkit.detector"},
          {"version", 1},
          {"config", det.config.to_json()},
          {"feature_count", det.feature_count},
          {"threshold", format_double(det.threshold)},
          {"state", state}};
}

TrainedDetector detector_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "fraudkit.detector" || j.value("version", 0) != 1) {
    throw DataError("detector: unsupported document format/version");
  }
  TrainedDetector det;
  det.config = DetectorConfig::from_json(j.at("config"));
  det.feature_count = j.at("feature_count").get<std::size_t>();
  det.threshold = std::stod(j.at("threshold").get<std::string>());
  const auto& s = j.at("state");
  const std::string type = s.at("type").get<std::string>();
  if (type == "ocsvm") {
    OcsvmState st;
    st.kernel = s.at("kernel").get<std::string>();
    st.gamma = std::stod(s.at("gamma").get<std::string>());
    st.support = mat_from(s.at("support"));
    st.alpha = vec_from(s.at("alpha"));
    st.rho = std::stod(s.at("rho").get<std::string>());
    det.state = std::move(st);
  } else if (type == "iforest") {
    IForestState st;
    st.sample_size = s.at("sample_size").get<std::size_t>();
    for (const auto& t : s.at("trees")) {
      std::vector<IsoNode> nodes;
      for (const auto& n : t) {
        nodes.push_back(IsoNode{n[0].get<int>(), std::stod(n[1].get<std::string>()), n[2].get<int>(),
                                n[3].get<int>(), n[4].get<std::size_t>()});
      }
      st.trees.push_back(std::move(nodes));
    }
    det.state = std::move(st);
  } else if (type == "copod") {
    CopodState st;
    for (const auto& c : s.at("sorted")) {
      const Vector v = vec_from(c);
      st.sorted.emplace_back(v.data(), v.data() + v.size());
    }
    const Vector sk = vec_from(s.at("skewness"));
    st.skewness.assign(sk.data(), sk.data() + sk.size());
    det.state = std::move(st);
  } else if (type == "abod") {
    det.state = AbodState{mat_from(s.at("train")), s.at("neighbours").get<std::size_t>()};
  } else if (type == "mcd") {
    McdState st;
    st.location = vec_from(s.at("location"));
    st.covariance = mat_from(s.at("covariance"));
    st.precision = mat_from(s.at("precision"));
    st.raw_location = vec_from(s.at("raw_location"));
    st.raw_covariance = mat_from(s.at("raw_covariance"));
    st.raw_determinant = std::stod(s.at("raw_determinant").get<std::string>());
    st.raw_support = s.at("raw_support").get<std::vector<std::size_t>>();
    det.state = std::move(st);
  } else if (type == "vae") {
    VaeState st;
    st.latent_dim = s.at("latent_dim").get<std::size_t>();
    st.encoder = neural::network_from_json(s.at("encoder"));
    st.decoder = neural::network_from_json(s.at("decoder"));
    det.state = std::move(st);
  } else {
    throw DataError("detector: unknown state type '" + type + "'");
  }
  return det;
}

}  // namespace fraudkit::occ
