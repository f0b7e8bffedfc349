#include "fraudkit/classify.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace fraudkit::classify {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

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

void check_fit_input(const Matrix& x, const Labels& y, const std::vector<std::string>& names) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw DataError("classify: label count does not match row count");
  }
  if (names.size() != static_cast<std::size_t>(x.cols())) {
    throw DataError("classify: feature name count does not match column count");
  }
  std::size_t pos = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw DataError("classify: labels must be 0/1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos == 0 || pos == y.size()) {
    throw DataError("classify: training data must contain both classes");
  }
  if (!x.allFinite()) throw DataError("classify: non-finite feature value");
}

NaiveBayesState fit_nb(const Matrix& x, const Labels& y) {
  NaiveBayesState s;
  const Eigen::Index d = x.cols();
  s.mean = Matrix::Zero(2, d);
  s.variance = Matrix::Zero(2, d);
  double count[2] = {0.0, 0.0};
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = y[static_cast<std::size_t>(i)];
    s.mean.row(c) += x.row(i);
    count[c] += 1.0;
  }
  for (int c = 0; c < 2; ++c) s.mean.row(c) /= count[c];
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = y[static_cast<std::size_t>(i)];
    s.variance.row(c) += (x.row(i) - s.mean.row(c)).array().square().matrix();
  }
  for (int c = 0; c < 2; ++c) {
    s.variance.row(c) = (s.variance.row(c) / count[c]).cwiseMax(1e-9);
    s.log_prior[c] = std::log(count[c] / static_cast<double>(x.rows()));
  }
  return s;
}

Vector nb_log_odds(const NaiveBayesState& s, const Matrix& rows) {
  Vector out(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double ll[2];
    for (int c = 0; c < 2; ++c) {
      const auto var = s.variance.row(c).array();
      const auto diff = rows.row(i).array() - s.mean.row(c).array();
      ll[c] = s.log_prior[c] -
              0.5 * ((2.0 * std::numbers::pi * var).log() + diff.square() / var).sum();
    }
    out(i) = ll[1] - ll[0];
  }
  return out;
}

struct Penalty {
  double l1 = 0.0;  // weight on ||w||_1
  double l2 = 0.0;  // weight on 0.5 ||w||^2
};

Penalty lr_penalty(const std::string& regularizer, double alpha) {
  if (regularizer == "l1") return {alpha, 0.0};
  if (regularizer == "elasticnet") return {0.5 * alpha, 0.5 * alpha};
  return {0.0, alpha};
}

// Mean log-loss plus penalty; scores = X w + b.
double lr_objective(const Matrix& x, const Vector& yv, const Vector& w, double b,
                    const Penalty& pen) {
  const Vector z = (x * w).array() + b;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(z(i)) - yv(i) * z(i);
  return loss / static_cast<double>(z.size()) + pen.l1 * w.lpNorm<1>() +
         0.5 * pen.l2 * w.squaredNorm();
}

// Smooth-part gradient: (mean log-loss + 0.5 l2 ||w||^2).
void lr_gradient(const Matrix& x, const Vector& yv, const Vector& w, double b, double l2,
                 Vector& gw, double& gb) {
  Vector r = (x * w).array() + b;
  for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = sigmoid(r(i)) - yv(i);
  const double n = static_cast<double>(r.size());
  gw = x.transpose() * r / n + l2 * w;
  gb = r.sum() / n;
}

// Pure l2 (or no) penalty: damped Newton with backtracking.
LinearState lr_newton(const Matrix& x, const Vector& yv, double l2, std::size_t max_iter) {
  const Eigen::Index d = x.cols();
  const double n = static_cast<double>(x.rows());
  Vector theta = Vector::Zero(d + 1);  // w then b
  const Penalty pen{0.0, l2};
  double obj = lr_objective(x, yv, theta.head(d), theta(d), pen);
  for (std::size_t it = 0; it < max_iter; ++it) {
    Vector gw;
    double gb;
    lr_gradient(x, yv, theta.head(d), theta(d), l2, gw, gb);
    Vector g(d + 1);
    g << gw, gb;
    if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
    const Vector z = (x * theta.head(d)).array() + theta(d);
    Vector wts(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double p = sigmoid(z(i));
      wts(i) = p * (1.0 - p);
    }
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d + 1, d + 1);
    const Eigen::MatrixXd xw = (x.array().colwise() * wts.array()).matrix();
    h.topLeftCorner(d, d) = x.transpose() * xw / n;
    h.topRightCorner(d, 1) = xw.colwise().sum().transpose() / n;
    h.bottomLeftCorner(1, d) = h.topRightCorner(d, 1).transpose();
    h(d, d) = wts.sum() / n;
    h.topLeftCorner(d, d).diagonal().array() += l2;
    h.diagonal().array() += 1e-12;
    const Vector step = h.ldlt().solve(g);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector cand = theta - t * step;
      const double c = lr_objective(x, yv, cand.head(d), cand(d), pen);
      if (std::isfinite(c) && c <= obj - 1e-4 * t * g.dot(step)) {
        theta = cand;
        moved = obj - c > 0.0;
        obj = c;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  return {theta.head(d), theta(d)};
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// l1 / elasticnet: accelerated proximal gradient with backtracking.
LinearState lr_proximal(const Matrix& x, const Vector& yv, const Penalty& pen,
                        std::size_t max_iter) {
  const Eigen::Index d = x.cols();
  Vector w = Vector::Zero(d), w_prev = w, vw = w;
  double b = 0.0, b_prev = 0.0, vb = 0.0;
  double step = 1.0, t = 1.0;
  const Penalty smooth{0.0, pen.l2};
  for (std::size_t it = 0; it < max_iter; ++it) {
    Vector gw;
    double gb;
    lr_gradient(x, yv, vw, vb, pen.l2, gw, gb);
    const double fv = lr_objective(x, yv, vw, vb, smooth);
    Vector nw(d);
    double nb = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      for (Eigen::Index j = 0; j < d; ++j) {
        nw(j) = soft_threshold(vw(j) - step * gw(j), step * pen.l1);
      }
      nb = vb - step * gb;
      const Vector dw = nw - vw;
      const double db = nb - vb;
      const double bound = fv + gw.dot(dw) + gb * db + (dw.squaredNorm() + db * db) / (2.0 * step);
      if (lr_objective(x, yv, nw, nb, smooth) <= bound + 1e-15) break;
      step *= 0.5;
    }
    w_prev = w;
    b_prev = b;
    w = nw;
    b = nb;
    const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
    const double mom = (t - 1.0) / t_next;
    vw = w + mom * (w - w_prev);
    vb = b + mom * (b - b_prev);
    t = t_next;
    const double change = std::max((w - w_prev).lpNorm<Eigen::Infinity>(), std::abs(b - b_prev));
    if (it > 0 && change < 1e-12) break;
  }
  return {w, b};
}

LinearState fit_lr(const ClassifierConfig& cfg, const Matrix& x, const Labels& y) {
  Vector yv(x.rows());
  for (Eigen::Index i = 0; i < yv.size(); ++i) yv(i) = y[static_cast<std::size_t>(i)];
  const Penalty pen = lr_penalty(cfg.text("regularizer"), cfg.number("alpha"));
  const auto iters = static_cast<std::size_t>(cfg.number("max_iter"));
  if (pen.l1 == 0.0) return lr_newton(x, yv, pen.l2, std::min<std::size_t>(iters, 200));
  return lr_proximal(x, yv, pen, iters);
}

double svm_objective(const Matrix& x, const Vector& s, const Vector& w, double b, bool squared,
                     bool l1, double alpha) {
  const Vector m = ((x * w).array() + b).matrix();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double h = std::max(0.0, 1.0 - s(i) * m(i));
    loss += squared ? h * h : h;
  }
  const double reg = l1 ? w.lpNorm<1>() : 0.5 * w.squaredNorm();
  return loss / static_cast<double>(m.size()) + alpha * reg;
}

// Full-batch subgradient descent with step eta0 / sqrt(t); keeps the best
// iterate seen.
LinearState fit_svm(const ClassifierConfig& cfg, const Matrix& x, const Labels& y) {
  const bool squared = cfg.text("loss") == "squared-hinge";
  const bool l1 = cfg.text("regularizer") == "l1";
  const double alpha = cfg.number("alpha");
  const auto iters = static_cast<std::size_t>(cfg.number("max_iter"));
  const Eigen::Index d = x.cols();
  const double n = static_cast<double>(x.rows());
  Vector s(x.rows());
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = y[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;

  Vector w = Vector::Zero(d);
  double b = 0.0;
  LinearState best{w, b};
  double best_obj = svm_objective(x, s, w, b, squared, l1, alpha);
  const double eta0 = 0.5;
  for (std::size_t t = 1; t <= iters; ++t) {
    const Vector m = ((x * w).array() + b).matrix();
    Vector coef = Vector::Zero(x.rows());  // d loss_i / d margin_i
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double h = 1.0 - s(i) * m(i);
      if (h > 0.0) coef(i) = squared ? -2.0 * h * s(i) : -s(i);
    }
    Vector gw = x.transpose() * coef / n;
    gw += l1 ? Vector(w.array().sign()) * alpha : Vector(alpha * w);
    const double gb = coef.sum() / n;
    const double eta = eta0 / std::sqrt(static_cast<double>(t));
    w -= eta * gw;
    b -= eta * gb;
    const double obj = svm_objective(x, s, w, b, squared, l1, alpha);
    if (obj < best_obj) {
      best_obj = obj;
      best = {w, b};
    }
  }
  return best;
}

tree::Criterion criterion_of(const ClassifierConfig& cfg) {
  return cfg.text("criterion") == "entropy" ? tree::Criterion::kEntropy : tree::Criterion::kGini;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

TreeState fit_dt(const ClassifierConfig& cfg, const Matrix& x, const Labels& y) {
  tree::ClassificationOptions opt;
  opt.criterion = criterion_of(cfg);
  opt.max_depth = static_cast<std::size_t>(cfg.number("maxdepth"));
  opt.seed = cfg.seed;
  return {tree::fit_classifier(x, y, all_rows(y.size()), opt)};
}

ForestState fit_rf(const ClassifierConfig& cfg, const Matrix& x, const Labels& y) {
  const auto n_trees = static_cast<std::size_t>(cfg.number("estimators"));
  const bool bootstrap = cfg.text("bootstrap") == "true";
  const auto d = static_cast<std::size_t>(x.cols());
  tree::ClassificationOptions opt;
  opt.criterion = criterion_of(cfg);
  opt.max_depth = static_cast<std::size_t>(cfg.number("maxdepth"));
  if (cfg.text("max_features") == "sqrt") {
    opt.max_features = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
  }
  const std::vector<std::size_t> everything = all_rows(y.size());
  ForestState s;
  s.trees.reserve(n_trees);
  for (std::size_t t = 0; t < n_trees; ++t) {
    std::mt19937_64 rng(derive_seed(cfg.seed, t));
    std::vector<std::size_t> rows = everything;
    if (bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, y.size() - 1);
      for (auto& r : rows) r = pick(rng);
    }
    tree::ClassificationOptions o = opt;
    o.seed = bootstrap ? rng() : cfg.seed;
    s.trees.push_back(tree::fit_classifier(x, y, rows, o));
  }
  return s;
}

BoostState fit_gbt(const ClassifierConfig& cfg, const Matrix& x, const Labels& y) {
  BoostState s;
  s.exponential = cfg.text("loss") == "exponential";
  s.learning_rate = cfg.number("learning_rate");
  const auto n_trees = static_cast<std::size_t>(cfg.number("estimators"));
  const auto depth = static_cast<std::size_t>(cfg.number("maxdepth"));
  const auto n = static_cast<Eigen::Index>(y.size());
  const double p0 = static_cast<double>(std::accumulate(y.begin(), y.end(), 0)) /
                    static_cast<double>(n);
  const double log_odds = std::log(p0 / (1.0 - p0));
  s.init = s.exponential ? 0.5 * log_odds : log_odds;

  Vector f = Vector::Constant(n, s.init);
  Vector r(n), h(n);
  const std::vector<std::size_t> rows = all_rows(y.size());
  for (std::size_t t = 0; t < n_trees; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double yi = y[static_cast<std::size_t>(i)];
      if (s.exponential) {
        const double sign = 2.0 * yi - 1.0;
        const double e = std::exp(-sign * f(i));
        r(i) = sign * e;
        h(i) = e;
      } else {
        const double p = sigmoid(f(i));
        r(i) = yi - p;
        h(i) = p * (1.0 - p);
      }
    }
    tree::Tree tr = tree::fit_regressor(x, r, h, rows, depth);
    for (Eigen::Index i = 0; i < n; ++i) f(i) += s.learning_rate * tr.predict(x.row(i));
    s.trees.push_back(std::move(tr));
  }
  return s;
}

MlpState fit_mlp(const ClassifierConfig& cfg, const Matrix& x, const Labels& y) {
  const auto d = static_cast<std::size_t>(x.cols());
  neural::NetworkSpec spec;
  spec.input_dim = d;
  spec.layers = {{d, neural::parse_activation(cfg.text("activation"))},
                 {1, neural::Activation::kLogistic}};
  spec.loss = neural::Loss::kBinaryCrossEntropy;
  neural::TrainConfig tc;
  tc.optimizer = neural::parse_optimizer(cfg.text("solver"));
  tc.learning_rate = cfg.params.contains("learning_rate")
                         ? cfg.number("learning_rate")
                         : (tc.optimizer == neural::Optimizer::kAdam ? 1e-3 : 1e-2);
  tc.epochs = static_cast<std::size_t>(cfg.number("epochs"));
  tc.batch_size = static_cast<std::size_t>(cfg.number("batch_size"));
  tc.seed = derive_seed(cfg.seed, 1);
  MlpState s{neural::init_network(spec, derive_seed(cfg.seed, 0))};
  Matrix targets(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) targets(i, 0) = y[static_cast<std::size_t>(i)];
  neural::train(s.net, x, targets, tc);
  return s;
}

double boost_proba(const BoostState& s, double f) {
  return sigmoid(s.exponential ? 2.0 * f : f);
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_rows(const TrainedModel& m, const Matrix& rows) {
  if (static_cast<std::size_t>(rows.cols()) != m.feature_count()) {
    throw DataError("classify: expected " + std::to_string(m.feature_count()) + " columns, got " +
                    std::to_string(rows.cols()));
  }
}

nlohmann::json vector_json(const Eigen::Ref<const Vector>& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(format_double(v(i)));
  return arr;
}

Vector vector_from(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = std::stod(j[i].get<std::string>());
  return v;
}

nlohmann::json matrix_json(const Matrix& m) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) arr.push_back(vector_json(m.row(i).transpose()));
  return arr;
}

Matrix matrix_from(const nlohmann::json& j) {
  if (j.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t i = 0; i < j.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = vector_from(j[i]).transpose();
  return m;
}

double parse_number(const nlohmann::json& j) {
  return j.is_string() ? std::stod(j.get<std::string>()) : j.get<double>();
}

}  // namespace

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::kNb: return "nb";
    case Kind::kLr: return "lr";
    case Kind::kSvm: return "svm";
    case Kind::kDt: return "dt";
    case Kind::kRf: return "rf";
    case Kind::kGbt: return "gbt";
    case Kind::kMlp: return "mlp";
  }
  return "?";
}

Kind parse_kind(const std::string& name) {
  for (Kind k : {Kind::kNb, Kind::kLr, Kind::kSvm, Kind::kDt, Kind::kRf, Kind::kGbt, Kind::kMlp}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown classifier kind '" + name + "'");
}

nlohmann::json param_to_json(const ParamValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  return std::get<std::string>(v);
}

ParamValue param_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return std::string(j.get<bool>() ? "true" : "false");
  throw ConfigError("parameter values must be numbers or strings");
}

std::string param_text(const ParamValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return format_short(*d);
  return std::get<std::string>(v);
}

const std::vector<ParamDomain>& param_schema(Kind k) {
  static const std::vector<ParamDomain> nb;
  static const std::vector<ParamDomain> lr = {
      choice("regularizer", {"l1", "l2", "elasticnet"}, "l2"),
      choice("optimizer", {"newton-cg", "lbfgs", "liblinear"}, "lbfgs"),
      numeric("alpha", 0.0, 1e6, false, 1e-4),
      numeric("max_iter", 1, 1e6, true, 5000)};
  static const std::vector<ParamDomain> svm = {
      choice("regularizer", {"l1", "l2"}, "l2"),
      choice("loss", {"hinge", "squared-hinge"}, "hinge"),
      numeric("alpha", 0.0, 1e6, false, 1e-3),
      numeric("max_iter", 1, 1e6, true, 1000)};
  static const std::vector<ParamDomain> dt = {
      choice("criterion", {"gini", "entropy"}, "gini"),
      numeric("maxdepth", 1, 10, true, 5)};
  static const std::vector<ParamDomain> rf = {
      choice("criterion", {"gini", "entropy"}, "gini"),
      numeric("maxdepth", 1, 10, true, 10),
      numeric("estimators", 1, 1000, true, 100),
      choice("bootstrap", {"true", "false"}, "true"),
      choice("max_features", {"sqrt", "all"}, "sqrt")};
  static const std::vector<ParamDomain> gbt = {
      choice("loss", {"deviance", "exponential"}, "deviance"),
      numeric("learning_rate", 0.0, 1.0, false, 0.1),
      numeric("maxdepth", 1, 10, true, 3),
      numeric("estimators", 1, 1000, true, 50)};
  static const std::vector<ParamDomain> mlp = {
      choice("activation", {"logistic", "tanh", "relu"}, "relu"),
      choice("solver", {"adam", "sgd"}, "adam"),
      numeric("learning_rate", 1e-9, 10.0, false, 1e-3),
      numeric("epochs", 1, 1e5, true, 200),
      numeric("batch_size", 1, 1e6, true, 32)};
  switch (k) {
    case Kind::kNb: return nb;
    case Kind::kLr: return lr;
    case Kind::kSvm: return svm;
    case Kind::kDt: return dt;
    case Kind::kRf: return rf;
    case Kind::kGbt: return gbt;
    case Kind::kMlp: return mlp;
  }
  return nb;
}

Grid default_grid(Kind k) {
  auto depths = [] {
    std::vector<ParamValue> v;
    for (int i = 1; i <= 10; ++i) v.emplace_back(static_cast<double>(i));
    return v;
  };
  auto strings = [](std::initializer_list<const char*> xs) {
    std::vector<ParamValue> v;
    for (const char* s : xs) v.emplace_back(std::string(s));
    return v;
  };
  auto numbers = [](std::initializer_list<double> xs) {
    return std::vector<ParamValue>(xs.begin(), xs.end());
  };
  switch (k) {
    case Kind::kNb: return {};
    case Kind::kLr:
      return {{"regularizer", strings({"l1", "l2", "elasticnet"})},
              {"optimizer", strings({"newton-cg", "lbfgs", "liblinear"})}};
    case Kind::kSvm:
      return {{"regularizer", strings({"l1", "l2"})}, {"loss", strings({"hinge", "squared-hinge"})}};
    case Kind::kDt: return {{"criterion", strings({"gini", "entropy"})}, {"maxdepth", depths()}};
    case Kind::kRf:
      return {{"criterion", strings({"gini", "entropy"})},
              {"maxdepth", depths()},
              {"estimators", numbers({10, 20, 50, 100, 200})}};
    case Kind::kGbt:
      return {{"loss", strings({"deviance", "exponential"})},
              {"learning_rate", numbers({0.001, 0.01, 0.1})},
              {"maxdepth", depths()},
              {"estimators", numbers({10, 20, 50})}};
    case Kind::kMlp:
      return {{"activation", strings({"logistic", "tanh", "relu"})},
              {"solver", strings({"adam", "sgd"})}};
  }
  return {};
}

namespace {

const ParamDomain* find_in(const std::vector<ParamDomain>& schema, const std::string& name) {
  for (const auto& d : schema) {
    if (d.name == name) return &d;
  }
  return nullptr;
}

}  // namespace

void validate_params(const std::string& owner, const std::vector<ParamDomain>& schema,
                     const Params& params) {
  for (const auto& [name, value] : params) {
    const ParamDomain* d = find_in(schema, name);
    if (!d) throw ConfigError(owner + ": unknown parameter '" + name + "'");
    if (!d->choices.empty()) {
      const auto* s = std::get_if<std::string>(&value);
      if (!s || std::find(d->choices.begin(), d->choices.end(), *s) == d->choices.end()) {
        throw ConfigError(owner + ": invalid value for '" + name + "'");
      }
    } else {
      const auto* v = std::get_if<double>(&value);
      if (!v || !std::isfinite(*v) || *v < d->low || *v > d->high ||
          (d->integer && *v != std::floor(*v))) {
        throw ConfigError(owner + ": parameter '" + name + "' out of range");
      }
    }
  }
}

double param_number(const std::string& owner, const std::vector<ParamDomain>& schema,
                    const Params& params, const std::string& name) {
  const ParamDomain* d = find_in(schema, name);
  if (!d || !d->choices.empty()) throw ConfigError(owner + ": no numeric '" + name + "'");
  const auto it = params.find(name);
  return std::get<double>(it == params.end() ? d->fallback : it->second);
}

std::string param_choice(const std::string& owner, const std::vector<ParamDomain>& schema,
                         const Params& params, const std::string& name) {
  const ParamDomain* d = find_in(schema, name);
  if (!d || d->choices.empty()) throw ConfigError(owner + ": no choice '" + name + "'");
  const auto it = params.find(name);
  return std::get<std::string>(it == params.end() ? d->fallback : it->second);
}

std::string params_label(const std::string& owner, const Params& params) {
  std::string out = owner + "(";
  bool first = true;
  for (const auto& [name, value] : params) {
    if (!first) out += ",";
    out += name + "=" + param_text(value);
    first = false;
  }
  return out + ")";
}

void ClassifierConfig::validate() const {
  validate_params(kind_name(kind), param_schema(kind), params);
}

double ClassifierConfig::number(const std::string& name) const {
  return param_number(kind_name(kind), param_schema(kind), params, name);
}

std::string ClassifierConfig::text(const std::string& name) const {
  return param_choice(kind_name(kind), param_schema(kind), params, name);
}

std::string ClassifierConfig::label() const { return params_label(kind_name(kind), params); }

nlohmann::json ClassifierConfig::to_json() const {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [name, value] : params) p[name] = param_to_json(value);
  return {{"kind", kind_name(kind)}, {"params", p}, {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.kind = parse_kind(j.at("kind").get<std::string>());
  if (j.contains("params")) {
    for (const auto& [name, value] : j.at("params").items()) c.params[name] = param_from_json(value);
  }
  c.seed = j.value("seed", std::uint64_t{0});
  c.validate();
  return c;
}

TrainedModel fit(const ClassifierConfig& config, const data::Dataset& train) {
  if (train.schema.has_categoricals()) {
    throw DataError("classify: categorical features must be one-hot encoded first");
  }
  return fit(config, train.values, train.label_vector(), train.schema.names());
}

TrainedModel fit(const ClassifierConfig& config, const Matrix& x, const Labels& y,
                 std::vector<std::string> feature_names) {
  config.validate();
  check_fit_input(x, y, feature_names);
  TrainedModel m;
  m.config = config;
  m.feature_names = std::move(feature_names);
  switch (config.kind) {
    case Kind::kNb: m.state = fit_nb(x, y); break;
    case Kind::kLr: m.state = fit_lr(config, x, y); break;
    case Kind::kSvm: m.state = fit_svm(config, x, y); break;
    case Kind::kDt: m.state = fit_dt(config, x, y); break;
    case Kind::kRf: m.state = fit_rf(config, x, y); break;
    case Kind::kGbt: m.state = fit_gbt(config, x, y); break;
    case Kind::kMlp: m.state = fit_mlp(config, x, y); break;
  }
  return m;
}

Vector decision_function(const TrainedModel& model, const Matrix& rows) {
  check_rows(model, rows);
  const Eigen::Index n = rows.rows();
  return std::visit(
      Overloaded{
          [&](const NaiveBayesState& s) -> Vector { return nb_log_odds(s, rows); },
          [&](const LinearState& s) -> Vector { return (rows * s.coef).array() + s.bias; },
          [&](const TreeState& s) -> Vector {
            Vector out(n);
            for (Eigen::Index i = 0; i < n; ++i) out(i) = s.tree.predict(rows.row(i));
            return out;
          },
          [&](const ForestState& s) -> Vector {
            Vector out = Vector::Zero(n);
            for (const auto& t : s.trees) {
              for (Eigen::Index i = 0; i < n; ++i) out(i) += t.predict(rows.row(i)) >= 0.5 ? 1.0 : 0.0;
            }
            return out / static_cast<double>(s.trees.size());
          },
          [&](const BoostState& s) -> Vector {
            Vector out = Vector::Constant(n, s.init);
            for (const auto& t : s.trees) {
              for (Eigen::Index i = 0; i < n; ++i) out(i) += s.learning_rate * t.predict(rows.row(i));
            }
            return out;
          },
          [&](const MlpState& s) -> Vector {
            return neural::forward_trace(s.net, rows).pre.back().col(0);
          }},
      model.state);
}

Vector predict_proba(const TrainedModel& model, const Matrix& rows) {
  Vector score = decision_function(model, rows);
  std::visit(Overloaded{[&](const TreeState&) {}, [&](const ForestState&) {},
                        [&](const BoostState& s) {
                          for (auto& v : score) v = boost_proba(s, v);
                        },
                        [&](const auto&) {
                          for (auto& v : score) v = sigmoid(v);
                        }},
             model.state);
  return score;
}

Labels predict(const TrainedModel& model, const Matrix& rows) {
  const Vector p = predict_proba(model, rows);
  Labels out(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p(i) >= 0.5 ? 1 : 0;
  return out;
}

std::vector<Vector> staged_proba(const TrainedModel& model, const Matrix& rows) {
  check_rows(model, rows);
  const auto* s = std::get_if<BoostState>(&model.state);
  if (!s) throw ModelError("staged_proba: model is not gbt");
  std::vector<Vector> out;
  Vector f = Vector::Constant(rows.rows(), s->init);
  auto emit = [&] {
    Vector p = f;
    for (auto& v : p) v = boost_proba(*s, v);
    out.push_back(std::move(p));
  };
  emit();
  for (const auto& t : s->trees) {
    for (Eigen::Index i = 0; i < rows.rows(); ++i) f(i) += s->learning_rate * t.predict(rows.row(i));
    emit();
  }
  return out;
}

bool Rule::matches(const Eigen::Ref<const RowVector>& row) const {
  for (const auto& c : conditions) {
    const double v = row(static_cast<Eigen::Index>(c.feature));
    if (c.lower && !(v > *c.lower)) return false;
    if (c.upper && !(v <= *c.upper)) return false;
  }
  return true;
}

std::string Rule::text(const std::vector<std::string>& names) const {
  std::string out = "IF ";
  if (conditions.empty()) out += "TRUE";
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    const auto& c = conditions[i];
    if (i > 0) out += " AND ";
    const std::string& name = names.at(c.feature);
    if (c.lower && c.upper) {
      out += format_short(*c.lower) + " < " + name + " ≤ " + format_short(*c.upper);
    } else if (c.upper) {
      out += name + " ≤ " + format_short(*c.upper);
    } else {
      out += name + " > " + format_short(*c.lower);
    }
  }
  out += predicted == 1 ? " THEN Positive Class" : " THEN Negative Class";
  return out;
}

std::vector<Rule> extract_rules(const TrainedModel& model) {
  const auto* s = std::get_if<TreeState>(&model.state);
  if (!s) throw ModelError("extract_rules: model is not a decision tree");
  const auto& nodes = s->tree.nodes;
  std::vector<Rule> rules;
  auto walk = [&](auto&& self, std::size_t i, std::vector<Condition> path) -> void {
    const tree::Node& n = nodes[i];
    if (n.is_leaf()) {
      Rule r;
      r.conditions = std::move(path);
      r.predicted = n.value >= 0.5 ? 1 : 0;
      r.support = n.samples;
      const std::size_t agree = r.predicted == 1 ? n.positives : n.samples - n.positives;
      r.purity = n.samples ? static_cast<double>(agree) / static_cast<double>(n.samples) : 0.0;
      r.leaf = i;
      rules.push_back(std::move(r));
      return;
    }
    const auto f = static_cast<std::size_t>(n.feature);
    auto bound = [&](bool left) {
      std::vector<Condition> p = path;
      auto it = std::find_if(p.begin(), p.end(), [&](const Condition& c) { return c.feature == f; });
      if (it == p.end()) {
        p.push_back(Condition{f, std::nullopt, std::nullopt});
        it = p.end() - 1;
      }
      if (left) {
        it->upper = it->upper ? std::min(*it->upper, n.threshold) : n.threshold;
      } else {
        it->lower = it->lower ? std::max(*it->lower, n.threshold) : n.threshold;
      }
      return p;
    };
    self(self, static_cast<std::size_t>(n.left), bound(true));
    self(self, static_cast<std::size_t>(n.right), bound(false));
  };
  walk(walk, 0, {});
  return rules;
}

std::string render_rules(const std::vector<Rule>& rules, const std::vector<std::string>& names) {
  std::ostringstream out;
  for (const auto& r : rules) {
    out << r.text(names) << "  [support=" << r.support << ", purity=" << format_short(r.purity)
        << "]\n";
  }
  return out.str();
}

nlohmann::json to_json(const TrainedModel& model) {
  nlohmann::json state = std::visit(
      Overloaded{
          [](const NaiveBayesState& s) -> nlohmann::json {
            return {{"type", "nb"},
                    {"log_prior", {format_double(s.log_prior[0]), format_double(s.log_prior[1])}},
                    {"mean", matrix_json(s.mean)},
                    {"variance", matrix_json(s.variance)}};
          },
          [](const LinearState& s) -> nlohmann::json {
            return {{"type", "linear"}, {"coef", vector_json(s.coef)}, {"bias", format_double(s.bias)}};
          },
          [](const TreeState& s) -> nlohmann::json {
            return {{"type", "tree"}, {"tree", tree::to_json(s.tree)}};
          },
          [](const ForestState& s) -> nlohmann::json {
            auto trees = nlohmann::json::array();
            for (const auto& t : s.trees) trees.push_back(tree::to_json(t));
            return {{"type", "forest"}, {"trees", trees}};
          },
          [](const BoostState& s) -> nlohmann::json {
            auto trees = nlohmann::json::array();
            for (const auto& t : s.trees) trees.push_back(tree::to_json(t));
            return {{"type", "boost"},
                    {"init", format_double(s.init)},
                    {"learning_rate", format_double(s.learning_rate)},
                    {"exponential", s.exponential},
                    {"trees", trees}};
          },
          [](const MlpState& s) -> nlohmann::json {
            return {{"type", "mlp"}, {"network", neural::to_json(s.net)}};
          }},
      model.state);
  return {{"format", "fraudkit.model"},
          {"version", 1},
          {"config", model.config.to_json()},
          {"features", model.feature_names},
          {"state", state}};
}

TrainedModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "fraudkit.model" || j.value("version", 0) != 1) {
    throw DataError("model: unsupported document format/version");
  }
  TrainedModel m;
  m.config = ClassifierConfig::from_json(j.at("config"));
  m.feature_names = j.at("features").get<std::vector<std::string>>();
  const auto& s = j.at("state");
  const std::string type = s.at("type").get<std::string>();
  if (type == "nb") {
    NaiveBayesState st;
    st.log_prior[0] = parse_number(s.at("log_prior")[0]);
    st.log_prior[1] = parse_number(s.at("log_prior")[1]);
    st.mean = matrix_from(s.at("mean"));
    st.variance = matrix_from(s.at("variance"));
    m.state = st;
  } else if (type == "linear") {
    m.state = LinearState{vector_from(s.at("coef")), parse_number(s.at("bias"))};
  } else if (type == "tree") {
    m.state = TreeState{tree::tree_from_json(s.at("tree"))};
  } else if (type == "forest") {
    ForestState st;
    for (const auto& t : s.at("trees")) st.trees.push_back(tree::tree_from_json(t));
    m.state = std::move(st);
  } else if (type == "boost") {
    BoostState st;
    st.init = parse_number(s.at("init"));
    st.learning_rate = parse_number(s.at("learning_rate"));
    st.exponential = s.at("exponential").get<bool>();
    for (const auto& t : s.at("trees")) st.trees.push_back(tree::tree_from_json(t));
    m.state = std::move(st);
  } else if (type == "mlp") {
    m.state = MlpState{neural::network_from_json(s.at("network"))};
  } else {
    throw DataError("model: unknown state type '" + type + "'");
  }
  return m;
}

}  // namespace fraudkit::classify
