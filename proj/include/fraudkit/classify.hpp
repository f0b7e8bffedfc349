#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fraudkit/data.hpp"
#include "fraudkit/neural.hpp"
#include "fraudkit/tree.hpp"
#include "json.hpp"

namespace fraudkit::classify {

enum class Kind { kNb, kLr, kSvm, kDt, kRf, kGbt, kMlp };

std::string kind_name(Kind k);
Kind parse_kind(const std::string& name);  // throws ConfigError

using ParamValue = std::variant<double, std::string>;
using Params = std::map<std::string, ParamValue>;

nlohmann::json param_to_json(const ParamValue& v);
ParamValue param_from_json(const nlohmann::json& j);
std::string param_text(const ParamValue& v);

// Hyperparameter schema for one kind. String parameters list their allowed
// values; numeric ones carry a closed range and an integer flag.
struct ParamDomain {
  std::string name;
  std::vector<std::string> choices;  // empty for numeric parameters
  double low = 0.0;
  double high = 0.0;
  bool integer = false;
  ParamValue fallback;
};
const std::vector<ParamDomain>& param_schema(Kind k);

// Shared by classifier and detector configs. `owner` prefixes messages.
void validate_params(const std::string& owner, const std::vector<ParamDomain>& schema,
                     const Params& params);  // throws ConfigError
double param_number(const std::string& owner, const std::vector<ParamDomain>& schema,
                    const Params& params, const std::string& name);
std::string param_choice(const std::string& owner, const std::vector<ParamDomain>& schema,
                         const Params& params, const std::string& name);
std::string params_label(const std::string& owner, const Params& params);

// The hyperparameter grid searched per kind.
using Grid = std::vector<std::pair<std::string, std::vector<ParamValue>>>;
Grid default_grid(Kind k);

struct ClassifierConfig {
  Kind kind = Kind::kDt;
  Params params;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  double number(const std::string& name) const;  // falls back to the schema default
  std::string text(const std::string& name) const;
  std::string label() const;  // e.g. "dt(criterion=gini,maxdepth=5)"
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

struct NaiveBayesState {
  double log_prior[2] = {0.0, 0.0};
  Matrix mean;      // 2 x d
  Matrix variance;  // 2 x d, floored at 1e-9
};

// lr and svm: score = bias + coef . x
struct LinearState {
  Vector coef;
  double bias = 0.0;
};

struct TreeState {
  tree::Tree tree;
};

struct ForestState {
  std::vector<tree::Tree> trees;
};

// Score F = init + learning_rate * sum of tree outputs. Deviance:
// proba = sigmoid(F). Exponential: proba = sigmoid(2F).
struct BoostState {
  double init = 0.0;
  double learning_rate = 0.1;
  bool exponential = false;
  std::vector<tree::Tree> trees;
};

struct MlpState {
  neural::Network net;
};

using ModelState =
    std::variant<NaiveBayesState, LinearState, TreeState, ForestState, BoostState, MlpState>;

struct TrainedModel {
  ClassifierConfig config;
  std::vector<std::string> feature_names;
  ModelState state;

  std::size_t feature_count() const { return feature_names.size(); }
};

// Both labels must be present; features numeric (one-hot already applied).
TrainedModel fit(const ClassifierConfig& config, const data::Dataset& train);
TrainedModel fit(const ClassifierConfig& config, const Matrix& x, const Labels& y,
                 std::vector<std::string> feature_names);

// Probability of the positive class, in [0,1].
Vector predict_proba(const TrainedModel& model, const Matrix& rows);
// 1 iff predict_proba >= 0.5.
Labels predict(const TrainedModel& model, const Matrix& rows);
// Raw score: log-odds (nb, lr, mlp), margin (svm), positive fraction (dt),
// vote fraction (rf), additive score F (gbt).
Vector decision_function(const TrainedModel& model, const Matrix& rows);

// gbt only: probabilities after 0, 1, ..., n_trees stages.
std::vector<Vector> staged_proba(const TrainedModel& model, const Matrix& rows);

struct Condition {
  std::size_t feature = 0;
  std::optional<double> lower;  // x > lower
  std::optional<double> upper;  // x <= upper
};

struct Rule {
  std::vector<Condition> conditions;  // in order of first use on the path
  int predicted = 0;
  std::size_t support = 0;
  double purity = 0.0;
  std::size_t leaf = 0;

  bool matches(const Eigen::Ref<const RowVector>& row) const;
  std::string text(const std::vector<std::string>& names) const;
};

// One rule per leaf of a dt model, depth-first, left before right.
std::vector<Rule> extract_rules(const TrainedModel& model);
std::string render_rules(const std::vector<Rule>& rules, const std::vector<std::string>& names);

nlohmann::json to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& j);

}  // namespace fraudkit::classify
