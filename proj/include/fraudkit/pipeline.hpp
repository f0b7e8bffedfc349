#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fraudkit/augment.hpp"
#include "fraudkit/classify.hpp"
#include "fraudkit/counterfactual.hpp"
#include "fraudkit/data.hpp"
#include "fraudkit/occ.hpp"
#include "fraudkit/resample.hpp"
#include "json.hpp"

// Config-driven experiment runner. Every stage reads and writes files under
// the output directory so stages can also be run one at a time.
namespace fraudkit::pipeline {

enum class PipelineKind { kBinary, kOcc };

// Overrides applied on top of augment::default_gan_spec.
struct GanOverrides {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> latent_dim;
  std::optional<double> learning_rate;
};

struct ClassifierSpec {
  classify::Kind kind = classify::Kind::kDt;
  classify::Grid grid;  // fixed parameters appear as one-value entries
};

struct ExplainSettings {
  std::optional<std::string> model;     // classifier label; default: first
  std::optional<std::string> balancer;  // balancer label; default: first
  std::string method = "auto";          // auto | exact | sampling | tree
  std::size_t rows = 50;                // leading test rows explained
  std::size_t background = 256;
  std::size_t permutations = 200;
};

struct CfSettings {
  std::optional<std::string> model;
  std::optional<std::string> balancer;
  std::vector<std::string> methods = {"random", "kdtree", "genetic"};
  std::size_t queries = 1;  // leading test rows not predicted desired_class
  int desired_class = 1;
  std::size_t total_cfs = 4;
  std::optional<std::vector<std::string>> features_to_vary;
  std::map<std::string, data::Range> permitted_ranges;
  double proximity_weight = 1.0;
  double diversity_weight = 3.0;
  std::size_t max_attempts = counterfactual::kDefaultMaxAttempts;
  counterfactual::GeneticOptions genetic;
};

struct ExperimentConfig {
  PipelineKind pipeline = PipelineKind::kBinary;
  std::filesystem::path data;
  std::filesystem::path schema;
  std::string label_column = "label";
  std::string null_token = "NA";
  double null_feature_threshold = data::kDefaultNullFeatureThreshold;
  double split_fraction = 0.8;
  std::size_t cv_folds = 10;
  std::uint64_t seed = 0;
  std::filesystem::path out = "results";

  std::vector<resample::BalancerConfig> balancers;
  GanOverrides gan;
  std::vector<ClassifierSpec> classifiers;
  std::vector<occ::DetectorConfig> detectors;
  ExplainSettings explain;
  CfSettings cf;

  // Relative paths resolve against base_dir. Throws ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j,
                                    const std::filesystem::path& base_dir = {});
  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

// Stage order used by run(): binary runs prep, balance, train, explain, cf
// and report; occ runs prep, occ and report.
std::vector<std::string> default_stages(PipelineKind kind);
bool is_stage(const std::string& name);

// Errors keep their category and gain a "stage <name>: " prefix.
void run_stage(const ExperimentConfig& config, const std::string& stage);
void run(const ExperimentConfig& config);

// Train-set balancing. vgan/wgan use default_gan_spec plus overrides.
data::Dataset balance(const data::Dataset& train, const resample::BalancerConfig& config,
                      const GanOverrides& gan = {});

// Order-sensitive FNV-1a hash over cell bit patterns and labels.
std::uint64_t row_hash(const data::Dataset& data);

// Logging to standard error; FRAUDKIT_LOG=quiet|info|debug (default info).
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace fraudkit::pipeline
