#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fraudkit/classify.hpp"
#include "fraudkit/data.hpp"
#include "fraudkit/neural.hpp"
#include "json.hpp"

// One-class detectors fitted on legitimate rows. Every score follows the
// same orientation: higher = more anomalous.
namespace fraudkit::occ {

enum class DetectorKind { kOcsvm, kIforest, kCopod, kAbod, kMcd, kVae };

std::string kind_name(DetectorKind k);
DetectorKind parse_kind(const std::string& name);

const std::vector<classify::ParamDomain>& param_schema(DetectorKind k);
classify::Grid default_grid(DetectorKind k);

struct DetectorConfig {
  DetectorKind kind = DetectorKind::kIforest;
  classify::Params params;
  double contamination = 0.05;  // in (0, 0.5]
  std::uint64_t seed = 0;

  void validate() const;
  double number(const std::string& name) const;
  std::string text(const std::string& name) const;
  std::string label() const;
  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

// Minimum training rows per detector.
std::size_t minimum_rows(DetectorKind k);

struct OcsvmState {
  std::string kernel;
  double gamma = 1.0;
  Matrix support;  // rows with alpha > 0
  Vector alpha;    // dual weights, 0 <= alpha <= 1, sum = nu * n
  double rho = 0.0;
};

struct IsoNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::size_t size = 0;  // rows reaching a leaf
};

struct IForestState {
  std::vector<std::vector<IsoNode>> trees;
  std::size_t sample_size = 0;
};

struct CopodState {
  std::vector<std::vector<double>> sorted;  // per feature, ascending
  std::vector<double> skewness;
};

struct AbodState {
  Matrix train;
  std::size_t neighbours = 10;
};

struct McdState {
  Vector location;
  Matrix covariance;  // reweighted, consistency-corrected
  Matrix precision;
  Vector raw_location;
  Matrix raw_covariance;
  double raw_determinant = 0.0;  // of the best h-subset's covariance
  std::vector<std::size_t> raw_support;  // sorted h-subset
};

struct VaeState {
  neural::Network encoder;  // d -> 9 -> 10 -> 2*latent (mean, log-variance)
  neural::Network decoder;  // latent -> 9 -> 10 -> d
  std::size_t latent_dim = 2;
  std::vector<double> loss_history;
};

using DetectorState =
    std::variant<OcsvmState, IForestState, CopodState, AbodState, McdState, VaeState>;

struct TrainedDetector {
  DetectorConfig config;
  std::size_t feature_count = 0;
  DetectorState state;
  double threshold = 0.0;
};

TrainedDetector fit_detector(const DetectorConfig& config, const Matrix& negatives);
TrainedDetector fit_detector(const DetectorConfig& config, const data::Dataset& negatives);

Vector score(const TrainedDetector& det, const Matrix& rows);
// 1 iff score > threshold.
Labels classify(const TrainedDetector& det, const Matrix& rows);

// Sorted-score order statistic at 1-based rank ceil((1 - c) n): at most
// c*n training rows score strictly above it.
double quantile_threshold(const Vector& scores, double contamination);

// Fraction of ones; throws DataError on empty input.
double classification_rate(const Labels& predictions);

// Average unsuccessful-search path length: 2 H(m-1) - 2 (m-1) / m.
double iforest_c(std::size_t m);

// ABOD angle factor of `query` against its k nearest rows of `ref` at
// positive distance: variance over neighbour pairs (y, z) of
// <q-y, q-z> / (|q-y|^2 |q-z|^2).
double abod_factor(const Matrix& ref, const Eigen::Ref<const RowVector>& query, std::size_t k);

struct McdFit {
  std::vector<std::size_t> support;  // sorted
  Vector location;
  Matrix covariance;
  double determinant = 0.0;
};
// FAST-MCD over `starts` random (p+1)-subsets: two C-steps each, the ten
// best are iterated to convergence. Throws ModelError on singular data.
McdFit fast_mcd(const Matrix& x, std::size_t h, std::size_t starts, std::uint64_t seed);

// Reconstruction of the posterior mean, without sampling.
Matrix vae_reconstruct(const VaeState& s, const Matrix& rows);

nlohmann::json to_json(const TrainedDetector& det);
TrainedDetector detector_from_json(const nlohmann::json& j);

}  // namespace fraudkit::occ
