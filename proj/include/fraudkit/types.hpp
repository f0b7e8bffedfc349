#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fraudkit {

// Samples are rows. Row-major keeps a sample contiguous in memory.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Labels = std::vector<int>;

// Error categories map one-to-one onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class ModelError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

// Deterministic child seed for sub-streams (per tree, per fold, ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Half-up rounding for non-negative counts. The 1e-9 slack absorbs products
// such as 10 * 0.85 that land just below the .5 boundary.
inline long round_half_up(double x) {
  return static_cast<long>(std::floor(x + 0.5 + 1e-9));
}

// "%.17g": round-trips every finite double.
std::string format_double(double v);
// "%.6g" for human-facing tables.
std::string format_short(double v);

}  // namespace fraudkit
