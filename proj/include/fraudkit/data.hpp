#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fraudkit/types.hpp"
#include "json.hpp"

namespace fraudkit::data {

enum class FeatureKind { kNumeric, kCategorical };

struct Range {
  double low = 0.0;
  double high = 1.0;
  bool contains(double v) const { return v >= low && v <= high; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
  std::vector<std::string> categories;  // categorical only
  bool is_mutable = true;
  std::optional<Range> range;
  // Non-empty on the 0/1 columns produced by one-hot encoding; names the
  // categorical feature the column came from.
  std::string one_hot_group;

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  // Throws ConfigError when an invariant is violated.
  explicit FeatureSchema(std::vector<FeatureSpec> features);

  std::size_t size() const { return features_.size(); }
  const FeatureSpec& operator[](std::size_t i) const { return features_[i]; }
  const std::vector<FeatureSpec>& features() const { return features_; }
  std::optional<std::size_t> index_of(std::string_view name) const;
  std::vector<std::string> names() const;
  bool has_categoricals() const;

  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& j);
  static FeatureSchema load(const std::filesystem::path& path);

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

 private:
  std::vector<FeatureSpec> features_;
};

// Cells are doubles: numeric values as-is, categorical cells as the category
// index, null as NaN.
struct Dataset {
  FeatureSchema schema;
  Matrix values;
  std::optional<Labels> labels;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
  bool has_labels() const { return labels.has_value(); }
  // Throws DataError when the dataset is unlabeled.
  const Labels& label_vector() const;
  std::size_t count_label(int label) const;

  Dataset subset(std::span<const std::size_t> row_indices) const;
  // Schema kinds, category indices and label length; throws DataError.
  void validate() const;
};

bool is_null(double cell);
double null_cell();

struct CsvOptions {
  // Cells equal to this token (or empty) are null.
  std::string null_token = "NA";
};

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema,
                 const std::optional<std::string>& label_column,
                 const CsvOptions& options = {});
Dataset parse_csv(std::istream& in, const FeatureSchema& schema,
                  const std::optional<std::string>& label_column,
                  const CsvOptions& options = {});
void write_csv(const std::filesystem::path& path, const Dataset& data,
               const std::string& label_column = "label");
void write_csv(std::ostream& out, const Dataset& data,
               const std::string& label_column = "label");

inline constexpr double kDefaultNullFeatureThreshold = 0.9;

// Deduplicates rows (first kept), drops features whose null fraction reaches
// the threshold, then drops rows that still contain a null.
Dataset cleanse(const Dataset& data,
                double null_feature_threshold = kDefaultNullFeatureThreshold);

struct OneHotGroup {
  std::string feature;
  std::vector<std::string> categories;
  std::size_t first_column = 0;
  friend bool operator==(const OneHotGroup&, const OneHotGroup&) = default;
};

struct OneHotEncoding {
  std::vector<OneHotGroup> groups;

  // Category token for the group's block in an encoded row (argmax).
  std::string decode(const OneHotGroup& group, std::span<const double> row) const;
  nlohmann::json to_json() const;
  static OneHotEncoding from_json(const nlohmann::json& j);
  friend bool operator==(const OneHotEncoding&, const OneHotEncoding&) = default;
};

struct Encoded {
  Dataset data;
  OneHotEncoding encoding;
};

// Each categorical feature with c categories becomes c columns named
// "<feature>=<category>".
Encoded encode_one_hot(const Dataset& data);

struct NormParams {
  struct Entry {
    std::string feature;
    double min = 0.0;
    double max = 0.0;
  };
  std::vector<Entry> entries;

  nlohmann::json to_json() const;
  static NormParams from_json(const nlohmann::json& j);
};

// Min-max over the plain numeric features; one-hot and categorical columns
// are left alone.
NormParams fit_normalize(const Dataset& data);
Dataset apply_normalize(const Dataset& data, const NormParams& params);
Dataset invert_normalize(const Dataset& data, const NormParams& params);

struct SplitPair {
  Dataset train;
  Dataset test;
  std::uint64_t seed = 0;
  double train_fraction = 1.0;
  std::vector<std::size_t> train_rows;  // indices into the input
  std::vector<std::size_t> test_rows;
};

// Per-class train count is round_half_up(count * fraction). Row order within
// each part follows the input order.
SplitPair stratified_split(const Dataset& data, double train_fraction,
                           std::uint64_t seed);

// Train = all label-0 rows, test = all label-1 rows, input order preserved.
SplitPair occ_split(const Dataset& data);

// train.csv, test.csv and manifest.json under dir.
void write_split(const std::filesystem::path& dir, const SplitPair& split,
                 const std::string& label_column = "label");

}  // namespace fraudkit::data
