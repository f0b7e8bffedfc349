#include "fraudkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "fraudkit/csv.hpp"

namespace fraudkit::data {

namespace {

std::string kind_name(FeatureKind kind) {
  return kind == FeatureKind::kNumeric ? "numeric" : "categorical";
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  while (*end == ' ' || *end == '\t') ++end;
  if (end == begin || *end != '\0' || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Canonical bit pattern so that NaN cells hash and compare as equal.
std::uint64_t cell_bits(double v) {
  if (std::isnan(v)) return 0x7ff8000000000000ULL;
  if (v == 0.0) v = 0.0;  // fold -0.0
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  return bits;
}

}  // namespace

bool is_null(double cell) { return std::isnan(cell); }
double null_cell() { return std::numeric_limits<double>::quiet_NaN(); }

// ---------------------------------------------------------------------------
// FeatureSchema

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features)
    : features_(std::move(features)) {
  std::set<std::string> seen;
  for (const auto& f : features_) {
    if (f.name.empty()) throw ConfigError("schema: empty feature name");
    if (!seen.insert(f.name).second) {
      throw ConfigError("schema: duplicate feature name '" + f.name + "'");
    }
    if (f.kind == FeatureKind::kCategorical) {
      if (f.categories.empty()) {
        throw ConfigError("schema: categorical feature '" + f.name +
                          "' has no categories");
      }
      std::set<std::string> cats(f.categories.begin(), f.categories.end());
      if (cats.size() != f.categories.size()) {
        throw ConfigError("schema: duplicate category in '" + f.name + "'");
      }
    } else if (!f.categories.empty()) {
      throw ConfigError("schema: numeric feature '" + f.name +
                        "' carries a category list");
    }
    if (f.range && !(f.range->low <= f.range->high)) {
      throw ConfigError("schema: feature '" + f.name + "' has low > high");
    }
  }
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  out.reserve(features_.size());
  for (const auto& f : features_) out.push_back(f.name);
  return out;
}

bool FeatureSchema::has_categoricals() const {
  return std::any_of(features_.begin(), features_.end(), [](const auto& f) {
    return f.kind == FeatureKind::kCategorical;
  });
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : features_) {
    nlohmann::json j;
    j["name"] = f.name;
    j["kind"] = kind_name(f.kind);
    if (f.kind == FeatureKind::kCategorical) j["categories"] = f.categories;
    j["mutable"] = f.is_mutable;
    if (f.range) j["range"] = {f.range->low, f.range->high};
    if (!f.one_hot_group.empty()) j["one_hot_group"] = f.one_hot_group;
    arr.push_back(std::move(j));
  }
  return {{"features", arr}};
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
  try {
    std::vector<FeatureSpec> features;
    for (const auto& item : j.at("features")) {
      FeatureSpec f;
      f.name = item.at("name").get<std::string>();
      const auto kind = item.value("kind", std::string("numeric"));
      if (kind == "numeric") {
        f.kind = FeatureKind::kNumeric;
      } else if (kind == "categorical") {
        f.kind = FeatureKind::kCategorical;
        f.categories = item.at("categories").get<std::vector<std::string>>();
      } else {
        throw ConfigError("schema: unknown kind '" + kind + "'");
      }
      f.is_mutable = item.value("mutable", true);
      if (item.contains("range") && !item["range"].is_null()) {
        const auto& r = item["range"];
        f.range = Range{r.at(0).get<double>(), r.at(1).get<double>()};
      }
      f.one_hot_group = item.value("one_hot_group", std::string());
      features.push_back(std::move(f));
    }
    return FeatureSchema(std::move(features));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: malformed document: ") + e.what());
  }
}

FeatureSchema FeatureSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("schema: cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("schema: " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset

const Labels& Dataset::label_vector() const {
  if (!labels) throw DataError("dataset has no labels");
  return *labels;
}

std::size_t Dataset::count_label(int label) const {
  const auto& y = label_vector();
  return static_cast<std::size_t>(std::count(y.begin(), y.end(), label));
}

Dataset Dataset::subset(std::span<const std::size_t> row_indices) const {
  Dataset out;
  out.schema = schema;
  out.values.resize(static_cast<Eigen::Index>(row_indices.size()), values.cols());
  for (std::size_t i = 0; i < row_indices.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) =
        values.row(static_cast<Eigen::Index>(row_indices[i]));
  }
  if (labels) {
    Labels y;
    y.reserve(row_indices.size());
    for (auto r : row_indices) y.push_back((*labels)[r]);
    out.labels = std::move(y);
  }
  return out;
}

void Dataset::validate() const {
  if (cols() != schema.size()) {
    throw DataError("dataset: column count does not match schema");
  }
  if (labels) {
    if (labels->size() != rows()) {
      throw DataError("dataset: label count does not match row count");
    }
    for (int y : *labels) {
      if (y != 0 && y != 1) throw DataError("dataset: labels must be 0 or 1");
    }
  }
  for (std::size_t j = 0; j < cols(); ++j) {
    const auto& f = schema[j];
    if (f.kind != FeatureKind::kCategorical) continue;
    for (std::size_t i = 0; i < rows(); ++i) {
      const double v = values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (is_null(v)) continue;
      if (v < 0 || v >= static_cast<double>(f.categories.size()) || v != std::floor(v)) {
        throw DataError("dataset: bad category index in '" + f.name + "'");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// CSV

Dataset parse_csv(std::istream& in, const FeatureSchema& schema,
                  const std::optional<std::string>& label_column,
                  const CsvOptions& options) {
  auto records = csv::read_records(in);
  if (records.empty()) throw DataError("csv: missing header row");
  const auto& header = records.front();

  const std::size_t d = schema.size();
  std::vector<std::size_t> column_of_feature(d, header.size());
  std::optional<std::size_t> label_pos;
  std::set<std::string> header_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!header_names.insert(header[c]).second) {
      throw DataError("csv: duplicate header column '" + header[c] + "'");
    }
    if (label_column && header[c] == *label_column) {
      label_pos = c;
      continue;
    }
    auto idx = schema.index_of(header[c]);
    if (!idx) throw DataError("csv: header column '" + header[c] + "' not in schema");
    column_of_feature[*idx] = c;
  }
  for (std::size_t j = 0; j < d; ++j) {
    if (column_of_feature[j] == header.size()) {
      throw DataError("csv: header lacks schema feature '" + schema[j].name + "'");
    }
  }
  if (label_column && !label_pos) {
    throw DataError("csv: header lacks label column '" + *label_column + "'");
  }

  Dataset out;
  out.schema = schema;
  const std::size_t n = records.size() - 1;
  out.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Labels labels;
  if (label_pos) labels.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = records[i + 1];
    if (rec.size() != header.size()) {
      throw DataError("csv: row " + std::to_string(i + 1) + " has " +
                      std::to_string(rec.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      const std::string& cell = rec[column_of_feature[j]];
      double value = null_cell();
      const bool null_token = cell.empty() || cell == options.null_token;
      if (!null_token) {
        const auto& f = schema[j];
        if (f.kind == FeatureKind::kNumeric) {
          if (auto v = parse_number(cell)) value = *v;
        } else {
          auto it = std::find(f.categories.begin(), f.categories.end(), cell);
          if (it == f.categories.end()) {
            throw DataError("csv: unknown category '" + cell + "' for feature '" +
                            f.name + "'");
          }
          value = static_cast<double>(it - f.categories.begin());
        }
      }
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value;
    }
    if (label_pos) {
      const auto& cell = rec[*label_pos];
      if (cell == "0") {
        labels.push_back(0);
      } else if (cell == "1") {
        labels.push_back(1);
      } else {
        auto v = parse_number(cell);
        if (!v || (*v != 0.0 && *v != 1.0)) {
          throw DataError("csv: label '" + cell + "' on row " +
                          std::to_string(i + 1) + " is not 0/1");
        }
        labels.push_back(static_cast<int>(*v));
      }
    }
  }
  if (label_pos) out.labels = std::move(labels);
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema,
                 const std::optional<std::string>& label_column,
                 const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("csv: cannot open " + path.string());
  return parse_csv(in, schema, label_column, options);
}

void write_csv(std::ostream& out, const Dataset& data, const std::string& label_column) {
  csv::Record header = data.schema.names();
  if (data.labels) header.push_back(label_column);
  csv::write_record(out, header);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    csv::Record rec;
    rec.reserve(header.size());
    for (std::size_t j = 0; j < data.cols(); ++j) {
      const double v = data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const auto& f = data.schema[j];
      if (is_null(v)) {
        rec.emplace_back();
      } else if (f.kind == FeatureKind::kCategorical) {
        rec.push_back(f.categories.at(static_cast<std::size_t>(v)));
      } else {
        rec.push_back(format_double(v));
      }
    }
    if (data.labels) rec.push_back(std::to_string((*data.labels)[i]));
    csv::write_record(out, rec);
  }
}

void write_csv(const std::filesystem::path& path, const Dataset& data,
               const std::string& label_column) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("csv: cannot write " + path.string());
  write_csv(out, data, label_column);
}

// ---------------------------------------------------------------------------
// Cleansing

Dataset cleanse(const Dataset& data, double null_feature_threshold) {
  if (!(null_feature_threshold >= 0.0 && null_feature_threshold <= 1.0)) {
    throw ConfigError("cleanse: threshold must lie in [0,1]");
  }
  const std::size_t n = data.rows();
  const std::size_t d = data.cols();

  // 1. exact duplicates, first occurrence kept
  std::vector<std::size_t> unique_rows;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
  auto same_row = [&](std::size_t a, std::size_t b) {
    for (std::size_t j = 0; j < d; ++j) {
      if (cell_bits(data.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j))) !=
          cell_bits(data.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)))) {
        return false;
      }
    }
    return !data.labels || (*data.labels)[a] == (*data.labels)[b];
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t h = data.labels ? static_cast<std::uint64_t>((*data.labels)[i]) : 0;
    for (std::size_t j = 0; j < d; ++j) {
      h = derive_seed(h, cell_bits(data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
    auto& bucket = buckets[h];
    const bool dup = std::any_of(bucket.begin(), bucket.end(),
                                 [&](std::size_t k) { return same_row(k, i); });
    if (!dup) {
      bucket.push_back(i);
      unique_rows.push_back(i);
    }
  }

  // 2. features that are mostly null
  std::vector<std::size_t> kept_features;
  for (std::size_t j = 0; j < d; ++j) {
    std::size_t nulls = 0;
    for (auto i : unique_rows) {
      if (is_null(data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))) ++nulls;
    }
    const double frac = unique_rows.empty()
                            ? 0.0
                            : static_cast<double>(nulls) / static_cast<double>(unique_rows.size());
    if (frac < null_feature_threshold) kept_features.push_back(j);
  }
  if (kept_features.empty()) throw DataError("cleanse: every feature was dropped");

  // 3. rows with any remaining null (no imputation)
  std::vector<std::size_t> kept_rows;
  for (auto i : unique_rows) {
    const bool any_null = std::any_of(kept_features.begin(), kept_features.end(), [&](auto j) {
      return is_null(data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    });
    if (!any_null) kept_rows.push_back(i);
  }
  if (kept_rows.empty()) throw DataError("cleanse: no rows survive");

  std::vector<FeatureSpec> specs;
  for (auto j : kept_features) specs.push_back(data.schema[j]);
  Dataset out;
  out.schema = FeatureSchema(std::move(specs));
  out.values.resize(static_cast<Eigen::Index>(kept_rows.size()),
                    static_cast<Eigen::Index>(kept_features.size()));
  for (std::size_t r = 0; r < kept_rows.size(); ++r) {
    for (std::size_t c = 0; c < kept_features.size(); ++c) {
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          data.values(static_cast<Eigen::Index>(kept_rows[r]),
                      static_cast<Eigen::Index>(kept_features[c]));
    }
  }
  if (data.labels) {
    Labels y;
    for (auto i : kept_rows) y.push_back((*data.labels)[i]);
    out.labels = std::move(y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// One-hot

std::string OneHotEncoding::decode(const OneHotGroup& group, std::span<const double> row) const {
  std::size_t best = 0;
  for (std::size_t c = 1; c < group.categories.size(); ++c) {
    if (row[group.first_column + c] > row[group.first_column + best]) best = c;
  }
  return group.categories[best];
}

nlohmann::json OneHotEncoding::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : groups) {
    arr.push_back({{"feature", g.feature},
                   {"categories", g.categories},
                   {"first_column", g.first_column}});
  }
  return {{"groups", arr}};
}

OneHotEncoding OneHotEncoding::from_json(const nlohmann::json& j) {
  OneHotEncoding enc;
  for (const auto& g : j.at("groups")) {
    enc.groups.push_back({g.at("feature").get<std::string>(),
                          g.at("categories").get<std::vector<std::string>>(),
                          g.at("first_column").get<std::size_t>()});
  }
  return enc;
}

Encoded encode_one_hot(const Dataset& data) {
  Encoded result;
  std::vector<FeatureSpec> specs;
  std::vector<std::pair<std::size_t, int>> source;  // (input column, category or -1)
  for (std::size_t j = 0; j < data.cols(); ++j) {
    const auto& f = data.schema[j];
    if (f.kind == FeatureKind::kNumeric) {
      specs.push_back(f);
      source.emplace_back(j, -1);
      continue;
    }
    result.encoding.groups.push_back({f.name, f.categories, specs.size()});
    for (std::size_t c = 0; c < f.categories.size(); ++c) {
      FeatureSpec col;
      col.name = f.name + "=" + f.categories[c];
      col.is_mutable = f.is_mutable;
      col.range = Range{0.0, 1.0};
      col.one_hot_group = f.name;
      specs.push_back(std::move(col));
      source.emplace_back(j, static_cast<int>(c));
    }
  }
  result.data.schema = FeatureSchema(std::move(specs));
  result.data.labels = data.labels;
  result.data.values.resize(data.values.rows(), static_cast<Eigen::Index>(source.size()));
  for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
    for (std::size_t c = 0; c < source.size(); ++c) {
      const double v = data.values(i, static_cast<Eigen::Index>(source[c].first));
      if (is_null(v)) throw DataError("encode_one_hot: input contains nulls");
      result.data.values(i, static_cast<Eigen::Index>(c)) =
          source[c].second < 0 ? v : (static_cast<int>(v) == source[c].second ? 1.0 : 0.0);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Normalization

nlohmann::json NormParams::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"feature", e.feature}, {"min", format_double(e.min)},
                   {"max", format_double(e.max)}});
  }
  return {{"entries", arr}};
}

NormParams NormParams::from_json(const nlohmann::json& j) {
  NormParams p;
  for (const auto& e : j.at("entries")) {
    p.entries.push_back({e.at("feature").get<std::string>(),
                         std::stod(e.at("min").get<std::string>()),
                         std::stod(e.at("max").get<std::string>())});
  }
  return p;
}

NormParams fit_normalize(const Dataset& data) {
  NormParams params;
  for (std::size_t j = 0; j < data.cols(); ++j) {
    const auto& f = data.schema[j];
    if (f.kind != FeatureKind::kNumeric || !f.one_hot_group.empty()) continue;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
      const double v = data.values(i, static_cast<Eigen::Index>(j));
      if (is_null(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (lo > hi) lo = hi = 0.0;  // all null
    params.entries.push_back({f.name, lo, hi});
  }
  return params;
}

namespace {

template <typename Fn>
Dataset transform_normalized(const Dataset& data, const NormParams& params, Fn fn) {
  Dataset out = data;
  std::vector<FeatureSpec> specs = data.schema.features();
  for (const auto& e : params.entries) {
    auto idx = data.schema.index_of(e.feature);
    if (!idx) throw DataError("normalize: feature '" + e.feature + "' missing from data");
    const auto col = static_cast<Eigen::Index>(*idx);
    for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
      double& v = out.values(i, col);
      if (!is_null(v)) v = fn(v, e);
    }
    if (auto& r = specs[*idx].range) {
      double a = fn(r->low, e);
      double b = fn(r->high, e);
      r = Range{std::min(a, b), std::max(a, b)};
    }
  }
  out.schema = FeatureSchema(std::move(specs));
  return out;
}

}  // namespace

Dataset apply_normalize(const Dataset& data, const NormParams& params) {
  return transform_normalized(data, params, [](double v, const NormParams::Entry& e) {
    const double span = e.max - e.min;
    return span > 0.0 ? (v - e.min) / span : 0.0;
  });
}

Dataset invert_normalize(const Dataset& data, const NormParams& params) {
  return transform_normalized(data, params, [](double v, const NormParams::Entry& e) {
    return e.min + v * (e.max - e.min);
  });
}

// ---------------------------------------------------------------------------
// Splits

SplitPair stratified_split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("stratified_split: fraction must lie in [0,1]");
  }
  const auto& y = data.label_vector();
  std::mt19937_64 rng(seed);
  SplitPair split;
  split.seed = seed;
  split.train_fraction = train_fraction;
  for (int label : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == label) idx.push_back(i);
    }
    if (idx.size() < 2) {
      throw DataError("stratified_split: class " + std::to_string(label) +
                      " has fewer than 2 rows");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = std::min<std::size_t>(
        idx.size(), static_cast<std::size_t>(
                        round_half_up(static_cast<double>(idx.size()) * train_fraction)));
    split.train_rows.insert(split.train_rows.end(), idx.begin(),
                            idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test_rows.insert(split.test_rows.end(),
                           idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(split.train_rows.begin(), split.train_rows.end());
  std::sort(split.test_rows.begin(), split.test_rows.end());
  split.train = data.subset(split.train_rows);
  split.test = data.subset(split.test_rows);
  return split;
}

SplitPair occ_split(const Dataset& data) {
  const auto& y = data.label_vector();
  SplitPair split;
  for (std::size_t i = 0; i < y.size(); ++i) {
    (y[i] == 0 ? split.train_rows : split.test_rows).push_back(i);
  }
  if (split.train_rows.empty()) throw DataError("occ_split: no negative rows to train on");
  if (split.test_rows.empty()) throw DataError("occ_split: no positive rows to test on");
  split.train = data.subset(split.train_rows);
  split.test = data.subset(split.test_rows);
  split.train_fraction =
      static_cast<double>(split.train_rows.size()) / static_cast<double>(y.size());
  return split;
}

void write_split(const std::filesystem::path& dir, const SplitPair& split,
                 const std::string& label_column) {
  std::filesystem::create_directories(dir);
  write_csv(dir / "train.csv", split.train, label_column);
  write_csv(dir / "test.csv", split.test, label_column);
  nlohmann::ordered_json manifest;
  manifest["format"] = "fraudkit.split";
  manifest["version"] = 1;
  manifest["seed"] = split.seed;
  manifest["train_fraction"] = split.train_fraction;
  manifest["train_rows"] = split.train_rows.size();
  manifest["test_rows"] = split.test_rows.size();
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace fraudkit::data
