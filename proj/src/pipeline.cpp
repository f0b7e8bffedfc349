#include "fraudkit/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "fraudkit/csv.hpp"
#include "fraudkit/evaluate.hpp"
#include "fraudkit/explain.hpp"

namespace fraudkit::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

int log_level() {
  const char* env = std::getenv("FRAUDKIT_LOG");
  if (!env) return 1;
  const std::string v(env);
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

// ---------------------------------------------------------------------------
// Config parsing

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

classify::Grid grid_from_json(const json& j) {
  classify::Grid grid;
  for (const auto& [name, values] : j.items()) {
    std::vector<classify::ParamValue> vs;
    if (values.is_array()) {
      for (const auto& v : values) vs.push_back(classify::param_from_json(v));
    } else {
      vs.push_back(classify::param_from_json(values));
    }
    grid.emplace_back(name, std::move(vs));
  }
  return grid;
}

// "grid": "default" | {name: [values]}; "params": {name: value}.
ClassifierSpec classifier_from_json(const json& j) {
  ClassifierSpec spec;
  spec.kind = classify::parse_kind(j.at("kind").get<std::string>());
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (g.is_string()) {
      if (g.get<std::string>() != "default") throw ConfigError("classifier grid must be an object or \"default\"");
      spec.grid = classify::default_grid(spec.kind);
    } else {
      spec.grid = grid_from_json(g);
    }
  }
  if (j.contains("params")) {
    for (const auto& [name, value] : j.at("params").items()) {
      auto it = std::find_if(spec.grid.begin(), spec.grid.end(),
                             [&](const auto& e) { return e.first == name; });
      if (it != spec.grid.end()) throw ConfigError("classifier parameter '" + name + "' is both fixed and in the grid");
      spec.grid.emplace_back(name, std::vector<classify::ParamValue>{classify::param_from_json(value)});
    }
  }
  for (const auto& params : evaluate::expand_grid(spec.grid)) {
    classify::validate_params(classify::kind_name(spec.kind), classify::param_schema(spec.kind), params);
  }
  return spec;
}

std::vector<occ::DetectorConfig> detectors_from_json(const json& j) {
  std::vector<occ::DetectorConfig> out;
  if (!j.contains("grid")) {
    out.push_back(occ::DetectorConfig::from_json(j));
    return out;
  }
  json base = j;
  base.erase("grid");
  classify::Grid grid;
  const auto& g = j.at("grid");
  const auto kind = occ::parse_kind(j.at("kind").get<std::string>());
  grid = g.is_string() ? occ::default_grid(kind) : grid_from_json(g);
  for (const auto& params : evaluate::expand_grid(grid)) {
    json item = base;
    if (!item.contains("params")) item["params"] = json::object();
    for (const auto& [name, value] : params) item["params"][name] = classify::param_to_json(value);
    out.push_back(occ::DetectorConfig::from_json(item));
  }
  return out;
}

std::map<std::string, data::Range> ranges_from_json(const json& j) {
  std::map<std::string, data::Range> out;
  for (const auto& [name, r] : j.items()) {
    if (!r.is_array() || r.size() != 2) throw ConfigError("permitted range for '" + name + "' must be [low, high]");
    out[name] = data::Range{r[0].get<double>(), r[1].get<double>()};
  }
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

// ---------------------------------------------------------------------------
// File helpers

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string csv_line(const csv::Record& r) {
  std::ostringstream s;
  csv::write_record(s, r);
  return s.str();
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Labels are the method or kind name, suffixed "-2", "-3", ... on repeats.
template <typename T, typename NameFn>
std::vector<std::string> unique_labels(const std::vector<T>& items, NameFn name) {
  std::vector<std::string> out;
  std::map<std::string, int> seen;
  for (const auto& item : items) {
    const std::string base = name(item);
    const int k = ++seen[base];
    out.push_back(k == 1 ? base : base + "-" + std::to_string(k));
  }
  return out;
}

std::vector<std::string> balancer_labels(const ExperimentConfig& c) {
  return unique_labels(c.balancers, [](const resample::BalancerConfig& b) { return resample::method_name(b.method); });
}

std::vector<std::string> classifier_labels(const ExperimentConfig& c) {
  return unique_labels(c.classifiers, [](const ClassifierSpec& s) { return classify::kind_name(s.kind); });
}

std::vector<std::string> detector_labels(const ExperimentConfig& c) {
  return unique_labels(c.detectors, [](const occ::DetectorConfig& d) { return occ::kind_name(d.kind); });
}

// Seed streams.
std::uint64_t cv_seed(const ExperimentConfig& c) { return derive_seed(c.seed, 1); }
std::uint64_t balancer_seed(const ExperimentConfig& c, std::size_t i) { return derive_seed(c.seed, 1000 + i); }
std::uint64_t detector_seed(const ExperimentConfig& c, std::size_t i) { return derive_seed(c.seed, 2000 + i); }

// ---------------------------------------------------------------------------
// Prepared data

struct Prepared {
  data::Dataset train;
  data::Dataset test;
  data::OneHotEncoding encoding;
};

fs::path prep_dir(const ExperimentConfig& c) { return c.out / "prep"; }

json prep_fingerprint(const ExperimentConfig& c) {
  return {{"pipeline", c.pipeline == PipelineKind::kBinary ? "binary" : "occ"},
          {"data", c.data.string()},
          {"schema", c.schema.string()},
          {"label_column", c.label_column},
          {"null_token", c.null_token},
          {"null_feature_threshold", format_double(c.null_feature_threshold)},
          {"split_fraction", format_double(c.split_fraction)},
          {"seed", c.seed}};
}

void stage_prep(const ExperimentConfig& c) {
  const auto schema = data::FeatureSchema::load(c.schema);
  data::CsvOptions opts;
  opts.null_token = c.null_token;
  const auto raw = data::load_csv(c.data, schema, c.label_column, opts);
  if (!raw.has_labels()) throw DataError("prep: dataset has no label column");
  const auto clean = data::cleanse(raw, c.null_feature_threshold);
  const auto encoded = data::encode_one_hot(clean);
  const auto split = c.pipeline == PipelineKind::kBinary
                         ? data::stratified_split(encoded.data, c.split_fraction, c.seed)
                         : data::occ_split(encoded.data);
  // Normalization is fitted on the training part only.
  const auto norm = data::fit_normalize(split.train);
  const auto train = data::apply_normalize(split.train, norm);
  const auto test = data::apply_normalize(split.test, norm);

  const fs::path dir = prep_dir(c);
  fs::create_directories(dir);
  data::write_csv(dir / "train.csv", train, "label");
  data::write_csv(dir / "test.csv", test, "label");
  write_text(dir / "schema.json", train.schema.to_json().dump(2) + "\n");
  write_text(dir / "encoding.json", encoded.encoding.to_json().dump(2) + "\n");
  write_text(dir / "norm.json", norm.to_json().dump(2) + "\n");
  ojson manifest;
  manifest["format"] = "fraudkit.prep";
  manifest["version"] = 1;
  manifest["config"] = prep_fingerprint(c);
  manifest["rows_loaded"] = raw.rows();
  manifest["rows_cleansed"] = clean.rows();
  manifest["features_loaded"] = raw.cols();
  manifest["features_encoded"] = encoded.data.cols();
  manifest["train_rows"] = train.rows();
  manifest["test_rows"] = test.rows();
  manifest["train_positives"] = train.count_label(1);
  manifest["test_positives"] = test.count_label(1);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  log_info("prep: " + std::to_string(train.rows()) + " train rows, " + std::to_string(test.rows()) +
           " test rows, " + std::to_string(train.cols()) + " features");
}

// Reads the persisted prep artifacts, regenerating them when missing or
// produced by a different configuration.
Prepared load_prepared(const ExperimentConfig& c) {
  const fs::path dir = prep_dir(c);
  bool fresh = fs::exists(dir / "manifest.json");
  if (fresh) {
    const auto manifest = read_json(dir / "manifest.json");
    fresh = manifest.contains("config") && manifest.at("config") == prep_fingerprint(c);
  }
  if (!fresh) {
    log_info("prep artifacts missing or stale; running prep");
    stage_prep(c);
  }
  Prepared p;
  const auto schema = data::FeatureSchema::from_json(read_json(dir / "schema.json"));
  p.train = data::load_csv(dir / "train.csv", schema, std::string("label"));
  p.test = data::load_csv(dir / "test.csv", schema, std::string("label"));
  p.encoding = data::OneHotEncoding::from_json(read_json(dir / "encoding.json"));
  return p;
}

// ---------------------------------------------------------------------------
// Binary pipeline

std::string model_file(const std::string& balancer, const std::string& model) {
  return balancer + "__" + model + ".json";
}

void stage_balance(const ExperimentConfig& c) {
  const auto p = load_prepared(c);
  const auto labels = balancer_labels(c);
  for (std::size_t i = 0; i < c.balancers.size(); ++i) {
    auto b = c.balancers[i];
    b.seed = balancer_seed(c, i);
    const auto out = balance(p.train, b, c.gan);
    const fs::path dir = c.out / "balanced";
    fs::create_directories(dir);
    data::write_csv(dir / (labels[i] + ".csv"), out, "label");
    ojson m;
    m["format"] = "fraudkit.balanced";
    m["version"] = 1;
    m["method"] = resample::method_name(b.method);
    m["seed"] = b.seed;
    m["before"] = {{"negatives", p.train.count_label(0)}, {"positives", p.train.count_label(1)}};
    m["after"] = {{"negatives", out.count_label(0)}, {"positives", out.count_label(1)}};
    write_text(dir / (labels[i] + ".json"), m.dump(2) + "\n");
    log_info("balance " + labels[i] + ": " + std::to_string(p.train.rows()) + " -> " +
             std::to_string(out.rows()) + " rows");
  }
}

void stage_train(const ExperimentConfig& c) {
  const auto p = load_prepared(c);
  const std::uint64_t test_hash = row_hash(p.test);
  const auto blabels = balancer_labels(c);
  const auto clabels = classifier_labels(c);
  const auto names = p.train.schema.names();

  std::string metrics = csv_line({"model", "balancer", "params", "cv_auc", "cv_sensitivity",
                                  "cv_specificity", "auc", "sensitivity", "specificity",
                                  "train_rows"});
  std::string grid_csv = csv_line({"model", "balancer", "params", "cv_auc", "error"});
  std::string folds_csv = csv_line({"model", "balancer", "fold", "auc", "sensitivity", "specificity"});
  std::string ttest = csv_line({"balancer", "model_a", "model_b", "t", "p", "df", "note"});
  std::string rules;

  for (std::size_t bi = 0; bi < c.balancers.size(); ++bi) {
    auto bcfg = c.balancers[bi];
    bcfg.seed = balancer_seed(c, bi);
    evaluate::TrainPrep prep;
    if (bcfg.method != resample::Method::kNone) {
      prep = [&c, bcfg](const data::Dataset& train, std::size_t fold) {
        auto b = bcfg;
        b.seed = derive_seed(bcfg.seed, fold + 1);
        return balance(train, b, c.gan);
      };
    }
    const data::Dataset balanced = balance(p.train, bcfg, c.gan);
    std::vector<std::vector<double>> fold_auc(c.classifiers.size());

    for (std::size_t ci = 0; ci < c.classifiers.size(); ++ci) {
      const auto& spec = c.classifiers[ci];
      log_info("train " + clabels[ci] + " / " + blabels[bi]);
      const auto grid = evaluate::grid_search(spec.kind, spec.grid, p.train, c.cv_folds, cv_seed(c), prep);
      for (const auto& e : grid.entries) {
        grid_csv += csv_line({clabels[ci], blabels[bi], e.config.label(),
                              e.result ? format_short(e.result->mean.auc) : "", e.error});
      }
      const auto& best = grid.best();
      const auto& cv = *best.result;
      for (std::size_t f = 0; f < cv.folds.size(); ++f) {
        folds_csv += csv_line({clabels[ci], blabels[bi], std::to_string(f), format_short(cv.folds[f].auc),
                               format_short(cv.folds[f].sensitivity), format_short(cv.folds[f].specificity)});
        fold_auc[ci].push_back(cv.folds[f].auc);
      }
      const auto model = classify::fit(best.config, balanced);
      const auto m = evaluate::metrics(
          evaluate::confusion(p.test.label_vector(), classify::predict(model, p.test.values)));
      metrics += csv_line({clabels[ci], blabels[bi], best.config.label(), format_short(cv.mean.auc),
                           format_short(cv.mean.sensitivity), format_short(cv.mean.specificity),
                           format_short(m.auc), format_short(m.sensitivity), format_short(m.specificity),
                           std::to_string(balanced.rows())});
      write_text(c.out / "models" / model_file(blabels[bi], clabels[ci]),
                 classify::to_json(model).dump(2) + "\n");
      if (spec.kind == classify::Kind::kDt) {
        rules += "# " + clabels[ci] + " / " + blabels[bi] + ": " + best.config.label() + "\n";
        rules += classify::render_rules(classify::extract_rules(model), names) + "\n";
      }
    }

    for (std::size_t a = 0; a < c.classifiers.size(); ++a) {
      for (std::size_t b = a + 1; b < c.classifiers.size(); ++b) {
        try {
          const auto t = evaluate::paired_t_test(fold_auc[a], fold_auc[b]);
          ttest += csv_line({blabels[bi], clabels[a], clabels[b], format_short(t.t), format_short(t.p),
                             std::to_string(t.df), ""});
        } catch (const DataError& e) {
          ttest += csv_line({blabels[bi], clabels[a], clabels[b], "", "", "", e.what()});
        }
      }
    }
  }
  if (row_hash(p.test) != test_hash) throw ModelError("train: the test partition changed during training");

  write_text(c.out / "metrics.csv", metrics);
  write_text(c.out / "grid.csv", grid_csv);
  write_text(c.out / "cv_folds.csv", folds_csv);
  write_text(c.out / "ttest.csv", ttest);
  write_text(c.out / "rules.txt", rules.empty() ? "# no decision tree in this experiment\n" : rules);
}

struct LoadedModel {
  classify::TrainedModel model;
  std::string label;
};

LoadedModel load_model(const ExperimentConfig& c, const std::optional<std::string>& model,
                       const std::optional<std::string>& balancer, const std::string& stage) {
  const auto clabels = classifier_labels(c);
  const auto blabels = balancer_labels(c);
  const std::string m = model.value_or(clabels.front());
  const std::string b = balancer.value_or(blabels.front());
  if (std::find(clabels.begin(), clabels.end(), m) == clabels.end()) {
    throw ConfigError(stage + ": unknown model '" + m + "'");
  }
  if (std::find(blabels.begin(), blabels.end(), b) == blabels.end()) {
    throw ConfigError(stage + ": unknown balancer '" + b + "'");
  }
  const fs::path path = c.out / "models" / model_file(b, m);
  if (!fs::exists(path)) throw DataError(stage + ": " + path.string() + " not found; run the train stage first");
  return {classify::model_from_json(read_json(path)), m + " / " + b};
}

Matrix leading_rows(const Matrix& x, std::size_t n) {
  return x.topRows(static_cast<Eigen::Index>(std::min<std::size_t>(n, static_cast<std::size_t>(x.rows()))));
}

void stage_explain(const ExperimentConfig& c) {
  const auto p = load_prepared(c);
  const auto lm = load_model(c, c.explain.model, c.explain.balancer, "explain");
  const auto kind = lm.model.config.kind;
  explain::Method method;
  const std::string& name = c.explain.method;
  const bool treeish = kind == classify::Kind::kDt || kind == classify::Kind::kRf || kind == classify::Kind::kGbt;
  if (name == "tree") {
    method = explain::Method::kTree;
  } else if (name == "exact") {
    method = explain::Method::kExact;
  } else if (name == "sampling") {
    method = explain::Method::kSampling;
  } else if (treeish) {
    method = explain::Method::kTree;
  } else {
    method = p.train.cols() <= explain::kMaxExactFeatures ? explain::Method::kExact : explain::Method::kSampling;
  }
  const Matrix rows = leading_rows(p.test.values, c.explain.rows);
  const Matrix background = explain::sample_background(p.train.values, c.explain.background, derive_seed(c.seed, 3000));
  log_info("explain " + lm.label + ": " + std::to_string(rows.rows()) + " rows");
  const auto shap = explain::explain(lm.model, rows, background, method, c.explain.permutations,
                                     derive_seed(c.seed, 3001));
  {
    std::ostringstream s;
    explain::write_summary_csv(s, explain::summary_export(shap, rows));
    write_text(c.out / "shap_summary.csv", s.str());
  }
  {
    std::ostringstream s;
    explain::write_shap_csv(s, shap);
    write_text(c.out / "shap_values.csv", s.str());
  }
  std::string importance = csv_line({"feature", "mean_abs_shap"});
  for (const auto& [f, v] : explain::global_importance(shap)) importance += csv_line({f, format_short(v)});
  write_text(c.out / "shap_importance.csv", importance);
  if (shap.values.cols() >= 2 && shap.values.rows() >= 3) {
    const auto r = explain::redundancy_distances(shap);
    write_text(c.out / "shap_redundancy.json", r.tree_json(shap.feature_names).dump(2) + "\n");
  }
}

void stage_cf(const ExperimentConfig& c) {
  const auto p = load_prepared(c);
  const auto lm = load_model(c, c.cf.model, c.cf.balancer, "cf");
  Matrix all(p.train.values.rows() + p.test.values.rows(), p.train.values.cols());
  all << p.train.values, p.test.values;
  const auto schema = counterfactual::with_observed_ranges(p.train.schema, all);
  const auto proba = counterfactual::proba_of(lm.model);
  const Vector test_proba = proba(p.test.values);

  std::ostringstream report;
  report << "Counterfactuals for " << lm.label << " (desired class " << c.cf.desired_class << ")\n\n";
  std::size_t done = 0;
  for (Eigen::Index i = 0; i < p.test.values.rows() && done < c.cf.queries; ++i) {
    const int predicted = test_proba(i) >= 0.5 ? 1 : 0;
    if (predicted == c.cf.desired_class) continue;
    counterfactual::CFQuery q;
    q.instance = p.test.values.row(i);
    q.desired_class = c.cf.desired_class;
    q.total_cfs = c.cf.total_cfs;
    q.features_to_vary = c.cf.features_to_vary;
    q.permitted_ranges = c.cf.permitted_ranges;
    q.proximity_weight = c.cf.proximity_weight;
    q.diversity_weight = c.cf.diversity_weight;
    q.seed = derive_seed(c.seed, 4000 + done);
    for (const auto& method : c.cf.methods) {
      counterfactual::CFSet set;
      if (method == "random") {
        set = counterfactual::generate_random(schema, proba, q, c.cf.max_attempts);
      } else if (method == "kdtree") {
        set = counterfactual::generate_kdtree(schema, proba, q, p.train.values);
      } else {
        set = counterfactual::generate_genetic(schema, proba, q, c.cf.genetic);
      }
      report << "== test row " << i << ", method " << method << " ==\n";
      report << counterfactual::render_report(schema, q, predicted, set);
      if (set.size() > 0) {
        report << "Local feature importance:";
        for (const auto& [f, v] : counterfactual::local_importance(schema, q, set)) {
          report << " " << f << "=" << format_short(v);
        }
        report << "\n";
      }
      if (!set.reference_rows.empty()) {
        report << "Reference train rows:";
        for (auto r : set.reference_rows) report << " " << r;
        report << "\n";
      }
      report << "\n";
    }
    ++done;
  }
  if (done == 0) report << "No test row is predicted as the opposite of the desired class.\n";
  write_text(c.out / "cf_report.txt", report.str());
  log_info("cf: " + std::to_string(done) + " queries");
}

// ---------------------------------------------------------------------------
// OCC pipeline

void stage_occ(const ExperimentConfig& c) {
  const auto p = load_prepared(c);
  const auto labels = detector_labels(c);
  std::string cr = csv_line({"detector", "params", "contamination", "cr", "train_flag_rate"});
  for (std::size_t i = 0; i < c.detectors.size(); ++i) {
    auto d = c.detectors[i];
    d.seed = detector_seed(c, i);
    log_info("occ " + labels[i]);
    const auto det = occ::fit_detector(d, p.train);
    const double rate = occ::classification_rate(occ::classify(det, p.test.values));
    const double train_rate = occ::classification_rate(occ::classify(det, p.train.values));
    cr += csv_line({labels[i], d.label(), format_short(d.contamination), format_short(rate), format_short(train_rate)});
    write_text(c.out / "detectors" / (labels[i] + ".json"), occ::to_json(det).dump(2) + "\n");
  }
  write_text(c.out / "cr.csv", cr);
}

// ---------------------------------------------------------------------------
// Report

std::vector<csv::Record> read_csv_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("report: " + path.string() + " not found; run the earlier stages first");
  return csv::read_records(in);
}

std::string text_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()));
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c > 0) line += "  ";
      line += r[c] + std::string(width[c] - r[c].size(), ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

void stage_report(const ExperimentConfig& c) {
  std::string out;
  if (c.pipeline == PipelineKind::kBinary) {
    const auto rec = read_csv_records(c.out / "metrics.csv");
    const auto blabels = balancer_labels(c);
    const auto clabels = classifier_labels(c);
    std::map<std::pair<std::string, std::string>, csv::Record> cell;
    for (std::size_t i = 1; i < rec.size(); ++i) cell[{rec[i][0], rec[i][1]}] = rec[i];
    const std::vector<std::pair<std::string, std::size_t>> tables = {
        {"AUC (test)", 6}, {"Sensitivity (test)", 7}, {"Specificity (test)", 8}};
    for (const auto& [title, col] : tables) {
      std::vector<std::vector<std::string>> rows;
      std::vector<std::string> header = {"model"};
      header.insert(header.end(), blabels.begin(), blabels.end());
      rows.push_back(header);
      for (const auto& m : clabels) {
        std::vector<std::string> r = {m};
        for (const auto& b : blabels) {
          auto it = cell.find({m, b});
          r.push_back(it == cell.end() ? "-" : fixed3(std::stod(it->second[col])));
        }
        rows.push_back(std::move(r));
      }
      out += title + "\n" + text_table(rows) + "\n";
    }
  } else {
    const auto rec = read_csv_records(c.out / "cr.csv");
    std::vector<std::vector<std::string>> rows = {{"detector", "params", "CR"}};
    for (std::size_t i = 1; i < rec.size(); ++i) rows.push_back({rec[i][0], rec[i][1], fixed3(std::stod(rec[i][3]))});
    out += "Classification rate on positives\n" + text_table(rows);
  }
  write_text(c.out / "report.txt", out);
}

}  // namespace

// ---------------------------------------------------------------------------

void log_info(const std::string& message) {
  if (log_level() >= 1) std::cerr << "fraudkit: " << message << "\n";
}

void log_debug(const std::string& message) {
  if (log_level() >= 2) std::cerr << "fraudkit: " << message << "\n";
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known = {
        "pipeline", "data", "schema", "label_column", "null_token", "null_feature_threshold",
        "split_fraction", "cv_folds", "seed", "out", "balancer", "balancers", "gan",
        "classifiers", "detectors", "explain", "counterfactual"};
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    const auto pipeline = get_or<std::string>(j, "pipeline", "binary");
    if (pipeline == "binary") {
      c.pipeline = PipelineKind::kBinary;
    } else if (pipeline == "occ") {
      c.pipeline = PipelineKind::kOcc;
    } else {
      throw ConfigError("pipeline must be \"binary\" or \"occ\"");
    }
    c.data = resolve(base_dir, j.at("data").get<std::string>());
    c.schema = resolve(base_dir, j.at("schema").get<std::string>());
    c.label_column = get_or<std::string>(j, "label_column", c.label_column);
    c.null_token = get_or<std::string>(j, "null_token", c.null_token);
    c.null_feature_threshold = get_or<double>(j, "null_feature_threshold", c.null_feature_threshold);
    c.split_fraction = get_or<double>(j, "split_fraction", c.split_fraction);
    c.cv_folds = get_or<std::size_t>(j, "cv_folds", c.cv_folds);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.out = resolve(base_dir, get_or<std::string>(j, "out", c.out.string()));

    if (j.contains("balancer") && j.contains("balancers")) {
      throw ConfigError("give either \"balancer\" or \"balancers\", not both");
    }
    if (j.contains("balancer")) c.balancers.push_back(resample::BalancerConfig::from_json(j.at("balancer")));
    if (j.contains("balancers")) {
      for (const auto& b : j.at("balancers")) c.balancers.push_back(resample::BalancerConfig::from_json(b));
    }
    if (j.contains("gan")) {
      const auto& g = j.at("gan");
      if (g.contains("epochs")) c.gan.epochs = g.at("epochs").get<std::size_t>();
      if (g.contains("batch_size")) c.gan.batch_size = g.at("batch_size").get<std::size_t>();
      if (g.contains("latent_dim")) c.gan.latent_dim = g.at("latent_dim").get<std::size_t>();
      if (g.contains("learning_rate")) c.gan.learning_rate = g.at("learning_rate").get<double>();
    }
    if (j.contains("classifiers")) {
      for (const auto& item : j.at("classifiers")) c.classifiers.push_back(classifier_from_json(item));
    }
    if (j.contains("detectors")) {
      for (const auto& item : j.at("detectors")) {
        for (auto& d : detectors_from_json(item)) c.detectors.push_back(std::move(d));
      }
    }
    if (j.contains("explain")) {
      const auto& e = j.at("explain");
      if (e.contains("model")) c.explain.model = e.at("model").get<std::string>();
      if (e.contains("balancer")) c.explain.balancer = e.at("balancer").get<std::string>();
      c.explain.method = get_or<std::string>(e, "method", c.explain.method);
      c.explain.rows = get_or<std::size_t>(e, "rows", c.explain.rows);
      c.explain.background = get_or<std::size_t>(e, "background", c.explain.background);
      c.explain.permutations = get_or<std::size_t>(e, "permutations", c.explain.permutations);
    }
    if (j.contains("counterfactual")) {
      const auto& q = j.at("counterfactual");
      if (q.contains("model")) c.cf.model = q.at("model").get<std::string>();
      if (q.contains("balancer")) c.cf.balancer = q.at("balancer").get<std::string>();
      if (q.contains("methods")) c.cf.methods = q.at("methods").get<std::vector<std::string>>();
      c.cf.queries = get_or<std::size_t>(q, "queries", c.cf.queries);
      c.cf.desired_class = get_or<int>(q, "desired_class", c.cf.desired_class);
      c.cf.total_cfs = get_or<std::size_t>(q, "total_cfs", c.cf.total_cfs);
      if (q.contains("features_to_vary")) {
        c.cf.features_to_vary = q.at("features_to_vary").get<std::vector<std::string>>();
      }
      if (q.contains("permitted_ranges")) c.cf.permitted_ranges = ranges_from_json(q.at("permitted_ranges"));
      c.cf.proximity_weight = get_or<double>(q, "proximity_weight", c.cf.proximity_weight);
      c.cf.diversity_weight = get_or<double>(q, "diversity_weight", c.cf.diversity_weight);
      c.cf.max_attempts = get_or<std::size_t>(q, "max_attempts", c.cf.max_attempts);
      c.cf.genetic.generations = get_or<std::size_t>(q, "generations", c.cf.genetic.generations);
      c.cf.genetic.population = get_or<std::size_t>(q, "population", c.cf.genetic.population);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.pipeline == PipelineKind::kBinary && c.balancers.empty()) c.balancers.push_back({});
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (data.empty() || schema.empty()) throw ConfigError("config: data and schema paths are required");
  if (label_column.empty()) throw ConfigError("config: label_column must be set");
  if (cv_folds < 2) throw ConfigError("config: cv_folds must be at least 2");
  if (!(null_feature_threshold >= 0.0 && null_feature_threshold <= 1.0)) {
    throw ConfigError("config: null_feature_threshold must lie in [0,1]");
  }
  if (pipeline == PipelineKind::kOcc) {
    for (const auto& b : balancers) {
      if (b.method != resample::Method::kNone) {
        throw ConfigError("config: balancer '" + resample::method_name(b.method) +
                          "' cannot be used with the occ pipeline");
      }
    }
    if (detectors.empty()) throw ConfigError("config: the occ pipeline needs at least one detector");
    return;
  }
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError("config: split_fraction must lie in (0,1) for the binary pipeline");
  }
  if (classifiers.empty()) throw ConfigError("config: the binary pipeline needs at least one classifier");
  for (const auto& b : balancers) b.validate();
  static const std::set<std::string> methods = {"auto", "exact", "sampling", "tree"};
  if (!methods.contains(explain.method)) throw ConfigError("config: unknown explain method '" + explain.method + "'");
  for (const auto& m : cf.methods) {
    if (m != "random" && m != "kdtree" && m != "genetic") {
      throw ConfigError("config: unknown counterfactual method '" + m + "'");
    }
  }
  if (cf.desired_class != 0 && cf.desired_class != 1) throw ConfigError("config: desired_class must be 0 or 1");
  if (cf.total_cfs == 0) throw ConfigError("config: total_cfs must be positive");
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j, path.parent_path());
}

std::vector<std::string> default_stages(PipelineKind kind) {
  if (kind == PipelineKind::kOcc) return {"prep", "occ", "report"};
  return {"prep", "balance", "train", "explain", "cf", "report"};
}

bool is_stage(const std::string& name) {
  static const std::set<std::string> all = {"prep", "balance", "train", "occ", "explain", "cf", "report"};
  return all.contains(name);
}

void run_stage(const ExperimentConfig& config, const std::string& stage) {
  const bool binary_only = stage == "balance" || stage == "train" || stage == "explain" || stage == "cf";
  if (!is_stage(stage)) throw ConfigError("unknown stage '" + stage + "'");
  if (binary_only && config.pipeline != PipelineKind::kBinary) {
    throw ConfigError("stage " + stage + ": needs the binary pipeline");
  }
  if (stage == "occ" && config.pipeline != PipelineKind::kOcc) {
    throw ConfigError("stage occ: needs the occ pipeline");
  }
  const std::string prefix = "stage " + stage + ": ";
  try {
    if (stage == "prep") stage_prep(config);
    else if (stage == "balance") stage_balance(config);
    else if (stage == "train") stage_train(config);
    else if (stage == "occ") stage_occ(config);
    else if (stage == "explain") stage_explain(config);
    else if (stage == "cf") stage_cf(config);
    else stage_report(config);
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const ModelError& e) {
    throw ModelError(prefix + e.what());
  } catch (const fs::filesystem_error& e) {
    throw DataError(prefix + e.what());
  } catch (const json::exception& e) {
    throw DataError(prefix + e.what());
  }
}

void run(const ExperimentConfig& config) {
  for (const auto& stage : default_stages(config.pipeline)) run_stage(config, stage);
}

data::Dataset balance(const data::Dataset& train, const resample::BalancerConfig& config,
                      const GanOverrides& gan) {
  switch (config.method) {
    case resample::Method::kNone: return train;
    case resample::Method::kSmote: return resample::smote(train, config);
    case resample::Method::kSmoteEnn: return resample::smote_enn(train, config);
    case resample::Method::kSmoteTomek: return resample::smote_tomek(train, config);
    case resample::Method::kAdasyn: return resample::adasyn(train, config);
    case resample::Method::kVgan:
    case resample::Method::kWgan: {
      const auto variant = config.method == resample::Method::kVgan ? augment::GanVariant::kVgan
                                                                    : augment::GanVariant::kWgan;
      auto spec = augment::default_gan_spec(variant, train.cols());
      if (gan.epochs) spec.train.epochs = *gan.epochs;
      if (gan.batch_size) spec.train.batch_size = *gan.batch_size;
      if (gan.learning_rate) spec.train.learning_rate = *gan.learning_rate;
      if (gan.latent_dim) spec.latent_dim = *gan.latent_dim;
      spec.train.seed = derive_seed(config.seed, 7);
      return augment::gan_oversample(train, spec, config.target_ratio, config.seed);
    }
  }
  throw ConfigError("balance: unknown method");
}

std::uint64_t row_hash(const data::Dataset& data) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(data.values.rows()));
  mix(static_cast<std::uint64_t>(data.values.cols()));
  for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.values.cols(); ++j) mix(std::bit_cast<std::uint64_t>(data.values(i, j)));
    if (data.labels) mix(static_cast<std::uint64_t>((*data.labels)[static_cast<std::size_t>(i)]));
  }
  return h;
}

}  // namespace fraudkit::pipeline
