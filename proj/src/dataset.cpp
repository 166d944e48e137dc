#include "tabadv/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "tabadv/common.hpp"

namespace tabadv {

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  threads = std::min(threads, n);
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
        next.store(n);
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

void Schema::validate() const {
  if (continuous_names.empty() && discrete_names.empty())
    throw SchemaError("schema has no features");
  std::set<std::string> seen;
  for (const auto& n : continuous_names)
    if (!seen.insert(n).second) throw SchemaError("duplicate feature name: " + n);
  for (const auto& n : discrete_names)
    if (!seen.insert(n).second)
      throw SchemaError("feature name in both continuous and discrete lists: " + n);
  if (n_classes() < 2) throw SchemaError("label alphabet needs at least 2 classes");
  if (!discrete_categories.empty() &&
      discrete_categories.size() != discrete_names.size())
    throw SchemaError("discrete_categories size does not match discrete_names");
}

nlohmann::json Schema::to_json() const {
  return nlohmann::json{{"continuous_names", continuous_names},
                        {"discrete_names", discrete_names},
                        {"discrete_categories", discrete_categories},
                        {"label_name", label_name},
                        {"label_alphabet", label_alphabet}};
}

Schema Schema::from_json(const nlohmann::json& j) {
  Schema s;
  s.continuous_names = j.at("continuous_names").get<std::vector<std::string>>();
  s.discrete_names = j.at("discrete_names").get<std::vector<std::string>>();
  if (j.contains("discrete_categories"))
    s.discrete_categories =
        j.at("discrete_categories").get<std::vector<std::vector<std::string>>>();
  s.label_name = j.at("label_name").get<std::string>();
  s.label_alphabet = j.at("label_alphabet").get<std::vector<std::string>>();
  return s;
}

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto n = static_cast<Eigen::Index>(j.size());
  if (n == 0) return Eigen::MatrixXd(0, 0);
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(n, cols);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  return m;
}

}  // namespace

nlohmann::json StandardizationStats::to_json() const {
  return nlohmann::json{{"mean", to_std(mean)}, {"std", to_std(std)}};
}

StandardizationStats StandardizationStats::from_json(const nlohmann::json& j) {
  StandardizationStats s;
  s.mean = from_std(j.at("mean").get<std::vector<double>>());
  s.std = from_std(j.at("std").get<std::vector<double>>());
  return s;
}

std::uint64_t Dataset::fingerprint() const {
  std::uint64_t h = fnv1a64(x.data(), sizeof(double) * static_cast<std::size_t>(x.size()));
  h = fnv1a64(raw_continuous.data(),
              sizeof(double) * static_cast<std::size_t>(raw_continuous.size()), h);
  h = fnv1a64(y.data(), sizeof(int) * y.size(), h);
  return h;
}

nlohmann::json Dataset::to_json() const {
  nlohmann::json j{{"format_version", 1},
                   {"kind", "dataset"},
                   {"schema", schema.to_json()},
                   {"x", matrix_to_json(x)},
                   {"y", y},
                   {"raw_continuous", matrix_to_json(raw_continuous)},
                   {"dropped_rows", dropped_rows}};
  if (stats) j["stats"] = stats->to_json();
  return j;
}

Dataset Dataset::from_json(const nlohmann::json& j) {
  Dataset ds;
  ds.schema = Schema::from_json(j.at("schema"));
  ds.x = matrix_from_json(j.at("x"));
  ds.y = j.at("y").get<std::vector<int>>();
  ds.raw_continuous = matrix_from_json(j.at("raw_continuous"));
  ds.dropped_rows = j.at("dropped_rows").get<std::int64_t>();
  if (j.contains("stats")) ds.stats = StandardizationStats::from_json(j.at("stats"));
  if (ds.x.rows() > 0 && ds.x.cols() == 0 && ds.schema.feature_dim() > 0)
    ds.x.resize(ds.x.rows(), ds.schema.feature_dim());
  return ds;
}

void Dataset::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json().dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

namespace {

// Splits one CSV record, honoring double quotes ("" escapes a quote).
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  const char* begin = t.data();
  const char* end = begin + t.size();
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

}  // namespace

Dataset load_csv(const std::string& path, Schema schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);

  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError("empty file: " + path);
  const std::vector<std::string> header = split_csv_line(header_line);

  auto column_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return static_cast<int>(i);
    throw SchemaError("missing column: " + name);
  };

  std::vector<int> cont_cols, disc_cols;
  for (const auto& n : schema.continuous_names) cont_cols.push_back(column_of(n));
  for (const auto& n : schema.discrete_names) disc_cols.push_back(column_of(n));
  const int label_col = column_of(schema.label_name);

  const int nc = schema.n_continuous();
  const int nd = schema.n_discrete();
  std::vector<std::vector<double>> cont_rows;
  std::vector<std::vector<std::string>> disc_rows;
  std::vector<int> labels;
  std::int64_t dropped = 0;

  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    bool ok = true;
    std::vector<double> cont(nc);
    std::vector<std::string> disc(nd);
    for (int j = 0; j < nc && ok; ++j) {
      const auto c = static_cast<std::size_t>(cont_cols[j]);
      ok = c < fields.size() && parse_double(fields[c], cont[j]);
    }
    for (int d = 0; d < nd && ok; ++d) {
      const auto c = static_cast<std::size_t>(disc_cols[d]);
      ok = c < fields.size() && !trim(fields[c]).empty();
      if (ok) disc[d] = trim(fields[c]);
    }
    int label = -1;
    if (ok) {
      const auto c = static_cast<std::size_t>(label_col);
      if (c < fields.size()) label = schema.label_index(trim(fields[c]));
      ok = label >= 0;
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    cont_rows.push_back(std::move(cont));
    disc_rows.push_back(std::move(disc));
    labels.push_back(label);
  }

  const int n = static_cast<int>(labels.size());
  if (n == 0) throw DataError("no usable rows in " + path);

  // Discover categories from the surviving rows; sorted order gives stable codes.
  schema.discrete_categories.assign(nd, {});
  std::vector<std::map<std::string, int>> codes(nd);
  for (int d = 0; d < nd; ++d) {
    std::set<std::string> values;
    for (const auto& row : disc_rows) values.insert(row[d]);
    for (const auto& v : values) {
      codes[d][v] = static_cast<int>(schema.discrete_categories[d].size());
      schema.discrete_categories[d].push_back(v);
    }
  }

  Dataset ds;
  ds.schema = schema;
  ds.y = std::move(labels);
  ds.dropped_rows = dropped;
  ds.raw_continuous.resize(n, nc);
  ds.x = Eigen::MatrixXd::Zero(n, schema.feature_dim());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < nc; ++j) {
      ds.raw_continuous(i, j) = cont_rows[i][j];
      ds.x(i, j) = cont_rows[i][j];
    }
    for (int d = 0; d < nd; ++d)
      ds.x(i, schema.onehot_offset(d) + codes[d].at(disc_rows[i][d])) = 1.0;
  }
  return ds;
}

std::pair<Dataset, StandardizationStats> fit_standardize(const Dataset& ds) {
  if (ds.standardized()) throw DataError("dataset is already standardized");
  const int nc = ds.schema.n_continuous();
  const int n = ds.n();
  if (n == 0) throw DataError("empty dataset");

  StandardizationStats stats;
  stats.mean.resize(nc);
  stats.std.resize(nc);
  for (int j = 0; j < nc; ++j) {
    const double mean = ds.raw_continuous.col(j).mean();
    const double var =
        (ds.raw_continuous.col(j).array() - mean).square().sum() / static_cast<double>(n);
    if (var == 0.0)
      throw DataError("degenerate feature (zero variance): " +
                      ds.schema.continuous_names[j]);
    stats.mean[j] = mean;
    stats.std[j] = std::sqrt(var);
  }

  Dataset out = ds;
  out.x.leftCols(nc) = standardize_continuous(ds.raw_continuous, stats);
  out.stats = stats;
  return {std::move(out), stats};
}

Dataset apply_standardize(const Dataset& ds, const StandardizationStats& stats) {
  if (ds.standardized()) throw DataError("dataset is already standardized");
  if (stats.size() != ds.schema.n_continuous())
    throw DimensionError("stats dimension " + std::to_string(stats.size()) +
                         " does not match " + std::to_string(ds.schema.n_continuous()) +
                         " continuous features");
  Dataset out = ds;
  out.x.leftCols(stats.size()) = standardize_continuous(ds.raw_continuous, stats);
  out.stats = stats;
  return out;
}

Eigen::MatrixXd standardize_continuous(const Eigen::MatrixXd& raw,
                                       const StandardizationStats& stats) {
  if (raw.cols() != stats.size())
    throw DimensionError("standardize: feature count mismatch");
  return (raw.rowwise() - stats.mean.transpose()).array().rowwise() /
         stats.std.transpose().array();
}

Eigen::MatrixXd unstandardize_continuous(const Eigen::MatrixXd& z,
                                         const StandardizationStats& stats) {
  if (z.cols() != stats.size())
    throw DimensionError("unstandardize: feature count mismatch");
  return (z.array().rowwise() * stats.std.transpose().array()).rowwise() +
         stats.mean.transpose().array();
}

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<int>& idx) {
  Dataset out;
  out.schema = ds.schema;
  out.stats = ds.stats;
  out.dropped_rows = 0;
  out.x.resize(static_cast<Eigen::Index>(idx.size()), ds.x.cols());
  out.raw_continuous.resize(static_cast<Eigen::Index>(idx.size()), ds.raw_continuous.cols());
  out.y.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = ds.x.row(idx[i]);
    out.raw_continuous.row(static_cast<Eigen::Index>(i)) = ds.raw_continuous.row(idx[i]);
    out.y.push_back(ds.y[idx[i]]);
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction,
                                  std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must be in (0,1)");
  const int n = ds.n();
  const int n_test = static_cast<int>(std::llround(test_fraction * n));
  if (n_test < 1 || n_test >= n)
    throw DataError("split leaves an empty side (n=" + std::to_string(n) + ")");

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  const std::vector<int> test_idx(idx.begin(), idx.begin() + n_test);
  const std::vector<int> train_idx(idx.begin() + n_test, idx.end());
  return {take_rows(ds, train_idx), take_rows(ds, test_idx)};
}

void SyntheticSpec::validate() const {
  const int k = n_classes();
  const int nc = n_continuous();
  if (k < 2) throw ConfigError("synthetic spec needs at least 2 classes");
  if (nc < 1) throw ConfigError("synthetic spec needs at least 1 continuous feature");
  if (class_priors.size() != k || class_means.rows() != k || class_means.cols() != nc ||
      class_variances.rows() != k || class_variances.cols() != nc)
    throw ConfigError("synthetic spec dimensions are inconsistent");
  if ((class_variances.array() <= 0.0).any())
    throw ConfigError("synthetic spec has a non-positive variance");
  if (std::abs(class_priors.sum() - 1.0) > 1e-9 || (class_priors.array() < 0).any())
    throw ConfigError("class priors must be a probability vector");
  if (discrete_probs.size() != static_cast<std::size_t>(k))
    throw ConfigError("discrete_probs must have one entry per class");
  for (const auto& per_class : discrete_probs) {
    if (per_class.size() != discrete_names.size())
      throw ConfigError("discrete_probs must cover every discrete feature");
    for (std::size_t d = 0; d < per_class.size(); ++d) {
      const auto& p = per_class[d];
      if (p.size() != static_cast<Eigen::Index>(discrete_categories[d].size()))
        throw ConfigError("discrete probability length mismatch");
      if (std::abs(p.sum() - 1.0) > 1e-9 || (p.array() < 0).any())
        throw ConfigError("discrete probabilities must sum to 1");
    }
  }
}

Schema SyntheticSpec::schema() const {
  Schema s;
  s.continuous_names = continuous_names;
  s.discrete_names = discrete_names;
  s.discrete_categories = discrete_categories;
  s.label_name = "grade";
  s.label_alphabet = label_alphabet;
  return s;
}

nlohmann::json SyntheticSpec::to_json() const {
  nlohmann::json dp = nlohmann::json::array();
  for (const auto& per_class : discrete_probs) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& p : per_class) row.push_back(to_std(p));
    dp.push_back(std::move(row));
  }
  return nlohmann::json{{"continuous_names", continuous_names},
                        {"discrete_names", discrete_names},
                        {"discrete_categories", discrete_categories},
                        {"label_alphabet", label_alphabet},
                        {"class_priors", to_std(class_priors)},
                        {"class_means", matrix_to_json(class_means)},
                        {"class_variances", matrix_to_json(class_variances)},
                        {"discrete_probs", dp}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.continuous_names = j.at("continuous_names").get<std::vector<std::string>>();
  s.discrete_names = j.at("discrete_names").get<std::vector<std::string>>();
  s.discrete_categories =
      j.at("discrete_categories").get<std::vector<std::vector<std::string>>>();
  s.label_alphabet = j.at("label_alphabet").get<std::vector<std::string>>();
  s.class_priors = from_std(j.at("class_priors").get<std::vector<double>>());
  s.class_means = matrix_from_json(j.at("class_means"));
  s.class_variances = matrix_from_json(j.at("class_variances"));
  for (const auto& per_class : j.at("discrete_probs")) {
    std::vector<Eigen::VectorXd> row;
    for (const auto& p : per_class) row.push_back(from_std(p.get<std::vector<double>>()));
    s.discrete_probs.push_back(std::move(row));
  }
  s.validate();
  return s;
}

SyntheticSpec SyntheticSpec::default_spec() {
  SyntheticSpec s;
  s.continuous_names = {"fico_score",     "annual_income",  "loan_amount",
                        "debt_to_income", "loan_to_income", "revolving_util",
                        "employment_years", "num_credit_lines", "inquiries_6m",
                        "open_accounts"};
  s.discrete_names = {"home_ownership", "purpose"};
  s.discrete_categories = {{"MORTGAGE", "OWN", "RENT"},
                           {"credit_card", "debt_consolidation", "home_improvement", "other"}};
  s.label_alphabet = {"A", "B", "C", "D", "E", "F", "G"};

  const int k = 7;
  const int nc = 10;
  s.class_priors = Eigen::VectorXd::Constant(k, 1.0 / k);
  s.class_means.resize(k, nc);
  s.class_variances.resize(k, nc);

  // Grade g runs A(0)..G(6); worse grades mean lower FICO/income, higher
  // leverage. Per-feature {center, per-grade slope, within-class sigma}.
  // Class signal is concentrated in fico/income/dti, and the features whose
  // scale dwarfs their spread (fico, income) are exactly the ones a relative
  // perturbation moves furthest, so robustness against the max-salience
  // attacks genuinely competes with clean accuracy.
  struct F { double center, slope, sigma; };
  const F f[nc] = {
      {735.0, -21.0, 9.0},     // fico_score
      {95000.0, -9500.0, 5200.0},  // annual_income
      {12000.0, 380.0, 1200.0},    // loan_amount
      {12.0, 3.4, 1.8},        // debt_to_income
      {0.16, 0.012, 0.026},    // loan_to_income
      {0.35, 0.02, 0.055},     // revolving_util
      {8.0, -0.2, 2.6},        // employment_years
      {11.0, 0.25, 3.0},       // num_credit_lines
      {1.0, 0.15, 0.9},        // inquiries_6m
      {9.0, 0.1, 3.2},         // open_accounts
  };
  for (int g = 0; g < k; ++g) {
    for (int j = 0; j < nc; ++j) {
      s.class_means(g, j) = f[j].center + f[j].slope * (g - 3);
      s.class_variances(g, j) = f[j].sigma * f[j].sigma;
    }
  }

  // Mild class dependence for the discrete features.
  s.discrete_probs.resize(k);
  for (int g = 0; g < k; ++g) {
    const double t = static_cast<double>(g) / (k - 1);  // 0 at A, 1 at G
    Eigen::VectorXd home(3);
    home << 0.55 - 0.30 * t, 0.15, 0.30 + 0.30 * t;
    Eigen::VectorXd purpose(4);
    purpose << 0.30 - 0.12 * t, 0.40 + 0.20 * t, 0.15 - 0.05 * t, 0.15 - 0.03 * t;
    s.discrete_probs[g] = {home / home.sum(), purpose / purpose.sum()};
  }
  return s;
}

Dataset synth_generate(std::uint64_t seed, int n, const SyntheticSpec& spec) {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  spec.validate();

  const Schema schema = spec.schema();
  const int nc = schema.n_continuous();
  const int nd = schema.n_discrete();

  Dataset ds;
  ds.schema = schema;
  ds.raw_continuous.resize(n, nc);
  ds.x = Eigen::MatrixXd::Zero(n, schema.feature_dim());
  ds.y.resize(n);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto pick = [&](const Eigen::VectorXd& probs) {
    const double u = unif(rng);
    double acc = 0.0;
    for (Eigen::Index c = 0; c < probs.size(); ++c) {
      acc += probs[c];
      if (u < acc) return static_cast<int>(c);
    }
    return static_cast<int>(probs.size() - 1);
  };

  for (int i = 0; i < n; ++i) {
    const int g = pick(spec.class_priors);
    ds.y[i] = g;
    for (int j = 0; j < nc; ++j) {
      const double v =
          spec.class_means(g, j) + std::sqrt(spec.class_variances(g, j)) * normal(rng);
      ds.raw_continuous(i, j) = v;
      ds.x(i, j) = v;
    }
    for (int d = 0; d < nd; ++d)
      ds.x(i, schema.onehot_offset(d) + pick(spec.discrete_probs[g][d])) = 1.0;
  }
  return ds;
}

}  // namespace tabadv
