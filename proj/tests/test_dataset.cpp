#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "tabadv/dataset.hpp"
#include "test_util.hpp"

using namespace tabadv;

namespace {

Schema tiny_schema() {
  Schema s;
  s.continuous_names = {"income", "amount"};
  s.discrete_names = {"state"};
  s.label_name = "grade";
  s.label_alphabet = {"A", "B", "C", "D", "E", "F", "G"};
  return s;
}

}  // namespace

TEST_CASE("load_csv maps grades through the alphabet") {
  const auto dir = testutil::temp_dir("csv1");
  const auto path = testutil::write_file(dir + "/loans.csv",
                                         "income,amount,state,grade\n"
                                         "50000,1000,CA,A\n"
                                         "42000,2500,NY,B\n"
                                         "18000,900,CA,G\n");
  const Dataset ds = load_csv(path, tiny_schema());
  CHECK(ds.n() == 3);
  CHECK(ds.y == std::vector<int>{0, 1, 6});
  CHECK(ds.dropped_rows == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_csv rejects a file missing the label column") {
  const auto dir = testutil::temp_dir("csv2");
  const auto path = testutil::write_file(dir + "/loans.csv",
                                         "income,amount,state\n50000,1000,CA\n");
  CHECK_THROWS_WITH_AS(load_csv(path, tiny_schema()), "missing column: grade", SchemaError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_csv drops rows with unparseable continuous fields") {
  // Hand-built 4-row fixture: row 3 has a non-numeric income and must be the
  // only casualty.
  const auto dir = testutil::temp_dir("csv3");
  const auto path = testutil::write_file(dir + "/loans.csv",
                                         "income,amount,state,grade\n"
                                         "50000,1000,CA,A\n"
                                         "42000,2500,NY,C\n"
                                         "oops,2500,NY,B\n"
                                         "18000,900,TX,G\n");
  const Dataset ds = load_csv(path, tiny_schema());
  CHECK(ds.n() == 3);
  CHECK(ds.dropped_rows == 1);
  CHECK(ds.y == std::vector<int>{0, 2, 6});
  CHECK(ds.raw_continuous(0, 0) == 50000.0);
  CHECK(ds.raw_continuous(2, 1) == 900.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_csv gives stable sorted category codes and one-hot blocks") {
  const auto dir = testutil::temp_dir("csv4");
  const auto path = testutil::write_file(dir + "/loans.csv",
                                         "income,amount,state,grade\n"
                                         "1,2,TX,A\n"
                                         "3,4,CA,B\n"
                                         "5,6,NY,C\n"
                                         "7,8,CA,D\n");
  const Dataset ds = load_csv(path, tiny_schema());
  REQUIRE(ds.schema.discrete_categories.size() == 1);
  CHECK(ds.schema.discrete_categories[0] ==
        std::vector<std::string>{"CA", "NY", "TX"});
  // Every one-hot block sums to exactly 1 per row.
  const int off = ds.schema.onehot_offset(0);
  for (int i = 0; i < ds.n(); ++i) {
    double sum = 0;
    for (int c = 0; c < 3; ++c) sum += ds.x(i, off + c);
    CHECK(sum == 1.0);
  }
  CHECK(ds.x(0, off + 2) == 1.0);  // TX
  CHECK(ds.x(1, off + 0) == 1.0);  // CA
  std::filesystem::remove_all(dir);
}

TEST_CASE("fit_standardize matches the hand-computed z-scores") {
  Dataset ds;
  ds.schema.continuous_names = {"v"};
  ds.schema.label_name = "grade";
  ds.schema.label_alphabet = {"A", "B"};
  ds.raw_continuous.resize(3, 1);
  ds.raw_continuous << 1, 2, 3;
  ds.x = ds.raw_continuous;
  ds.y = {0, 1, 0};

  const auto [std_ds, stats] = fit_standardize(ds);
  // Population std of {1,2,3}: sqrt(2/3).
  CHECK(stats.mean[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(stats.std[0] == doctest::Approx(0.816496580927726).epsilon(1e-12));
  CHECK(std_ds.x(0, 0) == doctest::Approx(-1.224744871391589).epsilon(1e-12));
  CHECK(std_ds.x(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std_ds.x(2, 0) == doctest::Approx(1.224744871391589).epsilon(1e-12));
}

TEST_CASE("fit_standardize is a no-op on already normalized data") {
  Dataset ds;
  ds.schema.continuous_names = {"v"};
  ds.schema.label_name = "grade";
  ds.schema.label_alphabet = {"A", "B"};
  ds.raw_continuous.resize(2, 1);
  ds.raw_continuous << -1, 1;  // mean 0, population std 1
  ds.x = ds.raw_continuous;
  ds.y = {0, 1};
  const auto [std_ds, stats] = fit_standardize(ds);
  CHECK(std::abs(std_ds.x(0, 0) - (-1.0)) < 1e-9);
  CHECK(std::abs(std_ds.x(1, 0) - 1.0) < 1e-9);
}

TEST_CASE("fit_standardize rejects constant columns by name") {
  Dataset ds;
  ds.schema.continuous_names = {"flat"};
  ds.schema.label_name = "grade";
  ds.schema.label_alphabet = {"A", "B"};
  ds.raw_continuous.resize(3, 1);
  ds.raw_continuous << 5, 5, 5;
  ds.x = ds.raw_continuous;
  ds.y = {0, 1, 0};
  CHECK_THROWS_WITH_AS(fit_standardize(ds), "degenerate feature (zero variance): flat",
                       DataError);
}

TEST_CASE("standardized fit split has mean 0 and std 1 within 1e-6") {
  const auto spec = SyntheticSpec::default_spec();
  const Dataset raw = synth_generate(11, 500, spec);
  const auto [ds, stats] = fit_standardize(raw);
  for (int j = 0; j < ds.schema.n_continuous(); ++j) {
    const double mean = ds.x.col(j).mean();
    const double var = (ds.x.col(j).array() - mean).square().sum() / ds.n();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
  }
}

TEST_CASE("apply_standardize round-trips and checks dimensions") {
  const auto spec = SyntheticSpec::default_spec();
  const Dataset raw = synth_generate(3, 50, spec);
  const auto [fit_ds, stats] = fit_standardize(raw);

  const Dataset applied = apply_standardize(raw, stats);
  const Eigen::MatrixXd back =
      unstandardize_continuous(applied.x.leftCols(stats.size()), stats);
  CHECK((back - raw.raw_continuous).cwiseAbs().maxCoeff() < 1e-9);

  // Values equal to the mean standardize to exactly 0.
  Eigen::MatrixXd at_mean = stats.mean.transpose();
  const Eigen::MatrixXd z = standardize_continuous(at_mean, stats);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);

  StandardizationStats wrong;
  wrong.mean = Eigen::VectorXd::Zero(3);
  wrong.std = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_AS(apply_standardize(raw, wrong), DimensionError);
}

TEST_CASE("synth_generate is a pure function of seed, n, spec") {
  const auto spec = SyntheticSpec::default_spec();
  const Dataset a = synth_generate(123, 200, spec);
  const Dataset b = synth_generate(123, 200, spec);
  CHECK(a.x == b.x);
  CHECK(a.raw_continuous == b.raw_continuous);
  CHECK(a.y == b.y);
  const Dataset c = synth_generate(124, 200, spec);
  CHECK(a.x != c.x);
}

TEST_CASE("synth_generate validates inputs") {
  auto spec = SyntheticSpec::default_spec();
  CHECK_THROWS_AS(synth_generate(1, 0, spec), ConfigError);
  spec.class_variances(0, 0) = 0.0;
  CHECK_THROWS_AS(synth_generate(1, 10, spec), ConfigError);
  spec = SyntheticSpec::default_spec();
  spec.discrete_probs[0][0][0] += 1e-3;
  CHECK_THROWS_AS(synth_generate(1, 10, spec), ConfigError);
}

TEST_CASE("synthetic one-hot blocks are exact") {
  const auto spec = SyntheticSpec::default_spec();
  const Dataset ds = synth_generate(5, 300, spec);
  for (int d = 0; d < ds.schema.n_discrete(); ++d) {
    const int off = ds.schema.onehot_offset(d);
    const int card = static_cast<int>(ds.schema.discrete_categories[d].size());
    for (int i = 0; i < ds.n(); ++i) {
      double sum = 0;
      int ones = 0;
      for (int c = 0; c < card; ++c) {
        const double v = ds.x(i, off + c);
        CHECK((v == 0.0 || v == 1.0));
        sum += v;
        ones += v == 1.0 ? 1 : 0;
      }
      CHECK(sum == 1.0);
      CHECK(ones == 1);
    }
  }
}

TEST_CASE("split partitions deterministically") {
  const auto spec = SyntheticSpec::default_spec();
  const Dataset ds = synth_generate(7, 10, spec);

  const auto [train, test] = split(ds, 0.2, 99);
  CHECK(train.n() == 8);
  CHECK(test.n() == 2);

  const auto [train2, test2] = split(ds, 0.2, 99);
  CHECK(train.x == train2.x);
  CHECK(test.x == test2.x);

  // Partition: every original row appears exactly once across the two sides.
  std::multiset<double> orig, parts;
  for (int i = 0; i < ds.n(); ++i) orig.insert(ds.raw_continuous(i, 0));
  for (int i = 0; i < train.n(); ++i) parts.insert(train.raw_continuous(i, 0));
  for (int i = 0; i < test.n(); ++i) parts.insert(test.raw_continuous(i, 0));
  CHECK(orig == parts);

  CHECK_THROWS_AS(split(ds, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split(ds, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(split(ds, 0.01, 1), DataError);  // empty test side
}

TEST_CASE("dataset artifact round-trips bit-exactly") {
  const auto fx = testutil::make_fixture(3, 40, 10);
  const auto dir = testutil::temp_dir("dsio");
  fx.train.save(dir + "/train.json");
  const Dataset back = Dataset::load(dir + "/train.json");
  CHECK(back.x == fx.train.x);
  CHECK(back.raw_continuous == fx.train.raw_continuous);
  CHECK(back.y == fx.train.y);
  REQUIRE(back.stats.has_value());
  CHECK(back.stats->mean == fx.train.stats->mean);
  CHECK(back.stats->std == fx.train.stats->std);
  CHECK(back.fingerprint() == fx.train.fingerprint());
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic spec JSON round-trip preserves the distribution") {
  const auto spec = SyntheticSpec::default_spec();
  const auto j = spec.to_json();
  const auto back = SyntheticSpec::from_json(j);
  const Dataset a = synth_generate(17, 60, spec);
  const Dataset b = synth_generate(17, 60, back);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
}
