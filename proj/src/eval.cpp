#include "tabadv/eval.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "tabadv/common.hpp"

namespace tabadv {

namespace {

Dataset select_rows(const Dataset& ds, const std::vector<int>& idx) {
  Dataset out;
  out.schema = ds.schema;
  out.stats = ds.stats;
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

EfficacyCurve efficacy_sweep(const Classifier& model, const Dataset& test_ds,
                             const AttackConfig& base_cfg,
                             const std::vector<double>& budget_grid, int threads) {
  if (budget_grid.empty()) throw ConfigError("budget grid must be non-empty");
  if (budget_grid.front() < 0.0) throw ConfigError("budget grid must start at >= 0");
  for (std::size_t i = 1; i < budget_grid.size(); ++i)
    if (!(budget_grid[i] > budget_grid[i - 1]))
      throw ConfigError("budget grid must be strictly increasing");

  const std::vector<int> pred = predict(model, test_ds.x);
  std::vector<int> correct;
  for (int i = 0; i < test_ds.n(); ++i)
    if (pred[i] == test_ds.y[i]) correct.push_back(i);
  if (correct.empty()) throw DataError("no originally-correct samples to sweep");
  const Dataset attacked = select_rows(test_ds, correct);

  EfficacyCurve curve;
  curve.kind = base_cfg.kind;
  curve.base = base_cfg;
  curve.points.resize(budget_grid.size());

  parallel_for(static_cast<int>(budget_grid.size()), threads, [&](int k) {
    const AttackConfig cfg = base_cfg.with_budget(budget_grid[static_cast<std::size_t>(k)]);
    const AdversarialBatch batch = run_attack(model, attacked, cfg);
    EfficacyPoint& p = curve.points[static_cast<std::size_t>(k)];
    p.budget = budget_grid[static_cast<std::size_t>(k)];
    p.n_attacked = batch.n();
    p.n_flipped = batch.flip_count();
    p.flip_rate = batch.flip_rate();
    p.realized_avg_pct = batch.mean_pct_change();
  });
  return curve;
}

std::vector<SampleExhibit> sample_exhibits(const Classifier& model, const Dataset& test_ds,
                                           const AttackConfig& cfg, int n,
                                           std::optional<std::pair<int, int>> grade_filter) {
  if (n < 1) throw ConfigError("exhibit count must be >= 1");
  const AdversarialBatch batch = run_attack(model, test_ds, cfg);
  const int nc = test_ds.schema.n_continuous();

  std::vector<SampleExhibit> out;
  for (int i = 0; i < batch.n() && static_cast<int>(out.size()) < n; ++i) {
    if (!batch.flipped[i]) continue;
    if (grade_filter && (batch.pred_orig[i] != grade_filter->first ||
                         batch.pred_adv[i] != grade_filter->second))
      continue;
    SampleExhibit ex;
    ex.sample_id = i;
    ex.grade_before = test_ds.schema.label_alphabet[static_cast<std::size_t>(batch.pred_orig[i])];
    ex.grade_after = test_ds.schema.label_alphabet[static_cast<std::size_t>(batch.pred_adv[i])];
    for (int j = 0; j < nc; ++j) {
      const double before = batch.raw_orig(i, j);
      const double after = batch.raw_adv(i, j);
      if (after == before) continue;
      ExhibitFeature f;
      f.name = test_ds.schema.continuous_names[static_cast<std::size_t>(j)];
      f.raw_before = before;
      f.raw_after = after;
      f.pct_change = before != 0.0 ? (after - before) / before
                                   : std::numeric_limits<double>::quiet_NaN();
      ex.features.push_back(std::move(f));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_curve_csv(const std::string& path, const EfficacyCurve& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "attack,budget,realized_avg_pct,flip_rate,n\n";
  for (const auto& p : curve.points) {
    out << attack_kind_name(curve.kind) << ',' << format_double(p.budget) << ','
        << format_double(p.realized_avg_pct) << ',' << format_double(p.flip_rate) << ','
        << p.n_attacked << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_exhibits_csv(const std::string& path,
                        const std::vector<SampleExhibit>& exhibits) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "sample_id,grade_before,grade_after,feature,raw_before,raw_after,pct_change\n";
  for (const auto& ex : exhibits) {
    for (const auto& f : ex.features) {
      out << ex.sample_id << ',' << ex.grade_before << ',' << ex.grade_after << ','
          << f.name << ',' << format_double(f.raw_before) << ','
          << format_double(f.raw_after) << ',' << format_double(f.pct_change) << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_report(const std::string& dir, const ReportBundle& bundle,
                  const nlohmann::json& run_config, std::uint64_t master_seed,
                  std::uint64_t dataset_fingerprint) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir);

  nlohmann::json files = nlohmann::json::array();
  for (const auto& curve : bundle.curves) {
    const std::string name = "curve_" + attack_kind_name(curve.kind) + ".csv";
    write_curve_csv(dir + "/" + name, curve);
    files.push_back(name);
  }
  if (!bundle.exhibits.empty()) {
    write_exhibits_csv(dir + "/exhibits.csv", bundle.exhibits);
    files.push_back("exhibits.csv");
  }
  if (bundle.payoff) {
    write_payoff_csv(dir + "/payoff_loss.csv", dir + "/payoff_accuracy.csv", *bundle.payoff);
    files.push_back("payoff_loss.csv");
    files.push_back("payoff_accuracy.csv");
  }
  if (bundle.mwu_run) {
    write_trajectory_csv(dir + "/trajectory_mwu.csv", *bundle.mwu_run,
                         bundle.objective_names);
    files.push_back("trajectory_mwu.csv");
  }
  if (bundle.baseline_run) {
    write_trajectory_csv(dir + "/trajectory_baseline.csv", *bundle.baseline_run,
                         bundle.objective_names);
    files.push_back("trajectory_baseline.csv");
  }

  nlohmann::json manifest{{"version", "1.0.0"},
                          {"generator", "tabadv"},
                          {"master_seed", master_seed},
                          {"dataset_fingerprint", dataset_fingerprint},
                          {"config", run_config},
                          {"files", files}};
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw IoError("cannot write " + dir + "/manifest.json");
  out << manifest.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + dir + "/manifest.json");
}

}  // namespace tabadv
