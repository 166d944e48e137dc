#ifndef TABADV_EVAL_HPP
#define TABADV_EVAL_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tabadv/attacks.hpp"
#include "tabadv/dataset.hpp"
#include "tabadv/mlp.hpp"
#include "tabadv/robust.hpp"

namespace tabadv {

struct EfficacyPoint {
  double budget = 0.0;            // nominal epsilon (standardized) or percent (raw)
  double realized_avg_pct = 0.0;  // mean raw-space percent change actually applied
  double flip_rate = 0.0;         // flips / originally-correct samples
  int n_attacked = 0;
  int n_flipped = 0;
};

struct EfficacyCurve {
  AttackKind kind = AttackKind::None;
  AttackConfig base;
  std::vector<EfficacyPoint> points;
};

// Runs the attack over the originally-correct test samples at every budget in
// the grid. The grid must be strictly increasing and start at >= 0; budget 0
// always yields flip rate 0.
EfficacyCurve efficacy_sweep(const Classifier& model, const Dataset& test_ds,
                             const AttackConfig& base_cfg,
                             const std::vector<double>& budget_grid, int threads = 0);

struct ExhibitFeature {
  std::string name;
  double raw_before = 0.0;
  double raw_after = 0.0;
  double pct_change = 0.0;  // signed fraction; NaN when raw_before == 0
};

struct SampleExhibit {
  int sample_id = 0;
  std::string grade_before;
  std::string grade_after;
  std::vector<ExhibitFeature> features;  // exactly the nonzero-delta features
};

// Up to n flipped samples (optionally restricted to a from->to grade pair)
// with their raw-space before/after values.
std::vector<SampleExhibit> sample_exhibits(
    const Classifier& model, const Dataset& test_ds, const AttackConfig& cfg, int n,
    std::optional<std::pair<int, int>> grade_filter = std::nullopt);

void write_curve_csv(const std::string& path, const EfficacyCurve& curve);
void write_exhibits_csv(const std::string& path, const std::vector<SampleExhibit>& exhibits);

// Report bundle: every artifact of a run in one directory plus a manifest
// (semantic version, config echo, seeds, dataset fingerprint) that makes the
// bundle regenerable bit for bit.
struct ReportBundle {
  std::vector<EfficacyCurve> curves;
  std::vector<SampleExhibit> exhibits;
  std::optional<PayoffMatrix> payoff;
  std::optional<RobustRunResult> mwu_run;
  std::optional<RobustRunResult> baseline_run;
  std::vector<std::string> objective_names;
};

void write_report(const std::string& dir, const ReportBundle& bundle,
                  const nlohmann::json& run_config, std::uint64_t master_seed,
                  std::uint64_t dataset_fingerprint);

}  // namespace tabadv

#endif  // TABADV_EVAL_HPP
