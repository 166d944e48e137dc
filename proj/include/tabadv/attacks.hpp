#ifndef TABADV_ATTACKS_HPP
#define TABADV_ATTACKS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tabadv/dataset.hpp"
#include "tabadv/mlp.hpp"

namespace tabadv {

// The gradient attacks (fgsm/pgd/jsma) spend an epsilon budget in
// standardized units; the max-salience attacks (msa1/msa2) apply a relative
// change in raw feature space. Discrete one-hot columns are never touched.
enum class AttackKind { None, Fgsm, Pgd, Jsma, Msa1, Msa2 };

std::string attack_kind_name(AttackKind kind);
AttackKind attack_kind_from_name(const std::string& name);

enum class JsmaTargetPolicy { AdjacentBetter, FixedTarget };

struct AttackConfig {
  AttackKind kind = AttackKind::None;
  double epsilon = 0.0;         // standardized units (fgsm/pgd/jsma)
  int pgd_steps = 10;
  int jsma_max_features = 5;
  JsmaTargetPolicy jsma_target_policy = JsmaTargetPolicy::AdjacentBetter;
  int jsma_fixed_target = 0;
  double msa_percent = 0.04;    // raw-space relative change (msa1/msa2)
  std::uint64_t seed = 0;       // reserved; current attack kinds are deterministic

  // Budget knob of this attack kind (epsilon or msa_percent).
  double budget() const;
  AttackConfig with_budget(double value) const;

  void validate() const;
  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

struct AdversarialBatch {
  Eigen::MatrixXd x_orig;             // standardized, as attacked
  Eigen::MatrixXd x_adv;
  Eigen::MatrixXd raw_orig;           // original continuous values
  Eigen::MatrixXd raw_adv;            // continuous block mapped back to raw space
  std::vector<int> pred_orig, pred_adv;
  std::vector<char> originally_correct;
  // Prediction changed, counted among originally-correct samples only.
  std::vector<char> flipped;
  // Mean |delta_raw| / |raw_orig| over the perturbed features of each sample
  // (zero-valued originals are excluded and counted separately).
  Eigen::VectorXd avg_pct_change;
  std::vector<int> n_pct_features;       // features entering the mean
  std::vector<int> n_zero_raw_excluded;  // perturbed features skipped (raw 0)
  AttackConfig attack;

  int n() const { return static_cast<int>(x_adv.rows()); }
  int flip_count() const;
  int correct_count() const;
  // flips / originally-correct; requires at least one correct sample.
  double flip_rate() const;
  // Mean avg_pct_change over samples that have at least one measurable feature.
  double mean_pct_change() const;
};

// x* = x + eps * sign(grad_x L); sign(0) = 0.
AdversarialBatch fgsm(const Classifier& model, const Dataset& batch, const AttackConfig& cfg);

// Iterates x_i = project(x_{i-1} + eps * grad L) with projection onto the
// L-inf ball of radius eps around the original input.
AdversarialBatch pgd(const Classifier& model, const Dataset& batch, const AttackConfig& cfg);

// Saliency S(x,t)[i] over continuous features from a class-probability
// Jacobian (n_classes x input_dim). Zero when dF_t/dx_i < 0 or when the
// summed off-target gradient is positive; otherwise the product of the
// target gradient and the magnitude of the off-target sum.
Eigen::VectorXd saliency_map(const Eigen::MatrixXd& jacobian, int target_class,
                             int n_continuous);

// Greedy targeted attack: repeatedly bumps the highest-saliency untouched
// feature by +eps until the target class is predicted, saliency vanishes, or
// jsma_max_features features have been spent.
AdversarialBatch jsma(const Classifier& model, const Dataset& batch, const AttackConfig& cfg);

struct MsaRankEntry {
  int feature = 0;
  double flip_rate = 0.0;
};

// Perturbs each continuous feature individually by +/-percent in raw space
// and ranks features by how often either direction flips an
// originally-correct prediction. Ties break toward the smaller index.
std::vector<MsaRankEntry> msa_rank(const Classifier& model, const Dataset& ds,
                                   double percent);

// Applies +/-percent to the top-1 (msa1) or top-2 (msa2) ranked features.
// Per sample, the candidate search prefers a sign choice that flips the
// prediction (toward the best achievable grade), falling back to the largest
// loss increase. msa2's candidate set includes all single-feature choices, so
// it never flips fewer samples than msa1.
AdversarialBatch msa(const Classifier& model, const Dataset& batch, const AttackConfig& cfg,
                     const std::vector<int>& ranked_features);

// Dispatch on cfg.kind. For msa kinds a ranking is computed on `batch`
// against `model` when none is supplied; if no sample is originally correct
// the ranking falls back to mean loss increase.
AdversarialBatch run_attack(const Classifier& model, const Dataset& batch,
                            const AttackConfig& cfg,
                            const std::vector<int>* msa_ranked = nullptr);

// Sample-level export: id, predictions, flip flag, percent change and the
// per-feature raw deltas.
void write_adversarial_csv(const std::string& path, const AdversarialBatch& batch,
                           const Schema& schema);

}  // namespace tabadv

#endif  // TABADV_ATTACKS_HPP
