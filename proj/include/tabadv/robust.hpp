#ifndef TABADV_ROBUST_HPP
#define TABADV_ROBUST_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tabadv/attacks.hpp"
#include "tabadv/dataset.hpp"
#include "tabadv/mlp.hpp"

namespace tabadv {

// Seed fan-out inside bayesian_oracle: the fresh model is initialized with
// derive_seed(cfg.seed, kOracleInitStream), the training loop runs on
// derive_seed(cfg.seed, kOracleTrainStream), and objective sampling draws
// from derive_seed(cfg.seed, kOracleObjectiveStream). Keeping the objective
// stream separate makes a point mass on "none" replay plain training bit for
// bit.
inline constexpr std::uint64_t kOracleInitStream = 101;
inline constexpr std::uint64_t kOracleTrainStream = 102;
inline constexpr std::uint64_t kOracleObjectiveStream = 103;
inline constexpr std::uint64_t kStaticReferenceStream = 104;

// The adversary's pure strategies: a finite list of perturbation objectives,
// always containing the unperturbed objective exactly once.
struct ObjectiveSet {
  std::vector<AttackConfig> objectives;

  int size() const { return static_cast<int>(objectives.size()); }
  std::vector<std::string> names() const;
  void validate() const;

  // {none, fgsm, pgd, jsma, msa1, msa2} with the given budgets.
  static ObjectiveSet standard(double fgsm_eps, double pgd_eps, double jsma_eps,
                               double msa_percent, int pgd_steps = 10,
                               int jsma_max_features = 5);

  nlohmann::json to_json() const;
  static ObjectiveSet from_json(const nlohmann::json& j);
};

struct WeightDistribution {
  Eigen::VectorXd w;
  void validate() const;  // simplex membership within 1e-9
  static WeightDistribution uniform(int m);
  static WeightDistribution point_mass(int m, int i);
};

// Uniform mixture over the per-iteration models; predicts by averaging the
// members' probability vectors. Attacks against the ensemble differentiate
// this averaged loss surface.
class EnsembleHypothesis : public Classifier {
 public:
  EnsembleHypothesis() = default;
  explicit EnsembleHypothesis(std::vector<MlpModel> models);

  int size() const { return static_cast<int>(models_.size()); }
  const std::vector<MlpModel>& models() const { return models_; }

  int input_dim() const override;
  int n_classes() const override;
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd loss_input_gradient(const Eigen::MatrixXd& x,
                                      const std::vector<int>& y) const override;
  Eigen::MatrixXd probability_jacobian(const Eigen::RowVectorXd& x) const override;

  void save(const std::string& dir) const;
  static EnsembleHypothesis load(const std::string& dir);

 private:
  std::vector<MlpModel> models_;
};

struct MlpArch {
  std::vector<int> hidden_sizes{100, 60};
  double dropout_rate = 0.2;
};

struct MwuConfig {
  int T = 10;
  double eta = 0.0;        // <= 0 resolves to sqrt(log(m) / (2 T))
  double loss_cap = 4.0;   // losses are clipped to this inside the weight rule only
  TrainConfig oracle_cfg;
  MlpArch arch;
  // Attack a fixed clean-trained reference instead of the current parameters.
  bool static_attacks = false;
  std::uint64_t seed = 0;
  int threads = 0;

  double resolved_eta(int m) const;
  nlohmann::json to_json() const;
  static MwuConfig from_json(const nlohmann::json& j);
};

struct ObjectiveEval {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Loss/accuracy of h on eval_ds perturbed by `objective`, with the attack
// generated against h itself.
ObjectiveEval objective_eval(const Classifier& h, const AttackConfig& objective,
                             const Dataset& eval_ds);
double objective_loss(const Classifier& h, const AttackConfig& objective,
                      const Dataset& eval_ds);

// Trains a fresh seeded model where every minibatch is perturbed on the fly:
// an objective is sampled from w and applied against the current parameters
// (or against *attack_reference when given). The trained network is assumed,
// not verified, to be an approximate Bayesian oracle for w.
MlpModel bayesian_oracle(const WeightDistribution& w, const ObjectiveSet& objectives,
                         const Dataset& train_ds, const TrainConfig& oracle_cfg,
                         const MlpArch& arch = {},
                         const Classifier* attack_reference = nullptr,
                         std::vector<long>* sampled_counts = nullptr);

struct BottleneckEval {
  double loss = 0.0;      // max over objectives
  double accuracy = 0.0;  // min over objectives
  Eigen::VectorXd per_objective_loss;
  Eigen::VectorXd per_objective_accuracy;
};

BottleneckEval bottleneck(const Classifier& h, const ObjectiveSet& objectives,
                          const Dataset& eval_ds, int threads = 0);

struct TrajectoryRow {
  int iteration = 0;  // 1-based
  Eigen::VectorXd w;
  Eigen::VectorXd losses;      // raw (uncapped) per-objective losses of h_t
  Eigen::VectorXd accuracies;  // per-objective accuracies of h_t
  double ensemble_bottleneck_loss = 0.0;
  double ensemble_bottleneck_accuracy = 0.0;
};

struct RobustRunResult {
  EnsembleHypothesis ensemble;
  std::vector<TrajectoryRow> trajectory;
  double eta = 0.0;
  double loss_cap = 0.0;
};

// Multiplicative-weights robust training: iteration t weights objectives by
// exp(eta * cumulative capped loss), calls the oracle, and records the
// losses of h_t plus the bottleneck of the running uniform ensemble.
RobustRunResult mwu_robust_train(const ObjectiveSet& objectives, const MwuConfig& cfg,
                                 const Dataset& train_ds, const Dataset& eval_ds);

// Same loop with the weights frozen at uniform.
RobustRunResult uniform_baseline(const ObjectiveSet& objectives, const MwuConfig& cfg,
                                 const Dataset& train_ds, const Dataset& eval_ds);

// Row i: model trained with a point mass on objective i; entry (i, j): loss
// and accuracy of that model under objective j. Rows train independently.
struct PayoffMatrix {
  std::vector<std::string> labels;
  Eigen::MatrixXd loss;
  Eigen::MatrixXd accuracy;
};

PayoffMatrix payoff_matrix(const ObjectiveSet& objectives, const Dataset& train_ds,
                           const Dataset& eval_ds, const TrainConfig& oracle_cfg,
                           const MlpArch& arch = {}, int threads = 0);

// The same MWU dynamics on an explicit loss matrix (rows: objectives,
// columns: hypotheses) with the exact best-response oracle. The value
// estimate is the bottleneck of the uniform mixture over the chosen columns,
// directly comparable against the game's minmax value.
struct MatrixGameResult {
  std::vector<int> best_responses;      // column chosen at each iteration
  Eigen::VectorXd hypothesis_mix;       // frequency of each column
  Eigen::VectorXd final_weights;        // adversary weights at the last iteration
  double value_estimate = 0.0;          // max_i (1/T) sum_t A(i, j_t)
};

MatrixGameResult mwu_matrix_game(const Eigen::MatrixXd& losses, int T, double eta = 0.0);

void write_trajectory_csv(const std::string& path, const RobustRunResult& run,
                          const std::vector<std::string>& objective_names);
void write_payoff_csv(const std::string& loss_path, const std::string& accuracy_path,
                      const PayoffMatrix& matrix);

}  // namespace tabadv

#endif  // TABADV_ROBUST_HPP
