#ifndef TABADV_MLP_HPP
#define TABADV_MLP_HPP

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tabadv/dataset.hpp"

namespace tabadv {

// Anything that can be attacked: exposes class probabilities, the input
// gradient of its cross-entropy loss, and the per-sample Jacobian of its
// class probabilities. Single models and ensembles both qualify.
// Implementations are immutable during inference, so concurrent read-only
// use is safe.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int input_dim() const = 0;
  virtual int n_classes() const = 0;
  // One probability row per sample (eval mode, deterministic).
  virtual Eigen::MatrixXd probabilities(const Eigen::MatrixXd& x) const = 0;
  // Row i is the gradient of sample i's own cross-entropy w.r.t. x_i (not the
  // batch mean); attacks scale with it directly.
  virtual Eigen::MatrixXd loss_input_gradient(const Eigen::MatrixXd& x,
                                              const std::vector<int>& y) const = 0;
  // n_classes x input_dim Jacobian d p_j / d x_i for one sample.
  virtual Eigen::MatrixXd probability_jacobian(const Eigen::RowVectorXd& x) const = 0;
};

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::Adam;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Dense ReLU network with a softmax head; default shape is
// input -> 100 -> 60 -> n_classes with dropout 0.2 on the hidden layers
// (inverted dropout, training only). All arithmetic is double precision.
class MlpModel : public Classifier {
 public:
  MlpModel() = default;
  MlpModel(std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
           double dropout_rate);

  // He fan-in scaled Gaussian init, fully determined by the seed.
  static MlpModel he_init(int input_dim, const std::vector<int>& hidden_sizes,
                          int n_classes, double dropout_rate, std::uint64_t seed);

  int input_dim() const override;
  int n_classes() const override;
  int n_layers() const { return static_cast<int>(weights_.size()); }
  double dropout_rate() const { return dropout_rate_; }

  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }

  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& x) const override;
  Eigen::MatrixXd loss_input_gradient(const Eigen::MatrixXd& x,
                                      const std::vector<int>& y) const override;
  Eigen::MatrixXd probability_jacobian(const Eigen::RowVectorXd& x) const override;

  // Pre-softmax activations. The train variant draws one dropout sample, so
  // averaging it over many draws recovers the eval logits of layers that are
  // linear in the dropped activations.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd logits_train(const Eigen::MatrixXd& x, std::mt19937_64& rng) const;

  // Input gradient seeded from an arbitrary gradient w.r.t. the output
  // probabilities (used by ensembles to differentiate their averaged loss).
  Eigen::MatrixXd input_gradient_from_prob_grad(const Eigen::MatrixXd& x,
                                                const Eigen::MatrixXd& d_probs) const;

  nlohmann::json to_json() const;
  static MlpModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static MlpModel load(const std::string& path);

 private:
  std::vector<Eigen::MatrixXd> weights_;  // fan_in x fan_out per layer
  std::vector<Eigen::VectorXd> biases_;
  double dropout_rate_ = 0.2;
};

struct LossGrads {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;
  Eigen::MatrixXd d_input;
};

// One backward pass returning the batch loss, all parameter gradients and the
// input gradient. Dropout is active only when a dropout_rng is supplied;
// attack-side calls leave it null so the loss surface stays deterministic.
LossGrads loss_and_grads(const MlpModel& model, const Eigen::MatrixXd& x,
                         const std::vector<int>& y,
                         const Eigen::VectorXd* sample_weights = nullptr,
                         std::mt19937_64* dropout_rng = nullptr);

// Optional per-batch input transform, e.g. on-the-fly adversarial
// perturbation against the model being trained. `rows` holds the source
// indices of the batch inside the training set.
using BatchHook = std::function<Eigen::MatrixXd(
    const MlpModel& current, const Eigen::MatrixXd& x_batch, const std::vector<int>& y_batch,
    const std::vector<int>& rows)>;

// Minimizes the (weighted) mean cross-entropy; deterministic given cfg.seed.
// Throws DivergenceError with the epoch index if the loss goes non-finite.
MlpModel train(MlpModel model, const Dataset& train_ds, const TrainConfig& cfg,
               const std::vector<double>* sample_weights = nullptr,
               const BatchHook& batch_hook = nullptr);

// Argmax of eval-mode probabilities; ties break toward the smaller index.
std::vector<int> predict(const Classifier& model, const Eigen::MatrixXd& x);
int predict_row(const Classifier& model, const Eigen::RowVectorXd& x);
double accuracy(const Classifier& model, const Dataset& ds);
double accuracy_on(const Classifier& model, const Eigen::MatrixXd& x,
                   const std::vector<int>& y);
// Mean cross-entropy of the model on (x, y), eval mode.
double mean_cross_entropy(const Classifier& model, const Eigen::MatrixXd& x,
                          const std::vector<int>& y);

int argmax_row(const Eigen::RowVectorXd& row);

}  // namespace tabadv

#endif  // TABADV_MLP_HPP
