#include "tabadv/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tabadv/common.hpp"

namespace tabadv {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"epochs", epochs},
                        {"batch_size", batch_size},
                        {"learning_rate", learning_rate},
                        {"seed", seed},
                        {"optimizer", optimizer == Optimizer::Adam ? "adam" : "sgd"}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("optimizer")) {
    const auto s = j.at("optimizer").get<std::string>();
    if (s == "adam")
      c.optimizer = Optimizer::Adam;
    else if (s == "sgd")
      c.optimizer = Optimizer::Sgd;
    else
      throw ConfigError("unknown optimizer: " + s);
  }
  c.validate();
  return c;
}

MlpModel::MlpModel(std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
                   double dropout_rate)
    : weights_(std::move(weights)), biases_(std::move(biases)), dropout_rate_(dropout_rate) {
  if (weights_.empty() || weights_.size() != biases_.size())
    throw DimensionError("mlp needs matching weight/bias lists");
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].cols() != biases_[l].size())
      throw DimensionError("bias size mismatch at layer " + std::to_string(l));
    if (l + 1 < weights_.size() && weights_[l].cols() != weights_[l + 1].rows())
      throw DimensionError("layer size mismatch between layers " + std::to_string(l) +
                           " and " + std::to_string(l + 1));
  }
  if (!(dropout_rate_ >= 0.0 && dropout_rate_ < 1.0))
    throw ConfigError("dropout rate must be in [0,1)");
}

MlpModel MlpModel::he_init(int input_dim, const std::vector<int>& hidden_sizes,
                           int n_classes, double dropout_rate, std::uint64_t seed) {
  if (input_dim < 1 || n_classes < 2) throw DimensionError("bad model dimensions");
  std::vector<int> dims;
  dims.push_back(input_dim);
  for (int h : hidden_sizes) {
    if (h < 1) throw DimensionError("hidden size must be >= 1");
    dims.push_back(h);
  }
  dims.push_back(n_classes);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::MatrixXd> ws;
  std::vector<Eigen::VectorXd> bs;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double scale = std::sqrt(2.0 / dims[l]);
    Eigen::MatrixXd w(dims[l], dims[l + 1]);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scale * normal(rng);
    ws.push_back(std::move(w));
    bs.push_back(Eigen::VectorXd::Zero(dims[l + 1]));
  }
  return MlpModel(std::move(ws), std::move(bs), dropout_rate);
}

int MlpModel::input_dim() const { return static_cast<int>(weights_.front().rows()); }
int MlpModel::n_classes() const { return static_cast<int>(weights_.back().cols()); }

namespace {

struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // a[0] = x, a[l] post-ReLU (and dropout)
  std::vector<Eigen::MatrixXd> pre;          // z[l] = a[l] * W[l] + b[l]
  std::vector<Eigen::MatrixXd> masks;        // scaled dropout masks per hidden layer
};

// Shared forward pass; dropout masks are drawn only when rng != nullptr.
ForwardCache run_forward(const MlpModel& m, const Eigen::MatrixXd& x, std::mt19937_64* rng) {
  if (x.cols() != m.input_dim())
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(m.input_dim()));
  const int layers = m.n_layers();
  ForwardCache c;
  c.activations.resize(layers);
  c.pre.resize(layers);
  if (rng) c.masks.resize(layers - 1);

  Eigen::MatrixXd a = x;
  for (int l = 0; l < layers; ++l) {
    c.activations[l] = a;
    Eigen::MatrixXd z =
        (a * m.weights()[l]).rowwise() + m.biases()[l].transpose();
    c.pre[l] = z;
    if (l + 1 == layers) break;
    a = z.cwiseMax(0.0);
    if (rng && m.dropout_rate() > 0.0) {
      const double keep = 1.0 - m.dropout_rate();
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      Eigen::MatrixXd mask(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
          mask(i, j) = unif(*rng) < keep ? 1.0 / keep : 0.0;
      c.masks[l] = mask;
      a.array() *= mask.array();
    }
  }
  return c;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

// Backprop from the output-layer pre-activation gradient down to the input.
LossGrads backprop(const MlpModel& m, const ForwardCache& c, Eigen::MatrixXd dz) {
  const int layers = m.n_layers();
  LossGrads g;
  g.d_weights.resize(layers);
  g.d_biases.resize(layers);
  for (int l = layers - 1; l >= 0; --l) {
    g.d_weights[l] = c.activations[l].transpose() * dz;
    g.d_biases[l] = dz.colwise().sum().transpose();
    Eigen::MatrixXd da = dz * m.weights()[l].transpose();
    if (l == 0) {
      g.d_input = std::move(da);
      break;
    }
    if (!c.masks.empty() && c.masks[l - 1].size() > 0) da.array() *= c.masks[l - 1].array();
    dz = ((c.pre[l - 1].array() > 0.0).cast<double>() * da.array()).matrix();
  }
  return g;
}

}  // namespace

Eigen::MatrixXd MlpModel::logits(const Eigen::MatrixXd& x) const {
  return run_forward(*this, x, nullptr).pre.back();
}

Eigen::MatrixXd MlpModel::logits_train(const Eigen::MatrixXd& x, std::mt19937_64& rng) const {
  return run_forward(*this, x, &rng).pre.back();
}

Eigen::MatrixXd MlpModel::probabilities(const Eigen::MatrixXd& x) const {
  return softmax_rows(logits(x));
}

LossGrads loss_and_grads(const MlpModel& model, const Eigen::MatrixXd& x,
                         const std::vector<int>& y, const Eigen::VectorXd* sample_weights,
                         std::mt19937_64* dropout_rng) {
  const auto n = x.rows();
  if (static_cast<Eigen::Index>(y.size()) != n)
    throw DimensionError("label count does not match batch size");
  if (sample_weights && sample_weights->size() != n)
    throw DimensionError("sample weight count does not match batch size");
  for (int label : y)
    if (label < 0 || label >= model.n_classes())
      throw DataError("label out of range: " + std::to_string(label));

  ForwardCache cache = run_forward(model, x, dropout_rng);
  const Eigen::MatrixXd& z = cache.pre.back();
  const Eigen::MatrixXd p = softmax_rows(z);

  LossGrads g;
  Eigen::MatrixXd dz = p;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = sample_weights ? (*sample_weights)[i] : 1.0;
    const double mx = z.row(i).maxCoeff();
    const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    loss += w * (lse - z(i, y[i]));
    dz(i, y[i]) -= 1.0;
    dz.row(i) *= w / static_cast<double>(n);
  }
  g = backprop(model, cache, std::move(dz));
  g.loss = loss / static_cast<double>(n);
  return g;
}

Eigen::MatrixXd MlpModel::loss_input_gradient(const Eigen::MatrixXd& x,
                                              const std::vector<int>& y) const {
  // Per-sample losses decouple, so the batched backward pass with the 1/B
  // scaling removed yields each row's own gradient in one sweep.
  return static_cast<double>(x.rows()) * loss_and_grads(*this, x, y).d_input;
}

Eigen::MatrixXd MlpModel::input_gradient_from_prob_grad(
    const Eigen::MatrixXd& x, const Eigen::MatrixXd& d_probs) const {
  ForwardCache cache = run_forward(*this, x, nullptr);
  const Eigen::MatrixXd p = softmax_rows(cache.pre.back());
  if (d_probs.rows() != p.rows() || d_probs.cols() != p.cols())
    throw DimensionError("probability gradient shape mismatch");
  // dL/dz_k = p_k * (g_k - <g, p>) for softmax outputs.
  Eigen::MatrixXd dz(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double inner = d_probs.row(i).dot(p.row(i));
    dz.row(i) = (p.row(i).array() * (d_probs.row(i).array() - inner)).matrix();
  }
  return backprop(*this, cache, std::move(dz)).d_input;
}

Eigen::MatrixXd MlpModel::probability_jacobian(const Eigen::RowVectorXd& x) const {
  ForwardCache cache = run_forward(*this, x, nullptr);
  const Eigen::MatrixXd p = softmax_rows(cache.pre.back());
  const int classes = n_classes();
  Eigen::MatrixXd jac(classes, input_dim());
  for (int j = 0; j < classes; ++j) {
    // d p_j / d z_k = p_j (delta_jk - p_k)
    Eigen::MatrixXd dz = -p(0, j) * p;
    dz(0, j) += p(0, j);
    jac.row(j) = backprop(*this, cache, std::move(dz)).d_input.row(0);
  }
  return jac;
}

namespace {

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long t = 0;
};

void apply_update(MlpModel& model, const LossGrads& g, const TrainConfig& cfg,
                  AdamState& adam) {
  const int layers = model.n_layers();
  if (cfg.optimizer == Optimizer::Sgd) {
    for (int l = 0; l < layers; ++l) {
      model.weights()[l] -= cfg.learning_rate * g.d_weights[l];
      model.biases()[l] -= cfg.learning_rate * g.d_biases[l];
    }
    return;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (adam.t == 0) {
    adam.mw.resize(layers);
    adam.vw.resize(layers);
    adam.mb.resize(layers);
    adam.vb.resize(layers);
    for (int l = 0; l < layers; ++l) {
      adam.mw[l] = Eigen::MatrixXd::Zero(model.weights()[l].rows(), model.weights()[l].cols());
      adam.vw[l] = adam.mw[l];
      adam.mb[l] = Eigen::VectorXd::Zero(model.biases()[l].size());
      adam.vb[l] = adam.mb[l];
    }
  }
  ++adam.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam.t));
  for (int l = 0; l < layers; ++l) {
    adam.mw[l] = beta1 * adam.mw[l] + (1.0 - beta1) * g.d_weights[l];
    adam.vw[l] = beta2 * adam.vw[l] +
                 (1.0 - beta2) * g.d_weights[l].array().square().matrix();
    adam.mb[l] = beta1 * adam.mb[l] + (1.0 - beta1) * g.d_biases[l];
    adam.vb[l] =
        beta2 * adam.vb[l] + (1.0 - beta2) * g.d_biases[l].array().square().matrix();
    model.weights()[l].array() -= cfg.learning_rate * (adam.mw[l].array() / bc1) /
                                  ((adam.vw[l].array() / bc2).sqrt() + eps);
    model.biases()[l].array() -= cfg.learning_rate * (adam.mb[l].array() / bc1) /
                                 ((adam.vb[l].array() / bc2).sqrt() + eps);
  }
}

}  // namespace

MlpModel train(MlpModel model, const Dataset& train_ds, const TrainConfig& cfg,
               const std::vector<double>* sample_weights, const BatchHook& batch_hook) {
  cfg.validate();
  const int n = train_ds.n();
  if (n == 0) throw DataError("empty training set");
  if (cfg.batch_size > n)
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds training set size " + std::to_string(n));

  // Normalize weights so the equal-weight case reduces to plain means.
  Eigen::VectorXd w;
  if (sample_weights) {
    if (static_cast<int>(sample_weights->size()) != n)
      throw DimensionError("sample_weights size does not match training set");
    w.resize(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      if ((*sample_weights)[i] < 0.0) throw DataError("sample weights must be non-negative");
      w[i] = (*sample_weights)[i];
      total += w[i];
    }
    if (total == 0.0) throw DataError("sample weights must not all be zero");
    w *= static_cast<double>(n) / total;
  }

  std::mt19937_64 rng(cfg.seed);
  AdamState adam;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      Eigen::MatrixXd xb(b, train_ds.x.cols());
      std::vector<int> yb(b);
      std::vector<int> rows(b);
      Eigen::VectorXd wb;
      if (sample_weights) wb.resize(b);
      for (int i = 0; i < b; ++i) {
        const int src = order[start + i];
        xb.row(i) = train_ds.x.row(src);
        yb[i] = train_ds.y[src];
        rows[i] = src;
        if (sample_weights) wb[i] = w[src];
      }
      if (batch_hook) xb = batch_hook(model, xb, yb, rows);
      LossGrads g = loss_and_grads(model, xb, yb, sample_weights ? &wb : nullptr, &rng);
      if (!std::isfinite(g.loss))
        throw DivergenceError("training loss is not finite at epoch " +
                                  std::to_string(epoch + 1),
                              epoch + 1);
      apply_update(model, g, cfg, adam);
    }
  }
  return model;
}

int argmax_row(const Eigen::RowVectorXd& row) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}

std::vector<int> predict(const Classifier& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd p = model.probabilities(x);
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(p.row(i));
  return out;
}

int predict_row(const Classifier& model, const Eigen::RowVectorXd& x) {
  return argmax_row(model.probabilities(x).row(0));
}

double accuracy_on(const Classifier& model, const Eigen::MatrixXd& x,
                   const std::vector<int>& y) {
  if (x.rows() == 0) throw DataError("accuracy of an empty dataset is undefined");
  const auto pred = predict(model, x);
  long correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (pred[i] == y[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

double accuracy(const Classifier& model, const Dataset& ds) {
  return accuracy_on(model, ds.x, ds.y);
}

double mean_cross_entropy(const Classifier& model, const Eigen::MatrixXd& x,
                          const std::vector<int>& y) {
  if (x.rows() == 0) throw DataError("cross-entropy of an empty batch is undefined");
  const Eigen::MatrixXd p = model.probabilities(x);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const int label = y[static_cast<std::size_t>(i)];
    if (label < 0 || label >= p.cols()) throw DataError("label out of range");
    loss += -std::log(std::max(p(i, label), 1e-300));
  }
  return loss / static_cast<double>(p.rows());
}

nlohmann::json MlpModel::to_json() const {
  std::vector<int> layer_sizes;
  layer_sizes.push_back(input_dim());
  for (const auto& w : weights_) layer_sizes.push_back(static_cast<int>(w.cols()));

  nlohmann::json jw = nlohmann::json::array();
  nlohmann::json jb = nlohmann::json::array();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < weights_[l].rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index j = 0; j < weights_[l].cols(); ++j) row.push_back(weights_[l](i, j));
      rows.push_back(std::move(row));
    }
    jw.push_back(std::move(rows));
    nlohmann::json bias = nlohmann::json::array();
    for (Eigen::Index j = 0; j < biases_[l].size(); ++j) bias.push_back(biases_[l][j]);
    jb.push_back(std::move(bias));
  }
  return nlohmann::json{{"format_version", 1},
                        {"kind", "mlp"},
                        {"layer_sizes", layer_sizes},
                        {"dropout_rate", dropout_rate_},
                        {"weights", jw},
                        {"biases", jb}};
}

MlpModel MlpModel::from_json(const nlohmann::json& j) {
  if (j.at("kind").get<std::string>() != "mlp")
    throw IoError("not an mlp checkpoint");
  if (j.at("format_version").get<int>() != 1)
    throw IoError("unsupported checkpoint version");
  const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
  std::vector<Eigen::MatrixXd> ws;
  std::vector<Eigen::VectorXd> bs;
  const auto& jw = j.at("weights");
  const auto& jb = j.at("biases");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Eigen::MatrixXd w(sizes[l], sizes[l + 1]);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(i, c) = jw.at(l).at(i).at(c).get<double>();
    Eigen::VectorXd b(sizes[l + 1]);
    for (Eigen::Index c = 0; c < b.size(); ++c) b[c] = jb.at(l).at(c).get<double>();
    ws.push_back(std::move(w));
    bs.push_back(std::move(b));
  }
  return MlpModel(std::move(ws), std::move(bs), j.at("dropout_rate").get<double>());
}

void MlpModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json().dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

MlpModel MlpModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

}  // namespace tabadv
