#include "tabadv/robust.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>

#include "tabadv/common.hpp"

namespace tabadv {

namespace {

Eigen::VectorXd stable_softmax(const Eigen::VectorXd& scores) {
  const double mx = scores.maxCoeff();
  Eigen::VectorXd e = (scores.array() - mx).exp().matrix();
  return e / e.sum();
}

}  // namespace

std::vector<std::string> ObjectiveSet::names() const {
  std::vector<std::string> out;
  out.reserve(objectives.size());
  for (const auto& o : objectives) out.push_back(attack_kind_name(o.kind));
  return out;
}

void ObjectiveSet::validate() const {
  if (size() < 2) throw ConfigError("objective set needs at least 2 objectives");
  int none_count = 0;
  for (const auto& o : objectives) {
    o.validate();
    if (o.kind == AttackKind::None) ++none_count;
  }
  if (none_count != 1)
    throw ConfigError("objective set must contain the unperturbed objective exactly once");
}

ObjectiveSet ObjectiveSet::standard(double fgsm_eps, double pgd_eps, double jsma_eps,
                                    double msa_percent, int pgd_steps,
                                    int jsma_max_features) {
  ObjectiveSet set;
  AttackConfig none;
  none.kind = AttackKind::None;
  set.objectives.push_back(none);

  AttackConfig f;
  f.kind = AttackKind::Fgsm;
  f.epsilon = fgsm_eps;
  set.objectives.push_back(f);

  AttackConfig p;
  p.kind = AttackKind::Pgd;
  p.epsilon = pgd_eps;
  p.pgd_steps = pgd_steps;
  set.objectives.push_back(p);

  AttackConfig j;
  j.kind = AttackKind::Jsma;
  j.epsilon = jsma_eps;
  j.jsma_max_features = jsma_max_features;
  set.objectives.push_back(j);

  AttackConfig m1;
  m1.kind = AttackKind::Msa1;
  m1.msa_percent = msa_percent;
  set.objectives.push_back(m1);

  AttackConfig m2;
  m2.kind = AttackKind::Msa2;
  m2.msa_percent = msa_percent;
  set.objectives.push_back(m2);

  set.validate();
  return set;
}

nlohmann::json ObjectiveSet::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& o : objectives) arr.push_back(o.to_json());
  return arr;
}

ObjectiveSet ObjectiveSet::from_json(const nlohmann::json& j) {
  ObjectiveSet set;
  for (const auto& o : j) set.objectives.push_back(AttackConfig::from_json(o));
  set.validate();
  return set;
}

void WeightDistribution::validate() const {
  if (w.size() == 0) throw ConfigError("empty weight distribution");
  if ((w.array() < -1e-12).any()) throw ConfigError("negative objective weight");
  if (std::abs(w.sum() - 1.0) > 1e-9)
    throw ConfigError("objective weights must sum to 1");
}

WeightDistribution WeightDistribution::uniform(int m) {
  WeightDistribution d;
  d.w = Eigen::VectorXd::Constant(m, 1.0 / m);
  return d;
}

WeightDistribution WeightDistribution::point_mass(int m, int i) {
  WeightDistribution d;
  d.w = Eigen::VectorXd::Zero(m);
  d.w[i] = 1.0;
  return d;
}

EnsembleHypothesis::EnsembleHypothesis(std::vector<MlpModel> models)
    : models_(std::move(models)) {
  if (models_.empty()) throw ConfigError("ensemble needs at least one model");
  for (const auto& m : models_)
    if (m.input_dim() != models_.front().input_dim() ||
        m.n_classes() != models_.front().n_classes())
      throw DimensionError("ensemble members disagree on dimensions");
}

int EnsembleHypothesis::input_dim() const { return models_.front().input_dim(); }
int EnsembleHypothesis::n_classes() const { return models_.front().n_classes(); }

Eigen::MatrixXd EnsembleHypothesis::probabilities(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd p = models_.front().probabilities(x);
  for (std::size_t t = 1; t < models_.size(); ++t) p += models_[t].probabilities(x);
  return p / static_cast<double>(models_.size());
}

Eigen::MatrixXd EnsembleHypothesis::loss_input_gradient(const Eigen::MatrixXd& x,
                                                        const std::vector<int>& y) const {
  // Per-sample cross-entropy of the averaged probabilities:
  // dL_i/dpbar[i, y_i] = -1 / pbar[i, y_i], routed through every member with
  // the 1/T mixture factor.
  const Eigen::MatrixXd pbar = probabilities(x);
  const auto n = x.rows();
  Eigen::MatrixXd d_pbar = Eigen::MatrixXd::Zero(n, pbar.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = y[static_cast<std::size_t>(i)];
    if (label < 0 || label >= pbar.cols()) throw DataError("label out of range");
    d_pbar(i, label) = -1.0 / std::max(pbar(i, label), 1e-300);
  }
  const Eigen::MatrixXd d_member = d_pbar / static_cast<double>(models_.size());
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, x.cols());
  for (const auto& m : models_) grad += m.input_gradient_from_prob_grad(x, d_member);
  return grad;
}

Eigen::MatrixXd EnsembleHypothesis::probability_jacobian(const Eigen::RowVectorXd& x) const {
  Eigen::MatrixXd jac = models_.front().probability_jacobian(x);
  for (std::size_t t = 1; t < models_.size(); ++t) jac += models_[t].probability_jacobian(x);
  return jac / static_cast<double>(models_.size());
}

void EnsembleHypothesis::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"format_version", 1},
                          {"kind", "ensemble"},
                          {"size", size()},
                          {"models", nlohmann::json::array()}};
  for (int t = 0; t < size(); ++t) {
    const std::string name = "model_" + std::to_string(t) + ".json";
    models_[static_cast<std::size_t>(t)].save(dir + "/" + name);
    manifest["models"].push_back(name);
  }
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw IoError("cannot write " + dir + "/manifest.json");
  out << manifest.dump(1) << '\n';
}

EnsembleHypothesis EnsembleHypothesis::load(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw IoError("cannot read " + dir + "/manifest.json");
  nlohmann::json manifest;
  in >> manifest;
  if (manifest.at("kind").get<std::string>() != "ensemble")
    throw IoError("not an ensemble checkpoint: " + dir);
  std::vector<MlpModel> models;
  for (const auto& name : manifest.at("models"))
    models.push_back(MlpModel::load(dir + "/" + name.get<std::string>()));
  return EnsembleHypothesis(std::move(models));
}

double MwuConfig::resolved_eta(int m) const {
  if (eta > 0.0) return eta;
  return std::sqrt(std::log(static_cast<double>(m)) / (2.0 * T));
}

nlohmann::json MwuConfig::to_json() const {
  return nlohmann::json{{"T", T},
                        {"eta", eta},
                        {"loss_cap", loss_cap},
                        {"oracle", oracle_cfg.to_json()},
                        {"hidden_sizes", arch.hidden_sizes},
                        {"dropout_rate", arch.dropout_rate},
                        {"static_attacks", static_attacks},
                        {"seed", seed},
                        {"threads", threads}};
}

MwuConfig MwuConfig::from_json(const nlohmann::json& j) {
  MwuConfig c;
  if (j.contains("T")) c.T = j.at("T").get<int>();
  if (j.contains("eta")) c.eta = j.at("eta").get<double>();
  if (j.contains("loss_cap")) c.loss_cap = j.at("loss_cap").get<double>();
  if (j.contains("oracle")) c.oracle_cfg = TrainConfig::from_json(j.at("oracle"));
  if (j.contains("hidden_sizes"))
    c.arch.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  if (j.contains("dropout_rate")) c.arch.dropout_rate = j.at("dropout_rate").get<double>();
  if (j.contains("static_attacks")) c.static_attacks = j.at("static_attacks").get<bool>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  if (c.T < 1) throw ConfigError("T must be >= 1");
  return c;
}

ObjectiveEval objective_eval(const Classifier& h, const AttackConfig& objective,
                             const Dataset& eval_ds) {
  if (eval_ds.n() == 0) throw DataError("empty evaluation set");
  const AdversarialBatch batch = run_attack(h, eval_ds, objective);
  ObjectiveEval out;
  out.loss = mean_cross_entropy(h, batch.x_adv, eval_ds.y);
  out.accuracy = accuracy_on(h, batch.x_adv, eval_ds.y);
  return out;
}

double objective_loss(const Classifier& h, const AttackConfig& objective,
                      const Dataset& eval_ds) {
  return objective_eval(h, objective, eval_ds).loss;
}

MlpModel bayesian_oracle(const WeightDistribution& w, const ObjectiveSet& objectives,
                         const Dataset& train_ds, const TrainConfig& oracle_cfg,
                         const MlpArch& arch, const Classifier* attack_reference,
                         std::vector<long>* sampled_counts) {
  objectives.validate();
  w.validate();
  if (w.w.size() != objectives.size())
    throw DimensionError("weight distribution size does not match objective count");

  const int m = objectives.size();
  if (sampled_counts) sampled_counts->assign(m, 0);

  MlpModel model = MlpModel::he_init(static_cast<int>(train_ds.x.cols()), arch.hidden_sizes,
                                     train_ds.schema.n_classes(), arch.dropout_rate,
                                     derive_seed(oracle_cfg.seed, kOracleInitStream));

  // Objective sampling draws from its own stream so that a point mass on
  // "none" replays plain training bit for bit.
  auto obj_rng = std::make_shared<std::mt19937_64>(
      derive_seed(oracle_cfg.seed, kOracleObjectiveStream));
  const Eigen::VectorXd weights = w.w;

  BatchHook hook = [&, obj_rng](const MlpModel& current, const Eigen::MatrixXd& xb,
                                const std::vector<int>& yb,
                                const std::vector<int>& rows) -> Eigen::MatrixXd {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(*obj_rng);
    int pick = m - 1;
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      acc += weights[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    if (sampled_counts) ++(*sampled_counts)[pick];
    const AttackConfig& obj = objectives.objectives[static_cast<std::size_t>(pick)];
    if (obj.kind == AttackKind::None) return xb;

    Dataset batch;
    batch.schema = train_ds.schema;
    batch.stats = train_ds.stats;
    batch.x = xb;
    batch.y = yb;
    batch.raw_continuous.resize(static_cast<Eigen::Index>(rows.size()),
                                train_ds.raw_continuous.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      batch.raw_continuous.row(static_cast<Eigen::Index>(i)) =
          train_ds.raw_continuous.row(rows[i]);

    const Classifier& target = attack_reference ? *attack_reference
                                                : static_cast<const Classifier&>(current);
    return run_attack(target, batch, obj).x_adv;
  };

  TrainConfig cfg = oracle_cfg;
  cfg.seed = derive_seed(oracle_cfg.seed, kOracleTrainStream);
  return train(std::move(model), train_ds, cfg, nullptr, hook);
}

BottleneckEval bottleneck(const Classifier& h, const ObjectiveSet& objectives,
                          const Dataset& eval_ds, int threads) {
  if (objectives.size() == 0) throw ConfigError("bottleneck needs objectives");
  const int m = objectives.size();
  BottleneckEval out;
  out.per_objective_loss.resize(m);
  out.per_objective_accuracy.resize(m);
  std::vector<ObjectiveEval> evals(static_cast<std::size_t>(m));
  parallel_for(m, threads, [&](int i) {
    evals[static_cast<std::size_t>(i)] =
        objective_eval(h, objectives.objectives[static_cast<std::size_t>(i)], eval_ds);
  });
  for (int i = 0; i < m; ++i) {
    out.per_objective_loss[i] = evals[static_cast<std::size_t>(i)].loss;
    out.per_objective_accuracy[i] = evals[static_cast<std::size_t>(i)].accuracy;
  }
  out.loss = out.per_objective_loss.maxCoeff();
  out.accuracy = out.per_objective_accuracy.minCoeff();
  return out;
}

namespace {

RobustRunResult run_mwu(const ObjectiveSet& objectives, const MwuConfig& cfg,
                        const Dataset& train_ds, const Dataset& eval_ds,
                        bool adapt_weights) {
  objectives.validate();
  if (cfg.T < 1) throw ConfigError("T must be >= 1");
  const int m = objectives.size();
  const double eta = cfg.resolved_eta(m);

  // Static variant: perturb against a fixed clean-trained model instead of
  // the parameters being trained.
  std::optional<MlpModel> reference;
  if (cfg.static_attacks) {
    int none_idx = 0;
    for (int i = 0; i < m; ++i)
      if (objectives.objectives[static_cast<std::size_t>(i)].kind == AttackKind::None)
        none_idx = i;
    TrainConfig ref_cfg = cfg.oracle_cfg;
    ref_cfg.seed = derive_seed(cfg.seed, kStaticReferenceStream);
    reference = bayesian_oracle(WeightDistribution::point_mass(m, none_idx), objectives,
                                train_ds, ref_cfg, cfg.arch);
  }

  RobustRunResult result;
  result.eta = eta;
  result.loss_cap = cfg.loss_cap;

  Eigen::VectorXd cum = Eigen::VectorXd::Zero(m);
  std::vector<MlpModel> models;
  models.reserve(static_cast<std::size_t>(cfg.T));

  for (int t = 1; t <= cfg.T; ++t) {
    WeightDistribution w;
    w.w = adapt_weights ? stable_softmax(eta * cum)
                        : Eigen::VectorXd::Constant(m, 1.0 / m);

    TrainConfig oracle_cfg = cfg.oracle_cfg;
    oracle_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(t));
    MlpModel h_t;
    try {
      h_t = bayesian_oracle(w, objectives, train_ds, oracle_cfg, cfg.arch,
                            reference ? &*reference : nullptr);
    } catch (const DivergenceError& e) {
      throw DivergenceError("oracle diverged at iteration " + std::to_string(t) + ": " +
                                e.what(),
                            e.epoch);
    }

    std::vector<ObjectiveEval> evals(static_cast<std::size_t>(m));
    parallel_for(m, cfg.threads, [&](int i) {
      evals[static_cast<std::size_t>(i)] =
          objective_eval(h_t, objectives.objectives[static_cast<std::size_t>(i)], eval_ds);
    });

    models.push_back(std::move(h_t));
    const EnsembleHypothesis running(models);
    const BottleneckEval bn = bottleneck(running, objectives, eval_ds, cfg.threads);

    TrajectoryRow row;
    row.iteration = t;
    row.w = w.w;
    row.losses.resize(m);
    row.accuracies.resize(m);
    for (int i = 0; i < m; ++i) {
      row.losses[i] = evals[static_cast<std::size_t>(i)].loss;
      row.accuracies[i] = evals[static_cast<std::size_t>(i)].accuracy;
      cum[i] += std::min(row.losses[i], cfg.loss_cap);
    }
    row.ensemble_bottleneck_loss = bn.loss;
    row.ensemble_bottleneck_accuracy = bn.accuracy;
    result.trajectory.push_back(std::move(row));
  }

  result.ensemble = EnsembleHypothesis(std::move(models));
  return result;
}

}  // namespace

RobustRunResult mwu_robust_train(const ObjectiveSet& objectives, const MwuConfig& cfg,
                                 const Dataset& train_ds, const Dataset& eval_ds) {
  return run_mwu(objectives, cfg, train_ds, eval_ds, /*adapt_weights=*/true);
}

RobustRunResult uniform_baseline(const ObjectiveSet& objectives, const MwuConfig& cfg,
                                 const Dataset& train_ds, const Dataset& eval_ds) {
  return run_mwu(objectives, cfg, train_ds, eval_ds, /*adapt_weights=*/false);
}

PayoffMatrix payoff_matrix(const ObjectiveSet& objectives, const Dataset& train_ds,
                           const Dataset& eval_ds, const TrainConfig& oracle_cfg,
                           const MlpArch& arch, int threads) {
  objectives.validate();
  const int m = objectives.size();
  PayoffMatrix out;
  out.labels = objectives.names();
  out.loss.resize(m, m);
  out.accuracy.resize(m, m);

  parallel_for(m, threads, [&](int i) {
    TrainConfig row_cfg = oracle_cfg;
    row_cfg.seed = derive_seed(oracle_cfg.seed, static_cast<std::uint64_t>(i));
    MlpModel row_model;
    try {
      row_model = bayesian_oracle(WeightDistribution::point_mass(m, i), objectives,
                                  train_ds, row_cfg, arch);
    } catch (const DivergenceError& e) {
      throw DivergenceError("training diverged for objective " + out.labels[i] + ": " +
                                e.what(),
                            e.epoch);
    }
    for (int j = 0; j < m; ++j) {
      const ObjectiveEval ev =
          objective_eval(row_model, objectives.objectives[static_cast<std::size_t>(j)],
                         eval_ds);
      out.loss(i, j) = ev.loss;
      out.accuracy(i, j) = ev.accuracy;
    }
  });
  return out;
}

MatrixGameResult mwu_matrix_game(const Eigen::MatrixXd& losses, int T, double eta) {
  if (losses.rows() < 1 || losses.cols() < 1)
    throw DimensionError("matrix game needs a non-empty matrix");
  if (!losses.allFinite()) throw DataError("matrix game entries must be finite");
  if (T < 1) throw ConfigError("T must be >= 1");
  const int m = static_cast<int>(losses.rows());
  const int n = static_cast<int>(losses.cols());
  if (eta <= 0.0) eta = std::sqrt(std::log(static_cast<double>(m)) / (2.0 * T));

  MatrixGameResult out;
  out.best_responses.reserve(T);
  out.hypothesis_mix = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd cum = Eigen::VectorXd::Zero(m);

  for (int t = 1; t <= T; ++t) {
    const Eigen::VectorXd w = stable_softmax(eta * cum);
    // Exact best response: the column minimizing the expected loss under w.
    int best = 0;
    double best_score = w.dot(losses.col(0));
    for (int j = 1; j < n; ++j) {
      const double s = w.dot(losses.col(j));
      if (s < best_score) {
        best = j;
        best_score = s;
      }
    }
    out.best_responses.push_back(best);
    out.hypothesis_mix[best] += 1.0;
    cum += losses.col(best);
    if (t == T) out.final_weights = w;
  }
  out.hypothesis_mix /= static_cast<double>(T);
  out.value_estimate = cum.maxCoeff() / static_cast<double>(T);
  return out;
}

void write_trajectory_csv(const std::string& path, const RobustRunResult& run,
                          const std::vector<std::string>& objective_names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iteration";
  for (const auto& n : objective_names) out << ",w_" << n;
  for (const auto& n : objective_names) out << ",loss_" << n;
  out << ",bottleneck_loss,bottleneck_accuracy\n";
  for (const auto& row : run.trajectory) {
    out << row.iteration;
    for (Eigen::Index i = 0; i < row.w.size(); ++i) out << ',' << format_double(row.w[i]);
    for (Eigen::Index i = 0; i < row.losses.size(); ++i)
      out << ',' << format_double(row.losses[i]);
    out << ',' << format_double(row.ensemble_bottleneck_loss) << ','
        << format_double(row.ensemble_bottleneck_accuracy) << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_payoff_csv(const std::string& loss_path, const std::string& accuracy_path,
                      const PayoffMatrix& matrix) {
  for (const auto* target : {&loss_path, &accuracy_path}) {
    const bool is_loss = target == &loss_path;
    std::ofstream out(*target);
    if (!out) throw IoError("cannot write " + *target);
    out << "trained_on";
    for (const auto& n : matrix.labels) out << ',' << n;
    out << "\n";
    const Eigen::MatrixXd& mat = is_loss ? matrix.loss : matrix.accuracy;
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      out << matrix.labels[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < mat.cols(); ++j) out << ',' << format_double(mat(i, j));
      out << "\n";
    }
    if (!out) throw IoError("write failed: " + *target);
  }
}

}  // namespace tabadv
