#include "tabadv/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "tabadv/common.hpp"

namespace tabadv {

std::string attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::None: return "none";
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::Jsma: return "jsma";
    case AttackKind::Msa1: return "msa1";
    case AttackKind::Msa2: return "msa2";
  }
  throw ConfigError("unknown attack kind");
}

AttackKind attack_kind_from_name(const std::string& name) {
  if (name == "none") return AttackKind::None;
  if (name == "fgsm") return AttackKind::Fgsm;
  if (name == "pgd") return AttackKind::Pgd;
  if (name == "jsma") return AttackKind::Jsma;
  if (name == "msa1") return AttackKind::Msa1;
  if (name == "msa2") return AttackKind::Msa2;
  throw ConfigError("unknown attack kind: " + name);
}

double AttackConfig::budget() const {
  return (kind == AttackKind::Msa1 || kind == AttackKind::Msa2) ? msa_percent : epsilon;
}

AttackConfig AttackConfig::with_budget(double value) const {
  AttackConfig out = *this;
  if (kind == AttackKind::Msa1 || kind == AttackKind::Msa2)
    out.msa_percent = value;
  else
    out.epsilon = value;
  return out;
}

void AttackConfig::validate() const {
  if (epsilon < 0) throw ConfigError("epsilon must be >= 0");
  if (pgd_steps < 1) throw ConfigError("pgd_steps must be >= 1");
  if (jsma_max_features < 1) throw ConfigError("jsma_max_features must be >= 1");
  if (msa_percent < 0) throw ConfigError("msa_percent must be >= 0");
}

nlohmann::json AttackConfig::to_json() const {
  return nlohmann::json{
      {"kind", attack_kind_name(kind)},
      {"epsilon", epsilon},
      {"pgd_steps", pgd_steps},
      {"jsma_max_features", jsma_max_features},
      {"jsma_target_policy",
       jsma_target_policy == JsmaTargetPolicy::AdjacentBetter ? "adjacent_better" : "fixed"},
      {"jsma_fixed_target", jsma_fixed_target},
      {"msa_percent", msa_percent},
      {"seed", seed}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.kind = attack_kind_from_name(j.at("kind").get<std::string>());
  if (j.contains("epsilon")) c.epsilon = j.at("epsilon").get<double>();
  if (j.contains("pgd_steps")) c.pgd_steps = j.at("pgd_steps").get<int>();
  if (j.contains("jsma_max_features"))
    c.jsma_max_features = j.at("jsma_max_features").get<int>();
  if (j.contains("jsma_target_policy")) {
    const auto s = j.at("jsma_target_policy").get<std::string>();
    if (s == "adjacent_better")
      c.jsma_target_policy = JsmaTargetPolicy::AdjacentBetter;
    else if (s == "fixed")
      c.jsma_target_policy = JsmaTargetPolicy::FixedTarget;
    else
      throw ConfigError("unknown jsma target policy: " + s);
  }
  if (j.contains("jsma_fixed_target"))
    c.jsma_fixed_target = j.at("jsma_fixed_target").get<int>();
  if (j.contains("msa_percent")) c.msa_percent = j.at("msa_percent").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

int AdversarialBatch::flip_count() const {
  int c = 0;
  for (char f : flipped) c += f ? 1 : 0;
  return c;
}

int AdversarialBatch::correct_count() const {
  int c = 0;
  for (char f : originally_correct) c += f ? 1 : 0;
  return c;
}

double AdversarialBatch::flip_rate() const {
  const int correct = correct_count();
  if (correct == 0) throw DataError("no originally-correct samples to attack");
  return static_cast<double>(flip_count()) / static_cast<double>(correct);
}

double AdversarialBatch::mean_pct_change() const {
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < n(); ++i) {
    if (n_pct_features[i] > 0) {
      sum += avg_pct_change[i];
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

namespace {

void require_standardized(const Dataset& ds) {
  if (!ds.standardized())
    throw DataError("attacks require a standardized dataset");
}

// Assembles predictions, flip flags and raw-space percent changes. When the
// attack worked in raw space (msa) the exact raw matrix is passed in;
// otherwise raw deltas are reconstructed from the standardized deltas so
// untouched coordinates stay bit-identical.
AdversarialBatch finalize_batch(const Classifier& model, const Dataset& ds,
                                const AttackConfig& cfg, Eigen::MatrixXd x_adv,
                                std::optional<Eigen::MatrixXd> raw_adv = std::nullopt) {
  const int n = ds.n();
  const int nc = ds.schema.n_continuous();

  AdversarialBatch out;
  out.attack = cfg;
  out.x_orig = ds.x;
  out.x_adv = std::move(x_adv);
  out.raw_orig = ds.raw_continuous;
  if (raw_adv) {
    out.raw_adv = std::move(*raw_adv);
  } else {
    const Eigen::MatrixXd delta_std = out.x_adv.leftCols(nc) - ds.x.leftCols(nc);
    out.raw_adv = ds.raw_continuous +
                  (delta_std.array().rowwise() * ds.stats->std.transpose().array()).matrix();
  }

  out.pred_orig = predict(model, out.x_orig);
  out.pred_adv = predict(model, out.x_adv);
  out.originally_correct.resize(n);
  out.flipped.resize(n);
  out.avg_pct_change = Eigen::VectorXd::Zero(n);
  out.n_pct_features.assign(n, 0);
  out.n_zero_raw_excluded.assign(n, 0);

  for (int i = 0; i < n; ++i) {
    out.originally_correct[i] = out.pred_orig[i] == ds.y[i] ? 1 : 0;
    out.flipped[i] =
        (out.originally_correct[i] && out.pred_adv[i] != out.pred_orig[i]) ? 1 : 0;
    double sum = 0.0;
    int used = 0, skipped = 0;
    for (int j = 0; j < nc; ++j) {
      const double delta = out.raw_adv(i, j) - ds.raw_continuous(i, j);
      if (delta == 0.0) continue;
      if (ds.raw_continuous(i, j) == 0.0) {
        ++skipped;
        continue;
      }
      sum += std::abs(delta) / std::abs(ds.raw_continuous(i, j));
      ++used;
    }
    out.n_pct_features[i] = used;
    out.n_zero_raw_excluded[i] = skipped;
    if (used > 0) out.avg_pct_change[i] = sum / used;
  }
  return out;
}

}  // namespace

AdversarialBatch fgsm(const Classifier& model, const Dataset& batch, const AttackConfig& cfg) {
  cfg.validate();
  require_standardized(batch);
  const int nc = batch.schema.n_continuous();
  Eigen::MatrixXd x_adv = batch.x;
  if (cfg.epsilon > 0.0) {
    const Eigen::MatrixXd grad = model.loss_input_gradient(batch.x, batch.y);
    for (Eigen::Index i = 0; i < x_adv.rows(); ++i) {
      for (int j = 0; j < nc; ++j) {
        const double g = grad(i, j);
        if (g > 0.0)
          x_adv(i, j) += cfg.epsilon;
        else if (g < 0.0)
          x_adv(i, j) -= cfg.epsilon;
      }
    }
  }
  return finalize_batch(model, batch, cfg, std::move(x_adv));
}

AdversarialBatch pgd(const Classifier& model, const Dataset& batch, const AttackConfig& cfg) {
  cfg.validate();
  require_standardized(batch);
  const int nc = batch.schema.n_continuous();
  Eigen::MatrixXd x_adv = batch.x;
  if (cfg.epsilon > 0.0) {
    for (int step = 0; step < cfg.pgd_steps; ++step) {
      const Eigen::MatrixXd grad = model.loss_input_gradient(x_adv, batch.y);
      for (Eigen::Index i = 0; i < x_adv.rows(); ++i) {
        for (int j = 0; j < nc; ++j) {
          const double lo = batch.x(i, j) - cfg.epsilon;
          const double hi = batch.x(i, j) + cfg.epsilon;
          x_adv(i, j) = std::clamp(x_adv(i, j) + cfg.epsilon * grad(i, j), lo, hi);
        }
      }
    }
  }
  return finalize_batch(model, batch, cfg, std::move(x_adv));
}

Eigen::VectorXd saliency_map(const Eigen::MatrixXd& jacobian, int target_class,
                             int n_continuous) {
  if (target_class < 0 || target_class >= jacobian.rows())
    throw DataError("saliency target class out of range");
  if (n_continuous > jacobian.cols())
    throw DimensionError("saliency: continuous count exceeds jacobian width");
  Eigen::VectorXd s = Eigen::VectorXd::Zero(n_continuous);
  for (int j = 0; j < n_continuous; ++j) {
    const double dt = jacobian(target_class, j);
    const double others = jacobian.col(j).sum() - dt;
    if (dt < 0.0 || others > 0.0) continue;
    s[j] = dt * std::abs(others);
  }
  return s;
}

AdversarialBatch jsma(const Classifier& model, const Dataset& batch, const AttackConfig& cfg) {
  cfg.validate();
  require_standardized(batch);
  const int nc = batch.schema.n_continuous();
  const int classes = model.n_classes();
  if (cfg.jsma_target_policy == JsmaTargetPolicy::FixedTarget &&
      (cfg.jsma_fixed_target < 0 || cfg.jsma_fixed_target >= classes))
    throw ConfigError("jsma fixed target out of range");

  Eigen::MatrixXd x_adv = batch.x;
  if (cfg.epsilon > 0.0) {
    const std::vector<int> pred_orig = predict(model, batch.x);
    for (int i = 0; i < batch.n(); ++i) {
      const int target = cfg.jsma_target_policy == JsmaTargetPolicy::AdjacentBetter
                             ? std::max(pred_orig[i] - 1, 0)
                             : cfg.jsma_fixed_target;
      Eigen::RowVectorXd row = x_adv.row(i);
      std::set<int> touched;
      while (static_cast<int>(touched.size()) < cfg.jsma_max_features) {
        if (predict_row(model, row) == target) break;
        const Eigen::MatrixXd jac = model.probability_jacobian(row);
        Eigen::VectorXd s = saliency_map(jac, target, nc);
        for (int j : touched) s[j] = 0.0;
        int best = 0;
        for (int j = 1; j < nc; ++j)
          if (s[j] > s[best]) best = j;
        if (!(s[best] > 0.0)) break;
        row[best] += cfg.epsilon;
        touched.insert(best);
      }
      x_adv.row(i) = row;
    }
  }
  return finalize_batch(model, batch, cfg, std::move(x_adv));
}

std::vector<MsaRankEntry> msa_rank(const Classifier& model, const Dataset& ds,
                                   double percent) {
  if (!(percent > 0.0)) throw ConfigError("msa_rank needs percent > 0");
  require_standardized(ds);
  const int nc = ds.schema.n_continuous();

  const std::vector<int> pred = predict(model, ds.x);
  std::vector<int> correct;
  for (int i = 0; i < ds.n(); ++i)
    if (pred[i] == ds.y[i]) correct.push_back(i);
  if (correct.empty()) throw DataError("msa_rank: no originally-correct samples");

  const auto m = static_cast<Eigen::Index>(correct.size());
  std::vector<MsaRankEntry> entries(nc);
  for (int f = 0; f < nc; ++f) {
    std::vector<char> flips(correct.size(), 0);
    for (const double sign : {+1.0, -1.0}) {
      Eigen::MatrixXd xs(m, ds.x.cols());
      for (Eigen::Index k = 0; k < m; ++k) {
        const int i = correct[static_cast<std::size_t>(k)];
        xs.row(k) = ds.x.row(i);
        const double raw = ds.raw_continuous(i, f) * (1.0 + sign * percent);
        xs(k, f) = (raw - ds.stats->mean[f]) / ds.stats->std[f];
      }
      const std::vector<int> p = predict(model, xs);
      for (Eigen::Index k = 0; k < m; ++k)
        if (p[static_cast<std::size_t>(k)] != ds.y[correct[static_cast<std::size_t>(k)]])
          flips[static_cast<std::size_t>(k)] = 1;
    }
    int flipped = 0;
    for (char f2 : flips) flipped += f2 ? 1 : 0;
    entries[f] = {f, static_cast<double>(flipped) / static_cast<double>(m)};
  }
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.flip_rate != b.flip_rate) return a.flip_rate > b.flip_rate;
    return a.feature < b.feature;
  });
  return entries;
}

AdversarialBatch msa(const Classifier& model, const Dataset& batch, const AttackConfig& cfg,
                     const std::vector<int>& ranked_features) {
  cfg.validate();
  require_standardized(batch);
  if (cfg.kind != AttackKind::Msa1 && cfg.kind != AttackKind::Msa2)
    throw ConfigError("msa requires kind msa1 or msa2");
  const int k = cfg.kind == AttackKind::Msa1 ? 1 : 2;
  if (static_cast<int>(ranked_features.size()) < k)
    throw DataError("msa needs at least " + std::to_string(k) + " ranked features");

  const int nc = batch.schema.n_continuous();
  std::vector<int> feats(ranked_features.begin(), ranked_features.begin() + k);
  for (int f : feats)
    if (f < 0 || f >= nc) throw DimensionError("ranked feature index out of range");

  // Candidate sign patterns; the two-feature set contains every one-feature
  // pattern, which is what makes msa2 dominate msa1 sample by sample.
  std::vector<std::vector<double>> candidates;
  if (k == 1) {
    candidates = {{+1.0}, {-1.0}};
  } else {
    candidates = {{+1.0, +1.0}, {+1.0, -1.0}, {-1.0, +1.0}, {-1.0, -1.0},
                  {+1.0, 0.0},  {-1.0, 0.0},  {0.0, +1.0},  {0.0, -1.0}};
  }
  const int cand_count = static_cast<int>(candidates.size());

  const int n = batch.n();
  Eigen::MatrixXd all_x(static_cast<Eigen::Index>(n) * cand_count, batch.x.cols());
  Eigen::MatrixXd all_raw(static_cast<Eigen::Index>(n) * cand_count, nc);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < cand_count; ++c) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * cand_count + c;
      all_x.row(r) = batch.x.row(i);
      all_raw.row(r) = batch.raw_continuous.row(i);
      for (int t = 0; t < k; ++t) {
        const double sign = candidates[c][t];
        if (sign == 0.0) continue;
        const int f = feats[t];
        const double raw = batch.raw_continuous(i, f) * (1.0 + sign * cfg.msa_percent);
        all_raw(r, f) = raw;
        all_x(r, f) = (raw - batch.stats->mean[f]) / batch.stats->std[f];
      }
    }
  }

  const Eigen::MatrixXd probs = model.probabilities(all_x);
  const std::vector<int> pred_orig = predict(model, batch.x);

  Eigen::MatrixXd x_adv(n, batch.x.cols());
  Eigen::MatrixXd raw_adv(n, nc);
  for (int i = 0; i < n; ++i) {
    // Flipping candidates win (lowest adversarial grade first, then candidate
    // order); without a flip, take the largest loss increase.
    int best = -1;
    bool best_flips = false;
    int best_grade = 0;
    double best_loss = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cand_count; ++c) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * cand_count + c;
      const int pred = argmax_row(probs.row(r));
      const bool flips = pred != pred_orig[i];
      if (flips) {
        if (!best_flips || pred < best_grade) {
          best = c;
          best_flips = true;
          best_grade = pred;
        }
      } else if (!best_flips) {
        const double loss = -std::log(std::max(probs(r, batch.y[i]), 1e-300));
        if (loss > best_loss) {
          best = c;
          best_loss = loss;
        }
      }
    }
    const Eigen::Index r = static_cast<Eigen::Index>(i) * cand_count + best;
    x_adv.row(i) = all_x.row(r);
    raw_adv.row(i) = all_raw.row(r);
  }
  return finalize_batch(model, batch, cfg, std::move(x_adv), std::move(raw_adv));
}

namespace {

// Loss-increase ranking used when no sample is originally correct (the
// flip-rate definition is undefined there, e.g. on a freshly initialized
// model inside the robust training loop).
std::vector<int> loss_increase_ranking(const Classifier& model, const Dataset& ds,
                                       double percent) {
  const int nc = ds.schema.n_continuous();
  const double base = mean_cross_entropy(model, ds.x, ds.y);
  std::vector<std::pair<double, int>> scored(nc);
  for (int f = 0; f < nc; ++f) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const double sign : {+1.0, -1.0}) {
      Eigen::MatrixXd xs = ds.x;
      for (int i = 0; i < ds.n(); ++i) {
        const double raw = ds.raw_continuous(i, f) * (1.0 + sign * percent);
        xs(i, f) = (raw - ds.stats->mean[f]) / ds.stats->std[f];
      }
      worst = std::max(worst, mean_cross_entropy(model, xs, ds.y) - base);
    }
    scored[f] = {worst, f};
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> order(nc);
  for (int f = 0; f < nc; ++f) order[f] = scored[f].second;
  return order;
}

}  // namespace

AdversarialBatch run_attack(const Classifier& model, const Dataset& batch,
                            const AttackConfig& cfg, const std::vector<int>* msa_ranked) {
  switch (cfg.kind) {
    case AttackKind::None:
      return finalize_batch(model, batch, cfg, batch.x, batch.raw_continuous);
    case AttackKind::Fgsm:
      return fgsm(model, batch, cfg);
    case AttackKind::Pgd:
      return pgd(model, batch, cfg);
    case AttackKind::Jsma:
      return jsma(model, batch, cfg);
    case AttackKind::Msa1:
    case AttackKind::Msa2: {
      std::vector<int> ranked;
      if (msa_ranked) {
        ranked = *msa_ranked;
      } else if (cfg.msa_percent > 0.0) {
        try {
          for (const auto& e : msa_rank(model, batch, cfg.msa_percent))
            ranked.push_back(e.feature);
        } catch (const DataError&) {
          ranked = loss_increase_ranking(model, batch, cfg.msa_percent);
        }
      } else {
        ranked.resize(batch.schema.n_continuous());
        for (std::size_t f = 0; f < ranked.size(); ++f) ranked[f] = static_cast<int>(f);
      }
      return msa(model, batch, cfg, ranked);
    }
  }
  throw ConfigError("unknown attack kind");
}

void write_adversarial_csv(const std::string& path, const AdversarialBatch& batch,
                           const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "sample_id,pred_orig,pred_adv,flipped,avg_pct_change";
  for (const auto& name : schema.continuous_names) out << ",delta_" << name;
  out << "\n";
  for (int i = 0; i < batch.n(); ++i) {
    out << i << ',' << batch.pred_orig[i] << ',' << batch.pred_adv[i] << ','
        << (batch.flipped[i] ? 1 : 0) << ',' << format_double(batch.avg_pct_change[i]);
    for (int j = 0; j < schema.n_continuous(); ++j)
      out << ',' << format_double(batch.raw_adv(i, j) - batch.raw_orig(i, j));
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace tabadv
