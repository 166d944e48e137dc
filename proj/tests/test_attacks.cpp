#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tabadv/attacks.hpp"
#include "test_util.hpp"

using namespace tabadv;

namespace {

// Single softmax layer: the input gradient has the closed form
// dL/dx_j = sum_k (p_k - [k == y]) W_{j,k} / B.
MlpModel linear_model(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  return MlpModel({w}, {b}, 0.0);
}

Dataset tiny_batch(const Eigen::MatrixXd& x, std::vector<int> y) {
  Dataset ds;
  ds.schema.label_name = "grade";
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    ds.schema.continuous_names.push_back("f" + std::to_string(j));
  ds.schema.label_alphabet = {"A", "B", "C", "D", "E", "F", "G"};
  ds.x = x;
  ds.raw_continuous = x;
  ds.y = std::move(y);
  ds.stats = StandardizationStats{Eigen::VectorXd::Zero(x.cols()),
                                  Eigen::VectorXd::Ones(x.cols())};
  return ds;
}

struct TrainedFixture {
  testutil::Fixture data;
  MlpModel model;
};

const TrainedFixture& attack_fixture() {
  static const TrainedFixture fx = [] {
    TrainedFixture f{testutil::make_fixture(42, 800, 200), {}};
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.batch_size = 64;
    cfg.seed = 5;
    MlpModel init = MlpModel::he_init(static_cast<int>(f.data.train.x.cols()), {100, 60},
                                      f.data.train.schema.n_classes(), 0.2, 17);
    f.model = train(init, f.data.train, cfg);
    return f;
  }();
  return fx;
}

}  // namespace

TEST_CASE("fgsm with epsilon 0 is the identity") {
  const auto& fx = attack_fixture();
  AttackConfig cfg;
  cfg.kind = AttackKind::Fgsm;
  cfg.epsilon = 0.0;
  const AdversarialBatch b = fgsm(fx.model, fx.data.test, cfg);
  CHECK(b.x_adv == fx.data.test.x);
  CHECK(b.flip_count() == 0);
  CHECK(b.mean_pct_change() == 0.0);
}

TEST_CASE("fgsm follows the analytic gradient sign of a linear model") {
  Eigen::MatrixXd w(2, 2);
  w << 1.2, -0.4, -0.7, 0.9;
  Eigen::VectorXd bias(2);
  bias << 0.05, -0.05;
  const MlpModel m = linear_model(w, bias);

  Eigen::MatrixXd x(1, 2);
  x << 0.3, -0.6;
  Dataset ds = tiny_batch(x, {1});
  ds.schema.label_alphabet = {"A", "B"};

  // Closed-form gradient of the softmax-linear cross-entropy.
  const Eigen::RowVectorXd z = x * w + bias.transpose();
  const double e0 = std::exp(z[0]), e1 = std::exp(z[1]);
  const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
  const double y0 = 0.0, y1 = 1.0;  // label 1
  Eigen::RowVectorXd grad(2);
  grad[0] = (p0 - y0) * w(0, 0) + (p1 - y1) * w(0, 1);
  grad[1] = (p0 - y0) * w(1, 0) + (p1 - y1) * w(1, 1);

  AttackConfig cfg;
  cfg.kind = AttackKind::Fgsm;
  cfg.epsilon = 0.25;
  const AdversarialBatch b = fgsm(m, ds, cfg);
  for (int j = 0; j < 2; ++j) {
    const double delta = b.x_adv(0, j) - x(0, j);
    CHECK(delta == doctest::Approx(0.25 * (grad[j] > 0 ? 1.0 : -1.0)).epsilon(1e-12));
  }
}

TEST_CASE("fgsm moves every nonzero-gradient continuous coordinate by exactly eps") {
  const auto& fx = attack_fixture();
  AttackConfig cfg;
  cfg.kind = AttackKind::Fgsm;
  cfg.epsilon = 0.11;
  const AdversarialBatch b = fgsm(fx.model, fx.data.test, cfg);
  const int nc = fx.data.test.schema.n_continuous();
  const Eigen::MatrixXd grad =
      fx.model.loss_input_gradient(fx.data.test.x, fx.data.test.y);
  for (int i = 0; i < b.n(); ++i) {
    for (int j = 0; j < nc; ++j) {
      if (grad(i, j) > 0)
        CHECK(b.x_adv(i, j) == fx.data.test.x(i, j) + 0.11);
      else if (grad(i, j) < 0)
        CHECK(b.x_adv(i, j) == fx.data.test.x(i, j) - 0.11);
      else
        CHECK(b.x_adv(i, j) == fx.data.test.x(i, j));
    }
    // one-hot block untouched
    for (Eigen::Index j = nc; j < b.x_adv.cols(); ++j)
      CHECK(b.x_adv(i, j) == fx.data.test.x(i, j));
  }
}

TEST_CASE("pgd with epsilon 0 is the identity") {
  const auto& fx = attack_fixture();
  AttackConfig cfg;
  cfg.kind = AttackKind::Pgd;
  cfg.epsilon = 0.0;
  const AdversarialBatch b = pgd(fx.model, fx.data.test, cfg);
  CHECK(b.x_adv == fx.data.test.x);
}

TEST_CASE("one pgd step saturates the ball when gradient magnitudes exceed 1") {
  Eigen::MatrixXd w(2, 2);
  w << 10.0, -10.0, -10.0, 10.0;
  const MlpModel m = linear_model(w, Eigen::VectorXd::Zero(2));
  Eigen::MatrixXd x(1, 2);
  x << 0.0, 0.0;
  Dataset ds = tiny_batch(x, {0});
  ds.schema.label_alphabet = {"A", "B"};
  // p = (0.5, 0.5); dL/dx = (-10, 10) elementwise, so |grad| = 10 >= 1.
  AttackConfig cfg;
  cfg.kind = AttackKind::Pgd;
  cfg.epsilon = 0.2;
  cfg.pgd_steps = 1;
  const AdversarialBatch b = pgd(m, ds, cfg);
  CHECK(std::abs(b.x_adv(0, 0) - x(0, 0)) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(std::abs(b.x_adv(0, 1) - x(0, 1)) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("pgd iterates stay inside the projection ball") {
  const auto& fx = attack_fixture();
  const int nc = fx.data.test.schema.n_continuous();
  for (const double eps : {0.05, 0.3, 1.0}) {
    AttackConfig cfg;
    cfg.kind = AttackKind::Pgd;
    cfg.epsilon = eps;
    cfg.pgd_steps = 7;
    const AdversarialBatch b = pgd(fx.model, fx.data.test, cfg);
    const double linf =
        (b.x_adv.leftCols(nc) - fx.data.test.x.leftCols(nc)).cwiseAbs().maxCoeff();
    CHECK(linf <= eps + 1e-9);
    CHECK(b.x_adv.rightCols(b.x_adv.cols() - nc) ==
          fx.data.test.x.rightCols(b.x_adv.cols() - nc));
  }
}

TEST_CASE("saliency zero branches") {
  // Branch 1: target gradient negative.
  Eigen::MatrixXd j1(2, 2);
  j1 << -0.2, 0.5, 0.1, -0.3;
  const Eigen::VectorXd s1 = saliency_map(j1, 0, 2);
  CHECK(s1[0] == 0.0);
  CHECK(s1[1] == doctest::Approx(0.5 * 0.3).epsilon(1e-12));

  // Branch 2: off-target sum positive.
  Eigen::MatrixXd j2(2, 2);
  j2 << 0.2, 0.1, 0.3, -0.2;
  const Eigen::VectorXd s2 = saliency_map(j2, 0, 2);
  CHECK(s2[0] == 0.0);
  CHECK(s2[1] == doctest::Approx(0.1 * 0.2).epsilon(1e-12));
}

TEST_CASE("saliency of a hand-built 2-feature 2-class model matches the closed form") {
  Eigen::MatrixXd w(2, 2);
  w << 1.0, -0.5, 0.3, 0.2;
  Eigen::VectorXd bias(2);
  bias << 0.1, -0.1;
  const MlpModel m = linear_model(w, bias);
  Eigen::RowVectorXd x(2);
  x << 0.4, -0.7;

  // Closed-form softmax-linear Jacobian: dp_t/dx_i = p_t (w_{i,t} - sum_k p_k w_{i,k}).
  const Eigen::RowVectorXd z = x * w + bias.transpose();
  const double e0 = std::exp(z[0]), e1 = std::exp(z[1]);
  const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
  const int target = 0;
  Eigen::VectorXd expected(2);
  for (int i = 0; i < 2; ++i) {
    const double davg = p0 * w(i, 0) + p1 * w(i, 1);
    const double dt = p0 * (w(i, target) - davg);
    const double others = p1 * (w(i, 1 - target) - davg);
    expected[i] = (dt < 0 || others > 0) ? 0.0 : dt * std::abs(others);
  }

  const Eigen::MatrixXd jac = m.probability_jacobian(x);
  const Eigen::VectorXd s = saliency_map(jac, target, 2);
  CHECK(std::abs(s[0] - expected[0]) < 1e-9);
  CHECK(std::abs(s[1] - expected[1]) < 1e-9);
}

TEST_CASE("jsma stops immediately when saliency is all zero or target reached") {
  // All-negative target gradients: S == 0 everywhere, so nothing moves.
  Eigen::MatrixXd w(2, 2);
  w << -1.0, 1.0, -1.0, 1.0;
  const MlpModel m = linear_model(w, Eigen::VectorXd::Zero(2));
  Eigen::MatrixXd x(3, 2);
  x << 0.5, 0.2, -0.4, 1.0, 0.3, 0.4;  // x0 + x1 > 0, so every row predicts class 1
  Dataset ds = tiny_batch(x, {1, 1, 1});
  ds.schema.label_alphabet = {"A", "B"};

  AttackConfig cfg;
  cfg.kind = AttackKind::Jsma;
  cfg.epsilon = 0.3;
  cfg.jsma_target_policy = JsmaTargetPolicy::FixedTarget;
  cfg.jsma_fixed_target = 0;
  const AdversarialBatch b = jsma(m, ds, cfg);
  CHECK(b.x_adv == ds.x);

  // Target equal to the current prediction: stop before any perturbation.
  cfg.jsma_fixed_target = 1;
  const AdversarialBatch b2 = jsma(m, ds, cfg);
  CHECK(b2.x_adv == ds.x);

  cfg.epsilon = 0.0;
  const AdversarialBatch b3 = jsma(m, ds, cfg);
  CHECK(b3.x_adv == ds.x);
}

TEST_CASE("jsma perturbs at most jsma_max_features, each by exactly eps") {
  const auto& fx = attack_fixture();
  AttackConfig cfg;
  cfg.kind = AttackKind::Jsma;
  cfg.epsilon = 0.4;
  cfg.jsma_max_features = 3;
  const AdversarialBatch b = jsma(fx.model, fx.data.test, cfg);
  const int nc = fx.data.test.schema.n_continuous();
  int samples_with_changes = 0;
  for (int i = 0; i < b.n(); ++i) {
    int changed = 0;
    for (int j = 0; j < nc; ++j) {
      const double delta = b.x_adv(i, j) - fx.data.test.x(i, j);
      if (delta != 0.0) {
        ++changed;
        CHECK(b.x_adv(i, j) == fx.data.test.x(i, j) + 0.4);
      }
    }
    CHECK(changed <= 3);
    samples_with_changes += changed > 0 ? 1 : 0;
  }
  CHECK(samples_with_changes > 0);
}

TEST_CASE("msa_rank gives a dead feature zero flip rate") {
  // Feature 2 has zero weights everywhere; flipping it can never matter.
  Eigen::MatrixXd w(3, 2);
  w << 5.0, -5.0, 5.0, -5.0, 0.0, 0.0;
  const MlpModel m = linear_model(w, Eigen::VectorXd::Zero(2));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(120, 3);
  std::vector<int> y(120);
  for (int i = 0; i < 120; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = g(rng) + 2.0;  // keep raw values nonzero
    y[i] = x(i, 0) + x(i, 1) > 4.0 ? 0 : 1;
  }
  Dataset ds = tiny_batch(x, y);
  ds.schema.label_alphabet = {"A", "B"};

  const auto rank = msa_rank(m, ds, 0.25);
  bool found_dead = false;
  for (const auto& e : rank) {
    if (e.feature == 2) {
      CHECK(e.flip_rate == 0.0);
      found_dead = true;
    }
  }
  CHECK(found_dead);
}

TEST_CASE("msa_rank matches an exhaustive re-evaluation oracle") {
  const auto& fx = attack_fixture();
  const Dataset sub = [&] {
    Dataset d = fx.data.test;
    d.x = fx.data.test.x.topRows(200);
    d.raw_continuous = fx.data.test.raw_continuous.topRows(200);
    d.y.assign(fx.data.test.y.begin(), fx.data.test.y.begin() + 200);
    return d;
  }();
  const double percent = 0.05;
  const auto rank = msa_rank(fx.model, sub, percent);

  // Independent brute force: loop samples one by one, re-deriving everything.
  const int nc = sub.schema.n_continuous();
  std::vector<double> oracle_rate(static_cast<std::size_t>(nc), 0.0);
  int n_correct = 0;
  for (int f = 0; f < nc; ++f) {
    int flips = 0;
    int correct = 0;
    for (int i = 0; i < sub.n(); ++i) {
      const int pred = predict_row(fx.model, sub.x.row(i));
      if (pred != sub.y[i]) continue;
      ++correct;
      bool flipped = false;
      for (const double sign : {1.0, -1.0}) {
        Eigen::RowVectorXd row = sub.x.row(i);
        const double raw = sub.raw_continuous(i, f) * (1.0 + sign * percent);
        row[f] = (raw - sub.stats->mean[f]) / sub.stats->std[f];
        if (predict_row(fx.model, row) != sub.y[i]) flipped = true;
      }
      flips += flipped ? 1 : 0;
    }
    oracle_rate[static_cast<std::size_t>(f)] = static_cast<double>(flips) / correct;
    n_correct = correct;
  }
  CHECK(n_correct > 0);
  for (const auto& e : rank)
    CHECK(e.flip_rate == doctest::Approx(oracle_rate[static_cast<std::size_t>(e.feature)])
                             .epsilon(1e-12));
  // Sorted by rate, ties by index.
  for (std::size_t k = 1; k < rank.size(); ++k) {
    CHECK((rank[k - 1].flip_rate > rank[k].flip_rate ||
           (rank[k - 1].flip_rate == rank[k].flip_rate &&
            rank[k - 1].feature < rank[k].feature)));
  }
}

TEST_CASE("msa_rank requires an originally-correct sample") {
  Eigen::MatrixXd w(2, 2);
  w << 1.0, -1.0, 1.0, -1.0;
  const MlpModel m = linear_model(w, Eigen::VectorXd::Zero(2));
  Eigen::MatrixXd x(3, 2);
  x << 1.0, 1.0, 2.0, 0.5, 0.7, 0.1;  // all predicted class 0
  Dataset ds = tiny_batch(x, {1, 1, 1});  // every label wrong
  ds.schema.label_alphabet = {"A", "B"};
  CHECK_THROWS_AS(msa_rank(m, ds, 0.1), DataError);
}

TEST_CASE("msa with percent 0 is the identity and respects feature budgets") {
  const auto& fx = attack_fixture();
  const auto rank = msa_rank(fx.model, fx.data.test, 0.05);
  std::vector<int> ranked;
  for (const auto& e : rank) ranked.push_back(e.feature);

  AttackConfig cfg;
  cfg.kind = AttackKind::Msa1;
  cfg.msa_percent = 0.0;
  const AdversarialBatch zero = msa(fx.model, fx.data.test, cfg, ranked);
  CHECK(zero.x_adv == fx.data.test.x);
  CHECK(zero.raw_adv == fx.data.test.raw_continuous);

  cfg.msa_percent = 0.05;
  const AdversarialBatch one = msa(fx.model, fx.data.test, cfg, ranked);
  cfg.kind = AttackKind::Msa2;
  const AdversarialBatch two = msa(fx.model, fx.data.test, cfg, ranked);
  for (int i = 0; i < one.n(); ++i) {
    int c1 = 0, c2 = 0;
    for (int j = 0; j < fx.data.test.schema.n_continuous(); ++j) {
      c1 += one.raw_adv(i, j) != fx.data.test.raw_continuous(i, j) ? 1 : 0;
      c2 += two.raw_adv(i, j) != fx.data.test.raw_continuous(i, j) ? 1 : 0;
    }
    CHECK(c1 <= 1);
    CHECK(c2 <= 2);
  }

  // Exact relative change on every modified feature.
  for (int i = 0; i < two.n(); ++i) {
    for (int j = 0; j < fx.data.test.schema.n_continuous(); ++j) {
      const double before = fx.data.test.raw_continuous(i, j);
      const double after = two.raw_adv(i, j);
      if (after == before || before == 0.0) continue;
      CHECK(std::abs(std::abs(after - before) / std::abs(before) - 0.05) < 1e-12);
    }
  }
}

TEST_CASE("msa2 flips at least as often as msa1 on the same fixture") {
  const auto& fx = attack_fixture();
  const auto rank = msa_rank(fx.model, fx.data.test, 0.06);
  std::vector<int> ranked;
  for (const auto& e : rank) ranked.push_back(e.feature);

  AttackConfig cfg;
  cfg.kind = AttackKind::Msa1;
  cfg.msa_percent = 0.06;
  const double r1 = msa(fx.model, fx.data.test, cfg, ranked).flip_rate();
  cfg.kind = AttackKind::Msa2;
  const double r2 = msa(fx.model, fx.data.test, cfg, ranked).flip_rate();
  CHECK(r2 >= r1);
}

TEST_CASE("msa validates the ranked feature list") {
  const auto& fx = attack_fixture();
  AttackConfig cfg;
  cfg.kind = AttackKind::Msa2;
  cfg.msa_percent = 0.05;
  const std::vector<int> only_one{0};
  CHECK_THROWS_AS(msa(fx.model, fx.data.test, cfg, only_one), DataError);
}

TEST_CASE("attacks are deterministic and keep discrete columns frozen") {
  const auto& fx = attack_fixture();
  const int nc = fx.data.test.schema.n_continuous();
  for (const AttackKind kind : {AttackKind::None, AttackKind::Fgsm, AttackKind::Pgd,
                                AttackKind::Jsma, AttackKind::Msa1, AttackKind::Msa2}) {
    AttackConfig cfg;
    cfg.kind = kind;
    cfg.epsilon = 0.2;
    cfg.msa_percent = 0.04;
    const AdversarialBatch a = run_attack(fx.model, fx.data.test, cfg);
    const AdversarialBatch b = run_attack(fx.model, fx.data.test, cfg);
    CHECK(a.x_adv == b.x_adv);
    CHECK(a.raw_adv == b.raw_adv);
    CHECK(a.x_adv.rightCols(a.x_adv.cols() - nc) ==
          fx.data.test.x.rightCols(a.x_adv.cols() - nc));
    if (kind == AttackKind::Fgsm || kind == AttackKind::Pgd || kind == AttackKind::Jsma) {
      CHECK((a.x_adv.leftCols(nc) - fx.data.test.x.leftCols(nc)).cwiseAbs().maxCoeff() <=
            cfg.epsilon + 1e-9);
    }
  }
}

TEST_CASE("attack configs round-trip through JSON") {
  AttackConfig cfg;
  cfg.kind = AttackKind::Jsma;
  cfg.epsilon = 0.35;
  cfg.jsma_max_features = 4;
  cfg.jsma_target_policy = JsmaTargetPolicy::FixedTarget;
  cfg.jsma_fixed_target = 2;
  const AttackConfig back = AttackConfig::from_json(cfg.to_json());
  CHECK(back.kind == AttackKind::Jsma);
  CHECK(back.epsilon == 0.35);
  CHECK(back.jsma_max_features == 4);
  CHECK(back.jsma_target_policy == JsmaTargetPolicy::FixedTarget);
  CHECK(back.jsma_fixed_target == 2);
  CHECK_THROWS_AS(attack_kind_from_name("bogus"), ConfigError);
}
