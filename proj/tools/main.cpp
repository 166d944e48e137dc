// tabadv: train a loan-grade classifier on tabular data, probe it with
// gradient and max-salience perturbations, and harden it with
// multiplicative-weights robust training.
//
// Stage seeds fan out from the master seed with a fixed counter scheme:
//   derive_seed(master, 1) synthetic train draw
//   derive_seed(master, 2) synthetic test draw / csv split
//   derive_seed(master, 3) model init
//   derive_seed(master, 4) training loop
//   derive_seed(master, 6) robust run
//   derive_seed(master, 7) payoff rows
// so every stage is reproducible in isolation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tabadv/common.hpp"
#include "tabadv/dataset.hpp"
#include "tabadv/eval.hpp"
#include "tabadv/mlp.hpp"
#include "tabadv/robust.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tabadv;

namespace {

constexpr std::uint64_t kSynthTrainStream = 1;
constexpr std::uint64_t kSynthTestStream = 2;
constexpr std::uint64_t kModelInitStream = 3;
constexpr std::uint64_t kTrainLoopStream = 4;
constexpr std::uint64_t kRobustStream = 6;
constexpr std::uint64_t kPayoffStream = 7;

struct RunConfig {
  std::uint64_t master_seed = 7;
  std::string output_dir = "out";
  int threads = 0;

  // dataset source: exactly one of synthetic / csv
  bool use_csv = false;
  std::string csv_path;
  std::string schema_path;
  std::string synth_spec_path;  // empty -> built-in default spec
  int synth_n = 6000;
  double test_fraction = 1.0 / 6.0;

  TrainConfig train_cfg;
  ObjectiveSet objectives = ObjectiveSet::standard(0.3, 0.2, 0.4, 0.04);
  std::map<std::string, std::vector<double>> grids{
      {"fgsm", {0.0, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5}},
      {"pgd", {0.0, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5}},
      {"jsma", {0.0, 0.05, 0.1, 0.2, 0.3, 0.5}},
      {"msa1", {0.0, 0.01, 0.02, 0.04, 0.06, 0.08}},
      {"msa2", {0.0, 0.01, 0.02, 0.04, 0.06, 0.08}},
  };
  MwuConfig mwu;

  AttackConfig exhibit_attack;
  int exhibit_n = 5;
  std::string exhibit_from, exhibit_to;

  json raw;  // config document as loaded, echoed into manifests
};

RunConfig defaults() {
  RunConfig c;
  c.train_cfg.epochs = 30;
  c.train_cfg.batch_size = 64;
  c.mwu.T = 10;
  c.mwu.oracle_cfg.epochs = 8;
  c.mwu.oracle_cfg.batch_size = 64;
  c.exhibit_attack.kind = AttackKind::Msa2;
  c.exhibit_attack.msa_percent = 0.04;
  return c;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return j;
}

RunConfig load_config(const std::string& path) {
  RunConfig c = defaults();
  if (path.empty()) {
    c.raw = json::object();
    return c;
  }
  const json j = read_json_file(path);
  c.raw = j;
  if (j.contains("master_seed")) c.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    const bool has_csv = d.contains("csv");
    const bool has_synth = d.contains("synthetic");
    if (has_csv == has_synth)
      throw ConfigError("dataset needs exactly one of \"csv\" or \"synthetic\"");
    if (has_csv) {
      c.use_csv = true;
      c.csv_path = d.at("csv").at("path").get<std::string>();
      c.schema_path = d.at("csv").at("schema").get<std::string>();
    } else {
      if (d.at("synthetic").contains("spec"))
        c.synth_spec_path = d.at("synthetic").at("spec").get<std::string>();
      if (d.at("synthetic").contains("n")) c.synth_n = d.at("synthetic").at("n").get<int>();
    }
    if (d.contains("test_fraction")) c.test_fraction = d.at("test_fraction").get<double>();
  }
  if (j.contains("train")) c.train_cfg = TrainConfig::from_json(j.at("train"));
  if (j.contains("attacks")) c.objectives = ObjectiveSet::from_json(j.at("attacks"));
  if (j.contains("sweep") && j.at("sweep").contains("grids")) {
    c.grids.clear();
    for (const auto& [kind, grid] : j.at("sweep").at("grids").items())
      c.grids[kind] = grid.get<std::vector<double>>();
  }
  if (j.contains("mwu")) c.mwu = MwuConfig::from_json(j.at("mwu"));
  if (j.contains("exhibits")) {
    const json& e = j.at("exhibits");
    if (e.contains("attack")) c.exhibit_attack = AttackConfig::from_json(e.at("attack"));
    if (e.contains("n")) c.exhibit_n = e.at("n").get<int>();
    if (e.contains("from")) c.exhibit_from = e.at("from").get<std::string>();
    if (e.contains("to")) c.exhibit_to = e.at("to").get<std::string>();
  }
  return c;
}

void apply_env(RunConfig& c) {
  if (const char* out = std::getenv("TABADV_OUT"); out && *out) c.output_dir = out;
  if (const char* th = std::getenv("TABADV_THREADS"); th && *th) c.threads = std::atoi(th);
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

void write_stage_manifest(const std::string& dir, const std::string& stage,
                          const RunConfig& c, json extra) {
  extra["version"] = "1.0.0";
  extra["stage"] = stage;
  extra["master_seed"] = c.master_seed;
  extra["config"] = c.raw;
  write_json_file(dir + "/manifest.json", extra);
}

const AttackConfig& objective_for_kind(const RunConfig& c, AttackKind kind) {
  for (const auto& o : c.objectives.objectives)
    if (o.kind == kind) return o;
  throw ConfigError("no configured objective of kind " + attack_kind_name(kind));
}

Dataset load_artifact(const std::string& path) {
  if (!fs::exists(path))
    throw IoError("missing artifact " + path + " (run `tabadv prepare` first)");
  return Dataset::load(path);
}

MlpModel load_model_artifact(const std::string& path) {
  if (!fs::exists(path))
    throw IoError("missing artifact " + path + " (run `tabadv train` first)");
  return MlpModel::load(path);
}

int cmd_prepare(const RunConfig& c) {
  Dataset train_raw, test_raw;
  if (c.use_csv) {
    const Schema schema = Schema::from_json(read_json_file(c.schema_path));
    const Dataset full = load_csv(c.csv_path, schema);
    auto parts = split(full, c.test_fraction, derive_seed(c.master_seed, kSynthTestStream));
    train_raw = std::move(parts.first);
    test_raw = std::move(parts.second);
    std::cout << "loaded " << full.n() << " rows (" << full.dropped_rows
              << " dropped) from " << c.csv_path << "\n";
  } else {
    SyntheticSpec spec = c.synth_spec_path.empty()
                             ? SyntheticSpec::default_spec()
                             : SyntheticSpec::from_json(read_json_file(c.synth_spec_path));
    const int n_test = static_cast<int>(std::llround(c.synth_n * c.test_fraction));
    const int n_train = c.synth_n - n_test;
    if (n_train < 1 || n_test < 1) throw ConfigError("synthetic sizes leave an empty split");
    train_raw = synth_generate(derive_seed(c.master_seed, kSynthTrainStream), n_train, spec);
    test_raw = synth_generate(derive_seed(c.master_seed, kSynthTestStream), n_test, spec);
  }

  auto [train_ds, stats] = fit_standardize(train_raw);
  const Dataset test_ds = apply_standardize(test_raw, stats);

  const std::string dir = c.output_dir + "/dataset";
  fs::create_directories(dir);
  train_ds.save(dir + "/train.json");
  test_ds.save(dir + "/test.json");
  write_stage_manifest(dir, "prepare", c,
                       json{{"files", {"train.json", "test.json"}},
                            {"n_train", train_ds.n()},
                            {"n_test", test_ds.n()},
                            {"dropped_rows", train_raw.dropped_rows},
                            {"train_fingerprint", train_ds.fingerprint()},
                            {"test_fingerprint", test_ds.fingerprint()}});
  std::cout << "wrote " << dir << " (train " << train_ds.n() << ", test " << test_ds.n()
            << ")\n";
  return 0;
}

int cmd_train(const RunConfig& c) {
  const Dataset train_ds = load_artifact(c.output_dir + "/dataset/train.json");
  const Dataset test_ds = load_artifact(c.output_dir + "/dataset/test.json");

  MlpModel init =
      MlpModel::he_init(static_cast<int>(train_ds.x.cols()), c.mwu.arch.hidden_sizes,
                        train_ds.schema.n_classes(), c.mwu.arch.dropout_rate,
                        derive_seed(c.master_seed, kModelInitStream));
  TrainConfig cfg = c.train_cfg;
  cfg.seed = derive_seed(c.master_seed, kTrainLoopStream);
  const MlpModel model = train(std::move(init), train_ds, cfg);

  const double train_acc = accuracy(model, train_ds);
  const double test_acc = accuracy(model, test_ds);

  const std::string dir = c.output_dir + "/model";
  fs::create_directories(dir);
  model.save(dir + "/model.json");
  write_stage_manifest(dir, "train", c,
                       json{{"files", {"model.json"}},
                            {"train_accuracy", train_acc},
                            {"test_accuracy", test_acc},
                            {"train_fingerprint", train_ds.fingerprint()}});
  std::cout << "trained model: train acc " << train_acc << ", test acc " << test_acc
            << "\n";
  return 0;
}

int cmd_attack(const RunConfig& c, const std::string& kind_flag,
               const std::vector<double>& grid_flag) {
  const Dataset test_ds = load_artifact(c.output_dir + "/dataset/test.json");
  const MlpModel model = load_model_artifact(c.output_dir + "/model/model.json");

  std::vector<std::string> kinds;
  if (!kind_flag.empty()) {
    kinds.push_back(kind_flag);
  } else {
    for (const auto& [kind, grid] : c.grids) kinds.push_back(kind);
  }

  const std::string dir = c.output_dir + "/attacks";
  fs::create_directories(dir);
  json files = json::array();
  for (const auto& kind_name : kinds) {
    const AttackKind kind = attack_kind_from_name(kind_name);
    if (kind == AttackKind::None) continue;
    AttackConfig base = objective_for_kind(c, kind);
    std::vector<double> grid = grid_flag;
    if (grid.empty()) {
      const auto it = c.grids.find(kind_name);
      if (it == c.grids.end())
        throw ConfigError("no sweep grid configured for " + kind_name);
      grid = it->second;
    }
    const EfficacyCurve curve = efficacy_sweep(model, test_ds, base, grid, c.threads);
    const std::string curve_file = "curve_" + kind_name + ".csv";
    write_curve_csv(dir + "/" + curve_file, curve);
    files.push_back(curve_file);

    const AdversarialBatch batch = run_attack(model, test_ds, base);
    const std::string adv_file = "adversarial_" + kind_name + ".csv";
    write_adversarial_csv(dir + "/" + adv_file, batch, test_ds.schema);
    files.push_back(adv_file);
    std::cout << kind_name << ": flip rate " << batch.flip_rate() << " at budget "
              << base.budget() << "\n";
  }
  write_stage_manifest(dir, "attack", c, json{{"files", files}});
  return 0;
}

int cmd_msa_rank(const RunConfig& c, double percent_flag) {
  const Dataset test_ds = load_artifact(c.output_dir + "/dataset/test.json");
  const MlpModel model = load_model_artifact(c.output_dir + "/model/model.json");
  const double percent =
      percent_flag > 0 ? percent_flag : objective_for_kind(c, AttackKind::Msa1).msa_percent;

  const auto ranking = msa_rank(model, test_ds, percent);
  const std::string path = c.output_dir + "/msa_rank.csv";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "rank,feature_index,feature,flip_rate\n";
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    out << r << ',' << ranking[r].feature << ','
        << test_ds.schema.continuous_names[static_cast<std::size_t>(ranking[r].feature)]
        << ',' << format_double(ranking[r].flip_rate) << "\n";
  }
  std::cout << "wrote " << path << " (top: "
            << test_ds.schema.continuous_names[static_cast<std::size_t>(ranking[0].feature)]
            << ")\n";
  return 0;
}

int cmd_robust(const RunConfig& c, bool baseline, bool static_attacks) {
  const Dataset train_ds = load_artifact(c.output_dir + "/dataset/train.json");
  const Dataset test_ds = load_artifact(c.output_dir + "/dataset/test.json");

  MwuConfig cfg = c.mwu;
  cfg.seed = derive_seed(c.master_seed, kRobustStream);
  cfg.threads = c.threads;
  if (static_attacks) cfg.static_attacks = true;

  const RobustRunResult run = baseline
                                  ? uniform_baseline(c.objectives, cfg, train_ds, test_ds)
                                  : mwu_robust_train(c.objectives, cfg, train_ds, test_ds);

  const std::string dir = c.output_dir + (baseline ? "/robust_baseline" : "/robust");
  fs::create_directories(dir);
  write_trajectory_csv(dir + "/trajectory.csv", run, c.objectives.names());
  run.ensemble.save(dir + "/ensemble");

  const auto& last = run.trajectory.back();
  write_stage_manifest(
      dir, baseline ? "robust-baseline" : "robust", c,
      json{{"files", {"trajectory.csv", "ensemble"}},
           {"T", cfg.T},
           {"eta", run.eta},
           {"loss_cap", run.loss_cap},
           {"static_attacks", cfg.static_attacks},
           {"final_bottleneck_loss", last.ensemble_bottleneck_loss},
           {"final_bottleneck_accuracy", last.ensemble_bottleneck_accuracy}});
  std::cout << (baseline ? "baseline" : "mwu") << " bottleneck: loss "
            << last.ensemble_bottleneck_loss << ", accuracy "
            << last.ensemble_bottleneck_accuracy << "\n";
  return 0;
}

int cmd_payoff(const RunConfig& c) {
  const Dataset train_ds = load_artifact(c.output_dir + "/dataset/train.json");
  const Dataset test_ds = load_artifact(c.output_dir + "/dataset/test.json");

  TrainConfig oracle_cfg = c.mwu.oracle_cfg;
  oracle_cfg.seed = derive_seed(c.master_seed, kPayoffStream);
  const PayoffMatrix pm =
      payoff_matrix(c.objectives, train_ds, test_ds, oracle_cfg, c.mwu.arch, c.threads);

  const std::string dir = c.output_dir + "/payoff";
  fs::create_directories(dir);
  write_payoff_csv(dir + "/payoff_loss.csv", dir + "/payoff_accuracy.csv", pm);
  write_stage_manifest(dir, "payoff", c,
                       json{{"files", {"payoff_loss.csv", "payoff_accuracy.csv"}}});
  std::cout << "wrote " << dir << " (" << pm.labels.size() << "x" << pm.labels.size()
            << ")\n";
  return 0;
}

void copy_into(const std::string& src, const std::string& dst_dir, json& files) {
  if (!fs::exists(src)) return;
  const std::string name = fs::path(src).filename().string();
  fs::copy_file(src, dst_dir + "/" + name, fs::copy_options::overwrite_existing);
  files.push_back(name);
}

int cmd_report(const RunConfig& c) {
  const Dataset test_ds = load_artifact(c.output_dir + "/dataset/test.json");
  const MlpModel model = load_model_artifact(c.output_dir + "/model/model.json");

  const std::string dir = c.output_dir + "/report";
  fs::create_directories(dir);
  json files = json::array();

  // One curve per configured attack kind is mandatory.
  for (const auto& [kind, grid] : c.grids) {
    const std::string src = c.output_dir + "/attacks/curve_" + kind + ".csv";
    if (!fs::exists(src))
      throw IoError("missing artifact " + src + " (run `tabadv attack` first)");
    copy_into(src, dir, files);
  }
  copy_into(c.output_dir + "/payoff/payoff_loss.csv", dir, files);
  copy_into(c.output_dir + "/payoff/payoff_accuracy.csv", dir, files);
  if (fs::exists(c.output_dir + "/robust/trajectory.csv")) {
    fs::copy_file(c.output_dir + "/robust/trajectory.csv", dir + "/trajectory_mwu.csv",
                  fs::copy_options::overwrite_existing);
    files.push_back("trajectory_mwu.csv");
  }
  if (fs::exists(c.output_dir + "/robust_baseline/trajectory.csv")) {
    fs::copy_file(c.output_dir + "/robust_baseline/trajectory.csv",
                  dir + "/trajectory_baseline.csv", fs::copy_options::overwrite_existing);
    files.push_back("trajectory_baseline.csv");
  }

  std::optional<std::pair<int, int>> filter;
  if (!c.exhibit_from.empty() && !c.exhibit_to.empty()) {
    const int from = test_ds.schema.label_index(c.exhibit_from);
    const int to = test_ds.schema.label_index(c.exhibit_to);
    if (from < 0 || to < 0) throw ConfigError("exhibit grade filter not in label alphabet");
    filter = std::make_pair(from, to);
  }
  const auto exhibits =
      sample_exhibits(model, test_ds, c.exhibit_attack, c.exhibit_n, filter);
  write_exhibits_csv(dir + "/exhibits.csv", exhibits);
  files.push_back("exhibits.csv");

  write_stage_manifest(dir, "report", c,
                       json{{"files", files},
                            {"dataset_fingerprint", test_ds.fingerprint()},
                            {"exhibit_count", exhibits.size()}});
  std::cout << "wrote " << dir << " (" << files.size() << " files)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial attacks and multiplicative-weights robust training for "
               "tabular loan-grade classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_flag;
  int threads_flag = -1;
  std::uint64_t seed_flag = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "run configuration JSON")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_flag, "output directory (overrides config)");
  app.add_option("--threads", threads_flag, "worker thread cap, 0 = auto");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { seed_flag = s; seed_set = true; },
      "master seed (overrides config)");

  auto* prepare = app.add_subcommand("prepare", "generate or load the dataset artifact");
  std::string synth_flag, csv_flag, schema_flag;
  int n_flag = 0;
  double tf_flag = 0.0;
  prepare->add_option("--synthetic", synth_flag, "synthetic spec JSON ('default' builtin)");
  prepare->add_option("--csv", csv_flag, "input CSV path");
  prepare->add_option("--schema", schema_flag, "schema JSON for the CSV");
  prepare->add_option("--n", n_flag, "synthetic sample count");
  prepare->add_option("--test-fraction", tf_flag, "test split fraction in (0,1)");

  auto* train_cmd = app.add_subcommand("train", "train the clean classifier");

  auto* attack = app.add_subcommand("attack", "efficacy sweeps and sample-level exports");
  std::string kind_flag;
  std::string grid_flag;
  double eps_flag = -1.0, pct_flag = -1.0;
  attack->add_option("--kind", kind_flag, "attack kind (default: all configured)");
  attack->add_option("--grid", grid_flag, "comma-separated budget grid");
  attack->add_option("--eps", eps_flag, "single epsilon grid point");
  attack->add_option("--percent", pct_flag, "single msa percent grid point");

  auto* msarank = app.add_subcommand("msa-rank", "rank features by single-feature flips");
  double rank_pct = 0.0;
  msarank->add_option("--percent", rank_pct, "raw-space percent change");

  auto* robust = app.add_subcommand("robust", "multiplicative-weights robust training");
  bool baseline = false, static_attacks = false;
  int t_flag = 0;
  robust->add_flag("--baseline", baseline, "freeze the weights at uniform");
  robust->add_flag("--static", static_attacks,
                   "attack a fixed clean model instead of current parameters");
  robust->add_option("--T", t_flag, "iterations");

  auto* payoff = app.add_subcommand("payoff", "train-vs-evaluate objective matrix");
  auto* report = app.add_subcommand("report", "assemble the report bundle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = load_config(config_path);
    apply_env(cfg);
    if (!out_flag.empty()) cfg.output_dir = out_flag;
    if (threads_flag >= 0) cfg.threads = threads_flag;
    if (seed_set) cfg.master_seed = seed_flag;

    if (prepare->parsed()) {
      if (!csv_flag.empty()) {
        cfg.use_csv = true;
        cfg.csv_path = csv_flag;
        if (!schema_flag.empty()) cfg.schema_path = schema_flag;
        if (cfg.schema_path.empty())
          throw ConfigError("--csv requires --schema (or a config with dataset.csv.schema)");
      } else if (!synth_flag.empty()) {
        cfg.use_csv = false;
        if (synth_flag != "default") cfg.synth_spec_path = synth_flag;
      }
      if (n_flag > 0) cfg.synth_n = n_flag;
      if (tf_flag > 0.0) cfg.test_fraction = tf_flag;
      return cmd_prepare(cfg);
    }
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (attack->parsed()) {
      std::vector<double> grid;
      if (eps_flag >= 0.0) grid.push_back(eps_flag);
      if (pct_flag >= 0.0) grid.push_back(pct_flag);
      if (!grid_flag.empty()) {
        std::stringstream ss(grid_flag);
        std::string tok;
        while (std::getline(ss, tok, ',')) grid.push_back(std::stod(tok));
      }
      return cmd_attack(cfg, kind_flag, grid);
    }
    if (msarank->parsed()) return cmd_msa_rank(cfg, rank_pct);
    if (robust->parsed()) {
      if (t_flag > 0) cfg.mwu.T = t_flag;
      return cmd_robust(cfg, baseline, static_attacks);
    }
    if (payoff->parsed()) return cmd_payoff(cfg);
    if (report->parsed()) return cmd_report(cfg);
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
