#include "deferkit/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "deferkit/oracle.hpp"
#include "deferkit/surrogates.hpp"

namespace deferkit {

using nlohmann::json;

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.output_dir);
  const char* root = std::getenv("DEFERKIT_OUT");
  if (root && dir.is_relative()) dir = std::filesystem::path(root) / dir;
  std::filesystem::create_directories(dir);
  return dir;
}

SystemBundle build_system(const ExperimentConfig& cfg) {
  SystemBundle sys;
  sys.classification = cfg.task == "classification";
  std::size_t d = cfg.data.dim;
  if (cfg.data.generator == "csv") {
    Dataset probe = cfg.build_dataset();
    d = probe.dim();
  }
  if (sys.classification) {
    std::size_t out = cfg.data.num_classes + cfg.num_experts();
    sys.h = cfg.train.hidden.empty()
                ? ScoreModel::linear(d, out, mix_seed(cfg.seed, 'h'))
                : ScoreModel::mlp(d, cfg.train.hidden, out, ScoreModel::Layer::Kind::tanh,
                                  mix_seed(cfg.seed, 'h'));
  } else {
    std::size_t out = cfg.num_experts() + 1;
    sys.h = cfg.train.hidden.empty()
                ? ScoreModel::linear(d, out, mix_seed(cfg.seed, 'r'))
                : ScoreModel::mlp(d, cfg.train.hidden, out, ScoreModel::Layer::Kind::tanh,
                                  mix_seed(cfg.seed, 'r'));
    sys.f = cfg.train.f_hidden.empty()
                ? ScoreModel::linear(d, 1, mix_seed(cfg.seed, 'f'))
                : ScoreModel::mlp(d, cfg.train.f_hidden, 1, ScoreModel::Layer::Kind::tanh,
                                  mix_seed(cfg.seed, 'f'));
  }
  return sys;
}

void save_checkpoint(const SystemBundle& system, const ExperimentConfig& cfg,
                     const std::filesystem::path& path) {
  json doc;
  doc["version"] = kModelFormatVersion;
  doc["task"] = cfg.task;
  doc["config_hash"] = cfg.hash();
  if (system.classification) {
    doc["models"]["h"] = json::parse(system.h.to_json_string());
  } else {
    doc["models"]["r"] = json::parse(system.h.to_json_string());
    doc["models"]["f"] = json::parse(system.f->to_json_string());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << doc.dump(2) << "\n";
}

SystemBundle load_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json doc = json::parse(ss.str());
  if (doc.value("version", "") != std::string(kModelFormatVersion))
    throw ParseError("checkpoint version is not " + std::string(kModelFormatVersion));
  std::string task = doc.value("task", "classification");
  if (task != cfg.task)
    throw ConfigError("checkpoint task '" + task + "' does not match config task '" +
                      cfg.task + "'");
  SystemBundle sys;
  sys.classification = task == "classification";
  if (sys.classification) {
    sys.h = ScoreModel::from_json_string(doc.at("models").at("h").dump());
  } else {
    sys.h = ScoreModel::from_json_string(doc.at("models").at("r").dump());
    sys.f = ScoreModel::from_json_string(doc.at("models").at("f").dump());
  }
  return sys;
}

int cmd_gen(const ExperimentConfig& cfg) {
  std::filesystem::path dir = resolve_output_dir(cfg);
  Dataset ds = cfg.build_dataset();
  ExpertPanel panel = cfg.build_panel(ds);
  std::string comment = "# config_hash=" + cfg.hash();

  write_dataset_csv(ds, dir / "dataset.csv", comment);
  panel.export_cache_csv(dir / "expert_cache.csv", comment);

  json meta;
  meta["config_hash"] = cfg.hash();
  meta["n"] = ds.n();
  meta["d"] = ds.dim();
  meta["task"] = cfg.task;
  meta["train_size"] = ds.train_idx.size();
  meta["test_size"] = ds.test_idx.size();
  std::ofstream out(dir / "dataset_meta.json");
  out << meta.dump(2) << "\n";
  std::cout << "wrote " << (dir / "dataset.csv").string() << " (" << ds.n() << " examples)\n";
  return 0;
}

namespace {

json history_to_json(const TrainHistory& history) {
  json epochs = json::array();
  for (const EpochStats& e : history.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"objective", e.objective},
                      {"clean_metric", e.clean_metric},
                      {"def_loss_probe", e.def_loss_probe},
                      {"forwards", e.forwards},
                      {"backwards", e.backwards}});
  }
  json doc;
  doc["epochs"] = epochs;
  doc["aborted"] = history.aborted;
  doc["note"] = history.note;
  return doc;
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg) {
  std::filesystem::path dir = resolve_output_dir(cfg);
  Dataset ds = cfg.build_dataset();
  ExpertPanel panel = cfg.build_panel(ds);
  CostModel cm = cfg.build_cost_model();
  SurrogateParams params = cfg.build_params();
  PerturbationBall ball = cfg.build_ball();
  AttackPlan plan = cfg.build_plan();
  TrainConfig tc = cfg.build_train_config();

  SystemBundle sys = build_system(cfg);
  TrainHistory history;
  switch (tc.objective) {
    case TrainConfig::Objective::rerm_c:
      history = train_rerm_c(sys.h, ds, panel, cm, params, ball, plan, tc);
      break;
    case TrainConfig::Objective::clean_class:
      history = train_baseline_class(sys.h, ds, panel, cm, cfg.loss.u, tc);
      break;
    case TrainConfig::Objective::rerm_r:
      history = train_rerm_r(sys.h, *sys.f, ds, panel, cm, params, ball, plan, tc);
      break;
    case TrainConfig::Objective::clean_reg:
      history = train_baseline_reg(sys.h, *sys.f, ds, panel, cm, cfg.loss.u, tc);
      break;
  }

  save_checkpoint(sys, cfg, dir / "checkpoint.json");

  json manifest;
  manifest["version"] = "deferkit-manifest-v1";
  manifest["config"] = json::parse(cfg.to_json_string());
  manifest["config_hash"] = cfg.hash();
  manifest["history"] = history_to_json(history);
  std::ostringstream checksum;
  checksum << std::hex << sys.h.param_hash();
  manifest["checksums"][cfg.task == "classification" ? "h" : "r"] = checksum.str();
  if (sys.f) {
    std::ostringstream fsum;
    fsum << std::hex << sys.f->param_hash();
    manifest["checksums"]["f"] = fsum.str();
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";

  if (history.aborted) {
    std::cerr << json{{"error", "training_aborted"}, {"message", history.note}}.dump() << "\n";
    return 1;
  }
  double final_metric =
      history.epochs.empty() ? 0.0 : history.epochs.back().clean_metric;
  std::cout << "trained " << cfg.train.objective << " for " << history.epochs.size()
            << " epochs; clean train metric " << final_metric << "\n";
  std::cout << "wrote " << (dir / "checkpoint.json").string() << "\n";
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  std::filesystem::path dir = resolve_output_dir(cfg);
  std::filesystem::path ckpt =
      checkpoint_path.empty() ? dir / "checkpoint.json" : std::filesystem::path(checkpoint_path);
  SystemBundle sys = load_checkpoint(ckpt, cfg);
  Dataset ds = cfg.build_dataset();
  ExpertPanel panel = cfg.build_panel(ds);
  CostModel cm = cfg.build_cost_model();
  SurrogateParams params = cfg.build_params();
  PerturbationBall ball = cfg.build_ball(cfg.eval.gamma);
  AttackPlan plan = cfg.build_plan();

  std::ofstream out(dir / "adversarial_dump.csv");
  if (!out) throw IoError("cannot open for writing: " + (dir / "adversarial_dump.csv").string());
  out.precision(17);
  out << "# config_hash=" << cfg.hash() << "\n";
  out << "example_id,outcome,delta_norm,objective_value\n";

  auto delta_norm = [&](const Tensor& a, const Tensor& b) {
    Tensor d = a;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= b[i];
    return ball.p == NormOrder::linf ? linf_norm(d) : l2_norm(d);
  };

  for (std::size_t i : ds.test_idx) {
    Tensor x = ds.row(i);
    AttackPlan seeded = plan;
    seeded.seed = mix_seed(plan.seed, i, 0xa77);
    // untargeted row (outcome 0)
    Tensor xu;
    double obj;
    if (sys.classification) {
      xu = untargeted_attack_class(sys.h, x, ds.labels[i], panel.labels_for(i), cm,
                                   params.u, ball, seeded);
      obj = surrogate_def_class(sys.h(xu), ds.labels[i], panel.labels_for(i), cm, params.u);
    } else {
      xu = untargeted_attack_reg(sys.h, *sys.f, x, ds.target_row(i), panel.outputs_for(i),
                                 cm, params.u, ball, seeded);
      obj = surrogate_def_reg(sys.f.value()(xu), sys.h(xu), ds.target_row(i),
                              panel.outputs_for(i), cm, params.u);
    }
    out << i << ",0," << delta_norm(xu, x) << "," << obj << "\n";
    // per-outcome proxies
    OutcomeProxySet proxies =
        outcome_proxies(sys.h, x, ball, seeded, params, ProxyDirection::toward);
    for (const auto& [outcome, proxy] : proxies.proxies) {
      out << i << "," << outcome << "," << delta_norm(proxy, x) << ","
          << proxies.objective_values.at(outcome) << "\n";
    }
  }
  std::cout << "wrote " << (dir / "adversarial_dump.csv").string() << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  std::filesystem::path dir = resolve_output_dir(cfg);
  std::filesystem::path ckpt =
      checkpoint_path.empty() ? dir / "checkpoint.json" : std::filesystem::path(checkpoint_path);
  SystemBundle sys = load_checkpoint(ckpt, cfg);
  Dataset ds = cfg.build_dataset();
  ExpertPanel panel = cfg.build_panel(ds);
  CostModel cm = cfg.build_cost_model();

  EvalSettings settings;
  settings.modes = cfg.eval_modes();
  settings.nu = cfg.eval.nu;
  settings.params = cfg.build_params();
  settings.ball = cfg.build_ball(cfg.eval.gamma);
  settings.plan = cfg.build_plan();
  settings.run_id = cfg.task + "-" + cfg.hash().substr(0, 8);
  settings.config_hash = cfg.hash();

  MetricReport report = evaluate(sys, ds, panel, cm, settings);
  emit_report(report, dir, "report");

  const char* metric_name = sys.classification ? "acc%" : "rmse";
  for (const ModeResult& m : report.per_mode)
    std::cout << attack_mode_name(m.mode) << " " << metric_name << " = " << m.metric << "\n";
  std::cout << "def_loss (probe-estimated) = " << report.def_loss << "\n";
  std::cout << "wrote " << (dir / "report.json").string() << "\n";
  return 0;
}

int cmd_verify(const ExperimentConfig& cfg) {
  std::filesystem::path dir = resolve_output_dir(cfg);
  oracle::VerificationReport report = oracle::run_verification_suite(cfg.seed);
  for (const oracle::CheckResult& c : report.checks)
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << " (" << c.witness << ")\n";
  std::ofstream out(dir / "verification.json");
  out << report.to_json_string() << "\n";
  std::cout << "wrote " << (dir / "verification.json").string() << "\n";
  return report.all_pass() ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& report_paths) {
  bool first = true;
  for (const std::string& path : report_paths) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    MetricReport report = MetricReport::from_json_string(ss.str());
    if (first) {
      std::cout << report.csv_header() << "\n";
      first = false;
    }
    std::cout << report.csv_row() << "\n";
  }
  return 0;
}

}  // namespace deferkit
