#include "deferkit/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "deferkit/surrogates.hpp"

namespace deferkit {

using nlohmann::json;

const char* attack_mode_name(AttackMode mode) {
  switch (mode) {
    case AttackMode::clean: return "clean";
    case AttackMode::untargeted: return "untargeted";
    case AttackMode::targeted: return "targeted";
  }
  return "clean";
}

std::size_t decide_class(const ScoreModel& h, const Tensor& x) {
  Tensor s = h(x);
  if (!s.all_finite()) throw NumericError("decide_class: non-finite scores");
  return s.argmax_lowest_tie() + 1;
}

RegDecision decide_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                       const std::vector<Tensor>& expert_outputs) {
  RegDecision d;
  d.action = r(x).argmax_lowest_tie() + 1;
  d.output = d.action == 1 ? f(x) : expert_outputs.at(d.action - 2);
  return d;
}

namespace {

ModeResult evaluate_mode(const SystemBundle& system, const Dataset& ds,
                         const ExpertPanel& panel, const CostModel& cm,
                         const EvalSettings& settings, AttackMode mode, std::size_t nu) {
  ModeResult res;
  res.mode = mode;
  std::size_t experts = panel.expert_count();
  res.defer_rate.assign(1 + experts, 0.0);
  const std::vector<std::size_t>& idx = ds.test_idx;
  if (idx.empty()) throw ConfigError("evaluate: empty test split");

  double metric_acc = 0.0;
  double loss_acc = 0.0;
  for (std::size_t i : idx) {
    Tensor x = ds.row(i);
    Tensor x_eval = x;
    if (mode != AttackMode::clean && settings.ball.gamma > 0) {
      AttackPlan plan = settings.plan;
      plan.seed = mix_seed(settings.plan.seed, i, static_cast<std::uint64_t>(mode));
      if (mode == AttackMode::untargeted) {
        if (system.classification) {
          x_eval = untargeted_attack_class(system.h, x, ds.labels[i], panel.labels_for(i),
                                           cm, settings.params.u, settings.ball, plan);
        } else {
          x_eval = untargeted_attack_reg(system.h, *system.f, x, ds.target_row(i),
                                         panel.outputs_for(i), cm, settings.params.u,
                                         settings.ball, plan);
        }
      } else {
        x_eval = targeted_attack(system.h, x, nu, settings.ball, plan, settings.params.u)
                     .point;
      }
    }

    DeferralRecord rec;
    rec.example_id = i;
    rec.attack = mode;
    if (system.classification) {
      std::size_t k = ds.num_classes;
      std::vector<int> m = panel.labels_for(i);
      int y = ds.labels[i];
      std::size_t action = decide_class(system.h, x_eval);
      rec.decision = action;
      bool correct;
      if (action <= k) {
        correct = static_cast<int>(action) == y;
      } else {
        rec.deferred_to = action - k;
        correct = m[action - k - 1] == y;
      }
      rec.correct = correct;
      rec.realized_cost = true_def_loss_class(action, y, m, cm, k);
      metric_acc += correct ? 1.0 : 0.0;
      res.defer_rate[action <= k ? 0 : action - k] += 1.0;
    } else {
      std::vector<Tensor> m = panel.outputs_for(i);
      RegDecision d = decide_reg(system.h, *system.f, x_eval, m);
      rec.decision = d.action;
      if (d.action > 1) rec.deferred_to = d.action - 1;
      Tensor t = ds.target_row(i);
      rec.realized_cost = true_def_loss_reg(d.action, d.output, t, m, cm);
      double se = 0.0;
      for (std::size_t c = 0; c < t.size(); ++c) {
        double diff = d.output[c] - t[c];
        se += diff * diff;
      }
      metric_acc += se;
      res.defer_rate[d.action - 1] += 1.0;
    }
    loss_acc += rec.realized_cost;
    if (settings.keep_records) res.records.push_back(rec);
  }

  double n = static_cast<double>(idx.size());
  res.metric = system.classification ? 100.0 * metric_acc / n : std::sqrt(metric_acc / n);
  res.mean_realized_loss = loss_acc / n;
  for (double& v : res.defer_rate) v /= n;
  return res;
}

double probe_def_loss(const SystemBundle& system, const Dataset& ds, const ExpertPanel& panel,
                      const CostModel& cm, const EvalSettings& settings) {
  double acc = 0.0;
  for (std::size_t i : ds.test_idx) {
    AttackPlan plan = settings.plan;
    plan.seed = mix_seed(settings.plan.seed, i, 0xdef1);
    if (system.classification) {
      acc += adv_true_def_loss_class(system.h, ds.row(i), ds.labels[i], panel.labels_for(i),
                                     cm, settings.ball, plan);
    } else {
      acc += adv_true_def_loss_reg(system.h, *system.f, ds.row(i), ds.target_row(i),
                                   panel.outputs_for(i), cm, settings.ball, plan);
    }
  }
  return acc / static_cast<double>(ds.test_idx.size());
}

}  // namespace

MetricReport evaluate(const SystemBundle& system, const Dataset& ds, const ExpertPanel& panel,
                      const CostModel& cm, const EvalSettings& settings) {
  if (system.classification != ds.is_classification())
    throw ConfigError("evaluate: system and dataset task disagree");
  if (!system.classification && !system.f)
    throw ConfigError("evaluate: regression system needs a predictor");

  std::size_t actions = system.h.output_dim();
  std::size_t nu = settings.nu == 0 ? actions : settings.nu;  // default: last expert action
  if (nu < 1 || nu > actions)
    throw ConfigError("evaluate: targeted action nu out of range");

  MetricReport report;
  report.run_id = settings.run_id;
  report.task = system.classification ? "classification" : "regression";
  report.modes = settings.modes;
  report.nu = nu;
  report.n = ds.test_idx.size();
  report.config_hash = settings.config_hash;

  for (AttackMode mode : settings.modes) {
    ModeResult res = evaluate_mode(system, ds, panel, cm, settings, mode, nu);
    switch (mode) {
      case AttackMode::clean: report.c_metric = res.metric; break;
      case AttackMode::untargeted: report.u_metric = res.metric; break;
      case AttackMode::targeted: report.t_metric = res.metric; break;
    }
    if (report.defer_rate.empty()) report.defer_rate = res.defer_rate;
    report.per_mode.push_back(std::move(res));
  }
  report.def_loss = probe_def_loss(system, ds, panel, cm, settings);
  return report;
}

std::string MetricReport::to_json_string() const {
  json doc;
  doc["version"] = kReportFormatVersion;
  doc["run_id"] = run_id;
  doc["task"] = task;
  json mode_names = json::array();
  for (AttackMode m : modes) mode_names.push_back(attack_mode_name(m));
  doc["attack_modes"] = mode_names;
  auto put = [&doc](const char* key, double v) {
    if (std::isnan(v))
      doc[key] = nullptr;
    else
      doc[key] = v;
  };
  put("c_metric", c_metric);
  put("u_metric", u_metric);
  put("t_metric", t_metric);
  doc["def_loss"] = def_loss;
  doc["def_loss_estimator"] = "probe-lower-bound";
  doc["nu"] = nu;
  doc["defer_rate"] = defer_rate;
  doc["n"] = n;
  doc["config_hash"] = config_hash;
  json per = json::array();
  for (const ModeResult& r : per_mode) {
    per.push_back({{"mode", attack_mode_name(r.mode)},
                   {"metric", r.metric},
                   {"mean_realized_loss", r.mean_realized_loss},
                   {"defer_rate", r.defer_rate}});
  }
  doc["per_mode"] = per;
  return doc.dump(2);
}

MetricReport MetricReport::from_json_string(const std::string& text) {
  json doc = json::parse(text);
  if (doc.value("version", "") != kReportFormatVersion)
    throw ParseError("report version is not " + std::string(kReportFormatVersion));
  MetricReport r;
  r.run_id = doc.at("run_id").get<std::string>();
  r.task = doc.at("task").get<std::string>();
  for (const json& m : doc.at("attack_modes")) {
    std::string name = m.get<std::string>();
    if (name == "clean") r.modes.push_back(AttackMode::clean);
    if (name == "untargeted") r.modes.push_back(AttackMode::untargeted);
    if (name == "targeted") r.modes.push_back(AttackMode::targeted);
  }
  auto get = [&doc](const char* key) {
    return doc.at(key).is_null() ? std::numeric_limits<double>::quiet_NaN()
                                 : doc.at(key).get<double>();
  };
  r.c_metric = get("c_metric");
  r.u_metric = get("u_metric");
  r.t_metric = get("t_metric");
  r.def_loss = doc.at("def_loss").get<double>();
  r.nu = doc.at("nu").get<std::size_t>();
  r.defer_rate = doc.at("defer_rate").get<std::vector<double>>();
  r.n = doc.at("n").get<std::size_t>();
  r.config_hash = doc.at("config_hash").get<std::string>();
  for (const json& pm : doc.at("per_mode")) {
    ModeResult mr;
    std::string name = pm.at("mode").get<std::string>();
    mr.mode = name == "untargeted"
                  ? AttackMode::untargeted
                  : (name == "targeted" ? AttackMode::targeted : AttackMode::clean);
    mr.metric = pm.at("metric").get<double>();
    mr.mean_realized_loss = pm.at("mean_realized_loss").get<double>();
    mr.defer_rate = pm.at("defer_rate").get<std::vector<double>>();
    r.per_mode.push_back(std::move(mr));
  }
  return r;
}

std::string MetricReport::csv_header() const {
  std::ostringstream os;
  os << "run_id,task,attack_mode,nu,c_metric,u_metric,t_metric,def_loss,defer_rate_pred";
  for (std::size_t e = 1; e < defer_rate.size(); ++e) os << ",defer_rate_e" << e;
  return os.str();
}

std::string MetricReport::csv_row() const {
  std::ostringstream os;
  os.precision(17);
  std::string mode_list;
  for (std::size_t i = 0; i < modes.size(); ++i)
    mode_list += std::string(i ? "+" : "") + attack_mode_name(modes[i]);
  auto cell = [](double v) {
    if (std::isnan(v)) return std::string();
    std::ostringstream c;
    c.precision(17);
    c << v;
    return c.str();
  };
  os << run_id << "," << task << "," << mode_list << "," << nu << "," << cell(c_metric) << ","
     << cell(u_metric) << "," << cell(t_metric) << "," << cell(def_loss);
  for (double v : defer_rate) os << "," << cell(v);
  return os.str();
}

std::filesystem::path emit_report(const MetricReport& report, const std::filesystem::path& dir,
                                  const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::filesystem::path json_path = dir / (stem + ".json");
  {
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot open for writing: " + json_path.string());
    out << report.to_json_string() << "\n";
  }
  std::filesystem::path csv_path = dir / (stem + ".csv");
  {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot open for writing: " + csv_path.string());
    if (!report.config_hash.empty()) out << "# config_hash=" << report.config_hash << "\n";
    out << report.csv_header() << "\n" << report.csv_row() << "\n";
  }
  return json_path;
}

}  // namespace deferkit
