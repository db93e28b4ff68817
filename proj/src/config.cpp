#include "deferkit/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace deferkit {

using nlohmann::json;

namespace {

ExpertSpec expert_from_json(const json& j) {
  ExpertSpec e;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "class_specialist")
    e.kind = ExpertSpec::Kind::class_specialist;
  else if (kind == "class_bernoulli")
    e.kind = ExpertSpec::Kind::class_bernoulli;
  else if (kind == "reg_specialist")
    e.kind = ExpertSpec::Kind::reg_specialist;
  else if (kind == "reg_noisy")
    e.kind = ExpertSpec::Kind::reg_noisy;
  else
    throw ConfigError("unknown expert kind: " + kind);
  if (j.contains("classes")) e.classes = j.at("classes").get<std::vector<int>>();
  e.p = j.value("p", 1.0);
  e.sigma = j.value("sigma", 0.0);
  e.sigma_in = j.value("sigma_in", 0.0);
  e.feature = j.value("feature", 0);
  e.threshold = j.value("threshold", 0.0);
  return e;
}

json expert_to_json(const ExpertSpec& e) {
  json j;
  switch (e.kind) {
    case ExpertSpec::Kind::class_specialist: j["kind"] = "class_specialist"; break;
    case ExpertSpec::Kind::class_bernoulli: j["kind"] = "class_bernoulli"; break;
    case ExpertSpec::Kind::reg_specialist: j["kind"] = "reg_specialist"; break;
    case ExpertSpec::Kind::reg_noisy: j["kind"] = "reg_noisy"; break;
  }
  if (!e.classes.empty()) j["classes"] = e.classes;
  j["p"] = e.p;
  j["sigma"] = e.sigma;
  j["sigma_in"] = e.sigma_in;
  j["feature"] = e.feature;
  j["threshold"] = e.threshold;
  return j;
}

json apply_overrides(json doc, const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must look like path.to.field=value: " + ov);
    std::string path = "/" + ov.substr(0, eq);
    for (char& c : path)
      if (c == '.') c = '/';
    std::string raw = ov.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;  // plain string
    }
    doc[json::json_pointer(path)] = value;
  }
  return doc;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  std::vector<std::string> violations;
  auto check = [&violations](bool ok, const std::string& msg) {
    if (!ok) violations.push_back(msg);
  };

  cfg.task = doc.value("task", "classification");
  check(cfg.task == "classification" || cfg.task == "regression",
        "task: must be classification or regression");
  cfg.seed = doc.value("seed", 0ull);
  cfg.output_dir = doc.value("output_dir", "out");

  if (doc.contains("data")) {
    const json& d = doc["data"];
    cfg.data.generator = d.value("generator", cfg.data.generator);
    cfg.data.num_classes = d.value("K", cfg.data.num_classes);
    cfg.data.dim = d.value("d", cfg.data.dim);
    cfg.data.n = d.value("n", cfg.data.n);
    cfg.data.separation = d.value("separation", cfg.data.separation);
    cfg.data.noise_sigma = d.value("noise_sigma", cfg.data.noise_sigma);
    cfg.data.path = d.value("path", cfg.data.path);
    cfg.data.target_column = d.value("target_column", cfg.data.target_column);
    cfg.data.normalize = d.value("normalize", cfg.data.normalize);
    cfg.data.split_ratio = d.value("split_ratio", cfg.data.split_ratio);
  }
  check(cfg.data.generator == "blobs" || cfg.data.generator == "linreg" ||
            cfg.data.generator == "csv",
        "data.generator: must be blobs, linreg or csv");
  check(cfg.data.normalize == "none" || cfg.data.normalize == "zscore" ||
            cfg.data.normalize == "minmax",
        "data.normalize: must be none, zscore or minmax");
  check(cfg.data.split_ratio > 0 && cfg.data.split_ratio < 1,
        "data.split_ratio: must lie in (0,1)");

  if (doc.contains("panel")) {
    const json& p = doc["panel"];
    cfg.panel_seed = p.value("seed", cfg.panel_seed);
    if (p.contains("experts"))
      for (const json& e : p["experts"]) cfg.experts.push_back(expert_from_json(e));
  }
  check(!cfg.experts.empty(), "panel.experts: at least one expert required");
  for (std::size_t i = 0; i < cfg.experts.size(); ++i) {
    bool matches = cfg.experts[i].is_classification() == (cfg.task == "classification");
    check(matches, "panel.experts[" + std::to_string(i) + "]: kind incompatible with task");
  }

  if (doc.contains("costs")) {
    const json& c = doc["costs"];
    if (c.contains("alphas")) cfg.costs.alphas = c["alphas"].get<std::vector<double>>();
    if (c.contains("betas")) cfg.costs.betas = c["betas"].get<std::vector<double>>();
    cfg.costs.base_loss = c.value("base_loss", cfg.costs.base_loss);
    cfg.costs.clamp_policy = c.value("clamp_policy", cfg.costs.clamp_policy);
  }
  if (cfg.costs.betas.empty()) cfg.costs.betas.assign(cfg.experts.size(), 0.0);
  check(cfg.costs.betas.size() == cfg.experts.size(), "costs.betas: one fee per expert");
  check(cfg.costs.base_loss == "squared" || cfg.costs.base_loss == "absolute",
        "costs.base_loss: must be squared or absolute");
  check(cfg.costs.clamp_policy == "strict" || cfg.costs.clamp_policy == "none",
        "costs.clamp_policy: must be strict or none");

  if (doc.contains("loss")) {
    const json& l = doc["loss"];
    cfg.loss.u = l.value("u", cfg.loss.u);
    cfg.loss.rho = l.value("rho", cfg.loss.rho);
    if (l.contains("kappa") && !l["kappa"].is_null())
      cfg.loss.kappa = l["kappa"].get<double>();
    cfg.loss.gamma = l.value("gamma", cfg.loss.gamma);
    cfg.loss.norm_p = l.value("norm_p", cfg.loss.norm_p);
  }
  check(cfg.loss.u > 0, "loss.u: must be positive");
  check(cfg.loss.rho > 0, "loss.rho: must be positive");
  check(!cfg.loss.kappa || *cfg.loss.kappa >= 0, "loss.kappa: must be nonnegative");
  check(cfg.loss.gamma >= 0, "loss.gamma: must be nonnegative");
  check(cfg.loss.norm_p == "inf" || cfg.loss.norm_p == "2", "loss.norm_p: must be inf or 2");

  if (doc.contains("attack")) {
    const json& a = doc["attack"];
    cfg.attack.steps = a.value("steps", cfg.attack.steps);
    if (a.contains("step_size") && !a["step_size"].is_null())
      cfg.attack.step_size = a["step_size"].get<double>();
    cfg.attack.init = a.value("init", cfg.attack.init);
    cfg.attack.restarts = a.value("restarts", cfg.attack.restarts);
    cfg.attack.seed = a.value("seed", cfg.attack.seed);
    if (a.contains("box_lo") && !a["box_lo"].is_null())
      cfg.attack.box_lo = a["box_lo"].get<double>();
    if (a.contains("box_hi") && !a["box_hi"].is_null())
      cfg.attack.box_hi = a["box_hi"].get<double>();
  }
  check(cfg.attack.steps >= 0, "attack.steps: must be nonnegative");
  check(!cfg.attack.step_size || *cfg.attack.step_size > 0,
        "attack.step_size: must be positive");
  check(cfg.attack.init == "center" || cfg.attack.init == "random_uniform",
        "attack.init: must be center or random_uniform");
  check(cfg.attack.restarts >= 0, "attack.restarts: must be nonnegative");

  if (doc.contains("train")) {
    const json& t = doc["train"];
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.eta = t.value("eta", cfg.train.eta);
    cfg.train.regularizer = t.value("regularizer", cfg.train.regularizer);
    cfg.train.objective = t.value("objective", cfg.train.objective);
    if (t.contains("hidden")) cfg.train.hidden = t["hidden"].get<std::vector<std::size_t>>();
    if (t.contains("f_hidden"))
      cfg.train.f_hidden = t["f_hidden"].get<std::vector<std::size_t>>();
    cfg.train.track_def_loss = t.value("track_def_loss", cfg.train.track_def_loss);
  }
  check(cfg.train.epochs >= 0, "train.epochs: must be nonnegative");
  check(cfg.train.batch_size > 0, "train.batch_size: must be positive");
  check(cfg.train.learning_rate > 0, "train.learning_rate: must be positive");
  check(cfg.train.eta >= 0, "train.eta: must be nonnegative");
  check(cfg.train.regularizer == "l2_params" || cfg.train.regularizer == "none",
        "train.regularizer: must be l2_params or none");
  bool obj_ok = cfg.train.objective == "clean_class" || cfg.train.objective == "clean_reg" ||
                cfg.train.objective == "rerm_c" || cfg.train.objective == "rerm_r";
  check(obj_ok, "train.objective: must be clean_class, clean_reg, rerm_c or rerm_r");
  if (obj_ok) {
    bool class_obj =
        cfg.train.objective == "clean_class" || cfg.train.objective == "rerm_c";
    check(class_obj == (cfg.task == "classification"),
          "train.objective: incompatible with task");
  }

  if (doc.contains("eval")) {
    const json& e = doc["eval"];
    if (e.contains("modes")) cfg.eval.modes = e["modes"].get<std::vector<std::string>>();
    cfg.eval.nu = e.value("nu", cfg.eval.nu);
    if (e.contains("gamma") && !e["gamma"].is_null())
      cfg.eval.gamma = e["gamma"].get<double>();
  }
  for (const std::string& m : cfg.eval.modes)
    check(m == "clean" || m == "untargeted" || m == "targeted",
          "eval.modes: unknown mode '" + m + "'");
  check(!cfg.eval.gamma || *cfg.eval.gamma >= 0, "eval.gamma: must be nonnegative");

  // cross-field checks
  std::size_t actions = cfg.task == "classification"
                            ? cfg.data.num_classes + cfg.experts.size()
                            : cfg.experts.size() + 1;
  check(cfg.eval.nu <= actions, "eval.nu: outside the action space");
  if (cfg.costs.clamp_policy == "strict") {
    std::size_t predict_actions = cfg.task == "classification" ? cfg.data.num_classes : 1;
    std::vector<double> alphas =
        cfg.costs.alphas.value_or(std::vector<double>(actions, 1.0));
    check(alphas.size() == actions, "costs.alphas: one entry per action");
    if (alphas.size() == actions && cfg.task == "classification") {
      for (std::size_t a = predict_actions; a < actions; ++a) {
        if (alphas[a] + cfg.costs.betas[a - predict_actions] > 1.0 + 1e-12)
          check(false, "costs: alpha+beta > 1 for deferral action " + std::to_string(a + 1) +
                           " is unsatisfiable under the strict clamp policy");
      }
    }
  } else if (cfg.costs.alphas) {
    check(cfg.costs.alphas->size() == actions, "costs.alphas: one entry per action");
  }

  if (!violations.empty()) {
    std::string msg = "config validation failed:";
    for (const std::string& v : violations) msg += "\n  - " + v;
    throw ConfigError(msg);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path_or_preset,
                                        const std::vector<std::string>& overrides) {
  std::string text;
  for (const std::string& name : preset_names()) {
    if (name == path_or_preset) {
      text = preset_json(name);
      break;
    }
  }
  if (text.empty()) {
    std::ifstream in(path_or_preset);
    if (!in) throw IoError("cannot open config: " + path_or_preset);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  json doc = json::parse(text);
  doc = apply_overrides(std::move(doc), overrides);
  return from_json_string(doc.dump());
}

std::string ExperimentConfig::to_json_string() const {
  json doc;
  doc["task"] = task;
  doc["seed"] = seed;
  doc["output_dir"] = output_dir;
  doc["data"] = {{"generator", data.generator}, {"K", data.num_classes},
                 {"d", data.dim},               {"n", data.n},
                 {"separation", data.separation}, {"noise_sigma", data.noise_sigma},
                 {"path", data.path},           {"target_column", data.target_column},
                 {"normalize", data.normalize}, {"split_ratio", data.split_ratio}};
  json experts_json = json::array();
  for (const ExpertSpec& e : experts) experts_json.push_back(expert_to_json(e));
  doc["panel"] = {{"experts", experts_json}, {"seed", panel_seed}};
  doc["costs"] = {{"betas", costs.betas},
                  {"base_loss", costs.base_loss},
                  {"clamp_policy", costs.clamp_policy}};
  if (costs.alphas) doc["costs"]["alphas"] = *costs.alphas;
  doc["loss"] = {{"u", loss.u}, {"rho", loss.rho}, {"gamma", loss.gamma},
                 {"norm_p", loss.norm_p}};
  if (loss.kappa) doc["loss"]["kappa"] = *loss.kappa;
  doc["attack"] = {{"steps", attack.steps}, {"init", attack.init},
                   {"restarts", attack.restarts}, {"seed", attack.seed}};
  if (attack.step_size) doc["attack"]["step_size"] = *attack.step_size;
  if (attack.box_lo) doc["attack"]["box_lo"] = *attack.box_lo;
  if (attack.box_hi) doc["attack"]["box_hi"] = *attack.box_hi;
  doc["train"] = {{"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate},
                  {"eta", train.eta},
                  {"regularizer", train.regularizer},
                  {"objective", train.objective},
                  {"hidden", train.hidden},
                  {"f_hidden", train.f_hidden},
                  {"track_def_loss", train.track_def_loss}};
  doc["eval"] = {{"modes", eval.modes}, {"nu", eval.nu}};
  if (eval.gamma) doc["eval"]["gamma"] = *eval.gamma;
  return doc.dump(2);
}

std::string ExperimentConfig::hash() const {
  std::string text = to_json_string();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

ActionSpace ExperimentConfig::action_space() const {
  return task == "classification"
             ? ActionSpace::classification(data.num_classes, experts.size())
             : ActionSpace::regression(experts.size());
}

Dataset ExperimentConfig::build_dataset() const {
  Normalize norm = data.normalize == "zscore"
                       ? Normalize::zscore
                       : (data.normalize == "minmax" ? Normalize::minmax : Normalize::none);
  if (data.generator == "blobs")
    return gen_blobs(data.num_classes, data.dim, data.n, data.separation, seed, norm,
                     data.split_ratio);
  if (data.generator == "linreg")
    return gen_linear_reg(data.dim, data.n, data.noise_sigma, seed, norm, data.split_ratio);
  return load_csv(data.path, data.target_column, norm, data.split_ratio, seed,
                  task == "classification");
}

ExpertPanel ExperimentConfig::build_panel(const Dataset& ds) const {
  ExpertPanel panel(experts);
  panel.sample_outputs(ds, panel_seed);
  return panel;
}

CostModel ExperimentConfig::build_cost_model() const {
  std::size_t actions = action_space().size();
  ClampPolicy clamp =
      costs.clamp_policy == "strict" ? ClampPolicy::strict : ClampPolicy::none;
  BaseLoss base = costs.base_loss == "absolute" ? BaseLoss::absolute : BaseLoss::squared;
  std::size_t predict_actions = task == "classification" ? data.num_classes : 1;
  std::vector<double> alphas = costs.alphas.value_or(std::vector<double>(actions, 1.0));
  std::vector<double> betas(predict_actions, 0.0);
  betas.insert(betas.end(), costs.betas.begin(), costs.betas.end());
  return CostModel(alphas, betas, base, clamp, predict_actions);
}

SurrogateParams ExperimentConfig::build_params() const {
  double kappa = loss.kappa.value_or(
      SurrogateParams::certified_kappa(action_space().size(), loss.rho));
  return SurrogateParams(loss.u, loss.rho, kappa);
}

PerturbationBall ExperimentConfig::build_ball(std::optional<double> gamma_override) const {
  PerturbationBall ball(loss.norm_p == "2" ? NormOrder::l2 : NormOrder::linf,
                        gamma_override.value_or(loss.gamma));
  ball.box_lo = attack.box_lo;
  ball.box_hi = attack.box_hi;
  return ball;
}

AttackPlan ExperimentConfig::build_plan() const {
  AttackPlan plan;
  plan.steps = attack.steps;
  plan.step_size = attack.step_size.value_or(
      loss.gamma > 0 && attack.steps > 0 ? 2.5 * loss.gamma / attack.steps : 1.0);
  plan.init = attack.init == "random_uniform" ? AttackPlan::Init::random_uniform
                                              : AttackPlan::Init::center;
  plan.restarts = attack.restarts;
  plan.seed = attack.seed;
  return plan;
}

TrainConfig ExperimentConfig::build_train_config() const {
  TrainConfig tc;
  tc.epochs = train.epochs;
  tc.batch_size = train.batch_size;
  tc.learning_rate = train.learning_rate;
  tc.eta = train.eta;
  tc.regularizer = train.regularizer == "none" ? TrainConfig::Regularizer::none
                                               : TrainConfig::Regularizer::l2_params;
  tc.seed = seed;
  if (train.objective == "clean_class") tc.objective = TrainConfig::Objective::clean_class;
  if (train.objective == "clean_reg") tc.objective = TrainConfig::Objective::clean_reg;
  if (train.objective == "rerm_c") tc.objective = TrainConfig::Objective::rerm_c;
  if (train.objective == "rerm_r") tc.objective = TrainConfig::Objective::rerm_r;
  tc.track_def_loss = train.track_def_loss;
  return tc;
}

std::vector<AttackMode> ExperimentConfig::eval_modes() const {
  std::vector<AttackMode> modes;
  for (const std::string& m : eval.modes) {
    if (m == "clean") modes.push_back(AttackMode::clean);
    if (m == "untargeted") modes.push_back(AttackMode::untargeted);
    if (m == "targeted") modes.push_back(AttackMode::targeted);
  }
  return modes;
}

std::vector<std::string> preset_names() { return {"blobs-class", "linreg-defer"}; }

std::string preset_json(const std::string& name) {
  if (name == "blobs-class") {
    return R"json({
  "task": "classification",
  "seed": 0,
  "output_dir": "out/blobs-class",
  "data": {"generator": "blobs", "K": 3, "d": 2, "n": 900, "separation": 2.2,
           "normalize": "minmax", "split_ratio": 0.8},
  "panel": {
    "experts": [
      {"kind": "class_specialist", "classes": [1], "p": 0.97},
      {"kind": "class_specialist", "classes": [2], "p": 0.97},
      {"kind": "class_specialist", "classes": [3], "p": 0.97}
    ],
    "seed": 1
  },
  "costs": {"betas": [0.05, 0.075, 0.1], "clamp_policy": "none"},
  "loss": {"u": 1.0, "rho": 1.0, "gamma": 0.12, "norm_p": "inf"},
  "attack": {"steps": 10, "init": "center", "restarts": 1, "seed": 7,
             "box_lo": 0.0, "box_hi": 1.0},
  "train": {"epochs": 30, "batch_size": 64, "learning_rate": 0.01, "eta": 0.0001,
            "regularizer": "l2_params", "objective": "rerm_c", "hidden": [16]},
  "eval": {"modes": ["clean", "untargeted", "targeted"], "nu": 0}
})json";
  }
  if (name == "linreg-defer") {
    return R"json({
  "task": "regression",
  "seed": 0,
  "output_dir": "out/linreg-defer",
  "data": {"generator": "linreg", "d": 2, "n": 600, "noise_sigma": 0.1,
           "normalize": "zscore", "split_ratio": 0.8},
  "panel": {
    "experts": [
      {"kind": "reg_noisy", "sigma": 0.1},
      {"kind": "reg_noisy", "sigma": 0.6},
      {"kind": "reg_noisy", "sigma": 1.5}
    ],
    "seed": 1
  },
  "costs": {"betas": [0.04, 0.05, 0.07], "base_loss": "squared", "clamp_policy": "none"},
  "loss": {"u": 1.0, "rho": 2.5, "gamma": 0.5, "norm_p": "inf"},
  "attack": {"steps": 10, "init": "center", "restarts": 1, "seed": 7},
  "train": {"epochs": 30, "batch_size": 64, "learning_rate": 0.01, "eta": 0.0001,
            "regularizer": "l2_params", "objective": "rerm_r", "hidden": [16]},
  "eval": {"modes": ["clean", "untargeted", "targeted"], "nu": 0}
})json";
  }
  throw ConfigError("unknown preset: " + name);
}

}  // namespace deferkit
