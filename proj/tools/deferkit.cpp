#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deferkit/commands.hpp"
#include "deferkit/errors.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config, "experiment config JSON file");
  cmd->add_option("-p,--preset", args.preset,
                  "built-in preset (blobs-class, linreg-defer)");
  cmd->add_option("-s,--set", args.overrides,
                  "override a config field, dotted path (train.epochs=50)");
}

deferkit::ExperimentConfig load_config(const CommonArgs& args) {
  if (args.config.empty() && args.preset.empty())
    throw deferkit::ConfigError("provide --config FILE or --preset NAME");
  if (!args.config.empty() && !args.preset.empty())
    throw deferkit::ConfigError("--config and --preset are mutually exclusive");
  std::string source = args.config.empty() ? args.preset : args.config;
  return deferkit::ExperimentConfig::load(source, args.overrides);
}

int fail_with_json(const char* kind, const std::string& message) {
  nlohmann::json err{{"error", kind}, {"message", message}};
  std::cerr << err.dump() << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deferkit: adversarially robust one-stage learning-to-defer"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, attack_args, eval_args, verify_args;
  std::string attack_ckpt, eval_ckpt;
  std::vector<std::string> report_paths;

  CLI::App* gen = app.add_subcommand("gen", "generate dataset and expert cache files");
  add_config_options(gen, gen_args);
  CLI::App* train = app.add_subcommand("train", "train the configured objective");
  add_config_options(train, train_args);
  CLI::App* attack = app.add_subcommand("attack", "dump adversarial examples");
  add_config_options(attack, attack_args);
  attack->add_option("--checkpoint", attack_ckpt, "checkpoint path (default: output dir)");
  CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint and emit reports");
  add_config_options(evalc, eval_args);
  evalc->add_option("--checkpoint", eval_ckpt, "checkpoint path (default: output dir)");
  CLI::App* verify = app.add_subcommand("verify", "run the brute-force verification suite");
  add_config_options(verify, verify_args);
  CLI::App* report = app.add_subcommand("report", "print report JSON files as CSV rows");
  report->add_option("paths", report_paths, "report JSON files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return deferkit::cmd_gen(load_config(gen_args));
    if (train->parsed()) return deferkit::cmd_train(load_config(train_args));
    if (attack->parsed()) return deferkit::cmd_attack(load_config(attack_args), attack_ckpt);
    if (evalc->parsed()) return deferkit::cmd_eval(load_config(eval_args), eval_ckpt);
    if (verify->parsed()) return deferkit::cmd_verify(load_config(verify_args));
    if (report->parsed()) return deferkit::cmd_report(report_paths);
  } catch (const deferkit::ConfigError& e) {
    return fail_with_json("config", e.what());
  } catch (const deferkit::ParseError& e) {
    return fail_with_json("parse", e.what());
  } catch (const deferkit::IoError& e) {
    return fail_with_json("io", e.what());
  } catch (const deferkit::ContractError& e) {
    return fail_with_json("contract", e.what());
  } catch (const deferkit::NumericError& e) {
    return fail_with_json("numeric", e.what());
  } catch (const std::exception& e) {
    return fail_with_json("internal", e.what());
  }
  return 0;
}
