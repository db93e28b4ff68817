#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deferkit/config.hpp"

namespace deferkit {

// Output root: $DEFERKIT_OUT when set and cfg.output_dir is relative.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg);

int cmd_gen(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_attack(const ExperimentConfig& cfg, const std::string& checkpoint_path);
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);
int cmd_verify(const ExperimentConfig& cfg);
int cmd_report(const std::vector<std::string>& report_paths);

// Builds the models the config describes (fresh initialization).
SystemBundle build_system(const ExperimentConfig& cfg);
// Checkpoint bundle I/O (model documents wrapped with task and config hash).
void save_checkpoint(const SystemBundle& system, const ExperimentConfig& cfg,
                     const std::filesystem::path& path);
SystemBundle load_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg);

}  // namespace deferkit
