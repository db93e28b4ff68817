#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deferkit/agents.hpp"
#include "deferkit/attacks.hpp"
#include "deferkit/data.hpp"
#include "deferkit/model.hpp"
#include "deferkit/params.hpp"

namespace deferkit {

inline constexpr const char* kReportFormatVersion = "deferkit-report-v1";

enum class AttackMode { clean, untargeted, targeted };
const char* attack_mode_name(AttackMode mode);

// Classifier h for classification; rejector + predictor for regression.
struct SystemBundle {
  bool classification = true;
  ScoreModel h;  // classifier or rejector
  std::optional<ScoreModel> f;

  const ScoreModel& policy() const { return h; }
};

struct DeferralRecord {
  std::size_t example_id = 0;
  std::size_t decision = 0;                 // 1-based action
  std::optional<std::size_t> deferred_to;   // expert id, 1-based
  double realized_cost = 0.0;
  std::optional<bool> correct;              // classification only
  AttackMode attack = AttackMode::clean;
};

std::size_t decide_class(const ScoreModel& h, const Tensor& x);

struct RegDecision {
  std::size_t action = 0;
  Tensor output;
};
RegDecision decide_reg(const ScoreModel& r, const ScoreModel& f, const Tensor& x,
                       const std::vector<Tensor>& expert_outputs);

struct ModeResult {
  AttackMode mode = AttackMode::clean;
  double metric = 0.0;                  // accuracy % (classification) or RMSE
  double mean_realized_loss = 0.0;      // mean true deferral loss under this mode
  std::vector<double> defer_rate;       // predict bucket + one per expert; sums to 1
  std::vector<DeferralRecord> records;
};

struct MetricReport {
  std::string run_id;
  std::string task;  // "classification" | "regression"
  std::vector<AttackMode> modes;
  double c_metric = std::numeric_limits<double>::quiet_NaN();
  double u_metric = std::numeric_limits<double>::quiet_NaN();
  double t_metric = std::numeric_limits<double>::quiet_NaN();
  double def_loss = 0.0;  // probe-estimated adversarial true deferral loss (lower bound)
  std::size_t nu = 0;     // targeted action
  std::vector<double> defer_rate;  // from the first evaluated mode
  std::size_t n = 0;
  std::string config_hash;
  std::vector<ModeResult> per_mode;

  std::string to_json_string() const;
  static MetricReport from_json_string(const std::string& text);
  std::string csv_header() const;
  std::string csv_row() const;
};

struct EvalSettings {
  std::vector<AttackMode> modes{AttackMode::clean};
  std::size_t nu = 0;  // 0 = default to the last expert action
  SurrogateParams params;
  PerturbationBall ball;
  AttackPlan plan;
  std::string run_id = "run";
  std::string config_hash;
  bool keep_records = false;
};

MetricReport evaluate(const SystemBundle& system, const Dataset& ds, const ExpertPanel& panel,
                      const CostModel& cm, const EvalSettings& settings);

// Writes <stem>.json and <stem>.csv; returns the JSON path.
std::filesystem::path emit_report(const MetricReport& report, const std::filesystem::path& dir,
                                  const std::string& stem);

}  // namespace deferkit
