#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxalign/metrics.hpp"
#include "ctxalign/objectives.hpp"
#include "ctxalign/policy.hpp"
#include "ctxalign/records.hpp"
#include "ctxalign/synthenv.hpp"

namespace ctxalign::trainer {

using policy::ParameterVector;
using policy::PolicyModel;
using policy::PolicySnapshot;

enum class Stage { Sft, Dpo, Grpo };
enum class Schedule { Constant, LinearDecay };
// How a GRPO group is judged to carry no learning signal.
enum class StagnationRule { ZeroVariance, NoPositive };

std::string to_string(Stage s);
Stage parse_stage(const std::string& name);
std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& name);
std::string to_string(StagnationRule r);
StagnationRule parse_stagnation_rule(const std::string& name);

struct StageConfig {
  Stage stage = Stage::Sft;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 2;            // SFT, DPO
  std::size_t prompt_budget = 2000;  // GRPO
  double warmup_fraction = 0.03;
  Schedule schedule = Schedule::LinearDecay;
  std::uint64_t seed = 1;
  double max_grad_norm = 0.0;  // 0 disables clipping

  // GRPO sampling and update details.
  double temperature = 1.0;
  std::size_t inner_steps = 1;
  std::size_t max_answer_tokens = 4;
  StagnationRule stagnation = StagnationRule::NoPositive;

  static StageConfig defaults(Stage stage);
  void validate() const;
  nlohmann::json to_json() const;
  static StageConfig from_json(const nlohmann::json& j, Stage stage);
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adam with bias correction; purely deterministic.
class Adam {
 public:
  explicit Adam(const ParameterVector& like, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParameterVector& params, const ParameterVector& grad, double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Learning rate for update `step` (0-based) out of `total`.
double learning_rate_at(const StageConfig& config, std::size_t step, std::size_t total);

struct CurvePoint {
  std::size_t step = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  double aux = 0.0;  // SFT: per-token NLL, DPO: mean margin, GRPO: mean reward
};

struct StagnationStats {
  std::size_t groups_total = 0;
  std::size_t groups_degenerate = 0;
  double degenerate_fraction() const {
    return groups_total ? static_cast<double>(groups_degenerate) / static_cast<double>(groups_total) : 0.0;
  }
  nlohmann::json to_json() const;
};

struct StageResult {
  ParameterVector params;
  std::vector<CurvePoint> curve;
  std::vector<double> epoch_losses;  // SFT/DPO: mean loss per epoch
  StagnationStats stagnation;
  std::size_t old_refreshes = 0;
  std::size_t updates = 0;
  std::size_t skipped_batches = 0;
};

StageResult run_sft(const PolicyModel& model, const ParameterVector& init, std::span<const SftSample> dataset,
                    const StageConfig& config);

StageResult run_dpo(const PolicyModel& model, const ParameterVector& init, const PolicySnapshot& reference,
                    std::span<const PreferencePair> pairs, const StageConfig& config,
                    const objectives::DpoConfig& dpo = {});

struct GrpoOptions {
  metrics::ScoreKind score_kind = metrics::ScoreKind::ExactMatch;
  metrics::ThresholdPolicy thresholds{};
};

StageResult run_grpo(const PolicyModel& model, const ParameterVector& init, std::span<const synthenv::Task> tasks,
                     const StageConfig& config, const objectives::GrpoConfig& grpo,
                     const GrpoOptions& options = {});

enum class FailureMode { Neglect, Fragility, Collapse, Correct };
inline constexpr std::size_t kFailureModeCount = 4;

std::string to_string(FailureMode m);

FailureMode classify_failure(const Vocabulary& vocab, const objectives::ParsedResponse& parsed,
                             const synthenv::Task& task, metrics::ScoreKind score_kind,
                             const objectives::GrpoConfig& grpo, const metrics::ThresholdPolicy& thresholds = {});

struct EvalReport {
  std::size_t n_tasks = 0;
  double accuracy = 0.0;
  double mean_reward = 0.0;
  std::array<std::size_t, kFailureModeCount> failures{};

  nlohmann::json to_json() const;
};

// Scores given responses (one per task).
EvalReport evaluate_responses(const Vocabulary& vocab, std::span<const synthenv::Task> tasks,
                              std::span<const TokenSeq> responses, metrics::ScoreKind score_kind,
                              const objectives::GrpoConfig& grpo, const metrics::ThresholdPolicy& thresholds = {});

// Greedy, grammar-constrained decoding on held-out tasks. Throws if any task id
// also appears in `train_ids`.
EvalReport evaluate(const PolicyModel& model, const ParameterVector& params, std::span<const synthenv::Task> tasks,
                    metrics::ScoreKind score_kind, const objectives::GrpoConfig& grpo,
                    std::span<const std::uint64_t> train_ids = {}, const metrics::ThresholdPolicy& thresholds = {},
                    std::size_t max_answer_tokens = 4);

}  // namespace ctxalign::trainer
