#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxalign/metrics.hpp"
#include "ctxalign/objectives.hpp"
#include "ctxalign/policy.hpp"
#include "ctxalign/synthenv.hpp"
#include "ctxalign/trainer.hpp"

namespace ctxalign::pipeline {

namespace fs = std::filesystem;

struct RunConfig {
  std::uint64_t seed = 1;
  std::string workdir = "run";

  synthenv::GenConfig gen;
  std::size_t n_train = 2000;
  std::size_t n_eval = 200;
  double eval_entity_fraction = 0.2;   // entities reserved for held-out tasks
  double unanswerable_fraction = 0.0;  // tasks generated without a gold document

  policy::ModelConfig model;
  metrics::ThresholdPolicy thresholds;
  metrics::ScoreKind score_kind = metrics::ScoreKind::ExactMatch;

  trainer::StageConfig sft = trainer::StageConfig::defaults(trainer::Stage::Sft);
  trainer::StageConfig dpo = trainer::StageConfig::defaults(trainer::Stage::Dpo);
  trainer::StageConfig grpo = trainer::StageConfig::defaults(trainer::Stage::Grpo);
  objectives::DpoConfig dpo_objective;
  objectives::GrpoConfig grpo_objective;
  std::size_t dpo_samples_per_task = 8;
  std::size_t dpo_pair_cap = 4;
  double dpo_temperature = 1.0;

  void validate() const;
  // Copy with every module seed derived from the global seed.
  RunConfig resolved() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const fs::path& path);
};

std::string sha256_file(const fs::path& path);
std::string sha256_bytes(const std::string& bytes);

struct Options {
  bool allow_overlap = false;
  bool override_stage_order = false;
};

// Fixed file layout under the workdir.
struct Layout {
  fs::path root;

  fs::path train_tasks() const { return root / "tasks" / "train.jsonl"; }
  fs::path eval_tasks() const { return root / "tasks" / "eval.jsonl"; }
  fs::path sft_data() const { return root / "data" / "sft.jsonl"; }
  fs::path dpo_data() const { return root / "data" / "dpo.jsonl"; }
  fs::path summary(const std::string& stage) const { return root / "data" / ("summary_" + stage + ".json"); }
  fs::path checkpoint(const std::string& stage) const { return root / "ckpt" / (stage + ".ckpt"); }
  fs::path train_report(const std::string& stage) const { return root / "reports" / ("train_" + stage + ".json"); }
  fs::path curve(const std::string& stage) const { return root / "reports" / ("curve_" + stage + ".csv"); }
  fs::path timing(const std::string& stage) const { return root / "timing" / (stage + ".json"); }
  fs::path eval_report() const { return root / "reports" / "eval.json"; }
  fs::path eval_csv() const { return root / "reports" / "eval.csv"; }
  fs::path report_text() const { return root / "reports" / "report.txt"; }
  fs::path manifest(const std::string& name) const { return root / "manifests" / (name + ".json"); }
  fs::path lock() const { return root / ".lock"; }
};

// Exclusive workdir lock held for the lifetime of the object.
class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& path);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  fs::path path_;
};

struct EvalRow {
  std::string stage;
  trainer::EvalReport report;
};

class Pipeline {
 public:
  Pipeline(RunConfig config, Options options = {});

  const RunConfig& config() const { return config_; }
  const Layout& layout() const { return layout_; }
  const synthenv::World& world() const { return world_; }
  const policy::PolicyModel& model() const { return model_; }

  void gen();
  void build(trainer::Stage stage);
  trainer::StageResult train(trainer::Stage stage);
  // Evaluates the given stage's checkpoint ("base" = untrained init), or every
  // available one when `stage` is empty.
  std::vector<EvalRow> eval(const std::optional<std::string>& stage = std::nullopt, const std::string& split = "eval");
  void report();

  std::vector<synthenv::Task> load_tasks(const std::string& split) const;
  policy::ParameterVector initial_parameters() const;
  policy::ParameterVector load_parameters(const std::string& stage) const;

 private:
  void write_manifest(const std::string& name, const std::vector<fs::path>& inputs,
                      const std::vector<fs::path>& outputs, const nlohmann::json& extra = {}) const;
  void require(const fs::path& path, const std::string& what) const;

  RunConfig config_;
  Options options_;
  Layout layout_;
  synthenv::World world_;
  policy::PolicyModel model_;
};

}  // namespace ctxalign::pipeline
