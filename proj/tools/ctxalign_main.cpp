#include <CLI11.hpp>

#include <cstdint>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "ctxalign/log.hpp"
#include "ctxalign/pipeline.hpp"

using namespace ctxalign;

namespace {

struct Args {
  std::string config;
  std::optional<std::string> workdir;
  std::optional<std::uint64_t> seed;
  std::string stage;
  std::string split = "eval";
  bool allow_overlap = false;
  bool override_stage_order = false;
};

pipeline::Pipeline make_pipeline(const Args& a) {
  pipeline::RunConfig cfg = a.config.empty() ? pipeline::RunConfig{} : pipeline::RunConfig::load(a.config);
  if (a.workdir) cfg.workdir = *a.workdir;
  if (a.seed) cfg.seed = *a.seed;
  return pipeline::Pipeline(cfg, {a.allow_overlap, a.override_stage_order});
}

trainer::Stage require_stage(const Args& a, const std::string& cmd) {
  if (a.stage.empty()) throw std::invalid_argument(cmd + " requires --stage");
  return trainer::parse_stage(a.stage);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-robust preference alignment pipeline (synthetic retrieval tasks, SFT, DPO, GRPO)"};
  app.require_subcommand(1);
  Args a;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--workdir", a.workdir, "Run directory (overrides the config)");
    sub->add_option("--seed", a.seed, "Global seed (overrides the config)");
  };
  auto* gen = app.add_subcommand("gen", "Generate train/eval task files");
  auto* build = app.add_subcommand("build", "Build the sft or dpo dataset");
  auto* train = app.add_subcommand("train", "Train one stage: sft, dpo or grpo");
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on held-out tasks");
  auto* report = app.add_subcommand("report", "Summarize training and evaluation reports");
  for (auto* sub : {gen, build, train, eval, report}) add_common(sub);
  for (auto* sub : {build, train, eval}) sub->add_option("--stage", a.stage, "Stage name");
  train->add_flag("--override-stage-order", a.override_stage_order, "Allow a stage without its predecessor");
  eval->add_option("--split", a.split, "Task split to evaluate (eval or train)");
  eval->add_flag("--allow-overlap", a.allow_overlap, "Allow evaluating on training tasks");
  eval->add_flag("--override-stage-order", a.override_stage_order, "Unused; accepted for symmetry");

  CLI11_PARSE(app, argc, argv);

  try {
    auto p = make_pipeline(a);
    if (*gen) {
      p.gen();
    } else if (*build) {
      p.build(require_stage(a, "build"));
    } else if (*train) {
      const auto r = p.train(require_stage(a, "train"));
      std::cout << "trained " << a.stage << ": " << r.updates << " updates";
      if (r.stagnation.groups_total) {
        std::cout << ", degenerate groups " << r.stagnation.groups_degenerate << "/" << r.stagnation.groups_total;
      }
      std::cout << '\n';
    } else if (*eval) {
      std::optional<std::string> stage;
      if (!a.stage.empty()) stage = a.stage;
      const auto rows = p.eval(stage, a.split);
      std::cout << std::left << std::setw(6) << "stage" << std::setw(10) << "accuracy" << "mean_reward\n";
      for (const auto& r : rows) {
        std::cout << std::left << std::setw(6) << r.stage << std::setw(10) << std::fixed << std::setprecision(4)
                  << r.report.accuracy << r.report.mean_reward << '\n';
      }
    } else if (*report) {
      p.report();
      std::cout << p.layout().report_text().string() << '\n';
    }
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 0;
}
