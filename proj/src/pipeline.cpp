#include "ctxalign/pipeline.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ctxalign/dataforge.hpp"
#include "ctxalign/grammar.hpp"
#include "ctxalign/log.hpp"
#include "ctxalign/rng.hpp"

namespace ctxalign::pipeline {

using trainer::Stage;

namespace {

constexpr std::uint64_t kEvalIdOffset = 1'000'000;

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& j) { open_out(path) << j.dump(2) << '\n'; }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  return nlohmann::json::parse(in);
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fixed(double x, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

nlohmann::json thresholds_json(const metrics::ThresholdPolicy& t) {
  return {{"tau_pos", t.tau_pos}, {"tau_neg", t.tau_neg}};
}

}  // namespace

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  gen.validate();
  model.validate();
  thresholds.validate();
  sft.validate();
  dpo.validate();
  grpo.validate();
  dpo_objective.validate();
  grpo_objective.validate();
  if (n_train == 0 || n_eval == 0) throw std::invalid_argument("RunConfig: n_train and n_eval must be >= 1");
  if (!(eval_entity_fraction > 0.0 && eval_entity_fraction < 1.0)) {
    throw std::invalid_argument("RunConfig: eval_entity_fraction must lie in (0, 1)");
  }
  if (!(unanswerable_fraction >= 0.0 && unanswerable_fraction <= 1.0)) {
    throw std::invalid_argument("RunConfig: unanswerable_fraction must lie in [0, 1]");
  }
  if (model.max_seq_len != gen.max_seq_len) {
    throw std::invalid_argument("RunConfig: model.max_seq_len must equal gen.max_seq_len");
  }
  if (dpo_samples_per_task == 0) throw std::invalid_argument("RunConfig: dpo_samples_per_task must be >= 1");
  if (n_train >= kEvalIdOffset) throw std::invalid_argument("RunConfig: n_train too large for the id layout");
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.gen.seed = derive_seed(seed, "synthenv");
  r.sft.seed = derive_seed(seed, "sft");
  r.dpo.seed = derive_seed(seed, "dpo");
  r.grpo.seed = derive_seed(seed, "grpo");
  r.sft.stage = Stage::Sft;
  r.dpo.stage = Stage::Dpo;
  r.grpo.stage = Stage::Grpo;
  return r;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json g = gen.to_json();
  g["n_train"] = n_train;
  g["n_eval"] = n_eval;
  g["eval_entity_fraction"] = eval_entity_fraction;
  g["unanswerable_fraction"] = unanswerable_fraction;
  nlohmann::json d = dpo.to_json();
  d["beta"] = dpo_objective.beta;
  d["samples_per_task"] = dpo_samples_per_task;
  d["pair_cap"] = dpo_pair_cap;
  d["sampling_temperature"] = dpo_temperature;
  nlohmann::json gr = grpo.to_json();
  gr.update(grpo_objective.to_json());
  return {{"seed", seed},
          {"workdir", workdir},
          {"gen", g},
          {"model", model.to_json()},
          {"thresholds", thresholds_json(thresholds)},
          {"score_kind", metrics::to_string(score_kind)},
          {"sft", sft.to_json()},
          {"dpo", d},
          {"grpo", gr}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.workdir = j.value("workdir", c.workdir);
  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    c.gen = synthenv::GenConfig::from_json(g);
    c.n_train = g.value("n_train", c.n_train);
    c.n_eval = g.value("n_eval", c.n_eval);
    c.eval_entity_fraction = g.value("eval_entity_fraction", c.eval_entity_fraction);
    c.unanswerable_fraction = g.value("unanswerable_fraction", c.unanswerable_fraction);
  }
  if (j.contains("model")) c.model = policy::ModelConfig::from_json(j.at("model"));
  if (j.contains("thresholds")) {
    c.thresholds.tau_pos = j.at("thresholds").value("tau_pos", c.thresholds.tau_pos);
    c.thresholds.tau_neg = j.at("thresholds").value("tau_neg", c.thresholds.tau_neg);
  }
  if (j.contains("score_kind")) c.score_kind = metrics::parse_score_kind(j.at("score_kind").get<std::string>());
  if (j.contains("sft")) c.sft = trainer::StageConfig::from_json(j.at("sft"), Stage::Sft);
  if (j.contains("dpo")) {
    const auto& d = j.at("dpo");
    c.dpo = trainer::StageConfig::from_json(d, Stage::Dpo);
    c.dpo_objective = objectives::DpoConfig::from_json(d);
    c.dpo_samples_per_task = d.value("samples_per_task", c.dpo_samples_per_task);
    c.dpo_pair_cap = d.value("pair_cap", c.dpo_pair_cap);
    c.dpo_temperature = d.value("sampling_temperature", c.dpo_temperature);
  }
  if (j.contains("grpo")) {
    c.grpo = trainer::StageConfig::from_json(j.at("grpo"), Stage::Grpo);
    c.grpo_objective = objectives::GrpoConfig::from_json(j.at("grpo"));
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) { return from_json(read_json(path)); }

// ---------------------------------------------------------------- hashing, locking

std::string sha256_bytes(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_bytes(ss.str());
}

WorkdirLock::WorkdirLock(const fs::path& path) : path_(path) {
  fs::create_directories(path.parent_path());
  std::FILE* f = std::fopen(path.c_str(), "wx");
  if (!f) throw std::runtime_error("workdir is locked by another process ('" + path.string() + "' exists)");
  std::fclose(f);
}

WorkdirLock::~WorkdirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------- pipeline

Pipeline::Pipeline(RunConfig config, Options options)
    : config_(config.resolved()),
      options_(options),
      layout_{fs::path(config_.workdir)},
      world_(synthenv::generate_world(config_.gen)),
      model_(world_.vocab, config_.model) {
  config_.validate();
}

void Pipeline::require(const fs::path& path, const std::string& what) const {
  if (!fs::exists(path)) throw std::runtime_error("missing " + what + " ('" + path.string() + "')");
}

void Pipeline::write_manifest(const std::string& name, const std::vector<fs::path>& inputs,
                              const std::vector<fs::path>& outputs, const nlohmann::json& extra) const {
  nlohmann::json in = nlohmann::json::object(), out = nlohmann::json::object();
  const auto rel = [&](const fs::path& p) { return fs::relative(p, layout_.root).generic_string(); };
  for (const auto& p : inputs) in[rel(p)] = sha256_file(p);
  for (const auto& p : outputs) out[rel(p)] = sha256_file(p);
  nlohmann::json m = {{"command", name}, {"seed", config_.seed}, {"config", config_.to_json()},
                      {"inputs", in},    {"outputs", out}};
  if (!extra.is_null()) m["details"] = extra;
  write_json(layout_.manifest(name), m);
}

policy::ParameterVector Pipeline::initial_parameters() const {
  return model_.init_parameters(derive_seed(config_.seed, "policy"));
}

policy::ParameterVector Pipeline::load_parameters(const std::string& stage) const {
  if (stage == "base") return initial_parameters();
  const fs::path path = layout_.checkpoint(stage);
  require(path, stage + " checkpoint");
  auto ck = policy::load_checkpoint(path.string());
  if (!(ck.model.vocab() == model_.vocab()) || !(*ck.model.layout() == *model_.layout())) {
    throw std::runtime_error("checkpoint '" + path.string() + "' does not match the configured model");
  }
  policy::ParameterVector p(model_.layout());
  std::copy(ck.params.values().begin(), ck.params.values().end(), p.values().begin());
  return p;
}

std::vector<synthenv::Task> Pipeline::load_tasks(const std::string& split) const {
  const fs::path path = split == "train" ? layout_.train_tasks() : layout_.eval_tasks();
  require(path, split + " task file");
  std::ifstream in(path);
  return synthenv::read_tasks(in, world_.vocab);
}

void Pipeline::gen() {
  WorkdirLock lock(layout_.lock());
  const auto& g = config_.gen;
  const TokenRange ents = world_.vocab.role(ContentRole::Entity);
  std::vector<TokenId> order;
  for (std::size_t i = 0; i < ents.size(); ++i) order.push_back(ents.at(i));
  Rng rng(derive_seed(g.seed, "entity-split"));
  rng.shuffle(order);
  const auto n_eval_ents = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config_.eval_entity_fraction * static_cast<double>(ents.size()))));
  const std::set<TokenId> eval_ents(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval_ents));
  std::vector<synthenv::Fact> train_pool, eval_pool;
  for (const auto& f : world_.facts) (eval_ents.count(f.entity) ? eval_pool : train_pool).push_back(f);
  if (train_pool.empty() || eval_pool.empty()) throw std::runtime_error("gen: entity split left a pool empty");

  const std::uint64_t dminus_seed = derive_seed(g.seed, "unanswerable");
  auto make = [&](const std::vector<synthenv::Fact>& pool, std::uint64_t id) {
    synthenv::GenConfig c = g;
    if (Rng(mix_seed(dminus_seed, id)).bernoulli(config_.unanswerable_fraction)) c.n_gold = 0;
    return synthenv::generate_task(world_, pool, c, id);
  };
  std::vector<synthenv::Task> train, eval;
  for (std::size_t i = 0; i < config_.n_train; ++i) train.push_back(make(train_pool, i));
  for (std::size_t i = 0; i < config_.n_eval; ++i) eval.push_back(make(eval_pool, kEvalIdOffset + i));

  std::set<std::uint64_t> ids;
  for (const auto& t : train) ids.insert(t.id);
  for (const auto& t : eval) {
    if (!ids.insert(t.id).second) throw std::logic_error("gen: train/eval task ids overlap");
  }
  {
    auto out = open_out(layout_.train_tasks());
    synthenv::write_tasks(out, train, world_.vocab);
  }
  {
    auto out = open_out(layout_.eval_tasks());
    synthenv::write_tasks(out, eval, world_.vocab);
  }
  std::size_t dminus_train = 0, dminus_eval = 0;
  for (const auto& t : train) dminus_train += t.knowledge_correct() ? 0 : 1;
  for (const auto& t : eval) dminus_eval += t.knowledge_correct() ? 0 : 1;
  write_manifest("gen", {}, {layout_.train_tasks(), layout_.eval_tasks()},
                 {{"train_tasks", train.size()},
                  {"eval_tasks", eval.size()},
                  {"train_unanswerable", dminus_train},
                  {"eval_unanswerable", dminus_eval},
                  {"train_id_range", {0, config_.n_train - 1}},
                  {"eval_id_range", {kEvalIdOffset, kEvalIdOffset + config_.n_eval - 1}},
                  {"ids_disjoint", true},
                  {"context_tokens", synthenv::context_length(g)}});
  log::info("gen: " + std::to_string(train.size()) + " train / " + std::to_string(eval.size()) + " eval tasks");
}

void Pipeline::build(Stage stage) {
  WorkdirLock lock(layout_.lock());
  const auto tasks = load_tasks("train");
  if (stage == Stage::Sft) {
    std::vector<dataforge::RawInstance> raw;
    raw.reserve(tasks.size());
    for (const auto& t : tasks) raw.emplace_back(t);
    const auto built = dataforge::build_sft_dataset(world_.vocab, raw, config_.model.max_seq_len);
    {
      auto out = open_out(layout_.sft_data());
      dataforge::write_sft(out, built.samples, world_.vocab);
    }
    nlohmann::json rejects = nlohmann::json::array();
    for (const auto& r : built.rejects) rejects.push_back({{"task_id", r.task_id}, {"reason", r.reason}});
    const nlohmann::json summary = {{"samples", built.samples.size()},
                                    {"rejected", built.rejects.size()},
                                    {"truncated", built.truncated},
                                    {"rejects", rejects}};
    write_json(layout_.summary("sft"), summary);
    write_manifest("build_sft", {layout_.train_tasks()}, {layout_.sft_data(), layout_.summary("sft")}, summary);
    return;
  }
  if (stage != Stage::Dpo) throw std::invalid_argument("build: only the sft and dpo stages have datasets");

  const fs::path base = layout_.checkpoint("sft");
  require(base, "base checkpoint to sample from");
  const auto params = load_parameters("sft");
  dataforge::GenerationOptions opts;
  opts.temperature = config_.dpo_temperature;
  opts.seed = config_.dpo.seed;
  opts.score_kind = config_.score_kind;
  opts.thresholds = config_.thresholds;
  opts.max_answer_tokens = config_.grpo.max_answer_tokens;
  const dataforge::SyntheticOracle oracle;
  dataforge::TypeHistogram hist;
  std::vector<dataforge::TaskRecords> groups;
  for (const auto& t : tasks) {
    dataforge::TaskRecords g{t.id, serialize_prompt(world_.vocab, t), t.knowledge_correct(), {}};
    g.records = dataforge::sample_generations(model_, params, t, config_.dpo_samples_per_task, oracle, opts);
    for (const auto& r : g.records) hist.add(r, config_.thresholds);
    groups.push_back(std::move(g));
  }
  const auto pairs = dataforge::build_preference_pairs(groups, config_.thresholds, config_.dpo_pair_cap);
  {
    auto out = open_out(layout_.dpo_data());
    dataforge::write_pairs(out, pairs, world_.vocab);
  }
  std::size_t standard = 0;
  for (const auto& p : pairs) standard += p.pairing == Pairing::Standard ? 1 : 0;
  const nlohmann::json summary = {{"sample_types", hist.to_json()},
                                  {"pairs", pairs.size()},
                                  {"standard_pairs", standard},
                                  {"adversarial_pairs", pairs.size() - standard}};
  write_json(layout_.summary("dpo"), summary);
  write_manifest("build_dpo", {layout_.train_tasks(), base}, {layout_.dpo_data(), layout_.summary("dpo")}, summary);
}

namespace {

void write_curve(const fs::path& path, const trainer::StageResult& r, const char* aux_name) {
  auto out = open_out(path);
  out << "step,loss,learning_rate," << aux_name << '\n';
  for (const auto& c : r.curve) out << c.step << ',' << fmt(c.loss) << ',' << fmt(c.learning_rate) << ',' << fmt(c.aux) << '\n';
}

}  // namespace

trainer::StageResult Pipeline::train(Stage stage) {
  WorkdirLock lock(layout_.lock());
  const auto t0 = std::chrono::steady_clock::now();
  const std::string name = trainer::to_string(stage);
  std::vector<fs::path> inputs;
  std::string init_from;
  trainer::StageResult result;
  nlohmann::json details;

  auto predecessor = [&](const std::string& wanted) -> std::string {
    if (fs::exists(layout_.checkpoint(wanted))) return wanted;
    if (!options_.override_stage_order) {
      throw std::runtime_error("stage order violation: " + name + " requires the " + wanted +
                               " checkpoint; pass --override-stage-order to proceed anyway");
    }
    for (const char* fallback : {"dpo", "sft"}) {
      if (fallback != wanted && fs::exists(layout_.checkpoint(fallback))) {
        log::warn("OVERRIDE: " + name + " starts from the " + fallback + " checkpoint instead of " + wanted);
        return fallback;
      }
    }
    log::warn("OVERRIDE: " + name + " starts from untrained parameters instead of the " + wanted + " checkpoint");
    return "base";
  };

  if (stage == Stage::Sft) {
    require(layout_.sft_data(), "SFT dataset");
    std::ifstream in(layout_.sft_data());
    const auto data = dataforge::read_sft(in, world_.vocab);
    inputs.push_back(layout_.sft_data());
    init_from = "base";
    result = trainer::run_sft(model_, initial_parameters(), data, config_.sft);
    details["samples"] = data.size();
  } else if (stage == Stage::Dpo) {
    require(layout_.dpo_data(), "DPO dataset");
    std::ifstream in(layout_.dpo_data());
    const auto pairs = dataforge::read_pairs(in, world_.vocab);
    inputs.push_back(layout_.dpo_data());
    init_from = predecessor("sft");
    if (init_from != "base") inputs.push_back(layout_.checkpoint(init_from));
    const auto init = load_parameters(init_from);
    const auto reference = policy::snapshot(init, policy::SnapshotTag::Reference);
    details["pairs"] = pairs.size();
    details["reference"] = init_from;
    if (pairs.empty()) {
      log::warn("train dpo: the preference dataset is empty; the DPO checkpoint equals its reference");
      result.params = init;
    } else {
      result = trainer::run_dpo(model_, init, reference, pairs, config_.dpo, config_.dpo_objective);
    }
  } else {
    init_from = predecessor("dpo");
    if (init_from != "base") inputs.push_back(layout_.checkpoint(init_from));
    inputs.push_back(layout_.train_tasks());
    const auto tasks = load_tasks("train");
    trainer::GrpoOptions opts{config_.score_kind, config_.thresholds};
    result = trainer::run_grpo(model_, load_parameters(init_from), tasks, config_.grpo, config_.grpo_objective, opts);
    details["stagnation"] = result.stagnation.to_json();
    details["old_refreshes"] = result.old_refreshes;
    details["skipped_batches"] = result.skipped_batches;
  }

  fs::create_directories(layout_.checkpoint(name).parent_path());
  policy::save_checkpoint(layout_.checkpoint(name).string(), model_, result.params);
  const char* aux = stage == Stage::Sft ? "token_nll" : stage == Stage::Dpo ? "mean_margin" : "mean_reward";
  write_curve(layout_.curve(name), result, aux);

  const auto eval_tasks = load_tasks("eval");
  const auto held_out = trainer::evaluate(model_, result.params, eval_tasks, config_.score_kind,
                                          config_.grpo_objective, {}, config_.thresholds,
                                          config_.grpo.max_answer_tokens);
  details["init_from"] = init_from;
  details["updates"] = result.updates;
  details["epoch_losses"] = result.epoch_losses;
  details["final_loss"] = result.curve.empty() ? 0.0 : result.curve.back().loss;
  details["held_out"] = held_out.to_json();
  const nlohmann::json report = {{"stage", name}, {"config", config_.to_json()}, {"results", details}};
  write_json(layout_.train_report(name), report);
  write_json(layout_.timing(name),
             {{"stage", name},
              {"wall_clock_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
  inputs.push_back(layout_.eval_tasks());
  write_manifest("train_" + name, inputs, {layout_.checkpoint(name), layout_.curve(name), layout_.train_report(name)},
                 details);
  return result;
}

std::vector<EvalRow> Pipeline::eval(const std::optional<std::string>& stage, const std::string& split) {
  WorkdirLock lock(layout_.lock());
  if (split != "eval" && split != "train") throw std::invalid_argument("eval: split must be 'eval' or 'train'");
  const auto tasks = load_tasks(split);
  std::vector<std::uint64_t> train_ids;
  if (!(split == "train" && options_.allow_overlap)) {
    for (const auto& t : load_tasks("train")) train_ids.push_back(t.id);
  }
  std::vector<std::string> stages;
  if (stage) {
    stages.push_back(*stage);
  } else {
    stages.push_back("base");
    for (const char* s : {"sft", "dpo", "grpo"}) {
      if (fs::exists(layout_.checkpoint(s))) stages.push_back(s);
    }
  }
  std::vector<EvalRow> rows;
  std::vector<fs::path> inputs{split == "train" ? layout_.train_tasks() : layout_.eval_tasks()};
  for (const auto& s : stages) {
    if (s != "base") inputs.push_back(layout_.checkpoint(s));
    rows.push_back({s, trainer::evaluate(model_, load_parameters(s), tasks, config_.score_kind, config_.grpo_objective,
                                         train_ids, config_.thresholds, config_.grpo.max_answer_tokens)});
  }
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    auto row = r.report.to_json();
    row["stage"] = r.stage;
    j.push_back(row);
  }
  write_json(layout_.eval_report(), {{"split", split}, {"score_kind", metrics::to_string(config_.score_kind)}, {"rows", j}});
  {
    auto out = open_out(layout_.eval_csv());
    out << "stage,n_tasks,accuracy,mean_reward,correct,neglect,fragility,collapse\n";
    for (const auto& r : rows) {
      const auto& f = r.report.failures;
      out << r.stage << ',' << r.report.n_tasks << ',' << fmt(r.report.accuracy) << ',' << fmt(r.report.mean_reward)
          << ',' << f[static_cast<std::size_t>(trainer::FailureMode::Correct)] << ','
          << f[static_cast<std::size_t>(trainer::FailureMode::Neglect)] << ','
          << f[static_cast<std::size_t>(trainer::FailureMode::Fragility)] << ','
          << f[static_cast<std::size_t>(trainer::FailureMode::Collapse)] << '\n';
    }
  }
  write_manifest("eval", inputs, {layout_.eval_report(), layout_.eval_csv()});
  return rows;
}

void Pipeline::report() {
  WorkdirLock lock(layout_.lock());
  std::ostringstream os;
  std::vector<fs::path> inputs;
  os << "run seed " << config_.seed << ", score kind " << metrics::to_string(config_.score_kind) << "\n\n";
  os << "training stages\n";
  os << std::left << std::setw(6) << "stage" << std::setw(10) << "updates" << std::setw(14) << "final_loss"
     << std::setw(12) << "held_acc" << std::setw(12) << "held_reward" << "notes\n";
  for (const char* s : {"sft", "dpo", "grpo"}) {
    const fs::path p = layout_.train_report(s);
    if (!fs::exists(p)) continue;
    inputs.push_back(p);
    const auto r = read_json(p).at("results");
    std::string notes = "init=" + r.value("init_from", std::string("?"));
    if (r.contains("stagnation")) {
      notes += " degenerate=" + std::to_string(r["stagnation"]["groups_degenerate"].get<std::size_t>()) + "/" +
               std::to_string(r["stagnation"]["groups_total"].get<std::size_t>());
    }
    if (r.contains("pairs")) notes += " pairs=" + std::to_string(r["pairs"].get<std::size_t>());
    os << std::left << std::setw(6) << s << std::setw(10) << r.value("updates", 0) << std::setw(14)
       << fixed(r.value("final_loss", 0.0)) << std::setw(12) << fixed(r["held_out"]["accuracy"].get<double>())
       << std::setw(12) << fixed(r["held_out"]["mean_reward"].get<double>()) << notes << '\n';
  }
  if (fs::exists(layout_.eval_report())) {
    inputs.push_back(layout_.eval_report());
    const auto e = read_json(layout_.eval_report());
    os << "\nevaluation (" << e.value("split", std::string("eval")) << " split)\n";
    os << std::left << std::setw(6) << "stage" << std::setw(10) << "accuracy" << std::setw(12) << "reward"
       << std::setw(9) << "correct" << std::setw(9) << "neglect" << std::setw(11) << "fragility" << "collapse\n";
    for (const auto& r : e.at("rows")) {
      const auto& f = r.at("failure_modes");
      os << std::left << std::setw(6) << r.at("stage").get<std::string>() << std::setw(10)
         << fixed(r.at("accuracy").get<double>()) << std::setw(12) << fixed(r.at("mean_reward").get<double>())
         << std::setw(9) << f.at("correct").get<std::size_t>() << std::setw(9) << f.at("neglect").get<std::size_t>()
         << std::setw(11) << f.at("fragility").get<std::size_t>() << f.at("collapse").get<std::size_t>() << '\n';
    }
  }
  open_out(layout_.report_text()) << os.str();
  write_manifest("report", inputs, {layout_.report_text()});
}

}  // namespace ctxalign::pipeline
