#include "ctxalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "ctxalign/dataforge.hpp"
#include "ctxalign/grammar.hpp"
#include "ctxalign/log.hpp"
#include "ctxalign/rng.hpp"

namespace ctxalign::trainer {

using metrics::Label;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Sft: return "sft";
    case Stage::Dpo: return "dpo";
    case Stage::Grpo: return "grpo";
  }
  return "unknown";
}

Stage parse_stage(const std::string& name) {
  if (name == "sft") return Stage::Sft;
  if (name == "dpo") return Stage::Dpo;
  if (name == "grpo") return Stage::Grpo;
  throw std::invalid_argument("unknown stage '" + name + "'");
}

std::string to_string(Schedule s) { return s == Schedule::Constant ? "constant" : "linear_decay"; }

Schedule parse_schedule(const std::string& name) {
  if (name == "constant") return Schedule::Constant;
  if (name == "linear_decay") return Schedule::LinearDecay;
  throw std::invalid_argument("unknown schedule '" + name + "'");
}

std::string to_string(StagnationRule r) { return r == StagnationRule::ZeroVariance ? "zero_variance" : "no_positive"; }

StagnationRule parse_stagnation_rule(const std::string& name) {
  if (name == "zero_variance") return StagnationRule::ZeroVariance;
  if (name == "no_positive") return StagnationRule::NoPositive;
  throw std::invalid_argument("unknown stagnation rule '" + name + "'");
}

std::string to_string(FailureMode m) {
  switch (m) {
    case FailureMode::Neglect: return "neglect";
    case FailureMode::Fragility: return "fragility";
    case FailureMode::Collapse: return "collapse";
    case FailureMode::Correct: return "correct";
  }
  return "unknown";
}

// ---------------------------------------------------------------- config

StageConfig StageConfig::defaults(Stage stage) {
  StageConfig c;
  c.stage = stage;
  if (stage != Stage::Sft) c.learning_rate = 2.5e-4;
  return c;
}

void StageConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("StageConfig: learning_rate must be finite and >= 0");
  }
  if (batch_size < 1) throw std::invalid_argument("StageConfig: batch_size must be >= 1");
  if (stage == Stage::Grpo ? prompt_budget < 1 : epochs < 1) {
    throw std::invalid_argument("StageConfig: epochs / prompt_budget must be >= 1");
  }
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("StageConfig: warmup_fraction must lie in [0, 1)");
  }
  if (!(max_grad_norm >= 0.0)) throw std::invalid_argument("StageConfig: max_grad_norm must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("StageConfig: temperature must be > 0");
  if (inner_steps < 1) throw std::invalid_argument("StageConfig: inner_steps must be >= 1");
}

nlohmann::json StageConfig::to_json() const {
  nlohmann::json j = {{"stage", to_string(stage)},
                      {"learning_rate", learning_rate},
                      {"batch_size", batch_size},
                      {"warmup_fraction", warmup_fraction},
                      {"schedule", to_string(schedule)},
                      {"seed", seed},
                      {"max_grad_norm", max_grad_norm}};
  if (stage == Stage::Grpo) {
    j["prompt_budget"] = prompt_budget;
    j["temperature"] = temperature;
    j["inner_steps"] = inner_steps;
    j["max_answer_tokens"] = max_answer_tokens;
    j["stagnation"] = to_string(stagnation);
  } else {
    j["epochs"] = epochs;
  }
  return j;
}

StageConfig StageConfig::from_json(const nlohmann::json& j, Stage stage) {
  StageConfig c = defaults(stage);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.prompt_budget = j.value("prompt_budget", c.prompt_budget);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.temperature = j.value("temperature", c.temperature);
  c.inner_steps = j.value("inner_steps", c.inner_steps);
  c.max_answer_tokens = j.value("max_answer_tokens", c.max_answer_tokens);
  if (j.contains("stagnation")) c.stagnation = parse_stagnation_rule(j.at("stagnation").get<std::string>());
  return c;
}

nlohmann::json StagnationStats::to_json() const {
  return {{"groups_total", groups_total},
          {"groups_degenerate", groups_degenerate},
          {"degenerate_fraction", degenerate_fraction()}};
}

// ---------------------------------------------------------------- optimizer

Adam::Adam(const ParameterVector& like, double beta1, double beta2, double eps)
    : m_(like.size(), 0.0), v_(like.size(), 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterVector& params, const ParameterVector& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
    if (lr != 0.0) p[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

double learning_rate_at(const StageConfig& config, std::size_t step, std::size_t total) {
  const auto warmup = static_cast<std::size_t>(std::floor(config.warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup + 1);
  if (config.schedule == Schedule::Constant || total <= warmup) return config.learning_rate;
  return config.learning_rate * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

namespace {

void guard(double loss, const ParameterVector& grad, const char* stage, std::size_t step) {
  if (!std::isfinite(loss) || !grad.all_finite()) {
    throw TrainingDiverged(std::string(stage) + ": non-finite loss or gradient at step " + std::to_string(step) +
                           " (loss = " + std::to_string(loss) + ")");
  }
}

void clip_norm(ParameterVector& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (double g : grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) grad *= max_norm / norm;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  return idx;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

bool answer_positive(const Vocabulary& vocab, const objectives::ParsedResponse& parsed, const synthenv::Task& task,
                     metrics::ScoreKind kind, const metrics::ThresholdPolicy& thresholds) {
  if (!parsed.well_formed) return false;
  try {
    const auto s = metrics::score(kind, vocab.strings(parsed.answer), vocab.strings(task.gold_answer));
    return metrics::classify(kind, s, thresholds) == Label::Positive;
  } catch (const metrics::UnusableSample&) {
    return false;
  }
}

}  // namespace

// ---------------------------------------------------------------- SFT

StageResult run_sft(const PolicyModel& model, const ParameterVector& init, std::span<const SftSample> dataset,
                    const StageConfig& config) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("run_sft: empty dataset");
  StageResult out;
  out.params = init;
  Adam adam(init);
  Rng rng(derive_seed(config.seed, "sft-order"));
  const std::size_t per_epoch = ceil_div(dataset.size(), config.batch_size);
  const std::size_t total = per_epoch * config.epochs;
  std::vector<SftSample> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(dataset.size(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      batch.clear();
      std::size_t tokens = 0;
      for (std::size_t i = b * config.batch_size; i < std::min(order.size(), (b + 1) * config.batch_size); ++i) {
        batch.push_back(dataset[order[i]]);
        tokens += dataset[order[i]].target.size() + 2;
      }
      auto lg = objectives::sft_loss(model, out.params, batch);
      guard(lg.loss, lg.gradient, "sft", out.updates);
      clip_norm(lg.gradient, config.max_grad_norm);
      const double lr = learning_rate_at(config, out.updates, total);
      adam.step(out.params, lg.gradient, lr);
      if (!out.params.all_finite()) throw TrainingDiverged("sft: parameters became non-finite");
      out.curve.push_back({out.updates, lg.loss, lr,
                           lg.loss * static_cast<double>(batch.size()) / static_cast<double>(tokens)});
      epoch_loss += lg.loss * static_cast<double>(batch.size());
      ++out.updates;
    }
    out.epoch_losses.push_back(epoch_loss / static_cast<double>(dataset.size()));
  }
  return out;
}

// ---------------------------------------------------------------- DPO

StageResult run_dpo(const PolicyModel& model, const ParameterVector& init, const PolicySnapshot& reference,
                    std::span<const PreferencePair> pairs, const StageConfig& config, const objectives::DpoConfig& dpo) {
  config.validate();
  dpo.validate();
  if (pairs.empty()) throw std::invalid_argument("run_dpo: empty pair list");
  if (!init.same_layout(reference.parameters())) throw std::invalid_argument("run_dpo: reference layout mismatch");
  if (!init.bit_identical(reference.parameters())) {
    log::warn("run_dpo: initial parameters differ from the reference snapshot");
  }
  for (const auto& p : pairs) {
    if (p.winner == p.loser) throw std::invalid_argument("run_dpo: pair with winner equal to loser");
  }
  const auto ref_all = objectives::reference_logprobs(model, reference, pairs);

  StageResult out;
  out.params = init;
  Adam adam(init);
  Rng rng(derive_seed(config.seed, "dpo-order"));
  const std::size_t per_epoch = ceil_div(pairs.size(), config.batch_size);
  const std::size_t total = per_epoch * config.epochs;
  std::vector<PreferencePair> batch;
  std::vector<objectives::ReferenceLogprobs> ref;
  std::vector<double> margins;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(pairs.size(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      batch.clear();
      ref.clear();
      for (std::size_t i = b * config.batch_size; i < std::min(order.size(), (b + 1) * config.batch_size); ++i) {
        batch.push_back(pairs[order[i]]);
        ref.push_back(ref_all[order[i]]);
      }
      auto lg = objectives::dpo_loss(model, out.params, ref, batch, dpo, &margins);
      guard(lg.loss, lg.gradient, "dpo", out.updates);
      clip_norm(lg.gradient, config.max_grad_norm);
      const double lr = learning_rate_at(config, out.updates, total);
      adam.step(out.params, lg.gradient, lr);
      if (!out.params.all_finite()) throw TrainingDiverged("dpo: parameters became non-finite");
      const double mean_margin =
          std::accumulate(margins.begin(), margins.end(), 0.0) / static_cast<double>(margins.size());
      out.curve.push_back({out.updates, lg.loss, lr, mean_margin});
      epoch_loss += lg.loss * static_cast<double>(batch.size());
      ++out.updates;
    }
    out.epoch_losses.push_back(epoch_loss / static_cast<double>(pairs.size()));
  }
  return out;
}

// ---------------------------------------------------------------- GRPO

StageResult run_grpo(const PolicyModel& model, const ParameterVector& init, std::span<const synthenv::Task> tasks,
                     const StageConfig& config, const objectives::GrpoConfig& grpo, const GrpoOptions& options) {
  config.validate();
  grpo.validate();
  if (tasks.empty()) throw std::invalid_argument("run_grpo: no tasks");
  const Vocabulary& vocab = model.vocab();
  StageResult out;
  out.params = init;
  const PolicySnapshot reference = policy::snapshot(init, policy::SnapshotTag::Reference);
  Adam adam(init);
  Rng rng(derive_seed(config.seed, "grpo-order"));
  const std::uint64_t sample_base = derive_seed(config.seed, "grpo-sample");
  const std::size_t n_batches = ceil_div(config.prompt_budget, config.batch_size);
  const std::size_t total = n_batches * config.inner_steps;

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::size_t prompt_index = 0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    const PolicySnapshot old = policy::snapshot(out.params, policy::SnapshotTag::Old);
    ++out.old_refreshes;
    const std::size_t n_prompts = std::min(config.batch_size, config.prompt_budget - b * config.batch_size);

    std::vector<std::vector<objectives::GrpoCandidate>> groups;
    double reward_sum = 0.0;
    std::size_t reward_count = 0;
    for (std::size_t q = 0; q < n_prompts; ++q, ++prompt_index) {
      if (cursor == order.size()) {
        order = shuffled(tasks.size(), rng);
        cursor = 0;
      }
      const synthenv::Task& task = tasks[order[cursor++]];
      const TokenSeq prompt = serialize_prompt(vocab, task);
      const ResponseGrammar grammar(vocab, task.K(), config.max_answer_tokens);
      const auto constraint = grammar.constraint();
      std::vector<double> rewards;
      std::vector<policy::SampleOutput> samples;
      bool any_positive = false;
      for (std::size_t i = 0; i < grpo.group_size; ++i) {
        auto s = model.sample(old.parameters(), prompt, config.temperature, grammar.max_length(),
                              mix_seed(mix_seed(sample_base, prompt_index), i), &constraint);
        const auto parsed = objectives::parse_response(vocab, s, task.K());
        const auto r = objectives::reward(vocab, parsed, task, options.score_kind, grpo);
        any_positive |= answer_positive(vocab, parsed, task, options.score_kind, options.thresholds);
        rewards.push_back(r.total);
        samples.push_back(std::move(s));
      }
      reward_sum += std::accumulate(rewards.begin(), rewards.end(), 0.0);
      reward_count += rewards.size();
      const auto adv = objectives::advantages(rewards);
      ++out.stagnation.groups_total;
      const bool degenerate =
          adv.degenerate || (config.stagnation == StagnationRule::NoPositive && !any_positive);
      if (degenerate) {
        ++out.stagnation.groups_degenerate;
        continue;
      }
      std::vector<objectives::GrpoCandidate> group;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        group.push_back({prompt, std::move(samples[i].tokens), adv.advantages[i]});
      }
      groups.push_back(std::move(group));
    }

    const double mean_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
    if (groups.empty()) {
      ++out.skipped_batches;
      log::warn("run_grpo: batch " + std::to_string(b) + " has only degenerate groups; skipped");
      out.curve.push_back({out.updates, 0.0, 0.0, mean_reward});
      continue;
    }
    for (std::size_t inner = 0; inner < config.inner_steps; ++inner) {
      ParameterVector grad = out.params.zeros_like();
      double loss = 0.0;
      for (const auto& g : groups) {
        const auto terms = objectives::grpo_loss(model, out.params, old, reference, g, grpo);
        loss += terms.loss;
        grad += terms.gradient;
      }
      const double inv = 1.0 / static_cast<double>(groups.size());
      grad *= inv;
      loss *= inv;
      guard(loss, grad, "grpo", out.updates);
      clip_norm(grad, config.max_grad_norm);
      const double lr = learning_rate_at(config, out.updates, total);
      adam.step(out.params, grad, lr);
      if (!out.params.all_finite()) throw TrainingDiverged("grpo: parameters became non-finite");
      out.curve.push_back({out.updates, loss, lr, mean_reward});
      ++out.updates;
    }
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

FailureMode classify_failure(const Vocabulary& vocab, const objectives::ParsedResponse& parsed,
                             const synthenv::Task& task, metrics::ScoreKind score_kind,
                             const objectives::GrpoConfig& grpo, const metrics::ThresholdPolicy& thresholds) {
  if (answer_positive(vocab, parsed, task, score_kind, thresholds)) return FailureMode::Correct;
  for (const auto& d : task.corpus) {
    if (d.kind == synthenv::DocKind::Conflicting && d.tokens.size() > 2 && parsed.answer.size() == 1 &&
        parsed.answer[0] == d.tokens[2]) {
      return FailureMode::Fragility;
    }
  }
  if (!task.knowledge_correct()) return FailureMode::Fragility;
  bool gold_marked = parsed.well_formed;
  for (std::size_t pos : task.gold_positions) {
    gold_marked = gold_marked && pos < parsed.relevance.size() && parsed.relevance[pos] > grpo.consensus_threshold;
  }
  return gold_marked ? FailureMode::Collapse : FailureMode::Neglect;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json hist;
  for (std::size_t m = 0; m < kFailureModeCount; ++m) hist[to_string(static_cast<FailureMode>(m))] = failures[m];
  return {{"n_tasks", n_tasks}, {"accuracy", accuracy}, {"mean_reward", mean_reward}, {"failure_modes", hist}};
}

EvalReport evaluate_responses(const Vocabulary& vocab, std::span<const synthenv::Task> tasks,
                              std::span<const TokenSeq> responses, metrics::ScoreKind score_kind,
                              const objectives::GrpoConfig& grpo, const metrics::ThresholdPolicy& thresholds) {
  if (tasks.size() != responses.size()) throw std::invalid_argument("evaluate_responses: size mismatch");
  EvalReport rep;
  rep.n_tasks = tasks.size();
  if (tasks.empty()) return rep;
  std::size_t correct = 0;
  double reward_sum = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto parsed = objectives::parse_response(vocab, responses[i], tasks[i].K());
    reward_sum += objectives::reward(vocab, parsed, tasks[i], score_kind, grpo).total;
    const FailureMode m = classify_failure(vocab, parsed, tasks[i], score_kind, grpo, thresholds);
    ++rep.failures[static_cast<std::size_t>(m)];
    correct += m == FailureMode::Correct ? 1 : 0;
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(tasks.size());
  rep.mean_reward = reward_sum / static_cast<double>(tasks.size());
  return rep;
}

EvalReport evaluate(const PolicyModel& model, const ParameterVector& params, std::span<const synthenv::Task> tasks,
                    metrics::ScoreKind score_kind, const objectives::GrpoConfig& grpo,
                    std::span<const std::uint64_t> train_ids, const metrics::ThresholdPolicy& thresholds,
                    std::size_t max_answer_tokens) {
  const std::unordered_set<std::uint64_t> train(train_ids.begin(), train_ids.end());
  for (const auto& t : tasks) {
    if (train.count(t.id)) {
      throw std::invalid_argument("evaluate: task id " + std::to_string(t.id) + " also appears in the training set");
    }
  }
  const Vocabulary& vocab = model.vocab();
  std::vector<TokenSeq> responses;
  responses.reserve(tasks.size());
  for (const auto& t : tasks) {
    const ResponseGrammar grammar(vocab, t.K(), max_answer_tokens);
    const auto constraint = grammar.constraint();
    const auto s = model.sample(params, serialize_prompt(vocab, t), policy::kGreedyTemperature, grammar.max_length(),
                                0, &constraint);
    responses.push_back(s.truncated ? TokenSeq{} : s.tokens);
  }
  return evaluate_responses(vocab, tasks, responses, score_kind, grpo, thresholds);
}

}  // namespace ctxalign::trainer
