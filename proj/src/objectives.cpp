#include "ctxalign/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ctxalign/grammar.hpp"

namespace ctxalign::objectives {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_layout(const ParameterVector& params, const ParameterVector& other, const char* what) {
  if (!params.same_layout(other)) throw std::invalid_argument(std::string(what) + ": layout does not match params");
}

}  // namespace

void DpoConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("DpoConfig: beta must be > 0");
}

nlohmann::json DpoConfig::to_json() const { return {{"beta", beta}}; }

DpoConfig DpoConfig::from_json(const nlohmann::json& j) {
  DpoConfig c;
  c.beta = j.value("beta", c.beta);
  return c;
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("GrpoConfig: group_size must be >= 2");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("GrpoConfig: epsilon must lie in (0, 1)");
  if (!(kl_coeff >= 0.0)) throw std::invalid_argument("GrpoConfig: kl_coeff must be >= 0");
  if (!(consensus_threshold >= 0.0 && consensus_threshold <= 1.0)) {
    throw std::invalid_argument("GrpoConfig: consensus_threshold must lie in [0, 1]");
  }
  if (!std::isfinite(w_ans) || !std::isfinite(w_disc)) throw std::invalid_argument("GrpoConfig: weights must be finite");
}

nlohmann::json GrpoConfig::to_json() const {
  return {{"group_size", group_size},   {"epsilon", epsilon},
          {"kl_coeff", kl_coeff},       {"w_ans", w_ans},
          {"w_disc", w_disc},           {"consensus_threshold", consensus_threshold},
          {"token_level_ratio", token_level_ratio}};
}

GrpoConfig GrpoConfig::from_json(const nlohmann::json& j) {
  GrpoConfig c;
  c.group_size = j.value("group_size", c.group_size);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.kl_coeff = j.value("kl_coeff", c.kl_coeff);
  c.w_ans = j.value("w_ans", c.w_ans);
  c.w_disc = j.value("w_disc", c.w_disc);
  c.consensus_threshold = j.value("consensus_threshold", c.consensus_threshold);
  c.token_level_ratio = j.value("token_level_ratio", c.token_level_ratio);
  return c;
}

// ---------------------------------------------------------------- SFT

LossAndGradient sft_loss(const PolicyModel& model, const ParameterVector& params, std::span<const SftSample> batch) {
  if (batch.empty()) throw std::invalid_argument("sft_loss: empty batch");
  LossAndGradient out{0.0, params.zeros_like()};
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const TokenSeq target = answer_suffix(model.vocab(), s.target);
    out.loss -= scale * model.accumulate_logprob_gradient(params, s.prompt, target, -scale, out.gradient);
  }
  return out;
}

// ---------------------------------------------------------------- DPO

DpoPairTerms dpo_pair(double live_w, double live_l, double ref_w, double ref_l, double beta) {
  DpoPairTerms t;
  t.margin = beta * ((live_w - ref_w) - (live_l - ref_l));
  t.loss = softplus(-t.margin);
  const double g = -beta * sigmoid(-t.margin);
  t.d_winner = g;
  t.d_loser = -g;
  return t;
}

std::vector<ReferenceLogprobs> reference_logprobs(const PolicyModel& model, const PolicySnapshot& reference,
                                                  std::span<const PreferencePair> pairs) {
  std::vector<ReferenceLogprobs> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({model.sequence_logprob(reference.parameters(), p.prompt, p.winner),
                   model.sequence_logprob(reference.parameters(), p.prompt, p.loser)});
  }
  return out;
}

LossAndGradient dpo_loss(const PolicyModel& model, const ParameterVector& params, const PolicySnapshot& reference,
                         std::span<const PreferencePair> pairs, const DpoConfig& config) {
  require_layout(params, reference.parameters(), "dpo_loss reference");
  for (const auto& p : pairs) {
    if (p.winner == p.loser) throw std::invalid_argument("dpo_loss: winner equals loser");
  }
  const auto ref = reference_logprobs(model, reference, pairs);
  return dpo_loss(model, params, ref, pairs, config);
}

LossAndGradient dpo_loss(const PolicyModel& model, const ParameterVector& params,
                         std::span<const ReferenceLogprobs> reference, std::span<const PreferencePair> pairs,
                         const DpoConfig& config, std::vector<double>* margins) {
  config.validate();
  if (pairs.empty()) throw std::invalid_argument("dpo_loss: empty pair list");
  if (reference.size() != pairs.size()) throw std::invalid_argument("dpo_loss: reference log-probs misaligned");
  LossAndGradient out{0.0, params.zeros_like()};
  if (margins) margins->clear();
  const double scale = 1.0 / static_cast<double>(pairs.size());
  ParameterVector gw = params.zeros_like(), gl = params.zeros_like();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.winner == p.loser) throw std::invalid_argument("dpo_loss: winner equals loser");
    std::fill(gw.values().begin(), gw.values().end(), 0.0);
    std::fill(gl.values().begin(), gl.values().end(), 0.0);
    const double lw = model.accumulate_logprob_gradient(params, p.prompt, p.winner, 1.0, gw);
    const double ll = model.accumulate_logprob_gradient(params, p.prompt, p.loser, 1.0, gl);
    const DpoPairTerms t = dpo_pair(lw, ll, reference[i].winner, reference[i].loser, config.beta);
    out.loss += scale * t.loss;
    out.gradient.add_scaled(gw, scale * t.d_winner);
    out.gradient.add_scaled(gl, scale * t.d_loser);
    if (margins) margins->push_back(t.margin);
  }
  return out;
}

// ---------------------------------------------------------------- responses and rewards

ParsedResponse parse_response(const Vocabulary& vocab, std::span<const TokenId> tokens, std::size_t K) {
  ParsedResponse bad;
  bad.relevance.assign(K, 0.0);
  std::size_t i = 0;
  auto next_is = [&](TokenId t) { return i < tokens.size() && tokens[i] == t; };
  if (!next_is(vocab.bos())) return bad;
  ++i;
  ParsedResponse out;
  while (next_is(vocab.rel())) {
    if (i + 2 >= tokens.size()) return bad;
    const auto doc = vocab.doc_index(tokens[i + 1]);
    const auto score = vocab.score_value(tokens[i + 2]);
    if (!doc || *doc != out.relevance.size() || !score) return bad;
    out.relevance.push_back(*score);
    i += 3;
  }
  if (out.relevance.size() != K || !next_is(vocab.answer())) return bad;
  ++i;
  while (i < tokens.size() && vocab.is_content(tokens[i])) out.answer.push_back(tokens[i++]);
  if (out.answer.empty() || !next_is(vocab.eos()) || i + 1 != tokens.size()) return bad;
  out.well_formed = true;
  return out;
}

ParsedResponse parse_response(const Vocabulary& vocab, const policy::SampleOutput& sample, std::size_t K) {
  if (sample.truncated) {
    ParsedResponse bad;
    bad.relevance.assign(K, 0.0);
    return bad;
  }
  return parse_response(vocab, sample.tokens, K);
}

RewardBreakdown reward(const Vocabulary& vocab, const ParsedResponse& parsed, const synthenv::Task& task,
                       metrics::ScoreKind score_kind, const GrpoConfig& config) {
  RewardBreakdown r;
  if (!parsed.well_formed) return r;
  if (parsed.relevance.size() != task.corpus.size() || task.reranker_scores.size() != task.corpus.size()) {
    throw std::invalid_argument("reward: relevance list does not match the corpus");
  }
  r.r_ans = metrics::score(score_kind, vocab.strings(parsed.answer), vocab.strings(task.gold_answer)).value();
  std::size_t agree = 0;
  for (std::size_t i = 0; i < parsed.relevance.size(); ++i) {
    const bool model_rel = parsed.relevance[i] > config.consensus_threshold;
    const bool ref_rel = task.reranker_scores[i] > config.consensus_threshold;
    if (model_rel == ref_rel) ++agree;
  }
  r.r_disc = parsed.relevance.empty() ? 0.0 : static_cast<double>(agree) / static_cast<double>(parsed.relevance.size());
  r.total = config.w_ans * r.r_ans + config.w_disc * r.r_disc;
  return r;
}

AdvantageGroup advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("advantages: group needs at least 2 rewards");
  AdvantageGroup g;
  g.rewards.assign(rewards.begin(), rewards.end());
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  g.advantages.assign(rewards.size(), 0.0);
  if (sd < 1e-6) {
    g.degenerate = true;
    return g;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) g.advantages[i] = (rewards[i] - mean) / sd;
  return g;
}

// ---------------------------------------------------------------- GRPO

SurrogateTerm clipped_surrogate(double log_ratio, double advantage, double epsilon) {
  const double rho = std::exp(log_ratio);
  const double unclipped = rho * advantage;
  const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon) * advantage;
  if (unclipped <= clipped) return {unclipped, unclipped, false};
  return {clipped, 0.0, true};
}

GrpoTerms grpo_loss(const PolicyModel& model, const ParameterVector& params, const PolicySnapshot& old,
                    const PolicySnapshot& reference, std::span<const GrpoCandidate> group, const GrpoConfig& config) {
  config.validate();
  if (group.empty()) throw std::invalid_argument("grpo_loss: empty group");
  require_layout(params, old.parameters(), "grpo_loss old snapshot");
  require_layout(params, reference.parameters(), "grpo_loss reference snapshot");
  if (std::all_of(group.begin(), group.end(), [](const GrpoCandidate& c) { return c.advantage == 0.0; })) {
    throw std::invalid_argument("grpo_loss: degenerate group (all advantages zero)");
  }

  const std::size_t V = model.vocab_size();
  std::size_t positions = 0;
  for (const auto& c : group) positions += c.response.size();
  if (positions == 0) throw std::invalid_argument("grpo_loss: empty responses");
  const double inv_n = 1.0 / static_cast<double>(group.size());
  const double kl_scale = config.kl_coeff / static_cast<double>(positions);

  GrpoTerms out;
  out.gradient = params.zeros_like();
  std::vector<double> dz;
  for (const auto& c : group) {
    const policy::Forward live = model.forward(params, c.prompt, c.response);
    const auto old_lp = model.token_logprobs(old.parameters(), c.prompt, c.response);
    const policy::Forward ref = model.forward(reference.parameters(), c.prompt, c.response);
    const std::size_t T = c.response.size();
    dz.assign(T * V, 0.0);

    // Per-position weight w_t on d log P_theta(a_t); the loss carries -w_t.
    std::vector<double> w(T, 0.0);
    if (config.token_level_ratio) {
      const double inv_t = 1.0 / static_cast<double>(T);
      for (std::size_t t = 0; t < T; ++t) {
        const SurrogateTerm s = clipped_surrogate(live.token_logprobs[t] - old_lp[t], c.advantage, config.epsilon);
        out.surrogate += inv_n * inv_t * s.value;
        out.clipped += s.clipped ? 1 : 0;
        w[t] = inv_n * inv_t * s.d_log_ratio;
      }
    } else {
      double log_ratio = 0.0;
      for (std::size_t t = 0; t < T; ++t) log_ratio += live.token_logprobs[t] - old_lp[t];
      const SurrogateTerm s = clipped_surrogate(log_ratio, c.advantage, config.epsilon);
      out.surrogate += inv_n * s.value;
      out.clipped += s.clipped ? 1 : 0;
      std::fill(w.begin(), w.end(), inv_n * s.d_log_ratio);
    }

    for (std::size_t t = 0; t < T; ++t) {
      const double* lp = &live.logprobs[t * V];
      const double* lr = &ref.logprobs[t * V];
      double kl_t = 0.0;
      for (std::size_t v = 0; v < V; ++v) kl_t += std::exp(lp[v]) * (lp[v] - lr[v]);
      out.kl += kl_t / static_cast<double>(positions);
      double* row = &dz[t * V];
      for (std::size_t v = 0; v < V; ++v) {
        const double p = std::exp(lp[v]);
        row[v] = w[t] * p + kl_scale * p * ((lp[v] - lr[v]) - kl_t);
      }
      row[c.response[t]] -= w[t];
    }
    model.backward(params, live, dz, out.gradient);
  }
  out.loss = -(out.surrogate - config.kl_coeff * out.kl);
  return out;
}

}  // namespace ctxalign::objectives
