#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ctxalign/metrics.hpp"
#include "ctxalign/policy.hpp"
#include "ctxalign/records.hpp"
#include "ctxalign/synthenv.hpp"

namespace ctxalign::objectives {

using policy::ParameterVector;
using policy::PolicyModel;
using policy::PolicySnapshot;

struct LossAndGradient {
  double loss = 0.0;
  ParameterVector gradient;
};

struct DpoConfig {
  double beta = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
  static DpoConfig from_json(const nlohmann::json& j);
};

struct GrpoConfig {
  std::size_t group_size = 8;
  double epsilon = 0.2;
  double kl_coeff = 0.05;
  double w_ans = 1.0;
  double w_disc = 0.2;
  double consensus_threshold = 0.5;
  bool token_level_ratio = false;

  void validate() const;
  nlohmann::json to_json() const;
  static GrpoConfig from_json(const nlohmann::json& j);
};

struct RewardBreakdown {
  double r_ans = 0.0;
  double r_disc = 0.0;
  double total = 0.0;
};

struct AdvantageGroup {
  std::vector<double> rewards;
  std::vector<double> advantages;
  bool degenerate = false;
};

struct ParsedResponse {
  std::vector<double> relevance;
  TokenSeq answer;
  bool well_formed = false;
};

// Mean NLL of the framed targets [ANSWER, a*, EOS].
LossAndGradient sft_loss(const PolicyModel& model, const ParameterVector& params, std::span<const SftSample> batch);

// Loss and d/d(live log-probs) for a single pair. Inputs are sequence log-probs.
struct DpoPairTerms {
  double loss = 0.0;
  double margin = 0.0;     // beta * (delta_w - delta_l)
  double d_winner = 0.0;   // d loss / d log P_theta(winner)
  double d_loser = 0.0;
};
DpoPairTerms dpo_pair(double live_w, double live_l, double ref_w, double ref_l, double beta);

struct ReferenceLogprobs {
  double winner = 0.0;
  double loser = 0.0;
};
std::vector<ReferenceLogprobs> reference_logprobs(const PolicyModel& model, const PolicySnapshot& reference,
                                                  std::span<const PreferencePair> pairs);

LossAndGradient dpo_loss(const PolicyModel& model, const ParameterVector& params, const PolicySnapshot& reference,
                         std::span<const PreferencePair> pairs, const DpoConfig& config);
// Same, with reference log-probs computed up front (must align with pairs).
LossAndGradient dpo_loss(const PolicyModel& model, const ParameterVector& params,
                         std::span<const ReferenceLogprobs> reference, std::span<const PreferencePair> pairs,
                         const DpoConfig& config, std::vector<double>* margins = nullptr);

ParsedResponse parse_response(const Vocabulary& vocab, std::span<const TokenId> tokens, std::size_t K);
ParsedResponse parse_response(const Vocabulary& vocab, const policy::SampleOutput& sample, std::size_t K);

RewardBreakdown reward(const Vocabulary& vocab, const ParsedResponse& parsed, const synthenv::Task& task,
                       metrics::ScoreKind score_kind, const GrpoConfig& config);

AdvantageGroup advantages(std::span<const double> rewards);

// min(rho A, clip(rho, 1-eps, 1+eps) A) from log rho; ties go to the
// unclipped branch, whose derivative d/d(log rho) is rho A (clipped: 0).
struct SurrogateTerm {
  double value = 0.0;
  double d_log_ratio = 0.0;
  bool clipped = false;
};
SurrogateTerm clipped_surrogate(double log_ratio, double advantage, double epsilon);

struct GrpoCandidate {
  TokenSeq prompt;
  TokenSeq response;
  double advantage = 0.0;
};

struct GrpoTerms {
  double loss = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  std::size_t clipped = 0;
  ParameterVector gradient;
};

GrpoTerms grpo_loss(const PolicyModel& model, const ParameterVector& params, const PolicySnapshot& old,
                    const PolicySnapshot& reference, std::span<const GrpoCandidate> group, const GrpoConfig& config);

}  // namespace ctxalign::objectives
