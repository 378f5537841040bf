#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxalign/metrics.hpp"
#include "ctxalign/policy.hpp"
#include "ctxalign/records.hpp"
#include "ctxalign/synthenv.hpp"

namespace ctxalign::dataforge {

struct RawInstance {
  synthenv::Task task;
  TokenSeq gold_answer;

  explicit RawInstance(synthenv::Task t) : task(std::move(t)), gold_answer(task.gold_answer) {}
};

struct SftReject {
  std::uint64_t task_id = 0;
  std::string reason;
};

struct SftBuild {
  std::vector<SftSample> samples;
  std::vector<SftReject> rejects;
  std::size_t truncated = 0;  // samples that lost tail documents
};

// Serializes each instance into (prompt, a*). If prompt + framed target
// exceeds max_len, non-gold documents are dropped from the tail first.
SftBuild build_sft_dataset(const Vocabulary& vocab, std::span<const RawInstance> instances, std::size_t max_len);

enum class GenSource { BasePolicy, SyntheticOracle };

std::string to_string(GenSource s);

struct GenRecord {
  std::uint64_t task_id = 0;
  TokenSeq response;
  metrics::Score score{0.0};
  metrics::ScoreKind score_kind = metrics::ScoreKind::ExactMatch;
  bool knowledge_correct = false;
  GenSource source = GenSource::BasePolicy;
};

std::optional<SampleType> categorize(const GenRecord& record, const metrics::ThresholdPolicy& policy);

// Stand-in for a stronger model: verbalizes the gold answer through the
// response grammar, with relevance taken from the reranker.
struct SyntheticOracle {
  TokenSeq respond(const Vocabulary& vocab, const synthenv::Task& task) const;
};

struct GenerationOptions {
  double temperature = 1.0;
  std::uint64_t seed = 0;
  metrics::ScoreKind score_kind = metrics::ScoreKind::ExactMatch;
  metrics::ThresholdPolicy thresholds{};
  std::size_t max_answer_tokens = 4;
};

std::vector<GenRecord> sample_generations(const policy::PolicyModel& model, const policy::ParameterVector& params,
                                          const synthenv::Task& task, std::size_t n, const SyntheticOracle& oracle,
                                          const GenerationOptions& options);

// Scores a response against a*; malformed or unusable responses score 0.
metrics::Score score_response(const Vocabulary& vocab, std::span<const TokenId> response, const synthenv::Task& task,
                              metrics::ScoreKind kind);

struct TaskRecords {
  std::uint64_t task_id = 0;
  TokenSeq prompt;
  bool knowledge_correct = false;
  std::vector<GenRecord> records;
};

struct TypeHistogram {
  std::array<std::size_t, 4> counts{};
  std::size_t ambiguous = 0;
  std::size_t oracle = 0;
  std::size_t total = 0;

  void add(const GenRecord& record, const metrics::ThresholdPolicy& policy);
  nlohmann::json to_json() const;
};

inline constexpr std::size_t kDefaultPairCap = 4;

std::vector<PreferencePair> build_preference_pairs(std::span<const TaskRecords> groups,
                                                   const metrics::ThresholdPolicy& policy,
                                                   std::size_t cap = kDefaultPairCap);

void write_sft(std::ostream& out, std::span<const SftSample> samples, const Vocabulary& vocab);
std::vector<SftSample> read_sft(std::istream& in, const Vocabulary& vocab);
void write_pairs(std::ostream& out, std::span<const PreferencePair> pairs, const Vocabulary& vocab);
std::vector<PreferencePair> read_pairs(std::istream& in, const Vocabulary& vocab);

}  // namespace ctxalign::dataforge
