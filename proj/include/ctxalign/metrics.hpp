#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ctxalign::metrics {

// Thrown when an input normalizes to nothing and cannot be scored.
class UnusableSample : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ScoreKind { ExactMatch, TokenF1, RougeL, Accuracy };

std::string to_string(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view name);

// ExactMatch and Accuracy only produce 0 or 1 and classify without an
// ambiguous band.
inline bool is_binary(ScoreKind kind) {
  return kind == ScoreKind::ExactMatch || kind == ScoreKind::Accuracy;
}

class Score {
 public:
  explicit Score(double value);
  double value() const { return value_; }

 private:
  double value_;
};

struct ThresholdPolicy {
  double tau_pos = 0.75;
  double tau_neg = 0.5;

  void validate() const;
};

enum class Label { Positive, Negative, Ambiguous };

std::string to_string(Label label);

// Lowercases, treats punctuation as whitespace, and drops empty pieces. A
// single input token may expand into several normalized tokens.
std::vector<std::string> normalize(std::span<const std::string> tokens);

Score exact_match(std::span<const std::string> predicted, std::span<const std::string> gold);
Score token_f1(std::span<const std::string> predicted, std::span<const std::string> gold);
Score rouge_l(std::span<const std::string> predicted, std::span<const std::string> gold);
// 1 when the normalized gold occurs contiguously inside the normalized prediction.
Score accuracy(std::span<const std::string> predicted, std::span<const std::string> gold);

Score score(ScoreKind kind, std::span<const std::string> predicted, std::span<const std::string> gold);

// Positive iff score >= tau_pos; Negative iff score <= tau_neg.
Label classify_score(Score score, const ThresholdPolicy& policy);

// Kind-aware classification: binary kinds map 1 -> Positive, 0 -> Negative.
Label classify(ScoreKind kind, Score score, const ThresholdPolicy& policy);

// Length of the longest common subsequence of two normalized sequences.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

}  // namespace ctxalign::metrics
