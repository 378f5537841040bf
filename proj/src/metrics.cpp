#include "ctxalign/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

namespace ctxalign::metrics {

std::string to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::ExactMatch: return "exact_match";
    case ScoreKind::TokenF1: return "token_f1";
    case ScoreKind::RougeL: return "rouge_l";
    case ScoreKind::Accuracy: return "accuracy";
  }
  return "unknown";
}

ScoreKind parse_score_kind(std::string_view name) {
  if (name == "exact_match") return ScoreKind::ExactMatch;
  if (name == "token_f1") return ScoreKind::TokenF1;
  if (name == "rouge_l") return ScoreKind::RougeL;
  if (name == "accuracy") return ScoreKind::Accuracy;
  throw std::invalid_argument("unknown score kind '" + std::string(name) + "'");
}

std::string to_string(Label label) {
  switch (label) {
    case Label::Positive: return "positive";
    case Label::Negative: return "negative";
    case Label::Ambiguous: return "ambiguous";
  }
  return "unknown";
}

Score::Score(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) throw std::out_of_range("score outside [0, 1]");
}

void ThresholdPolicy::validate() const {
  if (!(tau_neg >= 0.0 && tau_pos <= 1.0 && tau_neg <= tau_pos)) {
    throw std::invalid_argument("threshold policy requires 0 <= tau_neg <= tau_pos <= 1");
  }
}

std::vector<std::string> normalize(std::span<const std::string> tokens) {
  std::vector<std::string> out;
  for (const std::string& tok : tokens) {
    std::string cur;
    for (unsigned char c : tok) {
      if (std::isspace(c) || std::ispunct(c)) {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(static_cast<char>(std::tolower(c)));
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
  }
  return out;
}

namespace {

struct Normalized {
  std::vector<std::string> predicted;
  std::vector<std::string> gold;
};

Normalized prepare(std::span<const std::string> predicted, std::span<const std::string> gold) {
  Normalized n{normalize(predicted), normalize(gold)};
  if (n.predicted.empty() || n.gold.empty()) {
    throw UnusableSample("sequence is empty after normalization");
  }
  return n;
}

double harmonic(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

Score exact_match(std::span<const std::string> predicted, std::span<const std::string> gold) {
  const Normalized n = prepare(predicted, gold);
  return Score(n.predicted == n.gold ? 1.0 : 0.0);
}

Score token_f1(std::span<const std::string> predicted, std::span<const std::string> gold) {
  const Normalized n = prepare(predicted, gold);
  std::map<std::string, long> counts;
  for (const auto& t : n.gold) ++counts[t];
  long overlap = 0;
  for (const auto& t : n.predicted) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return Score(0.0);
  const double p = static_cast<double>(overlap) / static_cast<double>(n.predicted.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(n.gold.size());
  return Score(std::clamp(harmonic(p, r), 0.0, 1.0));
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Score rouge_l(std::span<const std::string> predicted, std::span<const std::string> gold) {
  const Normalized n = prepare(predicted, gold);
  const std::size_t lcs = lcs_length(n.predicted, n.gold);
  if (lcs == 0) return Score(0.0);
  const double p = static_cast<double>(lcs) / static_cast<double>(n.predicted.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(n.gold.size());
  return Score(std::clamp(harmonic(p, r), 0.0, 1.0));
}

Score accuracy(std::span<const std::string> predicted, std::span<const std::string> gold) {
  const Normalized n = prepare(predicted, gold);
  auto it = std::search(n.predicted.begin(), n.predicted.end(), n.gold.begin(), n.gold.end());
  return Score(it != n.predicted.end() ? 1.0 : 0.0);
}

Score score(ScoreKind kind, std::span<const std::string> predicted, std::span<const std::string> gold) {
  switch (kind) {
    case ScoreKind::ExactMatch: return exact_match(predicted, gold);
    case ScoreKind::TokenF1: return token_f1(predicted, gold);
    case ScoreKind::RougeL: return rouge_l(predicted, gold);
    case ScoreKind::Accuracy: return accuracy(predicted, gold);
  }
  throw std::invalid_argument("unknown score kind");
}

Label classify_score(Score s, const ThresholdPolicy& policy) {
  if (s.value() >= policy.tau_pos) return Label::Positive;
  if (s.value() <= policy.tau_neg) return Label::Negative;
  return Label::Ambiguous;
}

Label classify(ScoreKind kind, Score s, const ThresholdPolicy& policy) {
  if (is_binary(kind)) return s.value() >= 0.5 ? Label::Positive : Label::Negative;
  return classify_score(s, policy);
}

}  // namespace ctxalign::metrics
