#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ctxalign/policy.hpp"
#include "ctxalign/synthenv.hpp"
#include "ctxalign/vocab.hpp"

namespace ctxalign {

// Prompt layout: BOS query (SEP document)*.
TokenSeq serialize_prompt(const Vocabulary& vocab, std::span<const TokenId> query,
                          std::span<const synthenv::Document> docs);
TokenSeq serialize_prompt(const Vocabulary& vocab, const synthenv::Task& task);

// [ANSWER, answer..., EOS]: the tail of a structured response.
TokenSeq answer_suffix(const Vocabulary& vocab, std::span<const TokenId> answer);

// BOS (REL d_k s_k)*K ANSWER answer EOS, each relevance quantized.
TokenSeq render_response(const Vocabulary& vocab, std::span<const double> relevance,
                         std::span<const TokenId> answer);

// Structured response grammar for a K-document prompt. Documents are listed
// in prompt order; the answer is 1..max_answer_tokens content tokens.
class ResponseGrammar {
 public:
  ResponseGrammar(const Vocabulary& vocab, std::size_t K, std::size_t max_answer_tokens = 4);

  std::size_t K() const { return K_; }
  std::size_t max_answer_tokens() const { return max_answer_; }
  // Longest response the grammar admits.
  std::size_t max_length() const { return 1 + 3 * K_ + 1 + max_answer_ + 1; }

  void allowed(std::span<const TokenId> generated, std::vector<std::uint8_t>& mask) const;
  policy::DecodeConstraint constraint() const;

 private:
  const Vocabulary* vocab_;
  std::size_t K_;
  std::size_t max_answer_;
};

}  // namespace ctxalign
