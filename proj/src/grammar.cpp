#include "ctxalign/grammar.hpp"

#include <algorithm>
#include <stdexcept>

namespace ctxalign {

TokenSeq serialize_prompt(const Vocabulary& vocab, std::span<const TokenId> query,
                          std::span<const synthenv::Document> docs) {
  TokenSeq out;
  out.push_back(vocab.bos());
  out.insert(out.end(), query.begin(), query.end());
  for (const auto& d : docs) {
    out.push_back(vocab.sep());
    out.insert(out.end(), d.tokens.begin(), d.tokens.end());
  }
  return out;
}

TokenSeq serialize_prompt(const Vocabulary& vocab, const synthenv::Task& task) {
  return serialize_prompt(vocab, task.query, task.corpus);
}

TokenSeq answer_suffix(const Vocabulary& vocab, std::span<const TokenId> answer) {
  TokenSeq out;
  out.push_back(vocab.answer());
  out.insert(out.end(), answer.begin(), answer.end());
  out.push_back(vocab.eos());
  return out;
}

TokenSeq render_response(const Vocabulary& vocab, std::span<const double> relevance,
                         std::span<const TokenId> answer) {
  TokenSeq out;
  out.push_back(vocab.bos());
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    out.push_back(vocab.rel());
    out.push_back(vocab.doc_token(k));
    out.push_back(vocab.quantize_score(relevance[k]));
  }
  const TokenSeq tail = answer_suffix(vocab, answer);
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

ResponseGrammar::ResponseGrammar(const Vocabulary& vocab, std::size_t K, std::size_t max_answer_tokens)
    : vocab_(&vocab), K_(K), max_answer_(max_answer_tokens) {
  if (K > vocab.max_docs()) throw std::invalid_argument("ResponseGrammar: K exceeds the document-id range");
  if (max_answer_tokens == 0) throw std::invalid_argument("ResponseGrammar: max_answer_tokens must be >= 1");
}

void ResponseGrammar::allowed(std::span<const TokenId> generated, std::vector<std::uint8_t>& mask) const {
  const Vocabulary& v = *vocab_;
  mask.assign(v.size(), 0);
  const std::size_t n = generated.size();
  if (n == 0) {
    mask[v.bos()] = 1;
    return;
  }
  const std::size_t block_end = 1 + 3 * K_;
  if (n < block_end) {
    const std::size_t k = (n - 1) / 3;
    switch ((n - 1) % 3) {
      case 0: mask[v.rel()] = 1; break;
      case 1: mask[v.doc_token(k)] = 1; break;
      default:
        for (std::size_t l = 0; l < kScoreLevels.size(); ++l) mask[v.score_token(l)] = 1;
    }
    return;
  }
  if (n == block_end) {
    mask[v.answer()] = 1;
    return;
  }
  const std::size_t answered = n - block_end - 1;
  if (answered >= 1) mask[v.eos()] = 1;
  if (answered < max_answer_) {
    const TokenRange c = v.content();
    std::fill(mask.begin() + c.begin, mask.begin() + c.end, 1);
  }
}

policy::DecodeConstraint ResponseGrammar::constraint() const {
  ResponseGrammar g = *this;
  return [g](std::span<const TokenId> generated, std::vector<std::uint8_t>& mask) { g.allowed(generated, mask); };
}

}  // namespace ctxalign
