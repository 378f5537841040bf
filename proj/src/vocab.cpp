#include "ctxalign/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ctxalign {

ContentPartition partition_content(std::size_t n) {
  if (n < 10) throw std::invalid_argument("vocabulary needs at least 10 content tokens");
  ContentPartition p;
  p.relations = std::max<std::size_t>(2, n / 25);
  p.sources = std::max<std::size_t>(2, n / 16);
  p.values = std::max<std::size_t>(2, 3 * n / 10);
  p.fillers = std::max<std::size_t>(1, n / 10);
  const std::size_t used = p.relations + p.sources + p.values + p.fillers;
  if (used + 2 > n) throw std::invalid_argument("vocabulary too small for role partition");
  p.entities = n - used;
  return p;
}

Vocabulary::Vocabulary(std::size_t content_size, std::size_t max_docs)
    : content_size_(content_size), max_docs_(max_docs) {
  auto add = [this](std::string s, TokenClass c) {
    index_.emplace(s, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(s));
    classes_.push_back(c);
  };
  add("<bos>", TokenClass::Bos);
  add("<eos>", TokenClass::Eos);
  add("<sep>", TokenClass::Sep);
  add("<rel>", TokenClass::Rel);
  add("<ans>", TokenClass::Answer);

  score_begin_ = static_cast<TokenId>(tokens_.size());
  for (std::size_t i = 0; i < kScoreLevels.size(); ++i) {
    add("<s" + std::to_string(i) + ">", TokenClass::Score);
  }
  doc_begin_ = static_cast<TokenId>(tokens_.size());
  for (std::size_t i = 0; i < max_docs; ++i) {
    add("<d" + std::to_string(i) + ">", TokenClass::DocId);
  }

  content_begin_ = static_cast<TokenId>(tokens_.size());
  const ContentPartition p = partition_content(content_size);
  const std::array<std::pair<const char*, std::size_t>, kContentRoleCount> groups = {{
      {"e", p.entities},
      {"r", p.relations},
      {"v", p.values},
      {"src", p.sources},
      {"f", p.fillers},
  }};
  for (std::size_t g = 0; g < groups.size(); ++g) {
    TokenRange range;
    range.begin = static_cast<TokenId>(tokens_.size());
    for (std::size_t i = 0; i < groups[g].second; ++i) {
      add(groups[g].first + std::to_string(i), TokenClass::Content);
    }
    range.end = static_cast<TokenId>(tokens_.size());
    roles_[g] = range;
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (!contains(id)) throw std::out_of_range("token id " + std::to_string(id) + " out of vocabulary");
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  if (auto t = find(token)) return *t;
  throw std::out_of_range("unknown token '" + std::string(token) + "'");
}

TokenId Vocabulary::score_token(std::size_t level) const {
  if (level >= kScoreLevels.size()) throw std::out_of_range("score level");
  return score_begin_ + static_cast<TokenId>(level);
}

std::optional<double> Vocabulary::score_value(TokenId id) const {
  if (id < score_begin_ || id >= score_begin_ + kScoreLevels.size()) return std::nullopt;
  return kScoreLevels[id - score_begin_];
}

TokenId Vocabulary::quantize_score(double value) const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kScoreLevels.size(); ++i) {
    if (std::abs(kScoreLevels[i] - value) < std::abs(kScoreLevels[best] - value)) best = i;
  }
  return score_token(best);
}

TokenId Vocabulary::doc_token(std::size_t index) const {
  if (index >= max_docs_) throw std::out_of_range("document index exceeds vocabulary doc-id range");
  return doc_begin_ + static_cast<TokenId>(index);
}

std::optional<std::size_t> Vocabulary::doc_index(TokenId id) const {
  if (id < doc_begin_ || id >= doc_begin_ + max_docs_) return std::nullopt;
  return static_cast<std::size_t>(id - doc_begin_);
}

std::vector<std::string> Vocabulary::strings(std::span<const TokenId> seq) const {
  std::vector<std::string> out;
  out.reserve(seq.size());
  for (TokenId t : seq) out.push_back(token(t));
  return out;
}

std::string Vocabulary::join(std::span<const TokenId> seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += token(seq[i]);
  }
  return out;
}

TokenSeq Vocabulary::parse(std::string_view text) const {
  TokenSeq out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(id(word));
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  return {{"content_size", content_size_}, {"max_docs", max_docs_}, {"size", tokens_.size()}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v(j.at("content_size").get<std::size_t>(), j.at("max_docs").get<std::size_t>());
  if (j.contains("size") && j.at("size").get<std::size_t>() != v.size()) {
    throw std::runtime_error("vocabulary size mismatch in serialized descriptor");
  }
  return v;
}

}  // namespace ctxalign
