#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace ctxalign {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

enum class TokenClass : std::uint8_t { Bos, Eos, Sep, Rel, Answer, Score, DocId, Content };
inline constexpr std::size_t kTokenClassCount = 8;

// Content tokens are partitioned by the role they play in the synthetic world.
enum class ContentRole : std::uint8_t { Entity, Relation, Value, Source, Filler };
inline constexpr std::size_t kContentRoleCount = 5;

// Quantized relevance levels emitted in structured responses.
inline constexpr std::array<double, 5> kScoreLevels = {0.0, 0.25, 0.5, 0.75, 1.0};

struct TokenRange {
  TokenId begin = 0;
  TokenId end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(TokenId t) const { return t >= begin && t < end; }
  TokenId at(std::size_t i) const { return begin + static_cast<TokenId>(i); }
};

// Word-level vocabulary: special tokens, quantized score tokens, document-id
// tokens, then content tokens grouped by role. Layout is a pure function of
// (content_size, max_docs), so indices are stable across serialization.
class Vocabulary {
 public:
  Vocabulary(std::size_t content_size, std::size_t max_docs);

  std::size_t size() const { return tokens_.size(); }
  std::size_t content_size() const { return content_size_; }
  std::size_t max_docs() const { return max_docs_; }

  const std::string& token(TokenId id) const;
  TokenId id(std::string_view token) const;  // throws std::out_of_range
  std::optional<TokenId> find(std::string_view token) const;
  bool contains(TokenId id) const { return id < tokens_.size(); }

  TokenClass cls(TokenId id) const { return classes_.at(id); }
  bool is_content(TokenId id) const { return contains(id) && classes_[id] == TokenClass::Content; }

  TokenId bos() const { return 0; }
  TokenId eos() const { return 1; }
  TokenId sep() const { return 2; }
  TokenId rel() const { return 3; }
  TokenId answer() const { return 4; }

  TokenId score_token(std::size_t level) const;
  std::optional<double> score_value(TokenId id) const;
  // Nearest quantized level for a real in [0, 1].
  TokenId quantize_score(double value) const;

  TokenId doc_token(std::size_t index) const;
  std::optional<std::size_t> doc_index(TokenId id) const;

  const TokenRange& role(ContentRole r) const { return roles_[static_cast<std::size_t>(r)]; }
  TokenRange content() const { return {content_begin_, static_cast<TokenId>(tokens_.size())}; }

  std::vector<std::string> strings(std::span<const TokenId> seq) const;
  std::string join(std::span<const TokenId> seq) const;
  TokenSeq parse(std::string_view text) const;  // whitespace separated

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::size_t content_size_;
  std::size_t max_docs_;
  TokenId score_begin_ = 0;
  TokenId doc_begin_ = 0;
  TokenId content_begin_ = 0;
  std::vector<std::string> tokens_;
  std::vector<TokenClass> classes_;
  std::array<TokenRange, kContentRoleCount> roles_{};
  std::unordered_map<std::string, TokenId> index_;
};

// Role sizes for a content vocabulary of `content_size` tokens.
struct ContentPartition {
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t values = 0;
  std::size_t sources = 0;
  std::size_t fillers = 0;
};
ContentPartition partition_content(std::size_t content_size);

}  // namespace ctxalign
