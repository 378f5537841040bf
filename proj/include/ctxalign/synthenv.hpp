#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxalign/vocab.hpp"

namespace ctxalign::synthenv {

struct Fact {
  TokenId entity = 0;
  TokenId relation = 0;
  TokenId value = 0;

  auto operator<=>(const Fact&) const = default;
};

enum class DocKind { Gold, Distractor, Conflicting };

std::string to_string(DocKind kind);
DocKind parse_doc_kind(const std::string& name);

struct Document {
  std::uint32_t id = 0;
  TokenSeq tokens;  // entity relation value source filler...
  DocKind kind = DocKind::Distractor;
  // Opaque payload for non-text attachments. Carried, never read.
  std::optional<std::string> attachment;
};

struct Task {
  std::uint64_t id = 0;
  TokenSeq query;        // entity relation
  TokenSeq gold_answer;  // a*
  std::vector<Document> corpus;
  std::vector<std::size_t> gold_positions;
  std::vector<double> reranker_scores;
  std::uint64_t seed = 0;

  std::size_t K() const { return corpus.size(); }
  // D+ iff the corpus carries at least one gold document.
  bool knowledge_correct() const { return !gold_positions.empty(); }
};

enum class GoldPosition { UniformRandom, Front, Back, Middle };

std::string to_string(GoldPosition p);
GoldPosition parse_gold_position(const std::string& name);

struct GenConfig {
  std::size_t K = 20;
  std::size_t K_std = 5;
  std::size_t n_gold = 1;
  double conflict_fraction = 0.25;         // of the non-gold documents
  double hard_distractor_fraction = 0.25;  // distractors sharing the query entity
  std::size_t vocab_size = 200;            // content tokens
  GoldPosition gold_position_policy = GoldPosition::UniformRandom;
  std::uint64_t seed = 1;
  double reranker_noise = 0.0;
  std::size_t n_facts = 0;  // 0 = every (entity, relation) pair
  std::size_t filler_per_doc = 9;
  // Probability that a gold document carries a source trusted for its
  // relation (and that a conflicting one carries an untrusted source).
  double trust_fidelity = 1.0;
  bool saturate = true;
  std::size_t max_seq_len = 352;  // policy capacity the context saturates

  void validate() const;
  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
};

// A generated world: vocabulary, consistent facts, and for each relation the
// set of sources whose documents are trustworthy.
struct World {
  Vocabulary vocab;
  std::vector<Fact> facts;
  std::vector<std::vector<bool>> trusted;  // [relation index][source index]

  bool is_trusted(TokenId relation, TokenId source) const;
  std::optional<TokenId> value_of(TokenId entity, TokenId relation) const;
};

// Number of tokens a document occupies in a prompt (separator included).
std::size_t doc_prompt_length(const GenConfig& config);
// Prompt length for a K-document corpus: BOS + query + documents.
std::size_t context_length(const GenConfig& config);

World generate_world(const GenConfig& config);

// Builds one task around a fact drawn from `pool` (every fact must belong to
// `world`). The task seed is derived from (config.seed, task_id).
Task generate_task(const World& world, std::span<const Fact> pool, const GenConfig& config,
                   std::uint64_t task_id);
Task generate_task(const World& world, const GenConfig& config, std::uint64_t task_id = 0);

// Reference relevance scores from the oracle reranker: > 0.5 exactly for gold
// documents, each score flipped across 0.5 with probability `noise`.
std::vector<double> rerank(const Task& task, double noise = 0.0);

nlohmann::json task_to_json(const Task& task, const Vocabulary& vocab);
Task task_from_json(const nlohmann::json& j, const Vocabulary& vocab);
void write_tasks(std::ostream& out, std::span<const Task> tasks, const Vocabulary& vocab);
std::vector<Task> read_tasks(std::istream& in, const Vocabulary& vocab);

}  // namespace ctxalign::synthenv
