#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctxalign/vocab.hpp"

namespace ctxalign::policy {

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t query_roles = 2;  // entity, relation
  std::size_t doc_roles = 5;    // entity, relation, value, source, filler (clamped)
  std::size_t max_seq_len = 352;
  double embed_scale = 1.0;
  // Query-memory term trainable. Off: its gate starts at 0, a fixed point with
  // zero gradient, so answers must come from the context.
  bool query_memory = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct SegmentSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;

  std::size_t size() const;
  bool operator==(const SegmentSpec&) const = default;
};

// Named, shaped segments over one flat parameter array. Immutable once built.
class Layout {
 public:
  explicit Layout(std::vector<SegmentSpec> segments);

  const std::vector<SegmentSpec>& segments() const { return segments_; }
  const SegmentSpec& segment(std::string_view name) const;
  std::size_t total() const { return total_; }

  nlohmann::json to_json() const;
  static Layout from_json(const nlohmann::json& j);
  bool operator==(const Layout& other) const { return segments_ == other.segments_; }

 private:
  std::vector<SegmentSpec> segments_;
  std::size_t total_ = 0;
};

class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(std::shared_ptr<const Layout> layout);

  const Layout& layout() const { return *layout_; }
  const std::shared_ptr<const Layout>& layout_ptr() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;

  bool all_finite() const;
  bool same_layout(const ParameterVector& other) const;
  ParameterVector zeros_like() const { return ParameterVector(layout_); }

  ParameterVector& operator+=(const ParameterVector& other);
  ParameterVector& operator*=(double s);
  void add_scaled(const ParameterVector& other, double s);

  // Bitwise comparison of the values; layouts must match.
  bool bit_identical(const ParameterVector& other) const;

 private:
  std::shared_ptr<const Layout> layout_;
  std::vector<double> values_;
};

enum class SnapshotTag { Reference, Old };

std::string to_string(SnapshotTag tag);

// Frozen deep copy of a parameter vector.
class PolicySnapshot {
 public:
  PolicySnapshot(ParameterVector params, SnapshotTag tag) : params_(std::move(params)), tag_(tag) {}

  const ParameterVector& parameters() const { return params_; }
  SnapshotTag tag() const { return tag_; }

 private:
  ParameterVector params_;
  SnapshotTag tag_;
};

PolicySnapshot snapshot(const ParameterVector& params, SnapshotTag tag);
PolicySnapshot snapshot(const PolicySnapshot& source);

struct SampleOutput {
  TokenSeq tokens;
  std::vector<double> token_logprobs;  // untempered, unmasked model log-probs
  double total_logprob = 0.0;
  bool truncated = false;  // no EOS within the budget
};

// Fills `allowed` (size |V|, 1 = allowed) given the tokens generated so far.
using DecodeConstraint = std::function<void(std::span<const TokenId> generated, std::vector<std::uint8_t>& allowed)>;

// Below this temperature sampling is greedy (argmax, lowest id on ties).
inline constexpr double kGreedyTemperature = 1e-8;

// Cached prompt encoding: document match scores, attention, value readout.
struct Encoding {
  std::size_t n_docs = 0;
  std::vector<std::vector<std::vector<TokenId>>> doc_role_tokens;  // [doc][role] -> tokens
  std::vector<std::vector<TokenId>> query_role_tokens;             // [role] -> tokens
  std::vector<double> psi;    // query roles x dim
  std::vector<double> phi;    // docs x roles x dim
  std::vector<double> chi;    // roles x dim
  std::vector<double> scores; // docs (match scores s)
  std::vector<double> attn;   // docs
  std::vector<double> vdoc;   // docs x dim
  std::vector<double> readout;     // dim
  std::vector<double> out_readout; // vocab (O * readout)
  std::vector<double> mem_feature; // dim (query memory feature)
  std::vector<double> out_memory;  // vocab (M * mem_feature)
};

// Teacher-forced pass over (prompt, response).
struct Forward {
  Encoding enc;
  TokenSeq prev;                 // conditioning token per response position
  std::vector<double> logprobs;  // T x V log-softmax rows
  std::vector<double> token_logprobs;  // T

  std::size_t positions() const { return prev.size(); }
};

// Segment-attention pointer model. The prompt is parsed into a query (tokens
// between BOS and the first SEP) and documents (tokens after each SEP); each
// document receives a match score from tied-embedding comparisons with the
// query plus learned per-role terms; attention over documents feeds a value
// readout. Each response position conditions on its previous token: a bigram
// term, a readout term gated by the previous token's class, and, after a
// document-id token, that document's match score. An optional query-memory
// term lets the model answer from parameters alone (entity x relation feature).
class PolicyModel {
 public:
  PolicyModel(Vocabulary vocab, ModelConfig config);

  const Vocabulary& vocab() const { return vocab_; }
  const ModelConfig& config() const { return config_; }
  const std::shared_ptr<const Layout>& layout() const { return layout_; }
  std::size_t vocab_size() const { return vocab_.size(); }

  // Embeddings ~ N(0, embed_scale^2); output layers zero, so the initial
  // next-token distribution is uniform at every position.
  ParameterVector init_parameters(std::uint64_t seed) const;

  Encoding encode(const ParameterVector& params, std::span<const TokenId> prompt) const;
  Forward forward(const ParameterVector& params, std::span<const TokenId> prompt,
                  std::span<const TokenId> response) const;
  // Accumulates d(loss)/d(params) into grad given d(loss)/d(logits), T x V.
  void backward(const ParameterVector& params, const Forward& fwd, std::span<const double> dlogits,
                ParameterVector& grad) const;

  std::vector<double> token_logprobs(const ParameterVector& params, std::span<const TokenId> prompt,
                                     std::span<const TokenId> response) const;
  // Sum of token log-probs; the response must end with EOS.
  double sequence_logprob(const ParameterVector& params, std::span<const TokenId> prompt,
                          std::span<const TokenId> response) const;
  // log P(continuation | prompt, prefix) under teacher forcing.
  double conditional_logprob(const ParameterVector& params, std::span<const TokenId> prompt,
                             std::span<const TokenId> prefix, std::span<const TokenId> continuation) const;
  ParameterVector logprob_gradient(const ParameterVector& params, std::span<const TokenId> prompt,
                                   std::span<const TokenId> response) const;
  // grad += scale * d/dparams sum_t log P(response_t | ...); returns the log-prob.
  double accumulate_logprob_gradient(const ParameterVector& params, std::span<const TokenId> prompt,
                                     std::span<const TokenId> response, double scale,
                                     ParameterVector& grad) const;

  SampleOutput sample(const ParameterVector& params, std::span<const TokenId> prompt, double temperature,
                      std::size_t max_new, std::uint64_t seed, const DecodeConstraint* constraint = nullptr) const;

  void check_inputs(std::span<const TokenId> prompt, std::span<const TokenId> response) const;

 private:
  struct Offsets {
    std::size_t embed, alpha, w, T, gamma, out_O, out_H, out_class, out_bias, gate, rel_m, mem, mem_gate;
  };

  void position_logits(std::span<const double> p, const Encoding& enc, TokenId prev, double* z) const;

  Vocabulary vocab_;
  ModelConfig config_;
  std::shared_ptr<const Layout> layout_;
  Offsets off_{};
};

struct Checkpoint {
  PolicyModel model;
  ParameterVector params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Text header line (magic + version), a JSON descriptor line (vocabulary,
// model config, layout), then the flat parameter array as little-endian
// IEEE-754 doubles.
void write_checkpoint(std::ostream& out, const PolicyModel& model, const ParameterVector& params);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const PolicyModel& model, const ParameterVector& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ctxalign::policy
