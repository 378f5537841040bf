#include "ctxalign/dataforge.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>

#include "ctxalign/grammar.hpp"
#include "ctxalign/objectives.hpp"
#include "ctxalign/rng.hpp"

namespace ctxalign {

std::string to_string(SampleType t) {
  switch (t) {
    case SampleType::Type1: return "type1";
    case SampleType::Type2: return "type2";
    case SampleType::Type3: return "type3";
    case SampleType::Type4: return "type4";
  }
  return "unknown";
}

SampleType parse_sample_type(const std::string& name) {
  if (name == "type1") return SampleType::Type1;
  if (name == "type2") return SampleType::Type2;
  if (name == "type3") return SampleType::Type3;
  if (name == "type4") return SampleType::Type4;
  throw std::invalid_argument("unknown sample type '" + name + "'");
}

std::string to_string(Pairing p) { return p == Pairing::Standard ? "standard" : "adversarial"; }

Pairing parse_pairing(const std::string& name) {
  if (name == "standard") return Pairing::Standard;
  if (name == "adversarial") return Pairing::Adversarial;
  throw std::invalid_argument("unknown pairing '" + name + "'");
}

}  // namespace ctxalign

namespace ctxalign::dataforge {

using metrics::Label;

SftBuild build_sft_dataset(const Vocabulary& vocab, std::span<const RawInstance> instances, std::size_t max_len) {
  if (instances.empty()) throw std::invalid_argument("build_sft_dataset: no instances");
  SftBuild out;
  for (const auto& inst : instances) {
    const auto& task = inst.task;
    const std::size_t target_len = inst.gold_answer.size() + 2;
    std::vector<synthenv::Document> docs = task.corpus;
    std::size_t length = 1 + task.query.size() + target_len;
    for (const auto& d : docs) length += 1 + d.tokens.size();
    bool dropped = false;
    // Drop non-gold documents from the tail until the sample fits.
    for (std::size_t i = docs.size(); i-- > 0 && length > max_len;) {
      if (docs[i].kind == synthenv::DocKind::Gold) continue;
      length -= 1 + docs[i].tokens.size();
      docs.erase(docs.begin() + static_cast<std::ptrdiff_t>(i));
      dropped = true;
    }
    if (length > max_len || docs.empty()) {
      out.rejects.push_back({task.id, docs.empty() ? "no document fits within max_len"
                                                   : "gold documents alone exceed max_len"});
      continue;
    }
    out.truncated += dropped ? 1 : 0;
    out.samples.push_back({task.id, serialize_prompt(vocab, task.query, docs), inst.gold_answer});
  }
  return out;
}

std::string to_string(GenSource s) { return s == GenSource::BasePolicy ? "base_policy" : "synthetic_oracle"; }

std::optional<SampleType> categorize(const GenRecord& record, const metrics::ThresholdPolicy& policy) {
  const Label label = metrics::classify(record.score_kind, record.score, policy);
  if (label == Label::Ambiguous) return std::nullopt;
  const bool positive = label == Label::Positive;
  if (record.knowledge_correct) return positive ? SampleType::Type1 : SampleType::Type4;
  return positive ? SampleType::Type3 : SampleType::Type2;
}

TokenSeq SyntheticOracle::respond(const Vocabulary& vocab, const synthenv::Task& task) const {
  std::vector<double> relevance;
  for (double s : task.reranker_scores) relevance.push_back(s > 0.5 ? 1.0 : 0.0);
  return render_response(vocab, relevance, task.gold_answer);
}

metrics::Score score_response(const Vocabulary& vocab, std::span<const TokenId> response, const synthenv::Task& task,
                              metrics::ScoreKind kind) {
  const auto parsed = objectives::parse_response(vocab, response, task.K());
  if (!parsed.well_formed) return metrics::Score(0.0);
  try {
    return metrics::score(kind, vocab.strings(parsed.answer), vocab.strings(task.gold_answer));
  } catch (const metrics::UnusableSample&) {
    return metrics::Score(0.0);
  }
}

std::vector<GenRecord> sample_generations(const policy::PolicyModel& model, const policy::ParameterVector& params,
                                          const synthenv::Task& task, std::size_t n, const SyntheticOracle& oracle,
                                          const GenerationOptions& options) {
  if (n == 0) throw std::invalid_argument("sample_generations: n must be >= 1");
  const Vocabulary& vocab = model.vocab();
  const TokenSeq prompt = serialize_prompt(vocab, task);
  const ResponseGrammar grammar(vocab, task.K(), options.max_answer_tokens);
  const auto constraint = grammar.constraint();
  const std::uint64_t base = mix_seed(derive_seed(options.seed, "generations"), task.id);

  std::vector<GenRecord> out;
  bool any_positive = false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = model.sample(params, prompt, options.temperature, grammar.max_length(), mix_seed(base, i),
                                &constraint);
    GenRecord r;
    r.task_id = task.id;
    r.response = s.tokens;
    r.score_kind = options.score_kind;
    r.knowledge_correct = task.knowledge_correct();
    r.score = s.truncated ? metrics::Score(0.0) : score_response(vocab, s.tokens, task, options.score_kind);
    any_positive |= metrics::classify(r.score_kind, r.score, options.thresholds) == Label::Positive;
    out.push_back(std::move(r));
  }
  if (!any_positive && task.knowledge_correct()) {
    GenRecord r;
    r.task_id = task.id;
    r.response = oracle.respond(vocab, task);
    r.score_kind = options.score_kind;
    r.knowledge_correct = true;
    r.source = GenSource::SyntheticOracle;
    r.score = score_response(vocab, r.response, task, options.score_kind);
    out.push_back(std::move(r));
  }
  return out;
}

void TypeHistogram::add(const GenRecord& record, const metrics::ThresholdPolicy& policy) {
  ++total;
  if (record.source == GenSource::SyntheticOracle) ++oracle;
  const auto t = categorize(record, policy);
  if (!t) {
    ++ambiguous;
    return;
  }
  ++counts[static_cast<std::size_t>(*t)];
}

nlohmann::json TypeHistogram::to_json() const {
  return {{"type1", counts[0]}, {"type2", counts[1]}, {"type3", counts[2]},   {"type4", counts[3]},
          {"ambiguous_discarded", ambiguous}, {"oracle_records", oracle}, {"total", total}};
}

std::vector<PreferencePair> build_preference_pairs(std::span<const TaskRecords> groups,
                                                   const metrics::ThresholdPolicy& policy, std::size_t cap) {
  std::vector<const TaskRecords*> order;
  for (const auto& g : groups) order.push_back(&g);
  std::stable_sort(order.begin(), order.end(),
                   [](const TaskRecords* a, const TaskRecords* b) { return a->task_id < b->task_id; });

  std::vector<PreferencePair> out;
  for (const TaskRecords* g : order) {
    const SampleType win_type = g->knowledge_correct ? SampleType::Type1 : SampleType::Type3;
    const SampleType lose_type = g->knowledge_correct ? SampleType::Type4 : SampleType::Type2;
    std::vector<const GenRecord*> winners, losers;
    for (const auto& r : g->records) {
      if (r.knowledge_correct != g->knowledge_correct) {
        throw std::invalid_argument("build_preference_pairs: inconsistent knowledge_correct within a task");
      }
      const auto t = categorize(r, policy);
      if (t == win_type) winners.push_back(&r);
      if (t == lose_type) losers.push_back(&r);
    }
    std::set<std::pair<TokenSeq, TokenSeq>> seen;
    std::size_t emitted = 0;
    for (const GenRecord* w : winners) {
      for (const GenRecord* l : losers) {
        if (emitted >= cap) break;
        if (w->response == l->response || !seen.insert({w->response, l->response}).second) continue;
        PreferencePair p;
        p.task_id = g->task_id;
        p.prompt = g->prompt;
        p.winner = w->response;
        p.loser = l->response;
        p.pairing = g->knowledge_correct ? Pairing::Standard : Pairing::Adversarial;
        p.sample_types = {win_type, lose_type};
        out.push_back(std::move(p));
        ++emitted;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- JSONL

void write_sft(std::ostream& out, std::span<const SftSample> samples, const Vocabulary& vocab) {
  for (const auto& s : samples) {
    const nlohmann::json j = {{"task_id", s.task_id}, {"prompt", vocab.join(s.prompt)}, {"target", vocab.join(s.target)}};
    out << j.dump() << '\n';
  }
}

std::vector<SftSample> read_sft(std::istream& in, const Vocabulary& vocab) {
  std::vector<SftSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.value("task_id", std::uint64_t{0}), vocab.parse(j.at("prompt").get<std::string>()),
                   vocab.parse(j.at("target").get<std::string>())});
  }
  return out;
}

void write_pairs(std::ostream& out, std::span<const PreferencePair> pairs, const Vocabulary& vocab) {
  for (const auto& p : pairs) {
    const nlohmann::json j = {{"task_id", p.task_id},
                              {"prompt", vocab.join(p.prompt)},
                              {"winner", vocab.join(p.winner)},
                              {"loser", vocab.join(p.loser)},
                              {"pairing", to_string(p.pairing)},
                              {"sample_types", {to_string(p.sample_types.first), to_string(p.sample_types.second)}}};
    out << j.dump() << '\n';
  }
}

std::vector<PreferencePair> read_pairs(std::istream& in, const Vocabulary& vocab) {
  std::vector<PreferencePair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PreferencePair p;
    p.task_id = j.value("task_id", std::uint64_t{0});
    p.prompt = vocab.parse(j.at("prompt").get<std::string>());
    p.winner = vocab.parse(j.at("winner").get<std::string>());
    p.loser = vocab.parse(j.at("loser").get<std::string>());
    p.pairing = parse_pairing(j.at("pairing").get<std::string>());
    const auto& types = j.at("sample_types");
    p.sample_types = {parse_sample_type(types.at(0).get<std::string>()),
                      parse_sample_type(types.at(1).get<std::string>())};
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace ctxalign::dataforge
