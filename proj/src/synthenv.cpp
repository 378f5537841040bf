#include "ctxalign/synthenv.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "ctxalign/rng.hpp"

namespace ctxalign::synthenv {

std::string to_string(DocKind kind) {
  switch (kind) {
    case DocKind::Gold: return "gold";
    case DocKind::Distractor: return "distractor";
    case DocKind::Conflicting: return "conflicting";
  }
  return "unknown";
}

DocKind parse_doc_kind(const std::string& name) {
  if (name == "gold") return DocKind::Gold;
  if (name == "distractor") return DocKind::Distractor;
  if (name == "conflicting") return DocKind::Conflicting;
  throw std::invalid_argument("unknown document kind '" + name + "'");
}

std::string to_string(GoldPosition p) {
  switch (p) {
    case GoldPosition::UniformRandom: return "uniform";
    case GoldPosition::Front: return "front";
    case GoldPosition::Back: return "back";
    case GoldPosition::Middle: return "middle";
  }
  return "unknown";
}

GoldPosition parse_gold_position(const std::string& name) {
  if (name == "uniform") return GoldPosition::UniformRandom;
  if (name == "front") return GoldPosition::Front;
  if (name == "back") return GoldPosition::Back;
  if (name == "middle") return GoldPosition::Middle;
  throw std::invalid_argument("unknown gold position policy '" + name + "'");
}

std::size_t doc_prompt_length(const GenConfig& config) { return 1 + 4 + config.filler_per_doc; }

std::size_t context_length(const GenConfig& config) {
  return 1 + 2 + config.K * doc_prompt_length(config);
}

void GenConfig::validate() const {
  auto fraction = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (K < 1) throw std::invalid_argument("GenConfig: K must be >= 1");
  if (K_std < 1) throw std::invalid_argument("GenConfig: K_std must be >= 1");
  if (n_gold > K) throw std::invalid_argument("GenConfig: n_gold exceeds K");
  if (vocab_size < 10) throw std::invalid_argument("GenConfig: vocab_size must be >= 10");
  if (!fraction(conflict_fraction) || !fraction(hard_distractor_fraction) || !fraction(reranker_noise) ||
      !fraction(trust_fidelity)) {
    throw std::invalid_argument("GenConfig: fractions must lie in [0, 1]");
  }
  if (saturate) {
    if (K < 2 * K_std) throw std::invalid_argument("GenConfig: saturation requires K >= 2 * K_std");
    if (static_cast<double>(context_length(*this)) < 0.8 * static_cast<double>(max_seq_len)) {
      throw std::invalid_argument("GenConfig: saturated context must fill >= 80% of max_seq_len");
    }
  }
}

nlohmann::json GenConfig::to_json() const {
  return {{"K", K},
          {"K_std", K_std},
          {"n_gold", n_gold},
          {"conflict_fraction", conflict_fraction},
          {"hard_distractor_fraction", hard_distractor_fraction},
          {"vocab_size", vocab_size},
          {"gold_position_policy", to_string(gold_position_policy)},
          {"seed", seed},
          {"reranker_noise", reranker_noise},
          {"n_facts", n_facts},
          {"filler_per_doc", filler_per_doc},
          {"trust_fidelity", trust_fidelity},
          {"saturate", saturate},
          {"max_seq_len", max_seq_len}};
}

GenConfig GenConfig::from_json(const nlohmann::json& j) {
  GenConfig c;
  c.K = j.value("K", c.K);
  c.K_std = j.value("K_std", c.K_std);
  c.n_gold = j.value("n_gold", c.n_gold);
  c.conflict_fraction = j.value("conflict_fraction", c.conflict_fraction);
  c.hard_distractor_fraction = j.value("hard_distractor_fraction", c.hard_distractor_fraction);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  if (j.contains("gold_position_policy")) {
    c.gold_position_policy = parse_gold_position(j.at("gold_position_policy").get<std::string>());
  }
  c.seed = j.value("seed", c.seed);
  c.reranker_noise = j.value("reranker_noise", c.reranker_noise);
  c.n_facts = j.value("n_facts", c.n_facts);
  c.filler_per_doc = j.value("filler_per_doc", c.filler_per_doc);
  c.trust_fidelity = j.value("trust_fidelity", c.trust_fidelity);
  c.saturate = j.value("saturate", c.saturate);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  return c;
}

bool World::is_trusted(TokenId relation, TokenId source) const {
  const TokenRange& rels = vocab.role(ContentRole::Relation);
  const TokenRange& srcs = vocab.role(ContentRole::Source);
  if (!rels.contains(relation) || !srcs.contains(source)) return false;
  return trusted[relation - rels.begin][source - srcs.begin];
}

std::optional<TokenId> World::value_of(TokenId entity, TokenId relation) const {
  auto it = std::lower_bound(facts.begin(), facts.end(), Fact{entity, relation, 0});
  if (it != facts.end() && it->entity == entity && it->relation == relation) return it->value;
  return std::nullopt;
}

World generate_world(const GenConfig& config) {
  if (config.vocab_size < 10) throw std::invalid_argument("generate_world: vocab_size must be >= 10");
  World world{Vocabulary(config.vocab_size, config.K), {}, {}};
  const Vocabulary& v = world.vocab;
  const TokenRange ents = v.role(ContentRole::Entity);
  const TokenRange rels = v.role(ContentRole::Relation);
  const TokenRange vals = v.role(ContentRole::Value);
  const TokenRange srcs = v.role(ContentRole::Source);

  const std::size_t capacity = ents.size() * rels.size();
  const std::size_t wanted = config.n_facts == 0 ? capacity : config.n_facts;
  if (wanted > capacity) {
    throw std::invalid_argument("generate_world: vocabulary supports " + std::to_string(capacity) +
                                " facts, " + std::to_string(wanted) + " requested");
  }

  Rng rng(derive_seed(config.seed, "world"));
  std::vector<std::pair<TokenId, TokenId>> keys;
  keys.reserve(capacity);
  for (std::size_t e = 0; e < ents.size(); ++e) {
    for (std::size_t r = 0; r < rels.size(); ++r) keys.emplace_back(ents.at(e), rels.at(r));
  }
  if (wanted < capacity) {
    rng.shuffle(keys);
    keys.resize(wanted);
    std::sort(keys.begin(), keys.end());
  }
  world.facts.reserve(keys.size());
  for (auto [e, r] : keys) world.facts.push_back({e, r, vals.at(rng.below(vals.size()))});

  world.trusted.assign(rels.size(), std::vector<bool>(srcs.size(), false));
  for (std::size_t r = 0; r < rels.size(); ++r) {
    std::vector<std::size_t> order(srcs.size());
    for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
    rng.shuffle(order);
    for (std::size_t s = 0; s < (srcs.size() + 1) / 2; ++s) world.trusted[r][order[s]] = true;
  }
  return world;
}

namespace {

std::pair<std::size_t, std::size_t> gold_region(GoldPosition policy, std::size_t K) {
  const std::size_t third = K / 3;
  switch (policy) {
    case GoldPosition::Front: return {0, std::max<std::size_t>(1, third)};
    case GoldPosition::Back: return {K - std::max<std::size_t>(1, third), K};
    case GoldPosition::Middle:
      if (K - third > third) return {third, K - third};
      return {0, K};
    case GoldPosition::UniformRandom: break;
  }
  return {0, K};
}

TokenId pick_source(const World& world, TokenId relation, bool want_trusted, Rng& rng) {
  const TokenRange srcs = world.vocab.role(ContentRole::Source);
  std::vector<TokenId> options;
  for (std::size_t s = 0; s < srcs.size(); ++s) {
    if (world.is_trusted(relation, srcs.at(s)) == want_trusted) options.push_back(srcs.at(s));
  }
  return options[rng.below(options.size())];
}

}  // namespace

Task generate_task(const World& world, std::span<const Fact> pool, const GenConfig& config,
                   std::uint64_t task_id) {
  if (config.n_gold > config.K) throw std::invalid_argument("generate_task: n_gold exceeds K");
  if (pool.empty() || world.facts.empty()) throw std::invalid_argument("generate_task: empty fact pool");
  if (config.K > world.vocab.max_docs()) {
    throw std::invalid_argument("generate_task: K exceeds the world's document-id range");
  }

  const Vocabulary& v = world.vocab;
  const TokenRange vals = v.role(ContentRole::Value);
  const TokenRange srcs = v.role(ContentRole::Source);
  const TokenRange fills = v.role(ContentRole::Filler);

  Task task;
  task.id = task_id;
  task.seed = mix_seed(derive_seed(config.seed, "task"), task_id);
  Rng rng(task.seed);

  const Fact target = pool[rng.below(pool.size())];
  task.query = {target.entity, target.relation};
  task.gold_answer = {target.value};

  auto make_doc = [&](const Fact& f, TokenId source, DocKind kind) {
    Document d;
    d.kind = kind;
    d.tokens = {f.entity, f.relation, f.value, source};
    for (std::size_t i = 0; i < config.filler_per_doc; ++i) d.tokens.push_back(fills.at(rng.below(fills.size())));
    return d;
  };

  std::vector<Document> golds;
  for (std::size_t i = 0; i < config.n_gold; ++i) {
    const bool trusted = rng.bernoulli(config.trust_fidelity);
    golds.push_back(make_doc(target, pick_source(world, target.relation, trusted, rng), DocKind::Gold));
  }

  const std::size_t non_gold = config.K - config.n_gold;
  const auto n_conf = static_cast<std::size_t>(std::llround(config.conflict_fraction * static_cast<double>(non_gold)));
  const std::size_t n_dist = non_gold - std::min(n_conf, non_gold);

  std::vector<Document> others;
  for (std::size_t i = 0; i < n_conf && i < non_gold; ++i) {
    TokenId wrong = target.value;
    while (wrong == target.value) wrong = vals.at(rng.below(vals.size()));
    const bool untrusted = rng.bernoulli(config.trust_fidelity);
    Fact f{target.entity, target.relation, wrong};
    others.push_back(make_doc(f, pick_source(world, target.relation, !untrusted, rng), DocKind::Conflicting));
  }

  std::vector<Fact> same_entity;
  for (const Fact& f : world.facts) {
    if (f.entity == target.entity && f.relation != target.relation) same_entity.push_back(f);
  }
  const auto n_hard = same_entity.empty()
                          ? std::size_t{0}
                          : static_cast<std::size_t>(std::llround(config.hard_distractor_fraction *
                                                                  static_cast<double>(n_dist)));
  for (std::size_t i = 0; i < n_dist; ++i) {
    Fact f;
    if (i < n_hard) {
      f = same_entity[rng.below(same_entity.size())];
    } else {
      do {
        f = world.facts[rng.below(world.facts.size())];
      } while (f.entity == target.entity && f.relation == target.relation && world.facts.size() > 1);
      if (f.entity == target.entity && f.relation == target.relation) {
        throw std::invalid_argument("generate_task: world has no fact usable as a distractor");
      }
    }
    others.push_back(make_doc(f, srcs.at(rng.below(srcs.size())), DocKind::Distractor));
  }
  rng.shuffle(others);

  // Choose gold slots inside the policy region, spill over uniformly if needed.
  const auto [lo, hi] = gold_region(config.gold_position_policy, config.K);
  std::vector<std::size_t> region, rest;
  for (std::size_t i = 0; i < config.K; ++i) (i >= lo && i < hi ? region : rest).push_back(i);
  rng.shuffle(region);
  rng.shuffle(rest);
  std::vector<std::size_t> gold_slots;
  for (std::size_t i = 0; i < config.n_gold; ++i) {
    if (i < region.size()) {
      gold_slots.push_back(region[i]);
    } else {
      gold_slots.push_back(rest[i - region.size()]);
    }
  }
  std::sort(gold_slots.begin(), gold_slots.end());

  task.corpus.resize(config.K);
  std::vector<bool> taken(config.K, false);
  for (std::size_t i = 0; i < gold_slots.size(); ++i) {
    task.corpus[gold_slots[i]] = std::move(golds[i]);
    taken[gold_slots[i]] = true;
  }
  std::size_t next = 0;
  for (std::size_t i = 0; i < config.K; ++i) {
    if (!taken[i]) task.corpus[i] = std::move(others[next++]);
  }
  for (std::size_t i = 0; i < config.K; ++i) task.corpus[i].id = static_cast<std::uint32_t>(i);
  task.gold_positions = gold_slots;
  task.reranker_scores = rerank(task, config.reranker_noise);
  return task;
}

Task generate_task(const World& world, const GenConfig& config, std::uint64_t task_id) {
  return generate_task(world, world.facts, config, task_id);
}

std::vector<double> rerank(const Task& task, double noise) {
  if (!(noise >= 0.0 && noise <= 1.0)) throw std::invalid_argument("rerank: noise must lie in [0, 1]");
  Rng rng(derive_seed(task.seed, "rerank"));
  std::vector<double> scores;
  scores.reserve(task.corpus.size());
  for (const Document& d : task.corpus) {
    const double u = rng.uniform();
    const bool flip = rng.bernoulli(noise);
    double s = d.kind == DocKind::Gold ? 0.55 + 0.45 * u : 0.45 * u;
    if (flip) s = 1.0 - s;
    scores.push_back(s);
  }
  return scores;
}

nlohmann::json task_to_json(const Task& task, const Vocabulary& vocab) {
  nlohmann::json docs = nlohmann::json::array();
  for (const Document& d : task.corpus) {
    nlohmann::json jd = {{"id", d.id}, {"kind", to_string(d.kind)}, {"tokens", vocab.join(d.tokens)}};
    if (d.attachment) jd["attachment"] = *d.attachment;
    docs.push_back(std::move(jd));
  }
  return {{"id", task.id},
          {"query", vocab.join(task.query)},
          {"gold_answer", vocab.join(task.gold_answer)},
          {"documents", std::move(docs)},
          {"reranker_scores", task.reranker_scores},
          {"seed", task.seed}};
}

Task task_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  Task t;
  t.id = j.at("id").get<std::uint64_t>();
  t.query = vocab.parse(j.at("query").get<std::string>());
  t.gold_answer = vocab.parse(j.at("gold_answer").get<std::string>());
  for (const auto& jd : j.at("documents")) {
    Document d;
    d.id = jd.at("id").get<std::uint32_t>();
    d.kind = parse_doc_kind(jd.at("kind").get<std::string>());
    d.tokens = vocab.parse(jd.at("tokens").get<std::string>());
    if (jd.contains("attachment")) d.attachment = jd.at("attachment").get<std::string>();
    if (d.kind == DocKind::Gold) t.gold_positions.push_back(t.corpus.size());
    t.corpus.push_back(std::move(d));
  }
  t.reranker_scores = j.at("reranker_scores").get<std::vector<double>>();
  t.seed = j.at("seed").get<std::uint64_t>();
  if (t.reranker_scores.size() != t.corpus.size()) {
    throw std::runtime_error("task record: reranker_scores length differs from corpus size");
  }
  return t;
}

void write_tasks(std::ostream& out, std::span<const Task> tasks, const Vocabulary& vocab) {
  for (const Task& t : tasks) out << task_to_json(t, vocab).dump() << '\n';
}

std::vector<Task> read_tasks(std::istream& in, const Vocabulary& vocab) {
  std::vector<Task> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    tasks.push_back(task_from_json(nlohmann::json::parse(line), vocab));
  }
  return tasks;
}

}  // namespace ctxalign::synthenv
