#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "ctxalign/synthenv.hpp"

using namespace ctxalign;
using namespace ctxalign::synthenv;

namespace {

GenConfig config(std::uint64_t seed = 1) {
  GenConfig g;
  g.seed = seed;
  return g;
}

std::string serialize(const std::vector<Task>& tasks, const Vocabulary& vocab) {
  std::ostringstream out;
  write_tasks(out, tasks, vocab);
  return out.str();
}

}  // namespace

TEST_CASE("generate_world is deterministic and seed dependent") {
  const auto a = generate_world(config(1));
  const auto b = generate_world(config(1));
  const auto c = generate_world(config(2));
  CHECK(a.facts == b.facts);
  CHECK(a.facts != c.facts);
}

TEST_CASE("world facts are consistent") {
  const auto w = generate_world(config(3));
  std::set<std::pair<TokenId, TokenId>> keys;
  for (const auto& f : w.facts) {
    CHECK(keys.insert({f.entity, f.relation}).second);
    CHECK(w.value_of(f.entity, f.relation) == f.value);
  }
}

TEST_CASE("too many facts for the vocabulary is an error") {
  GenConfig g = config();
  g.vocab_size = 10;
  g.n_facts = 1000000;
  g.K = 2;
  g.K_std = 1;
  g.saturate = false;
  CHECK_THROWS(generate_world(g));
  g.vocab_size = 9;
  g.n_facts = 0;
  CHECK_THROWS(generate_world(g));
}

TEST_CASE("default task has one gold among twenty") {
  const auto g = config();
  const auto w = generate_world(g);
  for (std::uint64_t id = 0; id < 50; ++id) {
    const auto t = generate_task(w, g, id);
    REQUIRE(t.K() == 20);
    std::size_t gold = 0;
    for (std::size_t i = 0; i < t.K(); ++i) {
      const bool is_gold = t.corpus[i].kind == DocKind::Gold;
      gold += is_gold;
      CHECK(is_gold == (std::find(t.gold_positions.begin(), t.gold_positions.end(), i) != t.gold_positions.end()));
      CHECK((t.reranker_scores[i] > 0.5) == is_gold);
    }
    CHECK(gold == 1);
    CHECK(t.knowledge_correct());
  }
}

TEST_CASE("n_gold = 0 gives an unanswerable task") {
  auto g = config();
  g.n_gold = 0;
  const auto w = generate_world(g);
  const auto t = generate_task(w, g, 4);
  CHECK(t.gold_positions.empty());
  CHECK_FALSE(t.knowledge_correct());
  for (double s : t.reranker_scores) CHECK(s <= 0.5);
  for (const auto& d : t.corpus) CHECK(d.kind != DocKind::Gold);
}

TEST_CASE("n_gold > K is an error") {
  auto g = config();
  g.n_gold = 21;
  CHECK_THROWS(g.validate());
  const auto w = generate_world(config());
  CHECK_THROWS(generate_task(w, g, 0));
}

TEST_CASE("middle policy concentrates gold in the middle third") {
  auto g = config();
  g.gold_position_policy = GoldPosition::Middle;
  const auto w = generate_world(g);
  std::size_t middle = 0;
  for (std::uint64_t id = 0; id < 1000; ++id) {
    const auto t = generate_task(w, g, id);
    const std::size_t pos = t.gold_positions.at(0);
    const std::size_t third = t.K() / 3;
    middle += pos >= third && pos < t.K() - third;
  }
  CHECK(middle == 1000);
}

TEST_CASE("front and back policies use the outer thirds") {
  for (auto policy : {GoldPosition::Front, GoldPosition::Back}) {
    auto g = config();
    g.gold_position_policy = policy;
    const auto w = generate_world(g);
    for (std::uint64_t id = 0; id < 100; ++id) {
      const auto t = generate_task(w, g, id);
      const std::size_t pos = t.gold_positions.at(0), third = t.K() / 3;
      CHECK((policy == GoldPosition::Front ? pos < third : pos >= t.K() - third));
    }
  }
}

TEST_CASE("rerank without noise is the oracle") {
  const auto g = config();
  const auto w = generate_world(g);
  const auto t = generate_task(w, g, 1);
  const auto s = rerank(t);
  for (std::size_t i = 0; i < t.K(); ++i) CHECK((s[i] > 0.5) == (t.corpus[i].kind == DocKind::Gold));
}

TEST_CASE("rerank noise flips about the requested fraction") {
  const auto g = config();
  const auto w = generate_world(g);
  std::size_t flips = 0, total = 0;
  for (std::uint64_t id = 0; total < 10000; ++id) {
    const auto t = generate_task(w, g, id);
    const auto s = rerank(t, 0.1);
    for (std::size_t i = 0; i < t.K(); ++i, ++total) flips += (s[i] > 0.5) != (t.corpus[i].kind == DocKind::Gold);
  }
  const double frac = static_cast<double>(flips) / static_cast<double>(total);
  CHECK(frac == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("conflicting documents share the query key but not the value") {
  const auto g = config();
  const auto w = generate_world(g);
  std::size_t conflicts = 0;
  for (std::uint64_t id = 0; id < 200; ++id) {
    const auto t = generate_task(w, g, id);
    for (const auto& d : t.corpus) {
      if (d.kind == DocKind::Gold) {
        CHECK(d.tokens[2] == t.gold_answer.at(0));
      }
      if (d.kind != DocKind::Conflicting) continue;
      ++conflicts;
      CHECK(d.tokens[0] == t.query[0]);
      CHECK(d.tokens[1] == t.query[1]);
      CHECK(d.tokens[2] != t.gold_answer.at(0));
    }
  }
  CHECK(conflicts > 0);
}

TEST_CASE("saturated context fills the policy budget") {
  const auto g = config();
  const auto w = generate_world(g);
  const auto t = generate_task(w, g, 0);
  std::size_t len = 1 + t.query.size();
  for (const auto& d : t.corpus) len += 1 + d.tokens.size();
  CHECK(len == context_length(g));
  CHECK(static_cast<double>(len) >= 0.8 * static_cast<double>(g.max_seq_len));
  CHECK(len <= g.max_seq_len);
  auto bad = g;
  bad.filler_per_doc = 1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("task serialization round-trips byte-identically") {
  const auto g = config(5);
  const auto w = generate_world(g);
  std::vector<Task> tasks;
  for (std::uint64_t id = 0; id < 20; ++id) tasks.push_back(generate_task(w, g, id));
  tasks[3].corpus[0].attachment = "image-bytes";
  const std::string text = serialize(tasks, w.vocab);
  std::istringstream in(text);
  const auto back = read_tasks(in, w.vocab);
  CHECK(serialize(back, w.vocab) == text);
  CHECK(back[3].corpus[0].attachment == std::optional<std::string>("image-bytes"));

  const auto w2 = generate_world(g);
  std::vector<Task> again;
  for (std::uint64_t id = 0; id < 20; ++id) again.push_back(generate_task(w2, g, id));
  again[3].corpus[0].attachment = "image-bytes";
  CHECK(serialize(again, w2.vocab) == text);
}

TEST_CASE("task record format field names") {
  const auto g = config();
  const auto w = generate_world(g);
  const auto j = task_to_json(generate_task(w, g, 2), w.vocab);
  for (const char* key : {"query", "gold_answer", "documents", "reranker_scores", "seed"}) CHECK(j.contains(key));
  for (const char* key : {"id", "kind", "tokens"}) CHECK(j["documents"][0].contains(key));
}
