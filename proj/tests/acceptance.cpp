// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctxalign/dataforge.hpp"
#include "ctxalign/log.hpp"
#include "ctxalign/pipeline.hpp"
#include "helpers.hpp"

using namespace ctxalign;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using metrics::ScoreKind;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <class... A>
std::string fmt(const char* f, A... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path g_root;
fs::path g_config_dir = CTXALIGN_CONFIG_DIR;

fs::path fresh_dir(const std::string& name) {
  const fs::path d = g_root / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---------------------------------------------------------------- 1

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const testutil::ToyWorld w;
  const std::size_t instances = 10, coords = 20;
  const double sft = testutil::sft_fd_error(w, instances, coords, 101);
  const double dpo = testutil::dpo_fd_error(w, instances, coords, 202);
  const double grpo = testutil::grpo_fd_error(w, instances, coords, 303);
  const double grpo_tok = testutil::grpo_fd_error(w, instances, coords, 404, true);
  const double secs = seconds_since(t0);
  const double worst = std::max({sft, dpo, grpo, grpo_tok});
  return {worst < 1e-4 && secs < 120.0,
          fmt("max rel err sft %.2e dpo %.2e grpo %.2e grpo(token) %.2e; %zu instances x %zu coords; %.1f s", sft, dpo,
              grpo, grpo_tok, instances, coords, secs)};
}

// ---------------------------------------------------------------- 2

Outcome dpo_anchor() {
  const testutil::ToyWorld w;
  Rng rng(2);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto params = testutil::random_params(w.model, 1000 + i, 0.5);
    const auto ref = policy::snapshot(params, policy::SnapshotTag::Reference);
    const PreferencePair pair = testutil::random_pair(w, rng.below(1000), rng);
    objectives::DpoConfig cfg;
    cfg.beta = 0.01 + 2.0 * rng.uniform();
    const double loss = objectives::dpo_loss(w.model, params, ref, std::span(&pair, 1), cfg).loss;
    worst = std::max(worst, std::abs(loss - std::numbers::ln2));
  }
  return {worst <= 1e-9, fmt("100 pairs, max |loss - ln 2| = %.2e", worst)};
}

// ---------------------------------------------------------------- 3

Outcome advantage_normalization() {
  Rng rng(3);
  const double levels[] = {0.0, 0.2, 1.0, 1.2};
  std::size_t live = 0, constant = 0, missed = 0, false_flags = 0;
  double worst_mean = 0.0, worst_sd = 0.0;
  while (live < 10000) {
    const std::size_t n = 2 + rng.below(31);
    std::vector<double> r(n);
    switch (rng.below(3)) {
      case 0: {
        const double scale = std::pow(10.0, -2.0 + 4.0 * rng.uniform());
        const double offset = 10.0 * scale * (rng.uniform() - 0.5);
        for (double& x : r) x = offset + scale * rng.uniform();
        break;
      }
      case 1:
        for (double& x : r) x = levels[rng.below(4)];
        break;
      default:
        std::fill(r.begin(), r.end(), 3.0 * rng.uniform());
    }
    const bool zero_variance = std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; });
    const auto g = objectives::advantages(r);
    if (zero_variance) {
      ++constant;
      missed += !g.degenerate;
      continue;
    }
    if (g.degenerate) {
      ++false_flags;
      continue;
    }
    ++live;
    long double mean = 0.0L, var = 0.0L;
    for (double a : g.advantages) mean += a;
    mean /= static_cast<long double>(n);
    for (double a : g.advantages) var += (a - mean) * (a - mean);
    const long double sd = std::sqrt(var / static_cast<long double>(n));
    worst_mean = std::max(worst_mean, static_cast<double>(std::fabs(mean)));
    worst_sd = std::max(worst_sd, static_cast<double>(std::fabs(sd - 1.0L)));
  }
  return {worst_mean <= 1e-9 && worst_sd <= 1e-9 && missed == 0 && false_flags == 0 && constant > 0,
          fmt("%zu live groups: max |mean| %.2e, max |sd-1| %.2e; %zu/%zu zero-variance flagged; %zu false flags",
              live, worst_mean, worst_sd, constant - missed, constant, false_flags)};
}

// ---------------------------------------------------------------- 4

// Written from the taxonomy table alone: knowledge-correct x high/low score.
std::optional<SampleType> brute_type(bool kc, double s, ScoreKind kind, double tau_pos, double tau_neg) {
  bool high, low;
  if (kind == ScoreKind::ExactMatch || kind == ScoreKind::Accuracy) {
    high = s == 1.0;
    low = s == 0.0;
  } else {
    high = s >= tau_pos;
    low = !high && s <= tau_neg;
  }
  if (high) return kc ? SampleType::Type1 : SampleType::Type3;
  if (low) return kc ? SampleType::Type4 : SampleType::Type2;
  return std::nullopt;
}

ScoreKind random_kind(Rng& rng) {
  const ScoreKind kinds[] = {ScoreKind::ExactMatch, ScoreKind::TokenF1, ScoreKind::RougeL, ScoreKind::Accuracy};
  return kinds[rng.below(4)];
}

Outcome taxonomy_oracle() {
  Rng rng(4);
  std::size_t agree = 0;
  for (int i = 0; i < 1000; ++i) {
    double a = rng.uniform(), b = rng.uniform();
    const metrics::ThresholdPolicy th{std::max(a, b), std::min(a, b)};
    dataforge::GenRecord r;
    r.knowledge_correct = rng.bernoulli(0.5);
    r.score_kind = random_kind(rng);
    double s = rng.uniform();
    if (metrics::is_binary(r.score_kind)) {
      s = rng.bernoulli(0.5) ? 1.0 : 0.0;
    } else if (rng.bernoulli(0.2)) {
      s = rng.bernoulli(0.5) ? th.tau_pos : th.tau_neg;
    }
    r.score = metrics::Score(s);
    agree += dataforge::categorize(r, th) == brute_type(r.knowledge_correct, s, r.score_kind, th.tau_pos, th.tau_neg);
  }

  // Assembled pairs from sampled generations on a half-unanswerable task set.
  const testutil::ToyWorld w;
  const auto& vocab = w.world.vocab;
  std::size_t pairs_seen = 0, violations = 0, standard = 0, adversarial = 0;
  for (std::uint64_t round = 0; round < 6; ++round) {
    const auto params = testutil::random_params(w.model, 40 + round, 1.0);
    double a = rng.uniform(), b = rng.uniform();
    const metrics::ThresholdPolicy th{std::max(a, b), std::min(a, b)};
    dataforge::GenerationOptions opt;
    opt.seed = 77 + round;
    opt.score_kind = random_kind(rng);
    opt.thresholds = th;
    const std::size_t cap = 2 + round;
    std::map<std::uint64_t, synthenv::Task> tasks;
    std::vector<dataforge::TaskRecords> groups;
    for (std::uint64_t id = 0; id < 40; ++id) {
      auto g = w.gen;
      if (id % 2) g.n_gold = 0;
      const auto t = synthenv::generate_task(w.world, g, 100 * round + id);
      dataforge::TaskRecords tr;
      tr.task_id = t.id;
      tr.prompt = serialize_prompt(vocab, t);
      tr.knowledge_correct = t.knowledge_correct();
      tr.records = dataforge::sample_generations(w.model, params, t, 12, dataforge::SyntheticOracle{}, opt);
      groups.push_back(tr);
      tasks.emplace(t.id, t);
    }
    std::map<std::uint64_t, std::set<std::pair<TokenSeq, TokenSeq>>> per_task;
    for (const auto& p : dataforge::build_preference_pairs(groups, th, cap)) {
      ++pairs_seen;
      const auto& t = tasks.at(p.task_id);
      const bool kc = t.knowledge_correct();
      auto type_of = [&](const TokenSeq& resp) {
        const double s = dataforge::score_response(vocab, resp, t, opt.score_kind).value();
        return brute_type(kc, s, opt.score_kind, th.tau_pos, th.tau_neg);
      };
      const auto wt = type_of(p.winner), lt = type_of(p.loser);
      const bool ok_types = kc ? (wt == SampleType::Type1 && lt == SampleType::Type4)
                               : (wt == SampleType::Type3 && lt == SampleType::Type2);
      const bool ok_pairing = p.pairing == (kc ? Pairing::Standard : Pairing::Adversarial);
      const bool ok_labels = wt && lt && p.sample_types == std::pair{*wt, *lt};
      const bool ok_prompt = p.prompt == serialize_prompt(vocab, t);
      const bool fresh = per_task[p.task_id].insert({p.winner, p.loser}).second;
      violations += !(ok_types && ok_pairing && ok_labels && ok_prompt && fresh && p.winner != p.loser);
      (kc ? standard : adversarial)++;
    }
    for (const auto& [id, set] : per_task) violations += set.size() > cap;
  }
  return {agree == 1000 && violations == 0 && standard > 0 && adversarial > 0,
          fmt("categorize agreement %zu/1000; %zu pairs (%zu standard, %zu adversarial), %zu constraint violations",
              agree, pairs_seen, standard, adversarial, violations)};
}

// ---------------------------------------------------------------- 5

// Every sequence over {a,b,c,d} of length 0..8, indexed by length then base-4 code.
struct SequenceSpace {
  static constexpr std::size_t kMaxLen = 8;
  std::vector<std::size_t> offset;  // first index of each length
  std::vector<std::uint8_t> length;
  std::vector<std::vector<std::string>> tokens;
  std::vector<std::array<std::uint32_t, kMaxLen>> deletions;  // index after removing position i
  std::vector<bool> canonical;                                // symbols first appear in order a, b, c, d

  SequenceSpace() {
    std::size_t pow4 = 1;
    for (std::size_t n = 0; n <= kMaxLen; ++n, pow4 *= 4) {
      offset.push_back(length.size());
      for (std::size_t code = 0; code < pow4; ++code) {
        std::vector<std::string> seq;
        std::size_t c = code, seen = 0;
        bool canon = true;
        for (std::size_t i = 0; i < n; ++i, c /= 4) {
          const std::size_t d = c % 4;
          canon &= d <= seen;
          seen = std::max(seen, d + 1);
          seq.push_back(std::string(1, static_cast<char>('a' + d)));
        }
        length.push_back(static_cast<std::uint8_t>(n));
        tokens.push_back(std::move(seq));
        canonical.push_back(canon);
        std::array<std::uint32_t, kMaxLen> del{};
        std::size_t low_mod = 1;
        for (std::size_t i = 0; i < n; ++i, low_mod *= 4) {
          const std::size_t reduced = code % low_mod + (code / (low_mod * 4)) * low_mod;
          del[i] = static_cast<std::uint32_t>(offsets_before(n - 1) + reduced);
        }
        deletions.push_back(del);
      }
    }
    offset.push_back(length.size());
  }
  std::size_t offsets_before(std::size_t n) const { return offset.at(n); }
  std::size_t size() const { return length.size(); }

  // All subsequences of sequence `a`, as indices.
  std::vector<std::uint32_t> subsequences(std::size_t a) const {
    const std::size_t n = length[a];
    std::vector<std::uint32_t> out;
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
      std::size_t code = 0, k = 0, mul = 1;
      std::size_t c = a - offset[n];
      for (std::size_t i = 0; i < n; ++i, c /= 4) {
        if (mask >> i & 1) {
          code += (c % 4) * mul;
          mul *= 4;
          ++k;
        }
      }
      out.push_back(static_cast<std::uint32_t>(offset[k] + code));
    }
    return out;
  }
};

// Checks rouge_l(a, b) for every b up to `b_limit` (exclusive index) against
// the longest common subsequence found by searching b's subsequence lattice.
std::size_t rouge_sweep(const SequenceSpace& S, std::size_t a, std::size_t b_limit, std::vector<std::uint32_t>& mark,
                        std::vector<std::uint8_t>& lcs, std::uint32_t stamp) {
  for (std::uint32_t s : S.subsequences(a)) mark[s] = stamp;
  std::size_t mismatches = 0;
  const double la = S.length[a];
  lcs[0] = 0;
  for (std::size_t b = 1; b < b_limit; ++b) {
    std::uint8_t best = 0;
    if (mark[b] == stamp) {
      best = S.length[b];
    } else {
      for (std::size_t i = 0; i < S.length[b]; ++i) best = std::max(best, lcs[S.deletions[b][i]]);
    }
    lcs[b] = best;
    const double expected = best == 0 ? 0.0 : 2.0 * best / (la + S.length[b]);
    const double got = metrics::rouge_l(S.tokens[a], S.tokens[b]).value();
    mismatches += std::abs(got - expected) > 1e-12;
  }
  return mismatches;
}

double oracle_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  std::map<std::string, int> want;
  for (const auto& g : gold) ++want[g];
  int overlap = 0;
  for (const auto& p : pred) {
    auto it = want.find(p);
    if (it != want.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  const SequenceSpace S;
  std::vector<std::uint32_t> mark(S.size(), 0);
  std::vector<std::uint8_t> lcs(S.size(), 0);
  std::uint32_t stamp = 0;

  // Every (a, b) up to a consistent renaming of the four symbols: a ranges over
  // sequences whose symbols first appear in alphabetical order.
  std::size_t canon_pairs = 0, canon_bad = 0;
  for (std::size_t a = 1; a < S.size(); ++a) {
    if (!S.canonical[a]) continue;
    canon_bad += rouge_sweep(S, a, S.size(), mark, lcs, ++stamp);
    canon_pairs += S.size() - 1;
  }
  // Literally every pair up to length 6.
  const std::size_t short_limit = S.offset[7];
  std::size_t short_pairs = 0, short_bad = 0;
  for (std::size_t a = 1; a < short_limit; ++a) {
    short_bad += rouge_sweep(S, a, short_limit, mark, lcs, ++stamp);
    short_pairs += short_limit - 1;
  }

  Rng rng(5);
  const std::vector<std::string> words = {"the", "red", "fox", "ran", "far", "away"};
  double worst_f1 = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<std::string> p(1 + rng.below(10)), g(1 + rng.below(10));
    for (auto& x : p) x = words[rng.below(words.size())];
    for (auto& x : g) x = words[rng.below(words.size())];
    worst_f1 = std::max(worst_f1, std::abs(metrics::token_f1(p, g).value() - oracle_f1(p, g)));
  }
  const double secs = seconds_since(t0);
  return {canon_bad == 0 && short_bad == 0 && worst_f1 <= 1e-9,
          fmt("rouge_l: %zu/%zu mismatches (len<=8, up to relabeling), %zu/%zu (all pairs len<=6); "
              "token_f1 max err %.2e on 50 pairs; %.0f s",
              canon_bad, canon_pairs, short_bad, short_pairs, worst_f1, secs)};
}

// ---------------------------------------------------------------- 6

Outcome reward_arithmetic() {
  const testutil::ToyWorld w;
  const auto& vocab = w.world.vocab;
  Rng rng(6);
  std::size_t exact = 0, well_formed = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto t = w.task(rng.below(1000));
    TokenSeq resp;
    const std::size_t form = rng.below(5);
    if (form == 4) {
      const std::size_t n = 1 + rng.below(30);
      for (std::size_t k = 0; k < n; ++k) resp.push_back(static_cast<TokenId>(rng.below(vocab.size())));
    } else {
      std::vector<double> rel;
      for (std::size_t k = 0; k < t.K(); ++k) rel.push_back(kScoreLevels[rng.below(kScoreLevels.size())]);
      TokenSeq answer = t.gold_answer;
      if (rng.bernoulli(0.5)) {
        answer.clear();
        const std::size_t n = 1 + rng.below(3);
        for (std::size_t k = 0; k < n; ++k) answer.push_back(vocab.content().at(rng.below(vocab.content().size())));
      }
      resp = render_response(vocab, rel, answer);
      if (form == 3) resp[rng.below(resp.size())] = static_cast<TokenId>(rng.below(vocab.size()));
    }
    const auto parsed = objectives::parse_response(vocab, resp, t.K());
    objectives::GrpoConfig cfg;
    cfg.w_ans = 2.0 * rng.uniform();
    cfg.w_disc = rng.uniform();
    const ScoreKind kind = random_kind(rng);
    const auto r = objectives::reward(vocab, parsed, t, kind, cfg);

    double r_ans = 0.0, r_disc = 0.0;
    if (parsed.well_formed) {
      ++well_formed;
      r_ans = metrics::score(kind, vocab.strings(parsed.answer), vocab.strings(t.gold_answer)).value();
      std::size_t agree = 0;
      for (std::size_t k = 0; k < t.K(); ++k) agree += (parsed.relevance[k] > 0.5) == (t.reranker_scores[k] > 0.5);
      r_disc = static_cast<double>(agree) / static_cast<double>(t.K());
    }
    exact += r.r_ans == r_ans && r.r_disc == r_disc && r.total == cfg.w_ans * r_ans + cfg.w_disc * r_disc;
  }

  double worst_perfect = 0.0;
  for (std::uint64_t id = 0; id < 20; ++id) {
    const auto t = w.task(id);
    std::vector<double> rel;
    for (double s : t.reranker_scores) rel.push_back(s > 0.5 ? 1.0 : 0.0);
    const auto parsed = objectives::parse_response(vocab, render_response(vocab, rel, t.gold_answer), t.K());
    const auto r = objectives::reward(vocab, parsed, t, ScoreKind::ExactMatch, {});
    worst_perfect = std::max(worst_perfect, std::abs(r.total - 1.2));
  }
  return {exact == 1000 && worst_perfect <= 1e-12,
          fmt("%zu/1000 exact (%zu well-formed); perfect response max |total - 1.2| = %.1e", exact, well_formed,
              worst_perfect)};
}

// ---------------------------------------------------------------- 7

pipeline::RunConfig toy_config(std::uint64_t seed, const fs::path& workdir) {
  auto c = pipeline::RunConfig::load(g_config_dir / "toy.json");
  c.seed = seed;
  c.workdir = workdir.string();
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome toy_pipeline() {
  const auto t0 = Clock::now();
  const fs::path dir = fresh_dir("toy");
  const auto probe = toy_config(1, dir);
  const auto& g = probe.gen;
  if (g.K != 20 || g.n_gold != 1 || g.conflict_fraction != 0.25 || g.vocab_size != 200 || probe.n_train != 2000 ||
      probe.n_eval != 200) {
    return {false, "toy config does not match the required task shape"};
  }
  const std::vector<std::string> stages = {"base", "sft", "dpo", "grpo"};
  std::map<std::string, std::vector<double>> acc;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    pipeline::Pipeline p(toy_config(seed, dir / ("seed" + std::to_string(seed))));
    p.gen();
    p.build(trainer::Stage::Sft);
    p.train(trainer::Stage::Sft);
    p.build(trainer::Stage::Dpo);
    p.train(trainer::Stage::Dpo);
    p.train(trainer::Stage::Grpo);
    std::string line = fmt("  seed %llu:", static_cast<unsigned long long>(seed));
    for (const auto& row : p.eval()) {
      acc[row.stage].push_back(row.report.accuracy);
      line += fmt(" %s %.3f", row.stage.c_str(), row.report.accuracy);
    }
    p.report();
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  }
  for (const auto& s : stages) {
    if (acc[s].size() != 5) return {false, "missing eval rows for stage " + s};
  }
  const double base = median(acc["base"]), sft = median(acc["sft"]), dpo = median(acc["dpo"]),
               grpo = median(acc["grpo"]);
  const double secs = seconds_since(t0);
  const bool pass = base < sft && dpo >= sft - 0.02 && grpo >= sft + 0.03 && secs < 1800.0;
  return {pass, fmt("median accuracy base %.3f sft %.3f dpo %.3f grpo %.3f over 5 seeds; %.0f s", base, sft, dpo,
                    grpo, secs)};
}

// ---------------------------------------------------------------- 8

Outcome stagnation_observability() {
  const auto t0 = Clock::now();
  // A sharper SFT policy than the toy run, so answerable groups reliably hold a
  // correct sample and degeneracy tracks unanswerability.
  auto cfg = toy_config(1, fresh_dir("stagnation"));
  cfg.sft.learning_rate = 1e-2;
  pipeline::Pipeline p(cfg);
  p.gen();
  p.build(trainer::Stage::Sft);
  p.train(trainer::Stage::Sft);
  const auto& rc = p.config();
  const auto params = p.load_parameters("sft");

  // Held-out entities only, so the answer to a gold-less task is nowhere in
  // the policy's training data; every other task keeps its gold document.
  std::set<TokenId> held_out;
  for (const auto& t : p.load_tasks("eval")) held_out.insert(t.query[0]);
  std::vector<synthenv::Fact> pool;
  for (const auto& f : p.world().facts) {
    if (held_out.count(f.entity)) pool.push_back(f);
  }
  std::vector<synthenv::Task> tasks;
  std::size_t unanswerable = 0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto g = rc.gen;
    if (i % 2) g.n_gold = 0;
    tasks.push_back(synthenv::generate_task(p.world(), pool, g, 2'000'000 + i));
    unanswerable += !tasks.back().knowledge_correct();
  }

  std::vector<double> frac;
  for (std::size_t n : {8, 32}) {
    auto sc = rc.grpo;
    sc.prompt_budget = tasks.size();
    auto obj = rc.grpo_objective;
    obj.group_size = n;
    const auto r = trainer::run_grpo(p.model(), params, tasks, sc, obj, {rc.score_kind, rc.thresholds});
    frac.push_back(r.stagnation.degenerate_fraction());
  }
  const double secs = seconds_since(t0);
  const bool in_band = std::all_of(frac.begin(), frac.end(), [](double f) { return f >= 0.4 && f <= 0.6; });
  const double change = std::abs(frac[1] - frac[0]);
  return {in_band && change < 0.1 && unanswerable == 100,
          fmt("%zu/200 unanswerable, rule %s: degenerate fraction N=8 %.3f, N=32 %.3f, change %.3f; %.0f s",
              unanswerable, trainer::to_string(rc.grpo.stagnation).c_str(), frac[0], frac[1], change, secs)};
}

// ---------------------------------------------------------------- 9

std::map<std::string, std::string> snapshot_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root);
    if (rel.filename() == ".lock" || *rel.begin() == "timing") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    out[rel.generic_string()] = s.str();
  }
  return out;
}

std::size_t count_differences(const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b,
                              std::vector<std::string>& names) {
  std::size_t n = 0;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || it->second != v) {
      ++n;
      names.push_back(k);
    }
  }
  for (const auto& [k, v] : b) {
    if (!a.count(k)) {
      ++n;
      names.push_back(k);
    }
  }
  return n;
}

Outcome determinism(const std::string& cli) {
  if (cli.empty() || !fs::exists(cli)) return {false, "CLI binary not given (--cli) or missing"};
  const auto t0 = Clock::now();
  const fs::path dir = fresh_dir("determinism");
  const fs::path work = dir / "run";
  const fs::path log = dir / "cli.log";

  pipeline::RunConfig c;
  c.gen = testutil::small_gen(3);
  c.gen.saturate = false;
  c.gen.max_seq_len = 80;
  c.model = testutil::small_model(80);
  c.n_train = 60;
  c.n_eval = 20;
  c.unanswerable_fraction = 0.25;
  c.sft.epochs = 3;
  c.sft.learning_rate = 1e-2;
  c.sft.batch_size = 8;
  c.dpo.batch_size = 8;
  c.dpo_samples_per_task = 4;
  c.grpo.prompt_budget = 24;
  c.grpo.batch_size = 8;
  c.grpo.learning_rate = 1e-2;
  const fs::path config = dir / "config.json";
  std::ofstream(config) << c.to_json().dump(2);

  const std::vector<std::string> commands = {"gen",          "build --stage sft", "train --stage sft",
                                             "build --stage dpo", "train --stage dpo", "train --stage grpo",
                                             "eval",         "report"};
  auto run = [&](const std::string& cmd) {
    const std::string line = "\"" + cli + "\" " + cmd + " --config \"" + config.string() + "\" --workdir \"" +
                             work.string() + "\" >> \"" + log.string() + "\" 2>&1";
    return std::system(line.c_str()) == 0;
  };

  for (const auto& cmd : commands) {
    if (!run(cmd)) return {false, "command failed: " + cmd + " (see " + log.string() + ")"};
  }
  const auto first = snapshot_files(work);
  std::size_t diffs = 0;
  std::vector<std::string> names;
  // Each command rerun in place must rewrite its outputs byte for byte.
  for (const auto& cmd : commands) {
    if (!run(cmd)) return {false, "rerun failed: " + cmd};
    diffs += count_differences(first, snapshot_files(work), names);
  }
  // And a from-scratch rerun must reproduce the whole workdir.
  fs::remove_all(work);
  for (const auto& cmd : commands) {
    if (!run(cmd)) return {false, "second run failed: " + cmd};
  }
  diffs += count_differences(first, snapshot_files(work), names);

  bool covered = true;
  for (const char* f : {"data/sft.jsonl", "data/dpo.jsonl", "ckpt/sft.ckpt", "ckpt/dpo.ckpt", "ckpt/grpo.ckpt",
                        "reports/eval.json", "reports/report.txt", "tasks/train.jsonl"}) {
    covered &= first.count(f) > 0;
  }
  std::string detail = fmt("%zu files compared after %zu in-place reruns and a fresh rerun: %zu differences; %.0f s",
                           first.size(), commands.size(), diffs, seconds_since(t0));
  if (!names.empty()) detail += " (first: " + names.front() + ")";
  if (!covered) detail += "; expected outputs missing";
  return {diffs == 0 && covered, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cli;
  std::vector<int> only;
  std::string root = (fs::temp_directory_path() / "ctxalign_acceptance").string();
  app.add_option("--cli", cli, "Path to the ctxalign command-line binary");
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--workdir", root, "Scratch directory");
  app.add_option("--config-dir", g_config_dir, "Directory holding toy.json");
  CLI11_PARSE(app, argc, argv);
  g_root = root;
  log::set_threshold(log::Level::Error);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"dpo anchor", dpo_anchor},
      {"advantage normalization", advantage_normalization},
      {"taxonomy oracle", taxonomy_oracle},
      {"metric oracles", metric_oracles},
      {"reward arithmetic", reward_arithmetic},
      {"toy pipeline", toy_pipeline},
      {"stagnation observability", stagnation_observability},
      {"determinism", [&] { return determinism(cli); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
