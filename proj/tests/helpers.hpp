#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ctxalign/grammar.hpp"
#include "ctxalign/objectives.hpp"
#include "ctxalign/policy.hpp"
#include "ctxalign/rng.hpp"
#include "ctxalign/synthenv.hpp"

namespace testutil {

using namespace ctxalign;

// Small saturated world: K=6 docs of 4+3 tokens, 40 content tokens.
inline synthenv::GenConfig small_gen(std::uint64_t seed = 7) {
  synthenv::GenConfig g;
  g.K = 6;
  g.K_std = 3;
  g.vocab_size = 40;
  g.filler_per_doc = 3;
  g.max_seq_len = 60;
  g.seed = seed;
  return g;
}

inline policy::ModelConfig small_model(std::size_t max_seq_len = 80) {
  policy::ModelConfig m;
  m.dim = 6;
  m.max_seq_len = max_seq_len;
  return m;
}

// Parameters at a generic point: every coordinate perturbed.
inline policy::ParameterVector random_params(const policy::PolicyModel& model, std::uint64_t seed,
                                             double scale = 0.3) {
  auto p = model.init_parameters(seed);
  Rng rng(mix_seed(seed, 99));
  for (double& x : p.values()) x += scale * rng.normal();
  return p;
}

inline TokenSeq random_response(const Vocabulary& vocab, std::size_t K, Rng& rng) {
  std::vector<double> rel;
  for (std::size_t k = 0; k < K; ++k) rel.push_back(kScoreLevels[rng.below(kScoreLevels.size())]);
  const TokenRange c = vocab.content();
  TokenSeq answer;
  const std::size_t n = 1 + rng.below(2);
  for (std::size_t i = 0; i < n; ++i) answer.push_back(c.at(rng.below(c.size())));
  return render_response(vocab, rel, answer);
}

// Relative error; the 1e-5 floor sits above central-difference roundoff
// (about eps * |f| / h), so exact zeros compare cleanly.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-5, std::max(std::abs(a), std::abs(b)));
}

// Central difference of f along coordinate i.
template <class F>
double central_diff(policy::ParameterVector p, std::size_t i, F&& f, double h = 1e-5) {
  const double x = p[i];
  p[i] = x + h;
  const double up = f(p);
  p[i] = x - h;
  const double down = f(p);
  return (up - down) / (2 * h);
}

// Coordinates drawn so that every segment is represented.
inline std::vector<std::size_t> pick_coords(const policy::ParameterVector& p, std::size_t n, Rng& rng) {
  std::vector<std::size_t> out;
  for (const auto& s : p.layout().segments()) out.push_back(s.offset + rng.below(s.size()));
  while (out.size() < n) out.push_back(rng.below(p.size()));
  return out;
}

struct ToyWorld {
  synthenv::GenConfig gen = small_gen();
  synthenv::World world = synthenv::generate_world(gen);
  policy::PolicyModel model{world.vocab, small_model()};

  synthenv::Task task(std::uint64_t id) const { return synthenv::generate_task(world, gen, id); }
  TokenSeq prompt(std::uint64_t id) const { return serialize_prompt(world.vocab, task(id)); }
};

inline PreferencePair random_pair(const ToyWorld& w, std::uint64_t id, Rng& rng) {
  PreferencePair p;
  p.task_id = id;
  p.prompt = w.prompt(id);
  p.winner = random_response(w.world.vocab, w.gen.K, rng);
  do {
    p.loser = random_response(w.world.vocab, w.gen.K, rng);
  } while (p.loser == p.winner);
  return p;
}

// Worst relative error between analytic and central-difference gradients of
// `loss_of` over `coords` coordinates at each of `instances` random points.
template <class MakeInstance>
double worst_fd_error(const ToyWorld& w, std::size_t instances, std::size_t coords, std::uint64_t seed,
                      MakeInstance&& make) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const auto params = random_params(w.model, mix_seed(seed, inst));
    auto [analytic, loss_of] = make(params, rng);
    for (std::size_t i : pick_coords(params, coords, rng)) {
      worst = std::max(worst, rel_err(central_diff(params, i, loss_of), analytic[i]));
    }
  }
  return worst;
}

inline double sft_fd_error(const ToyWorld& w, std::size_t instances, std::size_t coords, std::uint64_t seed) {
  return worst_fd_error(w, instances, coords, seed, [&](const policy::ParameterVector& params, Rng& rng) {
    std::vector<SftSample> batch;
    for (std::size_t b = 0; b < 3; ++b) {
      const auto t = w.task(rng.below(1000));
      batch.push_back({t.id, serialize_prompt(w.world.vocab, t), t.gold_answer});
    }
    auto g = objectives::sft_loss(w.model, params, batch).gradient;
    auto f = [&w, batch](const policy::ParameterVector& q) { return objectives::sft_loss(w.model, q, batch).loss; };
    return std::pair{std::move(g), f};
  });
}

inline double dpo_fd_error(const ToyWorld& w, std::size_t instances, std::size_t coords, std::uint64_t seed) {
  return worst_fd_error(w, instances, coords, seed, [&](const policy::ParameterVector& params, Rng& rng) {
    std::vector<PreferencePair> pairs;
    for (std::size_t b = 0; b < 3; ++b) pairs.push_back(random_pair(w, rng.below(1000), rng));
    auto ref = policy::snapshot(random_params(w.model, rng.next()), policy::SnapshotTag::Reference);
    objectives::DpoConfig cfg;
    cfg.beta = 0.5;
    auto g = objectives::dpo_loss(w.model, params, ref, pairs, cfg).gradient;
    auto f = [&w, pairs, ref, cfg](const policy::ParameterVector& q) {
      return objectives::dpo_loss(w.model, q, ref, pairs, cfg).loss;
    };
    return std::pair{std::move(g), f};
  });
}

// Old policy near the live one so that both clip branches occur.
inline double grpo_fd_error(const ToyWorld& w, std::size_t instances, std::size_t coords, std::uint64_t seed,
                            bool token_level = false) {
  return worst_fd_error(w, instances, coords, seed, [&](const policy::ParameterVector& params, Rng& rng) {
    auto old_p = params;
    for (double& x : old_p.values()) x += 0.02 * rng.normal();
    auto old = policy::snapshot(old_p, policy::SnapshotTag::Old);
    auto ref = policy::snapshot(random_params(w.model, rng.next()), policy::SnapshotTag::Reference);
    const auto prompt = w.prompt(rng.below(1000));
    std::vector<objectives::GrpoCandidate> group;
    std::vector<double> rewards;
    for (std::size_t i = 0; i < 4; ++i) {
      group.push_back({prompt, random_response(w.world.vocab, w.gen.K, rng), 0.0});
      rewards.push_back(rng.uniform());
    }
    const auto adv = objectives::advantages(rewards);
    for (std::size_t i = 0; i < group.size(); ++i) group[i].advantage = adv.advantages[i];
    objectives::GrpoConfig cfg;
    cfg.token_level_ratio = token_level;
    cfg.kl_coeff = 0.3;
    auto g = objectives::grpo_loss(w.model, params, old, ref, group, cfg).gradient;
    auto f = [&w, group, old, ref, cfg](const policy::ParameterVector& q) {
      return objectives::grpo_loss(w.model, q, old, ref, group, cfg).loss;
    };
    return std::pair{std::move(g), f};
  });
}

}  // namespace testutil
