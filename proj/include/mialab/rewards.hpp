#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mialab/candidate.hpp"
#include "mialab/metrics.hpp"
#include "mialab/rng.hpp"
#include "mialab/tokens.hpp"

namespace mialab::rewards {

/// Reference pool for contrastive scoring: the true suffix g0 plus K
/// distractor suffixes drawn from other candidates.
struct RefPool {
  TokenSeq truth;
  std::vector<TokenSeq> distractors;
  std::string truth_id;
  std::vector<std::string> distractor_ids;

  std::size_t k() const { return distractors.size(); }
};

/// p(x) in [0,1]; larger means more likely member.
struct MembershipPrior {
  double value = 0.5;
};

enum class Mode { Match, Adapt, Plain };
enum class AdaptForm { Expected, Sampled };
enum class PriorNorm { Rank, MinMax };

struct RewardMode {
  Mode mode = Mode::Match;
  AdaptForm adapt_form = AdaptForm::Expected;
};

/// Draw K distractor suffixes for `target` without replacement from the
/// other candidates; deterministic given the seed. An optional forced id
/// pins one distractor (paired-article style) and the remaining K-1 are
/// sampled from the rest.
inline RefPool build_pool(const Candidate& target, const std::vector<Candidate>& others,
                          std::size_t k, std::uint64_t rng_seed,
                          const std::optional<std::string>& forced_id = std::nullopt) {
  std::vector<const Candidate*> eligible;
  eligible.reserve(others.size());
  const Candidate* forced = nullptr;
  for (const auto& c : others) {
    if (c.id == target.id) continue;
    if (forced_id && c.id == *forced_id) { forced = &c; continue; }
    eligible.push_back(&c);
  }
  if (forced_id && !forced) {
    throw std::invalid_argument("build_pool: forced distractor id not found: " + *forced_id);
  }
  std::size_t to_draw = k;
  if (forced && to_draw > 0) --to_draw;
  if (eligible.size() < to_draw) {
    throw std::invalid_argument("build_pool: not enough candidates to draw " +
                                std::to_string(k) + " distractors for " + target.id);
  }

  RefPool pool;
  pool.truth = target.suffix();
  pool.truth_id = target.id;
  if (forced && k > 0) {
    pool.distractors.push_back(forced->suffix());
    pool.distractor_ids.push_back(forced->id);
  }
  rng::Rng rng(rng::derive_seed(rng_seed, "pool", rng::fnv1a(target.id)));
  for (std::size_t idx : rng.sample_without_replacement(eligible.size(), to_draw)) {
    pool.distractors.push_back(eligible[idx]->suffix());
    pool.distractor_ids.push_back(eligible[idx]->id);
  }
  return pool;
}

/// Matching reward: best similarity against the whole pool (truth included).
inline double reward_match(const TokenSeq& rollout, const RefPool& pool,
                           const metrics::RewardSpec& spec) {
  double best = metrics::base_reward(rollout, pool.truth, spec);
  for (const auto& g : pool.distractors) {
    best = std::max(best, metrics::base_reward(rollout, g, spec));
  }
  return best;
}

namespace detail {

struct PoolScores {
  double c_union = 0.0;     // max over truth + distractors
  double c_distract = 0.0;  // max over distractors only (0 when K = 0)
};

inline PoolScores score_pool(const TokenSeq& rollout, const RefPool& pool,
                             const metrics::RewardSpec& spec) {
  PoolScores s;
  for (const auto& g : pool.distractors) {
    s.c_distract = std::max(s.c_distract, metrics::base_reward(rollout, g, spec));
  }
  s.c_union = std::max(metrics::base_reward(rollout, pool.truth, spec), s.c_distract);
  return s;
}

}  // namespace detail

/// Adaptive matching reward. EXPECTED mixes the two branches by the prior;
/// SAMPLED draws the Bernoulli switch (deterministic given the seed).
inline double reward_adapt(const TokenSeq& rollout, const RefPool& pool,
                           MembershipPrior prior, const metrics::RewardSpec& spec,
                           AdaptForm form, std::uint64_t rng_seed = 0) {
  if (!(prior.value >= 0.0 && prior.value <= 1.0)) {
    throw std::invalid_argument("reward_adapt: prior must be in [0,1]");
  }
  const auto s = detail::score_pool(rollout, pool, spec);
  if (form == AdaptForm::Expected) {
    return prior.value * s.c_union + (1.0 - prior.value) * s.c_distract;
  }
  rng::Rng rng(rng_seed);
  return rng.bernoulli(prior.value) ? s.c_union : s.c_distract;
}

/// Membership priors from passive scores, higher score = more likely member.
/// Rank normalization maps ascending rank i (ties averaged) to i/(n-1);
/// min-max rescales the raw scores instead.
inline std::vector<MembershipPrior> priors_from_scores(const std::vector<double>& scores,
                                                       PriorNorm norm = PriorNorm::Rank) {
  const std::size_t n = scores.size();
  if (n < 2) throw std::invalid_argument("priors_from_scores: need at least 2 scores");
  std::vector<MembershipPrior> priors(n);
  if (norm == PriorNorm::MinMax) {
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < n; ++i) {
      priors[i].value = range > 0.0 ? (scores[i] - *lo) / range : 0.5;
    }
    return priors;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = static_cast<double>(i + j) / 2.0;
    for (std::size_t t = i; t <= j; ++t) {
      priors[order[t]].value = avg_rank / static_cast<double>(n - 1);
    }
    i = j + 1;
  }
  return priors;
}

}  // namespace mialab::rewards
