#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mialab/attacks.hpp"
#include "mialab/baselines.hpp"
#include "mialab/candidate.hpp"
#include "mialab/metrics.hpp"
#include "mialab/rewards.hpp"
#include "mialab/rng.hpp"
#include "mialab/toylm.hpp"

namespace mialab::grpo {

constexpr double kAdvantageEps = 1e-8;

struct GrpoConfig {
  std::size_t steps = 30;                   // RL updates S
  std::size_t rollouts_per_candidate = 16;  // group size N
  double lr = 0.5;                          // tabular-policy scale
  double kl_coef = 0.005;
  double clip_eps = 0.2;
  bool normalize_advantages = true;
  double entropy_coef = 0.0;
  std::size_t inner_epochs = 1;  // policy iterations per rollout batch
  toylm::SamplingConfig sampling{};
  rewards::RewardMode reward_mode{};
  metrics::RewardSpec reward_spec{};
  std::size_t k_distractors = 7;
  bool resample_pools = false;  // frozen pools by default
  rewards::PriorNorm prior_norm = rewards::PriorNorm::Rank;
  double prior_k_percent = 20.0;        // Min-K%++ prior for ADAPT mode
  std::vector<std::string> prompt_prefix;  // optional fixed tokens before the candidate prefix

  void validate() const {
    if (normalize_advantages && rollouts_per_candidate < 2) {
      throw std::invalid_argument("grpo: advantage normalization needs at least 2 rollouts");
    }
    if (!(lr > 0.0)) throw std::invalid_argument("grpo: lr must be > 0");
    if (kl_coef < 0.0) throw std::invalid_argument("grpo: kl_coef must be >= 0");
    if (!(clip_eps > 0.0)) throw std::invalid_argument("grpo: clip_eps must be > 0");
  }
};

struct StepStats {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
};

/// Group-relative advantages: center by the group mean, optionally divide
/// by the group (population) std. An all-equal group yields all zeros.
inline std::vector<double> group_advantages(const std::vector<double>& rewards, bool normalize) {
  if (rewards.empty()) throw std::invalid_argument("group_advantages: empty group");
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) /
                      static_cast<double>(rewards.size());
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  if (normalize) {
    double var = 0.0;
    for (double a : adv) var += a * a;
    const double std_dev = std::sqrt(var / static_cast<double>(rewards.size()));
    for (double& a : adv) a /= (std_dev + kAdvantageEps);
  }
  return adv;
}

/// Mean exact categorical KL(pi_theta(.|ctx) || pi_ref(.|ctx)) over the
/// given contexts.
inline double kl_reference(const toylm::Policy& policy, const toylm::Policy& ref,
                           const std::vector<toylm::Context>& contexts) {
  if (!(policy.vocab() == ref.vocab()) || policy.order() != ref.order()) {
    throw std::invalid_argument("kl_reference: vocab/order mismatch");
  }
  if (contexts.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ctx : contexts) {
    const auto lp = toylm::detail::log_softmax(policy.logits_at(ctx), 1.0);
    const auto lq = toylm::detail::log_softmax(ref.logits_at(ctx), 1.0);
    double kl = 0.0;
    for (std::size_t v = 0; v < lp.size(); ++v) kl += std::exp(lp[v]) * (lp[v] - lq[v]);
    total += std::max(kl, 0.0);
  }
  return total / static_cast<double>(contexts.size());
}

/// One (context, action) pair of a rollout with its sampling-time
/// log-probability and the broadcast sequence advantage.
struct TokenStep {
  toylm::Context ctx;
  toylm::TokenId action = 0;
  double logprob_old = 0.0;
  double advantage = 0.0;
};

using GradTable = std::unordered_map<std::string, std::vector<double>>;

struct SurrogatePass {
  GradTable grad;
  double clip_fraction = 0.0;
};

/// Gradient of the clipped surrogate sum_{i,t} min(rho*A, clip(rho)*A)
/// with respect to the visited contexts' logits, evaluated at `policy`.
/// With rho == 1 (first pass of a batch) this is exactly sum A * grad log pi.
inline SurrogatePass surrogate_gradient(const toylm::Policy& policy,
                                        const std::vector<TokenStep>& steps,
                                        double clip_eps) {
  SurrogatePass out;
  std::unordered_map<std::string, std::vector<double>> dist_cache;
  std::size_t clipped = 0;
  for (const auto& s : steps) {
    const std::string key = toylm::detail::pack_context(s.ctx);
    auto dit = dist_cache.find(key);
    if (dit == dist_cache.end()) {
      auto lp = toylm::detail::log_softmax(policy.logits_at(s.ctx), 1.0);
      dit = dist_cache.emplace(key, std::move(lp)).first;
    }
    const auto& lp = dit->second;
    const double lp_new = lp[static_cast<std::size_t>(s.action)];
    const double ratio = std::exp(lp_new - s.logprob_old);
    if (ratio < 1.0 - clip_eps || ratio > 1.0 + clip_eps) ++clipped;
    const bool active = s.advantage >= 0.0 ? ratio <= 1.0 + clip_eps : ratio >= 1.0 - clip_eps;
    if (!active) continue;
    auto [git, inserted] = out.grad.try_emplace(key);
    if (inserted) git->second.assign(lp.size(), 0.0);
    auto& g = git->second;
    const double w = s.advantage * ratio;
    for (std::size_t v = 0; v < g.size(); ++v) g[v] -= w * std::exp(lp[v]);
    g[static_cast<std::size_t>(s.action)] += w;
  }
  out.clip_fraction = steps.empty() ? 0.0 : static_cast<double>(clipped) / static_cast<double>(steps.size());
  return out;
}

namespace detail {

/// One ascent step on the per-token objective
///   sum_{i,t} [ min(rho A, clip(rho) A) - kl_coef * KL(pi(.|ctx_t) || ref) ]
/// (+ entropy bonus). The KL term enters the loss per visited token, so a
/// heavily shared context is anchored in proportion to its traffic while a
/// candidate's private contexts stay free to move. The step size
/// lr/(1 + lr*kl_coef) respects the KL term's curvature scale, so huge
/// coefficients pin the policy to the reference instead of destabilizing
/// the update; at kl_coef = 0 it is plain gradient ascent with step lr.
inline double apply_update(toylm::Policy& policy, const toylm::Policy& ref,
                           const std::vector<TokenStep>& steps,
                           const std::vector<toylm::Context>& batch_contexts,
                           const GrpoConfig& cfg) {
  const auto pass = surrogate_gradient(policy, steps, cfg.clip_eps);
  const double lr_eff = cfg.lr / (1.0 + cfg.lr * cfg.kl_coef);
  std::unordered_map<std::string, double> visits;
  for (const auto& s : steps) visits[toylm::detail::pack_context(s.ctx)] += 1.0;
  for (const auto& ctx : batch_contexts) {
    const std::string key = toylm::detail::pack_context(ctx);
    const auto lp = toylm::detail::log_softmax(policy.logits_at(ctx), 1.0);
    std::vector<double> g(lp.size(), 0.0);
    if (const auto it = pass.grad.find(key); it != pass.grad.end()) g = it->second;
    const double weight = visits.count(key) ? visits.at(key) : 1.0;
    if (cfg.kl_coef > 0.0) {
      const auto lq = toylm::detail::log_softmax(ref.logits_at(ctx), 1.0);
      double kl = 0.0;
      for (std::size_t v = 0; v < lp.size(); ++v) kl += std::exp(lp[v]) * (lp[v] - lq[v]);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        g[v] -= cfg.kl_coef * weight * std::exp(lp[v]) * ((lp[v] - lq[v]) - kl);
      }
    }
    if (cfg.entropy_coef > 0.0) {
      double ent = 0.0;
      for (double l : lp) ent -= std::exp(l) * l;
      for (std::size_t v = 0; v < lp.size(); ++v) {
        g[v] += cfg.entropy_coef * weight * (-std::exp(lp[v]) * (lp[v] + ent));
      }
    }
    auto& z = policy.mutable_logits(ctx);
    for (std::size_t v = 0; v < z.size(); ++v) z[v] += lr_eff * g[v];
  }
  return pass.clip_fraction;
}

inline TokenSeq with_prompt(const std::vector<std::string>& prompt, const TokenSeq& prefix) {
  if (prompt.empty()) return prefix;
  std::vector<std::string> toks = prompt;
  toks.insert(toks.end(), prefix.tokens.begin(), prefix.tokens.end());
  return from_tokens(std::move(toks));
}

}  // namespace detail

/// One GRPO update over the candidate batch: N rollouts per candidate,
/// contrastive rewards, group-relative advantages, clipped-surrogate ascent
/// with the exact KL pull toward the reference policy.
inline std::pair<toylm::Policy, StepStats> grpo_step(
    const toylm::Policy& policy, const toylm::Policy& ref_policy,
    const std::vector<Candidate>& candidates,
    const std::vector<rewards::RefPool>& pools,
    const std::vector<rewards::MembershipPrior>& priors,
    const GrpoConfig& cfg, std::uint64_t rng_seed) {
  cfg.validate();
  if (pools.size() != candidates.size()) {
    throw std::invalid_argument("grpo_step: one pool per candidate required");
  }
  if (cfg.reward_mode.mode == rewards::Mode::Adapt && priors.size() != candidates.size()) {
    throw std::invalid_argument("grpo_step: ADAPT mode requires one prior per candidate");
  }

  std::vector<TokenStep> steps;
  std::vector<std::string> seen_keys;
  std::vector<toylm::Context> batch_contexts;
  double reward_sum = 0.0;
  std::size_t reward_count = 0;

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenSeq prefix = detail::with_prompt(cfg.prompt_prefix, candidates[i].prefix());
    const auto prefix_ids = policy.vocab().encode(prefix);

    std::vector<toylm::Rollout> rollouts;
    std::vector<double> rewards_i;
    rollouts.reserve(cfg.rollouts_per_candidate);
    for (std::size_t j = 0; j < cfg.rollouts_per_candidate; ++j) {
      toylm::SamplingConfig scfg = cfg.sampling;
      scfg.rng_seed = rng::derive_seed(rng_seed, "rollout", i, j);
      rollouts.push_back(toylm::sample_completion(policy, prefix, scfg));
      const TokenSeq text = rollouts.back().text(policy.vocab());
      double r = 0.0;
      switch (cfg.reward_mode.mode) {
        case rewards::Mode::Plain:
          r = metrics::base_reward(text, pools[i].truth, cfg.reward_spec);
          break;
        case rewards::Mode::Match:
          r = rewards::reward_match(text, pools[i], cfg.reward_spec);
          break;
        case rewards::Mode::Adapt:
          r = rewards::reward_adapt(text, pools[i], priors[i], cfg.reward_spec,
                                    cfg.reward_mode.adapt_form,
                                    rng::derive_seed(rng_seed, "switch", i, j));
          break;
      }
      rewards_i.push_back(r);
      reward_sum += r;
      ++reward_count;
    }

    const auto adv = group_advantages(rewards_i, cfg.normalize_advantages);
    for (std::size_t j = 0; j < rollouts.size(); ++j) {
      std::vector<toylm::TokenId> history = prefix_ids;
      const auto& ro = rollouts[j];
      for (std::size_t t = 0; t < ro.token_ids.size(); ++t) {
        TokenStep s;
        s.ctx = policy.normalize_context(history);
        s.action = ro.token_ids[t];
        s.logprob_old = ro.logprobs_old[t];
        s.advantage = adv[j];
        seen_keys.push_back(toylm::detail::pack_context(s.ctx));
        steps.push_back(std::move(s));
        history.push_back(ro.token_ids[t]);
      }
    }
  }

  std::sort(seen_keys.begin(), seen_keys.end());
  seen_keys.erase(std::unique(seen_keys.begin(), seen_keys.end()), seen_keys.end());
  batch_contexts.reserve(seen_keys.size());
  for (const auto& k : seen_keys) batch_contexts.push_back(toylm::detail::unpack_context(k));

  toylm::Policy updated = policy;
  double clip_fraction = 0.0;
  for (std::size_t epoch = 0; epoch < std::max<std::size_t>(1, cfg.inner_epochs); ++epoch) {
    clip_fraction = detail::apply_update(updated, ref_policy, steps, batch_contexts, cfg);
  }

  StepStats stats;
  stats.mean_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
  stats.mean_kl = kl_reference(updated, ref_policy, batch_contexts);
  stats.clip_fraction = clip_fraction;
  return {std::move(updated), stats};
}

struct GenerationRecord {
  std::string id;
  std::size_t sample_index = 0;
  std::string completion;
};

struct AdraResult {
  toylm::Policy policy;
  attacks::ScoreTable table;
  std::vector<GenerationRecord> generations;
  std::vector<StepStats> train_log;
};

inline std::string attack_name_for(const rewards::RewardMode& mode) {
  switch (mode.mode) {
    case rewards::Mode::Match: return "adra";
    case rewards::Mode::Adapt: return "adra+";
    case rewards::Mode::Plain: return "rl-plain";
  }
  return "adra";
}

/// Membership priors for ADAPT mode: Min-K%++ scores under the base policy,
/// normalized over the candidate pool.
inline std::vector<rewards::MembershipPrior> adapt_priors(
    const toylm::Policy& base_policy, const std::vector<Candidate>& candidates,
    double k_percent, rewards::PriorNorm norm) {
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) {
    const TokenSeq text = tokenize(c.text);
    const auto ts = toylm::sequence_logprobs(base_policy, text);
    const auto vs = toylm::vocab_stats(base_policy, text);
    scores.push_back(baselines::min_k_pp_score(ts, vs, k_percent));
  }
  return rewards::priors_from_scores(scores, norm);
}

/// The full active attack: S GRPO steps over the candidate batch starting
/// from the target policy, then fresh evaluation samples per candidate at
/// the evaluation temperature, scored against the ground-truth suffix only.
inline AdraResult run_adra(const toylm::Policy& base_policy,
                           const std::vector<Candidate>& candidates,
                           const GrpoConfig& cfg, const attacks::EvalConfig& eval_cfg,
                           std::uint64_t rng_seed) {
  cfg.validate();
  if (candidates.empty()) throw std::invalid_argument("run_adra: no candidates");
  for (const auto& c : candidates) c.validate();

  auto build_pools = [&](std::uint64_t seed) {
    std::vector<rewards::RefPool> pools;
    pools.reserve(candidates.size());
    for (const auto& c : candidates) {
      pools.push_back(rewards::build_pool(c, candidates, cfg.k_distractors, seed));
    }
    return pools;
  };

  std::vector<rewards::RefPool> pools = build_pools(rng::derive_seed(rng_seed, "pools"));
  std::vector<rewards::MembershipPrior> priors;
  if (cfg.reward_mode.mode == rewards::Mode::Adapt) {
    priors = adapt_priors(base_policy, candidates, cfg.prior_k_percent, cfg.prior_norm);
  }

  AdraResult result;
  toylm::Policy policy = base_policy;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    if (cfg.resample_pools && s > 0) pools = build_pools(rng::derive_seed(rng_seed, "pools", s));
    auto [next, stats] = grpo_step(policy, base_policy, candidates, pools, priors, cfg,
                                   rng::derive_seed(rng_seed, "step", s));
    policy = std::move(next);
    stats.step = s;
    result.train_log.push_back(stats);
  }

  const std::size_t m = eval_cfg.n_eval_samples > 0 ? eval_cfg.n_eval_samples
                                                    : cfg.rollouts_per_candidate;
  const std::string attack = attack_name_for(cfg.reward_mode);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenSeq prefix = detail::with_prompt(cfg.prompt_prefix, candidates[i].prefix());
    std::vector<TokenSeq> completions;
    completions.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
      toylm::SamplingConfig scfg = eval_cfg.sampling;
      scfg.rng_seed = rng::derive_seed(rng_seed, "eval", i, j);
      const auto rollout = toylm::sample_completion(policy, prefix, scfg);
      completions.push_back(rollout.text(policy.vocab()));
      result.generations.push_back({candidates[i].id, j, completions.back().source_text});
    }
    attacks::score_candidate_samples(result.table, candidates[i], completions,
                                     eval_cfg.eval_region, attack);
  }
  result.table.sort_canonical();
  result.policy = std::move(policy);
  return result;
}

}  // namespace mialab::grpo
