#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mialab/baselines.hpp"
#include "mialab/candidate.hpp"
#include "mialab/metrics.hpp"
#include "mialab/rng.hpp"
#include "mialab/tokens.hpp"
#include "mialab/toylm.hpp"

namespace mialab::attacks {

/// What the sampled completions are scored against. Suffix-only compares
/// the completion to the held-out suffix alone (the stricter default);
/// full prepends the free prefix to both sides.
enum class EvalRegion { SuffixOnly, Full };

struct EvalConfig {
  std::size_t n_eval_samples = 0;  // 0 = match the rollout budget
  toylm::SamplingConfig sampling{};
  EvalRegion eval_region = EvalRegion::SuffixOnly;
};

/// Sampling settings used during RL training and for the N-Sampling baseline.
inline toylm::SamplingConfig training_sampling(std::size_t max_tokens) {
  toylm::SamplingConfig cfg;
  cfg.temperature = 1.0;
  cfg.top_p = 0.95;
  cfg.top_k = 50;
  cfg.max_tokens = max_tokens;
  return cfg;
}

/// Post-training evaluation settings: lower temperature, same top-p/top-k.
inline toylm::SamplingConfig eval_sampling(std::size_t max_tokens, double temperature = 0.7) {
  toylm::SamplingConfig cfg = training_sampling(max_tokens);
  cfg.temperature = temperature;
  return cfg;
}

struct ScoreRow {
  std::string id;
  std::string attack;
  std::string metric;
  std::string aggregation;  // "aon" / "bon" for sampled attacks, "-" for passives
  double score = 0.0;
};

/// Flat per-candidate score grid across (attack, metric, aggregation).
struct ScoreTable {
  std::vector<ScoreRow> rows;

  void add(ScoreRow row) { rows.push_back(std::move(row)); }

  void sort_canonical() {
    std::sort(rows.begin(), rows.end(), [](const ScoreRow& a, const ScoreRow& b) {
      return std::tie(a.attack, a.metric, a.aggregation, a.id) <
             std::tie(b.attack, b.metric, b.aggregation, b.id);
    });
  }

  /// Rejects duplicate (id, attack, metric, aggregation) keys.
  void validate_unique() const {
    std::vector<std::string> keys;
    keys.reserve(rows.size());
    for (const auto& r : rows) keys.push_back(r.id + '\x1f' + r.attack + '\x1f' + r.metric + '\x1f' + r.aggregation);
    std::sort(keys.begin(), keys.end());
    const auto dup = std::adjacent_find(keys.begin(), keys.end());
    if (dup != keys.end()) throw std::invalid_argument("score table: duplicate key " + *dup);
  }

  /// (attack, metric, aggregation) -> ordered (id, score) pairs.
  std::map<std::tuple<std::string, std::string, std::string>,
           std::vector<std::pair<std::string, double>>>
  grouped() const {
    std::map<std::tuple<std::string, std::string, std::string>,
             std::vector<std::pair<std::string, double>>>
        out;
    for (const auto& r : rows) {
      out[{r.attack, r.metric, r.aggregation}].emplace_back(r.id, r.score);
    }
    for (auto& [k, v] : out) std::sort(v.begin(), v.end());
    return out;
  }

  void append(const ScoreTable& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  }
};

/// Score one candidate's sampled completions against its reference region:
/// the full metric suite per sample, aggregated as average-of-N and
/// best-of-N. Shared by the N-Sampling baseline, the active attacks, and
/// offline ingestion.
inline void score_candidate_samples(ScoreTable& out, const Candidate& cand,
                                    const std::vector<TokenSeq>& completions,
                                    EvalRegion region, const std::string& attack_name) {
  if (completions.empty()) {
    throw std::invalid_argument("score_candidate_samples: no completions for " + cand.id);
  }
  const TokenSeq suffix = cand.suffix();
  const TokenSeq prefix = cand.prefix();
  const TokenSeq full_ref = tokenize(cand.text);

  const auto& names = metrics::metric_names();
  std::vector<double> sum(names.size(), 0.0);
  std::vector<double> best(names.size(), -1.0);
  for (const auto& completion : completions) {
    TokenSeq scored = completion;
    const TokenSeq* ref = &suffix;
    if (region == EvalRegion::Full) {
      std::vector<std::string> toks = prefix.tokens;
      toks.insert(toks.end(), completion.tokens.begin(), completion.tokens.end());
      scored = from_tokens(std::move(toks));
      ref = &full_ref;
    }
    const auto m = metrics::metric_suite(scored, *ref);
    for (std::size_t k = 0; k < names.size(); ++k) {
      const double v = metrics::metric_value(m, names[k]);
      sum[k] += v;
      best[k] = std::max(best[k], v);
    }
  }
  for (std::size_t k = 0; k < names.size(); ++k) {
    out.add({cand.id, attack_name, names[k], "aon",
             sum[k] / static_cast<double>(completions.size())});
    out.add({cand.id, attack_name, names[k], "bon", best[k]});
  }
}

struct GenerationDump {
  std::string id;
  std::size_t sample_index = 0;
  std::string completion;
};

struct NSamplingResult {
  ScoreTable table;
  std::vector<GenerationDump> generations;
};

/// Passive generation baseline: N completions per candidate from the fixed
/// policy, every metric against the reference region, AoN and BoN rows.
inline NSamplingResult n_sampling_attack(const toylm::Policy& policy,
                                         const std::vector<Candidate>& candidates,
                                         std::size_t n, const EvalConfig& cfg,
                                         std::uint64_t rng_seed = 0) {
  if (n < 1) throw std::invalid_argument("n_sampling_attack: n must be >= 1");
  NSamplingResult result;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].validate();
    const TokenSeq prefix = candidates[i].prefix();
    std::vector<TokenSeq> completions;
    completions.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      toylm::SamplingConfig scfg = cfg.sampling;
      scfg.rng_seed = rng::derive_seed(rng_seed, "nsampling", i, j);
      completions.push_back(toylm::sample_completion(policy, prefix, scfg).text(policy.vocab()));
      result.generations.push_back({candidates[i].id, j, completions.back().source_text});
    }
    score_candidate_samples(result.table, candidates[i], completions, cfg.eval_region,
                            "nsampling");
  }
  result.table.sort_canonical();
  return result;
}

/// Externally scoreable per-candidate model outputs (the logprobs dump row).
struct LogprobDump {
  std::string id;
  std::vector<double> token_logprobs;
  std::optional<std::vector<double>> vocab_mu;
  std::optional<std::vector<double>> vocab_sigma;
  std::optional<std::vector<double>> ref_token_logprobs;
};

inline const std::vector<double>& passive_k_sweep() {
  static const std::vector<double> ks = {10.0, 20.0, 30.0, 100.0};
  return ks;
}

namespace detail {

inline std::string k_suffix(double k) {
  const auto rounded = static_cast<long long>(k + 0.5);
  if (std::abs(k - static_cast<double>(rounded)) < 1e-9) return std::to_string(rounded);
  return std::to_string(k);
}

}  // namespace detail

/// All loss-based scores derivable from one candidate's dump: Loss, Zlib,
/// the Min-K% and Min-K%++ sweeps, and R-Loss when reference log-probs are
/// available. Shared by the live attack and offline ingestion.
inline void passive_rows_from_scores(ScoreTable& out, const std::string& id,
                                     const baselines::TokenScores& ts,
                                     const std::optional<baselines::VocabStats>& vs,
                                     const std::optional<baselines::TokenScores>& ref) {
  out.add({id, "loss", "score", "-", baselines::loss_score(ts)});
  out.add({id, "zlib", "score", "-", baselines::zlib_score(ts)});
  for (const double k : passive_k_sweep()) {
    out.add({id, "min_k_" + detail::k_suffix(k), "score", "-", baselines::min_k_score(ts, k)});
    if (vs) {
      out.add({id, "min_k_pp_" + detail::k_suffix(k), "score", "-",
               baselines::min_k_pp_score(ts, *vs, k)});
    }
  }
  if (ref) out.add({id, "r_loss", "score", "-", baselines::ref_loss_score(ts, *ref)});
}

struct PassiveResult {
  ScoreTable table;
  std::vector<LogprobDump> dumps;
};

/// The loss-based attack family, computed from exact toy-LM log-probs over
/// the full candidate text. R-Loss rows appear iff a reference policy is
/// given.
inline PassiveResult passive_attacks(const toylm::Policy& policy,
                                     const toylm::Policy* ref_policy,
                                     const std::vector<Candidate>& candidates) {
  PassiveResult result;
  for (const auto& cand : candidates) {
    cand.validate();
    const TokenSeq text = tokenize(cand.text);
    const auto ts = toylm::sequence_logprobs(policy, text);
    const auto vs = toylm::vocab_stats(policy, text);
    std::optional<baselines::TokenScores> ref;
    if (ref_policy) ref = toylm::sequence_logprobs(*ref_policy, text);
    passive_rows_from_scores(result.table, cand.id, ts, vs, ref);

    LogprobDump dump;
    dump.id = cand.id;
    dump.token_logprobs = ts.logprobs;
    dump.vocab_mu = vs.mu;
    dump.vocab_sigma = vs.sigma;
    if (ref) dump.ref_token_logprobs = ref->logprobs;
    result.dumps.push_back(std::move(dump));
  }
  result.table.sort_canonical();
  return result;
}

}  // namespace mialab::attacks
