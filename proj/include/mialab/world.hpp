#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "mialab/candidate.hpp"
#include "mialab/rng.hpp"
#include "mialab/tokens.hpp"
#include "mialab/toylm.hpp"

namespace mialab::world {

struct WorldConfig {
  std::uint64_t seed = 0;
  std::size_t vocab_size = 50;  // regular tokens; BOS/EOS are added on top
  std::size_t order = 3;
  std::size_t n_members = 64;
  std::size_t n_nonmembers = 64;
  std::size_t seq_len = 60;
  double contamination_rate = 0.10;  // member share of the SFT mix
  double prefix_fraction = 0.5;
  // Hidden-generator shape. Documents alternate between two sticky regimes:
  // passages from a shared concentrated order-1 chain (the formulaic
  // structure every document reuses, which the SFT mix therefore covers)
  // and context-unique passages of mean length unique_run_len (each
  // document's own content). Three per-sequence latents make documents
  // heterogeneous while keeping members and non-members identically
  // distributed:
  //   - the lead-in (prefix region) is chain structure drawn at a chain
  //     temperature ~ U[core_temp_lo, core_temp_hi]: how conventional the
  //     opening is (the likelihood-difficulty axis, symmetric by class);
  //   - with probability suffix_public_frac the remainder is boilerplate
  //     (chain share ~ U[public_core_lo, public_core_hi]) anyone can
  //     continue; otherwise it is mostly the document's own content
  //     (chain share ~ U[private_core_lo, private_core_hi]);
  //   - documents whose remainder is their own content usually introduce
  //     those specifics at the end of the lead-in (handoff_frac_private),
  //     boilerplate documents rarely do (handoff_frac_public); a handoff is
  //     handoff_len forced unique tokens closing the lead-in.
  double gen_scale = 0.7;    // logit std of the context-unique component (low = wide)
  double core_scale = 10.0;  // logit std of the shared chain; higher = more predictable
  double suffix_public_frac = 0.45;
  double public_core_lo = 0.93;
  double public_core_hi = 1.00;
  double private_core_lo = 0.05;
  double private_core_hi = 0.45;
  double core_temp_lo = 0.7;
  double core_temp_hi = 2.0;
  double unique_run_len = 4.0;  // mean length of a context-unique passage
  double handoff_frac_public = 0.3;
  double handoff_frac_private = 0.9;
  std::size_t handoff_len = 1;  // length of that forced unique run
  double sft_lr = 5.0;
  std::size_t sft_epochs = 3;

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("world: vocab_size must be >= 2");
    if (n_members < 1 || n_nonmembers < 1) throw std::invalid_argument("world: need candidates");
    if (seq_len < 2) throw std::invalid_argument("world: seq_len must be >= 2");
    if (!(contamination_rate > 0.0 && contamination_rate <= 1.0)) {
      throw std::invalid_argument("world: contamination_rate must be in (0,1]");
    }
    if (!(prefix_fraction > 0.0 && prefix_fraction < 1.0)) {
      throw std::invalid_argument("world: prefix_fraction must be in (0,1)");
    }
    if (!(gen_scale > 0.0) || !(core_scale > 0.0)) {
      throw std::invalid_argument("world: generator scales must be > 0");
    }
    auto check_range = [](double lo, double hi, const char* what) {
      if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi)) {
        throw std::invalid_argument(std::string("world: ") + what +
                                    " must satisfy 0 <= lo <= hi <= 1");
      }
    };
    check_range(public_core_lo, public_core_hi, "public chain-share range");
    check_range(private_core_lo, private_core_hi, "private chain-share range");
    if (!(suffix_public_frac >= 0.0 && suffix_public_frac <= 1.0)) {
      throw std::invalid_argument("world: suffix_public_frac must be in [0,1]");
    }
    if (!(core_temp_lo > 0.0 && core_temp_lo <= core_temp_hi)) {
      throw std::invalid_argument("world: core temperature range must satisfy 0 < lo <= hi");
    }
    if (!(unique_run_len >= 1.0)) {
      throw std::invalid_argument("world: unique_run_len must be >= 1");
    }
    if (!(handoff_frac_public >= 0.0 && handoff_frac_public <= 1.0) ||
        !(handoff_frac_private >= 0.0 && handoff_frac_private <= 1.0)) {
      throw std::invalid_argument("world: handoff fractions must be in [0,1]");
    }
  }
};

namespace detail {

/// Hidden data source: a procedural softmax LM whose logits are pure hashes
/// of (seed, context, token), so contexts are consistent across queries
/// without materializing any table. Each step mixes a shared concentrated
/// order-1 chain (reused across all documents, so the SFT mix covers it)
/// with a context-unique trigram component (each document's own content).
/// Specials are never emitted.
class GeneratorLm {
 public:
  GeneratorLm(const toylm::Vocab& vocab, std::size_t order, std::uint64_t seed,
              double diverse_scale, double core_scale)
      : vocab_(vocab), order_(order), seed_(seed),
        diverse_scale_(diverse_scale), core_scale_(core_scale) {}

  /// One document of `len` tokens. Generation alternates between two sticky
  /// regimes: shared-chain passages and context-unique passages of mean
  /// length `unique_run_len`. The chain share is `prefix_core_frac` for the
  /// first `prefix_len` positions (drawn at chain temperature `core_temp`)
  /// and `tail_core_frac` afterwards (at temperature 1). When `handoff` is
  /// set, the last `handoff_len` lead-in positions are forced into the
  /// unique regime (the document introduces its specifics right before the
  /// continuation).
  std::vector<std::string> sample_sequence(std::size_t len, std::size_t prefix_len,
                                           double prefix_core_frac, double tail_core_frac,
                                           double core_temp, double unique_run_len,
                                           bool handoff, std::size_t handoff_len,
                                           rng::Rng& rng) const {
    const double leave_unique = 1.0 / unique_run_len;
    auto enter_rate = [&](double frac) {
      return frac > 0.0 ? std::min(1.0, (1.0 - frac) / (frac * unique_run_len)) : 1.0;
    };
    bool in_unique = rng.bernoulli(1.0 - prefix_core_frac);  // stationary start
    std::vector<toylm::TokenId> history;
    std::vector<std::string> tokens;
    tokens.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
      const bool in_prefix = t < prefix_len;
      const bool in_handoff = handoff && in_prefix && t + handoff_len >= prefix_len;
      if (in_handoff) {
        in_unique = true;
      } else if (in_unique) {
        if (rng.bernoulli(leave_unique)) in_unique = false;
      } else if (rng.bernoulli(enter_rate(in_prefix ? prefix_core_frac : tail_core_frac))) {
        in_unique = true;
      }
      const double temp = in_prefix ? core_temp : 1.0;
      const auto probs = in_unique ? diverse_probs(history) : core_probs(history, temp);
      const auto idx = rng.categorical(probs);
      const auto id = static_cast<toylm::TokenId>(idx + 2);  // skip BOS/EOS slots
      tokens.push_back(vocab_.symbol(id));
      history.push_back(id);
    }
    return tokens;
  }

 private:
  std::vector<double> hashed_softmax(std::uint64_t ctx_hash, double scale) const {
    const std::size_t n_regular = vocab_.size() - 2;
    std::vector<double> logits(n_regular);
    double hi = -1e300;
    for (std::size_t v = 0; v < n_regular; ++v) {
      logits[v] = scale * hashed_normal(rng::mix(ctx_hash, v));
      hi = std::max(hi, logits[v]);
    }
    double sum = 0.0;
    for (double& z : logits) {
      z = std::exp(z - hi);
      sum += z;
    }
    for (double& z : logits) z /= sum;
    return logits;
  }

  /// Chain distribution with truncated tempering: temperature redistributes
  /// mass among the top few chain continuations only, so atypical draws
  /// remain inside the lattice every document shares (an unconventional but
  /// still idiomatic phrasing, not novel content).
  std::vector<double> core_probs(const std::vector<toylm::TokenId>& history,
                                 double temperature) const {
    const std::uint64_t last =
        history.empty() ? 0xb05u : static_cast<std::uint64_t>(history.back());
    auto p = hashed_softmax(rng::derive_seed(seed_, "core", last), core_scale_);
    if (temperature == 1.0) return p;
    constexpr std::size_t kTemperTop = 3;
    std::vector<std::size_t> order(p.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::partial_sort(order.begin(), order.begin() + kTemperTop, order.end(),
                      [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    double top_mass = 0.0, tempered_sum = 0.0;
    std::array<double, kTemperTop> tempered{};
    for (std::size_t r = 0; r < kTemperTop; ++r) {
      top_mass += p[order[r]];
      tempered[r] = std::pow(p[order[r]], 1.0 / temperature);
      tempered_sum += tempered[r];
    }
    for (std::size_t r = 0; r < kTemperTop; ++r) {
      p[order[r]] = top_mass * tempered[r] / tempered_sum;
    }
    return p;
  }

  std::vector<double> diverse_probs(const std::vector<toylm::TokenId>& history) const {
    toylm::Context ctx(order_, toylm::kBosId);
    const std::size_t take = std::min(order_, history.size());
    for (std::size_t i = 0; i < take; ++i) ctx[order_ - 1 - i] = history[history.size() - 1 - i];
    const std::string key = toylm::detail::pack_context(ctx);
    return hashed_softmax(rng::fnv1a(key, rng::mix(0xcbf29ce484222325ull, seed_)), diverse_scale_);
  }

  static double hashed_normal(std::uint64_t h) {
    const double u1 = std::max(1e-12, static_cast<double>(rng::splitmix64(h) >> 11) * 0x1.0p-53);
    const double u2 = static_cast<double>(rng::splitmix64(h ^ 0x5851f42d4c957f2dull) >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  const toylm::Vocab& vocab_;
  std::size_t order_;
  std::uint64_t seed_;
  double diverse_scale_;
  double core_scale_;
};

/// Word inventory with varied surface lengths (1-12 lowercase letters), so
/// byte-level measures such as compressed size carry the same accidental
/// variance real text has.
inline toylm::Vocab surface_vocab(std::size_t n, std::uint64_t seed) {
  rng::Rng rng(seed);
  std::unordered_set<std::string> used;
  std::vector<std::string> words;
  words.reserve(n);
  while (words.size() < n) {
    const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform() * 12.0);
    std::string word;
    for (std::size_t i = 0; i < len; ++i) {
      word += static_cast<char>('a' + static_cast<int>(rng.uniform() * 26.0));
    }
    if (word == toylm::kBosSymbol || word == toylm::kEosSymbol) continue;
    if (used.insert(word).second) words.push_back(std::move(word));
  }
  return toylm::Vocab::with_regular(words);
}

}  // namespace detail

/// A complete synthetic contamination setup: candidates with ground-truth
/// labels, the SFT'd target policy, and the clean pre-SFT reference.
struct World {
  WorldConfig config;
  toylm::Vocab vocab;
  std::vector<LabeledCandidate> members;
  std::vector<LabeledCandidate> nonmembers;
  std::vector<TokenSeq> filler;        // SFT padding corpus, label-free by construction
  toylm::Policy base_policy;           // the attacked model (post SFT)
  toylm::Policy ref_policy;            // pre-SFT prior (uniform); R-Loss calibration

  /// Attack-facing view: members then nonmembers, labels stripped.
  std::vector<Candidate> candidates() const {
    std::vector<Candidate> out;
    out.reserve(members.size() + nonmembers.size());
    for (const auto& lc : members) out.push_back(lc.candidate);
    for (const auto& lc : nonmembers) out.push_back(lc.candidate);
    return out;
  }

  std::vector<LabeledCandidate> labeled() const {
    std::vector<LabeledCandidate> out = members;
    out.insert(out.end(), nonmembers.begin(), nonmembers.end());
    return out;
  }

  Label label_of(const std::string& id) const {
    for (const auto& lc : members) {
      if (lc.candidate.id == id) return Label::Member;
    }
    for (const auto& lc : nonmembers) {
      if (lc.candidate.id == id) return Label::NonMember;
    }
    throw std::invalid_argument("world: unknown candidate id " + id);
  }
};

/// Build the contamination world: draw a hidden generator, sample member,
/// non-member and filler corpora i.i.d. from it (members and non-members
/// are distributionally identical), then SFT the uniform prior on the
/// member+filler mix with members making up contamination_rate of it.
inline World make_world(const WorldConfig& config) {
  config.validate();
  World w;
  w.config = config;
  w.vocab = detail::surface_vocab(config.vocab_size, rng::derive_seed(config.seed, "vocab"));
  const detail::GeneratorLm generator(w.vocab, config.order, rng::derive_seed(config.seed, "generator"),
                                      config.gen_scale, config.core_scale);

  std::unordered_set<std::string> seen_texts;
  auto draw_text = [&](const char* pool, std::size_t index) {
    for (std::size_t attempt = 0; attempt < 1000; ++attempt) {
      rng::Rng rng(rng::derive_seed(config.seed, "corpus", rng::fnv1a(pool), index, attempt));
      const bool public_suffix = rng.bernoulli(config.suffix_public_frac);
      const double lo = public_suffix ? config.public_core_lo : config.private_core_lo;
      const double hi = public_suffix ? config.public_core_hi : config.private_core_hi;
      const double tail_core_frac = lo + rng.uniform() * (hi - lo);
      const double core_temp =
          config.core_temp_lo + rng.uniform() * (config.core_temp_hi - config.core_temp_lo);
      const auto prefix_len = static_cast<std::size_t>(config.prefix_fraction *
                                                       static_cast<double>(config.seq_len));
      const bool handoff = rng.bernoulli(public_suffix ? config.handoff_frac_public
                                                       : config.handoff_frac_private);
      const auto tokens = generator.sample_sequence(
          config.seq_len, prefix_len, /*prefix_core_frac=*/1.0, tail_core_frac, core_temp,
          config.unique_run_len, handoff, config.handoff_len, rng);
      const std::string text = from_tokens(tokens).source_text;
      if (seen_texts.insert(text).second) return text;
    }
    throw std::runtime_error("make_world: generator cannot produce enough distinct sequences; "
                             "lower the generator scales or enlarge the vocabulary");
  };

  auto pad_id = [](const char* prefix, std::size_t i) {
    std::string num = std::to_string(i);
    while (num.size() < 4) num.insert(num.begin(), '0');
    return std::string(prefix) + "-" + num;
  };

  for (std::size_t i = 0; i < config.n_members; ++i) {
    Candidate c{pad_id("member", i), draw_text("member", i), config.prefix_fraction};
    c.validate();
    w.members.push_back({std::move(c), Label::Member});
  }
  for (std::size_t i = 0; i < config.n_nonmembers; ++i) {
    Candidate c{pad_id("nonmember", i), draw_text("nonmember", i), config.prefix_fraction};
    c.validate();
    w.nonmembers.push_back({std::move(c), Label::NonMember});
  }

  const auto n_filler = static_cast<std::size_t>(std::llround(
      static_cast<double>(config.n_members) * (1.0 - config.contamination_rate) /
      config.contamination_rate));
  for (std::size_t i = 0; i < n_filler; ++i) {
    w.filler.push_back(tokenize(draw_text("filler", i)));
  }

  w.ref_policy = toylm::Policy(w.vocab, config.order);
  std::vector<TokenSeq> sft_mix;
  sft_mix.reserve(config.n_members + n_filler);
  for (const auto& lc : w.members) sft_mix.push_back(tokenize(lc.candidate.text));
  for (const auto& f : w.filler) sft_mix.push_back(f);
  w.base_policy = config.sft_epochs > 0
                      ? toylm::sft_update(w.ref_policy, sft_mix, config.sft_lr, config.sft_epochs)
                      : w.ref_policy;
  return w;
}

}  // namespace mialab::world
