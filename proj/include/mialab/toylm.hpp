#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mialab/baselines.hpp"
#include "mialab/rng.hpp"
#include "mialab/tokens.hpp"

namespace mialab::toylm {

using TokenId = std::int32_t;

constexpr TokenId kBosId = 0;
constexpr TokenId kEosId = 1;
constexpr const char* kBosSymbol = "<s>";
constexpr const char* kEosSymbol = "</s>";

/// Ordered token inventory; BOS and EOS are reserved at indices 0 and 1.
class Vocab {
 public:
  Vocab() = default;

  /// Vocab from regular (non-special) symbols; specials are prepended.
  static Vocab with_regular(const std::vector<std::string>& regular) {
    std::vector<std::string> all{kBosSymbol, kEosSymbol};
    all.insert(all.end(), regular.begin(), regular.end());
    return Vocab(std::move(all));
  }

  /// n single-token symbols t00, t01, ... (zero-padded to equal width).
  static Vocab synthetic(std::size_t n) {
    std::vector<std::string> regular;
    regular.reserve(n);
    const int width = n > 100 ? 3 : 2;
    for (std::size_t i = 0; i < n; ++i) {
      std::string num = std::to_string(i);
      while (static_cast<int>(num.size()) < width) num.insert(num.begin(), '0');
      regular.push_back("t" + num);
    }
    return with_regular(regular);
  }

  explicit Vocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    if (symbols_.size() < 2) throw std::invalid_argument("vocab: need at least BOS and EOS");
    if (symbols_[kBosId] != kBosSymbol || symbols_[kEosId] != kEosSymbol) {
      throw std::invalid_argument("vocab: symbols[0] must be BOS and symbols[1] EOS");
    }
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      const auto& s = symbols_[i];
      if (s.empty()) throw std::invalid_argument("vocab: empty symbol");
      if (tokenize(s).size() != 1) {
        throw std::invalid_argument("vocab: symbol contains whitespace: '" + s + "'");
      }
      if (!index_.emplace(s, static_cast<TokenId>(i)).second) {
        throw std::invalid_argument("vocab: duplicate symbol '" + s + "'");
      }
    }
  }

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  TokenId id_of(std::string_view symbol) const {
    const auto it = index_.find(std::string(symbol));
    if (it == index_.end()) {
      throw std::invalid_argument("vocab: unknown token '" + std::string(symbol) + "'");
    }
    return it->second;
  }

  std::vector<TokenId> encode(const TokenSeq& seq) const {
    std::vector<TokenId> ids;
    ids.reserve(seq.size());
    for (const auto& tok : seq.tokens) ids.push_back(id_of(tok));
    return ids;
  }

  bool operator==(const Vocab& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
};

using Context = std::vector<TokenId>;

namespace detail {

inline std::string pack_context(std::span<const TokenId> ctx) {
  std::string key(ctx.size() * sizeof(TokenId), '\0');
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    const auto v = static_cast<std::uint32_t>(ctx[i]);
    key[4 * i + 0] = static_cast<char>(v & 0xffu);
    key[4 * i + 1] = static_cast<char>((v >> 8) & 0xffu);
    key[4 * i + 2] = static_cast<char>((v >> 16) & 0xffu);
    key[4 * i + 3] = static_cast<char>((v >> 24) & 0xffu);
  }
  return key;
}

inline Context unpack_context(std::string_view key) {
  Context ctx(key.size() / sizeof(TokenId));
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) {
      v = (v << 8) | static_cast<unsigned char>(key[4 * i + static_cast<std::size_t>(b)]);
    }
    ctx[i] = static_cast<TokenId>(v);
  }
  return ctx;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Tabular context-conditioned softmax language model. Each context tuple
/// of `order` preceding token ids maps to a logit vector over the whole
/// vocabulary; contexts never stored are implicitly all-zeros (uniform).
class Policy {
 public:
  Policy() = default;
  Policy(Vocab vocab, std::size_t order) : vocab_(std::move(vocab)), order_(order) {
    if (order_ < 1) throw std::invalid_argument("policy: order must be >= 1");
  }

  const Vocab& vocab() const { return vocab_; }
  std::size_t order() const { return order_; }
  std::size_t stored_contexts() const { return logits_.size(); }

  /// Last `order` ids of the BOS-padded history.
  Context normalize_context(std::span<const TokenId> history) const {
    Context ctx(order_, kBosId);
    const std::size_t take = std::min(order_, history.size());
    for (std::size_t i = 0; i < take; ++i) {
      ctx[order_ - 1 - i] = history[history.size() - 1 - i];
    }
    return ctx;
  }

  /// Logit vector for a normalized context; zeros if never stored.
  std::vector<double> logits_at(const Context& ctx) const {
    const auto it = logits_.find(detail::pack_context(ctx));
    if (it == logits_.end()) return std::vector<double>(vocab_.size(), 0.0);
    return it->second;
  }

  std::vector<double>& mutable_logits(const Context& ctx) {
    auto [it, inserted] = logits_.try_emplace(detail::pack_context(ctx));
    if (inserted) it->second.assign(vocab_.size(), 0.0);
    return it->second;
  }

  bool has_context(const Context& ctx) const {
    return logits_.count(detail::pack_context(ctx)) > 0;
  }

  /// Stored contexts in canonical (byte-lexicographic) order.
  std::vector<Context> contexts_sorted() const {
    std::vector<std::string_view> keys;
    keys.reserve(logits_.size());
    for (const auto& [k, _] : logits_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    std::vector<Context> out;
    out.reserve(keys.size());
    for (const auto& k : keys) out.push_back(detail::unpack_context(k));
    return out;
  }

  const std::unordered_map<std::string, std::vector<double>>& table() const { return logits_; }

 private:
  Vocab vocab_;
  std::size_t order_ = 1;
  std::unordered_map<std::string, std::vector<double>> logits_;
};

/// Largest absolute logit difference between two policies over the union
/// of their stored contexts (missing contexts count as zeros).
inline double max_param_delta(const Policy& a, const Policy& b) {
  double delta = 0.0;
  auto scan = [&](const Policy& x, const Policy& y) {
    for (const auto& [key, lx] : x.table()) {
      const auto ctx = detail::unpack_context(key);
      const auto ly = y.logits_at(ctx);
      for (std::size_t v = 0; v < lx.size(); ++v) {
        delta = std::max(delta, std::abs(lx[v] - ly[v]));
      }
    }
  };
  scan(a, b);
  scan(b, a);
  return delta;
}

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 0.95;
  std::size_t top_k = 50;  // 0 = unlimited
  std::size_t max_tokens = 64;
  std::uint64_t rng_seed = 0;
};

enum class StopReason { Eos, MaxTokens };

/// One sampled completion. token_ids includes the terminal EOS when the
/// rollout ended on it; logprobs_old are per-token log-probabilities under
/// the unfiltered temperature-1 distribution at sampling time.
struct Rollout {
  std::vector<TokenId> token_ids;
  std::vector<double> logprobs_old;
  StopReason stop = StopReason::MaxTokens;

  /// Completion as text, special markers skipped.
  TokenSeq text(const Vocab& vocab) const {
    std::vector<std::string> toks;
    toks.reserve(token_ids.size());
    for (TokenId id : token_ids) {
      if (id == kBosId || id == kEosId) continue;
      toks.push_back(vocab.symbol(id));
    }
    return from_tokens(std::move(toks));
  }
};

namespace detail {

/// Log-softmax of logits/temperature, numerically stable.
inline std::vector<double> log_softmax(const std::vector<double>& logits, double temperature) {
  std::vector<double> out(logits.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (double z : logits) hi = std::max(hi, z / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / temperature - hi;
    sum += std::exp(out[i]);
  }
  const double lse = std::log(sum);
  for (double& v : out) v -= lse;
  return out;
}

}  // namespace detail

/// Next-token distribution softmax(logits / temperature); sums to one.
inline std::vector<double> next_token_dist(const Policy& policy,
                                           std::span<const TokenId> context,
                                           double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("next_token_dist: temperature must be > 0");
  const auto ctx = policy.normalize_context(context);
  const auto lp = detail::log_softmax(policy.logits_at(ctx), temperature);
  std::vector<double> p(lp.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(lp[i]);
  return p;
}

/// Top-k then top-p filtering with renormalization. Keeps the top_k most
/// probable tokens, then the smallest descending-probability prefix whose
/// mass reaches top_p. Ties break toward the lower vocabulary index.
inline std::vector<double> filter_dist(const std::vector<double>& dist,
                                       std::size_t top_k, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("filter_dist: top_p must be in (0,1]");
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] > dist[b];
    return a < b;
  });
  const std::size_t keep_k = top_k == 0 ? dist.size() : std::min(top_k, dist.size());
  std::vector<double> kept(dist.size(), 0.0);
  double mass = 0.0;
  for (std::size_t r = 0; r < keep_k; ++r) {
    const std::size_t idx = order[r];
    kept[idx] = dist[idx];
    mass += dist[idx];
    if (mass >= top_p) break;
  }
  for (double& v : kept) v /= mass;
  return kept;
}

/// Autoregressive sampling through filter_dist until EOS or max_tokens.
inline Rollout sample_completion(const Policy& policy, const TokenSeq& prefix,
                                 const SamplingConfig& cfg) {
  std::vector<TokenId> history = policy.vocab().encode(prefix);
  rng::Rng rng(cfg.rng_seed);
  Rollout out;
  while (out.token_ids.size() < cfg.max_tokens) {
    const auto ctx = policy.normalize_context(history);
    const auto logits = policy.logits_at(ctx);
    const auto lp1 = detail::log_softmax(logits, 1.0);
    std::vector<double> dist(lp1.size());
    if (cfg.temperature == 1.0) {
      for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = std::exp(lp1[i]);
    } else {
      const auto lpt = detail::log_softmax(logits, cfg.temperature);
      for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = std::exp(lpt[i]);
    }
    const auto filtered = filter_dist(dist, cfg.top_k, cfg.top_p);
    const auto picked = static_cast<TokenId>(rng.categorical(filtered));
    out.token_ids.push_back(picked);
    out.logprobs_old.push_back(lp1[static_cast<std::size_t>(picked)]);
    history.push_back(picked);
    if (picked == kEosId) {
      out.stop = StopReason::Eos;
      return out;
    }
  }
  out.stop = StopReason::MaxTokens;
  return out;
}

/// Exact per-token log p(x_i | x_<i) at temperature 1.
inline baselines::TokenScores sequence_logprobs(const Policy& policy, const TokenSeq& text) {
  const auto ids = policy.vocab().encode(text);
  baselines::TokenScores ts;
  ts.text = text.source_text;
  ts.logprobs.reserve(ids.size());
  std::vector<TokenId> history;
  for (const TokenId id : ids) {
    const auto ctx = policy.normalize_context(history);
    const auto lp = detail::log_softmax(policy.logits_at(ctx), 1.0);
    ts.logprobs.push_back(std::min(lp[static_cast<std::size_t>(id)], 0.0));
    history.push_back(id);
  }
  return ts;
}

/// Exact per-position mean and population std of next-token log-probs over
/// the whole vocabulary (the Min-K%++ normalizers).
inline baselines::VocabStats vocab_stats(const Policy& policy, const TokenSeq& text) {
  const auto ids = policy.vocab().encode(text);
  baselines::VocabStats vs;
  std::vector<TokenId> history;
  for (const TokenId id : ids) {
    const auto ctx = policy.normalize_context(history);
    const auto lp = detail::log_softmax(policy.logits_at(ctx), 1.0);
    double mu = 0.0;
    for (double v : lp) mu += v;
    mu /= static_cast<double>(lp.size());
    double var = 0.0;
    for (double v : lp) var += (v - mu) * (v - mu);
    var /= static_cast<double>(lp.size());
    vs.mu.push_back(mu);
    vs.sigma.push_back(std::sqrt(var));
    history.push_back(id);
  }
  return vs;
}

/// Gradient of log softmax(logits[ctx])[token] with respect to that
/// context's logit vector: one-hot(token) - p. Zero for all other contexts.
inline std::vector<double> logpi_grad(const Policy& policy, std::span<const TokenId> context,
                                      TokenId token) {
  if (token < 0 || static_cast<std::size_t>(token) >= policy.vocab().size()) {
    throw std::invalid_argument("logpi_grad: token id out of range");
  }
  auto grad = next_token_dist(policy, context, 1.0);
  for (double& v : grad) v = -v;
  grad[static_cast<std::size_t>(token)] += 1.0;
  return grad;
}

/// Mean per-position log-likelihood of the corpus, terminal EOS included
/// (the quantity sft_update ascends).
inline double corpus_log_likelihood(const Policy& policy, const std::vector<TokenSeq>& corpus) {
  double total = 0.0;
  std::size_t positions = 0;
  for (const auto& seq : corpus) {
    auto ids = policy.vocab().encode(seq);
    ids.push_back(kEosId);
    std::vector<TokenId> history;
    for (const TokenId id : ids) {
      const auto ctx = policy.normalize_context(history);
      const auto lp = detail::log_softmax(policy.logits_at(ctx), 1.0);
      total += lp[static_cast<std::size_t>(id)];
      history.push_back(id);
      ++positions;
    }
  }
  return total / static_cast<double>(positions);
}

/// Full-batch maximum-likelihood ascent. Each epoch accumulates the exact
/// log-likelihood gradient over the corpus (terminal EOS transitions
/// included), normalized per context by its occurrence count so the step
/// scale is corpus-size independent, then applies one step of size lr.
/// Contexts never visited by the corpus are untouched.
inline Policy sft_update(const Policy& policy, const std::vector<TokenSeq>& corpus,
                         double lr, std::size_t epochs) {
  if (corpus.empty()) throw std::invalid_argument("sft_update: empty corpus");
  if (!(lr >= 0.0)) throw std::invalid_argument("sft_update: negative learning rate");
  Policy out = policy;
  std::vector<std::vector<TokenId>> encoded;
  encoded.reserve(corpus.size());
  for (const auto& seq : corpus) {
    auto ids = out.vocab().encode(seq);
    ids.push_back(kEosId);
    encoded.push_back(std::move(ids));
  }
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::unordered_map<std::string, std::pair<std::vector<double>, std::size_t>> grad;
    for (const auto& ids : encoded) {
      std::vector<TokenId> history;
      for (const TokenId id : ids) {
        const auto ctx = out.normalize_context(history);
        const auto lp = detail::log_softmax(out.logits_at(ctx), 1.0);
        auto [it, inserted] = grad.try_emplace(detail::pack_context(ctx));
        if (inserted) it->second.first.assign(out.vocab().size(), 0.0);
        auto& [g, count] = it->second;
        for (std::size_t v = 0; v < g.size(); ++v) g[v] -= std::exp(lp[v]);
        g[static_cast<std::size_t>(id)] += 1.0;
        ++count;
        history.push_back(id);
      }
    }
    for (const auto& [key, entry] : grad) {
      const auto& [g, count] = entry;
      auto& z = out.mutable_logits(detail::unpack_context(key));
      for (std::size_t v = 0; v < z.size(); ++v) {
        z[v] += lr * g[v] / static_cast<double>(count);
      }
    }
  }
  return out;
}

// --- serialization ------------------------------------------------------

/// Versioned flat text format; floats use shortest round-trip notation.
inline void save_policy(const Policy& policy, std::ostream& os) {
  os << "toylm-policy v1\n";
  os << "order " << policy.order() << "\n";
  os << "vocab " << policy.vocab().size() << "\n";
  for (const auto& s : policy.vocab().symbols()) os << s << "\n";
  const auto contexts = policy.contexts_sorted();
  os << "contexts " << contexts.size() << "\n";
  for (const auto& ctx : contexts) {
    for (std::size_t i = 0; i < ctx.size(); ++i) os << (i ? " " : "") << ctx[i];
    os << " :";
    for (const double z : policy.logits_at(ctx)) os << ' ' << detail::format_double(z);
    os << "\n";
  }
}

inline void save_policy_file(const Policy& policy, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write policy file: " + path);
  save_policy(policy, os);
}

inline Policy load_policy(std::istream& is) {
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(is, line)) throw std::runtime_error(std::string("policy file: missing ") + what);
    return line;
  };
  if (next_line("header") != "toylm-policy v1") {
    throw std::runtime_error("policy file: bad header '" + line + "'");
  }
  std::size_t order = 0, vocab_size = 0, n_contexts = 0;
  {
    std::istringstream ss(next_line("order"));
    std::string tag;
    if (!(ss >> tag >> order) || tag != "order") throw std::runtime_error("policy file: bad order line");
  }
  {
    std::istringstream ss(next_line("vocab"));
    std::string tag;
    if (!(ss >> tag >> vocab_size) || tag != "vocab") throw std::runtime_error("policy file: bad vocab line");
  }
  std::vector<std::string> symbols;
  for (std::size_t i = 0; i < vocab_size; ++i) symbols.push_back(next_line("vocab symbol"));
  Policy policy(Vocab(std::move(symbols)), order);
  {
    std::istringstream ss(next_line("contexts"));
    std::string tag;
    if (!(ss >> tag >> n_contexts) || tag != "contexts") throw std::runtime_error("policy file: bad contexts line");
  }
  for (std::size_t c = 0; c < n_contexts; ++c) {
    std::istringstream ss(next_line("context row"));
    Context ctx(order);
    for (auto& id : ctx) {
      if (!(ss >> id)) throw std::runtime_error("policy file: truncated context row");
    }
    std::string sep;
    if (!(ss >> sep) || sep != ":") throw std::runtime_error("policy file: missing ':' separator");
    auto& z = policy.mutable_logits(ctx);
    for (auto& v : z) {
      std::string tok;
      if (!(ss >> tok)) throw std::runtime_error("policy file: truncated logit row");
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw std::runtime_error("policy file: bad float '" + tok + "'");
      }
    }
  }
  return policy;
}

inline Policy load_policy_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read policy file: " + path);
  return load_policy(is);
}

}  // namespace mialab::toylm
