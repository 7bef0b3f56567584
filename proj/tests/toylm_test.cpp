#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "mialab/rng.hpp"
#include "mialab/tokens.hpp"
#include "mialab/toylm.hpp"

using namespace mialab;
using namespace mialab::toylm;

namespace {

Policy uniform_policy(std::size_t regular, std::size_t order = 3) {
  return Policy(Vocab::synthetic(regular), order);
}

Policy random_policy(std::size_t regular, std::size_t order, std::uint64_t seed,
                     std::size_t n_contexts, double scale = 1.0) {
  Policy p(Vocab::synthetic(regular), order);
  rng::Rng rng(seed);
  const auto v = p.vocab().size();
  for (std::size_t c = 0; c < n_contexts; ++c) {
    Context ctx(order);
    for (auto& id : ctx) id = static_cast<TokenId>(rng.uniform() * static_cast<double>(v));
    auto& z = p.mutable_logits(ctx);
    for (auto& x : z) x = scale * rng.normal();
  }
  return p;
}

}  // namespace

TEST(NextTokenDist, UnseenContextIsUniform) {
  const auto p = uniform_policy(2);  // |V| = 4
  const Context ctx{kBosId, kBosId, kBosId};
  const auto d = next_token_dist(p, ctx, 1.0);
  ASSERT_EQ(d.size(), 4u);
  for (double x : d) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(NextTokenDist, ClosedFormTwoLogits) {
  Policy p(Vocab::with_regular({"a", "b"}), 1);
  auto& z = p.mutable_logits({kBosId});
  z = {0.0, 0.0, 1.0, 0.0};  // BOS, EOS, a, b
  const auto d = next_token_dist(p, Context{kBosId}, 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(d[2] / (d[2] + d[0]), e / (e + 1.0), 1e-12);  // pairwise odds e : 1
  EXPECT_NEAR(d[2], e / (e + 3.0), 1e-12);
}

TEST(NextTokenDist, HighTemperatureLimitIsUniform) {
  auto p = random_policy(10, 2, 5, 20, 3.0);
  const Context ctx = p.contexts_sorted().front();
  const auto d = next_token_dist(p, ctx, 1e6);
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  EXPECT_LT(*hi - *lo, 1e-6);
}

TEST(NextTokenDist, SumsToOne) {
  auto p = random_policy(30, 3, 6, 50, 2.0);
  for (const auto& ctx : p.contexts_sorted()) {
    for (double temp : {0.3, 0.7, 1.0, 2.5}) {
      const auto d = next_token_dist(p, ctx, temp);
      double sum = 0.0;
      for (double x : d) {
        ASSERT_GE(x, 0.0);
        sum += x;
      }
      ASSERT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(FilterDist, IdentityWhenUnconstrained) {
  const std::vector<double> d{0.4, 0.1, 0.3, 0.2};
  const auto f = filter_dist(d, 0, 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(f[i], d[i], 1e-15);
}

TEST(FilterDist, TopPKnownValue) {
  const auto f = filter_dist({0.5, 0.3, 0.2}, 0, 0.8);
  EXPECT_NEAR(f[0], 0.625, 1e-12);
  EXPECT_NEAR(f[1], 0.375, 1e-12);
  EXPECT_DOUBLE_EQ(f[2], 0.0);
}

TEST(FilterDist, TopOneIsArgmax) {
  const auto f = filter_dist({0.2, 0.5, 0.3}, 1, 1.0);
  EXPECT_DOUBLE_EQ(f[0], 0.0);
  EXPECT_DOUBLE_EQ(f[1], 1.0);
  EXPECT_DOUBLE_EQ(f[2], 0.0);
}

TEST(FilterDist, TieBreaksTowardLowerIndex) {
  const auto f = filter_dist({0.25, 0.25, 0.25, 0.25}, 1, 1.0);
  EXPECT_DOUBLE_EQ(f[0], 1.0);
  const auto g = filter_dist({0.25, 0.25, 0.25, 0.25}, 0, 0.5);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.5);
  EXPECT_DOUBLE_EQ(g[2], 0.0);
}

TEST(SampleCompletion, GreedyReproducesChain) {
  Policy p(Vocab::synthetic(5), 3);
  const TokenId t0 = 2, t1 = 3, t2 = 4;
  p.mutable_logits({kBosId, kBosId, kBosId})[static_cast<std::size_t>(t0)] = 50.0;
  p.mutable_logits({kBosId, kBosId, t0})[static_cast<std::size_t>(t1)] = 50.0;
  p.mutable_logits({kBosId, t0, t1})[static_cast<std::size_t>(t2)] = 50.0;
  p.mutable_logits({t0, t1, t2})[static_cast<std::size_t>(kEosId)] = 50.0;
  SamplingConfig cfg;
  cfg.top_k = 1;
  cfg.max_tokens = 10;
  cfg.rng_seed = 77;
  const auto r = sample_completion(p, TokenSeq{}, cfg);
  EXPECT_EQ(r.token_ids, (std::vector<TokenId>{t0, t1, t2, kEosId}));
  EXPECT_EQ(r.stop, StopReason::Eos);
  EXPECT_EQ(r.logprobs_old.size(), r.token_ids.size());
  EXPECT_EQ(r.text(p.vocab()).tokens, (std::vector<std::string>{"t00", "t01", "t02"}));
}

TEST(SampleCompletion, DeterministicGivenSeed) {
  auto p = random_policy(20, 3, 11, 200, 1.5);
  SamplingConfig cfg;
  cfg.max_tokens = 30;
  cfg.rng_seed = 1234;
  const auto a = sample_completion(p, TokenSeq{}, cfg);
  const auto b = sample_completion(p, TokenSeq{}, cfg);
  EXPECT_EQ(a.token_ids, b.token_ids);
  EXPECT_EQ(a.logprobs_old, b.logprobs_old);
  cfg.rng_seed = 1235;
  const auto c = sample_completion(p, TokenSeq{}, cfg);
  EXPECT_NE(a.token_ids, c.token_ids);
}

TEST(SampleCompletion, OutOfVocabPrefixThrows) {
  const auto p = uniform_policy(4);
  SamplingConfig cfg;
  EXPECT_THROW(sample_completion(p, tokenize("nope"), cfg), std::invalid_argument);
}

TEST(SampleCompletion, MaxTokensBoundsLength) {
  auto p = uniform_policy(30);
  SamplingConfig cfg;
  cfg.max_tokens = 7;
  for (int i = 0; i < 20; ++i) {
    cfg.rng_seed = static_cast<std::uint64_t>(i);
    const auto r = sample_completion(p, TokenSeq{}, cfg);
    EXPECT_LE(r.token_ids.size(), 7u);
    if (r.stop == StopReason::MaxTokens) EXPECT_EQ(r.token_ids.size(), 7u);
    ASSERT_EQ(r.logprobs_old.size(), r.token_ids.size());
    for (double lp : r.logprobs_old) EXPECT_LE(lp, 0.0);
  }
}

TEST(SampleCompletion, EmpiricalFrequenciesMatchExactDist) {
  Policy p(Vocab::synthetic(10), 3);
  {
    rng::Rng rng(3);
    auto& z = p.mutable_logits({kBosId, kBosId, kBosId});
    for (auto& x : z) x = rng.normal();
  }
  const auto exact = next_token_dist(p, Context{kBosId, kBosId, kBosId}, 1.0);
  SamplingConfig cfg;
  cfg.top_k = 0;
  cfg.top_p = 1.0;
  cfg.max_tokens = 1;
  const int n = 100000;
  std::vector<int> counts(p.vocab().size(), 0);
  for (int i = 0; i < n; ++i) {
    cfg.rng_seed = rng::derive_seed(900, "draw", i);
    ++counts[static_cast<std::size_t>(sample_completion(p, TokenSeq{}, cfg).token_ids[0])];
  }
  double kl = 0.0;
  for (std::size_t v = 0; v < counts.size(); ++v) {
    const double emp = static_cast<double>(counts[v]) / n;
    const double sigma = std::sqrt(exact[v] * (1.0 - exact[v]) / n);
    EXPECT_NEAR(emp, exact[v], 4.0 * sigma + 1e-9) << "token " << v;
    if (emp > 0.0) kl += emp * std::log(emp / exact[v]);
  }
  EXPECT_LT(kl, 0.01);
}

TEST(SequenceLogprobs, UniformPolicy) {
  const auto p = uniform_policy(2);  // |V| = 4
  const auto ts = sequence_logprobs(p, tokenize("t00 t01 t00"));
  ASSERT_EQ(ts.logprobs.size(), 3u);
  for (double lp : ts.logprobs) EXPECT_NEAR(lp, std::log(0.25), 1e-12);
}

TEST(SequenceLogprobs, MemorizedChainNearZero) {
  Policy p(Vocab::synthetic(5), 2);
  p.mutable_logits({kBosId, kBosId})[2] = 200.0;
  p.mutable_logits({kBosId, 2})[3] = 200.0;
  const auto ts = sequence_logprobs(p, tokenize("t00 t01"));
  for (double lp : ts.logprobs) EXPECT_NEAR(lp, 0.0, 1e-12);
}

TEST(SequenceLogprobs, AgreesWithNextTokenDist) {
  auto p = random_policy(12, 3, 21, 100, 1.2);
  const auto text = tokenize("t03 t05 t07 t02 t11 t00");
  const auto ts = sequence_logprobs(p, text);
  const auto ids = p.vocab().encode(text);
  std::vector<TokenId> history;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto d = next_token_dist(p, history, 1.0);
    EXPECT_NEAR(ts.logprobs[i], std::log(d[static_cast<std::size_t>(ids[i])]), 1e-9);
    history.push_back(ids[i]);
  }
  EXPECT_THROW(sequence_logprobs(p, tokenize("zzz")), std::invalid_argument);
}

TEST(VocabStats, UniformHasZeroSigma) {
  const auto p = uniform_policy(8);
  const auto vs = vocab_stats(p, tokenize("t00 t01 t02"));
  for (double s : vs.sigma) EXPECT_NEAR(s, 0.0, 1e-12);
  for (double m : vs.mu) EXPECT_NEAR(m, std::log(1.0 / 10.0), 1e-12);
}

TEST(VocabStats, TwoTokenClosedForm) {
  Policy p(Vocab(std::vector<std::string>{kBosSymbol, kEosSymbol}), 1);
  auto& z = p.mutable_logits({kBosId});
  z = {0.7, -0.3};
  const auto d = next_token_dist(p, Context{kBosId}, 1.0);
  const auto vs = vocab_stats(p, from_tokens({kEosSymbol}));
  const double want_mu = (std::log(d[0]) + std::log(d[1])) / 2.0;
  const double want_sigma = std::abs(std::log(d[0]) - std::log(d[1])) / 2.0;
  EXPECT_NEAR(vs.mu[0], want_mu, 1e-12);
  EXPECT_NEAR(vs.sigma[0], want_sigma, 1e-12);
}

TEST(VocabStats, AgreesWithBruteForceLoop) {
  auto p = random_policy(15, 3, 31, 60, 1.7);
  const auto text = tokenize("t01 t02 t03 t04");
  const auto vs = vocab_stats(p, text);
  const auto ids = p.vocab().encode(text);
  std::vector<TokenId> history;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto d = next_token_dist(p, history, 1.0);
    double mu = 0.0;
    for (double x : d) mu += std::log(x);
    mu /= static_cast<double>(d.size());
    double var = 0.0;
    for (double x : d) var += (std::log(x) - mu) * (std::log(x) - mu);
    var /= static_cast<double>(d.size());
    EXPECT_NEAR(vs.mu[i], mu, 1e-10);
    EXPECT_NEAR(vs.sigma[i], std::sqrt(var), 1e-10);
    history.push_back(ids[i]);
  }
}

TEST(LogpiGrad, UniformClosedForm) {
  const auto p = uniform_policy(2);  // |V| = 4
  const auto g = logpi_grad(p, Context{kBosId, kBosId, kBosId}, 2);
  EXPECT_NEAR(g[0], -0.25, 1e-12);
  EXPECT_NEAR(g[1], -0.25, 1e-12);
  EXPECT_NEAR(g[2], 0.75, 1e-12);
  EXPECT_NEAR(g[3], -0.25, 1e-12);
}

TEST(LogpiGrad, EntriesSumToZero) {
  auto p = random_policy(20, 3, 41, 30, 2.0);
  for (const auto& ctx : p.contexts_sorted()) {
    for (TokenId t = 0; t < static_cast<TokenId>(p.vocab().size()); t += 5) {
      const auto g = logpi_grad(p, ctx, t);
      double sum = 0.0;
      for (double x : g) sum += x;
      EXPECT_NEAR(sum, 0.0, 1e-12);
    }
  }
}

TEST(LogpiGrad, MatchesCentralFiniteDifferences) {
  rng::Rng pick(55);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_policy(10, 2, 1000 + static_cast<std::uint64_t>(trial), 5, 1.0);
    const auto ctx = p.contexts_sorted().front();
    const auto t = static_cast<TokenId>(pick.uniform() * static_cast<double>(p.vocab().size()));
    const auto analytic = logpi_grad(p, ctx, t);
    const double h = 1e-5;
    double fd_norm = 0.0, err_norm = 0.0;
    for (std::size_t v = 0; v < p.vocab().size(); ++v) {
      auto& z = p.mutable_logits(ctx);
      const double orig = z[v];
      z[v] = orig + h;
      const double up = std::log(next_token_dist(p, ctx, 1.0)[static_cast<std::size_t>(t)]);
      z[v] = orig - h;
      const double dn = std::log(next_token_dist(p, ctx, 1.0)[static_cast<std::size_t>(t)]);
      z[v] = orig;
      const double fd = (up - dn) / (2.0 * h);
      fd_norm = std::max(fd_norm, std::abs(fd));
      err_norm = std::max(err_norm, std::abs(fd - analytic[v]));
    }
    worst = std::max(worst, err_norm / std::max(fd_norm, 1e-12));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(SftUpdate, ZeroLearningRateIsIdentity) {
  const auto p = uniform_policy(6);
  const auto corpus = std::vector<TokenSeq>{tokenize("t00 t01 t02")};
  const auto q = sft_update(p, corpus, 0.0, 5);
  EXPECT_DOUBLE_EQ(max_param_delta(p, q), 0.0);
}

TEST(SftUpdate, MemorizesSingleSequence) {
  const auto p = uniform_policy(10);
  const auto corpus = std::vector<TokenSeq>{tokenize("t03 t01 t04 t01 t05")};
  const auto trained = sft_update(p, corpus, 1.0, 400);
  const auto ts = sequence_logprobs(trained, corpus[0]);
  for (double lp : ts.logprobs) EXPECT_GT(lp, -0.05);
}

TEST(SftUpdate, LikelihoodNondecreasingAtSmallLr) {
  const auto p = uniform_policy(20);
  const auto vocab = Vocab::synthetic(20);
  std::vector<TokenSeq> corpus;
  rng::Rng rng(8);
  for (int s = 0; s < 16; ++s) {
    std::vector<std::string> toks;
    for (int t = 0; t < 12; ++t) {
      toks.push_back(vocab.symbol(static_cast<TokenId>(2 + rng.uniform() * 20.0)));
    }
    corpus.push_back(from_tokens(std::move(toks)));
  }
  Policy current = p;
  double prev = corpus_log_likelihood(current, corpus);
  for (int epoch = 0; epoch < 10; ++epoch) {
    current = sft_update(current, corpus, 0.1, 1);
    const double now = corpus_log_likelihood(current, corpus);
    EXPECT_GE(now, prev - 1e-12);
    prev = now;
  }
}

TEST(SftUpdate, DisjointContextsUntouched) {
  auto p = random_policy(10, 3, 71, 40, 1.0);
  const Policy before = p;
  const auto corpus = std::vector<TokenSeq>{tokenize("t00 t01 t02 t03")};
  const auto after = sft_update(p, corpus, 0.5, 3);
  // Collect the contexts the corpus actually visits (EOS transition included).
  auto ids = before.vocab().encode(corpus[0]);
  ids.push_back(kEosId);
  std::vector<Context> visited;
  std::vector<TokenId> history;
  for (const TokenId id : ids) {
    visited.push_back(before.normalize_context(history));
    history.push_back(id);
  }
  for (const auto& ctx : before.contexts_sorted()) {
    if (std::find(visited.begin(), visited.end(), ctx) != visited.end()) continue;
    const auto a = before.logits_at(ctx);
    const auto b = after.logits_at(ctx);
    for (std::size_t v = 0; v < a.size(); ++v) ASSERT_EQ(a[v], b[v]);
  }
}

TEST(PolicyIo, RoundTripIsExact) {
  auto p = random_policy(25, 3, 91, 300, 2.3);
  std::stringstream ss;
  save_policy(p, ss);
  const auto q = load_policy(ss);
  EXPECT_EQ(p.vocab().symbols(), q.vocab().symbols());
  EXPECT_EQ(p.order(), q.order());
  EXPECT_EQ(p.stored_contexts(), q.stored_contexts());
  for (const auto& ctx : p.contexts_sorted()) {
    const auto a = p.logits_at(ctx);
    const auto b = q.logits_at(ctx);
    for (std::size_t v = 0; v < a.size(); ++v) ASSERT_EQ(a[v], b[v]);
  }
}

TEST(PolicyIo, MalformedInputThrows) {
  std::stringstream bad1("not-a-policy\n");
  EXPECT_THROW(load_policy(bad1), std::runtime_error);
  std::stringstream bad2("toylm-policy v1\norder 2\nvocab 2\n<s>\n</s>\ncontexts 1\n0 0 : 0.5\n");
  EXPECT_THROW(load_policy(bad2), std::runtime_error);
}

TEST(Vocab, RejectsDuplicatesAndWhitespace) {
  EXPECT_THROW(Vocab::with_regular({"a", "a"}), std::invalid_argument);
  EXPECT_THROW(Vocab::with_regular({"a b"}), std::invalid_argument);
  EXPECT_THROW(Vocab(std::vector<std::string>{"x", "</s>"}), std::invalid_argument);
}
