#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mialab/tokens.hpp"

namespace mialab::metrics {

/// Set of distinct contiguous token n-grams with orders in [l_min, l_max].
struct NgramSet {
  std::unordered_set<std::string> grams;  // length-prefix encoded, collision-free
  std::size_t l_min = 1;
  std::size_t l_max = 1;

  std::size_t size() const { return grams.size(); }
};

enum class Norm { Ref, Cand };

enum class RewardKind { Trio, Ngram };

/// Configuration of the scalar reconstruction reward.
struct RewardSpec {
  RewardKind kind = RewardKind::Trio;
  double tau = 1.5;        // length-penalty threshold, >= 1
  std::size_t l_min = 3;   // minimum n-gram order
};

/// One value per evaluation metric. All ratios in [0,1]; lcs_len is a count.
/// degenerate marks candidate-normalized fields that were forced to 0
/// because the candidate was empty.
struct MetricVector {
  double jaccard = 0.0;
  double token_overlap_ref = 0.0;
  double token_overlap_cand = 0.0;
  double lcs_len = 0.0;
  double lcs_ratio_ref = 0.0;
  double lcs_ratio_cand = 0.0;
  double ngram_cov_ref = 0.0;
  double ngram_cov_cand = 0.0;
  bool degenerate = false;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {
      "jaccard",        "token_overlap_ref", "token_overlap_cand",
      "lcs_len",        "lcs_ratio_ref",     "lcs_ratio_cand",
      "ngram_cov_ref",  "ngram_cov_cand"};
  return names;
}

inline double metric_value(const MetricVector& m, std::string_view name) {
  if (name == "jaccard") return m.jaccard;
  if (name == "token_overlap_ref") return m.token_overlap_ref;
  if (name == "token_overlap_cand") return m.token_overlap_cand;
  if (name == "lcs_len") return m.lcs_len;
  if (name == "lcs_ratio_ref") return m.lcs_ratio_ref;
  if (name == "lcs_ratio_cand") return m.lcs_ratio_cand;
  if (name == "ngram_cov_ref") return m.ngram_cov_ref;
  if (name == "ngram_cov_cand") return m.ngram_cov_cand;
  throw std::invalid_argument("unknown metric: " + std::string(name));
}

namespace detail {

inline std::vector<std::string_view> unique_tokens(const TokenSeq& seq) {
  std::vector<std::string_view> t(seq.tokens.begin(), seq.tokens.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

inline std::size_t intersection_size(const std::vector<std::string_view>& a,
                                     const std::vector<std::string_view>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (b[j] < a[i]) ++j;
    else { ++n; ++i; ++j; }
  }
  return n;
}

// Length-prefixed token join; unambiguous even if tokens contain separators.
inline std::string encode_gram(const std::vector<std::string>& tokens,
                               std::size_t begin, std::size_t len) {
  std::string key;
  for (std::size_t k = 0; k < len; ++k) {
    const std::string& tok = tokens[begin + k];
    key += std::to_string(tok.size());
    key += ':';
    key += tok;
  }
  return key;
}

}  // namespace detail

/// Fraction of unique reference tokens that appear in the candidate.
inline double token_set_sim(const TokenSeq& cand, const TokenSeq& ref) {
  if (ref.empty()) throw std::invalid_argument("token_set_sim: empty reference");
  const auto tc = detail::unique_tokens(cand);
  const auto tr = detail::unique_tokens(ref);
  return static_cast<double>(detail::intersection_size(tc, tr)) /
         static_cast<double>(tr.size());
}

/// Longest common subsequence length (not necessarily contiguous); symmetric.
inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  const auto& x = a.tokens;
  const auto& y = b.tokens;
  if (x.empty() || y.empty()) return 0;
  std::vector<std::size_t> prev(y.size() + 1, 0), curr(y.size() + 1, 0);
  for (std::size_t i = 1; i <= x.size(); ++i) {
    for (std::size_t j = 1; j <= y.size(); ++j) {
      if (x[i - 1] == y[j - 1]) curr[j] = prev[j - 1] + 1;
      else curr[j] = std::max(prev[j], curr[j - 1]);
    }
    std::swap(prev, curr);
  }
  return prev[y.size()];
}

inline double lcs_ratio(const TokenSeq& cand, const TokenSeq& ref, Norm norm) {
  const std::size_t denom = norm == Norm::Ref ? ref.size() : cand.size();
  if (denom == 0) throw std::invalid_argument("lcs_ratio: empty normalizer");
  return static_cast<double>(lcs_length(cand, ref)) / static_cast<double>(denom);
}

/// All distinct contiguous n-grams with orders l_min..min(l_max, |seq|).
/// Empty when l_max < l_min.
inline NgramSet ngram_set(const TokenSeq& seq, std::size_t l_min, std::size_t l_max) {
  if (l_min < 1) throw std::invalid_argument("ngram_set: l_min must be >= 1");
  NgramSet out;
  out.l_min = l_min;
  out.l_max = l_max;
  const std::size_t hi = std::min(l_max, seq.size());
  for (std::size_t len = l_min; len <= hi; ++len) {
    for (std::size_t begin = 0; begin + len <= seq.size(); ++begin) {
      out.grams.insert(detail::encode_gram(seq.tokens, begin, len));
    }
  }
  return out;
}

namespace detail {

inline double ngram_coverage_with_lcs(const TokenSeq& cand, const TokenSeq& ref,
                                      Norm norm, std::size_t l_min, std::size_t lcs) {
  if (lcs < l_min) return 0.0;  // no valid gram orders
  const NgramSet nc = ngram_set(cand, l_min, lcs);
  const NgramSet nr = ngram_set(ref, l_min, lcs);
  const NgramSet& denom_set = norm == Norm::Ref ? nr : nc;
  if (denom_set.grams.empty()) return 0.0;
  const NgramSet& small = nc.size() <= nr.size() ? nc : nr;
  const NgramSet& large = nc.size() <= nr.size() ? nr : nc;
  std::size_t both = 0;
  for (const auto& g : small.grams) both += large.grams.count(g);
  return static_cast<double>(both) / static_cast<double>(denom_set.size());
}

}  // namespace detail

/// N-gram set coverage with the gram order range [l_min, LCS(cand, ref)].
inline double ngram_coverage(const TokenSeq& cand, const TokenSeq& ref,
                             Norm norm, std::size_t l_min = 3) {
  return detail::ngram_coverage_with_lcs(cand, ref, norm, l_min, lcs_length(cand, ref));
}

/// |T(cand) ∩ T(ref)| / |T(cand) ∪ T(ref)|; symmetric.
inline double jaccard(const TokenSeq& cand, const TokenSeq& ref) {
  const auto tc = detail::unique_tokens(cand);
  const auto tr = detail::unique_tokens(ref);
  if (tc.empty() && tr.empty()) throw std::invalid_argument("jaccard: both sequences empty");
  const std::size_t both = detail::intersection_size(tc, tr);
  return static_cast<double>(both) /
         static_cast<double>(tc.size() + tr.size() - both);
}

/// Word-count penalty multiplier: 1 inside [len_ref/tau, len_ref*tau],
/// otherwise min(1, min(len_cand/len_ref, len_ref/len_cand)).
inline double length_penalty(std::size_t len_cand, std::size_t len_ref, double tau) {
  if (len_ref == 0) throw std::invalid_argument("length_penalty: zero reference length");
  if (tau < 1.0) throw std::invalid_argument("length_penalty: tau must be >= 1");
  const double lc = static_cast<double>(len_cand);
  const double lr = static_cast<double>(len_ref);
  if (lc >= lr / tau && lc <= lr * tau) return 1.0;
  return std::min(1.0, std::min(lc / lr, lr / lc));
}

/// Scalar training reward: TRIO averages token set similarity, LCS ratio and
/// n-gram coverage (all reference-normalized); NGRAM uses coverage alone.
/// Either way the base score is multiplied by the length penalty.
inline double base_reward(const TokenSeq& cand, const TokenSeq& ref, const RewardSpec& spec) {
  if (ref.empty()) throw std::invalid_argument("base_reward: empty reference");
  const std::size_t lcs = lcs_length(cand, ref);
  const double cov = detail::ngram_coverage_with_lcs(cand, ref, Norm::Ref, spec.l_min, lcs);
  double base;
  if (spec.kind == RewardKind::Ngram) {
    base = cov;
  } else {
    const double tok = token_set_sim(cand, ref);
    const double lcsr = static_cast<double>(lcs) / static_cast<double>(ref.size());
    base = (tok + lcsr + cov) / 3.0;
  }
  return base * length_penalty(cand.size(), ref.size(), spec.tau);
}

/// The full evaluation metric suite for one (candidate, reference) pair.
/// An empty candidate reports 0 on candidate-normalized fields and sets
/// the degenerate flag instead of throwing, so batch scoring never aborts.
inline MetricVector metric_suite(const TokenSeq& cand, const TokenSeq& ref) {
  if (ref.empty()) throw std::invalid_argument("metric_suite: empty reference");
  MetricVector m;
  const auto tc = detail::unique_tokens(cand);
  const auto tr = detail::unique_tokens(ref);
  const std::size_t both = detail::intersection_size(tc, tr);
  const std::size_t lcs = lcs_length(cand, ref);

  m.jaccard = static_cast<double>(both) / static_cast<double>(tc.size() + tr.size() - both);
  m.token_overlap_ref = static_cast<double>(both) / static_cast<double>(tr.size());
  m.lcs_len = static_cast<double>(lcs);
  m.lcs_ratio_ref = static_cast<double>(lcs) / static_cast<double>(ref.size());
  m.ngram_cov_ref = detail::ngram_coverage_with_lcs(cand, ref, Norm::Ref, 3, lcs);

  if (cand.empty()) {
    m.degenerate = true;
    m.token_overlap_cand = 0.0;
    m.lcs_ratio_cand = 0.0;
    m.ngram_cov_cand = 0.0;
  } else {
    m.token_overlap_cand = static_cast<double>(both) / static_cast<double>(tc.size());
    m.lcs_ratio_cand = static_cast<double>(lcs) / static_cast<double>(cand.size());
    m.ngram_cov_cand = detail::ngram_coverage_with_lcs(cand, ref, Norm::Cand, 3, lcs);
  }
  return m;
}

}  // namespace mialab::metrics
