#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

namespace mialab::baselines {

/// Per-token log-probabilities of a candidate under some model, plus the
/// raw text they were computed on (the compression basis for zlib scoring).
struct TokenScores {
  std::vector<double> logprobs;  // natural log, each <= 0
  std::string text;

  void validate() const {
    if (logprobs.empty()) throw std::invalid_argument("token scores: empty");
    for (double lp : logprobs) {
      if (!(lp <= 0.0) || !std::isfinite(lp)) {
        throw std::invalid_argument("token scores: log-probabilities must be finite and <= 0");
      }
    }
  }
};

/// Per-position vocabulary statistics of the next-token log-probabilities.
struct VocabStats {
  std::vector<double> mu;
  std::vector<double> sigma;  // population std, >= 0
};

constexpr double kSigmaFloor = 1e-8;  // keeps Min-K%++ finite on degenerate positions

namespace detail {

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Count of tokens in the "smallest k%" selection: ceil(k% * n), at least 1.
inline std::size_t k_count(std::size_t n, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw std::invalid_argument("k_percent must be in (0, 100]");
  }
  const auto m = static_cast<std::size_t>(std::ceil(k_percent / 100.0 * static_cast<double>(n)));
  return std::max<std::size_t>(1, std::min(m, n));
}

inline double mean_of_smallest(std::vector<double> values, std::size_t m) {
  if (m == values.size()) return mean(values);  // keep natural summation order
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(m - 1), values.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += values[i];
  return sum / static_cast<double>(m);
}

}  // namespace detail

/// Raw-DEFLATE (RFC 1951) size in bytes at the default compression level.
inline std::size_t deflate_size(std::string_view text) {
  if (text.empty()) throw std::invalid_argument("deflate_size: empty text");
  z_stream strm{};
  if (deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -15, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw std::runtime_error("deflate_size: deflateInit2 failed");
  }
  std::vector<unsigned char> out(deflateBound(&strm, static_cast<uLong>(text.size())));
  strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(text.data()));
  strm.avail_in = static_cast<uInt>(text.size());
  strm.next_out = out.data();
  strm.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&strm, Z_FINISH);
  const std::size_t size = strm.total_out;
  deflateEnd(&strm);
  if (rc != Z_STREAM_END) throw std::runtime_error("deflate_size: deflate failed");
  return size;
}

// All scores below are oriented so that higher means more likely member.

/// Mean log-probability, i.e. the negated per-token loss.
inline double loss_score(const TokenScores& ts) {
  ts.validate();
  return detail::mean(ts.logprobs);
}

/// Loss calibrated by a reference model on the same tokens.
inline double ref_loss_score(const TokenScores& target, const TokenScores& reference) {
  target.validate();
  reference.validate();
  if (target.logprobs.size() != reference.logprobs.size()) {
    throw std::invalid_argument("ref_loss_score: token count mismatch");
  }
  return detail::mean(target.logprobs) - detail::mean(reference.logprobs);
}

/// Mean log-probability normalized by the DEFLATE size of the raw text.
inline double zlib_score(const TokenScores& ts) {
  ts.validate();
  return detail::mean(ts.logprobs) / static_cast<double>(deflate_size(ts.text));
}

/// Mean over the ceil(k% * n) lowest log-probability tokens.
inline double min_k_score(const TokenScores& ts, double k_percent) {
  ts.validate();
  return detail::mean_of_smallest(ts.logprobs, detail::k_count(ts.logprobs.size(), k_percent));
}

/// Mean over the k% smallest per-position z-scores, where each token's
/// log-probability is standardized by the vocabulary mean/std at its position.
inline double min_k_pp_score(const TokenScores& ts, const VocabStats& vs, double k_percent) {
  ts.validate();
  if (vs.mu.size() != ts.logprobs.size() || vs.sigma.size() != ts.logprobs.size()) {
    throw std::invalid_argument("min_k_pp_score: stats length mismatch");
  }
  std::vector<double> z(ts.logprobs.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (vs.sigma[i] < 0.0) throw std::invalid_argument("min_k_pp_score: negative sigma");
    z[i] = (ts.logprobs[i] - vs.mu[i]) / std::max(vs.sigma[i], kSigmaFloor);
  }
  return detail::mean_of_smallest(std::move(z), detail::k_count(ts.logprobs.size(), k_percent));
}

}  // namespace mialab::baselines
