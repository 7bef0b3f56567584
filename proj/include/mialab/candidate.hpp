#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mialab/tokens.hpp"

namespace mialab {

/// One attack target: a text with its prefix/suffix split point.
/// Deliberately label-free; attack code paths only ever see Candidate.
struct Candidate {
  std::string id;
  std::string text;
  double prefix_fraction = 0.5;

  /// Word index of the split: floor(prefix_fraction * n).
  std::size_t split_index() const {
    const TokenSeq all = tokenize(text);
    const auto n = static_cast<double>(all.size());
    return static_cast<std::size_t>(prefix_fraction * n);
  }

  /// Observed prefix c.
  TokenSeq prefix() const {
    const TokenSeq all = tokenize(text);
    const std::size_t k = split_index();
    return from_tokens({all.tokens.begin(), all.tokens.begin() + static_cast<std::ptrdiff_t>(k)});
  }

  /// Held-out suffix y* the attack tries to reconstruct.
  TokenSeq suffix() const {
    const TokenSeq all = tokenize(text);
    const std::size_t k = split_index();
    return from_tokens({all.tokens.begin() + static_cast<std::ptrdiff_t>(k), all.tokens.end()});
  }

  void validate() const {
    if (id.empty()) throw std::invalid_argument("candidate: empty id");
    if (!(prefix_fraction > 0.0 && prefix_fraction < 1.0)) {
      throw std::invalid_argument("candidate " + id + ": prefix_fraction must be in (0,1)");
    }
    const TokenSeq all = tokenize(text);
    const std::size_t k = split_index();
    if (k == 0 || k >= all.size()) {
      throw std::invalid_argument("candidate " + id + ": prefix and suffix must both be non-empty");
    }
  }
};

enum class Label { Member, NonMember };

/// Candidate plus its evaluation-only membership label. Only the
/// evaluation/report side ever receives these.
struct LabeledCandidate {
  Candidate candidate;
  Label label = Label::NonMember;
};

inline std::vector<Candidate> strip_labels(const std::vector<LabeledCandidate>& labeled) {
  std::vector<Candidate> out;
  out.reserve(labeled.size());
  for (const auto& lc : labeled) out.push_back(lc.candidate);
  return out;
}

}  // namespace mialab
