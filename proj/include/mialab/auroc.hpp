#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mialab/candidate.hpp"

namespace mialab::eval {

/// AUROC via the Mann-Whitney U statistic with average ranks: the
/// probability that a uniformly random member outscores a uniformly random
/// non-member, ties counted one half.
inline double auroc(const std::vector<double>& scores, const std::vector<Label>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: size mismatch");
  const std::size_t n = scores.size();
  std::size_t n_member = 0;
  for (const Label l : labels) n_member += l == Label::Member ? 1 : 0;
  const std::size_t n_nonmember = n - n_member;
  if (n_member == 0 || n_nonmember == 0) {
    throw std::invalid_argument("auroc: both classes must be present");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double member_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = static_cast<double>(i + j) / 2.0 + 1.0;  // 1-based
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == Label::Member) member_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double u = member_rank_sum -
                   static_cast<double>(n_member) * static_cast<double>(n_member + 1) / 2.0;
  return u / (static_cast<double>(n_member) * static_cast<double>(n_nonmember));
}

}  // namespace mialab::eval
