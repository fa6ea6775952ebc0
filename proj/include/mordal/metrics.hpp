#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mordal/error.hpp"

namespace mordal {

// Ordered candidate ids, best first. When scores are given (lower is better,
// one per id) equal scores share a rank; otherwise rank = position.
struct Ranking {
  std::vector<std::string> ids;
  std::vector<double> scores;

  // 1-based ranks keyed by id (competition ranking for tied scores).
  std::map<std::string, double> ranks() const {
    if (!scores.empty() && scores.size() != ids.size()) {
      throw Error(ErrorKind::kInput, "ranking scores must match ids");
    }
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double rank = static_cast<double>(i + 1);
      if (!scores.empty()) {
        rank = 1.0;
        for (double s : scores) rank += s < scores[i] ? 1.0 : 0.0;
      }
      if (!out.emplace(ids[i], rank).second) {
        throw Error(ErrorKind::kInput, "duplicate id '" + ids[i] + "' in ranking");
      }
    }
    return out;
  }
};

namespace detail {

// Rank pairs (T_i, S_i) over the common ids, in T's id order.
inline std::vector<std::pair<double, double>> paired_ranks(const Ranking& t, const Ranking& s) {
  const auto tr = t.ranks();
  const auto sr = s.ranks();
  if (tr.size() != sr.size() ||
      !std::equal(tr.begin(), tr.end(), sr.begin(), [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw Error(ErrorKind::kInput, "rankings cover different id sets");
  }
  if (tr.size() < 2) throw Error(ErrorKind::kInput, "rank correlation needs M >= 2");
  std::vector<std::pair<double, double>> out;
  for (const auto& id : t.ids) out.emplace_back(tr.at(id), sr.at(id));
  return out;
}

inline int sgn(double v) { return (v > 0.0) - (v < 0.0); }

// Inversions (strictly decreasing pairs) of v, counted by merge sort.
inline std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

inline std::int64_t tied_pairs(const std::vector<double>& sorted) {
  std::int64_t ties = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto run = static_cast<std::int64_t>(j - i);
    ties += run * (run - 1) / 2;
    i = j;
  }
  return ties;
}

}  // namespace detail

// Kendall tau: 2 / (M (M - 1)) * sum_{i<j} sgn(T_i - T_j) sgn(S_i - S_j).
// The concordance sum is computed in O(M log M) (Knight's method); tied
// pairs contribute zero.
inline double kendall_tau(const Ranking& t, const Ranking& s) {
  auto pairs = detail::paired_ranks(t, s);
  const auto m = static_cast<std::int64_t>(pairs.size());
  std::sort(pairs.begin(), pairs.end());
  std::vector<double> t_sorted, s_seq;
  for (const auto& [tr, sr] : pairs) {
    t_sorted.push_back(tr);
    s_seq.push_back(sr);
  }
  const std::int64_t total = m * (m - 1) / 2;
  const std::int64_t t_ties = detail::tied_pairs(t_sorted);
  std::int64_t joint_ties = 0;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j] == pairs[i]) ++j;
    const auto run = static_cast<std::int64_t>(j - i);
    joint_ties += run * (run - 1) / 2;
    i = j;
  }
  std::vector<double> buf(s_seq.size());
  const std::int64_t swaps = detail::count_inversions(s_seq, buf, 0, s_seq.size());
  // s_seq is now sorted.
  const std::int64_t s_ties = detail::tied_pairs(s_seq);
  const std::int64_t concordance = total - t_ties - s_ties + joint_ties - 2 * swaps;
  return 2.0 * static_cast<double>(concordance) / static_cast<double>(m * (m - 1));
}

// Weighted tau with additive hyperbolic weights taken from T:
// w_ij = 1/T_i + 1/T_j, tau_w = sum w_ij sgn(.) sgn(.) / sum w_ij.
// Tied pairs add zero to the numerator and full weight to the denominator.
inline double weighted_kendall_tau(const Ranking& t, const Ranking& s) {
  const auto pairs = detail::paired_ranks(t, s);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (std::size_t j = i + 1; j < pairs.size(); ++j) {
      const double w = 1.0 / pairs[i].first + 1.0 / pairs[j].first;
      num += w * detail::sgn(pairs[i].first - pairs[j].first) * detail::sgn(pairs[i].second - pairs[j].second);
      den += w;
    }
  }
  return num / den;
}

// Weighted tau restricted to the ground truth's top-k ids, each ranking
// re-ranked 1..k by its own order.
inline double topk_tau(const Ranking& ground_truth, const Ranking& other, std::size_t k) {
  if (k > ground_truth.ids.size()) throw Error(ErrorKind::kInput, "k exceeds the ranking size");
  const std::set<std::string> top(ground_truth.ids.begin(), ground_truth.ids.begin() + static_cast<std::ptrdiff_t>(k));
  Ranking gt_k, other_k;
  for (const auto& id : ground_truth.ids)
    if (top.count(id) && gt_k.ids.size() < k) gt_k.ids.push_back(id);
  for (const auto& id : other.ids)
    if (top.count(id)) other_k.ids.push_back(id);
  return weighted_kendall_tau(gt_k, other_k);
}

inline double speedup(double search_cost, double grid_cost) {
  if (!(search_cost > 0.0) || !(grid_cost > 0.0)) throw Error(ErrorKind::kInput, "costs must be > 0");
  return grid_cost / search_cost;
}

}  // namespace mordal
