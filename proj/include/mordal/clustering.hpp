#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mordal/candidate.hpp"
#include "mordal/error.hpp"
#include "mordal/parallel.hpp"
#include "mordal/similarity.hpp"

namespace mordal {

// Pairwise (1 - CKA) dissimilarities, indexed by model id.
struct DistanceMatrix {
  std::vector<std::string> ids;
  Matrix values;

  std::size_t size() const { return ids.size(); }

  std::size_t index_of(const std::string& id) const {
    const auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) throw Error(ErrorKind::kLookup, "unknown model id '" + id + "'");
    return static_cast<std::size_t>(it - ids.begin());
  }

  double at(const std::string& a, const std::string& b) const {
    return values(static_cast<Eigen::Index>(index_of(a)), static_cast<Eigen::Index>(index_of(b)));
  }
};

inline void validate(const DistanceMatrix& d) {
  const auto n = static_cast<Eigen::Index>(d.ids.size());
  if (d.values.rows() != n || d.values.cols() != n) {
    throw Error(ErrorKind::kDimension, "distance matrix shape does not match id count");
  }
  if (std::set<std::string>(d.ids.begin(), d.ids.end()).size() != d.ids.size()) {
    throw Error(ErrorKind::kInput, "duplicate ids in distance matrix");
  }
  constexpr double tol = 1e-9;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(d.values(i, i)) > tol) {
      throw Error(ErrorKind::kInput, "non-zero diagonal at " + d.ids[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = d.values(i, j);
      if (!std::isfinite(v) || v < -tol || v > 1.0 + tol) {
        throw Error(ErrorKind::kInput, "distance out of [0, 1] at (" +
                                           d.ids[static_cast<std::size_t>(i)] + ", " +
                                           d.ids[static_cast<std::size_t>(j)] + ")");
      }
      if (std::abs(v - d.values(j, i)) > tol) {
        throw Error(ErrorKind::kInput, "distance matrix is not symmetric");
      }
    }
  }
}

// O(m^2) similarity evaluations; pairs may run concurrently, the assembled
// matrix does not depend on completion order.
inline DistanceMatrix pairwise_distance_matrix(std::span<const ActivationMatrix> activations,
                                               const SimilarityOptions& opts = {},
                                               std::size_t parallelism = default_parallelism()) {
  const std::size_t m = activations.size();
  if (m < 2) throw Error(ErrorKind::kInput, "need at least 2 models for a distance matrix");
  DistanceMatrix out;
  out.values = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (const auto& a : activations) out.ids.push_back(a.model_id);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) pairs.emplace_back(i, j);
  parallel_for(
      pairs.size(),
      [&](std::size_t p) {
        const auto [i, j] = pairs[p];
        double d = 0.0;
        try {
          d = distance(activations[i], activations[j], opts);
        } catch (const Error& e) {
          throw Error(e.kind(), "pair (" + activations[i].model_id + ", " +
                                    activations[j].model_id + "): " + e.what());
        }
        const auto ii = static_cast<Eigen::Index>(i);
        const auto jj = static_cast<Eigen::Index>(j);
        out.values(ii, jj) = d;
        out.values(jj, ii) = d;
      },
      parallelism);
  return out;
}

struct ClusterSet {
  std::vector<std::vector<std::string>> clusters;
  std::vector<std::string> medoids;
  double threshold = 0.0;
};

// Member minimizing the summed distance to the other members; ties go to the
// lexicographically smallest id.
inline std::string medoid(std::span<const std::string> members, const DistanceMatrix& dist) {
  if (members.empty()) throw Error(ErrorKind::kInput, "medoid of an empty cluster");
  std::vector<std::size_t> idx;
  for (const auto& id : members) idx.push_back(dist.index_of(id));
  std::string best;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < idx.size(); ++a) {
    double sum = 0.0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      sum += dist.values(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[b]));
    }
    const auto& id = members[a];
    const bool tie = std::abs(sum - best_sum) <= 1e-12;
    if ((!tie && sum < best_sum) || (tie && id < best)) {
      best = id;
      best_sum = tie ? std::min(sum, best_sum) : sum;
    }
  }
  return best;
}

// One agglomeration step: the two merged clusters (sorted member ids) and the
// average-linkage height at which they joined.
struct Merge {
  std::vector<std::string> left;
  std::vector<std::string> right;
  double height = 0.0;
};

// Average-linkage (UPGMA) dendrogram. Inter-cluster distances are averaged
// over the original pairwise entries. Equal heights merge the pair with the
// lexicographically smallest (min id, min id) key first.
inline std::vector<Merge> average_linkage(const DistanceMatrix& dist) {
  validate(dist);
  std::vector<std::vector<std::size_t>> active;
  for (std::size_t i = 0; i < dist.size(); ++i) active.push_back({i});
  auto key = [&](const std::vector<std::size_t>& c) {
    std::string k = dist.ids[c.front()];
    for (auto i : c) k = std::min(k, dist.ids[i]);
    return k;
  };
  auto average = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    double sum = 0.0;
    for (auto i : a)
      for (auto j : b) sum += dist.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return sum / static_cast<double>(a.size() * b.size());
  };
  auto sorted_ids = [&](const std::vector<std::size_t>& c) {
    std::vector<std::string> out;
    for (auto i : c) out.push_back(dist.ids[i]);
    std::sort(out.begin(), out.end());
    return out;
  };

  std::vector<Merge> merges;
  while (active.size() > 1) {
    std::size_t best_a = 0, best_b = 1;
    double best_h = std::numeric_limits<double>::infinity();
    std::pair<std::string, std::string> best_key;
    for (std::size_t a = 0; a < active.size(); ++a) {
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        const double h = average(active[a], active[b]);
        auto ka = key(active[a]);
        auto kb = key(active[b]);
        std::pair<std::string, std::string> k =
            ka < kb ? std::make_pair(ka, kb) : std::make_pair(kb, ka);
        const bool tie = std::abs(h - best_h) <= 1e-12;
        if ((!tie && h < best_h) || (tie && k < best_key)) {
          best_h = tie ? std::min(h, best_h) : h;
          best_key = std::move(k);
          best_a = a;
          best_b = b;
        }
      }
    }
    Merge m{sorted_ids(active[best_a]), sorted_ids(active[best_b]), best_h};
    if (m.right < m.left) std::swap(m.left, m.right);
    merges.push_back(std::move(m));
    active[best_a].insert(active[best_a].end(), active[best_b].begin(), active[best_b].end());
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_b));
  }
  return merges;
}

// Flat clusters from a dendrogram cut at distance height (1 - t): every merge
// at or below the cut height is applied. Larger t gives at least as many
// clusters.
inline ClusterSet cluster(const DistanceMatrix& dist, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw Error(ErrorKind::kInput, "clustering threshold must lie in [0, 1]");
  }
  const double cut = 1.0 - t;
  const auto merges = average_linkage(dist);

  // Union-find over ids.
  std::vector<std::size_t> parent(dist.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  std::function<std::size_t(std::size_t)> find = [&](std::size_t i) {
    return parent[i] == i ? i : parent[i] = find(parent[i]);
  };
  for (const auto& m : merges) {
    // Average linkage is monotone, so the applied merges form a prefix.
    if (m.height > cut + 1e-12) break;
    parent[find(dist.index_of(m.left.front()))] = find(dist.index_of(m.right.front()));
  }

  std::vector<std::vector<std::string>> groups(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) groups[find(i)].push_back(dist.ids[i]);
  ClusterSet out;
  out.threshold = t;
  for (auto& g : groups) {
    if (g.empty()) continue;
    std::sort(g.begin(), g.end());
    out.clusters.push_back(std::move(g));
  }
  std::sort(out.clusters.begin(), out.clusters.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  for (const auto& c : out.clusters) out.medoids.push_back(medoid(c, dist));
  return out;
}

struct CandidateCluster {
  std::vector<Candidate> members;
  Candidate representative;
};

struct CandidateClustering {
  ClusterSet ve;
  // LLM clustering conditioned on the medoid of ve.clusters[i].
  std::vector<ClusterSet> llm;
  std::vector<CandidateCluster> clusters;
  std::size_t similarity_evaluations = 0;
};

// Two-step clustering: cluster VEs, then for each VE cluster cluster the LLMs
// using activations conditioned on that cluster's medoid VE, and emit the
// Cartesian product of the VE cluster with each LLM cluster.
//
// llm_distances(ve_medoid_id) must return the LLM distance matrix
// conditioned on that VE; every call must cover the same LLM zoo.
template <typename LlmDistanceSource>
CandidateClustering cluster_candidates(const DistanceMatrix& ve_dist, LlmDistanceSource&& llm_distances,
                                       double t_ve, double t_llm) {
  CandidateClustering out;
  out.ve = cluster(ve_dist, t_ve);
  std::vector<std::string> llm_zoo;
  for (std::size_t c = 0; c < out.ve.clusters.size(); ++c) {
    const auto& ve_medoid = out.ve.medoids[c];
    DistanceMatrix llm_dist;
    try {
      llm_dist = llm_distances(ve_medoid);
    } catch (const Error& e) {
      throw Error(e.kind(), "LLM activations conditioned on VE '" + ve_medoid + "': " + e.what());
    }
    auto ids = llm_dist.ids;
    std::sort(ids.begin(), ids.end());
    if (llm_zoo.empty()) {
      llm_zoo = ids;
    } else if (ids != llm_zoo) {
      throw Error(ErrorKind::kInput, "LLM zoo differs for VE medoid '" + ve_medoid + "'");
    }
    auto llm_clusters = cluster(llm_dist, t_llm);
    for (std::size_t l = 0; l < llm_clusters.clusters.size(); ++l) {
      CandidateCluster cc;
      for (const auto& ve : out.ve.clusters[c])
        for (const auto& llm : llm_clusters.clusters[l]) cc.members.push_back({ve, llm});
      cc.representative = {ve_medoid, llm_clusters.medoids[l]};
      out.clusters.push_back(std::move(cc));
    }
    out.llm.push_back(std::move(llm_clusters));
  }
  return out;
}

// Activation-level entry point. llm_activations(ve_medoid_id) returns one
// ActivationMatrix per LLM: the LLM's last hidden states on the task samples
// when fed that VE's projected image embeddings.
template <typename LlmActivationSource>
CandidateClustering cluster_candidates_from_activations(
    std::span<const ActivationMatrix> ve_activations, LlmActivationSource&& llm_activations,
    double t_ve, double t_llm, const SimilarityOptions& opts = {},
    std::size_t parallelism = default_parallelism()) {
  std::size_t evaluations = 0;
  auto pairs = [](std::size_t m) { return m * (m - 1) / 2; };
  const auto ve_dist = pairwise_distance_matrix(ve_activations, opts, parallelism);
  evaluations += pairs(ve_activations.size());
  auto out = cluster_candidates(
      ve_dist,
      [&](const std::string& ve_medoid) {
        const std::vector<ActivationMatrix> acts = llm_activations(ve_medoid);
        evaluations += pairs(acts.size());
        return pairwise_distance_matrix(acts, opts, parallelism);
      },
      t_ve, t_llm);
  out.similarity_evaluations = evaluations;
  return out;
}

template <typename LlmDistanceSource>
std::vector<CandidateCluster> candidate_clusters(const DistanceMatrix& ve_dist,
                                                 LlmDistanceSource&& llm_distances, double t_ve,
                                                 double t_llm) {
  return cluster_candidates(ve_dist, std::forward<LlmDistanceSource>(llm_distances), t_ve, t_llm)
      .clusters;
}

}  // namespace mordal
