#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mordal/candidate.hpp"
#include "mordal/clustering.hpp"
#include "mordal/config.hpp"
#include "mordal/error.hpp"
#include "mordal/metrics.hpp"
#include "mordal/oracle.hpp"
#include "mordal/parallel.hpp"
#include "mordal/scaling.hpp"

namespace mordal {

enum class Phase { kClustering = 0, kInterEs = 1, kIntraEs = 2, kPrediction = 3 };

inline constexpr std::array<Phase, 4> kPhases{Phase::kClustering, Phase::kInterEs, Phase::kIntraEs,
                                              Phase::kPrediction};

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kClustering: return "clustering";
    case Phase::kInterEs: return "inter_es";
    case Phase::kIntraEs: return "intra_es";
    case Phase::kPrediction: return "prediction";
  }
  return "unknown";
}

// Per-phase cost attribution plus the trained-ratio high-water mark of every
// candidate the search touched. Updates are serialized.
class CostLedger {
 public:
  void book(Phase phase, const EvalRecord& rec) {
    std::lock_guard lock(mu_);
    phase_cost_[static_cast<std::size_t>(phase)] += rec.cost;
    ++queries_[static_cast<std::size_t>(phase)];
    double& high = high_water_[rec.candidate];
    high = std::max(high, rec.ratio);
  }

  void book_cost(Phase phase, double cost) {
    std::lock_guard lock(mu_);
    phase_cost_[static_cast<std::size_t>(phase)] += cost;
  }

  double phase_cost(Phase phase) const {
    std::lock_guard lock(mu_);
    return phase_cost_[static_cast<std::size_t>(phase)];
  }

  std::size_t queries(Phase phase) const {
    std::lock_guard lock(mu_);
    return queries_[static_cast<std::size_t>(phase)];
  }

  double total() const {
    std::lock_guard lock(mu_);
    double sum = 0.0;
    for (double c : phase_cost_) sum += c;
    return sum;
  }

  double high_water(const Candidate& c) const {
    std::lock_guard lock(mu_);
    const auto it = high_water_.find(c);
    return it == high_water_.end() ? 0.0 : it->second;
  }

 private:
  mutable std::mutex mu_;
  std::array<double, 4> phase_cost_{};
  std::array<std::size_t, 4> queries_{};
  std::map<Candidate, double> high_water_;
};

struct EliminationRecord {
  Candidate candidate;
  Phase phase = Phase::kInterEs;
  std::size_t rung = 0;
  double budget = 0.0;
  // Last observed error; for a cluster member dropped with its representative
  // this is the representative's error and `with_cluster` is set.
  double error = 0.0;
  bool with_cluster = false;
};

struct RungRecord {
  Phase phase = Phase::kInterEs;
  std::size_t rung = 0;
  double budget = 0.0;
  std::size_t live = 0;
  std::size_t kept = 0;
};

// Mutable state shared by the phases of one search; survives a failing phase
// so a partial report can still be assembled.
struct SearchState {
  CostLedger ledger;
  std::vector<EliminationRecord> eliminations;
  std::vector<RungRecord> rungs;
  std::map<Candidate, double> last_error;
  std::size_t parallelism = default_parallelism();
};

struct ShaResult {
  std::vector<Candidate> survivors;  // by final observed error, best first
  std::vector<EliminationRecord> eliminated;
};

namespace detail {

// Queries every arm at one budget (concurrently) and books the records in
// arm order, so costs and logs do not depend on completion order.
inline std::vector<EvalRecord> evaluate_rung(std::span<const Candidate> arms, double budget, Oracle& oracle,
                                             SearchState& state, Phase phase) {
  std::vector<std::optional<EvalRecord>> results(arms.size());
  std::exception_ptr failure;
  try {
    parallel_for(
        arms.size(), [&](std::size_t i) { results[i] = oracle.query(arms[i], budget); }, state.parallelism);
  } catch (...) {
    failure = std::current_exception();
  }
  std::vector<EvalRecord> out;
  for (const auto& r : results) {
    if (!r) continue;
    state.ledger.book(phase, *r);
    state.last_error[r->candidate] = r->error;
    out.push_back(*r);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace detail

// Successive halving. Rung k trains every live arm to min(b * eta^k, R),
// ranks by (error, candidate) and keeps max(keep_k, ceil(live / eta)). Stops
// once live <= keep_k (survivors are then brought to R without pruning) or
// after the rung at budget R.
inline ShaResult sha(std::span<const Candidate> arms, Oracle& oracle, const ShaConfig& cfg, SearchState& state,
                     Phase phase) {
  if (arms.empty()) throw Error(ErrorKind::kInput, "successive halving needs at least one arm");
  validate(cfg);
  const auto budgets = sha_budgets(cfg);
  std::vector<Candidate> live(arms.begin(), arms.end());
  std::map<Candidate, double> observed;
  ShaResult out;
  double reached = 0.0;

  auto rank = [&](std::vector<Candidate>& v) {
    std::stable_sort(v.begin(), v.end(), [&](const Candidate& a, const Candidate& b) {
      const double ea = observed.at(a), eb = observed.at(b);
      if (ea != eb) return ea < eb;
      return a < b;
    });
  };

  for (std::size_t k = 0;; ++k) {
    if (live.size() <= cfg.keep_k) {
      if (reached < cfg.max_ratio * (1.0 - kRatioSlack)) {
        for (const auto& r : detail::evaluate_rung(live, cfg.max_ratio, oracle, state, phase)) {
          observed[r.candidate] = r.error;
        }
        state.rungs.push_back({phase, k, cfg.max_ratio, live.size(), live.size()});
        rank(live);
      }
      break;
    }
    const double budget = budgets[std::min(k, budgets.size() - 1)];
    for (const auto& r : detail::evaluate_rung(live, budget, oracle, state, phase)) observed[r.candidate] = r.error;
    reached = budget;
    rank(live);
    const auto keep = std::max<std::size_t>(
        cfg.keep_k, static_cast<std::size_t>(std::ceil(static_cast<double>(live.size()) / cfg.eta)));
    state.rungs.push_back({phase, k, budget, live.size(), std::min(keep, live.size())});
    for (std::size_t i = keep; i < live.size(); ++i) {
      EliminationRecord rec{live[i], phase, k, budget, observed.at(live[i]), false};
      out.eliminated.push_back(rec);
      state.eliminations.push_back(rec);
    }
    if (keep < live.size()) live.resize(keep);
    if (budget >= cfg.max_ratio * (1.0 - kRatioSlack)) break;
  }
  out.survivors = std::move(live);
  return out;
}

// Inter-cluster evaluation: SHA over cluster representatives with
// keep_k = min(topk_inter, #clusters). Returns indices of surviving clusters,
// best representative first. Members of a dropped cluster are logged as
// eliminated together with their representative.
inline std::vector<std::size_t> run_inter_cluster(std::span<const CandidateCluster> clusters, Oracle& oracle,
                                                  const SearchConfig& cfg, SearchState& state) {
  if (clusters.empty()) throw Error(ErrorKind::kInput, "inter-cluster evaluation needs >= 1 cluster");
  std::vector<Candidate> reps;
  std::map<Candidate, std::size_t> cluster_of;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    reps.push_back(clusters[i].representative);
    cluster_of[clusters[i].representative] = i;
  }
  ShaConfig sha_cfg = cfg.sha;
  sha_cfg.keep_k = std::min(cfg.topk_inter, clusters.size());
  const auto result = sha(reps, oracle, sha_cfg, state, Phase::kInterEs);
  for (const auto& rec : result.eliminated) {
    const auto& members = clusters[cluster_of.at(rec.candidate)].members;
    std::vector<Candidate> rest;
    for (const auto& m : members)
      if (m != rec.candidate) rest.push_back(m);
    std::sort(rest.begin(), rest.end());
    for (const auto& m : rest) state.eliminations.push_back({m, rec.phase, rec.rung, rec.budget, rec.error, true});
  }
  std::vector<std::size_t> out;
  for (const auto& c : result.survivors) out.push_back(cluster_of.at(c));
  return out;
}

// Intra-cluster evaluation: SHA over all members of the surviving clusters
// with keep_k = min(topk_intra, pool size). Representatives keep their
// checkpoints through the oracle's accounting.
inline std::vector<Candidate> run_intra_cluster(std::span<const CandidateCluster> survivors, Oracle& oracle,
                                                const SearchConfig& cfg, SearchState& state) {
  if (survivors.empty()) throw Error(ErrorKind::kInput, "intra-cluster evaluation needs surviving clusters");
  std::vector<Candidate> pool;
  for (const auto& c : survivors) pool.insert(pool.end(), c.members.begin(), c.members.end());
  ShaConfig sha_cfg = cfg.sha;
  sha_cfg.keep_k = std::min(cfg.topk_intra, pool.size());
  return sha(pool, oracle, sha_cfg, state, Phase::kIntraEs).survivors;
}

// Inputs of one search. The distance callbacks add the number of similarity
// evaluations they performed to *evaluations.
struct SearchJob {
  std::vector<std::string> ve_ids;
  std::vector<std::string> llm_ids;
  std::function<DistanceMatrix(std::size_t* evaluations)> ve_distances;
  std::function<DistanceMatrix(const std::string& ve_medoid, std::size_t* evaluations)> llm_distances;
  Oracle* oracle = nullptr;
  SearchConfig config;
  // Full-data errors when known (e.g. recorded in a trace); used for reporting only.
  std::map<Candidate, double> full_errors;
  std::size_t parallelism = default_parallelism();
};

struct GridResult {
  Ranking ranking;  // candidate ids by full-data error, best first
  std::map<Candidate, double> errors;
  double cost = 0.0;
};

struct GridComparison {
  double grid_cost = 0.0;
  double speedup = 0.0;
  double tau = 0.0;
  double tau_w = 0.0;
  std::size_t top_k = 0;
  double topk_tau_w = 0.0;
  Candidate grid_top1;
  bool top1_match = false;
};

struct SearchReport {
  bool incomplete = false;
  std::string failure;
  std::optional<ErrorKind> failure_kind;
  std::vector<Candidate> ranking;
  std::optional<Candidate> top1;
  double top1_predicted_error = 0.0;
  std::optional<double> top1_true_error;
  std::vector<EliminationRecord> elimination_log;
  std::vector<RungRecord> rungs;
  std::array<double, 4> phase_costs{};
  std::array<std::size_t, 4> phase_queries{};
  double total_cost = 0.0;
  CandidateClustering clustering;
  std::vector<Candidate> shortlist;
  std::vector<ScalingFit> fits;
  std::map<Candidate, double> last_error;
  SearchConfig config;
  std::optional<GridComparison> comparison;
};

namespace detail {

inline bool fit_better(const ScalingFit& a, const ScalingFit& b) {
  if (a.failure.has_value() != b.failure.has_value()) return !a.failure.has_value();
  if (a.converged != b.converged) return a.converged;
  if (a.predicted_full_error != b.predicted_full_error) return a.predicted_full_error < b.predicted_full_error;
  return a.candidate < b.candidate;
}

// Survivors by predicted error, then eliminated candidates in reverse
// elimination order; within one elimination event by error, then
// representative before cluster members, then id.
inline std::vector<Candidate> assemble_ranking(const std::vector<ScalingFit>& fits,
                                               const std::vector<EliminationRecord>& eliminations) {
  std::vector<Candidate> out;
  std::vector<ScalingFit> sorted = fits;
  std::sort(sorted.begin(), sorted.end(), fit_better);
  for (const auto& f : sorted) out.push_back(f.candidate);
  std::vector<EliminationRecord> elim = eliminations;
  std::stable_sort(elim.begin(), elim.end(), [](const EliminationRecord& a, const EliminationRecord& b) {
    const auto ka = std::make_pair(static_cast<int>(a.phase), a.rung);
    const auto kb = std::make_pair(static_cast<int>(b.phase), b.rung);
    if (ka != kb) return ka > kb;
    if (a.error != b.error) return a.error < b.error;
    if (a.with_cluster != b.with_cluster) return !a.with_cluster;
    return a.candidate < b.candidate;
  });
  for (const auto& e : elim) out.push_back(e.candidate);
  return out;
}

inline void snapshot(SearchReport& report, const SearchState& state) {
  report.elimination_log = state.eliminations;
  report.rungs = state.rungs;
  for (auto p : kPhases) {
    report.phase_costs[static_cast<std::size_t>(p)] = state.ledger.phase_cost(p);
    report.phase_queries[static_cast<std::size_t>(p)] = state.ledger.queries(p);
  }
  report.total_cost = state.ledger.total();
  report.last_error = state.last_error;
}

}  // namespace detail

// Clustering -> inter-cluster SHA -> intra-cluster SHA -> scaling prediction.
// Any phase error yields a report marked incomplete that keeps what was
// recorded up to the failure.
inline SearchReport run(const SearchJob& job) {
  SearchReport report;
  report.config = job.config;
  SearchState state;
  state.parallelism = job.parallelism;
  try {
    validate(job.config);
    if (!job.oracle) throw Error(ErrorKind::kConfig, "search job has no oracle");
    if (job.ve_ids.empty() || job.llm_ids.empty()) throw Error(ErrorKind::kInput, "empty model zoo");
    const auto& cfg = job.config;

    std::size_t evaluations = 0;
    const auto ve_dist = job.ve_distances(&evaluations);
    report.clustering = cluster_candidates(
        ve_dist, [&](const std::string& medoid) { return job.llm_distances(medoid, &evaluations); }, cfg.t_ve,
        cfg.t_llm);
    report.clustering.similarity_evaluations = evaluations;
    state.ledger.book_cost(Phase::kClustering, cfg.cka_eval_cost * static_cast<double>(evaluations));

    const auto& clusters = report.clustering.clusters;
    const auto surviving = run_inter_cluster(clusters, *job.oracle, cfg, state);
    std::vector<CandidateCluster> survivor_clusters;
    for (auto i : surviving) survivor_clusters.push_back(clusters[i]);

    report.shortlist = run_intra_cluster(survivor_clusters, *job.oracle, cfg, state);

    report.fits = scaling_prediction(report.shortlist, *job.oracle, cfg.scaling, state.parallelism);
    for (const auto& f : report.fits) {
      for (const auto& rec : f.records) {
        state.ledger.book(Phase::kPrediction, rec);
        state.last_error[rec.candidate] = rec.error;
      }
    }
    const auto best = select_best(report.fits);
    report.top1 = best;
    for (const auto& f : report.fits)
      if (f.candidate == best) report.top1_predicted_error = f.predicted_full_error;
    if (const auto it = job.full_errors.find(best); it != job.full_errors.end()) {
      report.top1_true_error = it->second;
    }
    report.ranking = detail::assemble_ranking(report.fits, state.eliminations);
  } catch (const Error& e) {
    report.incomplete = true;
    report.failure_kind = e.kind();
    report.failure = std::string(to_string(e.kind())) + ": " + e.what();
    report.ranking = detail::assemble_ranking({}, state.eliminations);
  }
  detail::snapshot(report, state);
  return report;
}

// Grid-search baseline: every candidate evaluated at full data (ratio 1.0).
// Pass a fresh oracle so its checkpoint accounting starts empty.
inline GridResult run_grid(std::span<const Candidate> candidates, Oracle& oracle,
                           std::size_t parallelism = default_parallelism()) {
  std::vector<EvalRecord> records(candidates.size());
  parallel_for(
      candidates.size(), [&](std::size_t i) { records[i] = oracle.query(candidates[i], 1.0); }, parallelism);
  GridResult out;
  for (const auto& r : records) {
    out.errors[r.candidate] = r.error;
    out.cost += r.cost;
  }
  std::vector<Candidate> order(candidates.begin(), candidates.end());
  std::sort(order.begin(), order.end(), [&](const Candidate& a, const Candidate& b) {
    const double ea = out.errors.at(a), eb = out.errors.at(b);
    if (ea != eb) return ea < eb;
    return a < b;
  });
  for (const auto& c : order) out.ranking.ids.push_back(c.id());
  return out;
}

inline Ranking to_ranking(std::span<const Candidate> ordered) {
  Ranking r;
  for (const auto& c : ordered) r.ids.push_back(c.id());
  return r;
}

// Ranking fidelity and cost of a completed search against the grid baseline.
inline GridComparison compare_with_grid(const SearchReport& report, const GridResult& grid, std::size_t top_k = 10) {
  if (report.incomplete) throw Error(ErrorKind::kInput, "cannot compare an incomplete report");
  GridComparison out;
  const auto ours = to_ranking(report.ranking);
  out.grid_cost = grid.cost;
  out.speedup = speedup(report.total_cost, grid.cost);
  out.tau = kendall_tau(grid.ranking, ours);
  out.tau_w = weighted_kendall_tau(grid.ranking, ours);
  out.top_k = std::min(top_k, grid.ranking.ids.size());
  out.topk_tau_w = out.top_k >= 2 ? topk_tau(grid.ranking, ours, out.top_k) : 1.0;
  const auto& gt = grid.ranking.ids.front();
  for (const auto& [c, e] : grid.errors)
    if (c.id() == gt) out.grid_top1 = c;
  out.top1_match = report.top1 && *report.top1 == out.grid_top1;
  return out;
}

}  // namespace mordal
