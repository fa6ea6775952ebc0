#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mordal/candidate.hpp"
#include "mordal/config.hpp"
#include "mordal/error.hpp"
#include "mordal/oracle.hpp"
#include "mordal/parallel.hpp"

namespace mordal {

struct LogPoint {
  double log_ratio = 0.0;
  double log_error = 0.0;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double mse = 0.0;  // mean squared residual of log_error
};

// Ordinary least squares of log_error on log_ratio.
inline LineFit fit_loglinear(std::span<const LogPoint> points) {
  std::set<double> distinct;
  for (const auto& p : points) distinct.insert(p.log_ratio);
  if (distinct.size() < 2) {
    throw Error(ErrorKind::kDegenerate, "log-linear fit needs >= 2 distinct ratios");
  }
  const auto n = static_cast<double>(points.size());
  double mean_x = 0.0, mean_y = 0.0;
  for (const auto& p : points) {
    mean_x += p.log_ratio;
    mean_y += p.log_error;
  }
  mean_x /= n;
  mean_y /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : points) {
    const double dx = p.log_ratio - mean_x;
    sxx += dx * dx;
    sxy += dx * (p.log_error - mean_y);
  }
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_x;
  double sse = 0.0;
  for (const auto& p : points) {
    const double r = p.log_error - (fit.intercept + fit.slope * p.log_ratio);
    sse += r * r;
  }
  fit.mse = sse / n;
  return fit;
}

struct ScalingFit {
  Candidate candidate;
  double slope = 0.0;
  double intercept = 0.0;
  double fit_mse = 0.0;
  std::vector<LogPoint> points;    // every collected point, in query order
  std::size_t fitted_points = 0;   // trailing points used by the reported fit
  double predicted_full_error = 1.0;
  bool converged = false;
  std::vector<EvalRecord> records;
  std::optional<std::string> failure;  // oracle error; the fit fields are then meaningless
};

// Full-data prediction: log r = 0 at r = 1, so the fitted line gives exp(intercept).
inline double predict_full_error(double intercept) { return clamp_error(std::exp(intercept)); }

// Collects (log r, log Err) at r = R, R/u, R/u^2, ... and fits a line once more
// than p points exist. Stops when the fit loss is at most delta; if min_ratio
// is passed first, the lowest-loss fit is returned flagged unconverged.
inline ScalingFit predict_candidate(const Candidate& candidate, Oracle& oracle, const ScalingConfig& cfg) {
  ScalingFit out;
  out.candidate = candidate;
  const double floor = cfg.effective_min_ratio() * (1.0 - kRatioSlack);
  std::optional<LineFit> best;
  std::size_t best_count = 0;
  bool done = false;

  auto fit_window = [&]() {
    const std::size_t n = out.points.size();
    const std::size_t w = cfg.window == 0 ? n : std::min(cfg.window, n);
    return std::make_pair(fit_loglinear(std::span<const LogPoint>(out.points).subspan(n - w)), w);
  };

  for (double r = cfg.max_ratio; r >= floor && !done; r /= cfg.shrink) {
    EvalRecord rec;
    try {
      rec = oracle.query(candidate, r);
    } catch (const Error& e) {
      // Records collected so far stay attached so their cost is still booked.
      out.failure = std::string(to_string(e.kind())) + ": " + e.what();
      return out;
    }
    out.records.push_back(rec);
    out.points.push_back({std::log(r), std::log(clamp_error(rec.error))});
    if (out.points.size() <= cfg.min_points) continue;
    const auto [fit, used] = fit_window();
    if (cfg.strict_literal) {
      best = fit;
      best_count = used;
      done = fit.mse > cfg.fit_tolerance;
    } else {
      if (!best || fit.mse < best->mse) {
        best = fit;
        best_count = used;
      }
      if (fit.mse <= cfg.fit_tolerance) {
        best = fit;
        best_count = used;
        done = true;
      }
    }
  }
  if (!best) {
    // Only reachable when min_ratio cuts the chain short; fit what exists.
    const auto [fit, used] = fit_window();
    best = fit;
    best_count = used;
  }
  out.slope = best->slope;
  out.intercept = best->intercept;
  out.fit_mse = best->mse;
  out.fitted_points = best_count;
  out.converged = best->mse <= cfg.fit_tolerance;
  out.predicted_full_error = predict_full_error(best->intercept);
  return out;
}

// Candidates are independent and may run concurrently; an oracle failure is
// recorded on that candidate's fit without aborting the others.
inline std::vector<ScalingFit> scaling_prediction(std::span<const Candidate> shortlist, Oracle& oracle,
                                                  const ScalingConfig& cfg,
                                                  std::size_t parallelism = default_parallelism()) {
  if (shortlist.empty()) throw Error(ErrorKind::kInput, "scaling prediction needs a non-empty shortlist");
  validate(cfg);
  std::vector<ScalingFit> fits(shortlist.size());
  parallel_for(
      shortlist.size(),
      [&](std::size_t i) {
        try {
          fits[i] = predict_candidate(shortlist[i], oracle, cfg);
        } catch (const Error& e) {
          fits[i] = ScalingFit{};
          fits[i].candidate = shortlist[i];
          fits[i].failure = std::string(to_string(e.kind())) + ": " + e.what();
        }
      },
      parallelism);
  return fits;
}

// Minimum predicted full-data error; converged fits outrank unconverged ones,
// failed fits are skipped, ties go to the smaller candidate.
inline Candidate select_best(std::span<const ScalingFit> fits) {
  const ScalingFit* best = nullptr;
  auto better = [](const ScalingFit& a, const ScalingFit& b) {
    if (a.converged != b.converged) return a.converged;
    if (a.predicted_full_error != b.predicted_full_error) return a.predicted_full_error < b.predicted_full_error;
    return a.candidate < b.candidate;
  };
  for (const auto& f : fits) {
    if (f.failure) continue;
    if (!best || better(f, *best)) best = &f;
  }
  if (!best) throw Error(ErrorKind::kInput, "no successful scaling fit to select from");
  return best->candidate;
}

}  // namespace mordal
