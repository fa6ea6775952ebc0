#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mordal/error.hpp"

namespace mordal {

// Successive halving: rung k trains every live arm to min(b * eta^k, R).
struct ShaConfig {
  double max_ratio = 0.125;     // R
  double initial_budget = 0.03; // b
  double eta = 2.0;
  std::size_t keep_k = 1;
};

// Scaling prediction: points at R, R/u, R/u^2, ... until a log-log line fits.
struct ScalingConfig {
  double max_ratio = 0.125;  // R, shared with SHA
  double shrink = 2.0;       // u
  std::size_t min_points = 3;  // p; a fit is attempted once more than p points exist
  double fit_tolerance = 5e-5; // delta on the mean squared log residual
  std::optional<double> min_ratio;  // defaults to R / u^5
  // Fit on the most recent `window` points only (0 = all collected points).
  std::size_t window = 0;
  // Stop when the fit loss exceeds delta (the literal reading of the loop
  // condition) instead of when it drops to delta.
  bool strict_literal = false;

  double effective_min_ratio() const { return min_ratio.value_or(max_ratio / std::pow(shrink, 5)); }
};

struct SearchConfig {
  double t_ve = 0.7;
  double t_llm = 0.8;
  std::size_t topk_inter = 3;
  std::size_t topk_intra = 3;
  ShaConfig sha;
  ScalingConfig scaling;
  std::uint64_t seed = 0;
  // 0 = full-data CKA; otherwise minibatch CKA with this batch size.
  std::size_t cka_batch_size = 0;
  // Cost booked to the clustering phase per similarity evaluation.
  double cka_eval_cost = 0.0;
};

inline constexpr double kRatioSlack = 1e-9;

inline void validate(const ShaConfig& c) {
  if (!(c.max_ratio > 0.0 && c.max_ratio <= 1.0)) throw Error(ErrorKind::kConfig, "SHA R must lie in (0, 1]");
  if (!(c.initial_budget > 0.0 && c.initial_budget <= c.max_ratio)) {
    throw Error(ErrorKind::kConfig, "SHA b must satisfy 0 < b <= R");
  }
  if (!(c.eta > 1.0)) throw Error(ErrorKind::kConfig, "SHA eta must be > 1");
  if (c.keep_k == 0) throw Error(ErrorKind::kConfig, "SHA keep_k must be >= 1");
}

inline void validate(const ScalingConfig& c) {
  if (!(c.max_ratio > 0.0 && c.max_ratio <= 1.0)) throw Error(ErrorKind::kConfig, "scaling R must lie in (0, 1]");
  if (!(c.shrink > 1.0)) throw Error(ErrorKind::kConfig, "scaling u must be > 1");
  if (c.min_points == 0) throw Error(ErrorKind::kConfig, "scaling p must be >= 1");
  if (!(c.fit_tolerance > 0.0)) throw Error(ErrorKind::kConfig, "scaling delta must be > 0");
  const double min_ratio = c.effective_min_ratio();
  if (!(min_ratio > 0.0)) throw Error(ErrorKind::kConfig, "scaling min_ratio must be > 0");
  // p + 1 points are needed for the first fit.
  const double deepest = c.max_ratio / std::pow(c.shrink, static_cast<double>(c.min_points));
  if (deepest < min_ratio * (1.0 - kRatioSlack)) {
    throw Error(ErrorKind::kConfig, "scaling min_ratio leaves fewer than p + 1 reachable points");
  }
  if (c.window == 1) throw Error(ErrorKind::kConfig, "scaling window must be 0 or >= 2");
}

inline void validate(const SearchConfig& c) {
  if (!(c.t_ve >= 0.0 && c.t_ve <= 1.0) || !(c.t_llm >= 0.0 && c.t_llm <= 1.0)) {
    throw Error(ErrorKind::kConfig, "clustering thresholds must lie in [0, 1]");
  }
  if (c.topk_inter == 0 || c.topk_intra == 0) throw Error(ErrorKind::kConfig, "top-k values must be >= 1");
  validate(c.sha);
  validate(c.scaling);
  if (c.sha.max_ratio != c.scaling.max_ratio) {
    throw Error(ErrorKind::kConfig, "early_stopping.R and scaling_prediction.R must agree");
  }
  if (c.cka_batch_size != 0 && c.cka_batch_size < 4) {
    throw Error(ErrorKind::kConfig, "cka_batch_size must be 0 or >= 4");
  }
  if (!(c.cka_eval_cost >= 0.0)) throw Error(ErrorKind::kConfig, "cka_eval_cost must be >= 0");
}

// b, b*eta, b*eta^2, ... capped at R; the last entry is R.
inline std::vector<double> sha_budgets(const ShaConfig& c) {
  std::vector<double> out;
  double budget = c.initial_budget;
  while (budget < c.max_ratio * (1.0 - kRatioSlack)) {
    out.push_back(budget);
    budget *= c.eta;
  }
  out.push_back(c.max_ratio);
  return out;
}

// R, R/u, R/u^2, ... down to min_ratio.
inline std::vector<double> scaling_ratios(const ScalingConfig& c) {
  std::vector<double> out;
  const double floor = c.effective_min_ratio() * (1.0 - kRatioSlack);
  for (double r = c.max_ratio; r >= floor; r /= c.shrink) out.push_back(r);
  return out;
}

inline void append_unique_ratio(std::vector<double>& v, double r) {
  for (double x : v) {
    if (std::abs(x - r) <= kRatioSlack * std::max(x, r)) return;
  }
  v.push_back(r);
}

// Every ratio a search with this config may query.
inline std::vector<double> required_ratios(const SearchConfig& c) {
  std::vector<double> out;
  for (double r : sha_budgets(c.sha)) append_unique_ratio(out, r);
  for (double r : scaling_ratios(c.scaling)) append_unique_ratio(out, r);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mordal
