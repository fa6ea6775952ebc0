#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

#include "mordal/candidate.hpp"
#include "mordal/error.hpp"

namespace mordal {

// Errors are rates in (0, 1]; the floor keeps log(Err) defined.
inline constexpr double kErrorFloor = 1e-6;

inline double clamp_error(double e) { return std::clamp(e, kErrorFloor, 1.0); }

// Abstract cost units: 1.0 = one full-data alignment of one candidate.
struct CostModel {
  double full_train_cost = 1.0;
  double eval_cost = 0.01;
};

inline void validate(const CostModel& m) {
  if (!(m.full_train_cost > 0.0) || !(m.eval_cost > 0.0)) {
    throw Error(ErrorKind::kConfig, "cost model entries must be > 0");
  }
}

// One oracle observation: error at a data-sample ratio plus the cost charged for it.
struct EvalRecord {
  Candidate candidate;
  double ratio = 0.0;
  double error = 0.0;
  double cost = 0.0;
};

// Evaluate(D_align, D_task, c, r) behind a pluggable backend.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual EvalRecord query(const Candidate& candidate, double ratio) = 0;

  // Same backend and data with empty cost accounting.
  virtual std::unique_ptr<Oracle> fresh() const = 0;
};

inline void require_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw Error(ErrorKind::kUnsupportedRatio, "ratio must lie in (0, 1], got " + std::to_string(ratio));
  }
}

// Checkpoint-reuse cost accounting. Training a candidate further only pays
// for the increment above its high-water ratio; any query at or below that
// ratio reads an intermediate checkpoint and pays eval_cost only.
class CheckpointLedger {
 public:
  explicit CheckpointLedger(CostModel model = {}) : model_(model) { validate(model_); }

  double charge(const Candidate& c, double ratio) {
    std::lock_guard lock(mu_);
    double& high = high_water_[c];
    double training = 0.0;
    if (ratio > high) {
      training = (ratio - high) * model_.full_train_cost;
      high = ratio;
    }
    training_[c] += training;
    return training + model_.eval_cost;
  }

  double high_water(const Candidate& c) const {
    std::lock_guard lock(mu_);
    const auto it = high_water_.find(c);
    return it == high_water_.end() ? 0.0 : it->second;
  }

  double training_cost(const Candidate& c) const {
    std::lock_guard lock(mu_);
    const auto it = training_.find(c);
    return it == training_.end() ? 0.0 : it->second;
  }

  const CostModel& model() const { return model_; }

 private:
  CostModel model_;
  mutable std::mutex mu_;
  std::map<Candidate, double> high_water_;
  std::map<Candidate, double> training_;
};

enum class CurveFamily { kPurePowerLaw, kFlooredPowerLaw };

inline std::string_view to_string(CurveFamily f) {
  return f == CurveFamily::kPurePowerLaw ? "pure-power-law" : "floored-power-law";
}

inline CurveFamily parse_curve_family(std::string_view s) {
  if (s == "pure-power-law") return CurveFamily::kPurePowerLaw;
  if (s == "floored-power-law") return CurveFamily::kFlooredPowerLaw;
  throw Error(ErrorKind::kSpec, "unknown curve family '" + std::string(s) + "'");
}

// Err(r) = [floor_e +] coeff_b * r^(-exponent_beta), with Gaussian noise of
// std-dev noise_sigma added to log Err.
struct SyntheticCurveParams {
  double floor_e = 0.0;
  double coeff_b = 0.3;
  double exponent_beta = 0.1;
  double noise_sigma = 0.0;
  CurveFamily family = CurveFamily::kFlooredPowerLaw;
};

inline void validate(const SyntheticCurveParams& p) {
  if (!(p.floor_e >= 0.0) || !(p.coeff_b > 0.0) || !(p.exponent_beta > 0.0) ||
      !(p.noise_sigma >= 0.0)) {
    throw Error(ErrorKind::kSpec, "curve parameters out of range");
  }
}

inline double noiseless_error(const SyntheticCurveParams& p, double ratio) {
  const double power = p.coeff_b * std::pow(ratio, -p.exponent_beta);
  return clamp_error(p.family == CurveFamily::kPurePowerLaw ? power : p.floor_e + power);
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// Standard normal draw that is a pure function of (seed, candidate, ratio).
// mt19937_64 and seed_seq are fully specified by the standard; the normal
// transform is done by hand because std::normal_distribution is not.
inline double keyed_normal(std::uint64_t seed, const Candidate& c, double ratio) {
  std::uint64_t ratio_bits = 0;
  static_assert(sizeof(ratio_bits) == sizeof(ratio));
  std::memcpy(&ratio_bits, &ratio, sizeof(ratio));
  const std::uint64_t h = fnv1a(c.id());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(ratio_bits),
                    static_cast<std::uint32_t>(ratio_bits >> 32)};
  std::mt19937_64 gen(seq);
  constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
  const double u1 = (static_cast<double>(gen() >> 11) + 0.5) * scale;
  const double u2 = static_cast<double>(gen() >> 11) * scale;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

inline double synthetic_error(const SyntheticCurveParams& p, const Candidate& c, double ratio,
                              std::uint64_t seed) {
  if (p.noise_sigma == 0.0) return noiseless_error(p, ratio);
  const double z = detail::keyed_normal(seed, c, ratio);
  return clamp_error(std::exp(std::log(noiseless_error(p, ratio)) + p.noise_sigma * z));
}

// Oracle over closed-form learning curves. Any ratio in (0, 1] is supported.
class SyntheticOracle : public Oracle {
 public:
  SyntheticOracle(std::map<Candidate, SyntheticCurveParams> curves, CostModel cost = {},
                  std::uint64_t seed = 0)
      : curves_(std::make_shared<const std::map<Candidate, SyntheticCurveParams>>(std::move(curves))),
        seed_(seed),
        ledger_(cost) {
    for (const auto& [c, p] : *curves_) validate(p);
  }

  EvalRecord query(const Candidate& candidate, double ratio) override {
    require_ratio(ratio);
    const auto it = curves_->find(candidate);
    if (it == curves_->end()) {
      throw Error(ErrorKind::kLookup, "candidate " + candidate.id() + " not in zoo");
    }
    const double error = synthetic_error(it->second, candidate, ratio, seed_);
    return {candidate, ratio, error, ledger_.charge(candidate, ratio)};
  }

  std::unique_ptr<Oracle> fresh() const override {
    return std::unique_ptr<Oracle>(new SyntheticOracle(curves_, ledger_.model(), seed_));
  }

  const CheckpointLedger& ledger() const { return ledger_; }

 private:
  SyntheticOracle(std::shared_ptr<const std::map<Candidate, SyntheticCurveParams>> curves,
                  CostModel cost, std::uint64_t seed)
      : curves_(std::move(curves)), seed_(seed), ledger_(cost) {}

  std::shared_ptr<const std::map<Candidate, SyntheticCurveParams>> curves_;
  std::uint64_t seed_;
  CheckpointLedger ledger_;
};

}  // namespace mordal
