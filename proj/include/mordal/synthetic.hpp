#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mordal/candidate.hpp"
#include "mordal/config.hpp"
#include "mordal/error.hpp"
#include "mordal/oracle.hpp"
#include "mordal/trace.hpp"

namespace mordal {

// Desk-scale stand-in for a real model zoo. VEs and LLMs are assigned to
// planted groups; activations share a per-group basis, and every candidate's
// full-data error is a function of its (VE group, LLM group) pair plus a
// candidate-level perturbation.
struct SyntheticSpec {
  std::vector<std::size_t> ve_groups;   // planted group per VE
  std::vector<std::size_t> llm_groups;  // planted group per LLM
  // Optional: LLM grouping seen through each VE group's projector; row g
  // replaces llm_groups for VEs in group g.
  std::vector<std::vector<std::size_t>> llm_groups_by_ve_group;
  std::vector<std::string> ve_ids;   // defaults to ve0, ve1, ...
  std::vector<std::string> llm_ids;  // defaults to llm0, llm1, ...

  std::size_t n_samples = 64;
  std::size_t n_features = 16;
  double activation_noise = 0.25;  // per-model noise std relative to a unit basis

  CurveFamily family = CurveFamily::kFlooredPowerLaw;
  double base_error = 0.2;
  double group_spread = 0.2;       // group effects drawn from U[0, spread]
  double candidate_spread = 0.03;  // candidate perturbation drawn from U[0, spread]
  double planted_margin = 0.02;
  double floor_fraction = 0.3;     // floored family: floor_e = fraction * Err(1)
  double beta_min = 0.08;
  double beta_max = 0.14;
  double beta_jitter = 0.004;
  double noise_sigma = 0.005;
  // Explicit curve parameters for (VE group, LLM group) pairs; drawn otherwise.
  std::map<std::pair<std::size_t, std::size_t>, SyntheticCurveParams> group_curves;

  std::vector<double> ratio_grid;  // defaults to required_ratios(SearchConfig{}) plus 1.0
  CostModel cost;
};

struct SyntheticTrace {
  TraceBundle bundle;
  Candidate planted_best;
  std::map<Candidate, SyntheticCurveParams> curves;
};

namespace detail {

// Sequential standard normals on mt19937_64 (portable across standard libraries).
class PortableNormal {
 public:
  PortableNormal(std::uint64_t seed, std::uint32_t salt) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), salt};
    gen_.seed(seq);
  }

  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
  }

  double normal() {
    if (cached_) {
      cached_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    spare_ = radius * std::sin(2.0 * std::numbers::pi * u2);
    cached_ = true;
    return radius * std::cos(2.0 * std::numbers::pi * u2);
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double scale) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = scale * normal();
    return m;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool cached_ = false;
};

inline double full_error(const SyntheticCurveParams& p) { return noiseless_error(p, 1.0); }

}  // namespace detail

inline std::vector<double> default_ratio_grid() {
  auto grid = required_ratios(SearchConfig{});
  append_unique_ratio(grid, 1.0);
  std::sort(grid.begin(), grid.end());
  return grid;
}

inline void validate(const SyntheticSpec& s) {
  auto check_groups = [](const std::vector<std::size_t>& groups, const char* what) {
    if (groups.empty()) throw Error(ErrorKind::kSpec, std::string("empty zoo: ") + what);
    const std::size_t n = *std::max_element(groups.begin(), groups.end()) + 1;
    std::vector<bool> used(n, false);
    for (auto g : groups) used[g] = true;
    for (std::size_t g = 0; g < n; ++g) {
      if (!used[g]) throw Error(ErrorKind::kSpec, std::string(what) + " group " + std::to_string(g) + " is empty");
    }
  };
  check_groups(s.ve_groups, "ve");
  check_groups(s.llm_groups, "llm");
  const std::size_t n_ve_groups = *std::max_element(s.ve_groups.begin(), s.ve_groups.end()) + 1;
  if (!s.llm_groups_by_ve_group.empty()) {
    if (s.llm_groups_by_ve_group.size() != n_ve_groups) {
      throw Error(ErrorKind::kSpec, "llm_groups_by_ve_group needs one row per VE group");
    }
    for (const auto& row : s.llm_groups_by_ve_group) {
      if (row.size() != s.llm_groups.size()) {
        throw Error(ErrorKind::kSpec, "llm_groups_by_ve_group row size must match the LLM zoo");
      }
      check_groups(row, "conditioned llm");
    }
  }
  if (!s.ve_ids.empty() && s.ve_ids.size() != s.ve_groups.size()) {
    throw Error(ErrorKind::kSpec, "ve_ids size must match ve_groups");
  }
  if (!s.llm_ids.empty() && s.llm_ids.size() != s.llm_groups.size()) {
    throw Error(ErrorKind::kSpec, "llm_ids size must match llm_groups");
  }
  if (s.n_samples < 4 || s.n_features < 1) throw Error(ErrorKind::kSpec, "need n_samples >= 4, n_features >= 1");
  if (!(s.activation_noise >= 0.0) || !(s.group_spread >= 0.0) || !(s.candidate_spread >= 0.0) ||
      !(s.planted_margin > 0.0) || !(s.noise_sigma >= 0.0) || !(s.beta_jitter >= 0.0)) {
    throw Error(ErrorKind::kSpec, "spread, margin and noise parameters must be non-negative (margin > 0)");
  }
  if (!(s.base_error > 0.0) || !(s.floor_fraction >= 0.0 && s.floor_fraction < 1.0)) {
    throw Error(ErrorKind::kSpec, "need base_error > 0 and floor_fraction in [0, 1)");
  }
  if (!(s.beta_min > 0.0 && s.beta_max >= s.beta_min && s.beta_min - s.beta_jitter > 0.0)) {
    throw Error(ErrorKind::kSpec, "need 0 < beta_min - beta_jitter and beta_min <= beta_max");
  }
  for (const auto& [key, p] : s.group_curves) validate(p);
}

// Deterministic in (spec, seed). The full-data point (ratio 1.0) is stored
// noiselessly so it is the ground truth; smaller ratios carry log-noise.
inline SyntheticTrace generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  const std::size_t n_ve = spec.ve_groups.size();
  const std::size_t n_llm = spec.llm_groups.size();
  const std::size_t n_ve_groups = *std::max_element(spec.ve_groups.begin(), spec.ve_groups.end()) + 1;
  std::size_t n_llm_groups = *std::max_element(spec.llm_groups.begin(), spec.llm_groups.end()) + 1;
  for (const auto& row : spec.llm_groups_by_ve_group) {
    n_llm_groups = std::max(n_llm_groups, *std::max_element(row.begin(), row.end()) + 1);
  }

  SyntheticTrace out;
  auto& b = out.bundle;
  auto& m = b.manifest;
  for (std::size_t i = 0; i < n_ve; ++i) {
    m.ve_ids.push_back(spec.ve_ids.empty() ? "ve" + std::to_string(i) : spec.ve_ids[i]);
  }
  for (std::size_t i = 0; i < n_llm; ++i) {
    m.llm_ids.push_back(spec.llm_ids.empty() ? "llm" + std::to_string(i) : spec.llm_ids[i]);
  }
  m.ratio_grid = spec.ratio_grid.empty() ? default_ratio_grid() : spec.ratio_grid;
  std::sort(m.ratio_grid.begin(), m.ratio_grid.end());
  m.cost = spec.cost;

  // Activations: group basis + per-model noise.
  detail::PortableNormal act_rng(seed, 1);
  const double noise = spec.activation_noise;
  std::vector<Matrix> ve_basis, llm_basis;
  for (std::size_t g = 0; g < n_ve_groups; ++g) ve_basis.push_back(act_rng.normal_matrix(spec.n_samples, spec.n_features, 1.0));
  for (std::size_t g = 0; g < n_llm_groups; ++g) llm_basis.push_back(act_rng.normal_matrix(spec.n_samples, spec.n_features, 1.0));
  for (std::size_t i = 0; i < n_ve; ++i) {
    Matrix v = ve_basis[spec.ve_groups[i]] + act_rng.normal_matrix(spec.n_samples, spec.n_features, noise);
    b.ve_activations[m.ve_ids[i]] = {m.ve_ids[i], std::move(v)};
  }
  std::vector<Matrix> llm_own;
  for (std::size_t j = 0; j < n_llm; ++j) llm_own.push_back(act_rng.normal_matrix(spec.n_samples, spec.n_features, noise));
  for (std::size_t i = 0; i < n_ve; ++i) {
    const std::size_t g = spec.ve_groups[i];
    const auto& grouping = spec.llm_groups_by_ve_group.empty() ? spec.llm_groups : spec.llm_groups_by_ve_group[g];
    for (std::size_t j = 0; j < n_llm; ++j) {
      Matrix a = llm_basis[grouping[j]] + llm_own[j] +
                 act_rng.normal_matrix(spec.n_samples, spec.n_features, 0.5 * noise);
      b.llm_activations[{m.ve_ids[i], m.llm_ids[j]}] = {m.llm_ids[j], std::move(a)};
    }
  }

  // Curves.
  detail::PortableNormal curve_rng(seed, 2);
  std::vector<double> ve_effect(n_ve_groups), llm_effect(n_llm_groups);
  for (auto& e : ve_effect) e = curve_rng.uniform(0.0, spec.group_spread);
  for (auto& e : llm_effect) e = curve_rng.uniform(0.0, spec.group_spread);
  const std::size_t n_base_llm_groups = *std::max_element(spec.llm_groups.begin(), spec.llm_groups.end()) + 1;
  std::map<std::pair<std::size_t, std::size_t>, SyntheticCurveParams> group_params;
  for (std::size_t g = 0; g < n_ve_groups; ++g) {
    for (std::size_t h = 0; h < n_base_llm_groups; ++h) {
      const double beta = curve_rng.uniform(spec.beta_min, spec.beta_max);
      if (const auto it = spec.group_curves.find({g, h}); it != spec.group_curves.end()) {
        group_params[{g, h}] = it->second;
        continue;
      }
      const double err1 = spec.base_error + ve_effect[g] + llm_effect[h];
      SyntheticCurveParams p;
      p.family = spec.family;
      p.exponent_beta = beta;
      p.noise_sigma = spec.noise_sigma;
      if (spec.family == CurveFamily::kFlooredPowerLaw) {
        p.floor_e = spec.floor_fraction * err1;
        p.coeff_b = err1 - p.floor_e;
      } else {
        p.coeff_b = err1;
      }
      group_params[{g, h}] = p;
    }
  }

  // Best group pair (ties by index) hosts the planted best candidate.
  std::pair<std::size_t, std::size_t> best_pair{0, 0};
  double best_err = std::numeric_limits<double>::infinity();
  for (const auto& [key, p] : group_params) {
    if (detail::full_error(p) < best_err) {
      best_err = detail::full_error(p);
      best_pair = key;
    }
  }
  std::vector<Candidate> best_pair_members;
  for (std::size_t i = 0; i < n_ve; ++i)
    for (std::size_t j = 0; j < n_llm; ++j)
      if (spec.ve_groups[i] == best_pair.first && spec.llm_groups[j] == best_pair.second)
        best_pair_members.push_back({m.ve_ids[i], m.llm_ids[j]});
  out.planted_best = best_pair_members[curve_rng.index(best_pair_members.size())];

  for (std::size_t i = 0; i < n_ve; ++i) {
    for (std::size_t j = 0; j < n_llm; ++j) {
      const Candidate c{m.ve_ids[i], m.llm_ids[j]};
      SyntheticCurveParams p = group_params.at({spec.ve_groups[i], spec.llm_groups[j]});
      const double group_err = detail::full_error(p);
      const double perturb = curve_rng.uniform(0.0, spec.candidate_spread);
      const double jitter = curve_rng.uniform(-spec.beta_jitter, spec.beta_jitter);
      const double target = c == out.planted_best ? group_err - spec.planted_margin : group_err + perturb;
      if (!(target > kErrorFloor)) {
        throw Error(ErrorKind::kSpec, "planted margin pushes the best candidate's error below the floor");
      }
      const double scale = target / group_err;
      p.floor_e *= scale;
      p.coeff_b *= scale;
      p.exponent_beta = std::max(1e-6, p.exponent_beta + jitter);
      out.curves[c] = p;
    }
  }

  for (const auto& [c, p] : out.curves) {
    if (c != out.planted_best && !(detail::full_error(p) > detail::full_error(out.curves.at(out.planted_best)))) {
      throw Error(ErrorKind::kSpec, "planted best " + out.planted_best.id() +
                                        " is not the unique minimum full-data error (tie with " + c.id() + ")");
    }
    for (double r : m.ratio_grid) {
      const double error = r == 1.0 ? noiseless_error(p, r) : synthetic_error(p, c, r, seed);
      b.curves.push_back({c.ve, c.llm, r, error});
    }
  }

  Json gen;
  gen["seed"] = seed;
  gen["planted_best"] = {{"ve", out.planted_best.ve}, {"llm", out.planted_best.llm}};
  gen["ve_groups"] = spec.ve_groups;
  gen["llm_groups"] = spec.llm_groups;
  if (!spec.llm_groups_by_ve_group.empty()) gen["llm_groups_by_ve_group"] = spec.llm_groups_by_ve_group;
  gen["family"] = std::string(to_string(spec.family));
  m.generator = std::move(gen);
  return out;
}

// Spec file (JSON) for gen-trace. Group layout is given either explicitly
// ("groups") or by sizes ("group_sizes").
inline SyntheticSpec synthetic_spec_from_json(const Json& j) {
  SyntheticSpec s;
  try {
    auto groups = [](const Json& side) {
      std::vector<std::size_t> out;
      if (side.contains("groups")) return side.at("groups").get<std::vector<std::size_t>>();
      const auto sizes = side.at("group_sizes").get<std::vector<std::size_t>>();
      for (std::size_t g = 0; g < sizes.size(); ++g) out.insert(out.end(), sizes[g], g);
      return out;
    };
    s.ve_groups = groups(j.at("ve"));
    s.llm_groups = groups(j.at("llm"));
    if (j.at("ve").contains("ids")) s.ve_ids = j["ve"]["ids"].get<std::vector<std::string>>();
    if (j.at("llm").contains("ids")) s.llm_ids = j["llm"]["ids"].get<std::vector<std::string>>();
    if (j.at("llm").contains("groups_by_ve_group")) {
      s.llm_groups_by_ve_group = j["llm"]["groups_by_ve_group"].get<std::vector<std::vector<std::size_t>>>();
    }
    if (j.contains("activations")) {
      const auto& a = j["activations"];
      s.n_samples = a.value("n_samples", s.n_samples);
      s.n_features = a.value("n_features", s.n_features);
      s.activation_noise = a.value("noise", s.activation_noise);
    }
    if (j.contains("curves")) {
      const auto& c = j["curves"];
      if (c.contains("family")) s.family = parse_curve_family(c["family"].get<std::string>());
      s.base_error = c.value("base_error", s.base_error);
      s.group_spread = c.value("group_spread", s.group_spread);
      s.candidate_spread = c.value("candidate_spread", s.candidate_spread);
      s.planted_margin = c.value("planted_margin", s.planted_margin);
      s.floor_fraction = c.value("floor_fraction", s.floor_fraction);
      s.beta_min = c.value("beta_min", s.beta_min);
      s.beta_max = c.value("beta_max", s.beta_max);
      s.beta_jitter = c.value("beta_jitter", s.beta_jitter);
      s.noise_sigma = c.value("noise_sigma", s.noise_sigma);
      if (c.contains("group_curves")) {
        for (const auto& g : c["group_curves"]) {
          SyntheticCurveParams p;
          p.family = parse_curve_family(g.value("family", std::string(to_string(s.family))));
          p.floor_e = g.value("floor_e", 0.0);
          p.coeff_b = g.at("coeff_b").get<double>();
          p.exponent_beta = g.at("exponent_beta").get<double>();
          p.noise_sigma = g.value("noise_sigma", 0.0);
          s.group_curves[{g.at("ve_group").get<std::size_t>(), g.at("llm_group").get<std::size_t>()}] = p;
        }
      }
    }
    if (j.contains("ratio_grid")) s.ratio_grid = j["ratio_grid"].get<std::vector<double>>();
    if (j.contains("cost_model")) {
      s.cost.full_train_cost = j["cost_model"].value("full_train_cost", s.cost.full_train_cost);
      s.cost.eval_cost = j["cost_model"].value("eval_cost", s.cost.eval_cost);
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kSpec, std::string("synthetic spec: ") + e.what());
  }
  validate(s);
  return s;
}

}  // namespace mordal
