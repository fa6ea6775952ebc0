#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mordal/config.hpp"
#include "mordal/error.hpp"
#include "mordal/external_oracle.hpp"
#include "mordal/search.hpp"
#include "mordal/synthetic.hpp"
#include "mordal/trace.hpp"

namespace mordal {

// Search job file. Key layout:
//   {
//     "trace": "<dir>"  |  "synthetic": {"spec": "<path>" | {...inline spec}},
//     "output": "<path>",            optional; stdout when absent
//     "seed": 0,
//     "oracle": {"type": "trace"} | {"type": "external", "command": [...], "timeout_ms": 60000},
//     "vlm_kwargs": {...},           echoed, not interpreted
//     "mordal_kwargs": {
//       "clustering": {"t_ve", "t_llm", "cka_batch_size", "cka_eval_cost"},
//       "exploration": {"top_k_inter", "top_k_intra"},
//       "early_stopping": {"R", "b", "eta"},
//       "scaling_prediction": {"R", "u", "delta", "p", "min_ratio", "window", "strict_literal"}
//     }
//   }
// Relative paths resolve against base_dir (the config file's directory).
struct OracleSpec {
  enum class Type { kTrace, kExternal };
  Type type = Type::kTrace;
  std::vector<std::string> command;
  std::int64_t timeout_ms = 60000;
};

struct JobConfig {
  std::optional<std::string> trace;
  std::optional<Json> synthetic_spec;          // inline spec object
  std::optional<std::string> synthetic_spec_path;
  std::optional<std::string> output;
  OracleSpec oracle;
  Json vlm_kwargs;  // null when absent
  SearchConfig search;
  fs::path base_dir;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }
};

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw Error(ErrorKind::kConfig, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorKind::kConfig, where + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline JobConfig job_config_from_json(const Json& j, const fs::path& base_dir = {}) {
  JobConfig c;
  c.base_dir = base_dir;
  detail::reject_unknown(j, {"trace", "synthetic", "output", "seed", "oracle", "vlm_kwargs", "mordal_kwargs"},
                         "job config");
  if (j.contains("trace")) c.trace = j["trace"].is_string() ? j["trace"].get<std::string>() : "";
  if (j.contains("synthetic")) {
    const auto& s = j["synthetic"];
    detail::reject_unknown(s, {"spec"}, "synthetic");
    if (!s.contains("spec")) throw Error(ErrorKind::kConfig, "synthetic.spec is required");
    if (s["spec"].is_string()) {
      c.synthetic_spec_path = s["spec"].get<std::string>();
    } else if (s["spec"].is_object()) {
      c.synthetic_spec = s["spec"];
    } else {
      throw Error(ErrorKind::kConfig, "synthetic.spec must be a path or an object");
    }
  }
  if (c.trace.has_value() == j.contains("synthetic")) {
    throw Error(ErrorKind::kConfig, "exactly one of 'trace' and 'synthetic' is required");
  }
  if (c.trace && c.trace->empty()) throw Error(ErrorKind::kConfig, "trace must be a non-empty path");
  if (j.contains("output")) {
    std::string out;
    detail::read_key(j, "output", out, "job config");
    c.output = out;
  }
  detail::read_key(j, "seed", c.search.seed, "job config");
  if (j.contains("oracle")) {
    const auto& o = j["oracle"];
    detail::reject_unknown(o, {"type", "command", "timeout_ms"}, "oracle");
    std::string type = "trace";
    detail::read_key(o, "type", type, "oracle");
    if (type == "trace") {
      c.oracle.type = OracleSpec::Type::kTrace;
    } else if (type == "external") {
      c.oracle.type = OracleSpec::Type::kExternal;
      detail::read_key(o, "command", c.oracle.command, "oracle");
      if (c.oracle.command.empty()) throw Error(ErrorKind::kConfig, "oracle.command must be a non-empty list");
    } else {
      throw Error(ErrorKind::kConfig, "oracle.type must be 'trace' or 'external'");
    }
    detail::read_key(o, "timeout_ms", c.oracle.timeout_ms, "oracle");
    if (c.oracle.timeout_ms <= 0) throw Error(ErrorKind::kConfig, "oracle.timeout_ms must be > 0");
  }
  if (c.oracle.type == OracleSpec::Type::kExternal && !c.trace) {
    throw Error(ErrorKind::kConfig, "an external oracle needs a trace bundle for activations");
  }
  if (j.contains("vlm_kwargs")) c.vlm_kwargs = j["vlm_kwargs"];

  auto& s = c.search;
  if (j.contains("mordal_kwargs")) {
    const auto& m = j["mordal_kwargs"];
    detail::reject_unknown(m, {"clustering", "exploration", "early_stopping", "scaling_prediction"},
                           "mordal_kwargs");
    if (m.contains("clustering")) {
      const auto& x = m["clustering"];
      detail::reject_unknown(x, {"t_ve", "t_llm", "cka_batch_size", "cka_eval_cost"}, "clustering");
      detail::read_key(x, "t_ve", s.t_ve, "clustering");
      detail::read_key(x, "t_llm", s.t_llm, "clustering");
      detail::read_key(x, "cka_batch_size", s.cka_batch_size, "clustering");
      detail::read_key(x, "cka_eval_cost", s.cka_eval_cost, "clustering");
    }
    if (m.contains("exploration")) {
      const auto& x = m["exploration"];
      detail::reject_unknown(x, {"top_k_inter", "top_k_intra"}, "exploration");
      detail::read_key(x, "top_k_inter", s.topk_inter, "exploration");
      detail::read_key(x, "top_k_intra", s.topk_intra, "exploration");
    }
    if (m.contains("early_stopping")) {
      const auto& x = m["early_stopping"];
      detail::reject_unknown(x, {"R", "b", "eta"}, "early_stopping");
      detail::read_key(x, "R", s.sha.max_ratio, "early_stopping");
      detail::read_key(x, "b", s.sha.initial_budget, "early_stopping");
      detail::read_key(x, "eta", s.sha.eta, "early_stopping");
    }
    if (m.contains("scaling_prediction")) {
      const auto& x = m["scaling_prediction"];
      detail::reject_unknown(x, {"R", "u", "delta", "p", "min_ratio", "window", "strict_literal"},
                             "scaling_prediction");
      detail::read_key(x, "R", s.scaling.max_ratio, "scaling_prediction");
      detail::read_key(x, "u", s.scaling.shrink, "scaling_prediction");
      detail::read_key(x, "delta", s.scaling.fit_tolerance, "scaling_prediction");
      detail::read_key(x, "p", s.scaling.min_points, "scaling_prediction");
      if (x.contains("min_ratio") && !x["min_ratio"].is_null()) {
        double r = 0.0;
        detail::read_key(x, "min_ratio", r, "scaling_prediction");
        s.scaling.min_ratio = r;
      }
      detail::read_key(x, "window", s.scaling.window, "scaling_prediction");
      detail::read_key(x, "strict_literal", s.scaling.strict_literal, "scaling_prediction");
    }
  }
  validate(s);
  return c;
}

inline Json search_config_to_json(const SearchConfig& s) {
  Json m;
  m["clustering"] = {{"t_ve", s.t_ve},
                     {"t_llm", s.t_llm},
                     {"cka_batch_size", s.cka_batch_size},
                     {"cka_eval_cost", s.cka_eval_cost}};
  m["exploration"] = {{"top_k_inter", s.topk_inter}, {"top_k_intra", s.topk_intra}};
  m["early_stopping"] = {{"R", s.sha.max_ratio}, {"b", s.sha.initial_budget}, {"eta", s.sha.eta}};
  Json sp = {{"R", s.scaling.max_ratio},
             {"u", s.scaling.shrink},
             {"delta", s.scaling.fit_tolerance},
             {"p", s.scaling.min_points}};
  sp["min_ratio"] = s.scaling.min_ratio ? Json(*s.scaling.min_ratio) : Json(nullptr);
  sp["window"] = s.scaling.window;
  sp["strict_literal"] = s.scaling.strict_literal;
  m["scaling_prediction"] = sp;
  return m;
}

inline Json job_config_to_json(const JobConfig& c) {
  Json j;
  if (c.trace) j["trace"] = *c.trace;
  if (c.synthetic_spec_path) j["synthetic"] = {{"spec", *c.synthetic_spec_path}};
  if (c.synthetic_spec) j["synthetic"] = {{"spec", *c.synthetic_spec}};
  if (c.output) j["output"] = *c.output;
  j["seed"] = c.search.seed;
  if (c.oracle.type == OracleSpec::Type::kExternal) {
    j["oracle"] = {{"type", "external"}, {"command", c.oracle.command}, {"timeout_ms", c.oracle.timeout_ms}};
  } else {
    j["oracle"] = {{"type", "trace"}, {"timeout_ms", c.oracle.timeout_ms}};
  }
  if (!c.vlm_kwargs.is_null()) j["vlm_kwargs"] = c.vlm_kwargs;
  j["mordal_kwargs"] = search_config_to_json(c.search);
  return j;
}

inline JobConfig load_job_config(const fs::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  return job_config_from_json(j, path.parent_path());
}

// Everything a search needs, materialized from a job config.
struct PreparedJob {
  std::shared_ptr<const TraceBundle> bundle;
  std::unique_ptr<Oracle> oracle;
  std::optional<Candidate> planted_best;
};

inline PreparedJob prepare_job(const JobConfig& c, std::size_t parallelism = default_parallelism()) {
  PreparedJob out;
  const bool external = c.oracle.type == OracleSpec::Type::kExternal;
  if (c.trace) {
    std::vector<double> required;
    if (!external) required = required_ratios(c.search);
    out.bundle = std::make_shared<const TraceBundle>(load_trace(c.resolve(*c.trace), required));
  } else {
    Json spec_json;
    if (c.synthetic_spec) {
      spec_json = *c.synthetic_spec;
    } else {
      const auto path = c.resolve(*c.synthetic_spec_path);
      try {
        spec_json = Json::parse(detail::read_file(path));
      } catch (const Json::exception& e) {
        throw Error(ErrorKind::kSpec, path.string() + ": " + e.what());
      }
    }
    auto spec = synthetic_spec_from_json(spec_json);
    if (spec.ratio_grid.empty()) {
      spec.ratio_grid = required_ratios(c.search);
      append_unique_ratio(spec.ratio_grid, 1.0);
    }
    auto trace = generate_synthetic(spec, c.search.seed);
    out.planted_best = trace.planted_best;
    out.bundle = std::make_shared<const TraceBundle>(std::move(trace.bundle));
  }
  if (external) {
    out.oracle = std::make_unique<ExternalOracle>(c.oracle.command, std::chrono::milliseconds(c.oracle.timeout_ms),
                                                  parallelism);
  } else {
    out.oracle = std::make_unique<TraceOracle>(out.bundle);
  }
  return out;
}

// Full-data (r = 1) errors recorded in the bundle, if every candidate has one.
inline std::map<Candidate, double> full_data_errors(const TraceBundle& b) {
  std::map<Candidate, double> out;
  for (const auto& p : b.curves)
    if (same_ratio(p.ratio, 1.0)) out[{p.ve, p.llm}] = p.error;
  if (out.size() != b.candidates().size()) out.clear();
  return out;
}

inline SearchJob make_search_job(const TraceBundle& bundle, Oracle& oracle, const SearchConfig& cfg,
                                 std::size_t parallelism = default_parallelism()) {
  SearchJob job;
  job.ve_ids = bundle.manifest.ve_ids;
  job.llm_ids = bundle.manifest.llm_ids;
  const SimilarityOptions opts{cfg.cka_batch_size};
  job.ve_distances = [&bundle, opts, parallelism](std::size_t* evals) {
    return trace_ve_distances(bundle, opts, evals, parallelism);
  };
  job.llm_distances = [&bundle, opts, parallelism](const std::string& ve, std::size_t* evals) {
    return trace_llm_distances(bundle, ve, opts, evals, parallelism);
  };
  job.oracle = &oracle;
  job.config = cfg;
  job.full_errors = full_data_errors(bundle);
  job.parallelism = parallelism;
  return job;
}

// Search plus, when the bundle records full-data errors, the grid baseline.
inline SearchReport run_job(const PreparedJob& prepared, const SearchConfig& cfg,
                            std::size_t parallelism = default_parallelism()) {
  const auto job = make_search_job(*prepared.bundle, *prepared.oracle, cfg, parallelism);
  auto report = run(job);
  if (!report.incomplete && !job.full_errors.empty()) {
    // Replays the recorded full-data points even when the search used an
    // external trainer.
    TraceOracle grid_oracle(prepared.bundle);
    const auto candidates = prepared.bundle->candidates();
    const auto grid = run_grid(candidates, grid_oracle, parallelism);
    report.comparison = compare_with_grid(report, grid);
  }
  return report;
}

}  // namespace mordal
