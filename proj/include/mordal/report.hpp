#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "mordal/job.hpp"
#include "mordal/search.hpp"
#include "mordal/trace.hpp"

namespace mordal {

inline constexpr int kReportFormatVersion = 1;

inline Json candidate_json(const Candidate& c) { return {{"id", c.id()}, {"ve", c.ve}, {"llm", c.llm}}; }

// Report layout is published as docs/report.schema.json.
inline Json report_to_json(const SearchReport& r, const Json& config_echo) {
  Json j;
  j["format_version"] = kReportFormatVersion;
  j["incomplete"] = r.incomplete;
  j["failure"] = r.incomplete ? Json(r.failure) : Json(nullptr);
  j["seed"] = r.config.seed;
  j["config"] = config_echo;

  if (r.top1) {
    Json t = candidate_json(*r.top1);
    t["predicted_error"] = r.top1_predicted_error;
    t["true_error"] = r.top1_true_error ? Json(*r.top1_true_error) : Json(nullptr);
    j["top1"] = t;
  } else {
    j["top1"] = nullptr;
  }

  std::map<Candidate, const ScalingFit*> fit_of;
  for (const auto& f : r.fits) fit_of[f.candidate] = &f;
  Json ranking = Json::array();
  for (std::size_t i = 0; i < r.ranking.size(); ++i) {
    const auto& c = r.ranking[i];
    Json e = candidate_json(c);
    e["rank"] = i + 1;
    const auto f = fit_of.find(c);
    e["status"] = f != fit_of.end() ? "shortlisted" : "eliminated";
    e["predicted_error"] =
        f != fit_of.end() && !f->second->failure ? Json(f->second->predicted_full_error) : Json(nullptr);
    const auto le = r.last_error.find(c);
    e["last_error"] = le != r.last_error.end() ? Json(le->second) : Json(nullptr);
    ranking.push_back(e);
  }
  j["ranking"] = ranking;

  Json cost;
  Json queries;
  for (auto p : kPhases) {
    cost[std::string(to_string(p))] = r.phase_costs[static_cast<std::size_t>(p)];
    queries[std::string(to_string(p))] = r.phase_queries[static_cast<std::size_t>(p)];
  }
  cost["total"] = r.total_cost;
  j["cost"] = cost;
  j["queries"] = queries;

  Json clusters = Json::array();
  for (const auto& cc : r.clustering.clusters) {
    Json members = Json::array();
    for (const auto& m : cc.members) members.push_back(m.id());
    clusters.push_back({{"representative", cc.representative.id()}, {"members", members}});
  }
  j["clusters"] = clusters;
  j["similarity_evaluations"] = r.clustering.similarity_evaluations;

  Json rungs = Json::array();
  for (const auto& g : r.rungs) {
    rungs.push_back({{"phase", to_string(g.phase)},
                     {"rung", g.rung},
                     {"budget", g.budget},
                     {"live", g.live},
                     {"kept", g.kept}});
  }
  j["rungs"] = rungs;

  Json log = Json::array();
  for (const auto& e : r.elimination_log) {
    log.push_back({{"candidate", e.candidate.id()},
                   {"phase", to_string(e.phase)},
                   {"rung", e.rung},
                   {"budget", e.budget},
                   {"error", e.error},
                   {"with_cluster", e.with_cluster}});
  }
  j["elimination_log"] = log;

  Json fits = Json::array();
  for (const auto& f : r.fits) {
    Json points = Json::array();
    for (const auto& p : f.points) points.push_back({p.log_ratio, p.log_error});
    Json x = {{"candidate", f.candidate.id()}};
    if (f.failure) {
      x["failure"] = *f.failure;
    } else {
      x["failure"] = nullptr;
      x["slope"] = f.slope;
      x["intercept"] = f.intercept;
      x["fit_mse"] = f.fit_mse;
      x["fitted_points"] = f.fitted_points;
      x["predicted_error"] = f.predicted_full_error;
      x["converged"] = f.converged;
    }
    x["points"] = points;
    fits.push_back(x);
  }
  j["fits"] = fits;

  if (r.comparison) {
    const auto& m = *r.comparison;
    j["metrics"] = {{"grid_cost", m.grid_cost},
                    {"speedup", m.speedup},
                    {"tau", m.tau},
                    {"tau_w", m.tau_w},
                    {"top_k", m.top_k},
                    {"top_k_tau_w", m.topk_tau_w},
                    {"grid_top1", m.grid_top1.id()},
                    {"top1_match", m.top1_match}};
  } else {
    j["metrics"] = nullptr;
  }
  return j;
}

inline std::string dump_report(const Json& j) { return j.dump(2) + "\n"; }

// Structural check of the fields the renderers read.
inline void validate_report_json(const Json& j) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kSchema, "report: " + what); };
  if (!j.is_object()) fail("top level must be an object");
  if (!j.contains("format_version") || j["format_version"] != kReportFormatVersion) fail("unsupported format_version");
  if (!j.contains("incomplete") || !j["incomplete"].is_boolean()) fail("'incomplete' must be a boolean");
  if (!j.contains("ranking") || !j["ranking"].is_array()) fail("'ranking' must be an array");
  for (const auto& e : j["ranking"]) {
    if (!e.is_object() || !e.contains("id") || !e["id"].is_string() || !e.contains("status")) {
      fail("ranking entries need 'id' and 'status'");
    }
  }
  if (!j.contains("cost") || !j["cost"].is_object()) fail("'cost' must be an object");
  for (auto p : kPhases) {
    const std::string key(to_string(p));
    if (!j["cost"].contains(key) || !j["cost"][key].is_number()) fail("cost." + key + " must be a number");
  }
  if (!j["cost"].contains("total") || !j["cost"]["total"].is_number()) fail("cost.total must be a number");
  if (!j.contains("top1") || !(j["top1"].is_null() || j["top1"].is_object())) fail("'top1' must be null or an object");
  if (!j.contains("metrics") || !(j["metrics"].is_null() || j["metrics"].is_object())) {
    fail("'metrics' must be null or an object");
  }
}

namespace detail {

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string optional_number(const Json& v, int digits = 4) {
  return v.is_number() ? fixed(v.get<double>(), digits) : "-";
}

}  // namespace detail

inline std::string render_text(const Json& j, std::size_t rows = 5) {
  validate_report_json(j);
  std::ostringstream os;
  if (j["incomplete"].get<bool>()) {
    os << "!!! INCOMPLETE REPORT: " << j.value("failure", std::string("unknown failure")) << " !!!\n\n";
  }
  if (j["top1"].is_object()) {
    const auto& t = j["top1"];
    os << "top-1: " << t["id"].get<std::string>() << "  predicted " << detail::optional_number(t["predicted_error"])
       << "  true " << detail::optional_number(t["true_error"]) << "\n\n";
  }
  const auto& ranking = j["ranking"];
  char line[256];
  std::snprintf(line, sizeof(line), "%-5s %-32s %-12s %10s %10s\n", "rank", "candidate", "status", "predicted",
                "last");
  os << line;
  for (std::size_t i = 0; i < ranking.size() && i < rows; ++i) {
    const auto& e = ranking[i];
    std::snprintf(line, sizeof(line), "%-5zu %-32s %-12s %10s %10s\n", i + 1, e["id"].get<std::string>().c_str(),
                  e["status"].get<std::string>().c_str(),
                  detail::optional_number(e.value("predicted_error", Json())).c_str(),
                  detail::optional_number(e.value("last_error", Json())).c_str());
    os << line;
  }
  if (ranking.size() > rows) os << "... " << ranking.size() - rows << " more\n";

  const double total = j["cost"]["total"].get<double>();
  os << "\ncost breakdown (units)\n";
  for (auto p : kPhases) {
    const std::string key(to_string(p));
    const double c = j["cost"][key].get<double>();
    std::snprintf(line, sizeof(line), "  %-12s %10s %6.1f%%\n", key.c_str(), detail::fixed(c).c_str(),
                  total > 0.0 ? 100.0 * c / total : 0.0);
    os << line;
  }
  std::snprintf(line, sizeof(line), "  %-12s %10s\n", "total", detail::fixed(total).c_str());
  os << line;

  if (j["metrics"].is_object()) {
    const auto& m = j["metrics"];
    os << "\nvs grid search\n";
    os << "  grid cost    " << detail::optional_number(m.value("grid_cost", Json())) << "\n";
    os << "  speedup      " << detail::optional_number(m.value("speedup", Json()), 2) << "x\n";
    os << "  tau          " << detail::optional_number(m.value("tau", Json())) << "\n";
    os << "  tau_w        " << detail::optional_number(m.value("tau_w", Json())) << "\n";
    os << "  top-" << m.value("top_k", 0) << " tau_w " << detail::optional_number(m.value("top_k_tau_w", Json()))
       << "\n";
    os << "  grid top-1   " << m.value("grid_top1", std::string("-"))
       << (m.value("top1_match", false) ? " (match)" : " (differs)") << "\n";
  }
  return os.str();
}

inline std::string render_csv(const Json& j) {
  validate_report_json(j);
  std::string out = "phase,cost\n";
  for (auto p : kPhases) {
    const std::string key(to_string(p));
    out += key + "," + format_double(j["cost"][key].get<double>()) + "\n";
  }
  return out;
}

}  // namespace mordal
