#pragma once

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mordal/candidate.hpp"
#include "mordal/clustering.hpp"
#include "mordal/error.hpp"
#include "mordal/oracle.hpp"
#include "mordal/similarity.hpp"

namespace mordal {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Trace bundle layout on disk:
//   manifest.json                      zoo ids, ratio grid, cost model, generator info
//   activations/<ve_id>.csv            VE activations on the task samples
//   llm_activations/<ve>__<llm>.csv    LLM last hidden states conditioned on <ve>
//   distances/ve.json                  optional precomputed VE distances
//   distances/llm__<ve>.json           optional precomputed LLM distances given <ve>
//   curves.jsonl                       {"ve","llm","ratio","error"} per line
struct TraceManifest {
  std::vector<std::string> ve_ids;
  std::vector<std::string> llm_ids;
  std::vector<double> ratio_grid;
  CostModel cost;
  // Carried through for provenance; the projector is not trained here.
  int projector_warmup_rounds = 10;
  Json generator;  // null unless the bundle came from generate_synthetic
};

struct CurvePoint {
  std::string ve;
  std::string llm;
  double ratio = 0.0;
  double error = 0.0;
};

struct TraceBundle {
  TraceManifest manifest;
  std::map<std::string, ActivationMatrix> ve_activations;
  std::map<std::pair<std::string, std::string>, ActivationMatrix> llm_activations;
  std::map<std::string, DistanceMatrix> distances;  // "ve" or "llm__<ve_id>"
  std::vector<CurvePoint> curves;

  std::vector<Candidate> candidates() const {
    std::vector<Candidate> out;
    for (const auto& ve : manifest.ve_ids)
      for (const auto& llm : manifest.llm_ids) out.push_back({ve, llm});
    return out;
  }
};

inline constexpr double kRatioMatchTolerance = 1e-9;

inline bool same_ratio(double a, double b) {
  return std::abs(a - b) <= kRatioMatchTolerance * std::max(std::abs(a), std::abs(b));
}

// ---------------------------------------------------------------------------
// Number formatting. Shortest round-trip representation, so written traces
// reload bit-exactly.

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Activation CSV: first row "model_id,n_samples,n_features", then one sample
// per row with n_features comma-separated values.

inline ActivationMatrix parse_activation_csv(std::string_view text, const std::string& source) {
  auto fail = [&](std::size_t line, const std::string& what) -> Error {
    return Error(ErrorKind::kInput, source + ":" + std::to_string(line) + ": " + what);
  };
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw fail(1, "empty file");

  const auto header = detail::split_commas(lines[0]);
  std::size_t n_samples = 0, n_features = 0;
  if (header.size() != 3 || detail::trim(header[0]).empty() ||
      !detail::parse_number(header[1], n_samples) || !detail::parse_number(header[2], n_features)) {
    throw fail(1, "expected header 'model_id,n_samples,n_features'");
  }
  if (n_samples < 2 || n_features < 1) throw fail(1, "need n_samples >= 2 and n_features >= 1");
  if (lines.size() - 1 != n_samples) {
    throw fail(lines.size(), "expected " + std::to_string(n_samples) + " sample rows, found " +
                                 std::to_string(lines.size() - 1));
  }
  ActivationMatrix out;
  out.model_id = std::string(detail::trim(header[0]));
  out.values.resize(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(n_features));
  for (std::size_t r = 0; r < n_samples; ++r) {
    const auto cells = detail::split_commas(lines[r + 1]);
    if (cells.size() != n_features) {
      throw fail(r + 2, "expected " + std::to_string(n_features) + " values, found " +
                            std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < n_features; ++c) {
      double v = 0.0;
      if (!detail::parse_number(cells[c], v) || !std::isfinite(v)) {
        throw fail(r + 2, "bad value in column " + std::to_string(c + 1));
      }
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return out;
}

inline ActivationMatrix read_activation_csv(const fs::path& path) {
  return parse_activation_csv(detail::read_file(path), path.string());
}

inline std::string format_activation_csv(const ActivationMatrix& a) {
  std::string out = a.model_id + "," + std::to_string(a.n_samples()) + "," +
                    std::to_string(a.n_features()) + "\n";
  for (Eigen::Index r = 0; r < a.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.values.cols(); ++c) {
      if (c) out += ',';
      out += format_double(a.values(r, c));
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distance matrix JSON: {"ids": [...], "values": [row-major]}.

inline Json distance_matrix_to_json(const DistanceMatrix& d) {
  Json j;
  j["ids"] = d.ids;
  Json values = Json::array();
  for (Eigen::Index r = 0; r < d.values.rows(); ++r)
    for (Eigen::Index c = 0; c < d.values.cols(); ++c) values.push_back(d.values(r, c));
  j["values"] = std::move(values);
  return j;
}

inline DistanceMatrix distance_matrix_from_json(const Json& j, const std::string& source) {
  try {
    DistanceMatrix d;
    d.ids = j.at("ids").get<std::vector<std::string>>();
    const auto flat = j.at("values").get<std::vector<double>>();
    const auto n = d.ids.size();
    if (flat.size() != n * n) {
      throw Error(ErrorKind::kInput, "values has " + std::to_string(flat.size()) +
                                         " entries, expected " + std::to_string(n * n));
    }
    d.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c)
        d.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = flat[r * n + c];
    validate(d);
    return d;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kInput, source + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), source + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

inline Json manifest_to_json(const TraceManifest& m) {
  Json j;
  j["format_version"] = 1;
  j["ve_ids"] = m.ve_ids;
  j["llm_ids"] = m.llm_ids;
  j["ratio_grid"] = m.ratio_grid;
  j["cost_model"] = {{"full_train_cost", m.cost.full_train_cost}, {"eval_cost", m.cost.eval_cost}};
  j["projector_warmup_rounds"] = m.projector_warmup_rounds;
  if (!m.generator.is_null()) j["generator"] = m.generator;
  return j;
}

inline TraceManifest manifest_from_json(const Json& j) {
  TraceManifest m;
  try {
    if (j.value("format_version", 0) != 1) {
      throw Error(ErrorKind::kTrace, "manifest.json: unsupported format_version");
    }
    m.ve_ids = j.at("ve_ids").get<std::vector<std::string>>();
    m.llm_ids = j.at("llm_ids").get<std::vector<std::string>>();
    m.ratio_grid = j.at("ratio_grid").get<std::vector<double>>();
    if (j.contains("cost_model")) {
      m.cost.full_train_cost = j["cost_model"].value("full_train_cost", 1.0);
      m.cost.eval_cost = j["cost_model"].value("eval_cost", 0.01);
    }
    m.projector_warmup_rounds = j.value("projector_warmup_rounds", 10);
    if (j.contains("generator")) m.generator = j["generator"];
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kTrace, std::string("manifest.json: ") + e.what());
  }
  auto unique_nonempty = [](const std::vector<std::string>& ids, const char* what) {
    if (ids.empty()) throw Error(ErrorKind::kTrace, std::string("manifest.json: empty ") + what);
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
      throw Error(ErrorKind::kTrace, std::string("manifest.json: duplicate ids in ") + what);
    }
    for (const auto& id : ids) {
      if (id.empty() || id.find("__") != std::string::npos || id.find('/') != std::string::npos) {
        throw Error(ErrorKind::kTrace, "manifest.json: invalid model id '" + id + "'");
      }
    }
  };
  unique_nonempty(m.ve_ids, "ve_ids");
  unique_nonempty(m.llm_ids, "llm_ids");
  if (m.ratio_grid.empty()) throw Error(ErrorKind::kTrace, "manifest.json: empty ratio_grid");
  for (double r : m.ratio_grid) {
    if (!(r > 0.0 && r <= 1.0)) throw Error(ErrorKind::kTrace, "manifest.json: ratio outside (0, 1]");
  }
  try {
    validate(m.cost);
  } catch (const Error& e) {
    throw Error(ErrorKind::kTrace, std::string("manifest.json: ") + e.what());
  }
  return m;
}

inline std::string format_curves_jsonl(std::vector<CurvePoint> curves) {
  std::sort(curves.begin(), curves.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return std::tie(a.ve, a.llm, a.ratio) < std::tie(b.ve, b.llm, b.ratio);
  });
  std::string out;
  for (const auto& p : curves) {
    Json j;
    j["ve"] = p.ve;
    j["llm"] = p.llm;
    j["ratio"] = p.ratio;
    j["error"] = p.error;
    out += j.dump();
    out += '\n';
  }
  return out;
}

// Ratios in grid that the curves do not cover, as "ve/llm@ratio" strings.
inline std::vector<std::string> coverage_gaps(const TraceBundle& b, std::span<const double> required) {
  std::vector<std::string> gaps;
  std::set<std::tuple<std::string, std::string, double>> have;
  for (const auto& p : b.curves) have.insert({p.ve, p.llm, p.ratio});
  for (double r : required) {
    const auto grid_it = std::find_if(b.manifest.ratio_grid.begin(), b.manifest.ratio_grid.end(),
                                      [&](double g) { return same_ratio(g, r); });
    for (const auto& c : b.candidates()) {
      const bool present =
          grid_it != b.manifest.ratio_grid.end() && have.count({c.ve, c.llm, *grid_it}) > 0;
      if (!present) gaps.push_back(c.ve + "/" + c.llm + "@" + format_double(r));
    }
  }
  return gaps;
}

inline void save_trace(const TraceBundle& b, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "activations", ec);
  fs::create_directories(dir / "llm_activations", ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  detail::write_file(dir / "manifest.json", manifest_to_json(b.manifest).dump(2) + "\n");
  for (const auto& [id, a] : b.ve_activations) {
    detail::write_file(dir / "activations" / (id + ".csv"), format_activation_csv(a));
  }
  for (const auto& [key, a] : b.llm_activations) {
    detail::write_file(dir / "llm_activations" / (key.first + "__" + key.second + ".csv"),
                       format_activation_csv(a));
  }
  if (!b.distances.empty()) {
    fs::create_directories(dir / "distances", ec);
    for (const auto& [name, d] : b.distances) {
      detail::write_file(dir / "distances" / (name + ".json"), distance_matrix_to_json(d).dump() + "\n");
    }
  }
  detail::write_file(dir / "curves.jsonl", format_curves_jsonl(b.curves));
}

// Loads and validates a bundle. When required is non-empty, every candidate
// must have a curve point at each required ratio; otherwise the load fails
// listing the missing points.
inline TraceBundle load_trace(const fs::path& dir, std::span<const double> required = {}) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kTrace, "trace bundle not found: " + dir.string());
  TraceBundle b;
  try {
    b.manifest = manifest_from_json(Json::parse(detail::read_file(dir / "manifest.json")));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kTrace, std::string("manifest.json: ") + e.what());
  }
  const auto& m = b.manifest;
  const std::set<std::string> ves(m.ve_ids.begin(), m.ve_ids.end());
  const std::set<std::string> llms(m.llm_ids.begin(), m.llm_ids.end());

  auto wrap = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw Error(ErrorKind::kTrace, e.what());
    }
  };

  if (fs::is_directory(dir / "distances")) {
    for (const auto& entry : fs::directory_iterator(dir / "distances")) {
      if (entry.path().extension() != ".json") continue;
      wrap([&] {
        const auto name = entry.path().stem().string();
        Json j;
        try {
          j = Json::parse(detail::read_file(entry.path()));
        } catch (const Json::exception& e) {
          throw Error(ErrorKind::kTrace, entry.path().string() + ": " + e.what());
        }
        b.distances[name] = distance_matrix_from_json(j, entry.path().string());
      });
    }
  }

  auto load_csv = [&](const fs::path& path, const std::string& expected_id) {
    ActivationMatrix a;
    wrap([&] { a = read_activation_csv(path); });
    if (a.model_id != expected_id) {
      throw Error(ErrorKind::kTrace, path.string() + ": model_id '" + a.model_id +
                                         "' does not match file name");
    }
    return a;
  };

  if (!b.distances.count("ve")) {
    for (const auto& ve : m.ve_ids) {
      const auto path = dir / "activations" / (ve + ".csv");
      if (!fs::exists(path)) throw Error(ErrorKind::kTrace, "missing " + path.string());
      b.ve_activations[ve] = load_csv(path, ve);
    }
  }
  for (const auto& ve : m.ve_ids) {
    if (b.distances.count("llm__" + ve)) continue;
    for (const auto& llm : m.llm_ids) {
      const auto path = dir / "llm_activations" / (ve + "__" + llm + ".csv");
      if (!fs::exists(path)) throw Error(ErrorKind::kTrace, "missing " + path.string());
      b.llm_activations[{ve, llm}] = load_csv(path, llm);
    }
  }

  // A bundle without curves can still drive clustering for an external oracle.
  const auto curves_path = dir / "curves.jsonl";
  std::istringstream curves(fs::exists(curves_path) ? detail::read_file(curves_path) : std::string());
  std::string line;
  std::size_t line_no = 0;
  std::set<std::tuple<std::string, std::string, double>> seen;
  while (std::getline(curves, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::string where = curves_path.string() + ":" + std::to_string(line_no) + ": ";
    CurvePoint p;
    try {
      const auto j = Json::parse(line);
      p.ve = j.at("ve").get<std::string>();
      p.llm = j.at("llm").get<std::string>();
      p.ratio = j.at("ratio").get<double>();
      p.error = j.at("error").get<double>();
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::kTrace, where + e.what());
    }
    if (!ves.count(p.ve) || !llms.count(p.llm)) {
      throw Error(ErrorKind::kTrace, where + "candidate " + p.ve + "/" + p.llm + " not in zoo");
    }
    const auto g = std::find_if(m.ratio_grid.begin(), m.ratio_grid.end(),
                                [&](double r) { return same_ratio(r, p.ratio); });
    if (g == m.ratio_grid.end()) throw Error(ErrorKind::kTrace, where + "ratio not on the grid");
    p.ratio = *g;
    if (!(p.error >= kErrorFloor && p.error <= 1.0)) {
      throw Error(ErrorKind::kTrace, where + "error outside [1e-6, 1]");
    }
    if (!seen.insert({p.ve, p.llm, p.ratio}).second) {
      throw Error(ErrorKind::kTrace, where + "duplicate curve point");
    }
    b.curves.push_back(std::move(p));
  }

  const auto gaps = coverage_gaps(b, required);
  if (!gaps.empty()) {
    std::string msg = "trace misses " + std::to_string(gaps.size()) + " required curve point(s):";
    for (std::size_t i = 0; i < gaps.size() && i < 20; ++i) msg += " " + gaps[i];
    if (gaps.size() > 20) msg += " ...";
    throw Error(ErrorKind::kTrace, msg);
  }
  return b;
}

// ---------------------------------------------------------------------------

// Distances for clustering: precomputed matrices when the bundle carries them,
// otherwise computed from activations. evaluations counts similarity calls.
inline DistanceMatrix trace_ve_distances(const TraceBundle& b, const SimilarityOptions& opts,
                                         std::size_t* evaluations = nullptr,
                                         std::size_t parallelism = default_parallelism()) {
  if (const auto it = b.distances.find("ve"); it != b.distances.end()) return it->second;
  std::vector<ActivationMatrix> acts;
  for (const auto& ve : b.manifest.ve_ids) acts.push_back(b.ve_activations.at(ve));
  if (acts.size() == 1) {
    return {{acts[0].model_id}, Matrix::Zero(1, 1)};
  }
  if (evaluations) *evaluations += acts.size() * (acts.size() - 1) / 2;
  return pairwise_distance_matrix(acts, opts, parallelism);
}

inline DistanceMatrix trace_llm_distances(const TraceBundle& b, const std::string& ve_medoid,
                                          const SimilarityOptions& opts,
                                          std::size_t* evaluations = nullptr,
                                          std::size_t parallelism = default_parallelism()) {
  if (const auto it = b.distances.find("llm__" + ve_medoid); it != b.distances.end()) {
    return it->second;
  }
  std::vector<ActivationMatrix> acts;
  for (const auto& llm : b.manifest.llm_ids) {
    const auto it = b.llm_activations.find({ve_medoid, llm});
    if (it == b.llm_activations.end()) {
      throw Error(ErrorKind::kTrace, "no LLM activations for pair (" + ve_medoid + ", " + llm + ")");
    }
    acts.push_back(it->second);
  }
  if (acts.size() == 1) return {{acts[0].model_id}, Matrix::Zero(1, 1)};
  if (evaluations) *evaluations += acts.size() * (acts.size() - 1) / 2;
  return pairwise_distance_matrix(acts, opts, parallelism);
}

// Replays recorded curve points. Off-grid ratios are refused rather than
// interpolated.
class TraceOracle : public Oracle {
 public:
  explicit TraceOracle(std::shared_ptr<const TraceBundle> bundle)
      : bundle_(std::move(bundle)), ledger_(bundle_->manifest.cost) {
    for (const auto& p : bundle_->curves) points_[{{p.ve, p.llm}, p.ratio}] = p.error;
  }

  EvalRecord query(const Candidate& candidate, double ratio) override {
    const auto& grid = bundle_->manifest.ratio_grid;
    const auto g = std::find_if(grid.begin(), grid.end(), [&](double r) { return same_ratio(r, ratio); });
    if (g == grid.end()) {
      throw Error(ErrorKind::kUnsupportedRatio, "ratio " + format_double(ratio) + " is not on the trace grid");
    }
    const auto it = points_.find({candidate, *g});
    if (it == points_.end()) {
      throw Error(ErrorKind::kUnsupportedRatio,
                  "trace has no point for " + candidate.id() + " at ratio " + format_double(*g));
    }
    return {candidate, ratio, it->second, ledger_.charge(candidate, ratio)};
  }

  std::unique_ptr<Oracle> fresh() const override { return std::make_unique<TraceOracle>(bundle_); }

  const TraceBundle& bundle() const { return *bundle_; }
  const CheckpointLedger& ledger() const { return ledger_; }

 private:
  std::shared_ptr<const TraceBundle> bundle_;
  std::map<std::pair<Candidate, double>, double> points_;
  CheckpointLedger ledger_;
};

}  // namespace mordal
