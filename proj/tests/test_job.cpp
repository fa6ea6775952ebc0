#include <gtest/gtest.h>

#include "mordal/job.hpp"
#include "mordal/report.hpp"

using mordal::ErrorKind;
using mordal::Json;

namespace {

Json base_config() {
  return Json::parse(R"({
    "trace": "trace",
    "seed": 3,
    "vlm_kwargs": {"lr": 0.001, "epochs": 1},
    "mordal_kwargs": {
      "clustering": {"t_ve": 0.6, "t_llm": 0.75},
      "exploration": {"top_k_inter": 2, "top_k_intra": 4},
      "early_stopping": {"R": 0.25, "b": 0.05, "eta": 3},
      "scaling_prediction": {"R": 0.25, "u": 2, "delta": 1e-4, "p": 3}
    }
  })");
}

ErrorKind kind_of(const Json& j) {
  try {
    mordal::job_config_from_json(j);
  } catch (const mordal::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "config accepted: " << j.dump();
  return ErrorKind::kIo;
}

mordal::SearchReport small_report(bool fail) {
  mordal::SyntheticSpec s;
  s.ve_groups = {0, 0, 1};
  s.llm_groups = {0, 1, 1};
  s.n_samples = 16;
  s.n_features = 4;
  auto t = mordal::generate_synthetic(s, 0);
  if (fail) {
    std::erase_if(t.bundle.curves, [](const mordal::CurvePoint& p) { return mordal::same_ratio(p.ratio, 0.125); });
  }
  mordal::PreparedJob p;
  p.bundle = std::make_shared<const mordal::TraceBundle>(std::move(t.bundle));
  p.oracle = std::make_unique<mordal::TraceOracle>(p.bundle);
  return mordal::run_job(p, mordal::SearchConfig{}, 1);
}

}  // namespace

TEST(JobConfig, ParsesAllSections) {
  const auto c = mordal::job_config_from_json(base_config(), "/base");
  EXPECT_EQ(c.resolve(*c.trace), "/base/trace");
  EXPECT_EQ(c.search.seed, 3u);
  EXPECT_EQ(c.search.t_ve, 0.6);
  EXPECT_EQ(c.search.t_llm, 0.75);
  EXPECT_EQ(c.search.topk_inter, 2u);
  EXPECT_EQ(c.search.topk_intra, 4u);
  EXPECT_EQ(c.search.sha.max_ratio, 0.25);
  EXPECT_EQ(c.search.sha.initial_budget, 0.05);
  EXPECT_EQ(c.search.sha.eta, 3.0);
  EXPECT_EQ(c.search.scaling.fit_tolerance, 1e-4);
  EXPECT_EQ(c.vlm_kwargs["epochs"], 1);
}

TEST(JobConfig, RoundTrips) {
  const auto c = mordal::job_config_from_json(base_config());
  const auto j = mordal::job_config_to_json(c);
  const auto back = mordal::job_config_from_json(j);
  EXPECT_EQ(mordal::job_config_to_json(back), j);
}

TEST(JobConfig, Defaults) {
  const auto c = mordal::job_config_from_json(Json::parse(R"({"trace": "t"})"));
  EXPECT_EQ(c.search.t_ve, 0.7);
  EXPECT_EQ(c.search.t_llm, 0.8);
  EXPECT_EQ(c.search.topk_inter, 3u);
  EXPECT_EQ(c.search.sha.max_ratio, 0.125);
  EXPECT_EQ(c.search.sha.initial_budget, 0.03);
  EXPECT_EQ(c.search.scaling.min_points, 3u);
  EXPECT_FALSE(c.output.has_value());
}

TEST(JobConfig, Rejections) {
  auto j = base_config();
  j["mordal_kwargs"]["scaling_prediction"]["R"] = 0.125;  // SHA R is 0.25
  EXPECT_EQ(kind_of(j), ErrorKind::kConfig);
  j = base_config();
  j["mordal_kwargs"]["exploration"]["topk"] = 1;
  EXPECT_EQ(kind_of(j), ErrorKind::kConfig);
  j = base_config();
  j["extra"] = true;
  EXPECT_EQ(kind_of(j), ErrorKind::kConfig);
  j = base_config();
  j["mordal_kwargs"]["clustering"]["t_ve"] = "high";
  EXPECT_EQ(kind_of(j), ErrorKind::kConfig);
  j = base_config();
  j["synthetic"] = {{"spec", "s.json"}};
  EXPECT_EQ(kind_of(j), ErrorKind::kConfig);
  EXPECT_EQ(kind_of(Json::parse(R"({"seed": 1})")), ErrorKind::kConfig);
  EXPECT_EQ(kind_of(Json::parse(R"({"synthetic": {"spec": {}}, "oracle": {"type": "external", "command": ["x"]}})")),
            ErrorKind::kConfig);
  EXPECT_EQ(kind_of(Json::parse(R"({"trace": "t", "oracle": {"type": "external"}})")), ErrorKind::kConfig);
  EXPECT_EQ(kind_of(Json::parse(R"({"trace": "t", "oracle": {"type": "grpc"}})")), ErrorKind::kConfig);
  EXPECT_EQ(kind_of(Json::parse(R"({"trace": "t", "mordal_kwargs": {"early_stopping": {"b": 0.5}}})")),
            ErrorKind::kConfig);
}

TEST(JobConfig, LoadMissingFileIsConfigError) {
  try {
    mordal::load_job_config("/nonexistent/config.json");
    FAIL();
  } catch (const mordal::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig) << e.what();
  }
}

TEST(PrepareJob, InlineSyntheticSpec) {
  const auto c = mordal::job_config_from_json(
      Json::parse(R"({"synthetic": {"spec": {"ve": {"group_sizes": [2, 1]}, "llm": {"group_sizes": [1, 1]},
                      "activations": {"n_samples": 8, "n_features": 2}}}})"));
  const auto p = mordal::prepare_job(c, 1);
  EXPECT_EQ(p.bundle->candidates().size(), 6u);
  ASSERT_TRUE(p.planted_best.has_value());
  EXPECT_FALSE(mordal::full_data_errors(*p.bundle).empty());
}

TEST(Report, JsonHasRequiredShape) {
  const auto r = small_report(false);
  ASSERT_FALSE(r.incomplete) << r.failure;
  const auto j = mordal::report_to_json(r, mordal::job_config_to_json(mordal::JobConfig{}));
  EXPECT_NO_THROW(mordal::validate_report_json(j));
  EXPECT_EQ(j["ranking"].size(), 9u);
  EXPECT_EQ(j["ranking"][0]["rank"], 1);
  EXPECT_EQ(j["ranking"][0]["status"], "shortlisted");
  EXPECT_EQ(j["top1"]["id"], j["ranking"][0]["id"]);
  double sum = 0.0;
  for (const char* k : {"clustering", "inter_es", "intra_es", "prediction"}) sum += j["cost"][k].get<double>();
  EXPECT_NEAR(sum, j["cost"]["total"].get<double>(), 1e-12);
  ASSERT_TRUE(j["metrics"].is_object());
  EXPECT_GT(j["metrics"]["speedup"].get<double>(), 1.0);
  // Round-trips through text.
  EXPECT_EQ(Json::parse(mordal::dump_report(j)), j);
}

TEST(Report, RenderTextAndCsv) {
  const auto j = mordal::report_to_json(small_report(false), Json::object());
  const auto text = mordal::render_text(j);
  EXPECT_EQ(text.find("INCOMPLETE"), std::string::npos);
  EXPECT_NE(text.find("top-1: " + j["top1"]["id"].get<std::string>()), std::string::npos);
  EXPECT_NE(text.find("vs grid search"), std::string::npos);
  EXPECT_NE(text.find("... 4 more"), std::string::npos);
  const auto csv = mordal::render_csv(j);
  EXPECT_EQ(csv.substr(0, 11), "phase,cost\n");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("\ninter_es,"), std::string::npos);
}

TEST(Report, IncompleteBanner) {
  const auto r = small_report(true);
  ASSERT_TRUE(r.incomplete);
  const auto j = mordal::report_to_json(r, Json::object());
  EXPECT_TRUE(j["incomplete"].get<bool>());
  EXPECT_TRUE(j["top1"].is_null());
  EXPECT_TRUE(j["metrics"].is_null());
  const auto text = mordal::render_text(j);
  EXPECT_EQ(text.rfind("!!! INCOMPLETE REPORT", 0), 0u);
}

TEST(Report, SchemaViolations) {
  auto j = mordal::report_to_json(small_report(false), Json::object());
  auto broken = j;
  broken.erase("cost");
  EXPECT_THROW(mordal::validate_report_json(broken), mordal::Error);
  broken = j;
  broken["format_version"] = 99;
  try {
    mordal::render_text(broken);
    FAIL();
  } catch (const mordal::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSchema);
  }
}
