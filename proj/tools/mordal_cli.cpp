// Command-line front end: run a search, generate synthetic traces, compute
// distance matrices and render reports.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mordal/mordal.hpp"

namespace {

using namespace mordal;

enum ExitCode : int {
  kOk = 0,
  kExitConfig = 2,
  kExitTrace = 3,
  kExitOracle = 4,
  kExitOther = 5,
  kExitSchema = 6,
  kExitIncomplete = 7,
};

struct Category {
  const char* name;
  int code;
};

Category categorize(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return {"config", kExitConfig};
    case ErrorKind::kTrace:
    case ErrorKind::kSpec:
    case ErrorKind::kUnsupportedRatio:
    case ErrorKind::kLookup: return {"trace", kExitTrace};
    case ErrorKind::kOracle:
    case ErrorKind::kProtocol: return {"oracle", kExitOracle};
    case ErrorKind::kSchema: return {"schema", kExitSchema};
    case ErrorKind::kIo: return {"io", kExitOther};
    default: return {"input", kExitOther};
  }
}

int report_error(const Error& e) {
  const auto cat = categorize(e.kind());
  std::cerr << "error[" << cat.name << "]: " << e.what() << "\n";
  return cat.code;
}

void write_or_print(const std::optional<fs::path>& path, const std::string& content) {
  if (!path) {
    std::cout << content;
    return;
  }
  if (path->has_parent_path()) fs::create_directories(path->parent_path());
  detail::write_file(*path, content);
}

Json read_json(const fs::path& path, ErrorKind kind) {
  try {
    return Json::parse(detail::read_file(path));
  } catch (const Json::exception& e) {
    throw Error(kind, path.string() + ": " + e.what());
  }
}

struct RunArgs {
  std::string config;
  std::string trace;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_run(const RunArgs& args) {
  auto cfg = load_job_config(args.config);
  if (!args.trace.empty()) {
    // Command-line paths are relative to the working directory.
    cfg.trace = fs::absolute(args.trace).string();
    cfg.synthetic_spec.reset();
    cfg.synthetic_spec_path.reset();
  }
  if (args.seed) cfg.search.seed = *args.seed;
  std::optional<fs::path> out;
  if (!args.out.empty()) {
    out = fs::path(args.out);
  } else if (cfg.output) {
    out = cfg.resolve(*cfg.output);
  }

  const auto prepared = prepare_job(cfg);
  const auto report = run_job(prepared, cfg.search);
  JobConfig echo = cfg;
  echo.output.reset();
  write_or_print(out, dump_report(report_to_json(report, job_config_to_json(echo))));
  if (report.incomplete) {
    const auto cat = categorize(report.failure_kind.value_or(ErrorKind::kInput));
    std::cerr << "error[" << cat.name << "]: search incomplete: " << report.failure << "\n";
    return cat.code;
  }
  if (out) std::cerr << "report written to " << out->string() << "\n";
  return kOk;
}

int cmd_gen_trace(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed) {
  auto spec = synthetic_spec_from_json(read_json(spec_path, ErrorKind::kSpec));
  const auto trace = generate_synthetic(spec, seed);
  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorKind::kIo, e.what());
  }
  save_trace(trace.bundle, out_dir);
  std::cout << "planted top-1: " << trace.planted_best.id() << "\n";
  std::cout << "candidates: " << trace.bundle.candidates().size() << "\n";
  return kOk;
}

int cmd_cka(const std::string& in_dir, const std::string& out_path) {
  if (!fs::is_directory(in_dir)) throw Error(ErrorKind::kIo, "not a directory: " + in_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw Error(ErrorKind::kInput, "need >= 2 activation CSVs in " + in_dir);
  std::vector<ActivationMatrix> acts;
  for (const auto& f : files) acts.push_back(read_activation_csv(f));
  const auto dist = pairwise_distance_matrix(acts);
  write_or_print(out_path.empty() ? std::nullopt : std::optional<fs::path>(out_path),
                 distance_matrix_to_json(dist).dump(2) + "\n");
  return kOk;
}

int cmd_report(const std::string& in_path, const std::string& format) {
  const auto j = read_json(in_path, ErrorKind::kSchema);
  if (format == "csv") {
    std::cout << render_csv(j);
  } else {
    std::cout << render_text(j);
  }
  if (j["incomplete"].get<bool>()) {
    std::cerr << "error[incomplete]: INCOMPLETE report: " << j.value("failure", std::string()) << "\n";
    return kExitIncomplete;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pretrained VE x LLM model selection"};
  app.require_subcommand(1);

  RunArgs run_args;
  std::uint64_t run_seed = 0;
  auto* run = app.add_subcommand("run", "Search a zoo and write a report");
  run->add_option("--config", run_args.config, "Job config (JSON)")->required();
  run->add_option("--trace", run_args.trace, "Trace bundle directory (overrides the config)");
  run->add_option("--out", run_args.out, "Report path (overrides the config)");
  auto* seed_opt = run->add_option("--seed", run_seed, "Seed (overrides the config)");

  std::string spec_path, gen_out;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen-trace", "Write a synthetic trace bundle");
  gen->add_option("--spec", spec_path, "Synthetic spec (JSON)")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");

  std::string cka_in, cka_out;
  auto* cka = app.add_subcommand("cka", "Pairwise 1 - CKA distances of activation CSVs");
  cka->add_option("--in", cka_in, "Directory of activation CSVs")->required();
  cka->add_option("--out", cka_out, "Distance matrix JSON path");

  std::string report_in, report_format = "text";
  auto* report = app.add_subcommand("report", "Render a report");
  report->add_option("--in", report_in, "Report JSON")->required();
  report->add_option("--format", report_format, "text or csv")
      ->check(CLI::IsMember({"text", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*run) {
      if (*seed_opt) run_args.seed = run_seed;
      return cmd_run(run_args);
    }
    if (*gen) return cmd_gen_trace(spec_path, gen_out, gen_seed);
    if (*cka) return cmd_cka(cka_in, cka_out);
    if (*report) return cmd_report(report_in, report_format);
  } catch (const Error& e) {
    return report_error(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return kExitOther;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
