// certsmooth command-line driver. Exit codes: 0 success, 1 configuration
// error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "certsmooth/config.hpp"
#include "certsmooth/harness.hpp"
#include "certsmooth/log.hpp"
#include "certsmooth/reference.hpp"
#include "certsmooth/report.hpp"
#include "certsmooth/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace certsmooth;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out = "out";
  std::string log_level = "info";
};

RunConfig load(const Globals& g, bool required) {
  RunConfig c;
  if (g.config) {
    c = load_run_config(*g.config);
  } else if (required) {
    throw ConfigError("--config: required for this subcommand");
  } else {
    c.base_dir = fs::current_path();
  }
  if (g.seed) c.seed = *g.seed;
  if (g.workers) c.workers = *g.workers;
  return c;
}

int cmd_synth(const Globals& g) {
  const RunConfig c = load(g, false);
  const auto out = synthesize(c, fs::absolute(g.out));
  std::cout << "test set:  " << out.test_manifest.string() << "\n"
            << "train set: " << out.train_manifest.string() << "\n"
            << "model:     " << out.model.string() << "\n"
            << "config:    " << out.config.string() << "\n";
  return 0;
}

int cmd_train(const Globals& g) {
  RunConfig c = load(g, true);
  if (c.model.kind != ModelKind::kToy) throw ConfigError("model.kind: prompt training needs the toy model");
  c.prompts_file.reset();
  const ToyVlm vlm = load_vlm(c.model.path);
  const auto trained = train_prompts(c, vlm);
  fs::create_directories(g.out);
  const fs::path prompts = fs::path(g.out) / "prompts.csmt";
  save_prompts(prompts, trained.prompts, vlm.num_classes());
  std::string loss = "epoch,loss\n";
  for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e) {
    char line[64];
    std::snprintf(line, sizeof line, "%zu,%.9g\n", e + 1, trained.epoch_loss[e]);
    loss += line;
  }
  write_file(fs::path(g.out) / "few_shot_loss.csv", loss);
  std::cout << "prompts: " << prompts.string() << "\n";
  return 0;
}

int cmd_certify(const Globals& g) {
  const RunConfig c = load(g, true);
  const auto records = run_certification(c, g.out);
  const auto curves = run_curves(c, records);
  write_reports(c, curves, g.out);
  std::cout << render_report(curves, ReportFormat::kText);
  return 0;
}

int cmd_report(const Globals& g, const std::string& records_path, const std::vector<std::string>& formats) {
  RunConfig c = load(g, true);
  if (!formats.empty()) {
    for (const auto& f : formats) parse_report_format(f);
    c.report_formats = formats;
  }
  const fs::path path = records_path.empty() ? fs::path(g.out) / "records.jsonl" : fs::path(records_path);
  const auto records = load_records(path);
  const auto curves = run_curves(c, records);
  write_reports(c, curves, g.out);
  std::cout << render_report(curves, ReportFormat::kText);
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& kind, const std::vector<std::string>& grid) {
  const RunConfig c = load(g, true);
  std::optional<AblationConfig> ablation = c.ablation;
  if (!kind.empty()) {
    AblationConfig a;
    a.kind = parse_ablation_kind(kind);
    a.grid = grid;
    ablation = a;
  }
  if (!ablation) throw ConfigError("ablation: required (in the config or via --kind/--grid)");
  const auto settings = ablation_sweep(c, *ablation, g.out);
  for (const auto& s : settings) {
    std::cout << s.label << "\n" << render_report(s.curves, ReportFormat::kText) << "\n";
  }
  std::cout << "summary: " << (fs::path(g.out) / "ablation_summary.csv").string() << "\n";
  return 0;
}

int cmd_oracle(const Globals& g, int inputs) {
  bool ok = true;
  for (const auto& check : reference::scalar_checks()) {
    std::printf("%s %-44s computed=%.17g expected=%.17g tol=%g\n", check.passed() ? "PASS" : "FAIL",
                check.name.c_str(), check.computed, check.expected, check.tolerance);
    ok = ok && check.passed();
  }
  NoiseSpec noise;
  noise.sigma = 0.25;
  const auto r = oracle_soundness(inputs, noise, 8, g.seed.value_or(0),
                                  SamplingOptions{1024, g.workers.value_or(1)});
  const bool sound = r.wrong_class == 0 && r.radius_exceeds_truth == 0 &&
                     r.radius_at_least_half >= 0.99 * r.non_abstain;
  std::printf("%s half-space oracle: %d inputs, %d certified, %d wrong class, %d radius above truth, "
              "%d of %d at least half the true radius (%.1fs)\n",
              sound ? "PASS" : "FAIL", r.inputs, r.non_abstain, r.wrong_class, r.radius_exceeds_truth,
              r.radius_at_least_half, r.non_abstain, r.seconds);
  return ok && sound ? 0 : kExitRuntime;
}

LogLevel parse_level(const std::string& s) {
  if (s == "debug") return LogLevel::kDebug;
  if (s == "info") return LogLevel::kInfo;
  if (s == "warn") return LogLevel::kWarn;
  if (s == "error") return LogLevel::kError;
  if (s == "quiet") return LogLevel::kQuiet;
  throw ConfigError("--log-level: expected debug, info, warn, error or quiet");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified robustness by randomized smoothing, with prompt learning on a toy VLM"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or quiet")->capture_default_str();

  auto* synth = app.add_subcommand("synth-data", "Generate the synthetic benchmark, toy model and a run config");
  auto* train = app.add_subcommand("train-prompts", "Few-shot prompt training; writes prompts.csmt");
  auto* certify_cmd = app.add_subcommand("certify", "Certify the test set and write records and reports");
  auto* report = app.add_subcommand("report", "Rebuild reports from a records file");
  std::string records_path;
  std::vector<std::string> formats;
  report->add_option("--records", records_path, "Records file (default <out>/records.jsonl)");
  report->add_option("--format", formats, "csv, json and/or text");
  auto* ablate = app.add_subcommand("ablate", "Sweep one setting and summarize the curves");
  std::string kind;
  std::vector<std::string> grid;
  ablate->add_option("--kind", kind, "SHOTS, CONTEXT_TOKENS, OPTIMIZER_STEPS or CONTEXT_INIT");
  ablate->add_option("--grid", grid, "Grid values");
  auto* oracle = app.add_subcommand("oracle-check", "Check the engine against frozen reference values");
  int inputs = 200;
  oracle->add_option("--inputs", inputs, "Half-space oracle inputs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    set_log_level(parse_level(g.log_level));
    if (*synth) return cmd_synth(g);
    if (*train) return cmd_train(g);
    if (*certify_cmd) return cmd_certify(g);
    if (*report) return cmd_report(g, records_path, formats);
    if (*ablate) {
      if (kind.empty() != grid.empty()) throw ConfigError("--kind and --grid go together");
      return cmd_ablate(g, kind, grid);
    }
    if (*oracle) return cmd_oracle(g, inputs);
  } catch (const ConfigError& e) {
    log_event(LogLevel::kError, "config_error", {{"message", e.what()}});
    return kExitConfig;
  } catch (const std::exception& e) {
    log_event(LogLevel::kError, "runtime_error", {{"message", e.what()}});
    return kExitRuntime;
  }
  return 0;
}
