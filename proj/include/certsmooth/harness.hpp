#pragma once

// End-to-end driver: datasets, certification runs (streamed, resumable,
// deterministic across worker counts), ablation sweeps and the half-space
// oracle check.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "certsmooth/config.hpp"
#include "certsmooth/report.hpp"
#include "certsmooth/smoothing.hpp"
#include "certsmooth/toymodel.hpp"

namespace certsmooth {

struct Dataset {
  DatasetManifest manifest;
  RowMatrix images;
  std::vector<int> labels;

  int size() const { return static_cast<int>(images.rows()); }
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes <dir>/<name>.json, <name>_images.csmt and <name>_labels.csmt.
std::filesystem::path save_dataset(const std::filesystem::path& dir, const std::string& name,
                                   const std::vector<std::string>& classes, const std::string& prompt_template,
                                   const RowMatrix& images, const std::vector<int>& labels);

/// Files written by synth-data.
struct SynthOutputs {
  std::filesystem::path test_manifest;
  std::filesystem::path train_manifest;
  std::filesystem::path model;
  std::filesystem::path config;  // ready-to-run config referencing the files above
};

SynthOutputs synthesize(const RunConfig& config, const std::filesystem::path& out_dir);

/// Seed streams derived from the run seed (besides the per-record
/// certification seed mix64(run_seed, sample_index, sigma_index)).
enum class Stream : std::uint64_t { kFewShotInit = 1, kFewShotTrain = 2, kZeroShotInit = 3, kAdapt = 4 };
inline constexpr std::uint64_t kStreamTag = 0x73747265616dULL;

std::uint64_t stream_seed(std::uint64_t run_seed, Stream stream);
std::uint64_t adapt_seed(std::uint64_t run_seed, int sample_index);
std::uint64_t certify_seed(std::uint64_t run_seed, int sample_index, int sigma_index);

/// Few-shot prompts from config: loaded from prompts.file when set,
/// otherwise trained on the train dataset.
struct TrainedPrompts {
  PromptState prompts;
  std::vector<double> epoch_loss;  // empty when loaded
};
TrainedPrompts train_prompts(const RunConfig& config, const ToyVlm& vlm);

/// Thrown when RunHooks::stop_after_units interrupts a run.
class RunInterrupted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunHooks {
  /// Stop after this many (method, sample) units were written, leaving the
  /// partial stream behind as a crashed run would.
  std::optional<int> stop_after_units;
};

/// Certifies every (method, sample, sigma) and returns the records sorted by
/// record_order. Progress streams to <out>/records.partial.jsonl; a rerun
/// with the same config skips the units found there. The finished set is
/// written to <out>/records.jsonl.
std::vector<CertRecord> run_certification(const RunConfig& config, const std::filesystem::path& out_dir,
                                          const RunHooks& hooks = {});

std::vector<CertRecord> load_records(const std::filesystem::path& path);

/// Curves for the run's methods, sigmas and radius grid.
std::vector<MethodCurves> run_curves(const RunConfig& config, std::span<const CertRecord> records);

/// Writes report.<ext> for every configured format plus report_per_sigma.csv.
void write_reports(const RunConfig& config, std::span<const MethodCurves> curves,
                   const std::filesystem::path& out_dir);

struct AblationSetting {
  std::string label;  // e.g. "OPTIMIZER_STEPS=8"
  std::string value;
  std::vector<MethodCurves> curves;
};

/// Runs the pipeline once per grid value (shared base seed) into
/// <out>/<kind>_<value>/, and writes <out>/ablation_summary.csv.
std::vector<AblationSetting> ablation_sweep(const RunConfig& base, const AblationConfig& ablation,
                                            const std::filesystem::path& out_dir);

/// The config with one ablation value applied.
RunConfig apply_ablation(const RunConfig& base, AblationKind kind, const std::string& value);

/// Half-space classifier certified against its closed-form noisy behaviour.
struct OracleReport {
  int inputs = 0;
  int non_abstain = 0;
  int wrong_class = 0;
  int radius_exceeds_truth = 0;  // radius > true radius + 1e-9
  int radius_at_least_half = 0;  // among non-abstains
  double max_excess = 0.0;       // max(radius - true radius)
  double seconds = 0.0;
};

OracleReport oracle_soundness(int inputs, const NoiseSpec& noise, int dim, std::uint64_t seed,
                              const SamplingOptions& options = {});

}  // namespace certsmooth
