#pragma once

// Run configuration (JSON). Relative paths resolve against the directory of
// the file they appear in. Schema violations raise ConfigError naming the
// offending field path, e.g. "noise.sigmas[2]: expected a positive number".

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "certsmooth/promptlearn.hpp"
#include "certsmooth/smoothing.hpp"
#include "certsmooth/toymodel.hpp"

namespace certsmooth {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method { kNoPromptLearning, kFewShot, kZeroShot, kCombined };

std::string to_string(Method method);
Method parse_method(const std::string& name);  // no_pl | few_shot | zero_shot | combined
std::string display_name(Method method);

enum class ModelKind { kToy, kLinear, kConstant, kExternal };

struct ModelConfig {
  ModelKind kind = ModelKind::kToy;
  std::filesystem::path path;  // toy: model file; linear: K x D weight tensor
  double tau = 100.0;
  std::vector<double> bias;    // linear
  bool float32_inputs = false; // linear
  int num_classes = 2;         // constant
  int input_dim = 0;           // external; constant (0 = dataset dimension)
  int label = 0;               // constant
  std::string command;         // external
};

/// Dataset manifest: {name, classes, template, tensor_file, labels_file}.
struct DatasetManifest {
  std::string name;
  std::vector<std::string> classes;
  std::string prompt_template;
  std::filesystem::path tensor_file;
  std::filesystem::path labels_file;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct SynthConfig {
  int num_classes = 4;
  int image_dim = 64;
  int train_per_class = 16;
  int test_per_class = 125;
  double separation = 5.0;
  std::uint64_t seed = 7;
  std::vector<std::string> class_names;  // defaults to class_0..class_{K-1}
  std::string prompt_template = "An H&E image patch of {}";
  ToyVlmConfig model;
};

enum class AblationKind { kShots, kContextTokens, kOptimizerSteps, kContextInit };

std::string to_string(AblationKind kind);
AblationKind parse_ablation_kind(const std::string& name);

struct AblationConfig {
  AblationKind kind = AblationKind::kOptimizerSteps;
  std::vector<std::string> grid;  // numbers, or RANDOM/TEMPLATE for kContextInit
};

struct RunConfig {
  std::filesystem::path base_dir;
  std::optional<std::filesystem::path> dataset;        // test manifest
  std::optional<std::filesystem::path> train_dataset;  // few-shot manifest
  ModelConfig model;
  std::vector<Method> methods{Method::kNoPromptLearning};
  std::vector<double> sigmas{0.1, 0.25, 0.5, 1.0};
  NoiseSpec noise;  // sigma and seed are filled per record
  std::int64_t batch_size = 1024;
  std::optional<int> num_samples;
  int context_tokens = 5;
  bool per_class_context = false;
  ContextInit few_shot_init = ContextInit::kRandom;
  ContextInit zero_shot_init = ContextInit::kTemplate;
  FewShotConfig few_shot;
  ZeroShotConfig zero_shot;
  std::optional<std::filesystem::path> prompts_file;
  std::vector<double> radius_grid{0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5};
  std::vector<std::string> report_formats{"csv", "json", "text"};
  std::uint64_t seed = 0;
  int workers = 1;
  SynthConfig synth;
  std::optional<AblationConfig> ablation;
};

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Inverse of parse_run_config; paths are written relative to `base_dir`.
nlohmann::ordered_json to_json(const RunConfig& config, const std::filesystem::path& base_dir);

ContextInit parse_context_init(const std::string& name);
std::string to_string(ContextInit init);

}  // namespace certsmooth
