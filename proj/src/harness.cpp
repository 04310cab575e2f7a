#include "certsmooth/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "certsmooth/classifiers.hpp"
#include "certsmooth/extproto.hpp"
#include "certsmooth/log.hpp"
#include "certsmooth/promptlearn.hpp"
#include "certsmooth/rng.hpp"
#include "certsmooth/tensor_io.hpp"

namespace certsmooth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool uses_few_shot(Method m) { return m == Method::kFewShot || m == Method::kCombined; }
bool uses_adaptation(Method m) { return m == Method::kZeroShot || m == Method::kCombined; }

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  Dataset d;
  d.manifest = load_manifest(manifest_path);
  const auto images = load_tensors(d.manifest.tensor_file);
  const auto labels = load_tensors(d.manifest.labels_file);
  if (images.size() != 1 || images.front().shape.size() != 2) {
    throw std::runtime_error(d.manifest.tensor_file.string() + ": expected one N x D tensor");
  }
  if (labels.size() != 1 || labels.front().shape.size() != 1) {
    throw std::runtime_error(d.manifest.labels_file.string() + ": expected one 1-D label tensor");
  }
  d.images = to_matrix(images.front());
  d.labels = to_labels(labels.front());
  if (static_cast<Eigen::Index>(d.labels.size()) != d.images.rows()) {
    throw std::runtime_error(manifest_path.string() + ": " + std::to_string(d.images.rows()) + " images but " +
                             std::to_string(d.labels.size()) + " labels");
  }
  const int k_classes = static_cast<int>(d.manifest.classes.size());
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] < 0 || d.labels[i] >= k_classes) {
      throw std::runtime_error(d.manifest.labels_file.string() + ": label " + std::to_string(d.labels[i]) +
                               " at index " + std::to_string(i) + " outside [0, " + std::to_string(k_classes) + ")");
    }
  }
  return d;
}

fs::path save_dataset(const fs::path& dir, const std::string& name, const std::vector<std::string>& classes,
                      const std::string& prompt_template, const RowMatrix& images, const std::vector<int>& labels) {
  DatasetManifest m;
  m.name = name;
  m.classes = classes;
  m.prompt_template = prompt_template;
  m.tensor_file = dir / (name + "_images.csmt");
  m.labels_file = dir / (name + "_labels.csmt");
  const Tensor image_tensor = to_tensor(Eigen::Ref<const RowMatrix>(images));
  const Tensor label_tensor = to_tensor(std::span<const int>(labels));
  save_tensors(m.tensor_file, std::span<const Tensor>(&image_tensor, 1));
  save_tensors(m.labels_file, std::span<const Tensor>(&label_tensor, 1));
  const fs::path manifest = dir / (name + ".json");
  save_manifest(manifest, m);
  return manifest;
}

SynthOutputs synthesize(const RunConfig& config, const fs::path& out_dir) {
  const auto& s = config.synth;
  fs::create_directories(out_dir);
  std::vector<std::string> classes = s.class_names;
  if (classes.empty()) {
    for (int k = 0; k < s.num_classes; ++k) classes.push_back("class_" + std::to_string(k));
  }
  const SynthDataset test = synth_dataset(s.num_classes, s.image_dim, s.test_per_class, s.separation, s.seed);
  const SynthDataset train = sample_around_means(test.class_means, s.train_per_class, mix64(s.seed, 2));
  ToyVlmConfig model_cfg = s.model;
  model_cfg.num_classes = s.num_classes;
  model_cfg.image_dim = s.image_dim;
  const ToyVlm vlm = make_aligned_vlm(model_cfg, test.class_means);

  SynthOutputs out;
  out.test_manifest = save_dataset(out_dir, "test", classes, s.prompt_template, test.images, test.labels);
  out.train_manifest = save_dataset(out_dir, "train", classes, s.prompt_template, train.images, train.labels);
  out.model = out_dir / "model.csmt";
  save_vlm(out.model, vlm);

  RunConfig run = config;
  run.base_dir = out_dir;
  run.dataset = out.test_manifest;
  run.train_dataset = out.train_manifest;
  run.model = ModelConfig{};
  run.model.kind = ModelKind::kToy;
  run.model.path = out.model;
  run.model.tau = config.model.kind == ModelKind::kToy ? config.model.tau : 100.0;
  run.prompts_file.reset();
  run.methods = {Method::kNoPromptLearning, Method::kFewShot, Method::kZeroShot, Method::kCombined};
  out.config = out_dir / "config.json";
  write_file(out.config, to_json(run, out_dir).dump(2) + "\n");
  log_event(LogLevel::kInfo, "synth_data",
            {{"out", out_dir.string()}, {"test", std::to_string(test.size())}, {"train", std::to_string(train.size())}});
  return out;
}

std::uint64_t stream_seed(std::uint64_t run_seed, Stream stream) {
  return mix64(run_seed, kStreamTag, static_cast<std::uint64_t>(stream));
}

std::uint64_t adapt_seed(std::uint64_t run_seed, int sample_index) {
  return mix64(run_seed, kStreamTag, static_cast<std::uint64_t>(Stream::kAdapt),
               static_cast<std::uint64_t>(sample_index));
}

std::uint64_t certify_seed(std::uint64_t run_seed, int sample_index, int sigma_index) {
  return mix64(run_seed, static_cast<std::uint64_t>(sample_index), static_cast<std::uint64_t>(sigma_index));
}

TrainedPrompts train_prompts(const RunConfig& config, const ToyVlm& vlm) {
  if (config.prompts_file) {
    TrainedPrompts out{load_prompts(*config.prompts_file, vlm.num_classes()), {}};
    check_prompts(vlm, out.prompts);
    return out;
  }
  if (!config.train_dataset) throw ConfigError("train_dataset: required for few-shot prompts (or set prompts.file)");
  const Dataset train = load_dataset(*config.train_dataset);
  if (train.images.cols() != vlm.image_dim()) {
    throw ConfigError("train_dataset: image dimension " + std::to_string(train.images.cols()) +
                      " does not match the model's " + std::to_string(vlm.image_dim()));
  }
  const int shots = config.few_shot.shots_per_class;
  std::vector<int> taken(static_cast<std::size_t>(vlm.num_classes()), 0);
  std::vector<Eigen::Index> rows;
  for (int i = 0; i < train.size(); ++i) {
    const int label = train.labels[static_cast<std::size_t>(i)];
    if (label >= vlm.num_classes()) throw std::runtime_error("train_dataset: label outside the model's classes");
    if (taken[static_cast<std::size_t>(label)] < shots) {
      ++taken[static_cast<std::size_t>(label)];
      rows.push_back(i);
    }
  }
  for (int k = 0; k < vlm.num_classes(); ++k) {
    if (taken[static_cast<std::size_t>(k)] < shots) {
      throw ConfigError("few_shot.shots_per_class: class " + std::to_string(k) + " has only " +
                        std::to_string(taken[static_cast<std::size_t>(k)]) + " training samples");
    }
  }
  RowMatrix images(static_cast<Eigen::Index>(rows.size()), train.images.cols());
  std::vector<int> labels;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    images.row(static_cast<Eigen::Index>(r)) = train.images.row(rows[r]);
    labels.push_back(train.labels[static_cast<std::size_t>(rows[r])]);
  }
  const PromptState init = init_prompts(vlm, config.context_tokens, config.few_shot_init,
                                        stream_seed(config.seed, Stream::kFewShotInit), config.per_class_context);
  FewShotConfig fc = config.few_shot;
  fc.seed = stream_seed(config.seed, Stream::kFewShotTrain);
  auto result = few_shot_train(vlm, init, images, labels, fc, Temperature(config.model.tau));
  log_event(LogLevel::kInfo, "few_shot_trained",
            {{"shots", std::to_string(shots)},
             {"epochs", std::to_string(fc.epochs)},
             {"loss_first", result.epoch_loss.empty() ? "" : std::to_string(result.epoch_loss.front())},
             {"loss_last", result.epoch_loss.empty() ? "" : std::to_string(result.epoch_loss.back())}});
  return {std::move(result.prompts), std::move(result.epoch_loss)};
}

namespace {

/// Model and prompts shared by all units of a run.
struct Pipeline {
  std::optional<ToyVlm> vlm;
  std::unique_ptr<BaseClassifier> fixed;
  ExternalClassifier* external = nullptr;
  PromptState template_prompts;
  PromptState zero_shot_init;
  std::optional<PromptState> few_shot;
};

Pipeline build_pipeline(const RunConfig& config, const Dataset& data) {
  Pipeline p;
  const int k_classes = static_cast<int>(data.manifest.classes.size());
  const int dim = static_cast<int>(data.images.cols());
  const auto& mc = config.model;
  if (mc.kind != ModelKind::kToy) {
    for (Method m : config.methods) {
      if (m != Method::kNoPromptLearning) {
        throw ConfigError("method: " + to_string(m) + " needs a promptable model (model.kind = toy)");
      }
    }
  }
  switch (mc.kind) {
    case ModelKind::kToy: {
      p.vlm = load_vlm(mc.path);
      if (p.vlm->image_dim() != dim || p.vlm->num_classes() != k_classes) {
        throw ConfigError("model.path: model has " + std::to_string(p.vlm->num_classes()) + " classes and input dim " +
                          std::to_string(p.vlm->image_dim()) + ", dataset has " + std::to_string(k_classes) +
                          " and " + std::to_string(dim));
      }
      p.template_prompts = template_prompts(*p.vlm);
      p.zero_shot_init = init_prompts(*p.vlm, config.context_tokens, config.zero_shot_init,
                                      stream_seed(config.seed, Stream::kZeroShotInit), config.per_class_context);
      if (std::any_of(config.methods.begin(), config.methods.end(), uses_few_shot)) {
        p.few_shot = train_prompts(config, *p.vlm).prompts;
      }
      break;
    }
    case ModelKind::kLinear: {
      const auto tensors = load_tensors(mc.path);
      if (tensors.size() != 1 || tensors.front().shape.size() != 2) {
        throw ConfigError("model.path: expected one K x D weight tensor");
      }
      RowMatrix weights = to_matrix(tensors.front());
      if (weights.rows() != k_classes || weights.cols() != dim) {
        throw ConfigError("model.path: weight shape does not match the dataset");
      }
      Eigen::VectorXd bias = Eigen::VectorXd::Zero(k_classes);
      if (!mc.bias.empty()) {
        if (static_cast<int>(mc.bias.size()) != k_classes) throw ConfigError("model.bias: expected one entry per class");
        bias = Eigen::Map<const Eigen::VectorXd>(mc.bias.data(), k_classes);
      }
      p.fixed = std::make_unique<LinearArgmaxClassifier>(std::move(weights), bias, mc.float32_inputs);
      break;
    }
    case ModelKind::kConstant: {
      const int input_dim = mc.input_dim == 0 ? dim : mc.input_dim;
      if (input_dim != dim) throw ConfigError("model.input_dim: does not match the dataset");
      p.fixed = std::make_unique<ConstantClassifier>(mc.num_classes, input_dim, mc.label);
      break;
    }
    case ModelKind::kExternal: {
      if (mc.input_dim != dim) throw ConfigError("model.input_dim: does not match the dataset");
      ExternalOptions options;
      options.input_dim = mc.input_dim;
      auto ext = spawn_external(mc.command, options);
      p.external = ext.get();
      p.fixed = std::move(ext);
      break;
    }
  }
  return p;
}

struct UnitKey {
  int method_index;
  int sample_index;
  auto operator<=>(const UnitKey&) const = default;
};

std::vector<CertRecord> run_unit(const RunConfig& config, Pipeline& pipeline, const Dataset& data, Method method,
                                 int sample) {
  const auto start = Clock::now();
  const Eigen::VectorXd x = data.images.row(sample).transpose();
  const int truth = data.labels[static_cast<std::size_t>(sample)];
  std::vector<CertRecord> records;
  try {
    std::optional<ZeroShotClassifier> toy;
    BaseClassifier* f = pipeline.fixed.get();
    std::optional<double> before, after;
    if (pipeline.vlm) {
      const ToyVlm& vlm = *pipeline.vlm;
      PromptState prompts = method == Method::kNoPromptLearning ? pipeline.template_prompts
                            : method == Method::kZeroShot       ? pipeline.zero_shot_init
                                                                : *pipeline.few_shot;
      if (uses_adaptation(method)) {
        ZeroShotConfig zc = config.zero_shot;
        zc.seed = adapt_seed(config.seed, sample);
        auto adapted = zero_shot_adapt(vlm, prompts, x, zc, Temperature(config.model.tau));
        prompts = std::move(adapted.prompts);
        before = adapted.entropy_before;
        after = adapted.entropy_after;
      }
      toy.emplace(make_classifier(vlm, prompts));
      f = &*toy;
    }
    const double setup_ms = elapsed_ms(start);
    const int clean = f->evaluate(x.transpose())[0];
    for (std::size_t s = 0; s < config.sigmas.size(); ++s) {
      const auto t0 = Clock::now();
      NoiseSpec spec = config.noise;
      spec.sigma = config.sigmas[s];
      spec.seed = certify_seed(config.seed, sample, static_cast<int>(s));
      CertRecord r;
      r.method = method;
      r.sample_index = sample;
      r.sigma_index = static_cast<int>(s);
      r.sigma = spec.sigma;
      r.true_label = truth;
      r.outcome = certify(*f, x, spec, SamplingOptions{config.batch_size, 1});
      r.clean_prediction = clean;
      r.entropy_before = before;
      r.entropy_after = after;
      r.wall_time_ms = elapsed_ms(t0) + (s == 0 ? setup_ms : 0.0);
      records.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    log_event(LogLevel::kError, "sample_failed",
              {{"method", to_string(method)}, {"sample", std::to_string(sample)}, {"error", e.what()}});
    records.clear();
    for (std::size_t s = 0; s < config.sigmas.size(); ++s) {
      CertRecord r;
      r.method = method;
      r.sample_index = sample;
      r.sigma_index = static_cast<int>(s);
      r.sigma = config.sigmas[s];
      r.true_label = truth;
      r.error = e.what();
      r.wall_time_ms = elapsed_ms(start);
      records.push_back(std::move(r));
    }
  }
  return records;
}

std::string run_fingerprint(const RunConfig& config) {
  auto doc = to_json(config, config.base_dir);
  doc.erase("workers");
  doc.erase("report");
  doc.erase("ablation");
  return hex64(fnv1a(doc.dump()));
}

/// Completed units from a previous partial stream. A truncated final line
/// (crash mid-write) is dropped; any other damage is an error.
std::map<UnitKey, std::vector<CertRecord>> read_partial(const fs::path& path, const std::string& fingerprint,
                                                        const RunConfig& config) {
  std::map<UnitKey, std::vector<CertRecord>> units;
  std::ifstream in(path);
  if (!in) return units;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.empty()) return units;
  json header;
  try {
    header = json::parse(lines.front());
  } catch (const json::parse_error&) {
    return units;
  }
  if (!header.is_object() || header.value("fingerprint", std::string{}) != fingerprint) {
    throw std::runtime_error(path.string() + " belongs to a different configuration; remove it to start over");
  }
  std::map<Method, int> method_index;
  for (std::size_t i = 0; i < config.methods.size(); ++i) method_index[config.methods[i]] = static_cast<int>(i);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    CertRecord r;
    try {
      r = record_from_json(json::parse(lines[i]));
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) break;
      throw std::runtime_error(path.string() + ": line " + std::to_string(i + 1) + ": " + e.what());
    }
    units[{method_index.at(r.method), r.sample_index}].push_back(std::move(r));
  }
  std::erase_if(units, [&](const auto& item) { return item.second.size() != config.sigmas.size(); });
  return units;
}

void append_records(std::ostream& out, const std::vector<CertRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

}  // namespace

std::vector<CertRecord> run_certification(const RunConfig& config, const fs::path& out_dir, const RunHooks& hooks) {
  if (!config.dataset) throw ConfigError("dataset: required field is missing");
  if (config.methods.empty()) throw ConfigError("method: expected at least one method");
  if (config.sigmas.empty()) throw ConfigError("noise.sigmas: expected at least one sigma");
  NoiseSpec check = config.noise;
  check.sigma = config.sigmas.front();
  try {
    check.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("noise: ") + e.what());
  }
  const Dataset data = load_dataset(*config.dataset);
  int count = data.size();
  if (config.num_samples) {
    if (*config.num_samples > data.size()) {
      throw ConfigError("num_samples: " + std::to_string(*config.num_samples) + " exceeds the dataset size " +
                        std::to_string(data.size()));
    }
    count = *config.num_samples;
  }
  Pipeline pipeline = build_pipeline(config, data);

  fs::create_directories(out_dir);
  const fs::path partial_path = out_dir / "records.partial.jsonl";
  const std::string fingerprint = run_fingerprint(config);
  auto done = read_partial(partial_path, fingerprint, config);
  {
    std::ofstream rewrite(partial_path, std::ios::trunc);
    if (!rewrite) throw std::runtime_error("cannot write " + partial_path.string());
    rewrite << json{{"fingerprint", fingerprint}}.dump() << '\n';
    for (const auto& [key, records] : done) append_records(rewrite, records);
  }
  if (!done.empty()) log_event(LogLevel::kInfo, "resume", {{"completed_units", std::to_string(done.size())}});

  std::vector<UnitKey> todo;
  for (int m = 0; m < static_cast<int>(config.methods.size()); ++m) {
    for (int i = 0; i < count; ++i) {
      if (!done.count({m, i})) todo.push_back({m, i});
    }
  }

  std::ofstream stream(partial_path, std::ios::app);
  if (!stream) throw std::runtime_error("cannot append to " + partial_path.string());
  std::mutex writer;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  int written = 0;
  std::exception_ptr failure;

  auto work = [&] {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const UnitKey key = todo[i];
      auto records = run_unit(config, pipeline, data, config.methods[static_cast<std::size_t>(key.method_index)],
                              key.sample_index);
      std::lock_guard lock(writer);
      if (stop.load()) return;
      try {
        append_records(stream, records);
        stream.flush();
        if (!stream) throw std::runtime_error("error while writing " + partial_path.string());
      } catch (...) {
        failure = std::current_exception();
        stop = true;
        return;
      }
      done[key] = std::move(records);
      ++written;
      if (hooks.stop_after_units && written >= *hooks.stop_after_units) stop = true;
    }
  };

  const bool parallel = !pipeline.fixed || pipeline.fixed->concurrent_safe();
  const int workers = parallel ? std::max(1, config.workers) : 1;
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  stream.close();
  if (pipeline.external) {
    const int status = pipeline.external->shutdown();
    log_event(LogLevel::kInfo, "external_shutdown", {{"exit_status", std::to_string(status)}});
  }
  if (failure) std::rethrow_exception(failure);
  if (stop.load() && done.size() < config.methods.size() * static_cast<std::size_t>(count)) {
    throw RunInterrupted("run stopped after " + std::to_string(written) + " units");
  }

  std::vector<CertRecord> all;
  for (auto& [key, records] : done) {
    if (key.sample_index < count) all.insert(all.end(), records.begin(), records.end());
  }
  std::sort(all.begin(), all.end(), record_order);
  std::ostringstream text;
  append_records(text, all);
  const fs::path final_path = out_dir / "records.jsonl";
  write_file(out_dir / "records.jsonl.tmp", text.str());
  fs::rename(out_dir / "records.jsonl.tmp", final_path);
  fs::remove(partial_path);
  std::size_t errors = 0;
  for (const auto& r : all) errors += r.error.empty() ? 0 : 1;
  log_event(LogLevel::kInfo, "certified",
            {{"records", std::to_string(all.size())}, {"errors", std::to_string(errors)}, {"out", final_path.string()}});
  return all;
}

std::vector<CertRecord> load_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<CertRecord> records;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<MethodCurves> run_curves(const RunConfig& config, std::span<const CertRecord> records) {
  return build_curves(records, config.methods, config.sigmas, config.radius_grid);
}

void write_reports(const RunConfig& config, std::span<const MethodCurves> curves, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  for (const auto& name : config.report_formats) {
    const ReportFormat format = parse_report_format(name);
    emit_report(curves, format, out_dir / ("report" + extension(format)));
  }
  write_file(out_dir / "report_per_sigma.csv", render_per_sigma_csv(curves));
}

RunConfig apply_ablation(const RunConfig& base, AblationKind kind, const std::string& value) {
  RunConfig c = base;
  auto integer = [&](int min_value) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || v < min_value) {
      throw ConfigError("ablation.grid: \"" + value + "\" is not an integer >= " + std::to_string(min_value));
    }
    return v;
  };
  auto needs_training = [&] {
    if (c.prompts_file) {
      throw ConfigError("ablation." + to_string(kind) + ": prompts are retrained per setting; remove prompts.file");
    }
  };
  switch (kind) {
    case AblationKind::kShots:
      needs_training();
      c.few_shot.shots_per_class = integer(1);
      break;
    case AblationKind::kContextTokens:
      needs_training();
      c.context_tokens = integer(1);
      break;
    case AblationKind::kOptimizerSteps:
      c.zero_shot.steps = integer(0);
      break;
    case AblationKind::kContextInit:
      needs_training();
      c.few_shot_init = parse_context_init(value);
      c.zero_shot_init = c.few_shot_init;
      break;
  }
  c.ablation.reset();
  return c;
}

std::vector<AblationSetting> ablation_sweep(const RunConfig& base, const AblationConfig& ablation,
                                            const fs::path& out_dir) {
  if (ablation.grid.empty()) throw ConfigError("ablation.grid: expected a non-empty array");
  std::vector<AblationSetting> settings;
  std::string kind_dir = to_string(ablation.kind);
  std::transform(kind_dir.begin(), kind_dir.end(), kind_dir.begin(), [](unsigned char ch) { return std::tolower(ch); });
  std::ostringstream summary;
  summary << "setting,method,radius,sigma_used,certified_acc,clean_acc,mean_entropy_before,mean_entropy_after\n";
  for (const auto& value : ablation.grid) {
    const RunConfig config = apply_ablation(base, ablation.kind, value);
    const fs::path dir = out_dir / (kind_dir + "_" + value);
    log_event(LogLevel::kInfo, "ablation_setting", {{"kind", to_string(ablation.kind)}, {"value", value}});
    const auto records = run_certification(config, dir);
    AblationSetting setting{to_string(ablation.kind) + "=" + value, value, run_curves(config, records)};
    write_reports(config, setting.curves, dir);
    write_file(dir / "curve.csv", render_report(setting.curves, ReportFormat::kCsv));
    for (const auto& mc : setting.curves) {
      auto entropy = [](const std::optional<double>& v) {
        if (!v) return std::string();
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        return std::string(buf);
      };
      for (const auto& p : mc.envelope) {
        char line[256];
        std::snprintf(line, sizeof line, "%s,%s,%g,%g,%.6f,%.6f,%s,%s\n", setting.label.c_str(),
                      to_string(mc.method).c_str(), p.radius, p.sigma_used, p.certified_accuracy, p.clean_accuracy,
                      entropy(mc.mean_entropy_before).c_str(), entropy(mc.mean_entropy_after).c_str());
        summary << line;
      }
    }
    settings.push_back(std::move(setting));
  }
  write_file(out_dir / "ablation_summary.csv", summary.str());
  return settings;
}

OracleReport oracle_soundness(int inputs, const NoiseSpec& noise, int dim, std::uint64_t seed,
                              const SamplingOptions& options) {
  if (inputs < 1 || dim < 1) throw std::invalid_argument("oracle_soundness: inputs and dim must be >= 1");
  noise.validate();
  const auto start = Clock::now();
  Rng rng(seed);
  Eigen::VectorXd w(dim);
  fill_gaussian(w, 1.0, rng);
  const double b = 0.3;
  HalfSpaceClassifier f(w, b);
  std::uniform_real_distribution<double> distance(0.0, 3.0 * noise.sigma);
  std::bernoulli_distribution side(0.5);
  OracleReport report;
  report.inputs = inputs;
  report.max_excess = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < inputs; ++i) {
    Eigen::VectorXd x(dim);
    fill_gaussian(x, 1.0, rng);
    // Project onto the hyperplane, then step off it by the drawn distance.
    x -= ((w.dot(x) + b) / w.squaredNorm()) * w;
    const double d = distance(rng);
    x += (side(rng) ? d : -d) * w / w.norm();
    NoiseSpec spec = noise;
    spec.seed = mix64(seed, static_cast<std::uint64_t>(i));
    const CertifyOutcome out = certify(f, x, spec, options);
    const LinearOracle truth = linear_oracle(w, b, x, noise.sigma);
    if (out.abstained()) continue;
    ++report.non_abstain;
    if (out.label != truth.majority_class) ++report.wrong_class;
    if (out.radius > truth.true_radius + 1e-9) ++report.radius_exceeds_truth;
    if (out.radius >= 0.5 * truth.true_radius) ++report.radius_at_least_half;
    report.max_excess = std::max(report.max_excess, out.radius - truth.true_radius);
  }
  report.seconds = elapsed_ms(start) / 1000.0;
  return report;
}

}  // namespace certsmooth
