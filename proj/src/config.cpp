#include "certsmooth/config.hpp"

#include <fstream>
#include <set>

namespace certsmooth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Strict object view: every key must be consumed, unknown keys are errors.
class Section {
 public:
  Section(const json& value, std::string path) : value_(value), path_(std::move(path)) {
    if (!value_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
  }

  bool has(const std::string& key) const { return value_.contains(key); }
  std::string path(const std::string& key) const { return join(path_, key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return value_.at(key);
  }

  Section section(const std::string& key) { return Section(raw(key), path(key)); }

  double number(const std::string& key, double fallback, bool positive = false) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number()) fail(path(key), "expected a number");
    const double d = v.get<double>();
    if (positive && !(d > 0.0)) fail(path(key), "expected a positive number");
    return d;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t min_value) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number_integer()) fail(path(key), "expected an integer");
    const auto i = v.get<std::int64_t>();
    if (i < min_value) fail(path(key), "must be >= " + std::to_string(min_value));
    return i;
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number_unsigned()) fail(path(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) fail(path(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_string()) fail(path(key), "expected a string");
    return v.get<std::string>();
  }

  std::string required_string(const std::string& key) {
    if (!has(key)) fail(path(key), "required field is missing");
    return string(key, {});
  }

  std::vector<double> positive_numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_array() || v.empty()) fail(path(key), "expected a non-empty array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || !(v[i].get<double>() > 0.0)) {
        fail(path(key) + "[" + std::to_string(i) + "]", "expected a positive number");
      }
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key, std::vector<std::string> fallback) {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_array()) fail(path(key), "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) fail(path(key) + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (const auto& item : value_.items()) {
      if (!used_.count(item.key())) fail(path(item.key()), "unknown field");
    }
  }

 private:
  const json& value_;
  std::string path_;
  std::set<std::string> used_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void parse_toy_model(Section s, ToyVlmConfig& m) {
  m.embed_dim = static_cast<int>(s.integer("embed_dim", m.embed_dim, 2));
  m.token_dim = static_cast<int>(s.integer("token_dim", m.token_dim, 1));
  m.template_tokens = static_cast<int>(s.integer("template_tokens", m.template_tokens, 1));
  m.text_gain = s.number("text_gain", m.text_gain, true);
  m.shared_bias = s.number("shared_bias", m.shared_bias);
  m.norm_spread = s.number("norm_spread", m.norm_spread);
  m.seed = s.seed("seed", m.seed);
  s.finish();
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::kNoPromptLearning: return "no_pl";
    case Method::kFewShot: return "few_shot";
    case Method::kZeroShot: return "zero_shot";
    case Method::kCombined: return "combined";
  }
  return "?";
}

std::string display_name(Method method) {
  switch (method) {
    case Method::kNoPromptLearning: return "Zero-shot (No PL)";
    case Method::kFewShot: return "Few-shot prompts";
    case Method::kZeroShot: return "Test-time prompts";
    case Method::kCombined: return "Few-shot + test-time";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::kNoPromptLearning, Method::kFewShot, Method::kZeroShot, Method::kCombined}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method \"" + name + "\" (expected no_pl, few_shot, zero_shot or combined)");
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::kShots: return "SHOTS";
    case AblationKind::kContextTokens: return "CONTEXT_TOKENS";
    case AblationKind::kOptimizerSteps: return "OPTIMIZER_STEPS";
    case AblationKind::kContextInit: return "CONTEXT_INIT";
  }
  return "?";
}

AblationKind parse_ablation_kind(const std::string& name) {
  for (auto k : {AblationKind::kShots, AblationKind::kContextTokens, AblationKind::kOptimizerSteps,
                 AblationKind::kContextInit}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown ablation kind \"" + name + "\"");
}

ContextInit parse_context_init(const std::string& name) {
  if (name == "RANDOM") return ContextInit::kRandom;
  if (name == "TEMPLATE") return ContextInit::kTemplate;
  throw ConfigError("unknown context init \"" + name + "\" (expected RANDOM or TEMPLATE)");
}

std::string to_string(ContextInit init) { return init == ContextInit::kRandom ? "RANDOM" : "TEMPLATE"; }

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open dataset manifest");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  Section s(doc, "");
  DatasetManifest m;
  try {
    m.name = s.required_string("name");
    m.classes = s.strings("classes", {});
    if (m.classes.size() < 2) Section::fail("classes", "need at least two class names");
    m.prompt_template = s.string("template", "{}");
    if (m.prompt_template.find("{}") == std::string::npos) Section::fail("template", "missing {} placeholder");
    m.tensor_file = resolve(path.parent_path(), s.required_string("tensor_file"));
    m.labels_file = resolve(path.parent_path(), s.required_string("labels_file"));
    s.finish();
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  nlohmann::ordered_json doc;
  doc["name"] = m.name;
  doc["classes"] = m.classes;
  doc["template"] = m.prompt_template;
  doc["tensor_file"] = m.tensor_file.filename().string();
  doc["labels_file"] = m.labels_file.filename().string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  Section root(doc, "");
  c.seed = root.seed("seed", c.seed);
  c.workers = static_cast<int>(root.integer("workers", c.workers, 1));
  if (root.has("dataset")) c.dataset = resolve(base_dir, root.string("dataset", {}));
  if (root.has("train_dataset")) c.train_dataset = resolve(base_dir, root.string("train_dataset", {}));
  if (root.has("num_samples")) c.num_samples = static_cast<int>(root.integer("num_samples", 0, 1));

  if (root.has("model")) {
    Section m = root.section("model");
    const std::string kind = m.string("kind", "toy");
    if (kind == "toy") {
      c.model.kind = ModelKind::kToy;
      c.model.path = resolve(base_dir, m.required_string("path"));
      c.model.tau = m.number("tau", c.model.tau, true);
    } else if (kind == "linear") {
      c.model.kind = ModelKind::kLinear;
      c.model.path = resolve(base_dir, m.required_string("path"));
      if (m.has("bias")) {
        const auto& b = m.raw("bias");
        if (!b.is_array()) Section::fail(m.path("bias"), "expected an array of numbers");
        for (std::size_t i = 0; i < b.size(); ++i) {
          if (!b[i].is_number()) Section::fail(m.path("bias") + "[" + std::to_string(i) + "]", "expected a number");
          c.model.bias.push_back(b[i].get<double>());
        }
      }
      c.model.float32_inputs = m.boolean("float32_inputs", false);
    } else if (kind == "constant") {
      c.model.kind = ModelKind::kConstant;
      c.model.num_classes = static_cast<int>(m.integer("num_classes", 2, 2));
      c.model.input_dim = static_cast<int>(m.integer("input_dim", 0, 0));
      c.model.label = static_cast<int>(m.integer("label", 0, 0));
      if (c.model.label >= c.model.num_classes) Section::fail(m.path("label"), "must be < num_classes");
    } else if (kind == "external") {
      c.model.kind = ModelKind::kExternal;
      c.model.command = m.required_string("command");
      c.model.input_dim = static_cast<int>(m.integer("input_dim", 0, 1));
      if (!m.has("input_dim")) Section::fail(m.path("input_dim"), "required field is missing");
    } else {
      Section::fail(m.path("kind"), "expected toy, linear, constant or external");
    }
    m.finish();
  }

  if (root.has("method")) {
    const auto& v = root.raw("method");
    auto parse_one = [&](const json& item, const std::string& where) {
      if (!item.is_string()) Section::fail(where, "expected a method name");
      try {
        return parse_method(item.get<std::string>());
      } catch (const ConfigError& e) {
        Section::fail(where, e.what());
      }
    };
    c.methods.clear();
    if (v.is_array()) {
      if (v.empty()) Section::fail("method", "expected at least one method");
      for (std::size_t i = 0; i < v.size(); ++i) c.methods.push_back(parse_one(v[i], "method[" + std::to_string(i) + "]"));
    } else {
      c.methods.push_back(parse_one(v, "method"));
    }
  }

  if (root.has("noise")) {
    Section n = root.section("noise");
    c.sigmas = n.positive_numbers("sigmas", c.sigmas);
    c.noise.n0 = n.integer("n0", c.noise.n0, 1);
    c.noise.n = n.integer("n", c.noise.n, 1);
    c.noise.alpha = n.number("alpha", c.noise.alpha, true);
    if (!(c.noise.alpha < 1.0)) Section::fail(n.path("alpha"), "must lie in (0, 1)");
    c.batch_size = n.integer("batch_size", c.batch_size, 1);
    n.finish();
  }

  if (root.has("prompts")) {
    Section p = root.section("prompts");
    c.context_tokens = static_cast<int>(p.integer("context_tokens", c.context_tokens, 1));
    c.per_class_context = p.boolean("per_class", c.per_class_context);
    if (p.has("file")) c.prompts_file = resolve(base_dir, p.string("file", {}));
    try {
      c.few_shot_init = parse_context_init(p.string("few_shot_init", to_string(c.few_shot_init)));
      c.zero_shot_init = parse_context_init(p.string("zero_shot_init", to_string(c.zero_shot_init)));
    } catch (const ConfigError& e) {
      Section::fail(p.path("*_init"), e.what());
    }
    p.finish();
  }

  if (root.has("few_shot")) {
    Section f = root.section("few_shot");
    auto& fc = c.few_shot;
    fc.shots_per_class = static_cast<int>(f.integer("shots_per_class", fc.shots_per_class, 1));
    fc.epochs = static_cast<int>(f.integer("epochs", fc.epochs, 0));
    fc.learning_rate = f.number("learning_rate", fc.learning_rate);
    if (fc.learning_rate < 0.0) Section::fail(f.path("learning_rate"), "must be >= 0");
    fc.batch_size = static_cast<int>(f.integer("batch_size", fc.batch_size, 1));
    fc.noise_draws = static_cast<int>(f.integer("noise_draws", fc.noise_draws, 1));
    fc.momentum = f.number("momentum", fc.momentum);
    if (fc.momentum < 0.0 || fc.momentum >= 1.0) Section::fail(f.path("momentum"), "must lie in [0, 1)");
    fc.sigma_range = f.positive_numbers("sigma_range", fc.sigma_range);
    f.finish();
  }

  if (root.has("zero_shot")) {
    Section z = root.section("zero_shot");
    auto& zc = c.zero_shot;
    zc.copies = static_cast<int>(z.integer("copies", zc.copies, 1));
    zc.steps = static_cast<int>(z.integer("steps", zc.steps, 0));
    zc.learning_rate = z.number("learning_rate", zc.learning_rate);
    if (zc.learning_rate < 0.0) Section::fail(z.path("learning_rate"), "must be >= 0");
    zc.sigma_range = z.positive_numbers("sigma_range", zc.sigma_range);
    z.finish();
  }

  if (root.has("radius_grid")) {
    const auto& v = root.raw("radius_grid");
    if (!v.is_array() || v.empty()) Section::fail("radius_grid", "expected a non-empty array of numbers");
    c.radius_grid.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || v[i].get<double>() < 0.0) {
        Section::fail("radius_grid[" + std::to_string(i) + "]", "expected a non-negative number");
      }
      c.radius_grid.push_back(v[i].get<double>());
    }
  }

  if (root.has("report")) {
    Section r = root.section("report");
    c.report_formats = r.strings("formats", c.report_formats);
    for (std::size_t i = 0; i < c.report_formats.size(); ++i) {
      const auto& f = c.report_formats[i];
      if (f != "csv" && f != "json" && f != "text") {
        Section::fail(r.path("formats") + "[" + std::to_string(i) + "]", "expected csv, json or text");
      }
    }
    r.finish();
  }

  if (root.has("synth")) {
    Section s = root.section("synth");
    auto& sc = c.synth;
    sc.num_classes = static_cast<int>(s.integer("classes", sc.num_classes, 2));
    sc.image_dim = static_cast<int>(s.integer("image_dim", sc.image_dim, 1));
    sc.train_per_class = static_cast<int>(s.integer("train_per_class", sc.train_per_class, 1));
    sc.test_per_class = static_cast<int>(s.integer("test_per_class", sc.test_per_class, 1));
    sc.separation = s.number("separation", sc.separation, true);
    sc.seed = s.seed("seed", sc.seed);
    sc.class_names = s.strings("class_names", {});
    if (!sc.class_names.empty() && static_cast<int>(sc.class_names.size()) != sc.num_classes) {
      Section::fail(s.path("class_names"), "must list exactly `classes` names");
    }
    sc.prompt_template = s.string("template", sc.prompt_template);
    if (sc.prompt_template.find("{}") == std::string::npos) Section::fail(s.path("template"), "missing {} placeholder");
    if (s.has("model")) parse_toy_model(s.section("model"), sc.model);
    s.finish();
  }

  if (root.has("ablation")) {
    Section a = root.section("ablation");
    AblationConfig ab;
    try {
      ab.kind = parse_ablation_kind(a.required_string("kind"));
    } catch (const ConfigError& e) {
      Section::fail(a.path("kind"), e.what());
    }
    if (!a.has("grid")) Section::fail(a.path("grid"), "required field is missing");
    const auto& g = a.raw("grid");
    if (!g.is_array() || g.empty()) Section::fail(a.path("grid"), "expected a non-empty array");
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::string where = a.path("grid") + "[" + std::to_string(i) + "]";
      if (ab.kind == AblationKind::kContextInit) {
        if (!g[i].is_string()) Section::fail(where, "expected RANDOM or TEMPLATE");
        try {
          parse_context_init(g[i].get<std::string>());
        } catch (const ConfigError& e) {
          Section::fail(where, e.what());
        }
        ab.grid.push_back(g[i].get<std::string>());
      } else {
        const std::int64_t min_value = ab.kind == AblationKind::kOptimizerSteps ? 0 : 1;
        if (!g[i].is_number_integer() || g[i].get<std::int64_t>() < min_value) {
          Section::fail(where, "expected an integer >= " + std::to_string(min_value));
        }
        ab.grid.push_back(std::to_string(g[i].get<std::int64_t>()));
      }
    }
    a.finish();
    c.ablation = ab;
  }
  root.finish();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(doc, fs::absolute(path).parent_path());
}

nlohmann::ordered_json to_json(const RunConfig& c, const fs::path& base_dir) {
  using oj = nlohmann::ordered_json;
  auto rel = [&](const fs::path& p) {
    const auto r = p.lexically_relative(base_dir);
    return (r.empty() || *r.begin() == "..") ? p.string() : r.string();
  };
  oj doc;
  doc["seed"] = c.seed;
  doc["workers"] = c.workers;
  if (c.dataset) doc["dataset"] = rel(*c.dataset);
  if (c.train_dataset) doc["train_dataset"] = rel(*c.train_dataset);
  if (c.num_samples) doc["num_samples"] = *c.num_samples;

  oj model;
  switch (c.model.kind) {
    case ModelKind::kToy:
      model["kind"] = "toy";
      model["path"] = rel(c.model.path);
      model["tau"] = c.model.tau;
      break;
    case ModelKind::kLinear:
      model["kind"] = "linear";
      model["path"] = rel(c.model.path);
      model["bias"] = c.model.bias;
      model["float32_inputs"] = c.model.float32_inputs;
      break;
    case ModelKind::kConstant:
      model["kind"] = "constant";
      model["num_classes"] = c.model.num_classes;
      model["input_dim"] = c.model.input_dim;
      model["label"] = c.model.label;
      break;
    case ModelKind::kExternal:
      model["kind"] = "external";
      model["command"] = c.model.command;
      model["input_dim"] = c.model.input_dim;
      break;
  }
  doc["model"] = model;

  oj methods = oj::array();
  for (auto m : c.methods) methods.push_back(to_string(m));
  doc["method"] = methods;

  doc["noise"] = {{"sigmas", c.sigmas}, {"n0", c.noise.n0}, {"n", c.noise.n},
                  {"alpha", c.noise.alpha}, {"batch_size", c.batch_size}};
  oj prompts = {{"context_tokens", c.context_tokens},
                {"per_class", c.per_class_context},
                {"few_shot_init", to_string(c.few_shot_init)},
                {"zero_shot_init", to_string(c.zero_shot_init)}};
  if (c.prompts_file) prompts["file"] = rel(*c.prompts_file);
  doc["prompts"] = prompts;
  doc["few_shot"] = {{"shots_per_class", c.few_shot.shots_per_class},
                     {"epochs", c.few_shot.epochs},
                     {"learning_rate", c.few_shot.learning_rate},
                     {"batch_size", c.few_shot.batch_size},
                     {"noise_draws", c.few_shot.noise_draws},
                     {"momentum", c.few_shot.momentum},
                     {"sigma_range", c.few_shot.sigma_range}};
  doc["zero_shot"] = {{"copies", c.zero_shot.copies},
                      {"steps", c.zero_shot.steps},
                      {"learning_rate", c.zero_shot.learning_rate},
                      {"sigma_range", c.zero_shot.sigma_range}};
  doc["radius_grid"] = c.radius_grid;
  doc["report"] = {{"formats", c.report_formats}};

  const auto& s = c.synth;
  oj synth = {{"classes", s.num_classes},
              {"image_dim", s.image_dim},
              {"train_per_class", s.train_per_class},
              {"test_per_class", s.test_per_class},
              {"separation", s.separation},
              {"seed", s.seed}};
  if (!s.class_names.empty()) synth["class_names"] = s.class_names;
  synth["template"] = s.prompt_template;
  synth["model"] = {{"embed_dim", s.model.embed_dim},
                    {"token_dim", s.model.token_dim},
                    {"template_tokens", s.model.template_tokens},
                    {"text_gain", s.model.text_gain},
                    {"shared_bias", s.model.shared_bias},
                    {"norm_spread", s.model.norm_spread},
                    {"seed", s.model.seed}};
  doc["synth"] = synth;

  if (c.ablation) {
    oj grid = oj::array();
    for (const auto& g : c.ablation->grid) {
      if (c.ablation->kind == AblationKind::kContextInit) {
        grid.push_back(g);
      } else {
        grid.push_back(std::stoll(g));
      }
    }
    doc["ablation"] = {{"kind", to_string(c.ablation->kind)}, {"grid", grid}};
  }
  return doc;
}

}  // namespace certsmooth
