#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "certsmooth/base64.hpp"
#include "certsmooth/config.hpp"
#include "certsmooth/tensor_io.hpp"
#include "support.hpp"

using namespace certsmooth;
namespace fs = std::filesystem;

namespace {

std::string hex(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned char c : bytes) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string config_error(const std::string& text) {
  try {
    parse_run_config(nlohmann::json::parse(text), "/base");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("tensor record bytes are pinned") {
  std::ostringstream out;
  write_tensor(out, Tensor{{2}, {1.0f, -2.0f}});
  CHECK(hex(out.str()) == "43534d5401000101000000020000000000803f000000c0");
  std::ostringstream m;
  write_tensor(m, Tensor{{2, 1}, {0.5f, 3.0f}});
  CHECK(hex(m.str()) == "43534d540100010200000002000000010000000000003f00004040");
}

TEST_CASE("tensor records round-trip and concatenate") {
  std::stringstream buf;
  const Tensor a{{2, 3}, {1, 2, 3, 4, 5, 6}};
  const Tensor b{{4}, {-1.5f, 0.0f, 1e-30f, 7.25f}};
  write_tensor(buf, a);
  write_tensor(buf, b);
  Tensor t;
  REQUIRE(read_tensor(buf, t));
  CHECK(t == a);
  REQUIRE(read_tensor(buf, t));
  CHECK(t == b);
  CHECK_FALSE(read_tensor(buf, t));
}

TEST_CASE("malformed tensor records are rejected") {
  std::istringstream bad_magic(std::string("XSMT\x01\x00\x01\x00\x00\x00\x00", 11));
  Tensor t;
  CHECK_THROWS_AS(read_tensor(bad_magic, t), std::runtime_error);
  std::ostringstream out;
  write_tensor(out, Tensor{{3}, {1, 2, 3}});
  std::string truncated = out.str();
  truncated.pop_back();
  std::istringstream in(truncated);
  CHECK_THROWS_AS(read_tensor(in, t), std::runtime_error);
  std::string version = out.str();
  version[4] = 2;
  std::istringstream vin(version);
  CHECK_THROWS_AS(read_tensor(vin, t), std::runtime_error);
  CHECK_THROWS_AS(write_tensor(out, Tensor{{2, 2}, {1, 2, 3}}), std::invalid_argument);
}

TEST_CASE("model and prompt files round-trip at f32 precision") {
  const fs::path dir = testing::scratch_dir("io");
  ToyVlmConfig cfg;
  const ToyVlm vlm = make_random_vlm(cfg);
  save_vlm(dir / "m.csmt", vlm);
  const ToyVlm back = load_vlm(dir / "m.csmt");
  CHECK(back.image_proj.isApprox(vlm.image_proj, 1e-6));
  CHECK(back.template_context.rows() == vlm.template_context.rows());
  CHECK(back.image_proj == vlm.image_proj.cast<float>().cast<double>());

  const PromptState shared = init_prompts(vlm, 5, ContextInit::kRandom, 1);
  save_prompts(dir / "p.csmt", shared, vlm.num_classes());
  CHECK(load_prompts(dir / "p.csmt", vlm.num_classes()).context == shared.context.cast<float>().cast<double>());
  const PromptState per = init_prompts(vlm, 2, ContextInit::kRandom, 1, true);
  save_prompts(dir / "q.csmt", per, vlm.num_classes());
  const auto tensors = load_tensors(dir / "q.csmt");
  CHECK(tensors.front().shape == std::vector<std::uint32_t>{4, 2, 16});
  const PromptState per_back = load_prompts(dir / "q.csmt", vlm.num_classes());
  CHECK(per_back.per_class);
  CHECK(per_back.context == per.context.cast<float>().cast<double>());
  CHECK_THROWS(load_prompts(dir / "q.csmt", 3));
  fs::remove_all(dir);
}

TEST_CASE("labels and matrices convert through tensors") {
  const std::vector<int> labels{0, 3, 1, 2};
  CHECK(to_labels(to_tensor(std::span<const int>(labels))) == labels);
  RowMatrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  CHECK(to_matrix(to_tensor(Eigen::Ref<const RowMatrix>(m))) == m);
  CHECK_THROWS(to_labels(Tensor{{2}, {0.5f, 1.0f}}));
}

TEST_CASE("base64 vectors from RFC 4648") {
  auto enc = [](const std::string& s) {
    return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  CHECK(enc("") == "");
  CHECK(enc("f") == "Zg==");
  CHECK(enc("fo") == "Zm8=");
  CHECK(enc("foo") == "Zm9v");
  CHECK(enc("foob") == "Zm9vYg==");
  CHECK(enc("fooba") == "Zm9vYmE=");
  CHECK(enc("foobar") == "Zm9vYmFy");
  const auto d = base64_decode("Zm9vYmE=");
  CHECK(std::string(d.begin(), d.end()) == "fooba");
  CHECK_THROWS_AS(base64_decode("Zm9"), std::invalid_argument);
  CHECK_THROWS_AS(base64_decode("Zm9*"), std::invalid_argument);
  CHECK_THROWS_AS(base64_decode("Z=9v"), std::invalid_argument);
  CHECK_THROWS_AS(base64_decode("Zg==Zm8="), std::invalid_argument);
}

TEST_CASE("f32 base64 payload round-trips byte-exactly") {
  CHECK(encode_f32_le(std::vector<double>{1.0, -2.0}) == "AACAPwAAAMA=");
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 10.0);
  std::uniform_int_distribution<int> len(0, 300);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(static_cast<std::size_t>(len(rng)));
    for (auto& v : x) v = static_cast<float>(normal(rng));
    const auto back = decode_f32_le(encode_f32_le(x));
    REQUIRE(back.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::uint32_t a, b;
      const float fx = static_cast<float>(x[i]);
      std::memcpy(&a, &fx, 4);
      std::memcpy(&b, &back[i], 4);
      REQUIRE(a == b);
    }
  }
  CHECK_THROWS(decode_f32_le("AAA="));
}

TEST_CASE("config: defaults and relative paths") {
  const auto c = parse_run_config(nlohmann::json::parse(R"({"dataset": "data/test.json",
      "model": {"kind": "toy", "path": "m.csmt"}})"), "/base");
  CHECK(c.dataset->string() == "/base/data/test.json");
  CHECK(c.model.path.string() == "/base/m.csmt");
  CHECK(c.sigmas == std::vector<double>{0.1, 0.25, 0.5, 1.0});
  CHECK(c.noise.n == 10000);
  CHECK(c.noise.n0 == 100);
  CHECK(c.noise.alpha == 0.001);
  CHECK(c.model.tau == 100.0);
  CHECK(c.context_tokens == 5);
  CHECK(c.few_shot.shots_per_class == 16);
  CHECK(c.few_shot.epochs == 50);
  CHECK(c.few_shot.learning_rate == 0.002);
  CHECK(c.few_shot.batch_size == 16);
  CHECK(c.zero_shot.copies == 100);
  CHECK(c.zero_shot.steps == 1);
  CHECK(c.radius_grid == std::vector<double>{0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5});
  CHECK(c.methods == std::vector<Method>{Method::kNoPromptLearning});
}

TEST_CASE("config: schema violations name the field path") {
  CHECK(config_error(R"({"noise": {"sigmas": [0.1, 0.25, -1]}})") == "noise.sigmas[2]: expected a positive number");
  CHECK(config_error(R"({"noise": {"n": 0}})") == "noise.n: must be >= 1");
  CHECK(config_error(R"({"few_shot": {"epochs": "many"}})") == "few_shot.epochs: expected an integer");
  CHECK(config_error(R"({"zero_shot": {"stepz": 2}})") == "zero_shot.stepz: unknown field");
  CHECK(config_error(R"({"method": "fancy"})").rfind("method: unknown method", 0) == 0);
  CHECK(config_error(R"({"method": ["no_pl", 3]})") == "method[1]: expected a method name");
  CHECK(config_error(R"({"model": {"kind": "toy"}})") == "model.path: required field is missing");
  CHECK(config_error(R"({"model": {"kind": "gpu"}})") == "model.kind: expected toy, linear, constant or external");
  CHECK(config_error(R"({"ablation": {"kind": "SHOTS", "grid": [1, 0]}})") == "ablation.grid[1]: expected an integer >= 1");
  CHECK(config_error(R"({"ablation": {"kind": "CONTEXT_INIT", "grid": ["NOISY"]}})").rfind("ablation.grid[0]", 0) == 0);
  CHECK(config_error(R"({"report": {"formats": ["pdf"]}})") == "report.formats[0]: expected csv, json or text");
  CHECK(config_error(R"([1, 2])") == "<root>: expected an object");
  CHECK(config_error(R"({"synth": {"model": {"text_gain": 0}}})") == "synth.model.text_gain: expected a positive number");
}

TEST_CASE("config: to_json round-trips") {
  RunConfig c = parse_run_config(nlohmann::json::parse(R"({
      "seed": 9, "workers": 3, "dataset": "t.json", "train_dataset": "tr.json",
      "model": {"kind": "toy", "path": "m.csmt", "tau": 50},
      "method": ["combined", "no_pl"], "num_samples": 20,
      "noise": {"sigmas": [0.25], "n0": 10, "n": 500, "alpha": 0.01, "batch_size": 64},
      "prompts": {"context_tokens": 3, "per_class": true, "few_shot_init": "TEMPLATE"},
      "few_shot": {"shots_per_class": 4, "epochs": 2, "momentum": 0.5},
      "zero_shot": {"copies": 8, "steps": 2, "learning_rate": 0.01},
      "radius_grid": [0, 0.5], "report": {"formats": ["csv"]},
      "ablation": {"kind": "OPTIMIZER_STEPS", "grid": [1, 8]}})"),
                                 "/base");
  const auto doc = nlohmann::json::parse(to_json(c, "/base").dump());
  const RunConfig back = parse_run_config(doc, "/base");
  CHECK(to_json(back, "/base") == to_json(c, "/base"));
  CHECK(back.methods == c.methods);
  CHECK(back.per_class_context);
  CHECK(back.ablation->grid == std::vector<std::string>{"1", "8"});
  CHECK(doc.at("dataset") == "t.json");
}

TEST_CASE("dataset manifest paths resolve against the manifest directory") {
  const fs::path dir = testing::scratch_dir("manifest");
  fs::create_directories(dir / "sub");
  write_text(dir / "sub" / "d.json",
             R"({"name": "d", "classes": ["a", "b"], "template": "x {}", "tensor_file": "i.csmt", "labels_file": "l.csmt"})");
  const auto m = load_manifest(dir / "sub" / "d.json");
  CHECK(m.tensor_file == dir / "sub" / "i.csmt");
  CHECK(m.classes == std::vector<std::string>{"a", "b"});
  write_text(dir / "bad.json", R"({"name": "d", "classes": ["a"], "tensor_file": "i", "labels_file": "l"})");
  CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_manifest(dir / "missing.json"), ConfigError);
  fs::remove_all(dir);
}
