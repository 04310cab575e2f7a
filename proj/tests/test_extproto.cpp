#include <doctest.h>

#include <chrono>
#include <random>

#include "certsmooth/classifiers.hpp"
#include "certsmooth/extproto.hpp"
#include "certsmooth/smoothing.hpp"
#include "certsmooth/tensor_io.hpp"
#include "support.hpp"

using namespace certsmooth;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir = testing::scratch_dir("extproto");
  RowMatrix weights;
  RowMatrix batch;

  Fixture() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal;
    weights.resize(3, 6);
    for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = normal(rng);
    weights = weights.cast<float>().cast<double>();
    const Tensor t = to_tensor(Eigen::Ref<const RowMatrix>(weights));
    save_tensors(dir / "w.csmt", std::span(&t, 1));
    batch.resize(1000, 6);
    for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = normal(rng);
  }
  ~Fixture() { fs::remove_all(dir); }

  std::string command(const std::string& mode) const {
    return std::string(CERTSMOOTH_FAKE_ADAPTER) + " " + (dir / "w.csmt").string() + " " + mode;
  }
  ExternalOptions options() const {
    ExternalOptions o;
    o.input_dim = 6;
    o.max_rows_per_request = 100;
    o.response_timeout = std::chrono::milliseconds(10'000);
    return o;
  }
  std::vector<int> in_process() const {
    LinearArgmaxClassifier local(weights, Eigen::VectorXd::Zero(3), true);
    return local.evaluate(batch);
  }
};

std::string protocol_failure(const Fixture& f, const std::string& mode) {
  try {
    auto ext = spawn_external(f.command(mode), f.options());
    ext->evaluate(f.batch);
  } catch (const ProtocolError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("external labels equal the in-process f32 classifier") {
  Fixture f;
  auto ext = spawn_external(f.command("ok"), f.options());
  CHECK(ext->num_classes() == 3);
  CHECK(ext->evaluate(f.batch) == f.in_process());
  const auto expected = f.in_process();
  CHECK(ext->evaluate(f.batch.topRows(7)) == std::vector<int>(expected.begin(), expected.begin() + 7));
  CHECK(ext->shutdown() == 0);
  CHECK(ext->shutdown() == 0);
}

TEST_CASE("out-of-order responses are matched by id") {
  Fixture f;
  auto ext = spawn_external(f.command("reverse"), f.options());
  CHECK(ext->evaluate(f.batch) == f.in_process());
  CHECK(ext->shutdown() == 0);
}

TEST_CASE("certification through the protocol matches in-process certification") {
  Fixture f;
  auto ext = spawn_external(f.command("ok"), f.options());
  LinearArgmaxClassifier local(f.weights, Eigen::VectorXd::Zero(3), true);
  NoiseSpec noise;
  noise.sigma = 0.5;
  noise.n0 = 50;
  noise.n = 2000;
  noise.seed = 17;
  const Eigen::VectorXd x = f.batch.row(0).transpose();
  const auto remote = certify(*ext, x, noise);
  const auto ours = certify(local, x, noise);
  CHECK(remote.label == ours.label);
  CHECK(remote.radius == ours.radius);
  CHECK(remote.counts == ours.counts);
  ext->shutdown();
}

TEST_CASE("shutdown returns the child's exit status promptly") {
  Fixture f;
  auto ext = spawn_external(f.command("ok"), f.options());
  const auto start = std::chrono::steady_clock::now();
  CHECK(ext->shutdown() == 0);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
  CHECK_THROWS_AS(ext->evaluate(f.batch), ProtocolError);
}

TEST_CASE("a malformed response reports its byte offset") {
  Fixture f;
  const std::string msg = protocol_failure(f, "malformed");
  // Offsets count from the start of the child's stdout: hello_ok and the
  // first response precede the bad frame, whose id value starts 25 bytes in.
  const auto labels = f.in_process();
  const nlohmann::json hello = {{"kind", "hello_ok"}, {"version", 1}, {"num_classes", 3}};
  const nlohmann::json first = {{"kind", "labels"}, {"id", 1},
                                {"labels", std::vector<int>(labels.begin(), labels.begin() + 100)}};
  const std::size_t expected = hello.dump().size() + 1 + first.dump().size() + 1 + 25;
  INFO(msg << " expected offset " << expected);
  CHECK(msg.find("malformed response at byte offset " + std::to_string(expected)) != std::string::npos);
}

TEST_CASE("protocol violations are reported") {
  Fixture f;
  CHECK(protocol_failure(f, "duplicate").find("duplicate response for request 1") != std::string::npos);
  const std::string crash = protocol_failure(f, "crash");
  CHECK(crash.find("child closed its stdout") != std::string::npos);
  CHECK(crash.find("simulated crash in infer") != std::string::npos);
  try {
    spawn_external(f.command("bad-version"), f.options());
    FAIL("expected a version mismatch");
  } catch (const ProtocolError& e) {
    CHECK(std::string(e.what()).find("protocol version mismatch") != std::string::npos);
  }
  CHECK_THROWS_AS(spawn_external("exit 7", f.options()), ProtocolError);
}

TEST_CASE("batches with the wrong width are rejected before sending") {
  Fixture f;
  auto ext = spawn_external(f.command("ok"), f.options());
  CHECK_THROWS_AS(ext->evaluate(RowMatrix::Zero(2, 5)), std::invalid_argument);
  CHECK(ext->shutdown() == 0);
}

TEST_CASE("a silent child times out at the handshake") {
  Fixture f;
  ExternalOptions o = f.options();
  o.handshake_timeout = std::chrono::milliseconds(200);
  o.shutdown_timeout = std::chrono::milliseconds(200);
  const auto start = std::chrono::steady_clock::now();
  try {
    spawn_external("echo 'loading weights' >&2; sleep 30", o);
    FAIL("expected a handshake timeout");
  } catch (const ProtocolError& e) {
    const std::string msg = e.what();
    INFO(msg);
    CHECK(msg.find("timed out") != std::string::npos);
    CHECK(msg.find("loading weights") != std::string::npos);
  }
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(5));
}
