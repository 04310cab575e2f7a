// Protocol server used by the tests: a linear argmax classifier read from a
// tensor file, with optional misbehaviour.
//
//   fake_adapter <weights.csmt> [ok|reverse|malformed|duplicate|bad-version|crash]

#include <poll.h>
#include <unistd.h>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "certsmooth/base64.hpp"
#include "certsmooth/classifiers.hpp"
#include "certsmooth/tensor_io.hpp"

using namespace certsmooth;
using nlohmann::json;

namespace {

bool input_pending() {
  pollfd pfd{STDIN_FILENO, POLLIN, 0};
  return ::poll(&pfd, 1, 20) > 0;
}

void emit(const json& frame) { std::cout << frame.dump() << '\n' << std::flush; }

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: fake_adapter <weights.csmt> [mode]\n";
    return 64;
  }
  const std::string mode = argc > 2 ? argv[2] : "ok";
  const auto tensors = load_tensors(argv[1]);
  const RowMatrix weights = to_matrix(tensors.at(0));
  LinearArgmaxClassifier classifier(weights, Eigen::VectorXd::Zero(weights.rows()));

  std::vector<json> held;
  auto flush_held = [&] {
    for (auto it = held.rbegin(); it != held.rend(); ++it) emit(*it);
    held.clear();
  };

  std::string line;
  int served = 0;
  while (std::getline(std::cin, line)) {
    const json frame = json::parse(line);
    const std::string kind = frame.at("kind");
    if (kind == "hello") {
      emit({{"kind", "hello_ok"}, {"version", mode == "bad-version" ? 2 : 1}, {"num_classes", weights.rows()}});
    } else if (kind == "shutdown") {
      flush_held();
      return 0;
    } else if (kind == "infer") {
      if (mode == "crash") {
        std::cerr << "fake adapter: simulated crash in infer\n" << std::flush;
        return 3;
      }
      const auto shape = frame.at("shape").get<std::vector<long>>();
      const auto values = decode_f32_le(frame.at("data_b64").get<std::string>());
      RowMatrix batch(shape[0], shape[1]);
      for (long i = 0; i < shape[0] * shape[1]; ++i) batch.data()[i] = values[static_cast<std::size_t>(i)];
      const json response = {{"kind", "labels"}, {"id", frame.at("id")}, {"labels", classifier.evaluate(batch)}};
      ++served;
      if (mode == "malformed" && served == 2) {
        std::cout << "{\"kind\": \"labels\", \"id\": oops}\n" << std::flush;
        continue;
      }
      if (mode == "reverse") {
        held.push_back(response);
        if (!input_pending()) flush_held();
        continue;
      }
      emit(response);
      if (mode == "duplicate") emit(response);
    } else {
      emit({{"kind", "error"}, {"message", "unknown kind " + kind}});
    }
  }
  return 0;
}
