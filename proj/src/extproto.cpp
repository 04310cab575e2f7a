#include "certsmooth/extproto.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <json.hpp>
#include <set>
#include <span>

#include "certsmooth/base64.hpp"

namespace certsmooth {

namespace {

constexpr std::size_t kStderrTailBytes = 2048;

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return static_cast<int>(std::max<std::int64_t>(0, left.count()));
}

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

}  // namespace

std::unique_ptr<ExternalClassifier> spawn_external(const std::string& command,
                                                   const ExternalOptions& options) {
  if (options.input_dim < 1) throw std::invalid_argument("external classifier: input_dim must be >= 1");
  if (options.max_outstanding < 1 || options.max_rows_per_request < 1) {
    throw std::invalid_argument("external classifier: invalid pipelining options");
  }
  std::unique_ptr<ExternalClassifier> client(new ExternalClassifier(options));
  client->launch(command);
  client->handshake();
  return client;
}

void ExternalClassifier::launch(const std::string& command) {
  // Writes to a dead child must surface as EPIPE, not kill the engine.
  ::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2];
  int out_pipe[2];
  int err_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0 ||
      ::pipe2(err_pipe, O_CLOEXEC) != 0) {
    throw ProtocolError(std::string("pipe: ") + std::strerror(errno));
  }
  pid_ = ::fork();
  if (pid_ < 0) throw ProtocolError(std::string("fork: ") + std::strerror(errno));
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(err_pipe[1], STDERR_FILENO);
    // Own process group, so a kill reaches every process of a compound command.
    ::setpgid(0, 0);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid_, pid_);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  stdin_fd_ = in_pipe[1];
  stdout_fd_ = out_pipe[0];
  stderr_fd_ = err_pipe[0];
  stderr_reader_ = std::thread([this] {
    char chunk[512];
    for (;;) {
      const ssize_t n = ::read(stderr_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      std::lock_guard lock(stderr_mutex_);
      stderr_tail_.append(chunk, static_cast<std::size_t>(n));
      if (stderr_tail_.size() > kStderrTailBytes) {
        stderr_tail_.erase(0, stderr_tail_.size() - kStderrTailBytes);
      }
    }
  });
}

ExternalClassifier::~ExternalClassifier() {
  try {
    shutdown();
  } catch (...) {
  }
}

std::string ExternalClassifier::stderr_tail() const {
  std::lock_guard lock(stderr_mutex_);
  return stderr_tail_;
}

void ExternalClassifier::fail(const std::string& message) {
  broken_ = true;
  std::string full = "external classifier: " + message;
  // Give the child a moment to flush its last words.
  if (pid_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  const std::string tail = stderr_tail();
  if (!tail.empty()) full += "\n--- child stderr (tail) ---\n" + tail;
  throw ProtocolError(full);
}

void ExternalClassifier::send_line(const std::string& line) {
  std::string data = line;
  data += '\n';
  std::size_t written = 0;
  while (written < data.size()) {
    const ssize_t n = ::write(stdin_fd_, data.data() + written, data.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(errno == EPIPE ? "broken pipe while writing a request" : std::string("write: ") + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
}

std::string ExternalClassifier::read_line(Clock::time_point deadline, std::uint64_t& offset) {
  for (;;) {
    const auto newline = read_buffer_.find('\n');
    if (newline != std::string::npos) {
      std::string line = read_buffer_.substr(0, newline);
      offset = stream_offset_;
      read_buffer_.erase(0, newline + 1);
      stream_offset_ += newline + 1;
      return line;
    }
    pollfd pfd{stdout_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, remaining_ms(deadline));
    if (ready < 0) {
      if (errno == EINTR) continue;
      fail(std::string("poll: ") + std::strerror(errno));
    }
    if (ready == 0) fail("timed out waiting for a response");
    char chunk[65536];
    const ssize_t n = ::read(stdout_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(std::string("read: ") + std::strerror(errno));
    }
    if (n == 0) fail("child closed its stdout (exited?)");
    read_buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

namespace {

nlohmann::json parse_frame(const std::string& line, std::uint64_t offset, std::string& error) {
  try {
    auto frame = nlohmann::json::parse(line);
    if (!frame.is_object() || !frame.contains("kind") || !frame["kind"].is_string()) {
      error = "malformed response at byte offset " + std::to_string(offset) +
              ": frame is not an object with a string \"kind\"";
      return {};
    }
    return frame;
  } catch (const nlohmann::json::parse_error& e) {
    const std::uint64_t at = offset + (e.byte > 0 ? e.byte - 1 : 0);
    error = "malformed response at byte offset " + std::to_string(at) + ": " + e.what();
    return {};
  }
}

}  // namespace

void ExternalClassifier::handshake() {
  nlohmann::ordered_json hello;
  hello["kind"] = "hello";
  hello["version"] = kProtocolVersion;
  send_line(hello.dump());
  std::uint64_t offset = 0;
  const std::string line = read_line(Clock::now() + options_.handshake_timeout, offset);
  std::string error;
  const auto frame = parse_frame(line, offset, error);
  if (!error.empty()) fail("handshake: " + error);
  const auto kind = frame["kind"].get<std::string>();
  if (kind == "error") {
    fail("handshake rejected: " + frame.value("message", std::string("(no message)")));
  }
  if (kind != "hello_ok") fail("handshake: expected hello_ok, got \"" + kind + "\"");
  if (frame.contains("version") && frame["version"] != kProtocolVersion) {
    fail("protocol version mismatch: engine speaks " + std::to_string(kProtocolVersion) + ", child answered " +
         frame["version"].dump());
  }
  if (!frame.contains("num_classes") || !frame["num_classes"].is_number_unsigned() ||
      frame["num_classes"].get<std::uint64_t>() < 2) {
    fail("handshake: hello_ok must carry num_classes >= 2");
  }
  num_classes_ = frame["num_classes"].get<int>();
}

std::vector<int> ExternalClassifier::evaluate(const Eigen::Ref<const RowMatrix>& batch) {
  if (broken_) throw ProtocolError("external classifier: connection is unusable after an earlier failure");
  if (exit_status_) throw ProtocolError("external classifier: already shut down");
  if (batch.cols() != options_.input_dim) {
    throw std::invalid_argument("external classifier: batch has " + std::to_string(batch.cols()) +
                                " columns, expected " + std::to_string(options_.input_dim));
  }
  const auto rows = static_cast<std::int64_t>(batch.rows());
  const std::int64_t chunk_rows = options_.max_rows_per_request;
  const std::int64_t chunks = (rows + chunk_rows - 1) / chunk_rows;
  std::vector<int> labels(static_cast<std::size_t>(rows), -1);

  std::map<std::uint64_t, std::int64_t> in_flight;  // id -> chunk
  std::set<std::uint64_t> completed;
  std::int64_t next_chunk = 0;
  std::vector<double> values;

  auto send_chunk = [&](std::int64_t c) {
    const std::int64_t first = c * chunk_rows;
    const std::int64_t count = std::min(chunk_rows, rows - first);
    values.resize(static_cast<std::size_t>(count * batch.cols()));
    for (std::int64_t r = 0; r < count; ++r) {
      for (Eigen::Index j = 0; j < batch.cols(); ++j) {
        values[static_cast<std::size_t>(r * batch.cols() + j)] = batch(first + r, j);
      }
    }
    const std::uint64_t id = next_id_++;
    nlohmann::ordered_json request;
    request["kind"] = "infer";
    request["id"] = id;
    request["shape"] = {static_cast<std::uint32_t>(count), static_cast<std::uint32_t>(batch.cols())};
    request["data_b64"] = encode_f32_le(values);
    send_line(request.dump());
    in_flight.emplace(id, c);
  };

  while (next_chunk < chunks || !in_flight.empty()) {
    while (next_chunk < chunks && static_cast<int>(in_flight.size()) < options_.max_outstanding) {
      send_chunk(next_chunk++);
    }
    std::uint64_t offset = 0;
    const std::string line = read_line(Clock::now() + options_.response_timeout, offset);
    std::string error;
    const auto frame = parse_frame(line, offset, error);
    if (!error.empty()) fail(error);
    const auto kind = frame["kind"].get<std::string>();
    if (!frame.contains("id") || !frame["id"].is_number_unsigned()) {
      fail("response at byte offset " + std::to_string(offset) + " has no numeric id");
    }
    const auto id = frame["id"].get<std::uint64_t>();
    if (kind == "error") {
      fail("request " + std::to_string(id) + " failed: " + frame.value("message", std::string("(no message)")));
    }
    if (kind != "labels") fail("unexpected response kind \"" + kind + "\" at byte offset " + std::to_string(offset));
    const auto it = in_flight.find(id);
    if (it == in_flight.end()) {
      fail((completed.count(id) ? "duplicate response for request " : "response for unknown request ") +
           std::to_string(id));
    }
    const std::int64_t c = it->second;
    in_flight.erase(it);
    completed.insert(id);
    const std::int64_t first = c * chunk_rows;
    const std::int64_t count = std::min(chunk_rows, rows - first);
    const auto& got = frame["labels"];
    if (!got.is_array() || static_cast<std::int64_t>(got.size()) != count) {
      fail("request " + std::to_string(id) + ": expected " + std::to_string(count) + " labels");
    }
    for (std::int64_t r = 0; r < count; ++r) {
      const auto& value = got[static_cast<std::size_t>(r)];
      if (!value.is_number_unsigned() || value.get<std::uint64_t>() >= static_cast<std::uint64_t>(num_classes_)) {
        fail("request " + std::to_string(id) + ": label " + value.dump() + " outside [0, " +
             std::to_string(num_classes_) + ")");
      }
      labels[static_cast<std::size_t>(first + r)] = value.get<int>();
    }
  }
  return labels;
}

int ExternalClassifier::shutdown() {
  if (exit_status_) return *exit_status_;
  if (pid_ <= 0) return -1;
  if (stdin_fd_ >= 0) {
    const std::string frame = "{\"kind\":\"shutdown\"}\n";
    [[maybe_unused]] const ssize_t ignored = ::write(stdin_fd_, frame.data(), frame.size());
    close_fd(stdin_fd_);
  }
  int status = 0;
  const auto deadline = Clock::now() + options_.shutdown_timeout;
  pid_t done = 0;
  while ((done = ::waitpid(pid_, &status, WNOHANG)) == 0 && Clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (done == 0) {
    ::kill(-pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
  }
  // Leftover processes of the group would hold the stderr pipe open.
  ::kill(-pid_, SIGKILL);
  if (stderr_reader_.joinable()) stderr_reader_.join();
  close_fd(stdout_fd_);
  close_fd(stderr_fd_);
  exit_status_ = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return *exit_status_;
}

}  // namespace certsmooth
