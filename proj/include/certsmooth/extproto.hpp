#pragma once

// Client for the external-classifier wire protocol: newline-delimited JSON
// over a child process's stdin/stdout. See PROTOCOL.md for the frame grammar.

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <sys/types.h>
#include <thread>

#include "certsmooth/smoothing.hpp"

namespace certsmooth {

inline constexpr int kProtocolVersion = 1;

/// Protocol or transport failure; the message carries the child's stderr tail
/// when one is available.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExternalOptions {
  int input_dim = 0;
  std::chrono::milliseconds handshake_timeout{10'000};
  std::chrono::milliseconds response_timeout{120'000};
  std::chrono::milliseconds shutdown_timeout{5'000};
  int max_outstanding = 4;
  int max_rows_per_request = 512;
};

class ExternalClassifier final : public BaseClassifier {
 public:
  ~ExternalClassifier() override;
  ExternalClassifier(const ExternalClassifier&) = delete;
  ExternalClassifier& operator=(const ExternalClassifier&) = delete;

  int num_classes() const override { return num_classes_; }
  int input_dim() const override { return options_.input_dim; }
  bool concurrent_safe() const override { return false; }

  /// Splits the batch into infer requests, keeps up to max_outstanding in
  /// flight and matches responses by id.
  std::vector<int> evaluate(const Eigen::Ref<const RowMatrix>& batch) override;

  /// Sends shutdown, waits up to shutdown_timeout, then kills. Returns the
  /// child's exit status (128 + signal if it was killed). Idempotent.
  int shutdown();

  pid_t pid() const { return pid_; }
  std::string stderr_tail() const;

 private:
  friend std::unique_ptr<ExternalClassifier> spawn_external(const std::string&, const ExternalOptions&);
  explicit ExternalClassifier(ExternalOptions options) : options_(options) {}

  void launch(const std::string& command);
  void handshake();
  void send_line(const std::string& line);
  /// Next response line and the stream offset of its first byte.
  std::string read_line(std::chrono::steady_clock::time_point deadline, std::uint64_t& offset);
  [[noreturn]] void fail(const std::string& message);

  ExternalOptions options_;
  int num_classes_ = 0;
  pid_t pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  int stderr_fd_ = -1;
  bool broken_ = false;
  std::optional<int> exit_status_;
  std::uint64_t next_id_ = 1;
  std::string read_buffer_;
  std::uint64_t stream_offset_ = 0;  // bytes of stdout consumed before read_buffer_

  mutable std::mutex stderr_mutex_;
  std::string stderr_tail_;
  std::thread stderr_reader_;
};

/// Launches `command` through /bin/sh and completes the hello handshake.
std::unique_ptr<ExternalClassifier> spawn_external(const std::string& command,
                                                   const ExternalOptions& options);

}  // namespace certsmooth
