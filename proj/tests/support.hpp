#pragma once

// Checks shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <filesystem>
#include <string>

#include "certsmooth/config.hpp"

namespace certsmooth::testing {

/// A fresh, empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

struct GradientFidelity {
  int configs = 0;
  double worst_cross_entropy = 0.0;  // max relative error over configs
  double worst_entropy = 0.0;
  double seconds = 0.0;
};

/// Analytic prompt gradients against central finite differences (step 1e-4,
/// long double) on `configs` random toy models, prompts and batches.
GradientFidelity gradient_fidelity(int configs, std::uint64_t seed);

struct EntropyDescent {
  int samples = 0;
  int decreased = 0;           // H after one step < H before
  int eight_not_above_one = 0; // H after 8 steps <= H after 1 step
  double mean_before = 0.0;
  double mean_after_one = 0.0;
  double mean_after_eight = 0.0;
};

/// Test-time adaptation on the first `samples` images of the default
/// synthetic benchmark.
EntropyDescent entropy_descent(int samples, std::uint64_t seed);

/// The default benchmark written to `dir`, returning its run config.
RunConfig benchmark_config(const std::filesystem::path& dir);

}  // namespace certsmooth::testing
