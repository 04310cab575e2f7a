#pragma once

// Tensor container: "CSMT" | version u16 | dtype u8 | ndim u32 | dims u32[ndim]
// | payload, all little-endian, payload row-major. dtype 1 = f32. A file may
// hold several records back to back.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "certsmooth/smoothing.hpp"
#include "certsmooth/toymodel.hpp"

namespace certsmooth {

inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  std::size_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

void write_tensor(std::ostream& out, const Tensor& tensor);
/// Throws std::runtime_error on a malformed record; returns false at a clean EOF.
bool read_tensor(std::istream& in, Tensor& tensor);

void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

Tensor to_tensor(const Eigen::Ref<const RowMatrix>& m);
Tensor to_tensor(const Eigen::MatrixXd& m);
Tensor to_tensor(std::span<const int> values);
/// 2-D (or 1-D, as a single row) tensor to a matrix.
RowMatrix to_matrix(const Tensor& t);
std::vector<int> to_labels(const Tensor& t);

/// Model file: image_proj, text_proj, class_tokens, template_context.
void save_vlm(const std::filesystem::path& path, const ToyVlm& vlm);
ToyVlm load_vlm(const std::filesystem::path& path);

/// Prompt file: the context matrix; a per-class state is stored as a 3-D
/// K x M x e tensor.
void save_prompts(const std::filesystem::path& path, const PromptState& prompts, int num_classes);
PromptState load_prompts(const std::filesystem::path& path, int num_classes);

}  // namespace certsmooth
