#include "certsmooth/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace certsmooth {

namespace {

constexpr std::array<char, 4> kMagic{'C', 'S', 'M', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw std::runtime_error(std::string("tensor container: truncated ") + what);
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void write_tensor(std::ostream& out, const Tensor& tensor) {
  if (tensor.element_count() != tensor.data.size()) {
    throw std::invalid_argument("tensor shape does not match its data length");
  }
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(out, kTensorVersion);
  put_le<std::uint8_t>(out, kDtypeF32);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.shape.size()));
  for (auto d : tensor.shape) put_le<std::uint32_t>(out, d);
  for (float f : tensor.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  if (!out) throw std::runtime_error("tensor container: write failed");
}

bool read_tensor(std::istream& in, Tensor& tensor) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 1);
  if (in.gcount() == 0) return false;
  in.read(magic.data() + 1, 3);
  if (in.gcount() != 3 || magic != kMagic) throw std::runtime_error("tensor container: bad magic");
  const auto version = get_le<std::uint16_t>(in, "version");
  if (version != kTensorVersion) {
    throw std::runtime_error("tensor container: unsupported version " + std::to_string(version));
  }
  const auto dtype = get_le<std::uint8_t>(in, "dtype");
  if (dtype != kDtypeF32) throw std::runtime_error("tensor container: unsupported dtype " + std::to_string(dtype));
  const auto ndim = get_le<std::uint32_t>(in, "ndim");
  if (ndim > 16) throw std::runtime_error("tensor container: implausible rank " + std::to_string(ndim));
  tensor.shape.resize(ndim);
  for (auto& d : tensor.shape) d = get_le<std::uint32_t>(in, "dims");
  tensor.data.resize(tensor.element_count());
  for (auto& f : tensor.data) f = std::bit_cast<float>(get_le<std::uint32_t>(in, "payload"));
  return true;
}

void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& t : tensors) write_tensor(out, t);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Tensor> out;
  Tensor t;
  try {
    while (read_tensor(in, t)) out.push_back(t);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return out;
}

Tensor to_tensor(const Eigen::Ref<const RowMatrix>& m) {
  Tensor t;
  t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
  }
  return t;
}

Tensor to_tensor(const Eigen::MatrixXd& m) { return to_tensor(Eigen::Ref<const RowMatrix>(RowMatrix(m))); }

Tensor to_tensor(std::span<const int> values) {
  Tensor t;
  t.shape = {static_cast<std::uint32_t>(values.size())};
  for (int v : values) t.data.push_back(static_cast<float>(v));
  return t;
}

RowMatrix to_matrix(const Tensor& t) {
  if (t.shape.empty() || t.shape.size() > 2) {
    throw std::runtime_error("expected a 1-D or 2-D tensor, got rank " + std::to_string(t.shape.size()));
  }
  const Eigen::Index rows = t.shape.size() == 2 ? t.shape[0] : 1;
  const Eigen::Index cols = t.shape.back();
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = t.data[static_cast<std::size_t>(i)];
  return m;
}

std::vector<int> to_labels(const Tensor& t) {
  if (t.shape.size() != 1) throw std::runtime_error("labels must be a 1-D tensor");
  std::vector<int> labels;
  labels.reserve(t.data.size());
  for (float f : t.data) {
    if (f < 0.0f || f != static_cast<float>(static_cast<int>(f))) {
      throw std::runtime_error("labels must be non-negative integers");
    }
    labels.push_back(static_cast<int>(f));
  }
  return labels;
}

void save_vlm(const std::filesystem::path& path, const ToyVlm& vlm) {
  const std::array<Tensor, 4> parts{to_tensor(vlm.image_proj), to_tensor(vlm.text_proj),
                                    to_tensor(vlm.class_tokens), to_tensor(vlm.template_context)};
  save_tensors(path, parts);
}

ToyVlm load_vlm(const std::filesystem::path& path) {
  const auto parts = load_tensors(path);
  if (parts.size() != 4) {
    throw std::runtime_error(path.string() + ": model file must hold 4 tensors, found " +
                             std::to_string(parts.size()));
  }
  ToyVlm vlm;
  vlm.image_proj = to_matrix(parts[0]);
  vlm.text_proj = to_matrix(parts[1]);
  vlm.class_tokens = to_matrix(parts[2]);
  vlm.template_context = to_matrix(parts[3]);
  if (vlm.text_proj.rows() != vlm.image_proj.rows() || vlm.class_tokens.cols() != vlm.text_proj.cols() ||
      vlm.template_context.cols() != vlm.text_proj.cols()) {
    throw std::runtime_error(path.string() + ": inconsistent model tensor shapes");
  }
  return vlm;
}

void save_prompts(const std::filesystem::path& path, const PromptState& prompts, int num_classes) {
  Tensor t = to_tensor(prompts.context);
  if (prompts.per_class) {
    const auto k = static_cast<std::uint32_t>(num_classes);
    if (k == 0 || prompts.context.rows() % num_classes != 0) {
      throw std::invalid_argument("save_prompts: per-class context rows not divisible by class count");
    }
    t.shape = {k, static_cast<std::uint32_t>(prompts.context.rows()) / k,
               static_cast<std::uint32_t>(prompts.context.cols())};
  }
  const std::array<Tensor, 1> parts{t};
  save_tensors(path, parts);
}

PromptState load_prompts(const std::filesystem::path& path, int num_classes) {
  const auto parts = load_tensors(path);
  if (parts.size() != 1) throw std::runtime_error(path.string() + ": prompt file must hold 1 tensor");
  const Tensor& t = parts[0];
  PromptState state;
  if (t.shape.size() == 3) {
    if (static_cast<int>(t.shape[0]) != num_classes) {
      throw std::runtime_error(path.string() + ": per-class prompts for a different class count");
    }
    Tensor flat{{t.shape[0] * t.shape[1], t.shape[2]}, t.data};
    state.context = to_matrix(flat);
    state.per_class = true;
  } else {
    state.context = to_matrix(t);
  }
  return state;
}

}  // namespace certsmooth
