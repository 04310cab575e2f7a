#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace certsmooth {

/// RFC 4648 base64 with padding.
std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on characters outside the alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Batch payload of the wire protocol: f32 little-endian, row-major.
std::string encode_f32_le(std::span<const double> values);
std::vector<float> decode_f32_le(std::string_view base64);

}  // namespace certsmooth
