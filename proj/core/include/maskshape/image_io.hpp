#pragma once

#include "maskshape/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace maskshape {

/// 8-bit grayscale PNG, 0 = background, 255 = body.
std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask);

/// Any PNG libpng understands; converted to gray and thresholded at 128.
/// Throws std::runtime_error("undecodable mask") on malformed or non-square input.
BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes, View view);

void save_mask_png(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask load_mask_png(const std::filesystem::path& path, View view);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

} // namespace maskshape
