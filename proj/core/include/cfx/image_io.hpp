#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cfx/image.hpp"

namespace cfx::io {

/// Linear map [-1, 1] -> [0, 255], rounded.
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);
/// The image as it reads back from an 8-bit PNG.
Image quantize(const Image& image);

/// 8-bit grayscale PNG bytes.
std::vector<std::uint8_t> encode_png(const Image& image);
/// Decodes any format OpenCV understands, converts to grayscale and resizes to
/// `resolution` (0 keeps the native size, which must be square). Throws
/// ValidationError when the bytes do not decode.
Image decode_image(std::span<const std::uint8_t> bytes, int resolution = 0);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path, int resolution = 0);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace cfx::io
