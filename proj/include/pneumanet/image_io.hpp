#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pneumanet/tensor.hpp"

namespace pneumanet {

// 8-bit interleaved pixels, row-major, 1 (gray) or 3 (RGB) channels.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

enum class ImageFormat { unknown, png, jpeg };

// Sniffs the magic bytes; file extensions are never consulted.
ImageFormat detect_format(std::span<const std::uint8_t> bytes);

// PNG or JPEG. Alpha is composited onto black; 16-bit PNG is reduced to 8.
// Throws ImageDecodeError for anything else.
RawImage decode_image(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
RawImage read_image_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const RawImage& image);
std::vector<std::uint8_t> encode_jpeg(const RawImage& image, int quality = 95);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const RawImage& image);

// (H, W, 1) tensor in [0, 1] -> 8-bit gray, rounded to nearest.
RawImage to_raw_image(const Tensor32& image);

}  // namespace pneumanet
