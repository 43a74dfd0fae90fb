#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace smart {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster, row-major, channels interleaved.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, Rgb fill = {255, 255, 255});

  bool empty() const { return height == 0 || width == 0; }

  Rgb at(int row, int col) const {
    const auto i = (static_cast<std::size_t>(row) * width + col) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }

  void set(int row, int col, Rgb c) {
    const auto i = (static_cast<std::size_t>(row) * width + col) * 3;
    pixels[i] = c[0];
    pixels[i + 1] = c[1];
    pixels[i + 2] = c[2];
  }

  bool contains(int row, int col) const {
    return row >= 0 && col >= 0 && row < height && col < width;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct ImageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Image read_png(const std::filesystem::path& path);
Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);

// SHA-256 (hex) over the dimensions and raw RGB bytes. Independent of the
// PNG encoding the image was stored with.
std::string image_digest(const Image& image);

std::string sha256_hex(const void* data, std::size_t size);
std::string base64_encode(const std::vector<std::uint8_t>& bytes);

}  // namespace smart
