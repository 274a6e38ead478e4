#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lostgan/tensor.hpp"

namespace lostgan {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit interleaved RGB raster.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  Image() = default;
  Image(int h, int w, Rgb fill = {0, 0, 0});

  Rgb at(int y, int x) const;
  void set(int y, int x, Rgb c);
  bool operator==(const Image&) const = default;
};

Image read_image(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);

// Area-averaged resize (used when shrinking dataset images to the lattice).
Image resize_image(const Image& image, int height, int width);

// 255 -> 1.0, 0 -> -1.0; writes into row `index` of an N x H x W x 3 tensor.
void image_to_tensor(const Image& image, Tensor& batch, std::int64_t index);
// Inverse mapping with rounding and clamping.
Image tensor_to_image(const Tensor& batch, std::int64_t index);

// Indexed raster: each cell holds a palette index (or the background slot).
Image colorize_labels(const std::vector<int>& labels, int height, int width, const std::vector<Rgb>& palette,
                      Rgb background = {0, 0, 0});

// Grid of images, row-major, `columns` wide.
Image tile_images(const std::vector<Image>& images, int columns);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace lostgan
