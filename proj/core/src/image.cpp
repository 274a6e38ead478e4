#include "lostgan/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lostgan/error.hpp"

namespace lostgan {
namespace {

cv::Mat to_bgr_mat(const Image& image) {
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

Image from_bgr_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  Image out(rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) std::copy_n(rgb.ptr<std::uint8_t>(y), rgb.cols * 3, out.pixels.data() + y * rgb.cols * 3);
  return out;
}

}  // namespace

Image::Image(int h, int w, Rgb fill) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3) {
  for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i));
}

Rgb Image::at(int y, int x) const {
  const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Image::set(int y, int x, Rgb c) {
  const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
  pixels[i] = c[0];
  pixels[i + 1] = c[1];
  pixels[i + 2] = c[2];
}

Image read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorCode::kMissingImage, "cannot read image " + path.string());
  return from_bgr_mat(bgr);
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), to_bgr_mat(image))) {
    throw Error(ErrorCode::kCheckpointIOError, "cannot write image " + path.string());
  }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", to_bgr_mat(image), bytes)) throw Error(ErrorCode::kInvalidArgument, "PNG encoding failed");
  return bytes;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  cv::Mat bgr = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorCode::kMalformedDocument, "cannot decode PNG");
  return from_bgr_mat(bgr);
}

Image resize_image(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  cv::Mat src(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat dst;
  const bool shrinking = height <= image.height && width <= image.width;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  Image out(height, width);
  for (int y = 0; y < height; ++y) std::copy_n(dst.ptr<std::uint8_t>(y), width * 3, out.pixels.data() + y * width * 3);
  return out;
}

void image_to_tensor(const Image& image, Tensor& batch, std::int64_t index) {
  if (batch.rank() != 4 || batch.dim(1) != image.height || batch.dim(2) != image.width || batch.dim(3) != 3) {
    throw Error(ErrorCode::kShapeMismatch, "image does not fit batch " + shape_string(batch.shape()));
  }
  const std::int64_t block = static_cast<std::int64_t>(image.height) * image.width * 3;
  double* dst = batch.data() + index * block;
  for (std::int64_t i = 0; i < block; ++i) dst[i] = image.pixels[static_cast<std::size_t>(i)] / 127.5 - 1.0;
}

Image tensor_to_image(const Tensor& batch, std::int64_t index) {
  const int h = static_cast<int>(batch.dim(1)), w = static_cast<int>(batch.dim(2));
  Image out(h, w);
  const std::int64_t block = static_cast<std::int64_t>(h) * w * 3;
  const double* src = batch.data() + index * block;
  for (std::int64_t i = 0; i < block; ++i) {
    const double v = std::round((std::clamp(src[i], -1.0, 1.0) + 1.0) * 127.5);
    out.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
  }
  return out;
}

Image colorize_labels(const std::vector<int>& labels, int height, int width, const std::vector<Rgb>& palette,
                      Rgb background) {
  Image out(height, width, background);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int l = labels[static_cast<std::size_t>(y) * width + x];
      if (l >= 0 && l < static_cast<int>(palette.size())) out.set(y, x, palette[static_cast<std::size_t>(l)]);
    }
  return out;
}

Image tile_images(const std::vector<Image>& images, int columns) {
  if (images.empty()) return {};
  const int h = images.front().height, w = images.front().width;
  const int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
  Image out(rows * h, columns * w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int oy = static_cast<int>(i) / columns * h, ox = static_cast<int>(i) % columns * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.set(oy + y, ox + x, images[i].at(y, x));
  }
  return out;
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t b0 = bytes[i];
    const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
    const std::uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
    out += kAlphabet[(triple >> 18) & 63];
    out += kAlphabet[(triple >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(triple >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kAlphabet[triple & 63] : '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = value(c);
    if (v < 0) throw Error(ErrorCode::kMalformedDocument, "invalid base64");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace lostgan
