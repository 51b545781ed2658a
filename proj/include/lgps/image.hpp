#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "lgps/error.hpp"

namespace lgps {

// Interleaved row-major image: element (x, y, c) lives at ((y * width) + x) * channels + c.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels = 1, T fill = T{})
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels <= 0) {
      fail(ErrorKind::kInvalidArgument, "image dimensions must be non-negative");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(int width, int height) const {
    return width_ == width && height_ == height;
  }

  friend bool operator==(const Image& a, const Image& b) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using RgbImage = Image<std::uint8_t>;
using GrayImage = Image<double>;

// PNG I/O. RGB images are 8-bit, 3 channels; 16-bit grayscale is used for depth in millimeters.
RgbImage read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);
Image<std::uint16_t> read_png_gray16(const std::filesystem::path& path);
void write_png_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& image);
void write_png_gray8(const std::filesystem::path& path, const Image<std::uint8_t>& image);

// In-memory encoding, used by the labeling service to serve images.
std::vector<std::uint8_t> encode_png_rgb(const RgbImage& image);

}  // namespace lgps
