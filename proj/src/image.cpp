#include "lgps/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

namespace lgps {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string());
  return f;
}

struct ReadResult {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> raw;  // rows concatenated, big-endian samples for 16-bit
};

// Reads any PNG, normalizing palette/low-bit-depth input. 16-bit data is kept
// only when `keep16` is set; otherwise it is stripped to 8 bits.
ReadResult read_png(const std::filesystem::path& path, bool keep16, bool want_gray) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorKind::kIo, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorKind::kIo, "libpng init failed");
  }
  ReadResult out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kIo, "malformed PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (!keep16 && depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (want_gray) {
    if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE) {
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
  } else if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.raw.resize(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.raw.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_vec(png_structp png, png_bytep data, png_size_t length) {
  auto* buffer = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  buffer->insert(buffer->end(), data, data + length);
}

void flush_noop(png_structp) {}

// Writes raw rows. `sink` is either a FILE* (file output) or a byte vector.
void write_png(std::FILE* file, std::vector<std::uint8_t>* buffer, int width, int height,
               int color_type, int bit_depth, const std::uint8_t* raw, std::size_t rowbytes) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorKind::kIo, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorKind::kIo, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "PNG encoding failed");
  }
  if (file) {
    png_init_io(png, file);
  } else {
    png_set_write_fn(png, buffer, write_vec, flush_noop);
  }
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raw + rowbytes * y));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> to_big_endian(const Image<std::uint16_t>& image) {
  std::vector<std::uint8_t> raw(image.size() * 2);
  for (std::size_t i = 0; i < image.size(); ++i) {
    raw[2 * i] = static_cast<std::uint8_t>(image.data()[i] >> 8);
    raw[2 * i + 1] = static_cast<std::uint8_t>(image.data()[i] & 0xff);
  }
  return raw;
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  ReadResult r = read_png(path, false, false);
  RgbImage image(r.width, r.height, 3);
  image.data() = std::move(r.raw);
  return image;
}

Image<std::uint16_t> read_png_gray16(const std::filesystem::path& path) {
  ReadResult r = read_png(path, true, true);
  Image<std::uint16_t> image(r.width, r.height, 1);
  for (std::size_t i = 0; i < image.size(); ++i) {
    image.data()[i] = r.bit_depth == 16
                          ? static_cast<std::uint16_t>((r.raw[2 * i] << 8) | r.raw[2 * i + 1])
                          : r.raw[i];
  }
  return image;
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  if (image.channels() != 3) fail(ErrorKind::kInvalidArgument, "expected a 3-channel image");
  FilePtr f = open_file(path, "wb");
  write_png(f.get(), nullptr, image.width(), image.height(), PNG_COLOR_TYPE_RGB, 8,
            image.data().data(), static_cast<std::size_t>(image.width()) * 3);
}

void write_png_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& image) {
  const std::vector<std::uint8_t> raw = to_big_endian(image);
  FilePtr f = open_file(path, "wb");
  write_png(f.get(), nullptr, image.width(), image.height(), PNG_COLOR_TYPE_GRAY, 16, raw.data(),
            static_cast<std::size_t>(image.width()) * 2);
}

void write_png_gray8(const std::filesystem::path& path, const Image<std::uint8_t>& image) {
  FilePtr f = open_file(path, "wb");
  write_png(f.get(), nullptr, image.width(), image.height(), PNG_COLOR_TYPE_GRAY, 8,
            image.data().data(), static_cast<std::size_t>(image.width()));
}

std::vector<std::uint8_t> encode_png_rgb(const RgbImage& image) {
  std::vector<std::uint8_t> out;
  write_png(nullptr, &out, image.width(), image.height(), PNG_COLOR_TYPE_RGB, 8,
            image.data().data(), static_cast<std::size_t>(image.width()) * 3);
  return out;
}

}  // namespace lgps
