#include "elite360/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace e360 {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

}  // namespace

ImageF read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path.string() + ": not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  std::vector<png_byte> buffer(stride * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = buffer.data() + r * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  ImageF img(channels, height, width);
  for (png_uint_32 r = 0; r < height; ++r)
    for (png_uint_32 c = 0; c < width; ++c)
      for (int ch = 0; ch < channels; ++ch)
        img(ch, r, c) = static_cast<float>(rows[r][c * channels + ch]) / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const ImageF& img) {
  if (img.channels() != 1 && img.channels() != 3)
    throw UsageError("write_png supports 1 or 3 channels");
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": PNG write failed");
  }
  png_init_io(png, file.get());
  const int channels = static_cast<int>(img.channels());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(img.width() * channels));
  for (Index r = 0; r < img.height(); ++r) {
    for (Index c = 0; c < img.width(); ++c)
      for (int ch = 0; ch < channels; ++ch) {
        const float v = std::clamp(img(ch, r, c), 0.0f, 1.0f);
        row[static_cast<std::size_t>(c * channels + ch)] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageF read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  long width = 0, height = 0;
  double scale = 0;
  in >> magic >> width >> height >> scale;
  if (!in || (magic != "Pf" && magic != "PF")) throw IoError(path.string() + ": not a PFM file");
  if (width < 1 || height < 1 || scale == 0) throw IoError(path.string() + ": bad PFM header");
  in.get();  // single whitespace byte before the raster
  const int channels = magic == "PF" ? 3 : 1;
  const std::size_t count = static_cast<std::size_t>(width * height * channels);
  std::vector<std::uint32_t> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 4));
  if (static_cast<std::size_t>(in.gcount()) != count * 4) throw IoError(path.string() + ": truncated PFM raster");
  const bool little = scale < 0;
  const bool swap = little != (std::endian::native == std::endian::little);
  ImageF img(channels, height, width);
  for (long r = 0; r < height; ++r)
    for (long c = 0; c < width; ++c)
      for (int ch = 0; ch < channels; ++ch) {
        std::uint32_t bits = raw[static_cast<std::size_t>((r * width + c) * channels + ch)];
        if (swap) bits = __builtin_bswap32(bits);
        img(ch, height - 1 - r, c) = std::bit_cast<float>(bits);
      }
  return img;
}

void write_pfm(const std::filesystem::path& path, const ImageF& img) {
  if (img.channels() != 1 && img.channels() != 3) throw UsageError("write_pfm supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << (img.channels() == 3 ? "PF" : "Pf") << "\n" << img.width() << " " << img.height() << "\n-1.0\n";
  const Index channels = img.channels();
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(img.width() * img.height() * channels));
  for (Index r = 0; r < img.height(); ++r)
    for (Index c = 0; c < img.width(); ++c)
      for (Index ch = 0; ch < channels; ++ch) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(img(ch, img.height() - 1 - r, c));
        if constexpr (std::endian::native != std::endian::little) bits = __builtin_bswap32(bits);
        raw[static_cast<std::size_t>((r * img.width() + c) * channels + ch)] = bits;
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!out) throw IoError(path.string() + ": PFM write failed");
}

ValidMask mask_from_image(const ImageF& img) {
  if (img.channels() != 1) throw UsageError("masks must be single-channel");
  return img.plane(0) != 0.0f;
}

ValidMask read_mask(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  const ImageF img = (ext == ".pfm" || ext == ".PFM") ? read_pfm(path) : read_png(path);
  return mask_from_image(img);
}

}  // namespace e360
