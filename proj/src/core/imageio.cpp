// Copyright (c) the quip authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "quip/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "quip/error.hpp"

namespace quip::io {

namespace fs = std::filesystem;

namespace {

std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

unsigned quantize(double v, unsigned maxval) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned>(std::lround(c * maxval));
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const fs::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = message;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const fs::path& path) {
  File file = open_file(path, "rb");
  unsigned char signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0)
    throw FormatError(path.string() + ": not a PNG file");

  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  if (!png) throw IoError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: out of memory");
  }
  Image image;
  bool color = false;
  std::vector<unsigned char> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  color = (type & PNG_COLOR_MASK_COLOR) != 0;
  if (!color) {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // little-endian samples in memory
    png_read_update_info(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    buffer.resize(row_bytes * h);
    rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = buffer.data() + r * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    image = Image(h, w);
    const bool wide = depth == 16;
    const double scale = wide ? 65535.0 : 255.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
      const unsigned v = wide ? unsigned(buffer[2 * i]) | (unsigned(buffer[2 * i + 1]) << 8) : buffer[i];
      image.pixels[i] = v / scale;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (color) throw FormatError(path.string() + ": color PNG; only grayscale images are supported");
  return image;
}

void write_png(const Image& image, const fs::path& path, BitDepth depth) {
  if (image.empty()) throw ArgumentError("write_png: empty image");
  const bool wide = depth == BitDepth::sixteen;
  const std::size_t row_bytes = image.width * (wide ? 2 : 1);
  std::vector<unsigned char> buffer(row_bytes * image.height);
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (wide) {
      const unsigned v = quantize(image.pixels[i], 65535);
      buffer[2 * i] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(quantize(image.pixels[i], 255));
    }
  }
  std::vector<png_bytep> rows(image.height);
  for (std::size_t r = 0; r < image.height; ++r) rows[r] = buffer.data() + r * row_bytes;

  File file = open_file(path, "wb");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  if (!png) throw IoError("libpng: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
               wide ? 16 : 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("failed to write " + path.string());
}

namespace {

// Next whitespace-separated header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

std::size_t pgm_number(std::istream& in, const fs::path& path, const char* what) {
  const std::string token = pgm_token(in);
  if (token.empty() || !std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw FormatError(path.string() + ": bad PGM " + what + " '" + token + "'");
  return std::stoul(token);
}

}  // namespace

Image read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (pgm_token(in) != "P5") throw FormatError(path.string() + ": not a binary PGM (P5) file");
  const std::size_t w = pgm_number(in, path, "width");
  const std::size_t h = pgm_number(in, path, "height");
  const std::size_t maxval = pgm_number(in, path, "maxval");
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535)
    throw FormatError(path.string() + ": bad PGM header " + std::to_string(w) + "x" + std::to_string(h) + " maxval " +
                      std::to_string(maxval));
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * bytes);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw FormatError(path.string() + ": truncated PGM data");
  Image image(h, w);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const unsigned v = bytes == 2 ? (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1] : raw[i];
    if (v > maxval) throw FormatError(path.string() + ": sample exceeds maxval");
    image.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return image;
}

void write_pgm(const Image& image, const fs::path& path, BitDepth depth) {
  if (image.empty()) throw ArgumentError("write_pgm: empty image");
  const bool wide = depth == BitDepth::sixteen;
  const unsigned maxval = wide ? 65535 : 255;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << image.width << ' ' << image.height << '\n' << maxval << '\n';
  std::vector<unsigned char> raw(image.size() * (wide ? 2 : 1));
  for (std::size_t i = 0; i < image.size(); ++i) {
    const unsigned v = quantize(image.pixels[i], maxval);
    if (wide) {
      raw[2 * i] = static_cast<unsigned char>(v >> 8);
      raw[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    } else {
      raw[i] = static_cast<unsigned char>(v);
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed to write " + path.string());
}

bool is_image_path(const fs::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".pgm";
}

Image read_image(const fs::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  throw FormatError(path.string() + ": unsupported image extension '" + ext + "'");
}

void write_image(const Image& image, const fs::path& path, BitDepth depth) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(image, path, depth);
  if (ext == ".pgm") return write_pgm(image, path, depth);
  throw FormatError(path.string() + ": unsupported image extension '" + ext + "'");
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image_path(entry.path())) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace quip::io
