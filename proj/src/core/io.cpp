#include "xmark/core/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace xmark::io {

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

Tensor read_png_gray(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  XM_CHECK(fp != nullptr, "cannot open image file: ", path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  XM_CHECK(png, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("corrupt PNG: ", path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("image is not single-channel grayscale: ", path);
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);

  std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out({static_cast<int>(h), static_cast<int>(w)});
  if (depth == 16) {
    for (png_uint_32 y = 0; y < h; ++y) {
      const png_byte* r = buf.data() + static_cast<std::size_t>(y) * rowbytes;
      for (png_uint_32 x = 0; x < w; ++x) {
        unsigned v = (static_cast<unsigned>(r[2 * x]) << 8) | r[2 * x + 1];  // PNG is big-endian
        out.at2(static_cast<int>(y), static_cast<int>(x)) = static_cast<float>(v) / 65535.0f;
      }
    }
  } else {
    for (png_uint_32 y = 0; y < h; ++y) {
      const png_byte* r = buf.data() + static_cast<std::size_t>(y) * rowbytes;
      for (png_uint_32 x = 0; x < w; ++x)
        out.at2(static_cast<int>(y), static_cast<int>(x)) = static_cast<float>(r[x]) / 255.0f;
    }
  }
  return out;
}

void write_png_gray8(const std::string& path, const Tensor& image_hw) {
  XM_CHECK(image_hw.rank() == 2, "write_png_gray8: 2-D image expected");
  int h = image_hw.dim(0), w = image_hw.dim(1);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  XM_CHECK(fp != nullptr, "cannot write image file: ", path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  XM_CHECK(png, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png_create_info_struct failed");
  }
  std::vector<png_byte> buf(static_cast<std::size_t>(h) * w);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("PNG write failed: ", path);
  }
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] = buf.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      float v = image_hw.at2(y, x);
      v = std::min(1.0f, std::max(0.0f, v));
      buf[static_cast<std::size_t>(y) * w + x] =
          static_cast<png_byte>(std::lround(v * 255.0f));
    }
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream f(path);
  XM_CHECK(f.good(), "cannot open CSV file: ", path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  XM_CHECK(f.good(), "cannot open file: ", path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  XM_CHECK(f.good(), "cannot write file: ", path);
  f << content;
  XM_CHECK(f.good(), "write failed: ", path);
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_str(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

void write_f32_blob(const std::string& path, const Tensor& t_hw) {
  XM_CHECK(t_hw.rank() == 2, "write_f32_blob: 2-D tensor expected");
  std::ofstream f(path, std::ios::binary);
  XM_CHECK(f.good(), "cannot write blob: ", path);
  std::int32_t h = t_hw.dim(0), w = t_hw.dim(1);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(t_hw.data()), static_cast<std::streamsize>(t_hw.numel() * 4));
  XM_CHECK(f.good(), "blob write failed: ", path);
}

Tensor read_f32_blob(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  XM_CHECK(f.good(), "cannot open blob: ", path);
  std::int32_t h = 0, w = 0;
  f.read(reinterpret_cast<char*>(&h), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  XM_CHECK(f.good() && h >= 1 && w >= 1, "malformed blob header: ", path);
  Tensor t({h, w});
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
  XM_CHECK(f.good(), "truncated blob: ", path);
  return t;
}

}  // namespace xmark::io
