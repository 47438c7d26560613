#include "cppap/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cppap {

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError("not a binary PPM (P6) file: " + path);
  auto next_int = [&]() {
    // Skip whitespace and '#' comment lines.
    int c;
    while ((c = in.peek()) != EOF) {
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) throw FormatError("bad PPM header in " + path);
    return std::size_t(v);
  };
  std::size_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw FormatError("PPM maxval must be 255 in " + path);
  in.get();  // single whitespace byte before pixel data
  std::vector<unsigned char> raw(w * h * 3);
  if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size())))
    throw FormatError("truncated PPM pixel data in " + path);
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < raw.size(); ++i) img[i] = raw[i] / 255.0;
  return img;
}

void write_ppm(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(2) != 3)
    throw DimensionError("write_ppm expects [H,W,3]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open image for writing: " + path);
  out << "P6\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = std::clamp(img[i], 0.0, 1.0);
    out.put(char(std::lround(v * 255.0)));
  }
}

Tensor read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw FormatError("cannot open image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("libpng failed to decode " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int depth = png_get_bit_depth(png, info);
  int color = png_get_color_type(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  std::vector<unsigned char> raw(std::size_t(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + std::size_t(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < raw.size(); ++i) img[i] = raw[i] / 255.0;
  return img;
}

Tensor read_image(const std::string& path) {
  if (path.ends_with(".ppm")) return read_ppm(path);
  if (path.ends_with(".png")) return read_png(path);
  throw FormatError("unsupported image format (want .png or .ppm): " + path);
}

namespace {
constexpr char kTensorMagic[6] = {'C', 'T', 'E', 'N', '1', '\0'};
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open tensor file for writing: " + path);
  out.write(kTensorMagic, sizeof(kTensorMagic));
  std::uint32_t rank = std::uint32_t(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (std::size_t d : t.shape()) {
    std::uint64_t v = d;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  out.write(reinterpret_cast<const char*>(t.data()),
            std::streamsize(t.size() * sizeof(double)));
  if (!out) throw FormatError("tensor write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open tensor file: " + path);
  char magic[sizeof(kTensorMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
    throw FormatError("bad tensor file magic in " + path);
  std::uint32_t rank = 0;
  if (!in.read(reinterpret_cast<char*>(&rank), sizeof(rank)) || rank == 0 || rank > 8)
    throw FormatError("bad tensor rank in " + path);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)) || v == 0)
      throw FormatError("bad tensor shape in " + path);
    d = std::size_t(v);
  }
  Tensor t(shape);
  if (!in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(double))))
    throw FormatError("truncated tensor data in " + path);
  return t;
}

}  // namespace cppap
