#include "ssit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssit {

namespace {

uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), ::tolower);
  return tail == suffix;
}

// ---- PNM ----

void skip_pnm_ws(std::istream& is) {
  for (;;) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

size_t read_pnm_int(std::istream& is) {
  skip_pnm_ws(is);
  size_t v;
  if (!(is >> v)) throw std::runtime_error("pnm: malformed header");
  return v;
}

Image load_pnm(std::istream& is, const std::string& path) {
  char p, kind;
  is.get(p);
  is.get(kind);
  if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6'))
    throw std::runtime_error(path + ": unsupported PNM type");
  const bool color = (kind == '3' || kind == '6');
  const bool ascii = (kind == '2' || kind == '3');
  const size_t w = read_pnm_int(is);
  const size_t h = read_pnm_int(is);
  const size_t maxval = read_pnm_int(is);
  if (maxval == 0 || maxval > 255)
    throw std::runtime_error(path + ": unsupported PNM maxval");
  const size_t c = color ? 3 : 1;
  Image img(h, w, c);
  const size_t n = h * w * c;
  if (ascii) {
    for (size_t i = 0; i < n; ++i) {
      size_t v = read_pnm_int(is);
      img.pixels[i] = static_cast<float>(v) / static_cast<float>(maxval);
    }
  } else {
    is.get();  // single whitespace after maxval
    std::vector<uint8_t> raw(n);
    if (!is.read(reinterpret_cast<char*>(raw.data()),
                 static_cast<std::streamsize>(n)))
      throw std::runtime_error(path + ": truncated PNM payload");
    for (size_t i = 0; i < n; ++i)
      img.pixels[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
  }
  return img;
}

// ---- PNG via libpng ----

Image load_png_file(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error(path + ": cannot open");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error(path + ": PNG decode failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color_type = png_get_color_type(png, info);
  png_byte bit_depth = png_get_bit_depth(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const size_t channels = png_get_channels(png, info);
  std::vector<uint8_t> row(png_get_rowbytes(png, info));
  Image img(h, w, channels == 1 ? 1 : 3);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (size_t c = 0; c < img.channels; ++c)
        img.at(y, x, c) =
            static_cast<float>(row[x * channels + c]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3)
    throw std::invalid_argument("to_gray: expected 1 or 3 channels");
  Image out(img.height, img.width, 1);
  for (size_t y = 0; y < img.height; ++y)
    for (size_t x = 0; x < img.width; ++x)
      out.at(y, x, 0) = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) +
                        0.114f * img.at(y, x, 2);
  return out;
}

Image resize_bilinear(const Image& img, size_t out_h, size_t out_w) {
  if (img.height == 0 || img.width == 0)
    throw std::invalid_argument("resize_bilinear: empty image");
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (size_t y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const double cy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const size_t y0 = static_cast<size_t>(cy);
    const size_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = cy - y0;
    for (size_t x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const double cx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const size_t x0 = static_cast<size_t>(cx);
      const size_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = cx - x0;
      for (size_t c = 0; c < img.channels; ++c) {
        const double top =
            img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        const double bot =
            img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open");
  uint8_t sig[8] = {};
  is.read(reinterpret_cast<char*>(sig), 8);
  is.seekg(0);
  static const uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a,
                                     '\n'};
  if (std::memcmp(sig, png_sig, 8) == 0) {
    is.close();
    return load_png_file(path);
  }
  if (sig[0] == 'P') return load_pnm(is, path);
  throw std::runtime_error(path + ": not a PNG/PGM/PPM file");
}

void save_pgm(const std::string& path, const Image& gray) {
  const Image g = to_gray(gray);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << "P5\n" << g.width << " " << g.height << "\n255\n";
  std::vector<uint8_t> raw(g.pixels.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(g.pixels[i]);
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
}

void save_ppm(const std::string& path, const Image& img) {
  if (img.channels != 3) throw std::invalid_argument("save_ppm: need 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> raw(img.pixels.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.pixels[i]);
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
}

void save_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("save_png: need 1 or 3 channels");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error(path + ": cannot open for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error(path + ": PNG encode failed");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(img.width * img.channels);
  for (size_t y = 0; y < img.height; ++y) {
    for (size_t i = 0; i < row.size(); ++i)
      row[i] = to_byte(img.pixels[y * row.size() + i]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void save_image(const std::string& path, const Image& img) {
  if (ends_with(path, ".png")) {
    save_png(path, img);
  } else if (ends_with(path, ".pgm")) {
    save_pgm(path, img);
  } else if (ends_with(path, ".ppm")) {
    save_ppm(path, img);
  } else {
    throw std::invalid_argument(path + ": unsupported output format");
  }
}

}  // namespace ssit
