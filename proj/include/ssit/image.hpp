#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ssit {

// Row-major, channel-last float image with values in [0, 1].
struct Image {
  size_t height = 0;
  size_t width = 0;
  size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(size_t h, size_t w, size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(size_t y, size_t x, size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  float at(size_t y, size_t x, size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  size_t size() const { return pixels.size(); }
};

// Rec.601 luma (0.299/0.587/0.114); single-channel images pass through.
Image to_gray(const Image& img);

Image resize_bilinear(const Image& img, size_t out_h, size_t out_w);

// Supported formats: PNG, PGM (P2/P5), PPM (P3/P6); chosen by file content
// on load and by extension on save.
Image load_image(const std::string& path);
void save_image(const std::string& path, const Image& img);

void save_pgm(const std::string& path, const Image& gray);
void save_ppm(const std::string& path, const Image& rgb);
void save_png(const std::string& path, const Image& img);

}  // namespace ssit
