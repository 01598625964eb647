#include "ssit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ssit {

namespace {

Image map_as_image(const SaliencyMap& m) {
  Image img(m.height, m.width, 1);
  img.pixels = m.values;
  return img;
}

std::vector<double> gauss_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + radius];
  }
  for (auto& v : k) v /= s;
  return k;
}

}  // namespace

void ViewSpec::validate() const {
  if (!(area_lo > 0.0 && area_lo <= area_hi && area_hi <= 1.0))
    throw std::invalid_argument("ViewSpec: crop area range empty or invalid");
  if (!(aspect_lo > 0.0 && aspect_lo <= aspect_hi))
    throw std::invalid_argument("ViewSpec: aspect range invalid");
  if (out_size == 0) throw std::invalid_argument("ViewSpec: zero output size");
  if (rot_lo_deg > rot_hi_deg)
    throw std::invalid_argument("ViewSpec: rotation range invalid");
  if (blur_sigma_lo > blur_sigma_hi || blur_sigma_lo <= 0.0)
    throw std::invalid_argument("ViewSpec: blur sigma range invalid");
  if (blur_prob < 0.0 || blur_prob > 1.0)
    throw std::invalid_argument("ViewSpec: blur probability outside [0,1]");
}

ViewSpec ViewSpec::query_default(size_t out_size) {
  ViewSpec s;
  s.area_lo = 0.08;
  s.area_hi = 0.80;
  s.out_size = out_size;
  return s;
}

ViewSpec ViewSpec::key_default(size_t out_size) {
  ViewSpec s;
  s.area_lo = 0.80;
  s.area_hi = 1.00;
  s.out_size = out_size;
  return s;
}

double sample_area_fraction(Rng& rng, const ViewSpec& spec) {
  return rng.uniform(spec.area_lo, spec.area_hi);
}

GeometryParams sample_geometry(Rng& rng, const ViewSpec& spec, size_t height,
                               size_t width) {
  spec.validate();
  GeometryParams g;
  g.out_size = spec.out_size;
  const double area = sample_area_fraction(rng, spec) *
                      static_cast<double>(height) * static_cast<double>(width);
  const double log_ratio =
      rng.uniform(std::log(spec.aspect_lo), std::log(spec.aspect_hi));
  const double ratio = std::exp(log_ratio);
  size_t w = static_cast<size_t>(std::lround(std::sqrt(area * ratio)));
  size_t h = static_cast<size_t>(std::lround(std::sqrt(area / ratio)));
  w = std::clamp<size_t>(w, 1, width);
  h = std::clamp<size_t>(h, 1, height);
  g.crop_w = w;
  g.crop_h = h;
  g.crop_y = height > h ? rng.below(height - h + 1) : 0;
  g.crop_x = width > w ? rng.below(width - w + 1) : 0;
  g.hflip = rng.bernoulli(spec.hflip_prob);
  g.vflip = rng.bernoulli(spec.vflip_prob);
  g.rot_deg = rng.uniform(spec.rot_lo_deg, spec.rot_hi_deg);
  return g;
}

Image apply_geometry(const Image& image, const GeometryParams& g) {
  if (g.crop_y + g.crop_h > image.height || g.crop_x + g.crop_w > image.width)
    throw std::invalid_argument("apply_geometry: crop window out of bounds");
  Image crop(g.crop_h, g.crop_w, image.channels);
  for (size_t y = 0; y < g.crop_h; ++y)
    for (size_t x = 0; x < g.crop_w; ++x)
      for (size_t c = 0; c < image.channels; ++c)
        crop.at(y, x, c) = image.at(g.crop_y + y, g.crop_x + x, c);
  Image out = resize_bilinear(crop, g.out_size, g.out_size);
  if (g.hflip) out = hflip(out);
  if (g.vflip) out = vflip(out);
  if (g.rot_deg != 0.0) out = rotate(out, g.rot_deg);
  return out;
}

SaliencyMap apply_geometry(const SaliencyMap& map, const GeometryParams& g) {
  Image img = apply_geometry(map_as_image(map), g);
  SaliencyMap out(img.height, img.width);
  out.values = img.pixels;
  return out;
}

Image hflip(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (size_t y = 0; y < image.height; ++y)
    for (size_t x = 0; x < image.width; ++x)
      for (size_t c = 0; c < image.channels; ++c)
        out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
  return out;
}

Image vflip(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (size_t y = 0; y < image.height; ++y)
    for (size_t x = 0; x < image.width; ++x)
      for (size_t c = 0; c < image.channels; ++c)
        out.at(y, x, c) = image.at(image.height - 1 - y, x, c);
  return out;
}

Image rotate(const Image& image, double degrees) {
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  Image out(image.height, image.width, image.channels);
  for (size_t y = 0; y < image.height; ++y)
    for (size_t x = 0; x < image.width; ++x) {
      // inverse mapping, zero padding outside
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double sy = cy + sn * dx + cs * dy;
      const double sx = cx + cs * dx - sn * dy;
      if (sy < 0.0 || sx < 0.0 || sy > image.height - 1.0 ||
          sx > image.width - 1.0)
        continue;
      const size_t y0 = static_cast<size_t>(sy);
      const size_t x0 = static_cast<size_t>(sx);
      const size_t y1 = std::min(y0 + 1, image.height - 1);
      const size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wy = sy - static_cast<double>(y0);
      const double wx = sx - static_cast<double>(x0);
      for (size_t c = 0; c < image.channels; ++c) {
        const double top =
            image.at(y0, x0, c) * (1.0 - wx) + image.at(y0, x1, c) * wx;
        const double bot =
            image.at(y1, x0, c) * (1.0 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const auto k = gauss_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  Image tmp(image.height, image.width, image.channels);
  for (size_t y = 0; y < image.height; ++y)
    for (size_t x = 0; x < image.width; ++x)
      for (size_t c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          const int xx = std::clamp<int>(static_cast<int>(x) + d, 0,
                                         static_cast<int>(image.width) - 1);
          acc += image.at(y, static_cast<size_t>(xx), c) * k[d + radius];
        }
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
  Image out(image.height, image.width, image.channels);
  for (size_t y = 0; y < image.height; ++y)
    for (size_t x = 0; x < image.width; ++x)
      for (size_t c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          const int yy = std::clamp<int>(static_cast<int>(y) + d, 0,
                                         static_cast<int>(image.height) - 1);
        acc += tmp.at(static_cast<size_t>(yy), x, c) * k[d + radius];
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
  return out;
}

Image color_jitter(const Image& image, double brightness_factor,
                   double contrast_factor, double saturation_factor) {
  Image out = image;
  for (auto& v : out.pixels) v = static_cast<float>(v * brightness_factor);
  {
    const Image gray = to_gray(out);
    double m = 0.0;
    for (float v : gray.pixels) m += v;
    m /= static_cast<double>(gray.pixels.size());
    for (auto& v : out.pixels)
      v = static_cast<float>(m + contrast_factor * (v - m));
  }
  if (out.channels == 3) {
    const Image gray = to_gray(out);
    for (size_t y = 0; y < out.height; ++y)
      for (size_t x = 0; x < out.width; ++x)
        for (size_t c = 0; c < 3; ++c)
          out.at(y, x, c) = static_cast<float>(
              gray.at(y, x, 0) +
              saturation_factor * (out.at(y, x, c) - gray.at(y, x, 0)));
  }
  for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

namespace {

Image apply_photometric(const Image& image, Rng& rng, const ViewSpec& spec) {
  const double bf = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness);
  const double cf = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
  const double sf = rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation);
  Image out = color_jitter(image, bf, cf, sf);
  const bool do_blur = rng.bernoulli(spec.blur_prob);
  const double sigma = rng.uniform(spec.blur_sigma_lo, spec.blur_sigma_hi);
  if (do_blur) out = gaussian_blur(out, sigma);
  return out;
}

}  // namespace

ViewPair make_views(const Image& image, const SaliencyMap& saliency,
                    const ViewSpec& query_spec, const ViewSpec& key_spec,
                    uint64_t seed) {
  if (saliency.height != image.height || saliency.width != image.width)
    throw std::invalid_argument("make_views: saliency/image size mismatch");
  query_spec.validate();
  key_spec.validate();
  Rng rng_q(Rng::mix(seed, 0x71));
  Rng rng_k(Rng::mix(seed, 0x4b));

  ViewPair vp;
  vp.query_geometry = sample_geometry(rng_q, query_spec, image.height,
                                      image.width);
  vp.query = apply_photometric(apply_geometry(image, vp.query_geometry), rng_q,
                               query_spec);
  vp.key_geometry = sample_geometry(rng_k, key_spec, image.height, image.width);
  vp.key = apply_photometric(apply_geometry(image, vp.key_geometry), rng_k,
                             key_spec);
  vp.key_saliency = apply_geometry(saliency, vp.key_geometry);
  return vp;
}

}  // namespace ssit
