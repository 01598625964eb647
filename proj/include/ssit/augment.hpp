#pragma once

#include <cstdint>

#include "ssit/image.hpp"
#include "ssit/rng.hpp"
#include "ssit/saliency.hpp"

namespace ssit {

// Stochastic view recipe. Crop area fractions follow the asymmetric
// query/key ranges; photometric ops apply to images only.
struct ViewSpec {
  double area_lo = 0.08;
  double area_hi = 0.80;
  double aspect_lo = 3.0 / 4.0;
  double aspect_hi = 4.0 / 3.0;
  size_t out_size = 64;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double rot_lo_deg = -180.0;
  double rot_hi_deg = 180.0;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double blur_sigma_lo = 0.1;
  double blur_sigma_hi = 2.0;
  double blur_prob = 0.5;

  void validate() const;
  static ViewSpec query_default(size_t out_size);
  static ViewSpec key_default(size_t out_size);  // area range (0.80, 1.00)
};

// One sampled geometric transform: crop window, flips and rotation.
// Applying the same GeometryParams to an image and its saliency map keeps
// them pixel-aligned.
struct GeometryParams {
  size_t crop_y = 0, crop_x = 0, crop_h = 0, crop_w = 0;
  bool hflip = false, vflip = false;
  double rot_deg = 0.0;
  size_t out_size = 0;
};

double sample_area_fraction(Rng& rng, const ViewSpec& spec);
GeometryParams sample_geometry(Rng& rng, const ViewSpec& spec, size_t height,
                               size_t width);

Image apply_geometry(const Image& image, const GeometryParams& g);
SaliencyMap apply_geometry(const SaliencyMap& map, const GeometryParams& g);

// ---- primitives ----
Image hflip(const Image& image);
Image vflip(const Image& image);
// Bilinear resampling around the image center, zero padding outside.
Image rotate(const Image& image, double degrees);
Image gaussian_blur(const Image& image, double sigma);
Image color_jitter(const Image& image, double brightness_factor,
                   double contrast_factor, double saturation_factor);

struct ViewPair {
  Image query;
  Image key;
  SaliencyMap key_saliency;
  GeometryParams query_geometry;  // for building the segmentation target
  GeometryParams key_geometry;
};

// Two independent stochastic views of one image; the key view's saliency
// map gets the key view's geometric transform. All randomness derives
// from the seed.
ViewPair make_views(const Image& image, const SaliencyMap& saliency,
                    const ViewSpec& query_spec, const ViewSpec& key_spec,
                    uint64_t seed);

}  // namespace ssit
