#include <doctest.h>

#include <cmath>

#include "ssit/augment.hpp"
#include "ssit/synth.hpp"

using namespace ssit;

namespace {

Image random_image(size_t n, uint64_t seed, size_t c = 1) {
  Rng rng(seed);
  Image img(n, n, c);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("flips are exact involutions") {
  Image img = random_image(17, 1);
  CHECK(hflip(hflip(img)).pixels == img.pixels);
  CHECK(vflip(vflip(img)).pixels == img.pixels);
  Image h = hflip(img);
  CHECK(h.at(3, 0, 0) == img.at(3, 16, 0));
  Image v = vflip(img);
  CHECK(v.at(0, 5, 0) == img.at(16, 5, 0));
}

TEST_CASE("rotation by zero degrees is the identity") {
  Image img = random_image(16, 2);
  CHECK(rotate(img, 0.0).pixels == img.pixels);
}

TEST_CASE("rotation pads with zero outside the source") {
  Image img(16, 16, 1, 1.0f);
  Image r = rotate(img, 45.0);
  CHECK(r.at(0, 0, 0) == 0.0f);  // corner falls outside the rotated square
  CHECK(r.at(8, 8, 0) == doctest::Approx(1.0f));
}

TEST_CASE("gaussian blur preserves constants and mass") {
  Image img(16, 16, 1, 0.37f);
  Image b = gaussian_blur(img, 1.5);
  for (float v : b.pixels) CHECK(v == doctest::Approx(0.37f).epsilon(1e-5));
  // smoothing shrinks the extremes of a spiky image
  Image spike(16, 16, 1, 0.0f);
  spike.at(8, 8, 0) = 1.0f;
  Image bs = gaussian_blur(spike, 2.0);
  CHECK(bs.at(8, 8, 0) < 0.5f);
  CHECK(bs.at(8, 8, 0) > bs.at(8, 12, 0));
}

TEST_CASE("color jitter with unit factors is the identity") {
  Image img = random_image(8, 3, 3);
  Image j = color_jitter(img, 1.0, 1.0, 1.0);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(j.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-5));
}

TEST_CASE("color jitter clamps to [0,1]") {
  Image img = random_image(8, 4, 3);
  Image j = color_jitter(img, 1.4, 1.4, 1.4);
  for (float v : j.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("sampled crop area fractions respect the configured range") {
  ViewSpec q = ViewSpec::query_default(64);
  ViewSpec k = ViewSpec::key_default(64);
  Rng rng(12);
  double qlo = 1.0, qhi = 0.0, klo = 1.0, khi = 0.0;
  for (int i = 0; i < 2000; ++i) {
    double a = sample_area_fraction(rng, q);
    qlo = std::min(qlo, a);
    qhi = std::max(qhi, a);
    double b = sample_area_fraction(rng, k);
    klo = std::min(klo, b);
    khi = std::max(khi, b);
  }
  CHECK(qlo >= 0.08);
  CHECK(qhi <= 0.80);
  CHECK(qlo < 0.12);  // actually explores the low end
  CHECK(qhi > 0.76);
  CHECK(klo >= 0.80);
  CHECK(khi <= 1.00);
}

TEST_CASE("sampled crop windows stay inside the image") {
  ViewSpec spec = ViewSpec::query_default(64);
  Rng rng(13);
  for (int i = 0; i < 500; ++i) {
    GeometryParams g = sample_geometry(rng, spec, 48, 80);
    CHECK(g.crop_h >= 1);
    CHECK(g.crop_w >= 1);
    CHECK(g.crop_y + g.crop_h <= 48);
    CHECK(g.crop_x + g.crop_w <= 80);
    CHECK(g.out_size == 64);
    CHECK(g.rot_deg >= -180.0);
    CHECK(g.rot_deg <= 180.0);
  }
}

TEST_CASE("identical geometry keeps image and saliency pixel-aligned") {
  Image img = random_image(48, 14);
  SaliencyMap map(48, 48);
  for (size_t i = 0; i < map.values.size(); ++i) map.values[i] = img.pixels[i];
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    GeometryParams g = sample_geometry(rng, ViewSpec::query_default(32), 48, 48);
    Image gi = apply_geometry(img, g);
    SaliencyMap gm = apply_geometry(map, g);
    REQUIRE(gm.height == gi.height);
    REQUIRE(gm.width == gi.width);
    for (size_t i = 0; i < gm.values.size(); ++i)
      CHECK(gm.values[i] == doctest::Approx(gi.pixels[i]).epsilon(1e-5));
  }
}

TEST_CASE("make_views is deterministic in the seed") {
  Image img = random_image(64, 16);
  SaliencyMap sal(64, 64, 0.5f);
  ViewSpec q = ViewSpec::query_default(64), k = ViewSpec::key_default(64);
  ViewPair a = make_views(img, sal, q, k, 77);
  ViewPair b = make_views(img, sal, q, k, 77);
  CHECK(a.query.pixels == b.query.pixels);
  CHECK(a.key.pixels == b.key.pixels);
  CHECK(a.key_saliency.values == b.key_saliency.values);
  ViewPair c = make_views(img, sal, q, k, 78);
  CHECK(a.query.pixels != c.query.pixels);
}

TEST_CASE("views come out at the configured size") {
  Rng rng(17);
  Image img = synth_image(2, 64, rng);
  SaliencyMap sal = fine_grained_saliency(img);
  ViewPair v = make_views(img, sal, ViewSpec::query_default(64),
                          ViewSpec::key_default(64), 5);
  CHECK(v.query.height == 64);
  CHECK(v.query.width == 64);
  CHECK(v.key.height == 64);
  CHECK(v.key_saliency.height == 64);
  CHECK(v.key_saliency.width == 64);
  for (float p : v.query.pixels) {
    CHECK(p >= 0.0f);
    CHECK(p <= 1.0f);
  }
}

TEST_CASE("view spec validation") {
  ViewSpec s = ViewSpec::query_default(64);
  s.area_lo = 0.9;
  s.area_hi = 0.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = ViewSpec::query_default(64);
  s.blur_prob = 1.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = ViewSpec::query_default(0);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
