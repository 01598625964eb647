#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ssit/saliency.hpp"
#include "ssit/synth.hpp"

using namespace ssit;
namespace fs = std::filesystem;

namespace {

Image spot_image(size_t n = 64) {
  Image img(n, n, 1, 0.1f);
  const size_t lo = n * 7 / 16, hi = n * 9 / 16;
  for (size_t y = lo; y < hi; ++y)
    for (size_t x = lo; x < hi; ++x) img.at(y, x, 0) = 0.95f;
  return img;
}

// Periodic texture with one small odd patch: the kind of stimulus the
// spectral-residual backend is designed to pop out.
Image striped_spot_image() {
  Image img(64, 64, 1);
  for (size_t y = 0; y < 64; ++y)
    for (size_t x = 0; x < 64; ++x)
      img.at(y, x, 0) =
          0.4f + 0.2f * std::sin(2.0f * static_cast<float>(M_PI) * x / 8.0f);
  for (size_t y = 30; y < 34; ++y)
    for (size_t x = 30; x < 34; ++x) img.at(y, x, 0) = 0.95f;
  return img;
}

float mean_in(const SaliencyMap& m, size_t y0, size_t y1, size_t x0,
              size_t x1) {
  double s = 0;
  size_t n = 0;
  for (size_t y = y0; y < y1; ++y)
    for (size_t x = x0; x < x1; ++x) {
      s += m.at(y, x);
      ++n;
    }
  return static_cast<float>(s / n);
}

}  // namespace

TEST_CASE("constant images give all-zero maps in both backends") {
  Image flat(32, 32, 1, 0.5f);
  for (const SaliencyMap& m :
       {fine_grained_saliency(flat), spectral_residual_saliency(flat)}) {
    CHECK(m.height == 32);
    CHECK(m.width == 32);
    for (float v : m.values) CHECK(v == 0.0f);
  }
}

TEST_CASE("fine-grained backend highlights a bright spot on a dull field") {
  Image img = spot_image();
  SaliencyMap m = fine_grained_saliency(img);
  CHECK(mean_in(m, 28, 36, 28, 36) > mean_in(m, 4, 12, 4, 12));
  CHECK(*std::max_element(m.values.begin(), m.values.end()) ==
        doctest::Approx(1.0f));
  for (float v : m.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("spectral backend pops an odd patch out of a periodic texture") {
  Image img = striped_spot_image();
  SaliencyMap m = spectral_residual_saliency(img);
  CHECK(mean_in(m, 29, 35, 29, 35) > 10.0f * mean_in(m, 4, 12, 4, 12));
  CHECK(*std::max_element(m.values.begin(), m.values.end()) ==
        doctest::Approx(1.0f));
  for (float v : m.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("normalize is idempotent and keeps zero maps at zero") {
  SaliencyMap m(4, 4);
  m.at(1, 2) = 3.0f;
  m.at(0, 0) = 1.5f;
  SaliencyMap n = normalize(m);
  CHECK(n.at(1, 2) == doctest::Approx(1.0f));
  CHECK(n.at(0, 0) == doctest::Approx(0.5f));
  SaliencyMap nn = normalize(n);
  CHECK(nn.values == n.values);
  SaliencyMap z(4, 4);
  SaliencyMap nz = normalize(z);
  for (float v : nz.values) CHECK(v == 0.0f);
}

TEST_CASE("binarize thresholds and validates") {
  SaliencyMap m(1, 4);
  m.values = {0.2f, 0.5f, 0.7f, 0.49f};
  auto y = binarize(m, 0.5f);
  CHECK(y == std::vector<float>{0, 1, 1, 0});
  CHECK_THROWS_AS(binarize(m, 0.0f), std::invalid_argument);
  CHECK_THROWS_AS(binarize(m, 1.0f), std::invalid_argument);
}

TEST_CASE("patch_scores takes the per-patch max and checks divisibility") {
  SaliencyMap m(4, 4);
  m.at(0, 1) = 0.8f;
  m.at(3, 3) = 0.6f;
  PatchScores s = patch_scores(m, 2);
  CHECK(s.grid_h == 2);
  CHECK(s.grid_w == 2);
  CHECK(s.scores == std::vector<float>{0.8f, 0.0f, 0.0f, 0.6f});
  CHECK_THROWS_AS(patch_scores(m, 3), std::invalid_argument);
}

TEST_CASE("select_salient removes the lowest scores, ties break high-index") {
  PatchScores s;
  s.grid_h = 1;
  s.grid_w = 8;
  SUBCASE("all-equal scores, m=50 keeps the first half") {
    s.scores.assign(8, 0.3f);
    KeepSet k = select_salient(s, 50.0);
    CHECK(k.kept_indices == std::vector<size_t>{0, 1, 2, 3});
  }
  SUBCASE("distinct scores keep the top") {
    s.scores = {0.1f, 0.9f, 0.2f, 0.8f, 0.3f, 0.7f, 0.4f, 0.6f};
    KeepSet k = select_salient(s, 25.0);  // removes the lowest 2
    CHECK(k.kept_indices == std::vector<size_t>{1, 3, 4, 5, 6, 7});
  }
  SUBCASE("m=0 keeps everything") {
    s.scores.assign(8, 0.5f);
    KeepSet k = select_salient(s, 0.0);
    CHECK(k.kept_indices.size() == 8);
  }
  SUBCASE("invalid ratio") {
    s.scores.assign(8, 0.5f);
    CHECK_THROWS_AS(select_salient(s, 100.0), std::invalid_argument);
    CHECK_THROWS_AS(select_salient(s, -1.0), std::invalid_argument);
  }
}

TEST_CASE("select_salient N=196 m=25 keeps exactly 147") {
  PatchScores s;
  s.grid_h = 14;
  s.grid_w = 14;
  Rng rng(8);
  for (int i = 0; i < 196; ++i)
    s.scores.push_back(static_cast<float>(rng.uniform()));
  KeepSet k = select_salient(s, 25.0);
  CHECK(k.kept_indices.size() == 147);
  CHECK(std::is_sorted(k.kept_indices.begin(), k.kept_indices.end()));
}

TEST_CASE("content_hash is stable and pixel-sensitive") {
  Image a = spot_image(16);
  Image b = a;
  CHECK(content_hash(a) == content_hash(b));
  b.at(0, 0, 0) += 0.001f;
  CHECK(content_hash(a) != content_hash(b));
}

TEST_CASE("saliency cache round-trips exactly and records a manifest") {
  const std::string dir =
      (fs::temp_directory_path() / "ssit_cache_test").string();
  fs::remove_all(dir);
  SaliencyCache cache(dir);
  Image img = spot_image(32);
  int computes = 0;
  auto compute = [&](const Image& i) {
    ++computes;
    return fine_grained_saliency(i);
  };
  bool hit = true;
  SaliencyMap first = cache.get_or_compute(img, "fine", "default", compute, &hit);
  CHECK(!hit);
  SaliencyMap second = cache.get_or_compute(img, "fine", "default", compute, &hit);
  CHECK(hit);
  CHECK(computes == 1);
  CHECK(second.values == first.values);  // exact, not re-quantized
  CHECK(fs::exists(cache.manifest_path()));
  std::ifstream mf(cache.manifest_path());
  std::string line;
  CHECK(std::getline(mf, line));
  CHECK(line.find("fine") != std::string::npos);
  // different backend key -> separate entry
  cache.get_or_compute(img, "spectral", "default",
                       [](const Image& i) { return spectral_residual_saliency(i); },
                       &hit);
  CHECK(!hit);
  fs::remove_all(dir);
}

TEST_CASE("synthetic lesions rank among the most salient patches") {
  Rng rng(4);
  Image img = synth_image(3, 64, rng);
  SaliencyMap m = fine_grained_saliency(img);
  PatchScores s = patch_scores(m, 8);
  KeepSet k = select_salient(s, 25.0);
  CHECK(k.kept_indices.size() == 48);  // 64 - floor(0.25 * 64)
}
