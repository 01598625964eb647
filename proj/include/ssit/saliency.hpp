#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ssit/image.hpp"

namespace ssit {

// Per-pixel saliency field aligned with its source image. After
// normalize() all values are in [0,1] and the max is exactly 1 unless the
// map is identically zero.
struct SaliencyMap {
  size_t height = 0;
  size_t width = 0;
  std::vector<float> values;

  SaliencyMap() = default;
  SaliencyMap(size_t h, size_t w, float fill = 0.0f)
      : height(h), width(w), values(h * w, fill) {}
  float& at(size_t y, size_t x) { return values[y * width + x]; }
  float at(size_t y, size_t x) const { return values[y * width + x]; }
};

struct PatchScores {
  size_t grid_h = 0;
  size_t grid_w = 0;
  std::vector<float> scores;  // row-major patch order
};

// Strictly increasing kept patch indices.
struct KeepSet {
  std::vector<size_t> kept_indices;
};

struct FineGrainedParams {
  // Surround radii; empty means {r, 2r, 4r, 8r} with
  // r = max(1, round(min(H,W)/64)).
  std::vector<size_t> radii;
};

// Center-surround difference saliency over multiple surround scales,
// intensity channel only. Box means come from a 64-bit integral image.
SaliencyMap fine_grained_saliency(const Image& image,
                                  const FineGrainedParams& params = {});

// Log-amplitude spectral residual at a fixed 64x64 working resolution,
// smoothed with a Gaussian (sigma 2.5) and resized back.
SaliencyMap spectral_residual_saliency(const Image& image);

SaliencyMap normalize(const SaliencyMap& map);

// y_i = 1 iff value_i >= t; t must lie in (0,1).
std::vector<float> binarize(const SaliencyMap& map, float threshold);

// Max saliency per P x P patch; H and W must be divisible by P.
PatchScores patch_scores(const SaliencyMap& map, size_t patch);

// Removes floor(m/100 * N) lowest-scoring patches. Score ties are broken
// by removing the higher patch index first.
KeepSet select_salient(const PatchScores& scores, double mask_ratio_percent);

uint64_t content_hash(const Image& image);

// Disk cache keyed by content hash + backend + parameter string. Entries
// are an exact-value tensor record plus an 8-bit PGM preview; writes go
// through a temp file and rename.
class SaliencyCache {
 public:
  explicit SaliencyCache(std::string dir);

  SaliencyMap get_or_compute(
      const Image& image, const std::string& backend,
      const std::string& params,
      const std::function<SaliencyMap(const Image&)>& compute,
      bool* cache_hit = nullptr);

  const std::string& dir() const { return dir_; }
  std::string manifest_path() const;

 private:
  std::string dir_;
};

}  // namespace ssit
