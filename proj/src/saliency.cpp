#include "ssit/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ssit/tensor.hpp"

namespace fs = std::filesystem;

namespace ssit {

namespace {

void check_min_size(const Image& image) {
  if (image.channels < 1)
    throw std::invalid_argument("saliency: image needs >= 1 channel");
  if (std::min(image.height, image.width) < 8)
    throw std::invalid_argument("saliency: image too small, min(H,W) >= 8");
}

bool is_flat(const Image& gray) {
  const auto [mn, mx] =
      std::minmax_element(gray.pixels.begin(), gray.pixels.end());
  return *mx - *mn < 1e-9f;
}

// Integral image with one extra zero row/col; 64-bit accumulation.
std::vector<double> integral(const Image& gray) {
  const size_t h = gray.height, w = gray.width;
  std::vector<double> s((h + 1) * (w + 1), 0.0);
  for (size_t y = 0; y < h; ++y) {
    double row = 0.0;
    for (size_t x = 0; x < w; ++x) {
      row += gray.at(y, x, 0);
      s[(y + 1) * (w + 1) + (x + 1)] = s[y * (w + 1) + (x + 1)] + row;
    }
  }
  return s;
}

double box_mean(const std::vector<double>& s, size_t h, size_t w, size_t y,
                size_t x, size_t r) {
  const size_t y0 = y > r ? y - r : 0;
  const size_t x0 = x > r ? x - r : 0;
  const size_t y1 = std::min(y + r + 1, h);
  const size_t x1 = std::min(x + r + 1, w);
  const double total = s[y1 * (w + 1) + x1] - s[y0 * (w + 1) + x1] -
                       s[y1 * (w + 1) + x0] + s[y0 * (w + 1) + x0];
  return total / static_cast<double>((y1 - y0) * (x1 - x0));
}

// In-place radix-2 FFT, n power of two.
void fft1d(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(n);
}

void fft2d(std::vector<std::complex<double>>& a, size_t h, size_t w,
           bool inverse) {
  std::vector<std::complex<double>> buf(std::max(h, w));
  for (size_t y = 0; y < h; ++y) {
    buf.assign(a.begin() + y * w, a.begin() + (y + 1) * w);
    fft1d(buf, inverse);
    std::copy(buf.begin(), buf.begin() + w, a.begin() + y * w);
  }
  for (size_t x = 0; x < w; ++x) {
    buf.resize(h);
    for (size_t y = 0; y < h; ++y) buf[y] = a[y * w + x];
    fft1d(buf, inverse);
    for (size_t y = 0; y < h; ++y) a[y * w + x] = buf[y];
  }
}

std::vector<double> gaussian_kernel(double sigma) {
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

// Separable Gaussian with clamped borders.
void gaussian_smooth(std::vector<double>& img, size_t h, size_t w,
                     double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(img.size());
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const int xx = std::clamp<int>(static_cast<int>(x) + d, 0,
                                       static_cast<int>(w) - 1);
        acc += img[y * w + xx] * k[d + radius];
      }
      tmp[y * w + x] = acc;
    }
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        const int yy = std::clamp<int>(static_cast<int>(y) + d, 0,
                                       static_cast<int>(h) - 1);
        acc += tmp[yy * w + x] * k[d + radius];
      }
      img[y * w + x] = acc;
    }
}

Image map_to_image(const SaliencyMap& m) {
  Image img(m.height, m.width, 1);
  img.pixels = m.values;
  return img;
}

SaliencyMap image_to_map(const Image& img) {
  SaliencyMap m(img.height, img.width);
  m.values = img.pixels;
  return m;
}

std::string hash_hex(uint64_t h) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace

SaliencyMap fine_grained_saliency(const Image& image,
                                  const FineGrainedParams& params) {
  check_min_size(image);
  const Image gray = to_gray(image);
  const size_t h = gray.height, w = gray.width;
  SaliencyMap out(h, w);
  if (is_flat(gray)) return out;

  std::vector<size_t> radii = params.radii;
  if (radii.empty()) {
    const size_t r = std::max<size_t>(
        1, static_cast<size_t>(std::lround(std::min(h, w) / 64.0)));
    radii = {r, 2 * r, 4 * r, 8 * r};
  }
  const auto s = integral(gray);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      const double v = gray.at(y, x, 0);
      double acc = 0.0;
      for (size_t r : radii) {
        const double m = box_mean(s, h, w, y, x, r);
        acc += std::max(0.0, v - m) + std::max(0.0, m - v);
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  return normalize(out);
}

SaliencyMap spectral_residual_saliency(const Image& image) {
  check_min_size(image);
  const Image gray = to_gray(image);
  SaliencyMap result(gray.height, gray.width);
  if (is_flat(gray)) return result;

  constexpr size_t kN = 64;
  const Image small = resize_bilinear(gray, kN, kN);
  std::vector<std::complex<double>> spec(kN * kN);
  for (size_t i = 0; i < kN * kN; ++i) spec[i] = small.pixels[i];
  fft2d(spec, kN, kN, false);

  std::vector<double> log_amp(kN * kN);
  std::vector<double> phase(kN * kN);
  for (size_t i = 0; i < kN * kN; ++i) {
    log_amp[i] = std::log(std::abs(spec[i]) + 1e-12);
    phase[i] = std::arg(spec[i]);
  }

  // 3x3 box-filtered log amplitude (clamped borders).
  std::vector<double> smooth(kN * kN);
  for (size_t y = 0; y < kN; ++y)
    for (size_t x = 0; x < kN; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const size_t yy = static_cast<size_t>(std::clamp<int>(
              static_cast<int>(y) + dy, 0, static_cast<int>(kN) - 1));
          const size_t xx = static_cast<size_t>(std::clamp<int>(
              static_cast<int>(x) + dx, 0, static_cast<int>(kN) - 1));
          acc += log_amp[yy * kN + xx];
        }
      smooth[y * kN + x] = acc / 9.0;
    }

  for (size_t i = 0; i < kN * kN; ++i) {
    const double residual = log_amp[i] - smooth[i];
    const double amp = std::exp(residual);
    spec[i] = std::polar(amp, phase[i]);
  }
  fft2d(spec, kN, kN, true);

  std::vector<double> sal(kN * kN);
  for (size_t i = 0; i < kN * kN; ++i) sal[i] = std::norm(spec[i]);
  gaussian_smooth(sal, kN, kN, 2.5);

  SaliencyMap coarse(kN, kN);
  for (size_t i = 0; i < kN * kN; ++i)
    coarse.values[i] = static_cast<float>(sal[i]);
  coarse = normalize(coarse);
  return image_to_map(
      resize_bilinear(map_to_image(coarse), gray.height, gray.width));
}

SaliencyMap normalize(const SaliencyMap& map) {
  SaliencyMap out = map;
  float mx = 0.0f;
  for (float v : out.values) mx = std::max(mx, v);
  if (mx <= 0.0f) {
    std::fill(out.values.begin(), out.values.end(), 0.0f);
    return out;
  }
  for (auto& v : out.values) v = std::clamp(v / mx, 0.0f, 1.0f);
  return out;
}

std::vector<float> binarize(const SaliencyMap& map, float threshold) {
  if (!(threshold > 0.0f && threshold < 1.0f))
    throw std::invalid_argument("binarize: threshold must be in (0,1)");
  std::vector<float> y(map.values.size());
  for (size_t i = 0; i < y.size(); ++i)
    y[i] = map.values[i] >= threshold ? 1.0f : 0.0f;
  return y;
}

PatchScores patch_scores(const SaliencyMap& map, size_t patch) {
  if (patch == 0 || map.height % patch != 0 || map.width % patch != 0)
    throw std::invalid_argument(
        "patch_scores: " + std::to_string(map.height) + "x" +
        std::to_string(map.width) + " not divisible by patch " +
        std::to_string(patch));
  PatchScores ps;
  ps.grid_h = map.height / patch;
  ps.grid_w = map.width / patch;
  ps.scores.resize(ps.grid_h * ps.grid_w);
  for (size_t gy = 0; gy < ps.grid_h; ++gy)
    for (size_t gx = 0; gx < ps.grid_w; ++gx) {
      float mx = 0.0f;
      for (size_t y = gy * patch; y < (gy + 1) * patch; ++y)
        for (size_t x = gx * patch; x < (gx + 1) * patch; ++x)
          mx = std::max(mx, map.at(y, x));
      ps.scores[gy * ps.grid_w + gx] = mx;
    }
  return ps;
}

KeepSet select_salient(const PatchScores& scores, double mask_ratio_percent) {
  if (mask_ratio_percent < 0.0 || mask_ratio_percent >= 100.0)
    throw std::invalid_argument("select_salient: mask ratio must be in [0,100)");
  const size_t n = scores.scores.size();
  const size_t removed = static_cast<size_t>(
      std::floor(mask_ratio_percent / 100.0 * static_cast<double>(n)));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Removal order: lowest score first, higher index first on ties.
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores.scores[a] != scores.scores[b])
      return scores.scores[a] < scores.scores[b];
    return a > b;
  });
  KeepSet keep;
  keep.kept_indices.assign(order.begin() + removed, order.end());
  std::sort(keep.kept_indices.begin(), keep.kept_indices.end());
  return keep;
}

uint64_t content_hash(const Image& image) {
  // FNV-1a over dimensions and raw pixel bits.
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const uint64_t dims[3] = {image.height, image.width, image.channels};
  mix(dims, sizeof(dims));
  mix(image.pixels.data(), image.pixels.size() * sizeof(float));
  return h;
}

SaliencyCache::SaliencyCache(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::string SaliencyCache::manifest_path() const {
  return (fs::path(dir_) / "manifest.txt").string();
}

SaliencyMap SaliencyCache::get_or_compute(
    const Image& image, const std::string& backend, const std::string& params,
    const std::function<SaliencyMap(const Image&)>& compute, bool* cache_hit) {
  const uint64_t key =
      Rng::mix(content_hash(image),
               std::hash<std::string>{}(backend + "|" + params));
  const std::string stem = hash_hex(key) + "_" + backend;
  const fs::path map_path = fs::path(dir_) / (stem + ".sstn");
  const fs::path preview_path = fs::path(dir_) / (stem + ".pgm");

  if (fs::exists(map_path)) {
    if (cache_hit) *cache_hit = true;
    Tensor t = load_tensor(map_path.string());
    if (t.rank() != 2)
      throw std::runtime_error(map_path.string() + ": corrupt cache entry");
    SaliencyMap m(t.dim(0), t.dim(1));
    m.values = t.data();
    return m;
  }
  if (cache_hit) *cache_hit = false;

  SaliencyMap m = compute(image);
  Tensor t = Tensor::from_data({m.height, m.width}, m.values);
  const fs::path tmp = map_path.string() + ".tmp";
  save_tensor(tmp.string(), t);
  fs::rename(tmp, map_path);

  Image preview(m.height, m.width, 1);
  preview.pixels = m.values;
  const fs::path ptmp = preview_path.string() + ".tmp";
  save_pgm(ptmp.string(), preview);
  fs::rename(ptmp, preview_path);

  std::ofstream manifest(manifest_path(), std::ios::app);
  manifest << hash_hex(key) << " " << backend << " " << (params.empty() ? "-" : params)
           << " " << map_path.filename().string() << "\n";
  return m;
}

}  // namespace ssit
