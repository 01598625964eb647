#include "ssit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace ssit {

Image synth_image(int grade, size_t image_size, Rng& rng) {
  const double s = static_cast<double>(image_size);
  Image img(image_size, image_size, 1, 0.02f);

  // dark "fundus" disc
  const double cy = s / 2.0 + rng.uniform(-2.0, 2.0);
  const double cx = s / 2.0 + rng.uniform(-2.0, 2.0);
  const double disc_r = s * 0.44 + rng.uniform(-2.0, 2.0);
  const float disc_v = static_cast<float>(0.30 + rng.uniform(-0.05, 0.05));
  for (size_t y = 0; y < image_size; ++y)
    for (size_t x = 0; x < image_size; ++x) {
      const double dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx <= disc_r * disc_r) img.at(y, x, 0) = disc_v;
    }

  // grade-many bright lesions inside the disc
  for (int l = 0; l < grade; ++l) {
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const double rad = rng.uniform(0.0, disc_r * 0.7);
    const double ly = cy + rad * std::sin(ang);
    const double lx = cx + rad * std::cos(ang);
    const double lr = rng.uniform(3.0, 5.0);
    const float lv = static_cast<float>(0.85 + rng.uniform(-0.10, 0.10));
    for (size_t y = 0; y < image_size; ++y)
      for (size_t x = 0; x < image_size; ++x) {
        const double dy = y - ly, dx = x - lx;
        if (dy * dy + dx * dx <= lr * lr) img.at(y, x, 0) = lv;
      }
  }

  for (auto& v : img.pixels)
    v = std::clamp(static_cast<float>(v + rng.normal() * 0.02), 0.0f, 1.0f);
  return img;
}

namespace {

std::vector<LabeledSample> make_split(size_t n, const SynthConfig& cfg,
                                      Rng& rng) {
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const int grade = static_cast<int>(i % cfg.grades);
    out.push_back({synth_image(grade, cfg.image_size, rng), grade});
  }
  return out;
}

}  // namespace

Dataset make_synthetic_dataset(const SynthConfig& cfg) {
  if (cfg.grades < 2) throw std::invalid_argument("synth: need >= 2 grades");
  Dataset d;
  d.grades = cfg.grades;
  Rng rng_train(Rng::mix(cfg.seed, 0x7a1));
  Rng rng_val(Rng::mix(cfg.seed, 0x7a2));
  Rng rng_test(Rng::mix(cfg.seed, 0x7a3));
  d.train = make_split(cfg.n_train, cfg, rng_train);
  d.val = make_split(cfg.n_val, cfg, rng_val);
  d.test = make_split(cfg.n_test, cfg, rng_test);
  return d;
}

void write_dataset(const Dataset& data, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream index(fs::path(dir) / "index.tsv");
  if (!index) throw std::runtime_error("write_dataset: cannot open index in " + dir);
  auto dump = [&](const std::vector<LabeledSample>& split,
                  const std::string& tag) {
    for (size_t i = 0; i < split.size(); ++i) {
      std::ostringstream name;
      name << tag << "_" << i << ".pgm";
      save_pgm((fs::path(dir) / "images" / name.str()).string(),
               split[i].image);
      index << name.str() << "\t" << split[i].grade << "\t" << tag << "\n";
    }
  };
  dump(data.train, "train");
  dump(data.val, "val");
  dump(data.test, "test");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream index(fs::path(dir) / "index.tsv");
  if (!index)
    throw std::runtime_error("load_dataset: missing index.tsv in " + dir);
  Dataset d;
  int max_grade = 1;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, tag;
    int grade;
    if (!(ls >> name >> grade >> tag))
      throw std::runtime_error("load_dataset: malformed index line: " + line);
    LabeledSample s;
    s.image = load_image((fs::path(dir) / "images" / name).string());
    s.grade = grade;
    max_grade = std::max(max_grade, grade);
    if (tag == "train")
      d.train.push_back(std::move(s));
    else if (tag == "val")
      d.val.push_back(std::move(s));
    else if (tag == "test")
      d.test.push_back(std::move(s));
    else
      throw std::runtime_error("load_dataset: unknown split tag " + tag);
  }
  d.grades = max_grade + 1;
  return d;
}

}  // namespace ssit
