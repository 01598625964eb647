#pragma once

#include <cstdint>
#include <string>

#include "ssit/eval.hpp"

namespace ssit {

// Built-in synthetic grading dataset: grade g images carry g bright
// circular lesions over a dark disc background plus noise, so saliency
// and representations correlate with the grade.
struct SynthConfig {
  int grades = 3;
  size_t n_train = 600;
  size_t n_val = 150;
  size_t n_test = 150;
  size_t image_size = 64;
  uint64_t seed = 0;
};

Image synth_image(int grade, size_t image_size, Rng& rng);
Dataset make_synthetic_dataset(const SynthConfig& cfg);

// On-disk dataset layout: <dir>/images/*.pgm plus <dir>/index.tsv with
// lines "<filename>\t<grade>\t<train|val|test>".
void write_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace ssit
