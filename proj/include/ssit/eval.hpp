#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssit/image.hpp"
#include "ssit/pretrain.hpp"
#include "ssit/vit.hpp"

namespace ssit {

struct LabeledSample {
  Image image;
  int grade = 0;
};

struct Dataset {
  std::vector<LabeledSample> train, val, test;
  int grades = 3;
};

// [class_repr || mean of patch_reprs], length 2 * embed_dim.
std::vector<float> extract(const ViTParams& encoder, const Image& image);
std::vector<std::vector<float>> extract_all(const ViTParams& encoder,
                                            const std::vector<LabeledSample>&);

// Cosine-similarity majority vote among the top-k neighbors. Vote ties go
// to the smallest grade index; similarity ties keep dataset order.
std::vector<int> knn_classify(const std::vector<std::vector<float>>& train_reprs,
                              const std::vector<int>& train_labels,
                              const std::vector<std::vector<float>>& queries,
                              size_t k, int grades);

struct ConfusionMatrix {
  int grades = 0;
  std::vector<long long> counts;  // rows = truth, cols = prediction

  explicit ConfusionMatrix(int g) : grades(g), counts(g * g, 0) {}
  void add(int truth, int pred) { counts[truth * grades + pred] += 1; }
  long long at(int i, int j) const { return counts[i * grades + j]; }
  long long total() const;
};

// kappa = 1 - sum(w*O)/sum(w*E), w_ij = (i-j)^2/(G-1)^2, E from marginals.
// A zero expected-disagreement denominator is degenerate and reports 0.
double quadratic_weighted_kappa(const ConfusionMatrix& cm);

ConfusionMatrix confusion(const std::vector<int>& truth,
                          const std::vector<int>& pred, int grades);

double knn_eval(const ViTParams& encoder, const Dataset& data, size_t k = 10);

struct ProbeResult {
  double test_kappa = 0.0;
  double best_val_kappa = 0.0;
};

// Single linear layer + softmax cross entropy on frozen representation
// vectors; model selection by best validation kappa.
ProbeResult train_linear_head(const std::vector<std::vector<float>>& train_reprs,
                              const std::vector<int>& train_labels,
                              const std::vector<std::vector<float>>& val_reprs,
                              const std::vector<int>& val_labels,
                              const std::vector<std::vector<float>>& test_reprs,
                              const std::vector<int>& test_labels, int grades,
                              size_t epochs, double lr, uint64_t seed);

ProbeResult linear_probe(const ViTParams& encoder, const Dataset& data,
                         size_t epochs, double lr, uint64_t seed);

// All parameters trainable unless freeze_backbone, in which case this
// reduces to linear_probe on the same cached representations.
ProbeResult fine_tune(ViTParams& encoder, const Dataset& data, size_t epochs,
                      double lr, uint64_t seed, bool freeze_backbone = false);

}  // namespace ssit
