#include "ssit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ssit/optimizer.hpp"

namespace ssit {

std::vector<float> extract(const ViTParams& encoder, const Image& image) {
  Tensor tokens = patchify(image, encoder.cfg.patch);
  EncoderOutput out = vit_forward(encoder, tokens);
  const size_t d = encoder.cfg.embed_dim;
  const size_t n = out.patch_reprs.dim(0);
  std::vector<float> repr(2 * d);
  std::copy(out.class_repr.data().begin(), out.class_repr.data().end(),
            repr.begin());
  for (size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += out.patch_reprs.data()[i * d + j];
    repr[d + j] = static_cast<float>(acc / static_cast<double>(n));
  }
  return repr;
}

std::vector<std::vector<float>> extract_all(
    const ViTParams& encoder, const std::vector<LabeledSample>& samples) {
  std::vector<std::vector<float>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(extract(encoder, s.image));
  return out;
}

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

}  // namespace

std::vector<int> knn_classify(const std::vector<std::vector<float>>& train_reprs,
                              const std::vector<int>& train_labels,
                              const std::vector<std::vector<float>>& queries,
                              size_t k, int grades) {
  if (train_reprs.empty())
    throw std::invalid_argument("knn_classify: empty training set");
  if (train_reprs.size() != train_labels.size())
    throw std::invalid_argument("knn_classify: reprs/labels size mismatch");
  if (k > train_reprs.size())
    throw std::invalid_argument("knn_classify: k exceeds training set");
  std::vector<int> out;
  out.reserve(queries.size());
  std::vector<size_t> order(train_reprs.size());
  std::vector<double> sims(train_reprs.size());
  for (const auto& q : queries) {
    for (size_t i = 0; i < train_reprs.size(); ++i)
      sims[i] = cosine(q, train_reprs[i]);
    std::iota(order.begin(), order.end(), 0);
    // stable: similarity ties resolved by dataset order
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return sims[a] > sims[b]; });
    std::vector<size_t> votes(grades, 0);
    for (size_t i = 0; i < k; ++i) votes[train_labels[order[i]]] += 1;
    int best = 0;
    for (int g = 1; g < grades; ++g)
      if (votes[g] > votes[best]) best = g;  // ties keep the smaller grade
    out.push_back(best);
  }
  return out;
}

long long ConfusionMatrix::total() const {
  long long t = 0;
  for (long long c : counts) t += c;
  return t;
}

double quadratic_weighted_kappa(const ConfusionMatrix& cm) {
  const int g = cm.grades;
  const long long total = cm.total();
  if (total <= 0)
    throw std::invalid_argument("quadratic_weighted_kappa: empty matrix");
  if (g < 2) return 0.0;
  std::vector<double> row(g, 0.0), col(g, 0.0);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      row[i] += static_cast<double>(cm.at(i, j));
      col[j] += static_cast<double>(cm.at(i, j));
    }
  const double denom_w = static_cast<double>(g - 1) * (g - 1);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const double w = static_cast<double>(i - j) * (i - j) / denom_w;
      num += w * static_cast<double>(cm.at(i, j));
      den += w * row[i] * col[j] / static_cast<double>(total);
    }
  if (den == 0.0) return 0.0;  // degenerate: no expected disagreement
  return 1.0 - num / den;
}

ConfusionMatrix confusion(const std::vector<int>& truth,
                          const std::vector<int>& pred, int grades) {
  if (truth.size() != pred.size())
    throw std::invalid_argument("confusion: size mismatch");
  ConfusionMatrix cm(grades);
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= grades || pred[i] < 0 || pred[i] >= grades)
      throw std::invalid_argument("confusion: label outside [0, grades)");
    cm.add(truth[i], pred[i]);
  }
  return cm;
}

double knn_eval(const ViTParams& encoder, const Dataset& data, size_t k) {
  auto train_reprs = extract_all(encoder, data.train);
  std::vector<int> train_labels;
  for (const auto& s : data.train) train_labels.push_back(s.grade);
  auto test_reprs = extract_all(encoder, data.test);
  std::vector<int> truth;
  for (const auto& s : data.test) truth.push_back(s.grade);
  auto pred = knn_classify(train_reprs, train_labels, test_reprs, k,
                           data.grades);
  return quadratic_weighted_kappa(confusion(truth, pred, data.grades));
}

namespace {

double head_kappa(const Tensor& w, const Tensor& b,
                  const std::vector<std::vector<float>>& reprs,
                  const std::vector<int>& labels, int grades) {
  std::vector<int> pred;
  pred.reserve(reprs.size());
  const size_t dim = w.dim(0);
  for (const auto& r : reprs) {
    int best = 0;
    double best_v = -1e300;
    for (int g = 0; g < grades; ++g) {
      double v = b.data()[g];
      for (size_t j = 0; j < dim; ++j)
        v += static_cast<double>(r[j]) * w.data()[j * grades + g];
      if (v > best_v) {
        best_v = v;
        best = g;
      }
    }
    pred.push_back(best);
  }
  return quadratic_weighted_kappa(confusion(labels, pred, grades));
}

void check_not_degenerate(const std::vector<int>& labels) {
  for (size_t i = 1; i < labels.size(); ++i)
    if (labels[i] != labels[0]) return;
  throw std::invalid_argument("probe: single-class training set");
}

}  // namespace

ProbeResult train_linear_head(const std::vector<std::vector<float>>& train_reprs,
                              const std::vector<int>& train_labels,
                              const std::vector<std::vector<float>>& val_reprs,
                              const std::vector<int>& val_labels,
                              const std::vector<std::vector<float>>& test_reprs,
                              const std::vector<int>& test_labels, int grades,
                              size_t epochs, double lr, uint64_t seed) {
  if (train_reprs.empty()) throw std::invalid_argument("probe: empty train set");
  check_not_degenerate(train_labels);
  const size_t dim = train_reprs[0].size();
  Rng rng(Rng::mix(seed, 0x9ead));
  Tensor w = Tensor::trunc_normal({dim, static_cast<size_t>(grades)}, rng,
                                  0.02f, true);
  Tensor b = Tensor(Shape{static_cast<size_t>(grades)}, 0.0f, true);
  std::vector<Tensor> params{w, b};
  AdamWState opt;
  const AdamWConfig opt_cfg{0.9f, 0.999f, 1e-8f, 0.0f};

  Tensor best_w = w.clone();
  Tensor best_b = b.clone();
  double best_val = -2.0;

  const size_t n = train_reprs.size();
  const size_t bs = std::min<size_t>(64, n);
  std::vector<size_t> order(n);
  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);
    for (size_t start = 0; start < n; start += bs) {
      const size_t end = std::min(start + bs, n);
      std::vector<float> flat;
      std::vector<size_t> targets;
      flat.reserve((end - start) * dim);
      for (size_t i = start; i < end; ++i) {
        flat.insert(flat.end(), train_reprs[order[i]].begin(),
                    train_reprs[order[i]].end());
        targets.push_back(static_cast<size_t>(train_labels[order[i]]));
      }
      Tensor x = Tensor::from_data({end - start, dim}, std::move(flat));
      Tensor logits = add_rowvec(matmul(x, w), b);
      Tensor loss = cross_entropy_index(logits, targets);
      for (auto& p : params) p.zero_grad();
      backward(loss);
      adamw_step(params, opt, opt_cfg, static_cast<float>(lr));
    }
    if (!val_reprs.empty()) {
      const double vk = head_kappa(w, b, val_reprs, val_labels, grades);
      if (vk > best_val) {
        best_val = vk;
        best_w = w.clone();
        best_b = b.clone();
      }
    }
  }
  if (val_reprs.empty() || epochs == 0) {
    best_w = w.clone();
    best_b = b.clone();
    best_val = val_reprs.empty()
                   ? 0.0
                   : head_kappa(w, b, val_reprs, val_labels, grades);
  }
  ProbeResult r;
  r.best_val_kappa = best_val;
  r.test_kappa = head_kappa(best_w, best_b, test_reprs, test_labels, grades);
  return r;
}

namespace {

std::vector<int> labels_of(const std::vector<LabeledSample>& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.grade);
  return out;
}

}  // namespace

ProbeResult linear_probe(const ViTParams& encoder, const Dataset& data,
                         size_t epochs, double lr, uint64_t seed) {
  return train_linear_head(extract_all(encoder, data.train), labels_of(data.train),
                           extract_all(encoder, data.val), labels_of(data.val),
                           extract_all(encoder, data.test), labels_of(data.test),
                           data.grades, epochs, lr, seed);
}

ProbeResult fine_tune(ViTParams& encoder, const Dataset& data, size_t epochs,
                      double lr, uint64_t seed, bool freeze_backbone) {
  if (freeze_backbone) return linear_probe(encoder, data, epochs, lr, seed);

  check_not_degenerate(labels_of(data.train));
  const size_t d = encoder.cfg.embed_dim;
  const int grades = data.grades;
  Rng rng(Rng::mix(seed, 0xf17e));
  Tensor w = Tensor::trunc_normal({2 * d, static_cast<size_t>(grades)}, rng,
                                  0.02f, true);
  Tensor b = Tensor(Shape{static_cast<size_t>(grades)}, 0.0f, true);
  std::vector<Tensor> params = encoder.all();
  params.push_back(w);
  params.push_back(b);
  AdamWState opt;
  const AdamWConfig opt_cfg{0.9f, 0.999f, 1e-8f, 0.0f};

  auto representation = [&](const Image& img) {
    Tensor tokens = patchify(img, encoder.cfg.patch);
    EncoderOutput out = vit_forward(encoder, tokens);
    const size_t n = out.patch_reprs.dim(0);
    Tensor ones = Tensor(Shape{1, n}, 1.0f / static_cast<float>(n));
    Tensor mean_patch = matmul(ones, out.patch_reprs);
    return concat_cols({out.class_repr, mean_patch});  // [1 x 2D]
  };

  auto eval_kappa = [&](const std::vector<LabeledSample>& split) {
    std::vector<int> truth, pred;
    for (const auto& s : split) {
      Tensor logits = add_rowvec(matmul(representation(s.image), w), b);
      int best = 0;
      for (int g = 1; g < grades; ++g)
        if (logits.data()[g] > logits.data()[best]) best = g;
      truth.push_back(s.grade);
      pred.push_back(best);
    }
    return quadratic_weighted_kappa(confusion(truth, pred, grades));
  };

  std::vector<Tensor> best_snapshot;
  double best_val = -2.0;
  auto snapshot = [&]() {
    best_snapshot.clear();
    for (const auto& p : params) best_snapshot.push_back(p.clone());
  };
  snapshot();

  const size_t n = data.train.size();
  const size_t bs = std::min<size_t>(16, n);
  std::vector<size_t> order(n);
  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);
    for (size_t start = 0; start < n; start += bs) {
      const size_t end = std::min(start + bs, n);
      std::vector<Tensor> rows;
      std::vector<size_t> targets;
      for (size_t i = start; i < end; ++i) {
        rows.push_back(representation(data.train[order[i]].image));
        targets.push_back(static_cast<size_t>(data.train[order[i]].grade));
      }
      Tensor logits = add_rowvec(matmul(concat_rows(rows), w), b);
      Tensor loss = cross_entropy_index(logits, targets);
      for (auto& p : params) p.zero_grad();
      backward(loss);
      adamw_step(params, opt, opt_cfg, static_cast<float>(lr));
    }
    const double vk = data.val.empty() ? 0.0 : eval_kappa(data.val);
    if (vk > best_val) {
      best_val = vk;
      snapshot();
    }
  }
  for (size_t i = 0; i < params.size(); ++i)
    params[i].mutable_data() = best_snapshot[i].data();

  ProbeResult r;
  r.best_val_kappa = best_val;
  r.test_kappa = eval_kappa(data.test);
  return r;
}

}  // namespace ssit
