#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ssit/augment.hpp"
#include "ssit/optimizer.hpp"
#include "ssit/saliency.hpp"
#include "ssit/tensor.hpp"
#include "ssit/vit.hpp"

namespace ssit {

// Plain linear stack with GELU between layers (none after the last).
struct MlpHead {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static MlpHead init(const std::vector<size_t>& dims, Rng& rng,
                      bool requires_grad = true);
  Tensor forward(const Tensor& x) const;
  std::vector<std::pair<std::string, Tensor>> named(
      const std::string& prefix) const;
};

struct HeadConfig {
  size_t proj_hidden = 256;  // 4 x embed_dim at desk scale
  size_t proj_out = 64;
  size_t pred_hidden = 256;

  static HeadConfig desk(size_t embed_dim);
};

// Learnable branch: backbone + 3-layer projection + 2-layer prediction
// head, plus the one-linear-layer saliency segmentation decoder.
struct QueryEncoder {
  ViTParams backbone;
  MlpHead proj;  // D -> h -> h -> d_out
  MlpHead pred;  // d_out -> h' -> d_out
  Tensor seg_weight;  // [D x P^2]
  Tensor seg_bias;    // [P^2]

  static QueryEncoder init(const ViTConfig& cfg, const HeadConfig& heads,
                           Rng& rng);
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
};

// EMA shadow of the query branch (backbone + projection); never receives
// gradients.
struct KeyEncoder {
  ViTParams backbone;
  MlpHead proj;

  static KeyEncoder from_query(const QueryEncoder& q);
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
};

struct ScheduleConfig {
  double base_lr = 1e-3;
  size_t warmup_epochs = 5;
  size_t total_epochs = 30;
  size_t steps_per_epoch = 1;
  double alpha_lo = 0.99;
  double alpha_hi = 1.0;
  double tau = 0.2;
  double mask_ratio = 25.0;  // percent
  double lambda_cl = 1.0;
  double lambda_seg = 10.0;
  size_t batch_size = 32;
  double weight_decay = 0.1;
  double bin_threshold = 0.5;

  size_t total_steps() const { return total_epochs * steps_per_epoch; }
  size_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }
  void validate() const;
};

struct TrainState {
  QueryEncoder query;
  KeyEncoder key;
  AdamWState opt;
  size_t step = 0;
  size_t epoch = 0;
  ScheduleConfig sched;
  uint64_t seed = 0;
};

// Linear warmup to base_lr, then cosine decay to 0; alpha runs a cosine
// from alpha_lo at step 0 to alpha_hi at the final step. Steps past the
// end clamp to the final values.
std::pair<double, double> schedules(size_t step, const ScheduleConfig& cfg);

// theta_k <- alpha * theta_k + (1 - alpha) * theta_q, elementwise.
void momentum_update(KeyEncoder& key, const QueryEncoder& query, double alpha);

// InfoNCE over in-batch negatives: mean_i -log softmax(q_i . k_j / tau)_i.
// Rows must be L2-normalized; gradients flow to q only.
Tensor contrastive_loss(const Tensor& q_features, const Tensor& k_features,
                        double tau);

// Pixel-mean binary cross entropy with logs clamped at 1e-7.
Tensor seg_loss(const Tensor& y_hat, const std::vector<float>& y);

// Per-patch linear map to P^2 logits, sigmoid, tiled row-major to
// [grid_h*P x grid_w*P].
Tensor decode_segmentation(const Tensor& patch_reprs, const Tensor& seg_weight,
                           const Tensor& seg_bias, size_t patch, size_t grid_h,
                           size_t grid_w);

// Everything train_step needs for one sample, precomputed by the loader.
struct SampleViews {
  Tensor query_tokens;
  Tensor key_tokens;
  PatchScores key_scores;
  std::vector<float> seg_target;  // binary, query-view resolution
};

SampleViews build_sample(const Image& image, const SaliencyMap& saliency,
                         const ViewSpec& query_spec, const ViewSpec& key_spec,
                         uint64_t seed, size_t patch, double bin_threshold);

struct StepMetrics {
  size_t step = 0;
  double lr = 0.0;
  double alpha = 0.0;
  double loss_cl = 0.0;
  double loss_seg = 0.0;
  double loss = 0.0;
};

StepMetrics train_step(TrainState& state, const std::vector<SampleViews>& batch);

TrainState init_train_state(const ViTConfig& vit, const HeadConfig& heads,
                            const ScheduleConfig& sched, uint64_t seed);

// Runs epochs [state.epoch, sched.total_epochs); shuffling and per-sample
// view seeds are pure functions of (seed, epoch, index), so a resumed run
// replays the uninterrupted metric stream. `stop_after_epoch` interrupts the
// run once that many epochs have completed without altering the schedule,
// which still spans the full sched.total_epochs.
void run_pretraining(TrainState& state, const std::vector<Image>& images,
                     const std::vector<SaliencyMap>& maps,
                     const ViewSpec& query_spec, const ViewSpec& key_spec,
                     const std::function<void(const StepMetrics&)>& on_step,
                     const std::function<void(const TrainState&)>& on_epoch_end =
                         nullptr,
                     size_t stop_after_epoch = SIZE_MAX);

// "SSCK" checkpoint: JSON header (schedule, counters, optimizer scalars)
// followed by named tensor records for both encoders and the moments.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace ssit
