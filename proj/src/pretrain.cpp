#include "ssit/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace ssit {

using nlohmann::json;

// ------------------------------------------------------------------ heads

MlpHead MlpHead::init(const std::vector<size_t>& dims, Rng& rng,
                      bool requires_grad) {
  if (dims.size() < 2) throw std::invalid_argument("MlpHead: need >= 2 dims");
  MlpHead h;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    // Fan-in scaling keeps activations O(1) through the stack; a flat small
    // sigma would shrink the output norm exponentially with depth and make
    // the normalized-feature losses ill-conditioned at init.
    const float sigma = 1.0f / std::sqrt(static_cast<float>(dims[i]));
    h.weights.push_back(
        Tensor::trunc_normal({dims[i], dims[i + 1]}, rng, sigma, requires_grad));
    h.biases.push_back(Tensor(Shape{dims[i + 1]}, 0.0f, requires_grad));
  }
  return h;
}

Tensor MlpHead::forward(const Tensor& x) const {
  Tensor z = x;
  for (size_t i = 0; i < weights.size(); ++i) {
    z = add_rowvec(matmul(z, weights[i]), biases[i]);
    if (i + 1 < weights.size()) z = gelu(z);
  }
  return z;
}

std::vector<std::pair<std::string, Tensor>> MlpHead::named(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < weights.size(); ++i) {
    out.emplace_back(prefix + std::to_string(i) + ".weight", weights[i]);
    out.emplace_back(prefix + std::to_string(i) + ".bias", biases[i]);
  }
  return out;
}

HeadConfig HeadConfig::desk(size_t embed_dim) {
  return HeadConfig{4 * embed_dim, 64, 4 * embed_dim};
}

QueryEncoder QueryEncoder::init(const ViTConfig& cfg, const HeadConfig& heads,
                                Rng& rng) {
  QueryEncoder q;
  q.backbone = ViTParams::init(cfg, rng);
  q.proj = MlpHead::init(
      {cfg.embed_dim, heads.proj_hidden, heads.proj_hidden, heads.proj_out},
      rng);
  q.pred = MlpHead::init({heads.proj_out, heads.pred_hidden, heads.proj_out},
                         rng);
  q.seg_weight = Tensor::trunc_normal({cfg.embed_dim, cfg.patch * cfg.patch},
                                      rng, 0.02f, true);
  q.seg_bias = Tensor(Shape{cfg.patch * cfg.patch}, 0.0f, true);
  return q;
}

std::vector<std::pair<std::string, Tensor>> QueryEncoder::named() const {
  auto out = backbone.named();
  for (auto& kv : proj.named("proj.")) out.push_back(kv);
  for (auto& kv : pred.named("pred.")) out.push_back(kv);
  out.emplace_back("seg.weight", seg_weight);
  out.emplace_back("seg.bias", seg_bias);
  return out;
}

std::vector<Tensor> QueryEncoder::all() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named()) out.push_back(t);
  return out;
}

KeyEncoder KeyEncoder::from_query(const QueryEncoder& q) {
  KeyEncoder k;
  // Deep-copy backbone + projection without gradients.
  auto copy_head = [](const MlpHead& h) {
    MlpHead out;
    for (const auto& w : h.weights) out.weights.push_back(w.clone(false));
    for (const auto& b : h.biases) out.biases.push_back(b.clone(false));
    return out;
  };
  ViTParams b;
  b.cfg = q.backbone.cfg;
  b.patch_weight = q.backbone.patch_weight.clone(false);
  b.patch_bias = q.backbone.patch_bias.clone(false);
  b.class_token = q.backbone.class_token.clone(false);
  b.pos_embed = q.backbone.pos_embed.clone(false);
  for (const auto& blk : q.backbone.blocks) {
    ViTParams::Block nb;
    nb.ln1_gamma = blk.ln1_gamma.clone(false);
    nb.ln1_beta = blk.ln1_beta.clone(false);
    nb.qkv_weight = blk.qkv_weight.clone(false);
    nb.qkv_bias = blk.qkv_bias.clone(false);
    nb.proj_weight = blk.proj_weight.clone(false);
    nb.proj_bias = blk.proj_bias.clone(false);
    nb.ln2_gamma = blk.ln2_gamma.clone(false);
    nb.ln2_beta = blk.ln2_beta.clone(false);
    nb.fc1_weight = blk.fc1_weight.clone(false);
    nb.fc1_bias = blk.fc1_bias.clone(false);
    nb.fc2_weight = blk.fc2_weight.clone(false);
    nb.fc2_bias = blk.fc2_bias.clone(false);
    b.blocks.push_back(std::move(nb));
  }
  b.final_ln_gamma = q.backbone.final_ln_gamma.clone(false);
  b.final_ln_beta = q.backbone.final_ln_beta.clone(false);
  k.backbone = std::move(b);
  k.proj = copy_head(q.proj);
  return k;
}

std::vector<std::pair<std::string, Tensor>> KeyEncoder::named() const {
  auto out = backbone.named();
  for (auto& kv : proj.named("proj.")) out.push_back(kv);
  return out;
}

std::vector<Tensor> KeyEncoder::all() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named()) out.push_back(t);
  return out;
}

// -------------------------------------------------------------- schedules

void ScheduleConfig::validate() const {
  if (!(alpha_lo >= 0.99 && alpha_hi <= 1.0 && alpha_lo <= alpha_hi))
    throw std::invalid_argument("ScheduleConfig: alpha range outside [0.99,1]");
  if (base_lr < 0.0) throw std::invalid_argument("ScheduleConfig: negative lr");
  if (tau <= 0.0) throw std::invalid_argument("ScheduleConfig: tau <= 0");
  if (mask_ratio < 0.0 || mask_ratio >= 100.0)
    throw std::invalid_argument("ScheduleConfig: mask ratio outside [0,100)");
  if (!(bin_threshold > 0.0 && bin_threshold < 1.0))
    throw std::invalid_argument("ScheduleConfig: threshold outside (0,1)");
  if (total_epochs == 0 || steps_per_epoch == 0 || batch_size < 2)
    throw std::invalid_argument("ScheduleConfig: degenerate sizes");
}

std::pair<double, double> schedules(size_t step, const ScheduleConfig& cfg) {
  const size_t total = cfg.total_steps();
  const size_t warm = cfg.warmup_steps();
  const size_t t = std::min(step, total);
  double lr;
  if (warm > 0 && t < warm) {
    lr = cfg.base_lr * static_cast<double>(t) / static_cast<double>(warm);
  } else if (t >= total) {
    lr = 0.0;
  } else {
    const double progress = static_cast<double>(t - warm) /
                            static_cast<double>(total - warm);
    lr = cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
  }
  const double phase =
      std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total));
  const double alpha =
      cfg.alpha_hi - (cfg.alpha_hi - cfg.alpha_lo) * (phase + 1.0) / 2.0;
  return {lr, alpha};
}

void momentum_update(KeyEncoder& key, const QueryEncoder& query, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("momentum_update: alpha outside [0,1]");
  auto kp = key.all();
  auto qn = query.named();
  // Query carries prediction head + decoder which the key lacks; match by
  // the key's own tree (backbone + projection).
  auto kn = key.named();
  std::unordered_map<std::string, Tensor> qmap;
  for (auto& [name, t] : qn) qmap.emplace(name, t);
  const float a = static_cast<float>(alpha);
  for (auto& [name, kt] : kn) {
    auto it = qmap.find(name);
    if (it == qmap.end() || it->second.numel() != kt.numel())
      throw std::invalid_argument("momentum_update: parameter trees differ at " +
                                  name);
    auto& kd = kt.mutable_data();
    const auto& qd = it->second.data();
    for (size_t i = 0; i < kd.size(); ++i)
      kd[i] = a * kd[i] + (1.0f - a) * qd[i];
  }
}

// ------------------------------------------------------------------ losses

Tensor contrastive_loss(const Tensor& q_features, const Tensor& k_features,
                        double tau) {
  if (q_features.rank() != 2 || k_features.rank() != 2 ||
      q_features.shape() != k_features.shape())
    throw std::invalid_argument("contrastive_loss: feature shape mismatch " +
                                shape_str(q_features.shape()) + " vs " +
                                shape_str(k_features.shape()));
  const size_t b = q_features.dim(0);
  if (b < 2)
    throw std::invalid_argument("contrastive_loss: need batch >= 2 for negatives");
  Tensor logits = scale(matmul(q_features, transpose(k_features.detach())),
                        static_cast<float>(1.0 / tau));
  std::vector<size_t> targets(b);
  std::iota(targets.begin(), targets.end(), 0);
  return cross_entropy_index(logits, targets);
}

Tensor seg_loss(const Tensor& y_hat, const std::vector<float>& y) {
  return bce_mean(y_hat, y);
}

Tensor decode_segmentation(const Tensor& patch_reprs, const Tensor& seg_weight,
                           const Tensor& seg_bias, size_t patch, size_t grid_h,
                           size_t grid_w) {
  if (patch_reprs.rank() != 2 || patch_reprs.dim(0) != grid_h * grid_w)
    throw std::invalid_argument(
        "decode_segmentation: " + std::to_string(grid_h * grid_w) +
        " patches expected, got " + shape_str(patch_reprs.shape()));
  Tensor probs =
      sigmoid(add_rowvec(matmul(patch_reprs, seg_weight), seg_bias));
  const size_t h = grid_h * patch, w = grid_w * patch;
  std::vector<size_t> index(h * w);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      const size_t p = (y / patch) * grid_w + x / patch;
      index[y * w + x] = p * patch * patch + (y % patch) * patch + x % patch;
    }
  return gather_elements(probs, index, {h, w});
}

// --------------------------------------------------------------- training

SampleViews build_sample(const Image& image, const SaliencyMap& saliency,
                         const ViewSpec& query_spec, const ViewSpec& key_spec,
                         uint64_t seed, size_t patch, double bin_threshold) {
  ViewPair vp = make_views(image, saliency, query_spec, key_spec, seed);
  SampleViews s;
  s.query_tokens = patchify(vp.query, patch);
  s.key_tokens = patchify(vp.key, patch);
  s.key_scores = patch_scores(vp.key_saliency, patch);
  s.seg_target = binarize(apply_geometry(saliency, vp.query_geometry),
                          static_cast<float>(bin_threshold));
  return s;
}

StepMetrics train_step(TrainState& state, const std::vector<SampleViews>& batch) {
  const ScheduleConfig& sched = state.sched;
  const ViTConfig& cfg = state.query.backbone.cfg;
  const auto [lr, alpha] = schedules(state.step, sched);

  auto params = state.query.all();
  for (auto& p : params) p.zero_grad();

  std::vector<Tensor> q_rows, k_rows;
  Tensor seg_total;
  for (const auto& s : batch) {
    // Key path: mask out low-saliency patches, no gradients.
    KeepSet keep = select_salient(s.key_scores, sched.mask_ratio);
    EncoderOutput ko = vit_forward(state.key.backbone, s.key_tokens, &keep);
    k_rows.push_back(state.key.proj.forward(ko.class_repr));

    // Query path: full sequence.
    EncoderOutput qo = vit_forward(state.query.backbone, s.query_tokens);
    q_rows.push_back(
        state.query.pred.forward(state.query.proj.forward(qo.class_repr)));

    Tensor y_hat =
        decode_segmentation(qo.patch_reprs, state.query.seg_weight,
                            state.query.seg_bias, cfg.patch, cfg.grid(),
                            cfg.grid());
    Tensor l = seg_loss(y_hat, s.seg_target);
    seg_total = seg_total.defined() ? add(seg_total, l) : l;
  }

  Tensor q = l2_normalize_rows(concat_rows(q_rows));
  Tensor k = l2_normalize_rows(concat_rows(k_rows));
  Tensor l_cl = contrastive_loss(q, k, sched.tau);
  Tensor l_seg = scale(seg_total, 1.0f / static_cast<float>(batch.size()));
  Tensor total = add(scale(l_cl, static_cast<float>(sched.lambda_cl)),
                     scale(l_seg, static_cast<float>(sched.lambda_seg)));

  if (!std::isfinite(total.item()))
    throw std::runtime_error("train_step: non-finite loss");

  backward(total);
  adamw_step(params, state.opt,
             AdamWConfig{0.9f, 0.999f, 1e-8f,
                         static_cast<float>(sched.weight_decay)},
             static_cast<float>(lr));
  momentum_update(state.key, state.query, alpha);

  StepMetrics m;
  m.step = state.step;
  m.lr = lr;
  m.alpha = alpha;
  m.loss_cl = l_cl.item();
  m.loss_seg = l_seg.item();
  m.loss = total.item();
  state.step += 1;
  return m;
}

TrainState init_train_state(const ViTConfig& vit, const HeadConfig& heads,
                            const ScheduleConfig& sched, uint64_t seed) {
  sched.validate();
  vit.validate();
  TrainState st;
  Rng rng(Rng::mix(seed, 0x1717));
  st.query = QueryEncoder::init(vit, heads, rng);
  st.key = KeyEncoder::from_query(st.query);
  st.sched = sched;
  st.seed = seed;
  return st;
}

void run_pretraining(TrainState& state, const std::vector<Image>& images,
                     const std::vector<SaliencyMap>& maps,
                     const ViewSpec& query_spec, const ViewSpec& key_spec,
                     const std::function<void(const StepMetrics&)>& on_step,
                     const std::function<void(const TrainState&)>& on_epoch_end,
                     size_t stop_after_epoch) {
  if (images.size() != maps.size())
    throw std::invalid_argument("run_pretraining: images/saliency count mismatch");
  if (images.size() < 2)
    throw std::invalid_argument("run_pretraining: need at least 2 images");
  const size_t patch = state.query.backbone.cfg.patch;
  const size_t n = images.size();
  const size_t last_epoch = std::min(state.sched.total_epochs, stop_after_epoch);
  for (size_t epoch = state.epoch; epoch < last_epoch; ++epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::mix(state.seed, 0x5e00 + epoch));
    for (size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);

    const size_t bs = state.sched.batch_size;
    for (size_t start = 0; start + 2 <= n; start += bs) {
      const size_t end = std::min(start + bs, n);
      if (end - start < 2) break;
      std::vector<SampleViews> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        const size_t idx = order[i];
        const uint64_t view_seed =
            Rng::mix(Rng::mix(state.seed, epoch), idx);
        batch.push_back(build_sample(images[idx], maps[idx], query_spec,
                                     key_spec, view_seed, patch,
                                     state.sched.bin_threshold));
      }
      StepMetrics m = train_step(state, batch);
      if (on_step) on_step(m);
    }
    state.epoch = epoch + 1;
    if (on_epoch_end) on_epoch_end(state);
  }
}

// ------------------------------------------------------------- checkpoint

namespace {

constexpr char kCkptMagic[4] = {'S', 'S', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error("checkpoint: truncated");
  return v;
}

void write_named(std::ostream& os, const std::string& name, const Tensor& t) {
  write_le<uint32_t>(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_tensor(os, t);
}

json sched_to_json(const ScheduleConfig& s) {
  return json{{"base_lr", s.base_lr},
              {"warmup_epochs", s.warmup_epochs},
              {"total_epochs", s.total_epochs},
              {"steps_per_epoch", s.steps_per_epoch},
              {"alpha_lo", s.alpha_lo},
              {"alpha_hi", s.alpha_hi},
              {"tau", s.tau},
              {"mask_ratio", s.mask_ratio},
              {"lambda_cl", s.lambda_cl},
              {"lambda_seg", s.lambda_seg},
              {"batch_size", s.batch_size},
              {"weight_decay", s.weight_decay},
              {"bin_threshold", s.bin_threshold}};
}

ScheduleConfig sched_from_json(const json& j) {
  ScheduleConfig s;
  s.base_lr = j.at("base_lr");
  s.warmup_epochs = j.at("warmup_epochs");
  s.total_epochs = j.at("total_epochs");
  s.steps_per_epoch = j.at("steps_per_epoch");
  s.alpha_lo = j.at("alpha_lo");
  s.alpha_hi = j.at("alpha_hi");
  s.tau = j.at("tau");
  s.mask_ratio = j.at("mask_ratio");
  s.lambda_cl = j.at("lambda_cl");
  s.lambda_seg = j.at("lambda_seg");
  s.batch_size = j.at("batch_size");
  s.weight_decay = j.at("weight_decay");
  s.bin_threshold = j.at("bin_threshold");
  return s;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  const ViTConfig& v = state.query.backbone.cfg;
  json meta{{"step", state.step},
            {"epoch", state.epoch},
            {"seed", state.seed},
            {"opt_step", state.opt.step},
            {"sched", sched_to_json(state.sched)},
            {"vit",
             {{"patch", v.patch},
              {"depth", v.depth},
              {"heads", v.heads},
              {"embed_dim", v.embed_dim},
              {"mlp_ratio", v.mlp_ratio},
              {"image_size", v.image_size},
              {"channels", v.channels}}},
            {"heads",
             {{"proj_hidden", state.query.proj.weights[0].dim(1)},
              {"proj_out", state.query.proj.weights.back().dim(1)},
              {"pred_hidden", state.query.pred.weights[0].dim(1)}}}};
  const std::string meta_str = meta.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp);
    os.write(kCkptMagic, 4);
    write_le<uint32_t>(os, kCkptVersion);
    write_le<uint64_t>(os, meta_str.size());
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    auto qn = state.query.named();
    auto kn = state.key.named();
    const size_t moment_count = state.opt.m.size();
    write_le<uint32_t>(os,
                       static_cast<uint32_t>(qn.size() + kn.size() +
                                             2 * moment_count));
    for (auto& [name, t] : qn) write_named(os, "q." + name, t);
    for (auto& [name, t] : kn) write_named(os, "k." + name, t);
    for (size_t i = 0; i < moment_count; ++i) {
      write_named(os, "opt.m." + std::to_string(i),
                  Tensor::from_data({state.opt.m[i].size()}, state.opt.m[i]));
      write_named(os, "opt.v." + std::to_string(i),
                  Tensor::from_data({state.opt.v[i].size()}, state.opt.v[i]));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = read_le<uint32_t>(is);
  if (version != kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const uint64_t meta_len = read_le<uint64_t>(is);
  std::string meta_str(meta_len, '\0');
  if (!is.read(meta_str.data(), static_cast<std::streamsize>(meta_len)))
    throw std::runtime_error("checkpoint: truncated header");
  json meta = json::parse(meta_str);

  ViTConfig vit;
  vit.patch = meta.at("vit").at("patch");
  vit.depth = meta.at("vit").at("depth");
  vit.heads = meta.at("vit").at("heads");
  vit.embed_dim = meta.at("vit").at("embed_dim");
  vit.mlp_ratio = meta.at("vit").at("mlp_ratio");
  vit.image_size = meta.at("vit").at("image_size");
  vit.channels = meta.at("vit").at("channels");
  HeadConfig heads;
  heads.proj_hidden = meta.at("heads").at("proj_hidden");
  heads.proj_out = meta.at("heads").at("proj_out");
  heads.pred_hidden = meta.at("heads").at("pred_hidden");

  TrainState st = init_train_state(vit, heads, sched_from_json(meta.at("sched")),
                                   meta.at("seed"));
  st.step = meta.at("step");
  st.epoch = meta.at("epoch");
  st.opt.step = meta.at("opt_step");

  std::unordered_map<std::string, Tensor> targets;
  for (auto& [name, t] : st.query.named()) targets.emplace("q." + name, t);
  for (auto& [name, t] : st.key.named()) targets.emplace("k." + name, t);

  const size_t qcount = st.query.all().size();
  st.opt.m.assign(qcount, {});
  st.opt.v.assign(qcount, {});

  const uint32_t count = read_le<uint32_t>(is);
  size_t loaded = 0;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_le<uint32_t>(is);
    if (name_len > 4096) throw std::runtime_error("checkpoint: corrupt name");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated name");
    Tensor t = read_tensor(is);
    if (name.rfind("opt.m.", 0) == 0 || name.rfind("opt.v.", 0) == 0) {
      const size_t idx = std::stoul(name.substr(6));
      if (idx >= qcount) throw std::runtime_error("checkpoint: moment index");
      (name[4] == 'm' ? st.opt.m : st.opt.v)[idx] = t.data();
      continue;
    }
    auto it = targets.find(name);
    if (it == targets.end())
      throw std::runtime_error("checkpoint: unknown tensor " + name);
    if (it->second.shape() != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    it->second.mutable_data() = t.data();
    ++loaded;
  }
  if (loaded != targets.size())
    throw std::runtime_error("checkpoint: missing tensors in " + path);
  // Moments are all-present or all-absent (pre-first-step checkpoints).
  bool any_m = false;
  for (auto& m : st.opt.m) any_m |= !m.empty();
  if (!any_m) {
    st.opt.m.clear();
    st.opt.v.clear();
  }
  return st;
}

}  // namespace ssit
