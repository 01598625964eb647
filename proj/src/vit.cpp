#include "ssit/vit.hpp"

#include <cmath>
#include <stdexcept>

namespace ssit {

void ViTConfig::validate() const {
  if (embed_dim % heads != 0)
    throw std::invalid_argument("ViTConfig: embed_dim not divisible by heads");
  if (image_size % patch != 0)
    throw std::invalid_argument("ViTConfig: image_size not divisible by patch");
  if (depth == 0 || heads == 0 || embed_dim == 0 || channels == 0)
    throw std::invalid_argument("ViTConfig: zero-sized field");
}

ViTConfig ViTConfig::vit_micro() { return ViTConfig{}; }

ViTConfig ViTConfig::vit_ti() {
  return ViTConfig{16, 12, 3, 192, 4.0, 224, 3};
}

ViTConfig ViTConfig::vit_s() {
  return ViTConfig{16, 12, 6, 384, 4.0, 224, 3};
}

ViTConfig ViTConfig::vit_b() {
  return ViTConfig{16, 12, 12, 768, 4.0, 224, 3};
}

ViTParams ViTParams::init(const ViTConfig& cfg, Rng& rng, bool requires_grad) {
  cfg.validate();
  constexpr float kSigma = 0.02f;
  const size_t d = cfg.embed_dim;
  const size_t in = cfg.patch * cfg.patch * cfg.channels;
  const size_t hidden = cfg.mlp_hidden();
  ViTParams p;
  p.cfg = cfg;
  p.patch_weight = Tensor::trunc_normal({in, d}, rng, kSigma, requires_grad);
  p.patch_bias = Tensor(Shape{d}, 0.0f, requires_grad);
  p.class_token = Tensor(Shape{1, d}, 0.0f, requires_grad);
  p.pos_embed =
      Tensor::trunc_normal({cfg.tokens() + 1, d}, rng, kSigma, requires_grad);
  for (size_t l = 0; l < cfg.depth; ++l) {
    Block b;
    b.ln1_gamma = Tensor(Shape{d}, 1.0f, requires_grad);
    b.ln1_beta = Tensor(Shape{d}, 0.0f, requires_grad);
    b.qkv_weight = Tensor::trunc_normal({d, 3 * d}, rng, kSigma, requires_grad);
    b.qkv_bias = Tensor(Shape{3 * d}, 0.0f, requires_grad);
    b.proj_weight = Tensor::trunc_normal({d, d}, rng, kSigma, requires_grad);
    b.proj_bias = Tensor(Shape{d}, 0.0f, requires_grad);
    b.ln2_gamma = Tensor(Shape{d}, 1.0f, requires_grad);
    b.ln2_beta = Tensor(Shape{d}, 0.0f, requires_grad);
    b.fc1_weight = Tensor::trunc_normal({d, hidden}, rng, kSigma, requires_grad);
    b.fc1_bias = Tensor(Shape{hidden}, 0.0f, requires_grad);
    b.fc2_weight = Tensor::trunc_normal({hidden, d}, rng, kSigma, requires_grad);
    b.fc2_bias = Tensor(Shape{d}, 0.0f, requires_grad);
    p.blocks.push_back(std::move(b));
  }
  p.final_ln_gamma = Tensor(Shape{d}, 1.0f, requires_grad);
  p.final_ln_beta = Tensor(Shape{d}, 0.0f, requires_grad);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ViTParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch.weight", patch_weight);
  out.emplace_back("patch.bias", patch_bias);
  out.emplace_back("class_token", class_token);
  out.emplace_back("pos_embed", pos_embed);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    const Block& b = blocks[i];
    out.emplace_back(p + "ln1.gamma", b.ln1_gamma);
    out.emplace_back(p + "ln1.beta", b.ln1_beta);
    out.emplace_back(p + "attn.qkv.weight", b.qkv_weight);
    out.emplace_back(p + "attn.qkv.bias", b.qkv_bias);
    out.emplace_back(p + "attn.proj.weight", b.proj_weight);
    out.emplace_back(p + "attn.proj.bias", b.proj_bias);
    out.emplace_back(p + "ln2.gamma", b.ln2_gamma);
    out.emplace_back(p + "ln2.beta", b.ln2_beta);
    out.emplace_back(p + "mlp.fc1.weight", b.fc1_weight);
    out.emplace_back(p + "mlp.fc1.bias", b.fc1_bias);
    out.emplace_back(p + "mlp.fc2.weight", b.fc2_weight);
    out.emplace_back(p + "mlp.fc2.bias", b.fc2_bias);
  }
  out.emplace_back("final_ln.gamma", final_ln_gamma);
  out.emplace_back("final_ln.beta", final_ln_beta);
  return out;
}

std::vector<Tensor> ViTParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

size_t ViTParams::param_count() const {
  size_t n = 0;
  for (const auto& t : all()) n += t.numel();
  return n;
}

void ViTParams::set_requires_grad(bool rg) {
  for (auto& t : all()) t.set_requires_grad(rg);
}

Tensor patchify(const Image& image, size_t patch) {
  if (patch == 0 || image.height % patch != 0 || image.width % patch != 0)
    throw std::invalid_argument(
        "patchify: " + std::to_string(image.height) + "x" +
        std::to_string(image.width) + " not divisible by patch " +
        std::to_string(patch));
  const size_t gh = image.height / patch, gw = image.width / patch;
  const size_t plen = patch * patch * image.channels;
  std::vector<float> data(gh * gw * plen);
  size_t row = 0;
  for (size_t gy = 0; gy < gh; ++gy)
    for (size_t gx = 0; gx < gw; ++gx, ++row) {
      float* dst = data.data() + row * plen;
      size_t k = 0;
      for (size_t y = gy * patch; y < (gy + 1) * patch; ++y)
        for (size_t x = gx * patch; x < (gx + 1) * patch; ++x)
          for (size_t c = 0; c < image.channels; ++c)
            dst[k++] = image.at(y, x, c);
    }
  return Tensor::from_data({gh * gw, plen}, std::move(data));
}

Image unpatchify(const Tensor& tokens, size_t height, size_t width,
                 size_t channels, size_t patch) {
  const size_t gh = height / patch, gw = width / patch;
  const size_t plen = patch * patch * channels;
  if (tokens.rank() != 2 || tokens.dim(0) != gh * gw || tokens.dim(1) != plen)
    throw std::invalid_argument("unpatchify: token shape " +
                                shape_str(tokens.shape()) + " does not match");
  Image img(height, width, channels);
  size_t row = 0;
  for (size_t gy = 0; gy < gh; ++gy)
    for (size_t gx = 0; gx < gw; ++gx, ++row) {
      const float* src = tokens.data().data() + row * plen;
      size_t k = 0;
      for (size_t y = gy * patch; y < (gy + 1) * patch; ++y)
        for (size_t x = gx * patch; x < (gx + 1) * patch; ++x)
          for (size_t c = 0; c < channels; ++c) img.at(y, x, c) = src[k++];
    }
  return img;
}

EncoderOutput vit_forward(const ViTParams& params, const Tensor& tokens,
                          const KeepSet* keep, bool record_attention) {
  const ViTConfig& cfg = params.cfg;
  const size_t n = cfg.tokens();
  if (tokens.rank() != 2 || tokens.dim(0) != n)
    throw std::invalid_argument("vit_forward: expected " + std::to_string(n) +
                                " tokens, got " + shape_str(tokens.shape()));
  const size_t d = cfg.embed_dim;

  // Embed and attach positional information before any masking, so each
  // kept patch keeps its own positional embedding.
  Tensor x = add_rowvec(matmul(tokens, params.patch_weight), params.patch_bias);
  std::vector<size_t> patch_pos(n);
  for (size_t i = 0; i < n; ++i) patch_pos[i] = i + 1;
  x = add(x, gather_rows(params.pos_embed, patch_pos));

  if (keep) {
    for (size_t idx : keep->kept_indices)
      if (idx >= n)
        throw std::out_of_range("vit_forward: keep index " +
                                std::to_string(idx) + " out of range");
    x = gather_rows(x, keep->kept_indices);
  }

  Tensor cls = add(params.class_token, gather_rows(params.pos_embed, {0}));
  Tensor z = concat_rows({cls, x});
  const size_t t_len = z.dim(0);

  EncoderOutput out;
  const float attn_scale =
      1.0f / std::sqrt(static_cast<float>(cfg.head_dim()));
  for (const auto& b : params.blocks) {
    Tensor h = layer_norm(z, b.ln1_gamma, b.ln1_beta);
    Tensor qkv = add_rowvec(matmul(h, b.qkv_weight), b.qkv_bias);
    std::vector<Tensor> head_outs;
    std::vector<Tensor> layer_attn;
    for (size_t hd = 0; hd < cfg.heads; ++hd) {
      const size_t dh = cfg.head_dim();
      Tensor q = slice_cols(qkv, hd * dh, dh);
      Tensor k = slice_cols(qkv, d + hd * dh, dh);
      Tensor v = slice_cols(qkv, 2 * d + hd * dh, dh);
      Tensor attn = softmax(scale(matmul(q, transpose(k)), attn_scale));
      if (record_attention) layer_attn.push_back(attn.detach());
      head_outs.push_back(matmul(attn, v));
    }
    if (record_attention) out.attention.push_back(std::move(layer_attn));
    Tensor msa =
        add_rowvec(matmul(concat_cols(head_outs), b.proj_weight), b.proj_bias);
    z = add(z, msa);
    Tensor h2 = layer_norm(z, b.ln2_gamma, b.ln2_beta);
    Tensor f = gelu(add_rowvec(matmul(h2, b.fc1_weight), b.fc1_bias));
    Tensor mlp = add_rowvec(matmul(f, b.fc2_weight), b.fc2_bias);
    z = add(z, mlp);
  }
  z = layer_norm(z, params.final_ln_gamma, params.final_ln_beta);

  out.class_repr = gather_rows(z, {0});
  std::vector<size_t> rest(t_len - 1);
  for (size_t i = 0; i + 1 < t_len; ++i) rest[i] = i + 1;
  out.patch_reprs = gather_rows(z, rest);
  return out;
}

std::vector<float> attention_map(const EncoderOutput& out, int layer) {
  if (out.attention.empty())
    throw std::logic_error("attention_map: attention was not recorded");
  const size_t l = layer < 0 ? out.attention.size() + layer
                             : static_cast<size_t>(layer);
  if (l >= out.attention.size())
    throw std::out_of_range("attention_map: layer index");
  const auto& heads = out.attention[l];
  const size_t t_len = heads[0].dim(0);
  std::vector<double> acc(t_len - 1, 0.0);
  for (const auto& h : heads) {
    // class-token row, patch columns only
    for (size_t j = 1; j < t_len; ++j) acc[j - 1] += h.data()[j];
  }
  double total = 0.0;
  for (double v : acc) total += v;
  std::vector<float> grid(t_len - 1);
  for (size_t j = 0; j < grid.size(); ++j)
    grid[j] = total > 0.0 ? static_cast<float>(acc[j] / total)
                          : 1.0f / static_cast<float>(grid.size());
  return grid;
}

}  // namespace ssit
