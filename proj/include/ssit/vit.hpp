#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssit/image.hpp"
#include "ssit/saliency.hpp"
#include "ssit/tensor.hpp"

namespace ssit {

struct ViTConfig {
  size_t patch = 8;
  size_t depth = 4;
  size_t heads = 4;
  size_t embed_dim = 64;
  double mlp_ratio = 4.0;
  size_t image_size = 64;
  size_t channels = 1;

  size_t grid() const { return image_size / patch; }
  size_t tokens() const { return grid() * grid(); }  // N, excluding class token
  size_t head_dim() const { return embed_dim / heads; }
  size_t mlp_hidden() const {
    return static_cast<size_t>(mlp_ratio * static_cast<double>(embed_dim));
  }
  void validate() const;

  // Desk-scale default, small enough for finite-difference checks.
  static ViTConfig vit_micro();
  static ViTConfig vit_ti();   // L=12 h=3 D=192 P=16
  static ViTConfig vit_s();    // L=12 h=6 D=384 P=16
  static ViTConfig vit_b();    // L=12 h=12 D=768 P=16
};

struct ViTParams {
  ViTConfig cfg;
  Tensor patch_weight;  // [P*P*C x D]
  Tensor patch_bias;    // [D]
  Tensor class_token;   // [1 x D]
  Tensor pos_embed;     // [(N+1) x D], row 0 pairs with the class token

  struct Block {
    Tensor ln1_gamma, ln1_beta;
    Tensor qkv_weight, qkv_bias;    // [D x 3D] columns ordered Q|K|V
    Tensor proj_weight, proj_bias;  // [D x D]
    Tensor ln2_gamma, ln2_beta;
    Tensor fc1_weight, fc1_bias;    // [D x hidden]
    Tensor fc2_weight, fc2_bias;    // [hidden x D]
  };
  std::vector<Block> blocks;
  Tensor final_ln_gamma, final_ln_beta;

  // Truncated normal (sigma 0.02) weights, zero biases and class token.
  static ViTParams init(const ViTConfig& cfg, Rng& rng,
                        bool requires_grad = true);

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  size_t param_count() const;
  void set_requires_grad(bool rg);
};

// [N x P*P*C] row-major patch order, each patch flattened channel-last.
Tensor patchify(const Image& image, size_t patch);
Image unpatchify(const Tensor& tokens, size_t height, size_t width,
                 size_t channels, size_t patch);

struct EncoderOutput {
  Tensor class_repr;   // [1 x D]
  Tensor patch_reprs;  // [n x D], n = kept patch count
  // attention[layer][head] is a detached [T x T] row-stochastic matrix,
  // recorded only on request.
  std::vector<std::vector<Tensor>> attention;
};

// Pre-norm transformer forward over an optionally masked token sequence.
// The class token (with pos_embed row 0) is always retained.
EncoderOutput vit_forward(const ViTParams& params, const Tensor& tokens,
                          const KeepSet* keep = nullptr,
                          bool record_attention = false);

// Class-token attention over patches at the given layer (default: last),
// averaged over heads and renormalized to sum to 1.
std::vector<float> attention_map(const EncoderOutput& out, int layer = -1);

}  // namespace ssit
