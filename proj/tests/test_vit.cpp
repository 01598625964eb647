#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssit/vit.hpp"

using namespace ssit;

TEST_CASE("config geometry and validation") {
  ViTConfig c = ViTConfig::vit_micro();
  CHECK(c.grid() == 8);
  CHECK(c.tokens() == 64);
  CHECK(c.head_dim() == 16);
  CHECK(c.mlp_hidden() == 256);
  CHECK(ViTConfig::vit_ti().tokens() == 196);
  ViTConfig bad = c;
  bad.patch = 7;  // 64 % 7 != 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.heads = 5;  // 64 % 5 != 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("standard configs land on their published parameter counts") {
  Rng rng(1);
  ViTParams s = ViTParams::init(ViTConfig::vit_s(), rng, false);
  // ViT-S backbone is ~21M-22M parameters.
  CHECK(s.param_count() > 20'000'000);
  CHECK(s.param_count() < 23'000'000);
}

TEST_CASE("patchify flattens row-major patches and unpatchify inverts") {
  Image img(4, 4, 1);
  std::iota(img.pixels.begin(), img.pixels.end(), 0.0f);
  Tensor t = patchify(img, 2);
  CHECK(t.shape() == Shape{4, 4});
  // patch 0 covers rows 0-1, cols 0-1 -> pixels 0,1,4,5
  CHECK(t.data()[0] == 0.0f);
  CHECK(t.data()[1] == 1.0f);
  CHECK(t.data()[2] == 4.0f);
  CHECK(t.data()[3] == 5.0f);
  // patch 1 covers rows 0-1, cols 2-3
  CHECK(t.data()[4] == 2.0f);
  Image back = unpatchify(t, 4, 4, 1, 2);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("initialization shape contract") {
  ViTConfig c = ViTConfig::vit_micro();
  Rng rng(3);
  ViTParams p = ViTParams::init(c, rng);
  CHECK(p.pos_embed.shape() == Shape{c.tokens() + 1, c.embed_dim});
  CHECK(p.class_token.shape() == Shape{1, c.embed_dim});
  CHECK(p.blocks.size() == c.depth);
  for (float v : p.class_token.data()) CHECK(v == 0.0f);
  for (float v : p.patch_bias.data()) CHECK(v == 0.0f);
  for (float v : p.blocks[0].ln1_gamma.data()) CHECK(v == 1.0f);
  for (float v : p.patch_weight.data()) CHECK(std::fabs(v) <= 0.04f);
  CHECK(p.named().size() == 4 + 12 * c.depth + 2);
}

TEST_CASE("forward shapes, masked and unmasked") {
  ViTConfig c = ViTConfig::vit_micro();
  Rng rng(5);
  ViTParams p = ViTParams::init(c, rng, false);
  Image img(64, 64, 1);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  Tensor tokens = patchify(img, c.patch);
  EncoderOutput full = vit_forward(p, tokens);
  CHECK(full.class_repr.shape() == Shape{1, c.embed_dim});
  CHECK(full.patch_reprs.shape() == Shape{c.tokens(), c.embed_dim});

  KeepSet keep;
  for (size_t i = 0; i < c.tokens(); i += 2) keep.kept_indices.push_back(i);
  EncoderOutput half = vit_forward(p, tokens, &keep);
  CHECK(half.patch_reprs.dim(0) == 32);
}

TEST_CASE("keep-all masking is bitwise identical to unmasked") {
  ViTConfig c = ViTConfig::vit_micro();
  Rng rng(6);
  ViTParams p = ViTParams::init(c, rng, false);
  Image img(64, 64, 1);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  Tensor tokens = patchify(img, c.patch);
  KeepSet all;
  all.kept_indices.resize(c.tokens());
  std::iota(all.kept_indices.begin(), all.kept_indices.end(), 0);
  EncoderOutput a = vit_forward(p, tokens);
  EncoderOutput b = vit_forward(p, tokens, &all);
  CHECK(a.class_repr.data() == b.class_repr.data());
  CHECK(a.patch_reprs.data() == b.patch_reprs.data());
}

TEST_CASE("token permutation equivariance") {
  // Permuting the kept-token order (with their positional rows) permutes the
  // patch representations and leaves the class representation unchanged.
  ViTConfig c = ViTConfig::vit_micro();
  Rng rng(7);
  ViTParams p = ViTParams::init(c, rng, false);
  Image img(64, 64, 1);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  Tensor tokens = patchify(img, c.patch);

  std::vector<size_t> perm(c.tokens());
  std::iota(perm.begin(), perm.end(), 0);
  for (size_t i = perm.size() - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(i + 1)]);

  // Build permuted tokens and a params copy with permuted patch pos rows.
  Tensor ptokens = Tensor::wrap(gather_rows(tokens, perm).detach().node());
  ViTParams pp = p;
  std::vector<size_t> pos_perm{0};
  for (size_t i : perm) pos_perm.push_back(i + 1);
  pp.pos_embed = Tensor::wrap(
      gather_rows(p.pos_embed, pos_perm).detach().node());

  EncoderOutput base = vit_forward(p, tokens);
  EncoderOutput permuted = vit_forward(pp, ptokens);
  for (size_t j = 0; j < c.embed_dim; ++j)
    CHECK(std::fabs(base.class_repr.data()[j] -
                    permuted.class_repr.data()[j]) < 1e-5f);
  for (size_t i = 0; i < perm.size(); ++i)
    for (size_t j = 0; j < c.embed_dim; ++j)
      CHECK(std::fabs(base.patch_reprs.data()[perm[i] * c.embed_dim + j] -
                      permuted.patch_reprs.data()[i * c.embed_dim + j]) <
            1e-5f);
}

TEST_CASE("attention is recorded row-stochastic and mapped over patches") {
  ViTConfig c = ViTConfig::vit_micro();
  Rng rng(8);
  ViTParams p = ViTParams::init(c, rng, false);
  Image img(64, 64, 1);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  EncoderOutput out = vit_forward(p, patchify(img, c.patch), nullptr, true);
  CHECK(out.attention.size() == c.depth);
  CHECK(out.attention[0].size() == c.heads);
  const Tensor& a = out.attention.back()[0];
  const size_t t = c.tokens() + 1;
  CHECK(a.shape() == Shape{t, t});
  for (size_t i = 0; i < t; ++i) {
    double row = 0;
    for (size_t j = 0; j < t; ++j) row += a.data()[i * t + j];
    CHECK(row == doctest::Approx(1.0).epsilon(1e-4));
  }
  std::vector<float> amap = attention_map(out);
  CHECK(amap.size() == c.tokens());
  double s = 0;
  for (float v : amap) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-4));
  CHECK_THROWS_AS(attention_map(out, 99), std::out_of_range);
  EncoderOutput bare = vit_forward(p, patchify(img, c.patch));
  CHECK_THROWS_AS(attention_map(bare), std::logic_error);
}

TEST_CASE("named parameters cover everything exactly once") {
  ViTConfig c = ViTConfig::vit_micro();
  Rng rng(9);
  ViTParams p = ViTParams::init(c, rng);
  auto named = p.named();
  size_t total = 0;
  for (auto& [name, t] : named) {
    CHECK(!name.empty());
    total += t.numel();
  }
  CHECK(total == p.param_count());
}
