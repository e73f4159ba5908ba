#pragma once

#include <string>
#include <vector>

#include "citnet/nn.hpp"
#include "citnet/params.hpp"

// Global-feature branch: patch embedding followed by four stages of three
// pre-norm encoder blocks (x + MHA(LN(x)), then + MLP(LN(.))). The default
// patch scheme treats each frequency-band slice as one patch, so a
// [N,5,32,32] input becomes 5 tokens of width hidden_dim; a spatial scheme
// is available for grids whose extent differs from the patch size.
// Positional embeddings are learned and added once at the embedding;
// tokens appended later by the fusion module receive none.

namespace citnet {

enum class PatchScheme { kBandPerPatch, kSpatial };

struct VitConfig {
  int64_t in_bands = 5;
  int64_t grid_h = 32, grid_w = 32;
  int64_t hidden_dim = 256;
  int64_t heads = 4;
  int64_t mlp_ratio = 4;
  int blocks_per_stage = 3;
  PatchScheme patch_scheme = PatchScheme::kBandPerPatch;
  int64_t patch_size = 32;
  double dropout = 0.2;
  double ln_eps = 1e-5;

  int64_t n_tokens() const {
    if (patch_scheme == PatchScheme::kBandPerPatch) return in_bands;
    return (grid_h / patch_size) * (grid_w / patch_size);
  }
  int64_t patch_dim() const {
    if (patch_scheme == PatchScheme::kBandPerPatch) return grid_h * grid_w;
    return in_bands * patch_size * patch_size;
  }
};

template <typename T>
struct PatchEmbedParams {
  Tensor<T> proj_w;  // [patch_dim, D]
  Tensor<T> proj_b;  // [D]
  Tensor<T> pos;     // [n_tokens, D]
};

template <typename T>
struct EncoderBlockParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

namespace detail {

template <typename T>
Tensor<T> trunc02(Shape shape, Rng& rng) {
  return Tensor<T>::randn(std::move(shape), rng, static_cast<T>(0.02));
}

}  // namespace detail

template <typename T>
PatchEmbedParams<T> build_patch_embed(ModelParams<T>& params,
                                      const std::string& prefix,
                                      const VitConfig& cfg, Rng& rng) {
  if (cfg.patch_scheme == PatchScheme::kBandPerPatch) {
    if (cfg.grid_h != cfg.patch_size || cfg.grid_w != cfg.patch_size) {
      throw std::invalid_argument(
          "patch_embed: band-per-patch scheme needs grid extent == patch_size (" +
          std::to_string(cfg.patch_size) + "), got " +
          std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w));
    }
  } else if (cfg.grid_h % cfg.patch_size != 0 || cfg.grid_w % cfg.patch_size != 0) {
    throw std::invalid_argument(
        "patch_embed: grid extents must be divisible by patch_size");
  }
  PatchEmbedParams<T> embed;
  embed.proj_w = params.add(prefix + ".proj.w",
                            detail::trunc02<T>({cfg.patch_dim(), cfg.hidden_dim}, rng));
  embed.proj_b = params.add(prefix + ".proj.b", Tensor<T>::zeros({cfg.hidden_dim}));
  embed.pos = params.add(prefix + ".pos",
                         detail::trunc02<T>({cfg.n_tokens(), cfg.hidden_dim}, rng));
  return embed;
}

// [N,B,H,W] -> tokens [N, n_tokens, D].
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, PatchEmbedParams<T>& embed,
                      const VitConfig& cfg) {
  if (x.ndim() != 4 || x.dim(1) != cfg.in_bands || x.dim(2) != cfg.grid_h ||
      x.dim(3) != cfg.grid_w) {
    throw std::invalid_argument("patch_embed: expected [N," +
                                std::to_string(cfg.in_bands) + "," +
                                std::to_string(cfg.grid_h) + "," +
                                std::to_string(cfg.grid_w) + "], got " +
                                shape_str(x.shape()));
  }
  const int64_t nb = x.dim(0);
  Tensor<T> flat;
  if (cfg.patch_scheme == PatchScheme::kBandPerPatch) {
    flat = reshape(x, {nb, cfg.in_bands, cfg.grid_h * cfg.grid_w});
  } else {
    const int64_t ps = cfg.patch_size;
    const int64_t hp = cfg.grid_h / ps, wp = cfg.grid_w / ps;
    // [N,B,Hp,ps,Wp,ps] -> [N,Hp,Wp,B,ps,ps] -> [N, Hp*Wp, B*ps*ps]
    flat = reshape(
        permute(reshape(x, {nb, cfg.in_bands, hp, ps, wp, ps}),
                {0, 2, 4, 1, 3, 5}),
        {nb, hp * wp, cfg.in_bands * ps * ps});
  }
  return add(linear(flat, embed.proj_w, embed.proj_b), embed.pos);
}

template <typename T>
EncoderBlockParams<T> build_encoder_block(ModelParams<T>& params,
                                          const std::string& prefix,
                                          const VitConfig& cfg, Rng& rng) {
  if (cfg.hidden_dim % cfg.heads != 0) {
    throw std::invalid_argument("encoder block: hidden_dim " +
                                std::to_string(cfg.hidden_dim) +
                                " not divisible by heads " +
                                std::to_string(cfg.heads));
  }
  const int64_t d = cfg.hidden_dim;
  const int64_t hidden = d * cfg.mlp_ratio;
  EncoderBlockParams<T> block;
  block.ln1_gamma = params.add(prefix + ".ln1.gamma", Tensor<T>::ones({d}));
  block.ln1_beta = params.add(prefix + ".ln1.beta", Tensor<T>::zeros({d}));
  block.wq = params.add(prefix + ".mha.wq", detail::trunc02<T>({d, d}, rng));
  block.wk = params.add(prefix + ".mha.wk", detail::trunc02<T>({d, d}, rng));
  block.wv = params.add(prefix + ".mha.wv", detail::trunc02<T>({d, d}, rng));
  block.wo = params.add(prefix + ".mha.wo", detail::trunc02<T>({d, d}, rng));
  block.ln2_gamma = params.add(prefix + ".ln2.gamma", Tensor<T>::ones({d}));
  block.ln2_beta = params.add(prefix + ".ln2.beta", Tensor<T>::zeros({d}));
  block.mlp_w1 = params.add(prefix + ".mlp.w1", detail::trunc02<T>({d, hidden}, rng));
  block.mlp_b1 = params.add(prefix + ".mlp.b1", Tensor<T>::zeros({hidden}));
  block.mlp_w2 = params.add(prefix + ".mlp.w2", detail::trunc02<T>({hidden, d}, rng));
  block.mlp_b2 = params.add(prefix + ".mlp.b2", Tensor<T>::zeros({d}));
  return block;
}

// Pre-norm residual encoder: y = x + Drop(MHA(LN1(x))); out = y + MLP(LN2(y)).
template <typename T>
Tensor<T> encoder_block_forward(const Tensor<T>& x, EncoderBlockParams<T>& block,
                                const VitConfig& cfg, Mode mode, Rng* rng,
                                Tensor<T>* attn_probs = nullptr) {
  if (x.ndim() != 3 || x.dim(2) != cfg.hidden_dim) {
    throw std::invalid_argument("encoder_block: expected [N,L," +
                                std::to_string(cfg.hidden_dim) + "], got " +
                                shape_str(x.shape()));
  }
  Tensor<T> attn = multi_head_attention(
      layernorm(x, block.ln1_gamma, block.ln1_beta, cfg.ln_eps), block.wq,
      block.wk, block.wv, block.wo, cfg.heads, attn_probs);
  Tensor<T> y = add(x, dropout(attn, cfg.dropout, mode, rng));
  Tensor<T> m =
      mlp_block(layernorm(y, block.ln2_gamma, block.ln2_beta, cfg.ln_eps),
                block.mlp_w1, block.mlp_b1, block.mlp_w2, block.mlp_b2,
                cfg.dropout, mode, rng);
  return add(y, m);
}

template <typename T>
using VitStage = std::vector<EncoderBlockParams<T>>;

template <typename T>
VitStage<T> build_vit_stage(ModelParams<T>& params, const std::string& prefix,
                            int stage_k, const VitConfig& cfg, Rng& rng) {
  if (stage_k < 1 || stage_k > 4) {
    throw std::invalid_argument("build_vit_stage: stage index must be 1..4");
  }
  VitStage<T> stage;
  for (int b = 1; b <= cfg.blocks_per_stage; ++b) {
    stage.push_back(
        build_encoder_block(params, prefix + ".block" + std::to_string(b), cfg, rng));
  }
  return stage;
}

template <typename T>
Tensor<T> transformer_stage_forward(const Tensor<T>& tokens, VitStage<T>& stage,
                                    const VitConfig& cfg, Mode mode, Rng* rng) {
  Tensor<T> y = tokens;
  for (auto& block : stage) y = encoder_block_forward(y, block, cfg, mode, rng);
  return y;
}

}  // namespace citnet
