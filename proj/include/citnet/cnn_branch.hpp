#pragma once

#include <array>
#include <string>
#include <vector>

#include "citnet/nn.hpp"
#include "citnet/params.hpp"

// Local-feature branch: a 7x7 stem with max pooling, then four stages of
// two BasicBlocks. The BasicBlock main path is Conv3x3-BN-ReLU-Conv3x3-BN;
// the shortcut is Conv3x3-Conv1x1-BN on every block by default (an
// ablation flag restores identity/projection shortcuts). Block outputs are
// ReLU(main + shortcut). Convolutions in this branch carry no bias; the
// batch norms absorb it.

namespace citnet {

struct CnnConfig {
  int64_t in_channels = 5;
  int64_t stem_channels = 64;
  std::array<int64_t, 4> stage_channels{64, 128, 256, 512};
  std::array<int64_t, 4> stage_strides{1, 2, 2, 2};
  int blocks_per_stage = 2;
  bool standard_shortcut = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

template <typename T>
struct BnParams {
  Tensor<T> gamma, beta, run_mean, run_var;
};

enum class ShortcutKind { kConvConv, kIdentity, kProjection };

template <typename T>
struct BasicBlockParams {
  int64_t stride = 1;
  ShortcutKind shortcut = ShortcutKind::kConvConv;
  Tensor<T> main_conv1_w;
  BnParams<T> main_bn1;
  Tensor<T> main_conv2_w;
  BnParams<T> main_bn2;
  Tensor<T> short_conv3_w;  // absent for identity/projection shortcuts
  Tensor<T> short_conv1_w;  // absent for identity shortcuts
  BnParams<T> short_bn;     // absent for identity shortcuts
};

template <typename T>
struct StemParams {
  Tensor<T> conv_w;
  BnParams<T> bn;
};

namespace detail {

template <typename T>
BnParams<T> add_bn(ModelParams<T>& params, const std::string& prefix,
                   int64_t channels) {
  BnParams<T> bn;
  bn.gamma = params.add(prefix + ".gamma", Tensor<T>::ones({channels}));
  bn.beta = params.add(prefix + ".beta", Tensor<T>::zeros({channels}));
  bn.run_mean =
      params.add(prefix + ".running_mean", Tensor<T>::zeros({channels}), false);
  bn.run_var =
      params.add(prefix + ".running_var", Tensor<T>::ones({channels}), false);
  return bn;
}

}  // namespace detail

template <typename T>
StemParams<T> build_stem(ModelParams<T>& params, const std::string& prefix,
                         const CnnConfig& cfg, Rng& rng) {
  StemParams<T> stem;
  stem.conv_w = params.add(
      prefix + ".conv.w",
      detail::he_normal<T>({cfg.stem_channels, cfg.in_channels, 7, 7},
                           cfg.in_channels * 49, rng));
  stem.bn = detail::add_bn(params, prefix + ".bn", cfg.stem_channels);
  return stem;
}

template <typename T>
BasicBlockParams<T> build_basic_block(ModelParams<T>& params,
                                      const std::string& prefix, int64_t in_ch,
                                      int64_t out_ch, int64_t stride,
                                      const CnnConfig& cfg, Rng& rng) {
  BasicBlockParams<T> block;
  block.stride = stride;
  block.main_conv1_w =
      params.add(prefix + ".main.conv1.w",
                 detail::he_normal<T>({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
  block.main_bn1 = detail::add_bn(params, prefix + ".main.bn1", out_ch);
  block.main_conv2_w =
      params.add(prefix + ".main.conv2.w",
                 detail::he_normal<T>({out_ch, out_ch, 3, 3}, out_ch * 9, rng));
  block.main_bn2 = detail::add_bn(params, prefix + ".main.bn2", out_ch);

  if (!cfg.standard_shortcut) {
    block.shortcut = ShortcutKind::kConvConv;
    block.short_conv3_w =
        params.add(prefix + ".shortcut.conv3.w",
                   detail::he_normal<T>({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
    block.short_conv1_w =
        params.add(prefix + ".shortcut.conv1.w",
                   detail::he_normal<T>({out_ch, out_ch, 1, 1}, out_ch, rng));
    block.short_bn = detail::add_bn(params, prefix + ".shortcut.bn", out_ch);
  } else if (stride == 1 && in_ch == out_ch) {
    block.shortcut = ShortcutKind::kIdentity;
  } else {
    block.shortcut = ShortcutKind::kProjection;
    block.short_conv1_w =
        params.add(prefix + ".shortcut.conv1.w",
                   detail::he_normal<T>({out_ch, in_ch, 1, 1}, in_ch, rng));
    block.short_bn = detail::add_bn(params, prefix + ".shortcut.bn", out_ch);
  }
  return block;
}

template <typename T>
Tensor<T> batchnorm_apply(const Tensor<T>& x, BnParams<T>& bn,
                          const CnnConfig& cfg, Mode mode) {
  return batchnorm2d(x, bn.gamma, bn.beta, bn.run_mean, bn.run_var,
                     cfg.bn_momentum, cfg.bn_eps, mode);
}

// Stage 0: MaxPool(ReLU(BN(Conv7x7(x)))), conv stride 2 pad 4, pool 3x3
// stride 2 pad 1.
template <typename T>
Tensor<T> stem_forward(const Tensor<T>& x, StemParams<T>& stem,
                       const CnnConfig& cfg, Mode mode) {
  if (x.ndim() != 4 || x.dim(1) != cfg.in_channels) {
    throw std::invalid_argument(
        "stem_forward: expected [N," + std::to_string(cfg.in_channels) +
        ",H,W], got " + shape_str(x.shape()));
  }
  Tensor<T> y = conv2d<T>(x, stem.conv_w, std::nullopt, 2, 4);
  y = batchnorm_apply(y, stem.bn, cfg, mode);
  y = relu(y);
  return maxpool2d(y, 3, 2, 1);
}

template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& x, BasicBlockParams<T>& block,
                              const CnnConfig& cfg, Mode mode) {
  Tensor<T> main = conv2d<T>(x, block.main_conv1_w, std::nullopt, block.stride, 1);
  main = batchnorm_apply(main, block.main_bn1, cfg, mode);
  main = relu(main);
  main = conv2d<T>(main, block.main_conv2_w, std::nullopt, 1, 1);
  main = batchnorm_apply(main, block.main_bn2, cfg, mode);

  Tensor<T> shortcut;
  switch (block.shortcut) {
    case ShortcutKind::kConvConv:
      shortcut = conv2d<T>(x, block.short_conv3_w, std::nullopt, block.stride, 1);
      shortcut = conv2d<T>(shortcut, block.short_conv1_w, std::nullopt, 1, 0);
      shortcut = batchnorm_apply(shortcut, block.short_bn, cfg, mode);
      break;
    case ShortcutKind::kIdentity:
      shortcut = x;
      break;
    case ShortcutKind::kProjection:
      shortcut = conv2d<T>(x, block.short_conv1_w, std::nullopt, block.stride, 0);
      shortcut = batchnorm_apply(shortcut, block.short_bn, cfg, mode);
      break;
  }
  return relu(add(main, shortcut));
}

template <typename T>
using CnnStage = std::vector<BasicBlockParams<T>>;

template <typename T>
CnnStage<T> build_cnn_stage(ModelParams<T>& params, const std::string& prefix,
                            int stage_k, int64_t in_ch, const CnnConfig& cfg,
                            Rng& rng) {
  if (stage_k < 1 || stage_k > 4) {
    throw std::invalid_argument("build_cnn_stage: stage index must be 1..4");
  }
  const int64_t out_ch = cfg.stage_channels[static_cast<size_t>(stage_k - 1)];
  const int64_t stride = cfg.stage_strides[static_cast<size_t>(stage_k - 1)];
  CnnStage<T> stage;
  for (int b = 1; b <= cfg.blocks_per_stage; ++b) {
    stage.push_back(build_basic_block(
        params, prefix + ".block" + std::to_string(b), b == 1 ? in_ch : out_ch,
        out_ch, b == 1 ? stride : 1, cfg, rng));
  }
  return stage;
}

template <typename T>
Tensor<T> cnn_stage_forward(const Tensor<T>& x, CnnStage<T>& stage,
                            const CnnConfig& cfg, Mode mode) {
  Tensor<T> y = x;
  for (auto& block : stage) y = basic_block_forward(y, block, cfg, mode);
  return y;
}

}  // namespace citnet
