#include <gtest/gtest.h>

#include <cstring>

#include "citnet/model.hpp"

namespace citnet {
namespace {

using TF = Tensor<float>;

template <typename T>
void fill_value(Tensor<T>& t, T v) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), v);
}

TEST(Stem, ReferenceShapesAndReluFloor) {
  CnnConfig cfg;
  ModelParams<float> params;
  Rng rng(1);
  auto stem = build_stem(params, "cnn.stem", cfg, rng);
  TF x = TF::randn({2, 5, 32, 32}, rng);

  // conv alone: 17x17, after pooling: 9x9
  TF conv_out = conv2d<float>(x, stem.conv_w, std::nullopt, 2, 4);
  EXPECT_EQ(conv_out.shape(), (Shape{2, 64, 17, 17}));

  TF c0 = stem_forward(x, stem, cfg, Mode::kEval);
  EXPECT_EQ(c0.shape(), (Shape{2, 64, 9, 9}));
  for (float v : c0.data()) EXPECT_GE(v, 0.0f);

  TF bad = TF::zeros({2, 3, 32, 32});
  EXPECT_THROW(stem_forward(bad, stem, cfg, Mode::kEval), std::invalid_argument);
}

TEST(Stem, AllZeroInputGivesAllZeroOutputAtIdentityBn) {
  CnnConfig cfg;
  ModelParams<float> params;
  Rng rng(2);
  auto stem = build_stem(params, "cnn.stem", cfg, rng);
  // inference with running stats (0,1), gamma=1, beta=0
  TF x = TF::zeros({1, 5, 32, 32});
  TF c0 = stem_forward(x, stem, cfg, Mode::kEval);
  for (float v : c0.data()) EXPECT_EQ(v, 0.0f);
}

TEST(BasicBlock, ZeroWeightsGiveZeroOutput) {
  CnnConfig cfg;
  ModelParams<float> params;
  Rng rng(3);
  auto block = build_basic_block(params, "b", 4, 4, 1, cfg, rng);
  fill_value(block.main_conv1_w, 0.0f);
  fill_value(block.main_conv2_w, 0.0f);
  fill_value(block.short_conv3_w, 0.0f);
  fill_value(block.short_conv1_w, 0.0f);
  TF x = TF::randn({2, 4, 5, 5}, rng);
  TF y = basic_block_forward(x, block, cfg, Mode::kEval);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(BasicBlock, CancellingPathsGiveZeroOutput) {
  // Zero convolutions leave each path at its batch-norm shift; opposite
  // shifts cancel in the addition and ReLU(0) = 0.
  CnnConfig cfg;
  ModelParams<float> params;
  Rng rng(4);
  auto block = build_basic_block(params, "b", 3, 3, 1, cfg, rng);
  fill_value(block.main_conv1_w, 0.0f);
  fill_value(block.main_conv2_w, 0.0f);
  fill_value(block.short_conv3_w, 0.0f);
  fill_value(block.short_conv1_w, 0.0f);
  fill_value(block.main_bn2.beta, 0.75f);
  fill_value(block.short_bn.beta, -0.75f);
  TF x = TF::randn({2, 3, 4, 4}, rng);
  TF y = basic_block_forward(x, block, cfg, Mode::kEval);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(BasicBlock, StrideTwoChangesChannelsAndHalvesSpatial) {
  CnnConfig cfg;
  ModelParams<float> params;
  Rng rng(5);
  auto block = build_basic_block(params, "b", 64, 128, 2, cfg, rng);
  TF x = TF::randn({1, 64, 9, 9}, rng);
  TF y = basic_block_forward(x, block, cfg, Mode::kEval);
  EXPECT_EQ(y.shape(), (Shape{1, 128, 5, 5}));
}

TEST(BasicBlock, StandardShortcutIdentityPassesInputThrough) {
  CnnConfig cfg;
  cfg.standard_shortcut = true;
  ModelParams<float> params;
  Rng rng(6);
  auto block = build_basic_block(params, "b", 4, 4, 1, cfg, rng);
  EXPECT_EQ(block.shortcut, ShortcutKind::kIdentity);
  EXPECT_FALSE(params.contains("b.shortcut.conv3.w"));
  fill_value(block.main_conv1_w, 0.0f);
  fill_value(block.main_conv2_w, 0.0f);
  TF x = TF::randn({2, 4, 5, 5}, rng);
  TF y = basic_block_forward(x, block, cfg, Mode::kEval);
  // main path contributes zero, so out = relu(x)
  for (int64_t i = 0; i < x.numel(); ++i) {
    EXPECT_FLOAT_EQ(y.data()[i], std::max(0.0f, x.data()[i]));
  }

  auto down = build_basic_block(params, "d", 4, 8, 2, cfg, rng);
  EXPECT_EQ(down.shortcut, ShortcutKind::kProjection);
}

TEST(CnnStages, ReferenceTraceAndInvariants) {
  CnnConfig cfg;
  ModelParams<float> params;
  Rng rng(7);
  auto stem = build_stem(params, "stem", cfg, rng);
  std::vector<CnnStage<float>> stages;
  int64_t in_ch = 64;
  for (int k = 1; k <= 4; ++k) {
    stages.push_back(build_cnn_stage(params, "s" + std::to_string(k), k, in_ch,
                                     cfg, rng));
    in_ch = cfg.stage_channels[static_cast<size_t>(k - 1)];
  }
  TF x = TF::randn({2, 5, 32, 32}, rng);
  TF c = stem_forward(x, stem, cfg, Mode::kEval);
  const std::vector<Shape> expect = {{2, 64, 9, 9},
                                     {2, 128, 5, 5},
                                     {2, 256, 3, 3},
                                     {2, 512, 2, 2}};
  int64_t prev_extent = c.dim(2);
  for (int k = 1; k <= 4; ++k) {
    c = cnn_stage_forward(c, stages[static_cast<size_t>(k - 1)], cfg, Mode::kEval);
    EXPECT_EQ(c.shape(), expect[static_cast<size_t>(k - 1)]) << "stage " << k;
    for (float v : c.data()) EXPECT_GE(v, 0.0f);
    EXPECT_LE(c.dim(2), prev_extent);
    prev_extent = c.dim(2);
  }
  EXPECT_THROW(build_cnn_stage(params, "bad", 5, 64, cfg, rng),
               std::invalid_argument);
}

TEST(CnnStages, DeterministicRepeatInference) {
  CnnConfig cfg;
  ModelParams<float> params;
  Rng rng(8);
  auto stage = build_cnn_stage(params, "s1", 1, 64, cfg, rng);
  TF x = TF::randn({1, 64, 9, 9}, rng);
  TF a = cnn_stage_forward(x, stage, cfg, Mode::kEval);
  TF b = cnn_stage_forward(x, stage, cfg, Mode::kEval);
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(),
                        sizeof(float) * static_cast<size_t>(a.numel())),
            0);
}

TEST(CnnBranch, GradientFlowsToStemInput) {
  CnnConfig cfg;
  ModelParams<double> params;
  Rng rng(9);
  auto stem = build_stem(params, "stem", cfg, rng);
  std::vector<CnnStage<double>> stages;
  int64_t in_ch = 64;
  for (int k = 1; k <= 4; ++k) {
    stages.push_back(build_cnn_stage(params, "s" + std::to_string(k), k, in_ch,
                                     cfg, rng));
    in_ch = cfg.stage_channels[static_cast<size_t>(k - 1)];
  }
  Tensor<double> x = Tensor<double>::randn({2, 5, 32, 32}, rng, 1.0, true);
  Tensor<double> c = stem_forward(x, stem, cfg, Mode::kTrain);
  for (auto& s : stages) c = cnn_stage_forward(c, s, cfg, Mode::kTrain);
  sum_all(c).backward();
  double norm = 0;
  for (double v : x.grad().data()) {
    ASSERT_TRUE(std::isfinite(v));
    norm += v * v;
  }
  EXPECT_GT(norm, 0.0);
}

TEST(PatchEmbed, PaperShapeAndZeroCase) {
  VitConfig cfg;
  ModelParams<float> params;
  Rng rng(10);
  auto embed = build_patch_embed(params, "embed", cfg, rng);
  TF x = TF::randn({3, 5, 32, 32}, rng);
  TF tokens = patch_embed(x, embed, cfg);
  EXPECT_EQ(tokens.shape(), (Shape{3, 5, 256}));

  fill_value(embed.proj_w, 0.0f);
  fill_value(embed.pos, 0.0f);
  TF zeros = patch_embed(x, embed, cfg);
  for (float v : zeros.data()) EXPECT_EQ(v, 0.0f);

  TF bad = TF::randn({1, 5, 16, 16}, rng);
  EXPECT_THROW(patch_embed(bad, embed, cfg), std::invalid_argument);
}

TEST(PatchEmbed, OneHotProjectionReadsPatchPixel) {
  VitConfig cfg;
  ModelParams<float> params;
  Rng rng(11);
  auto embed = build_patch_embed(params, "embed", cfg, rng);
  fill_value(embed.proj_w, 0.0f);
  fill_value(embed.proj_b, 0.0f);
  fill_value(embed.pos, 0.0f);
  const int64_t r = 7, j = 130;  // token coordinate r reads flat pixel j
  embed.proj_w.mutable_data()[static_cast<size_t>(j * 256 + r)] = 1.0f;
  TF x = TF::randn({2, 5, 32, 32}, rng);
  TF tokens = patch_embed(x, embed, cfg);
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t p = 0; p < 5; ++p) {
      const float pixel = x.data()[static_cast<size_t>(
          ((n * 5 + p) * 1024) + j)];
      EXPECT_FLOAT_EQ((tokens.at({n, p, r})), pixel);
    }
  }
}

TEST(PatchEmbed, SpatialSchemeTokenCount) {
  VitConfig cfg;
  cfg.grid_h = cfg.grid_w = 16;
  cfg.patch_size = 8;
  cfg.patch_scheme = PatchScheme::kSpatial;
  EXPECT_EQ(cfg.n_tokens(), 4);
  EXPECT_EQ(cfg.patch_dim(), 5 * 64);
  ModelParams<float> params;
  Rng rng(12);
  auto embed = build_patch_embed(params, "embed", cfg, rng);
  TF x = TF::randn({2, 5, 16, 16}, rng);
  EXPECT_EQ(patch_embed(x, embed, cfg).shape(), (Shape{2, 4, 256}));
}

TEST(EncoderBlock, ZeroWeightsAreExactIdentity) {
  VitConfig cfg;
  cfg.dropout = 0.0;
  ModelParams<float> params;
  Rng rng(13);
  auto block = build_encoder_block(params, "blk", cfg, rng);
  fill_value(block.wq, 0.0f);
  fill_value(block.wk, 0.0f);
  fill_value(block.wv, 0.0f);
  fill_value(block.wo, 0.0f);
  fill_value(block.mlp_w1, 0.0f);
  fill_value(block.mlp_w2, 0.0f);
  TF x = TF::randn({2, 5, 256}, rng);
  TF y = encoder_block_forward(x, block, cfg, Mode::kEval, nullptr);
  ASSERT_EQ(y.shape(), x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(y.data()[i], x.data()[i]);
  }
}

TEST(EncoderBlock, PermutationEquivariantOverTokens) {
  VitConfig cfg;
  cfg.dropout = 0.0;
  ModelParams<float> params;
  Rng rng(14);
  auto block = build_encoder_block(params, "blk", cfg, rng);
  TF x = TF::randn({1, 5, 256}, rng);
  TF y = encoder_block_forward(x, block, cfg, Mode::kEval, nullptr);

  // cyclic shift of the token axis
  TF x_rot = concat<float>({slice(x, 1, 1, 4), slice(x, 1, 0, 1)}, 1);
  TF y_rot = encoder_block_forward(x_rot, block, cfg, Mode::kEval, nullptr);
  TF y_expect = concat<float>({slice(y, 1, 1, 4), slice(y, 1, 0, 1)}, 1);
  for (int64_t i = 0; i < y_rot.numel(); ++i) {
    EXPECT_NEAR(y_rot.data()[i], y_expect.data()[i], 1e-4);
  }
}

TEST(EncoderBlock, AttentionProbeIsRowStochastic) {
  VitConfig cfg;
  cfg.dropout = 0.0;
  ModelParams<float> params;
  Rng rng(15);
  auto block = build_encoder_block(params, "blk", cfg, rng);
  TF x = TF::randn({2, 5, 256}, rng);
  TF probs;
  encoder_block_forward(x, block, cfg, Mode::kEval, nullptr, &probs);
  ASSERT_EQ(probs.shape(), (Shape{2 * 4, 5, 5}));  // [N*heads, L, L]
  const float* p = probs.data().data();
  for (int64_t row = 0; row < 8 * 5; ++row) {
    double sum = 0;
    for (int64_t j = 0; j < 5; ++j) {
      EXPECT_GE(p[row * 5 + j], 0.0f);
      sum += p[row * 5 + j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(TransformerStage, PreservesShapeAndIsDeterministic) {
  VitConfig cfg;
  ModelParams<float> params;
  Rng rng(16);
  auto stage = build_vit_stage(params, "v1", 1, cfg, rng);
  TF x = TF::randn({2, 5, 256}, rng);
  TF a = transformer_stage_forward(x, stage, cfg, Mode::kEval, nullptr);
  EXPECT_EQ(a.shape(), (Shape{2, 5, 256}));
  TF b = transformer_stage_forward(x, stage, cfg, Mode::kEval, nullptr);
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(),
                        sizeof(float) * static_cast<size_t>(a.numel())),
            0);
  EXPECT_THROW(build_vit_stage(params, "bad", 0, cfg, rng),
               std::invalid_argument);
}

TEST(L2g, ShapeRuleDoublesTokens) {
  ModelParams<float> params;
  Rng rng(17);
  auto p = build_l2g(params, "l2g", 64, 256, rng);
  TF f_l = TF::randn({2, 64, 9, 9}, rng);
  TF f_g = TF::randn({2, 5, 256}, rng);
  TF out = l2g_forward(f_l, f_g, p, CitTokenMode::kDouble);
  EXPECT_EQ(out.shape(), (Shape{2, 10, 256}));

  TF single = l2g_forward(f_l, f_g, p, CitTokenMode::kSingleToken);
  EXPECT_EQ(single.shape(), (Shape{2, 6, 256}));

  TF bad = TF::randn({2, 32, 9, 9}, rng);
  EXPECT_THROW(l2g_forward(bad, f_g, p, CitTokenMode::kDouble),
               std::invalid_argument);
}

TEST(L2g, IdentityPaddedMapCarriesPooledConstant) {
  ModelParams<float> params;
  Rng rng(18);
  auto p = build_l2g(params, "l2g", 4, 8, rng);
  fill_value(p.w, 0.0f);
  fill_value(p.b, 0.0f);
  auto w = p.w.mutable_data();
  for (int64_t i = 0; i < 4; ++i) w[static_cast<size_t>(i * 8 + i)] = 1.0f;

  const float c = 2.5f;
  TF f_l = TF::full({1, 4, 3, 3}, c);
  TF f_g = TF::randn({1, 2, 8}, rng);
  TF out = l2g_forward(f_l, f_g, p, CitTokenMode::kDouble);
  ASSERT_EQ(out.shape(), (Shape{1, 4, 8}));
  for (int64_t t = 0; t < 2; ++t) {  // injected tokens lead
    for (int64_t d = 0; d < 8; ++d) {
      EXPECT_FLOAT_EQ((out.at({0, t, d})), d < 4 ? c : 0.0f);
    }
  }
}

TEST(L2g, TrailingTokensAreBitwiseTheOriginals) {
  ModelParams<float> params;
  Rng rng(19);
  auto p = build_l2g(params, "l2g", 64, 256, rng);
  TF f_l = TF::randn({2, 64, 9, 9}, rng);
  TF f_g = TF::randn({2, 5, 256}, rng);
  TF out = l2g_forward(f_l, f_g, p, CitTokenMode::kDouble);
  // trailing L tokens == F_G exactly
  const float* tail = out.data().data() + 5 * 256;
  for (int64_t n = 0; n < 2; ++n) {
    EXPECT_EQ(std::memcmp(out.data().data() + (n * 10 + 5) * 256,
                          f_g.data().data() + n * 5 * 256,
                          sizeof(float) * 5 * 256),
              0);
  }
  (void)tail;

  // zero map: injected tokens all zero
  fill_value(p.w, 0.0f);
  fill_value(p.b, 0.0f);
  TF out0 = l2g_forward(f_l, f_g, p, CitTokenMode::kDouble);
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t i = 0; i < 5 * 256; ++i) {
      EXPECT_EQ(out0.data()[n * 10 * 256 + i], 0.0f);
    }
  }

  // w/o TFM: the stream is replaced by the injected copies
  TF no_tfm = l2g_forward(f_l, f_g, p, CitTokenMode::kDouble, false);
  EXPECT_EQ(no_tfm.shape(), (Shape{2, 5, 256}));
}

TEST(G2l, BroadcastIsSpatiallyConstantAndShapesMatch) {
  ModelParams<float> params;
  Rng rng(20);
  auto p = build_g2l(params, "g2l", 64, 256, true, rng);
  TF f_g = TF::randn({2, 10, 256}, rng);
  TF f_l = TF::randn({2, 64, 9, 9}, rng);
  TF out = g2l_forward(f_g, f_l, p);
  EXPECT_EQ(out.shape(), (Shape{2, 64, 9, 9}));

  // conv selecting global channel i as identity: output equals the first
  // token coordinate i at every spatial position
  fill_value(p.conv_w, 0.0f);
  fill_value(p.conv_b, 0.0f);
  auto w = p.conv_w.mutable_data();
  for (int64_t i = 0; i < 64; ++i) {
    w[static_cast<size_t>(i * 320 + i)] = 1.0f;  // global channels lead
  }
  TF sel = g2l_forward(f_g, f_l, p);
  for (int64_t n = 0; n < 2; ++n) {
    for (int64_t i = 0; i < 64; ++i) {
      const float expect = f_g.at({n, 0, i});
      for (int64_t r = 0; r < 9; ++r) {
        for (int64_t c = 0; c < 9; ++c) {
          EXPECT_FLOAT_EQ((sel.at({n, i, r, c})), expect);
        }
      }
    }
  }
}

TEST(G2l, ZeroConvGivesZeroAndNoCfmChangesWidth) {
  ModelParams<float> params;
  Rng rng(21);
  auto p = build_g2l(params, "g2l", 64, 256, true, rng);
  fill_value(p.conv_w, 0.0f);
  fill_value(p.conv_b, 0.0f);
  TF f_g = TF::randn({1, 5, 256}, rng);
  TF f_l = TF::randn({1, 64, 9, 9}, rng);
  TF out = g2l_forward(f_g, f_l, p);
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);

  auto p_nocfm = build_g2l(params, "g2l_nc", 64, 256, false, rng);
  EXPECT_EQ(p_nocfm.conv_w.shape(), (Shape{64, 256, 1, 1}));
  TF out2 = g2l_forward(f_g, f_l, p_nocfm, false);
  EXPECT_EQ(out2.shape(), (Shape{1, 64, 9, 9}));
  // mismatched params vs keep_local flag is an error
  EXPECT_THROW(g2l_forward(f_g, f_l, p_nocfm, true), std::invalid_argument);
}

TEST(CitForward, ParallelSemanticsAndReferenceTrace) {
  ModelParams<float> params;
  Rng rng(22);
  auto l2g = build_l2g(params, "l2g", 64, 256, rng);
  auto g2l = build_g2l(params, "g2l", 64, 256, true, rng);
  TF c1 = TF::randn({2, 64, 9, 9}, rng);
  TF t1 = TF::randn({2, 5, 256}, rng);

  auto [next_l, next_g] = cit_forward(c1, t1, l2g, g2l, CitTokenMode::kDouble);
  EXPECT_EQ(next_l.shape(), (Shape{2, 64, 9, 9}));
  EXPECT_EQ(next_g.shape(), (Shape{2, 10, 256}));

  // swapping evaluation order changes nothing (pure functions)
  TF g_first = l2g_forward(c1, t1, l2g, CitTokenMode::kDouble);
  TF l_second = g2l_forward(t1, c1, g2l);
  EXPECT_EQ(std::memcmp(next_l.data().data(), l_second.data().data(),
                        sizeof(float) * static_cast<size_t>(next_l.numel())),
            0);
  EXPECT_EQ(std::memcmp(next_g.data().data(), g_first.data().data(),
                        sizeof(float) * static_cast<size_t>(next_g.numel())),
            0);
}

TEST(CitForward, ZeroParametersComposeTheTwoZeroCases) {
  ModelParams<float> params;
  Rng rng(23);
  auto l2g = build_l2g(params, "l2g", 8, 16, rng);
  auto g2l = build_g2l(params, "g2l", 8, 16, true, rng);
  fill_value(l2g.w, 0.0f);
  fill_value(l2g.b, 0.0f);
  fill_value(g2l.conv_w, 0.0f);
  fill_value(g2l.conv_b, 0.0f);
  TF f_l = TF::randn({1, 8, 3, 3}, rng);
  TF f_g = TF::randn({1, 3, 16}, rng);
  auto [next_l, next_g] = cit_forward(f_l, f_g, l2g, g2l, CitTokenMode::kDouble);
  for (float v : next_l.data()) EXPECT_EQ(v, 0.0f);
  for (int64_t i = 0; i < 3 * 16; ++i) EXPECT_EQ(next_g.data()[i], 0.0f);
  EXPECT_EQ(std::memcmp(next_g.data().data() + 3 * 16, f_g.data().data(),
                        sizeof(float) * 3 * 16),
            0);
}

TEST(Model, FullVariantShapeTraceMatchesReference) {
  ModelConfig cfg;
  Model<float> model(cfg, ModelVariant::kFull, 1);
  Rng rng(24);
  TF x = TF::randn({2, 5, 32, 32}, rng);
  ShapeTrace trace;
  TF logits = model.forward(x, Mode::kEval, nullptr, &trace);
  EXPECT_EQ(logits.shape(), (Shape{2, 3}));

  auto find = [&](const std::string& name) -> Shape {
    for (const auto& [n, s] : trace) {
      if (n == name) return s;
    }
    ADD_FAILURE() << "trace missing " << name;
    return {};
  };
  EXPECT_EQ(find("C0"), (Shape{2, 64, 9, 9}));
  EXPECT_EQ(find("C1"), (Shape{2, 64, 9, 9}));
  EXPECT_EQ(find("C2"), (Shape{2, 128, 5, 5}));
  EXPECT_EQ(find("C3"), (Shape{2, 256, 3, 3}));
  EXPECT_EQ(find("C4"), (Shape{2, 512, 2, 2}));
  EXPECT_EQ(find("T0"), (Shape{2, 5, 256}));
  EXPECT_EQ(find("T1"), (Shape{2, 5, 256}));
  EXPECT_EQ(find("T2"), (Shape{2, 10, 256}));
  EXPECT_EQ(find("T3"), (Shape{2, 20, 256}));
  EXPECT_EQ(find("T4"), (Shape{2, 40, 256}));
  EXPECT_EQ(find("head.features"), (Shape{2, 768}));

  // softmax of logits is row-stochastic
  TF probs = softmax(logits, -1);
  for (int64_t n = 0; n < 2; ++n) {
    double sum = 0;
    for (int64_t k = 0; k < 3; ++k) sum += probs.at({n, k});
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Model, VariantParameterContainment) {
  ModelConfig cfg;
  auto names_of = [&](ModelVariant v) {
    Model<float> m(cfg, v, 1);
    std::vector<std::string> names;
    for (const auto& e : m.params().entries()) names.push_back(e.name);
    return names;
  };

  auto has_prefix = [](const std::vector<std::string>& names,
                       const std::string& prefix) {
    for (const auto& n : names) {
      if (n.rfind(prefix, 0) == 0) return true;
    }
    return false;
  };

  auto full = names_of(ModelVariant::kFull);
  auto baseline = names_of(ModelVariant::kBaselineConcat);
  auto cnn_only = names_of(ModelVariant::kCnnOnly);
  auto t_only = names_of(ModelVariant::kTransformerOnly);

  EXPECT_TRUE(has_prefix(full, "cit."));
  EXPECT_FALSE(has_prefix(baseline, "cit."));
  EXPECT_FALSE(has_prefix(cnn_only, "vit."));
  EXPECT_FALSE(has_prefix(t_only, "cnn."));

  // full == baseline plus the cit.* entries
  std::vector<std::string> full_minus_cit;
  for (const auto& n : full) {
    if (n.rfind("cit.", 0) != 0) full_minus_cit.push_back(n);
  }
  EXPECT_EQ(full_minus_cit, baseline);

  // one-directional variants carry only their own block's parameters
  auto l2g_only = names_of(ModelVariant::kL2gOnly);
  EXPECT_TRUE(has_prefix(l2g_only, "cit.stage1.l2g"));
  EXPECT_FALSE(has_prefix(l2g_only, "cit.stage1.g2l"));
  auto g2l_only = names_of(ModelVariant::kG2lOnly);
  EXPECT_TRUE(has_prefix(g2l_only, "cit.stage1.g2l"));
  EXPECT_FALSE(has_prefix(g2l_only, "cit.stage1.l2g"));
}

TEST(Model, VariantLabelsMatchComparisonTables) {
  EXPECT_EQ(variant_label(ModelVariant::kCnnOnly), "With only CNN branch");
  EXPECT_EQ(variant_label(ModelVariant::kTransformerOnly),
            "With only Transformer branch");
  EXPECT_EQ(variant_label(ModelVariant::kBaselineConcat), "Baseline");
  EXPECT_EQ(variant_label(ModelVariant::kL2gOnly), "With only L2G block");
  EXPECT_EQ(variant_label(ModelVariant::kL2gOnlyNoTfm),
            "With only L2G block and w/o TFM");
  EXPECT_EQ(variant_label(ModelVariant::kG2lOnly), "With only G2L block");
  EXPECT_EQ(variant_label(ModelVariant::kG2lOnlyNoCfm),
            "With only G2L block and w/o CFM");
  EXPECT_EQ(variant_label(ModelVariant::kFull), "CIT-EmotionNet");
  EXPECT_THROW(parse_variant("bogus"), std::invalid_argument);
}

TEST(Model, VariantHeadWidthsAndTokenGrowthModes) {
  ModelConfig cfg;
  Rng rng(25);
  TF x = TF::randn({2, 5, 32, 32}, rng);
  {
    Model<float> m(cfg, ModelVariant::kCnnOnly, 1);
    EXPECT_EQ(m.head_width(), 512);
    EXPECT_EQ(m.forward(x, Mode::kEval, nullptr).shape(), (Shape{2, 3}));
  }
  {
    Model<float> m(cfg, ModelVariant::kTransformerOnly, 1);
    EXPECT_EQ(m.head_width(), 256);
    m.forward(x, Mode::kEval, nullptr);
  }
  {
    ModelConfig single = cfg;
    single.cit_mode = CitTokenMode::kSingleToken;
    Model<float> m(single, ModelVariant::kFull, 1);
    ShapeTrace trace;
    m.forward(x, Mode::kEval, nullptr, &trace);
    for (const auto& [name, shape] : trace) {
      if (name == "T4") EXPECT_EQ(shape, (Shape{2, 8, 256}));  // 5,6,7,8
    }
  }
  {
    Model<float> m(cfg, ModelVariant::kL2gOnlyNoTfm, 1);
    ShapeTrace trace;
    m.forward(x, Mode::kEval, nullptr, &trace);
    for (const auto& [name, shape] : trace) {
      if (name == "T4") EXPECT_EQ(shape, (Shape{2, 5, 256}));  // stream replaced
    }
  }
}

TEST(Model, SameSeedBitIdenticalInitAndInference) {
  ModelConfig cfg;
  Model<float> a(cfg, ModelVariant::kFull, 77);
  Model<float> b(cfg, ModelVariant::kFull, 77);
  ASSERT_EQ(a.params().size(), b.params().size());
  for (size_t i = 0; i < a.params().size(); ++i) {
    const auto& ea = a.params().entries()[i];
    const auto& eb = b.params().entries()[i];
    ASSERT_EQ(ea.name, eb.name);
    EXPECT_EQ(std::memcmp(ea.tensor.data().data(), eb.tensor.data().data(),
                          sizeof(float) * static_cast<size_t>(ea.tensor.numel())),
              0)
        << ea.name;
  }
  Rng rng(26);
  TF x = TF::randn({2, 5, 32, 32}, rng);
  TF la = a.forward(x, Mode::kEval, nullptr);
  TF lb = b.forward(x, Mode::kEval, nullptr);
  EXPECT_EQ(std::memcmp(la.data().data(), lb.data().data(),
                        sizeof(float) * static_cast<size_t>(la.numel())),
            0);
}

TEST(Model, GradientReachesEveryTrainableParameter) {
  ModelConfig cfg;
  Model<float> model(cfg, ModelVariant::kFull, 3);
  Rng rng(27), drop(28);
  TF x = TF::randn({2, 5, 32, 32}, rng);
  TF logits = model.forward(x, Mode::kTrain, &drop);
  cross_entropy(logits, {0, 1}).backward();
  for (const auto& e : model.params().entries()) {
    if (!e.trainable) continue;
    ASSERT_TRUE(e.tensor.has_grad()) << e.name;
    double norm = 0;
    for (float v : e.tensor.grad().data()) {
      ASSERT_TRUE(std::isfinite(v)) << e.name;
      norm += static_cast<double>(v) * v;
    }
    EXPECT_GT(norm, 0.0) << e.name;
  }
}

}  // namespace
}  // namespace citnet
