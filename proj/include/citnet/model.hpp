#pragma once

#include <string>
#include <utility>
#include <vector>

#include "citnet/cit_fusion.hpp"
#include "citnet/cnn_branch.hpp"
#include "citnet/transformer_branch.hpp"

// Full network assembly: parallel CNN and Transformer branches exchanging
// features through CIT fusion after stages 1-3, pooled heads concatenated
// into a single fully connected classifier. Ablation variants follow the
// comparison tables: single branches, plain concatenation without fusion,
// and one-directional fusion with or without the preserved feature stream.

namespace citnet {

enum class ModelVariant {
  kFull,
  kCnnOnly,
  kTransformerOnly,
  kBaselineConcat,
  kL2gOnly,
  kL2gOnlyNoTfm,
  kG2lOnly,
  kG2lOnlyNoCfm,
};

inline const std::vector<ModelVariant>& all_variants() {
  static const std::vector<ModelVariant> v = {
      ModelVariant::kCnnOnly,      ModelVariant::kTransformerOnly,
      ModelVariant::kBaselineConcat, ModelVariant::kL2gOnly,
      ModelVariant::kL2gOnlyNoTfm, ModelVariant::kG2lOnly,
      ModelVariant::kG2lOnlyNoCfm, ModelVariant::kFull,
  };
  return v;
}

// Machine-friendly identifier (CLI/config value).
inline std::string variant_key(ModelVariant v) {
  switch (v) {
    case ModelVariant::kFull: return "full";
    case ModelVariant::kCnnOnly: return "cnn_only";
    case ModelVariant::kTransformerOnly: return "transformer_only";
    case ModelVariant::kBaselineConcat: return "baseline_concat";
    case ModelVariant::kL2gOnly: return "l2g_only";
    case ModelVariant::kL2gOnlyNoTfm: return "l2g_only_no_tfm";
    case ModelVariant::kG2lOnly: return "g2l_only";
    case ModelVariant::kG2lOnlyNoCfm: return "g2l_only_no_cfm";
  }
  throw std::logic_error("variant_key: unknown variant");
}

// Row label used in the comparison tables.
inline std::string variant_label(ModelVariant v) {
  switch (v) {
    case ModelVariant::kFull: return "CIT-EmotionNet";
    case ModelVariant::kCnnOnly: return "With only CNN branch";
    case ModelVariant::kTransformerOnly: return "With only Transformer branch";
    case ModelVariant::kBaselineConcat: return "Baseline";
    case ModelVariant::kL2gOnly: return "With only L2G block";
    case ModelVariant::kL2gOnlyNoTfm: return "With only L2G block and w/o TFM";
    case ModelVariant::kG2lOnly: return "With only G2L block";
    case ModelVariant::kG2lOnlyNoCfm: return "With only G2L block and w/o CFM";
  }
  throw std::logic_error("variant_label: unknown variant");
}

inline ModelVariant parse_variant(const std::string& key) {
  for (ModelVariant v : all_variants()) {
    if (variant_key(v) == key) return v;
  }
  std::string known;
  for (ModelVariant v : all_variants()) {
    if (!known.empty()) known += ", ";
    known += variant_key(v);
  }
  throw std::invalid_argument("unknown variant '" + key + "' (expected one of " +
                              known + ")");
}

struct ModelConfig {
  int64_t in_bands = 5;
  int64_t grid_h = 32, grid_w = 32;
  int64_t num_classes = 3;
  int64_t hidden_dim = 256;
  int64_t heads = 4;
  double dropout = 0.2;
  CitTokenMode cit_mode = CitTokenMode::kDouble;
  PatchScheme patch_scheme = PatchScheme::kBandPerPatch;
  int64_t patch_size = 32;
  bool standard_shortcut = false;

  CnnConfig cnn() const {
    CnnConfig c;
    c.in_channels = in_bands;
    c.standard_shortcut = standard_shortcut;
    return c;
  }
  VitConfig vit() const {
    VitConfig v;
    v.in_bands = in_bands;
    v.grid_h = grid_h;
    v.grid_w = grid_w;
    v.hidden_dim = hidden_dim;
    v.heads = heads;
    v.patch_scheme = patch_scheme;
    v.patch_size = patch_size;
    v.dropout = dropout;
    return v;
  }
};

inline bool variant_has_cnn(ModelVariant v) {
  return v != ModelVariant::kTransformerOnly;
}
inline bool variant_has_vit(ModelVariant v) {
  return v != ModelVariant::kCnnOnly;
}
inline bool variant_has_l2g(ModelVariant v) {
  return v == ModelVariant::kFull || v == ModelVariant::kL2gOnly ||
         v == ModelVariant::kL2gOnlyNoTfm;
}
inline bool variant_has_g2l(ModelVariant v) {
  return v == ModelVariant::kFull || v == ModelVariant::kG2lOnly ||
         v == ModelVariant::kG2lOnlyNoCfm;
}
inline bool variant_keeps_tfm(ModelVariant v) {
  return v != ModelVariant::kL2gOnlyNoTfm;
}
inline bool variant_keeps_cfm(ModelVariant v) {
  return v != ModelVariant::kG2lOnlyNoCfm;
}

// Per-stage shape log captured during a forward pass.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, ModelVariant variant, uint64_t seed)
      : cfg_(cfg), variant_(variant) {
    Rng rng(derive_seed(seed, 0xC17));
    const CnnConfig cnn = cfg_.cnn();
    const VitConfig vit = cfg_.vit();
    if (variant_has_cnn(variant_)) {
      stem_ = build_stem(params_, "cnn.stem", cnn, rng);
      int64_t in_ch = cnn.stem_channels;
      for (int k = 1; k <= 4; ++k) {
        cnn_stages_.push_back(build_cnn_stage(
            params_, "cnn.stage" + std::to_string(k), k, in_ch, cnn, rng));
        in_ch = cnn.stage_channels[static_cast<size_t>(k - 1)];
      }
    }
    if (variant_has_vit(variant_)) {
      embed_ = build_patch_embed(params_, "vit.embed", vit, rng);
      for (int k = 1; k <= 4; ++k) {
        vit_stages_.push_back(
            build_vit_stage(params_, "vit.stage" + std::to_string(k), k, vit, rng));
      }
    }
    for (int k = 1; k <= 3; ++k) {
      const int64_t ch = cnn.stage_channels[static_cast<size_t>(k - 1)];
      const std::string prefix = "cit.stage" + std::to_string(k);
      if (variant_has_l2g(variant_)) {
        l2g_.push_back(build_l2g(params_, prefix + ".l2g", ch, cfg_.hidden_dim, rng));
      }
      if (variant_has_g2l(variant_)) {
        g2l_.push_back(build_g2l(params_, prefix + ".g2l", ch, cfg_.hidden_dim,
                                 variant_keeps_cfm(variant_), rng));
      }
    }
    fc_w_ = params_.add("head.fc.w",
                        Tensor<T>::randn({head_width(), cfg_.num_classes}, rng,
                                         static_cast<T>(0.02)));
    fc_b_ = params_.add("head.fc.b", Tensor<T>::zeros({cfg_.num_classes}));
  }

  int64_t head_width() const {
    const int64_t c4 = cfg_.cnn().stage_channels[3];
    if (variant_ == ModelVariant::kCnnOnly) return c4;
    if (variant_ == ModelVariant::kTransformerOnly) return cfg_.hidden_dim;
    return c4 + cfg_.hidden_dim;
  }

  ModelVariant variant() const { return variant_; }
  const ModelConfig& config() const { return cfg_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }

  // Forward to logits [N, num_classes]. `rng` is required in training mode
  // whenever dropout is active; `trace`, when given, records the per-stage
  // shapes.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng,
                    ShapeTrace* trace = nullptr) {
    const CnnConfig cnn = cfg_.cnn();
    const VitConfig vit = cfg_.vit();
    auto log = [trace](const std::string& name, const Tensor<T>& t) {
      if (trace) trace->emplace_back(name, t.shape());
    };
    log("input", x);

    Tensor<T> local, global;
    if (variant_has_cnn(variant_)) {
      local = stem_forward(x, stem_, cnn, mode);
      log("C0", local);
    }
    if (variant_has_vit(variant_)) {
      global = patch_embed(x, embed_, vit);
      log("T0", global);
    }
    for (int k = 1; k <= 4; ++k) {
      if (variant_has_cnn(variant_)) {
        local = cnn_stage_forward(local, cnn_stages_[static_cast<size_t>(k - 1)],
                                  cnn, mode);
        log("C" + std::to_string(k), local);
      }
      if (variant_has_vit(variant_)) {
        global = transformer_stage_forward(
            global, vit_stages_[static_cast<size_t>(k - 1)], vit, mode, rng);
        log("T" + std::to_string(k), global);
      }
      if (k <= 3) {
        Tensor<T> next_local = local, next_global = global;
        if (variant_has_g2l(variant_)) {
          next_local = g2l_forward(global, local, g2l_[static_cast<size_t>(k - 1)],
                                   variant_keeps_cfm(variant_));
          log("cit" + std::to_string(k) + ".g2l", next_local);
        }
        if (variant_has_l2g(variant_)) {
          next_global = l2g_forward(local, global, l2g_[static_cast<size_t>(k - 1)],
                                    cfg_.cit_mode, variant_keeps_tfm(variant_));
          log("cit" + std::to_string(k) + ".l2g", next_global);
        }
        local = next_local;
        global = next_global;
      }
    }

    Tensor<T> feat;
    if (variant_ == ModelVariant::kCnnOnly) {
      feat = reduce_mean_spatial(local);
    } else if (variant_ == ModelVariant::kTransformerOnly) {
      feat = mean_axis(global, 1);
    } else {
      feat = concat<T>({reduce_mean_spatial(local), mean_axis(global, 1)}, 1);
    }
    log("head.features", feat);
    feat = dropout(feat, cfg_.dropout, mode, rng);
    Tensor<T> logits = linear(feat, fc_w_, fc_b_);
    log("logits", logits);
    return logits;
  }

 private:
  ModelConfig cfg_;
  ModelVariant variant_;
  ModelParams<T> params_;
  StemParams<T> stem_;
  std::vector<CnnStage<T>> cnn_stages_;
  PatchEmbedParams<T> embed_;
  std::vector<VitStage<T>> vit_stages_;
  std::vector<L2gParams<T>> l2g_;
  std::vector<G2lParams<T>> g2l_;
  Tensor<T> fc_w_, fc_b_;
};

}  // namespace citnet
