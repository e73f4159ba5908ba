#pragma once

#include <functional>
#include <string>
#include <vector>

#include "citnet/cit_fusion.hpp"
#include "citnet/cnn_branch.hpp"
#include "citnet/nn.hpp"
#include "citnet/transformer_branch.hpp"

// Finite-difference verification of every backward rule. Each registered
// case builds a scalar loss from random small inputs, compares the
// analytic gradient of every input element against a central difference
// (h = 1e-5, 64-bit), and reports the worst relative error
// |analytic - numeric| / (|analytic| + 1e-8).

namespace citnet {

struct GradCheckReport {
  std::string name;
  double worst_rel_err = 0.0;
  bool pass = false;
};

// Worst relative error over all elements of all leaves. `loss_fn` must
// rebuild the graph from the current leaf values on every call.
inline double finite_diff_worst_rel_err(
    const std::function<Tensor<double>()>& loss_fn,
    std::vector<Tensor<double>> leaves, double h = 1e-5) {
  Tensor<double> loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) {
    const auto g = leaf.grad();
    analytic.emplace_back(g.data().begin(), g.data().end());
  }

  double worst = 0.0;
  NoGradGuard no_grad;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto data = leaves[li].mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss_fn().item();
      data[i] = saved - h;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[li][i];
      const double rel = std::abs(a - numeric) / (std::abs(a) + 1e-8);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

struct GradCheckCase {
  std::string name;
  // Returns the worst relative error over the case's random instances.
  std::function<double(uint64_t)> run;
};

inline const std::vector<GradCheckCase>& gradcheck_suite() {
  using TD = Tensor<double>;
  static const std::vector<GradCheckCase> cases = [] {
    std::vector<GradCheckCase> cs;
    auto add_case = [&cs](std::string name, int instances,
                          std::function<double(Rng&)> one) {
      cs.push_back({std::move(name), [instances, one](uint64_t seed) {
                      double worst = 0.0;
                      for (int i = 0; i < instances; ++i) {
                        Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
                        worst = std::max(worst, one(rng));
                      }
                      return worst;
                    }});
    };

    add_case("add", 5, [](Rng& rng) {
      TD a = TD::randn({3, 4}, rng, 1.0, true);
      TD b = TD::randn({4}, rng, 1.0, true);
      TD w = TD::randn({3, 4}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(add(a, b), w)); }, {a, b});
    });

    add_case("mul", 5, [](Rng& rng) {
      TD a = TD::randn({3, 4}, rng, 1.0, true);
      TD b = TD::randn({3, 4}, rng, 1.0, true);
      TD w = TD::randn({3, 4}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(mul(a, b), w)); }, {a, b});
    });

    add_case("matmul", 5, [](Rng& rng) {
      const int64_t m = 2 + static_cast<int64_t>(rng.uniform_int(3));
      const int64_t k = 2 + static_cast<int64_t>(rng.uniform_int(3));
      const int64_t n = 2 + static_cast<int64_t>(rng.uniform_int(3));
      TD a = TD::randn({2, m, k}, rng, 1.0, true);
      TD b = TD::randn({k, n}, rng, 1.0, true);
      TD w = TD::randn({2, m, n}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(matmul(a, b), w)); }, {a, b});
    });

    add_case("conv2d", 5, [](Rng& rng) {
      TD x = TD::randn({2, 3, 6, 6}, rng, 1.0, true);
      TD kw = TD::randn({4, 3, 3, 3}, rng, 0.5, true);
      TD b = TD::randn({4}, rng, 0.5, true);
      const int64_t stride = 1 + static_cast<int64_t>(rng.uniform_int(2));
      TD w = TD::randn({2, 4, stride == 1 ? 6 : 3, stride == 1 ? 6 : 3}, rng);
      return finite_diff_worst_rel_err(
          [&] {
            return sum_all(mul(conv2d<double>(x, kw, b, stride, 1), w));
          },
          {x, kw, b});
    });

    add_case("maxpool2d", 5, [](Rng& rng) {
      TD x = TD::randn({2, 2, 6, 6}, rng, 1.0, true);
      TD w = TD::randn({2, 2, 3, 3}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(maxpool2d(x, 3, 2, 1), w)); }, {x});
    });

    add_case("batchnorm2d_train", 5, [](Rng& rng) {
      TD x = TD::randn({3, 2, 4, 4}, rng, 1.0, true);
      TD gamma = TD::randn({2}, rng, 0.5, true);
      TD beta = TD::randn({2}, rng, 0.5, true);
      TD w = TD::randn({3, 2, 4, 4}, rng);
      return finite_diff_worst_rel_err(
          [&] {
            TD rm = TD::zeros({2});
            TD rv = TD::ones({2});
            return sum_all(mul(
                batchnorm2d(x, gamma, beta, rm, rv, 0.1, 1e-5, Mode::kTrain), w));
          },
          {x, gamma, beta});
    });

    add_case("batchnorm2d_eval", 5, [](Rng& rng) {
      TD x = TD::randn({3, 2, 4, 4}, rng, 1.0, true);
      TD gamma = TD::randn({2}, rng, 0.5, true);
      TD beta = TD::randn({2}, rng, 0.5, true);
      TD rm = TD::randn({2}, rng, 0.3);
      TD rv = TD::from_data({2}, {0.8, 1.3});
      TD w = TD::randn({3, 2, 4, 4}, rng);
      return finite_diff_worst_rel_err(
          [&] {
            return sum_all(mul(
                batchnorm2d(x, gamma, beta, rm, rv, 0.1, 1e-5, Mode::kEval), w));
          },
          {x, gamma, beta});
    });

    add_case("relu", 5, [](Rng& rng) {
      TD x = TD::randn({4, 5}, rng, 1.0, true);
      TD w = TD::randn({4, 5}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(relu(x), w)); }, {x});
    });

    add_case("gelu", 5, [](Rng& rng) {
      TD x = TD::randn({4, 5}, rng, 1.0, true);
      TD w = TD::randn({4, 5}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(gelu(x), w)); }, {x});
    });

    add_case("linear", 5, [](Rng& rng) {
      TD x = TD::randn({2, 3, 5}, rng, 1.0, true);
      TD wt = TD::randn({5, 4}, rng, 0.5, true);
      TD b = TD::randn({4}, rng, 0.5, true);
      TD w = TD::randn({2, 3, 4}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(linear(x, wt, b), w)); }, {x, wt, b});
    });

    add_case("layernorm", 5, [](Rng& rng) {
      TD x = TD::randn({3, 4, 6}, rng, 1.0, true);
      TD gamma = TD::randn({6}, rng, 0.5, true);
      TD beta = TD::randn({6}, rng, 0.5, true);
      TD w = TD::randn({3, 4, 6}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(layernorm(x, gamma, beta, 1e-5), w)); },
          {x, gamma, beta});
    });

    add_case("softmax", 5, [](Rng& rng) {
      TD x = TD::randn({3, 4, 5}, rng, 2.0, true);
      TD w = TD::randn({3, 4, 5}, rng);
      const int axis = static_cast<int>(rng.uniform_int(3));
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(softmax(x, axis), w)); }, {x});
    });

    add_case("attention", 5, [](Rng& rng) {
      TD q = TD::randn({2, 3, 4}, rng, 1.0, true);
      TD k = TD::randn({2, 5, 4}, rng, 1.0, true);
      TD v = TD::randn({2, 5, 3}, rng, 1.0, true);
      TD w = TD::randn({2, 3, 3}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(attention(q, k, v), w)); }, {q, k, v});
    });

    add_case("multi_head_attention", 3, [](Rng& rng) {
      const int64_t d = 8;
      TD x = TD::randn({2, 4, d}, rng, 1.0, true);
      TD wq = TD::randn({d, d}, rng, 0.4, true);
      TD wk = TD::randn({d, d}, rng, 0.4, true);
      TD wv = TD::randn({d, d}, rng, 0.4, true);
      TD wo = TD::randn({d, d}, rng, 0.4, true);
      TD w = TD::randn({2, 4, d}, rng);
      return finite_diff_worst_rel_err(
          [&] {
            return sum_all(mul(multi_head_attention(x, wq, wk, wv, wo, 2), w));
          },
          {x, wq, wk, wv, wo});
    });

    add_case("mlp_block", 3, [](Rng& rng) {
      TD x = TD::randn({2, 3, 4}, rng, 1.0, true);
      TD w1 = TD::randn({4, 8}, rng, 0.5, true);
      TD b1 = TD::randn({8}, rng, 0.5, true);
      TD w2 = TD::randn({8, 4}, rng, 0.5, true);
      TD b2 = TD::randn({4}, rng, 0.5, true);
      TD w = TD::randn({2, 3, 4}, rng);
      const uint64_t mask_seed = rng.next_u64();
      return finite_diff_worst_rel_err(
          [&, mask_seed] {
            Rng drop(mask_seed);  // same mask for every evaluation
            return sum_all(
                mul(mlp_block(x, w1, b1, w2, b2, 0.25, Mode::kTrain, &drop), w));
          },
          {x, w1, b1, w2, b2});
    });

    add_case("reduce_mean_spatial", 5, [](Rng& rng) {
      TD x = TD::randn({2, 3, 4, 5}, rng, 1.0, true);
      TD w = TD::randn({2, 3}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(reduce_mean_spatial(x), w)); }, {x});
    });

    add_case("mean_axis", 5, [](Rng& rng) {
      TD x = TD::randn({3, 4, 5}, rng, 1.0, true);
      TD w = TD::randn({3, 5}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(mean_axis(x, 1), w)); }, {x});
    });

    add_case("reshape", 5, [](Rng& rng) {
      TD x = TD::randn({3, 4}, rng, 1.0, true);
      TD w = TD::randn({2, 6}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(reshape(x, {2, 6}), w)); }, {x});
    });

    add_case("permute", 5, [](Rng& rng) {
      TD x = TD::randn({2, 3, 4}, rng, 1.0, true);
      TD w = TD::randn({4, 2, 3}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(permute(x, {2, 0, 1}), w)); }, {x});
    });

    add_case("squeeze_unsqueeze", 5, [](Rng& rng) {
      TD x = TD::randn({3, 1, 4}, rng, 1.0, true);
      TD w = TD::randn({1, 3, 4}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(unsqueeze(squeeze(x, 1), 0), w)); }, {x});
    });

    add_case("expand", 5, [](Rng& rng) {
      TD x = TD::randn({3, 1, 2}, rng, 1.0, true);
      TD w = TD::randn({3, 4, 2}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(expand(x, {3, 4, 2}), w)); }, {x});
    });

    add_case("concat", 5, [](Rng& rng) {
      TD a = TD::randn({2, 3}, rng, 1.0, true);
      TD b = TD::randn({2, 5}, rng, 1.0, true);
      TD w = TD::randn({2, 8}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(concat<double>({a, b}, 1), w)); }, {a, b});
    });

    add_case("slice", 5, [](Rng& rng) {
      TD x = TD::randn({3, 6}, rng, 1.0, true);
      TD w = TD::randn({3, 3}, rng);
      return finite_diff_worst_rel_err(
          [&] { return sum_all(mul(slice(x, 1, 2, 3), w)); }, {x});
    });

    add_case("cross_entropy", 5, [](Rng& rng) {
      TD logits = TD::randn({4, 3}, rng, 1.5, true);
      std::vector<int64_t> labels = {0, 2, 1, 2};
      return finite_diff_worst_rel_err(
          [&] { return cross_entropy(logits, labels); }, {logits});
    });

    add_case("l2g_block", 3, [](Rng& rng) {
      TD f_l = TD::randn({2, 4, 3, 3}, rng, 1.0, true);
      TD f_g = TD::randn({2, 3, 6}, rng, 1.0, true);
      TD lw = TD::randn({4, 6}, rng, 0.5, true);
      TD lb = TD::randn({6}, rng, 0.5, true);
      TD w = TD::randn({2, 6, 6}, rng);
      return finite_diff_worst_rel_err(
          [&] {
            L2gParams<double> p{lw, lb};
            return sum_all(
                mul(l2g_forward(f_l, f_g, p, CitTokenMode::kDouble), w));
          },
          {f_l, f_g, lw, lb});
    });

    add_case("g2l_block", 3, [](Rng& rng) {
      TD f_g = TD::randn({2, 3, 6}, rng, 1.0, true);
      TD f_l = TD::randn({2, 4, 3, 3}, rng, 1.0, true);
      TD cw = TD::randn({4, 10, 1, 1}, rng, 0.4, true);
      TD cb = TD::randn({4}, rng, 0.4, true);
      TD w = TD::randn({2, 4, 3, 3}, rng);
      return finite_diff_worst_rel_err(
          [&] {
            G2lParams<double> p{cw, cb};
            return sum_all(mul(g2l_forward(f_g, f_l, p), w));
          },
          {f_g, f_l, cw, cb});
    });

    add_case("cit_end_to_end", 2, [](Rng& rng) {
      TD f_l = TD::randn({2, 4, 3, 3}, rng, 1.0, true);
      TD f_g = TD::randn({2, 2, 6}, rng, 1.0, true);
      TD lw = TD::randn({4, 6}, rng, 0.5, true);
      TD lb = TD::randn({6}, rng, 0.5, true);
      TD cw = TD::randn({4, 10, 1, 1}, rng, 0.4, true);
      TD cb = TD::randn({4}, rng, 0.4, true);
      TD wl = TD::randn({2, 4, 3, 3}, rng);
      TD wg = TD::randn({2, 4, 6}, rng);
      return finite_diff_worst_rel_err(
          [&] {
            L2gParams<double> lp{lw, lb};
            G2lParams<double> gp{cw, cb};
            auto [next_l, next_g] =
                cit_forward(f_l, f_g, lp, gp, CitTokenMode::kDouble);
            return add(sum_all(mul(next_l, wl)), sum_all(mul(next_g, wg)));
          },
          {f_l, f_g, lw, lb, cw, cb});
    });

    // The two whole-block composites run at h=1e-4: the loss is a ~20-op
    // chain, so at h=1e-5 the central difference is round-off limited
    // (error grows as 1/h), while truncation at 1e-4 is still ~1e-8.
    add_case("encoder_block", 2, [](Rng& rng) {
      VitConfig cfg;
      cfg.hidden_dim = 8;
      cfg.heads = 2;
      cfg.dropout = 0.0;
      TD x = TD::randn({2, 3, 8}, rng, 1.0, true);
      ModelParams<double> store;
      auto block = build_encoder_block(store, "blk", cfg, rng);
      TD w = TD::randn({2, 3, 8}, rng);
      std::vector<TD> leaves = {x};
      for (auto& e : store.entries()) leaves.push_back(e.tensor);
      return finite_diff_worst_rel_err(
          [&] {
            return sum_all(mul(
                encoder_block_forward(x, block, cfg, Mode::kEval, nullptr), w));
          },
          leaves, 1e-4);
    });

    add_case("basic_block", 2, [](Rng& rng) {
      CnnConfig cfg;
      TD x = TD::randn({2, 3, 5, 5}, rng, 1.0, true);
      ModelParams<double> store;
      auto block = build_basic_block(store, "blk", 3, 4, 2, cfg, rng);
      TD w = TD::randn({2, 4, 3, 3}, rng);
      std::vector<TD> leaves = {x};
      for (auto& e : store.entries()) {
        if (e.trainable) leaves.push_back(e.tensor);
      }
      // Running stats drift across evaluations but train-mode outputs use
      // batch statistics, so the loss stays a pure function of the leaves.
      return finite_diff_worst_rel_err(
          [&] {
            return sum_all(mul(basic_block_forward(x, block, cfg, Mode::kTrain), w));
          },
          leaves, 1e-4);
    });

    return cs;
  }();
  return cases;
}

// Run the whole registry (or the named subset) at the given tolerance.
inline std::vector<GradCheckReport> run_gradchecks(
    const std::vector<std::string>& only = {}, double tolerance = 1e-4,
    uint64_t seed = 20240915) {
  std::vector<GradCheckReport> reports;
  for (const auto& c : gradcheck_suite()) {
    if (!only.empty()) {
      bool wanted = false;
      for (const auto& n : only) wanted |= n == c.name;
      if (!wanted) continue;
    }
    GradCheckReport r;
    r.name = c.name;
    r.worst_rel_err = c.run(seed);
    r.pass = r.worst_rel_err < tolerance;
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace citnet
