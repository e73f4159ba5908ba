#pragma once

#include <string>
#include <utility>

#include "citnet/nn.hpp"
#include "citnet/params.hpp"

// CNN-interactive-Transformer fusion, applied after stages 1-3. The L2G
// block pools the CNN feature map to one vector per sample, maps it to the
// token width, replicates it along the token axis, and prepends the copies
// to the token stream (token count doubles; the original tokens pass
// through untouched as the trailing block). The G2L block broadcasts the
// first token over the CNN map's spatial extent, concatenates it ahead of
// the local channels, and fuses with a 1x1 convolution back to the local
// channel count. Both blocks read the same stage-k inputs; there is no
// sequential dependency between them.

namespace citnet {

enum class CitTokenMode { kDouble, kSingleToken };

template <typename T>
struct L2gParams {
  Tensor<T> w;  // [C_k, D]
  Tensor<T> b;  // [D]
};

template <typename T>
struct G2lParams {
  Tensor<T> conv_w;  // [C_k, C_k + D, 1, 1] (or [C_k, D, 1, 1] without CFM)
  Tensor<T> conv_b;  // [C_k]
};

template <typename T>
L2gParams<T> build_l2g(ModelParams<T>& params, const std::string& prefix,
                       int64_t channels, int64_t hidden_dim, Rng& rng) {
  L2gParams<T> p;
  p.w = params.add(prefix + ".w",
                   Tensor<T>::randn({channels, hidden_dim}, rng, static_cast<T>(0.02)));
  p.b = params.add(prefix + ".b", Tensor<T>::zeros({hidden_dim}));
  return p;
}

template <typename T>
G2lParams<T> build_g2l(ModelParams<T>& params, const std::string& prefix,
                       int64_t channels, int64_t hidden_dim, bool keep_local,
                       Rng& rng) {
  const int64_t in_ch = keep_local ? channels + hidden_dim : hidden_dim;
  G2lParams<T> p;
  p.conv_w = params.add(prefix + ".conv.w",
                        detail::he_normal<T>({channels, in_ch, 1, 1}, in_ch, rng));
  p.conv_b = params.add(prefix + ".conv.b", Tensor<T>::zeros({channels}));
  return p;
}

// Local-to-global: f_l [N,C,h,w] + f_g [N,L,D] -> [N,2L,D] (token-doubling
// mode). `keep_stream` preserves the incoming tokens as the trailing block;
// dropping it is the "w/o TFM" ablation, where the injected copies replace
// the stream.
template <typename T>
Tensor<T> l2g_forward(const Tensor<T>& f_l, const Tensor<T>& f_g,
                      L2gParams<T>& p, CitTokenMode token_mode,
                      bool keep_stream = true) {
  if (f_l.ndim() != 4) {
    throw std::invalid_argument("l2g_forward: local features must be [N,C,h,w]");
  }
  if (f_g.ndim() != 3) {
    throw std::invalid_argument("l2g_forward: global features must be [N,L,D]");
  }
  if (f_l.dim(0) != f_g.dim(0)) {
    throw std::invalid_argument("l2g_forward: batch sizes differ");
  }
  if (f_l.dim(1) != p.w.dim(0)) {
    throw std::invalid_argument("l2g_forward: channel count " +
                                std::to_string(f_l.dim(1)) +
                                " does not match linear map rows " +
                                std::to_string(p.w.dim(0)));
  }
  if (f_g.dim(2) != p.w.dim(1)) {
    throw std::invalid_argument("l2g_forward: token width " +
                                std::to_string(f_g.dim(2)) +
                                " does not match linear map cols " +
                                std::to_string(p.w.dim(1)));
  }
  const int64_t nb = f_g.dim(0), l = f_g.dim(1), d = f_g.dim(2);
  Tensor<T> pooled = reduce_mean_spatial(f_l);        // [N,C]
  Tensor<T> mapped = linear(pooled, p.w, p.b);        // [N,D]
  Tensor<T> tok = unsqueeze(mapped, 1);               // [N,1,D]
  const int64_t copies = token_mode == CitTokenMode::kDouble ? l : 1;
  Tensor<T> injected = expand(tok, {nb, copies, d});
  if (!keep_stream) return injected;
  return concat<T>({injected, f_g}, 1);
}

// Global-to-local: f_g [N,L,D] + f_l [N,C,h,w] -> [N,C,h,w]. The first
// token is broadcast over (h,w) and concatenated ahead of the local
// channels; `keep_local` off is the "w/o CFM" ablation, where the 1x1
// convolution sees only the broadcast channels.
template <typename T>
Tensor<T> g2l_forward(const Tensor<T>& f_g, const Tensor<T>& f_l,
                      G2lParams<T>& p, bool keep_local = true) {
  if (f_g.ndim() != 3) {
    throw std::invalid_argument("g2l_forward: global features must be [N,L,D]");
  }
  if (f_l.ndim() != 4) {
    throw std::invalid_argument("g2l_forward: local features must be [N,C,h,w]");
  }
  if (f_l.dim(0) != f_g.dim(0)) {
    throw std::invalid_argument("g2l_forward: batch sizes differ");
  }
  const int64_t nb = f_l.dim(0), c = f_l.dim(1), h = f_l.dim(2), w = f_l.dim(3);
  const int64_t d = f_g.dim(2);
  const int64_t expect_in = (keep_local ? c + d : d);
  if (p.conv_w.dim(1) != expect_in || p.conv_w.dim(0) != c) {
    throw std::invalid_argument("g2l_forward: conv expects [" +
                                std::to_string(p.conv_w.dim(0)) + "," +
                                std::to_string(p.conv_w.dim(1)) +
                                ",1,1] but inputs give [" + std::to_string(c) +
                                "," + std::to_string(expect_in) + ",1,1]");
  }
  Tensor<T> first = squeeze(slice(f_g, 1, 0, 1), 1);     // [N,D]
  Tensor<T> lifted = unsqueeze(unsqueeze(first, 2), 3);  // [N,D,1,1]
  Tensor<T> spread = expand(lifted, {nb, d, h, w});
  Tensor<T> fused_in =
      keep_local ? concat<T>({spread, f_l}, 1) : spread;  // [N, D(+C), h, w]
  return conv2d<T>(fused_in, p.conv_w, p.conv_b, 1, 0);
}

// Parallel exchange: both blocks read the same stage-k pair and produce the
// stage-(k+1) inputs for the CNN and Transformer branches respectively.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cit_forward(const Tensor<T>& f_l,
                                            const Tensor<T>& f_g,
                                            L2gParams<T>& l2g, G2lParams<T>& g2l,
                                            CitTokenMode token_mode,
                                            bool keep_stream = true,
                                            bool keep_local = true) {
  Tensor<T> next_local = g2l_forward(f_g, f_l, g2l, keep_local);
  Tensor<T> next_global = l2g_forward(f_l, f_g, l2g, token_mode, keep_stream);
  return {std::move(next_local), std::move(next_global)};
}

}  // namespace citnet
