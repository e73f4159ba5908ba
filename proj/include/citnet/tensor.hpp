#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "citnet/common.hpp"

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every op returns a fresh tensor; produced tensors are never mutated
// (leaf parameters are the one exception, updated in place by the
// optimizer between graph builds). While autograd is enabled, ops that
// see a grad-requiring input record a backward closure; Tensor::backward()
// walks the recorded graph once in reverse topological order and
// accumulates gradients additively across fan-out.

namespace citnet {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized lazily during backward
    bool requires_grad = false;
    bool backward_ran = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    check_shape(shape);
    auto node = std::make_shared<Node>();
    node->data.assign(static_cast<size_t>(numel_of(shape)), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_data(Shape shape, std::vector<T> data,
                          bool requires_grad = false) {
    check_shape(shape);
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
      throw std::invalid_argument("Tensor::from_data: " + shape_str(shape) +
                                  " does not hold " +
                                  std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({}, {value}, requires_grad);
  }

  // Normal(0, stddev) fill from an explicit stream.
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1),
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (T& v : t.node_->data) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return checked().shape; }
  int ndim() const { return static_cast<int>(checked().shape.size()); }
  int64_t numel() const { return checked().numel(); }
  int64_t dim(int i) const {
    const Shape& s = checked().shape;
    if (i < 0) i += static_cast<int>(s.size());
    if (i < 0 || i >= static_cast<int>(s.size())) {
      throw std::invalid_argument("Tensor::dim: axis out of range");
    }
    return s[static_cast<size_t>(i)];
  }

  std::span<const T> data() const { return {checked().data}; }

  // In-place access for leaf tensors (parameters, test setup). Mutating a
  // non-leaf would silently desynchronize the recorded graph.
  std::span<T> mutable_data() {
    Node& n = checked();
    if (n.backward_fn) {
      throw std::logic_error("Tensor::mutable_data: tensor is an op result");
    }
    return {n.data};
  }

  T item() const {
    const Node& n = checked();
    if (n.numel() != 1) {
      throw std::invalid_argument("Tensor::item: numel " +
                                  std::to_string(n.numel()) + " != 1");
    }
    return n.data[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    const Node& n = checked();
    if (idx.size() != n.shape.size()) {
      throw std::invalid_argument("Tensor::at: rank mismatch");
    }
    int64_t flat = 0;
    size_t i = 0;
    for (int64_t v : idx) {
      if (v < 0 || v >= n.shape[i]) {
        throw std::invalid_argument("Tensor::at: index out of range");
      }
      flat = flat * n.shape[i] + v;
      ++i;
    }
    return n.data[static_cast<size_t>(flat)];
  }

  bool requires_grad() const { return checked().requires_grad; }

  void set_requires_grad(bool value) {
    Node& n = checked();
    if (n.backward_fn && value == false) {
      throw std::logic_error("Tensor::set_requires_grad: op results are fixed");
    }
    n.requires_grad = value;
  }

  bool has_grad() const { return defined() && !node_->grad.empty(); }

  // Gradient as a detached tensor. Valid after backward().
  Tensor grad() const {
    const Node& n = checked();
    if (n.grad.empty()) {
      throw std::logic_error("Tensor::grad: no gradient recorded");
    }
    return from_data(n.shape, n.grad);
  }

  void zero_grad() {
    Node& n = checked();
    n.grad.assign(n.data.size(), T(0));
    n.backward_ran = false;
  }

  // Deep copy of the values, detached from any graph.
  Tensor clone_detached(bool requires_grad = false) const {
    const Node& n = checked();
    return from_data(n.shape, n.data, requires_grad);
  }

  // Reverse-mode pass from a scalar. Zeroes the gradients of every node
  // reachable from this loss, then accumulates; each node's closure runs
  // exactly once. A second call on the same loss is an error.
  void backward() {
    Node& root = checked();
    if (root.numel() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(root.shape));
    }
    if (!root.requires_grad) {
      throw std::invalid_argument("backward: loss does not require grad");
    }
    if (root.backward_ran) {
      throw std::logic_error("backward: already ran on this loss; reset first");
    }

    std::vector<Node*> order;
    topo_sort(&root, order);
    for (Node* n : order) {
      if (n->requires_grad) n->grad.assign(n->data.size(), T(0));
    }
    root.grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
    root.backward_ran = true;
  }

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  static void check_shape(const Shape& shape) {
    for (int64_t d : shape) {
      if (d <= 0) {
        throw std::invalid_argument("Tensor: non-positive extent in " +
                                    shape_str(shape));
      }
    }
  }

  Node& checked() {
    if (!node_) throw std::logic_error("Tensor: undefined");
    return *node_;
  }
  const Node& checked() const {
    if (!node_) throw std::logic_error("Tensor: undefined");
    return *node_;
  }

  static void topo_sort(Node* root, std::vector<Node*>& order) {
    // Iterative post-order DFS over parent edges.
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].get();
        if (visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks()) return;
  for (T v : t.data()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error(std::string(op) +
                               ": non-finite value in result");
    }
  }
}

// Build an op-result tensor. Parents and the backward closure are attached
// only when some input needs gradients and autograd is on.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents,
                      std::function<void(typename Tensor<T>::Node&)> backward_fn,
                      const char* op) {
  bool needs_grad = false;
  if (autograd_enabled()) {
    for (const auto& p : parents) {
      if (p && p->requires_grad) {
        needs_grad = true;
        break;
      }
    }
  }
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), std::move(data));
  if (needs_grad) {
    out.node()->requires_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(backward_fn);
  }
  check_finite(out, op);
  return out;
}

// C[M,N] += A[M,K] * B[K,N], all row-major. Fixed k-major accumulation
// order per output element; rows are register-blocked so each B row is
// reused four times from L1. The serial form is for call sites already
// inside a parallel region.
template <typename T>
void gemm_acc_serial(const T* __restrict a, const T* __restrict b,
                     T* __restrict c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i0 = 0; i0 < m; i0 += 4) {
    const int64_t i1 = std::min<int64_t>(i0 + 4, m);
    for (int64_t kk = 0; kk < k; ++kk) {
      const T* __restrict brow = b + kk * n;
      for (int64_t i = i0; i < i1; ++i) {
        const T av = a[i * k + kk];
        if (av == T(0)) continue;
        T* __restrict crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c,
              int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i0 = 0; i0 < m; i0 += 4) {
    const int64_t i1 = std::min<int64_t>(i0 + 4, m);
    for (int64_t kk = 0; kk < k; ++kk) {
      const T* __restrict brow = b + kk * n;
      for (int64_t i = i0; i < i1; ++i) {
        const T av = a[i * k + kk];
        if (av == T(0)) continue;
        T* __restrict crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void transpose2d(const T* src, T* dst, int64_t rows, int64_t cols) {
  constexpr int64_t kBlock = 32;
#pragma omp parallel for schedule(static)
  for (int64_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (int64_t c0 = 0; c0 < cols; c0 += kBlock) {
      const int64_t r1 = std::min(r0 + kBlock, rows);
      const int64_t c1 = std::min(c0 + kBlock, cols);
      for (int64_t r = r0; r < r1; ++r) {
        for (int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
      }
    }
  }
}

inline void split_at_axis(const Shape& shape, int axis, int64_t& outer,
                          int64_t& axis_len, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  axis_len = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) {
    inner *= shape[i];
  }
}

inline int normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) {
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  }
  return axis;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops accept equal shapes, or a second
// operand whose shape is a trailing suffix of the first (bias-style
// broadcast); the broadcast backward sums over the leading axes.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_suffix_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
  }
  const size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i) {
    if (a[off + i] != b[i]) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_str(a) + " vs " + shape_str(b));
    }
  }
}

}  // namespace detail

template <typename T, typename FwdFn, typename DaFn, typename DbFn>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd,
                    DaFn dfda, DbFn dfdb, const char* op) {
  detail::check_suffix_broadcast<T>(a.shape(), b.shape(), op);
  const int64_t n = a.numel();
  const int64_t bn = b.numel();
  const int64_t reps = n / bn;
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < reps; ++o) {
    const T* av = pa + o * bn;
    T* dst = out.data() + o * bn;
    for (int64_t j = 0; j < bn; ++j) dst[j] = fwd(av[j], pb[j]);
  }

  auto an = a.node();
  auto bnode = b.node();
  auto bwd = [an, bnode, dfda, dfdb, bn, reps](typename Tensor<T>::Node& self) {
    const T* pa = an->data.data();
    const T* pb = bnode->data.data();
    const T* g = self.grad.data();
    if (an->requires_grad) {
      T* ga = an->grad.data();
#pragma omp parallel for schedule(static)
      for (int64_t o = 0; o < reps; ++o) {
        const T* av = pa + o * bn;
        const T* gv = g + o * bn;
        T* dst = ga + o * bn;
        for (int64_t j = 0; j < bn; ++j) dst[j] += gv[j] * dfda(av[j], pb[j]);
      }
    }
    if (bnode->requires_grad) {
      // broadcast grad: accumulate over the leading repeats in fixed order
      T* gb = bnode->grad.data();
      for (int64_t o = 0; o < reps; ++o) {
        const T* av = pa + o * bn;
        const T* gv = g + o * bn;
        for (int64_t j = 0; j < bn; ++j) gb[j] += gv[j] * dfdb(av[j], pb[j]);
      }
    }
  };
  return detail::make_result<T>(a.shape(), std::move(out), {an, bnode},
                                std::move(bwd), op);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; }, "mul");
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// Multiply by a compile-time constant scalar (not differentiated through c).
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * c;
  auto an = a.node();
  auto bwd = [an, c, n](typename Tensor<T>::Node& self) {
    if (!an->requires_grad) return;
    T* ga = an->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * c;
  };
  return detail::make_result<T>(a.shape(), std::move(out), {an}, std::move(bwd),
                                "scale");
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) { return scale(a, T(-1)); }

// ---------------------------------------------------------------------------
// Shape ops: reshape, permute, squeeze/unsqueeze, expand, slice, concat.
// All produce row-major copies with exact backward rules (expand sums over
// broadcast axes, concat splits, slice zero-pads).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      if (infer >= 0) {
        throw std::invalid_argument("reshape: more than one -1 extent");
      }
      infer = static_cast<int>(i);
    } else {
      known *= new_shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0) {
      throw std::invalid_argument("reshape: cannot infer extent for " +
                                  shape_str(new_shape) + " from " +
                                  shape_str(a.shape()));
    }
    new_shape[static_cast<size_t>(infer)] = a.numel() / known;
  }
  if (numel_of(new_shape) != a.numel()) {
    throw std::invalid_argument("reshape: numel mismatch " +
                                shape_str(a.shape()) + " -> " +
                                shape_str(new_shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  auto an = a.node();
  const int64_t n = a.numel();
  auto bwd = [an, n](typename Tensor<T>::Node& self) {
    if (!an->requires_grad) return;
    T* ga = an->grad.data();
    const T* g = self.grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
  };
  return detail::make_result<T>(std::move(new_shape), std::move(out), {an},
                                std::move(bwd), "reshape");
}

template <typename T>
Tensor<T> squeeze(const Tensor<T>& a, int axis) {
  axis = detail::normalize_axis(axis, a.ndim(), "squeeze");
  if (a.dim(axis) != 1) {
    throw std::invalid_argument("squeeze: extent at axis " +
                                std::to_string(axis) + " is " +
                                std::to_string(a.dim(axis)) + ", not 1, in " +
                                shape_str(a.shape()));
  }
  Shape s = a.shape();
  s.erase(s.begin() + axis);
  return reshape(a, std::move(s));
}

template <typename T>
Tensor<T> unsqueeze(const Tensor<T>& a, int axis) {
  if (axis < 0) axis += a.ndim() + 1;
  if (axis < 0 || axis > a.ndim()) {
    throw std::invalid_argument("unsqueeze: axis out of range");
  }
  Shape s = a.shape();
  s.insert(s.begin() + axis, 1);
  return reshape(a, std::move(s));
}

namespace detail {

inline void permute_map(const Shape& in_shape, const std::vector<int>& axes,
                        Shape& out_shape, std::vector<int64_t>& in_strides_out) {
  const size_t nd = in_shape.size();
  std::vector<int64_t> in_strides(nd, 1);
  for (size_t i = nd; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  out_shape.resize(nd);
  in_strides_out.resize(nd);
  for (size_t i = 0; i < nd; ++i) {
    out_shape[i] = in_shape[static_cast<size_t>(axes[i])];
    in_strides_out[i] = in_strides[static_cast<size_t>(axes[i])];
  }
}

// dst[out_idx] = src[mapped]; iterates the output space row-major. The
// accumulate form (used by expand/permute backward) may hit one source
// cell from many output cells, so it stays single-threaded in a fixed
// order; the copy form parallelizes over leading chunks.
template <typename T, bool kAccumulate>
void permute_copy(const T* src, T* dst, const Shape& out_shape,
                  const std::vector<int64_t>& in_strides) {
  const size_t nd = out_shape.size();
  const int64_t total = numel_of(out_shape);
  if constexpr (!kAccumulate) {
    const int64_t grain = 1 << 14;
    if (total >= 2 * grain) {
      const int64_t chunks = (total + grain - 1) / grain;
#pragma omp parallel for schedule(static)
      for (int64_t ci = 0; ci < chunks; ++ci) {
        const int64_t begin = ci * grain;
        const int64_t end = std::min(begin + grain, total);
        std::vector<int64_t> idx(nd, 0);
        int64_t rem = begin, src_off = 0;
        for (size_t d = nd; d-- > 0;) {
          idx[d] = rem % out_shape[d];
          rem /= out_shape[d];
          src_off += idx[d] * in_strides[d];
        }
        for (int64_t i = begin; i < end; ++i) {
          dst[i] = src[src_off];
          for (size_t d = nd; d-- > 0;) {
            src_off += in_strides[d];
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
            src_off -= in_strides[d] * out_shape[d];
          }
        }
      }
      return;
    }
  }
  std::vector<int64_t> idx(nd, 0);
  int64_t src_off = 0;
  for (int64_t i = 0; i < total; ++i) {
    if constexpr (kAccumulate) {
      dst[src_off] += src[i];
    } else {
      dst[i] = src[src_off];
    }
    for (size_t d = nd; d-- > 0;) {
      src_off += in_strides[d];
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
      src_off -= in_strides[d] * out_shape[d];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::vector<int> axes) {
  const size_t nd = a.shape().size();
  if (axes.size() != nd) {
    throw std::invalid_argument("permute: axes rank mismatch");
  }
  std::vector<bool> seen(nd, false);
  for (int& ax : axes) {
    ax = detail::normalize_axis(ax, static_cast<int>(nd), "permute");
    if (seen[static_cast<size_t>(ax)]) {
      throw std::invalid_argument("permute: duplicate axis");
    }
    seen[static_cast<size_t>(ax)] = true;
  }
  Shape out_shape;
  std::vector<int64_t> in_strides;
  detail::permute_map(a.shape(), axes, out_shape, in_strides);
  std::vector<T> out(static_cast<size_t>(a.numel()));
  detail::permute_copy<T, false>(a.data().data(), out.data(), out_shape,
                                 in_strides);
  auto an = a.node();
  auto bwd = [an, out_shape, in_strides](typename Tensor<T>::Node& self) {
    if (!an->requires_grad) return;
    detail::permute_copy<T, true>(self.grad.data(), an->grad.data(), out_shape,
                                  in_strides);
  };
  return detail::make_result<T>(out_shape, std::move(out), {an},
                                std::move(bwd), "permute");
}

// Swap the last two axes (batched matrix transpose).
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  if (a.ndim() < 2) {
    throw std::invalid_argument("transpose_last2: need rank >= 2");
  }
  std::vector<int> axes(static_cast<size_t>(a.ndim()));
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

// Broadcast extents of 1 up to the target shape.
template <typename T>
Tensor<T> expand(const Tensor<T>& a, Shape target) {
  const size_t nd = a.shape().size();
  if (target.size() != nd) {
    throw std::invalid_argument("expand: rank mismatch " +
                                shape_str(a.shape()) + " -> " +
                                shape_str(target));
  }
  std::vector<int64_t> in_strides(nd, 1);
  for (size_t i = nd; i-- > 1;) {
    in_strides[i - 1] = in_strides[i] * a.shape()[i];
  }
  for (size_t i = 0; i < nd; ++i) {
    if (a.shape()[i] == target[i]) continue;
    if (a.shape()[i] != 1) {
      throw std::invalid_argument("expand: cannot broadcast " +
                                  shape_str(a.shape()) + " to " +
                                  shape_str(target));
    }
    in_strides[i] = 0;  // broadcast axis
  }
  std::vector<T> out(static_cast<size_t>(numel_of(target)));
  detail::permute_copy<T, false>(a.data().data(), out.data(), target,
                                 in_strides);
  auto an = a.node();
  auto bwd = [an, target, in_strides](typename Tensor<T>::Node& self) {
    if (!an->requires_grad) return;
    detail::permute_copy<T, true>(self.grad.data(), an->grad.data(), target,
                                  in_strides);
  };
  return detail::make_result<T>(target, std::move(out), {an}, std::move(bwd),
                                "expand");
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t length) {
  axis = detail::normalize_axis(axis, a.ndim(), "slice");
  const int64_t extent = a.dim(axis);
  if (start < 0 || length <= 0 || start + length > extent) {
    throw std::invalid_argument(
        "slice: range [" + std::to_string(start) + "," +
        std::to_string(start + length) + ") outside extent " +
        std::to_string(extent));
  }
  int64_t outer = 0, axis_len = 0, inner = 0;
  detail::split_at_axis(a.shape(), axis, outer, axis_len, inner);
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = length;
  std::vector<T> out(static_cast<size_t>(outer * length * inner));
  const T* src = a.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(src + (o * axis_len + start) * inner, length * inner,
                out.data() + o * length * inner);
  }
  auto an = a.node();
  auto bwd = [an, outer, axis_len, inner, start,
              length](typename Tensor<T>::Node& self) {
    if (!an->requires_grad) return;
    T* ga = an->grad.data();
    const T* g = self.grad.data();
    for (int64_t o = 0; o < outer; ++o) {
      T* dst = ga + (o * axis_len + start) * inner;
      const T* s = g + o * length * inner;
      for (int64_t i = 0; i < length * inner; ++i) dst[i] += s[i];
    }
  };
  return detail::make_result<T>(std::move(out_shape), std::move(out), {an},
                                std::move(bwd), "slice");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  axis = detail::normalize_axis(axis, parts[0].ndim(), "concat");
  const Shape& ref = parts[0].shape();
  int64_t total_axis = 0;
  for (const auto& p : parts) {
    if (p.ndim() != static_cast<int>(ref.size())) {
      throw std::invalid_argument("concat: rank mismatch");
    }
    for (int d = 0; d < p.ndim(); ++d) {
      if (d != axis && p.dim(d) != ref[static_cast<size_t>(d)]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_str(ref) +
                                    " vs " + shape_str(p.shape()) +
                                    " off the concat axis");
      }
    }
    total_axis += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[static_cast<size_t>(axis)] = total_axis;

  int64_t outer = 0, axis_len = 0, inner = 0;
  detail::split_at_axis(out_shape, axis, outer, axis_len, inner);
  std::vector<T> out(static_cast<size_t>(numel_of(out_shape)));
  std::vector<int64_t> offsets;  // start along axis per part
  int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int64_t len = p.dim(axis);
    const T* src = p.data().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * len * inner, len * inner,
                  out.data() + (o * axis_len + off) * inner);
    }
    off += len;
  }

  std::vector<std::shared_ptr<typename Tensor<T>::Node>> parent_nodes;
  std::vector<int64_t> lens;
  for (const auto& p : parts) {
    parent_nodes.push_back(p.node());
    lens.push_back(p.dim(axis));
  }
  auto bwd = [parent_nodes, offsets, lens, outer, axis_len,
              inner](typename Tensor<T>::Node& self) {
    const T* g = self.grad.data();
    for (size_t pi = 0; pi < parent_nodes.size(); ++pi) {
      auto& pn = parent_nodes[pi];
      if (!pn->requires_grad) continue;
      T* gp = pn->grad.data();
      for (int64_t o = 0; o < outer; ++o) {
        const T* s = g + (o * axis_len + offsets[pi]) * inner;
        T* dst = gp + o * lens[pi] * inner;
        for (int64_t i = 0; i < lens[pi] * inner; ++i) dst[i] += s[i];
      }
    }
  };
  return detail::make_result<T>(std::move(out_shape), std::move(out),
                                std::move(parent_nodes), std::move(bwd),
                                "concat");
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  auto an = a.node();
  const int64_t n = a.numel();
  auto bwd = [an, n](typename Tensor<T>::Node& self) {
    if (!an->requires_grad) return;
    const T g = self.grad[0];
    T* ga = an->grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  };
  return detail::make_result<T>({}, {acc}, {an}, std::move(bwd), "sum_all");
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis) {
  axis = detail::normalize_axis(axis, a.ndim(), "mean_axis");
  int64_t outer = 0, axis_len = 0, inner = 0;
  detail::split_at_axis(a.shape(), axis, outer, axis_len, inner);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  std::vector<T> out(static_cast<size_t>(outer * inner), T(0));
  const T* src = a.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t k = 0; k < axis_len; ++k) {
      const T* s = src + (o * axis_len + k) * inner;
      T* dst = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += s[i];
    }
  }
  const T inv = T(1) / static_cast<T>(axis_len);
  for (T& v : out) v *= inv;
  auto an = a.node();
  auto bwd = [an, outer, axis_len, inner, inv](typename Tensor<T>::Node& self) {
    if (!an->requires_grad) return;
    T* ga = an->grad.data();
    const T* g = self.grad.data();
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t k = 0; k < axis_len; ++k) {
        T* dst = ga + (o * axis_len + k) * inner;
        const T* s = g + o * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += s[i] * inv;
      }
    }
  };
  return detail::make_result<T>(std::move(out_shape), std::move(out), {an},
                                std::move(bwd), "mean_axis");
}

// Mean over the last two axes: [..., h, w] -> [...].
template <typename T>
Tensor<T> reduce_mean_spatial(const Tensor<T>& a) {
  if (a.ndim() < 2) {
    throw std::invalid_argument("reduce_mean_spatial: need rank >= 2, got " +
                                shape_str(a.shape()));
  }
  const int64_t w = a.dim(-1);
  const int64_t h = a.dim(-2);
  const int64_t hw = h * w;
  const int64_t outer = a.numel() / hw;
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  std::vector<T> out(static_cast<size_t>(outer));
  const T* src = a.data().data();
  const T inv = T(1) / static_cast<T>(hw);
  for (int64_t o = 0; o < outer; ++o) {
    T acc = T(0);
    const T* s = src + o * hw;
    for (int64_t i = 0; i < hw; ++i) acc += s[i];
    out[static_cast<size_t>(o)] = acc * inv;
  }
  auto an = a.node();
  auto bwd = [an, outer, hw, inv](typename Tensor<T>::Node& self) {
    if (!an->requires_grad) return;
    T* ga = an->grad.data();
    const T* g = self.grad.data();
    for (int64_t o = 0; o < outer; ++o) {
      const T v = g[o] * inv;
      T* dst = ga + o * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] += v;
    }
  };
  return detail::make_result<T>(std::move(out_shape), std::move(out), {an},
                                std::move(bwd), "reduce_mean_spatial");
}

// ---------------------------------------------------------------------------
// Batched matrix product: a[..., M, K] x b[..., K, N]. The second operand
// may be rank-2, in which case it is shared across the batch and its
// gradient accumulates over it.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw std::invalid_argument("matmul: need rank >= 2");
  }
  const int64_t ka = a.dim(-1);
  const int64_t m = a.dim(-2);
  const int64_t kb = b.dim(-2);
  const int64_t n = b.dim(-1);
  if (ka != kb) {
    throw std::invalid_argument("matmul: inner dims differ " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const bool shared_b = b.ndim() == 2 && a.ndim() > 2;
  if (!shared_b && a.ndim() != b.ndim()) {
    throw std::invalid_argument("matmul: rank mismatch " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  int64_t batch = 1;
  for (int i = 0; i < a.ndim() - 2; ++i) {
    batch *= a.dim(i);
    if (!shared_b && b.dim(i) != a.dim(i)) {
      throw std::invalid_argument("matmul: batch dims differ " +
                                  shape_str(a.shape()) + " x " +
                                  shape_str(b.shape()));
    }
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);

  const int64_t k = ka;
  std::vector<T> out(static_cast<size_t>(batch * m * n), T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (shared_b) {
    // One wide GEMM: the batch axis folds into the rows.
    detail::gemm_acc(pa, pb, out.data(), batch * m, k, n);
  } else if (batch >= 4) {
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < batch; ++bi) {
      detail::gemm_acc_serial(pa + bi * m * k, pb + bi * k * n,
                              out.data() + bi * m * n, m, k, n);
    }
  } else {
    for (int64_t bi = 0; bi < batch; ++bi) {
      detail::gemm_acc(pa + bi * m * k, pb + bi * k * n,
                       out.data() + bi * m * n, m, k, n);
    }
  }

  auto an = a.node();
  auto bn = b.node();
  auto bwd = [an, bn, batch, m, k, n, shared_b](typename Tensor<T>::Node& self) {
    const T* g = self.grad.data();
    if (an->requires_grad) {
      // dA = dY * B^T
      if (shared_b) {
        std::vector<T> bt(static_cast<size_t>(k * n));
        detail::transpose2d(bn->data.data(), bt.data(), k, n);
        detail::gemm_acc(g, bt.data(), an->grad.data(), batch * m, n, k);
      } else if (batch >= 4) {
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < batch; ++bi) {
          std::vector<T> bt(static_cast<size_t>(k * n));
          detail::transpose2d(bn->data.data() + bi * k * n, bt.data(), k, n);
          detail::gemm_acc_serial(g + bi * m * n, bt.data(),
                                  an->grad.data() + bi * m * k, m, n, k);
        }
      } else {
        std::vector<T> bt(static_cast<size_t>(k * n));
        for (int64_t bi = 0; bi < batch; ++bi) {
          detail::transpose2d(bn->data.data() + bi * k * n, bt.data(), k, n);
          detail::gemm_acc(g + bi * m * n, bt.data(),
                           an->grad.data() + bi * m * k, m, n, k);
        }
      }
    }
    if (bn->requires_grad) {
      // dB = A^T * dY, accumulated over the batch when B is shared
      if (shared_b) {
        std::vector<T> at(static_cast<size_t>(batch * m * k));
        detail::transpose2d(an->data.data(), at.data(), batch * m, k);
        detail::gemm_acc(at.data(), g, bn->grad.data(), k, batch * m, n);
      } else if (batch >= 4) {
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < batch; ++bi) {
          std::vector<T> at(static_cast<size_t>(m * k));
          detail::transpose2d(an->data.data() + bi * m * k, at.data(), m, k);
          detail::gemm_acc_serial(at.data(), g + bi * m * n,
                                  bn->grad.data() + bi * k * n, k, m, n);
        }
      } else {
        std::vector<T> at(static_cast<size_t>(m * k));
        for (int64_t bi = 0; bi < batch; ++bi) {
          detail::transpose2d(an->data.data() + bi * m * k, at.data(), m, k);
          detail::gemm_acc(at.data(), g + bi * m * n,
                           bn->grad.data() + bi * k * n, k, m, n);
        }
      }
    }
  };
  return detail::make_result<T>(std::move(out_shape), std::move(out), {an, bn},
                                std::move(bwd), "matmul");
}

}  // namespace citnet
