// Reverse-mode automatic differentiation over shaped arrays, sized for this
// project: tape-based, no graph optimization, scalar code paths. Templated
// on the scalar type so training can run float32 while gradient
// verification runs float64.
//
// Determinism contract: backward visits nodes in reverse creation order and
// every gradient accumulation happens in a fixed sequential order (or in
// parallel only where each element is written by exactly one iteration), so
// results are bitwise reproducible at any thread count.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "fmt/format.h"
#include "issl/errors.hpp"
#include "issl/parallel.hpp"

namespace issl::ad {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) s += fmt::format("{}{}", i ? "," : "", shape[i]);
  return s + ")";
}

template <typename T>
class Tape;

/// Lightweight handle into a tape. Copyable; the tape owns all storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool defined() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<T>* tape() const { return tape_; }

  const Shape& shape() const;
  const std::vector<T>& values() const;
  const std::vector<T>& grad() const;
  std::int64_t size() const { return numel(shape()); }

  /// Value of a size-1 tensor.
  T value() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::function<void(Tape<T>&, int)> backward_fn;
  };

  Tensor<T> constant(Shape shape, std::vector<T> values) {
    check_payload(shape, values);
    return emit(std::move(shape), std::move(values), false, nullptr);
  }

  Tensor<T> scalar(T value) { return constant({1}, {value}); }

  Tensor<T> variable(Shape shape, std::vector<T> values) {
    check_payload(shape, values);
    return emit(std::move(shape), std::move(values), true, nullptr);
  }

  /// Runs reverse-mode accumulation from a scalar root. One shot per tape.
  void backward(const Tensor<T>& root) {
    if (backward_ran_) throw ValidationError("backward already ran on this tape");
    if (root.tape() != this) throw ValidationError("root belongs to another tape");
    if (numel(nodes_[root.id()].shape) != 1) {
      throw ValidationError(fmt::format("backward root must be scalar, got shape {}",
                                        shape_str(nodes_[root.id()].shape)));
    }
    backward_ran_ = true;
    grad_buf(root.id())[0] = T(1);
    for (int i = root.id(); i >= 0; --i) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.empty() || !node.backward_fn) continue;
      node.backward_fn(*this, i);
    }
  }

  bool backward_ran() const { return backward_ran_; }
  size_t node_count() const { return nodes_.size(); }

  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }

  bool wants_grad(int id) const { return nodes_[id].requires_grad; }

  std::vector<T>& grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(numel(n.shape), T(0));
    return n.grad;
  }

  /// Appends a node. `requires_grad` should be true when any parent has it.
  Tensor<T> emit(Shape shape, std::vector<T> values, bool requires_grad,
                 std::function<void(Tape<T>&, int)> backward_fn) {
    Node n;
    n.shape = std::move(shape);
    n.values = std::move(values);
    n.requires_grad = requires_grad;
    n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Tensor<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

 private:
  static void check_payload(const Shape& shape, const std::vector<T>& values) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ValidationError(fmt::format("payload size {} does not match shape {}",
                                        values.size(), shape_str(shape)));
    }
  }

  std::vector<Node> nodes_;
  bool backward_ran_ = false;
};

template <typename T>
const Shape& Tensor<T>::shape() const { return tape_->node(id_).shape; }
template <typename T>
const std::vector<T>& Tensor<T>::values() const { return tape_->node(id_).values; }
template <typename T>
const std::vector<T>& Tensor<T>::grad() const { return tape_->node(id_).grad; }
template <typename T>
T Tensor<T>::value() const {
  if (size() != 1) throw ValidationError("value() requires a size-1 tensor");
  return values()[0];
}

namespace detail {

template <typename T>
Tape<T>& same_tape(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) {
    throw ValidationError("operands live on different tapes");
  }
  return *a.tape();
}

// Elementwise binary op with scalar (size-1) broadcast on either side.
// da/db compute the local partial from the operand values.
template <typename T, typename F, typename Da, typename Db>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, Da da, Db db) {
  Tape<T>& tape = same_tape(a, b);
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ValidationError(fmt::format("{}: shape mismatch {} vs {}", name, shape_str(a.shape()),
                                      shape_str(b.shape())));
  }
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  const std::int64_t n = numel(out_shape);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(n);
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  }
  const bool rg = tape.wants_grad(a.id()) || tape.wants_grad(b.id());
  auto bw = [aid = a.id(), bid = b.id(), a_scalar, b_scalar, n, da, db](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& av2 = t.node(aid).values;
    const auto& bv2 = t.node(bid).values;
    if (t.wants_grad(aid)) {
      auto& ga = t.grad_buf(aid);
      for (std::int64_t i = 0; i < n; ++i) {
        ga[a_scalar ? 0 : i] += g[i] * da(av2[a_scalar ? 0 : i], bv2[b_scalar ? 0 : i]);
      }
    }
    if (t.wants_grad(bid)) {
      auto& gb = t.grad_buf(bid);
      for (std::int64_t i = 0; i < n; ++i) {
        gb[b_scalar ? 0 : i] += g[i] * db(av2[a_scalar ? 0 : i], bv2[b_scalar ? 0 : i]);
      }
    }
  };
  return tape.emit(out_shape, std::move(out), rg, rg ? std::function(bw) : nullptr);
}

// Elementwise unary op. df receives (x, f(x)) so ops like sigmoid can
// reuse the forward value.
template <typename T, typename F, typename Df>
Tensor<T> unary_op(const Tensor<T>& a, F f, Df df) {
  Tape<T>& tape = *a.tape();
  const std::int64_t n = a.size();
  const auto& av = a.values();
  std::vector<T> out(n);
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(av[i]);
  const bool rg = tape.wants_grad(a.id());
  auto bw = [aid = a.id(), n, df](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& y = t.node(self).values;
    const auto& x = t.node(aid).values;
    if (!t.wants_grad(aid)) return;
    auto& ga = t.grad_buf(aid);
    for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * df(x[i], y[i]);
  };
  return tape.emit(a.shape(), std::move(out), rg, rg ? std::function(bw) : nullptr);
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "add", [](T x, T y) { return x + y; },
                           [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "sub", [](T x, T y) { return x - y; },
                           [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "mul", [](T x, T y) { return x * y; },
                           [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "div", [](T x, T y) { return x / y; },
                           [](T, T y) { return T(1) / y; },
                           [](T x, T y) { return -x / (y * y); });
}

/// Elementwise minimum; ties route the gradient to the first argument.
template <typename T>
Tensor<T> min_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "min_elementwise",
                           [](T x, T y) { return x <= y ? x : y; },
                           [](T x, T y) { return x <= y ? T(1) : T(0); },
                           [](T x, T y) { return x <= y ? T(0) : T(1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

/// |x|; the subgradient at 0 is 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return std::abs(x); },
                          [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return std::sqrt(x); },
                          [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a,
      [](T x) {
        // Stable on both tails.
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary_op(
      a,
      [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      });
}

/// Clamp to [lo, hi]; the gradient passes only strictly inside the interval.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary_op(
      a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return detail::unary_op(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a) {
  Tape<T>& tape = *a.tape();
  const auto& av = a.values();
  T s = T(0);
  for (T v : av) s += v;
  const bool rg = tape.wants_grad(a.id());
  auto bw = [aid = a.id()](Tape<T>& t, int self) {
    if (!t.wants_grad(aid)) return;
    const T g = t.node(self).grad[0];
    auto& ga = t.grad_buf(aid);
    for (auto& v : ga) v += g;
  };
  return tape.emit({1}, {s}, rg, rg ? std::function(bw) : nullptr);
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a) {
  Tape<T>& tape = *a.tape();
  const std::int64_t n = a.size();
  const auto& av = a.values();
  T s = T(0);
  for (T v : av) s += v;
  s /= static_cast<T>(n);
  const bool rg = tape.wants_grad(a.id());
  auto bw = [aid = a.id(), n](Tape<T>& t, int self) {
    if (!t.wants_grad(aid)) return;
    const T g = t.node(self).grad[0] / static_cast<T>(n);
    auto& ga = t.grad_buf(aid);
    for (auto& v : ga) v += g;
  };
  return tape.emit({1}, {s}, rg, rg ? std::function(bw) : nullptr);
}

enum class MaskedReduce { kSum, kMean };

/// Reduces x over the positions where mask is nonzero. The mask is treated
/// as a constant weight; kMean divides by the number of selected elements.
template <typename T>
Tensor<T> masked_reduce(const Tensor<T>& x, const Tensor<T>& mask, MaskedReduce mode) {
  Tape<T>& tape = detail::same_tape(x, mask);
  if (x.shape() != mask.shape()) {
    throw ValidationError(fmt::format("masked_reduce: shape mismatch {} vs {}",
                                      shape_str(x.shape()), shape_str(mask.shape())));
  }
  const auto& xv = x.values();
  const auto& mv = mask.values();
  T s = T(0);
  std::int64_t count = 0;
  for (size_t i = 0; i < xv.size(); ++i) {
    if (mv[i] != T(0)) {
      s += xv[i] * mv[i];
      ++count;
    }
  }
  if (mode == MaskedReduce::kMean) {
    if (count == 0) throw DegenerateInputError("masked_reduce mean over an empty mask");
    s /= static_cast<T>(count);
  }
  const bool rg = tape.wants_grad(x.id());
  auto bw = [xid = x.id(), mid = mask.id(), mode, count](Tape<T>& t, int self) {
    if (!t.wants_grad(xid)) return;
    T g = t.node(self).grad[0];
    if (mode == MaskedReduce::kMean) g /= static_cast<T>(count);
    const auto& mv2 = t.node(mid).values;
    auto& gx = t.grad_buf(xid);
    for (size_t i = 0; i < gx.size(); ++i) {
      if (mv2[i] != T(0)) gx[i] += g * mv2[i];
    }
  };
  return tape.emit({1}, {s}, rg, rg ? std::function(bw) : nullptr);
}

/// Extracts a contiguous hyper-rectangle: out[i...] = x[offset + i...].
template <typename T>
Tensor<T> slice(const Tensor<T>& x, const std::vector<int>& offsets,
                const std::vector<int>& sizes) {
  Tape<T>& tape = *x.tape();
  const Shape& in_shape = x.shape();
  const size_t rank = in_shape.size();
  if (offsets.size() != rank || sizes.size() != rank) {
    throw ValidationError("slice: offsets/sizes rank mismatch");
  }
  for (size_t d = 0; d < rank; ++d) {
    if (offsets[d] < 0 || sizes[d] <= 0 || offsets[d] + sizes[d] > in_shape[d]) {
      throw ValidationError(fmt::format("slice: dim {} range [{}, {}) outside extent {}", d,
                                        offsets[d], offsets[d] + sizes[d], in_shape[d]));
    }
  }
  std::vector<std::int64_t> in_strides(rank, 1);
  for (size_t d = rank - 1; d > 0; --d) in_strides[d - 1] = in_strides[d] * in_shape[d];

  Shape out_shape(sizes.begin(), sizes.end());
  const std::int64_t n = numel(out_shape);
  const auto& xv = x.values();
  std::vector<T> out(n);
  std::vector<std::int64_t> src_index(n);
  std::vector<int> idx(rank, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t src = 0;
    for (size_t d = 0; d < rank; ++d) src += (offsets[d] + idx[d]) * in_strides[d];
    out[i] = xv[src];
    src_index[i] = src;
    // odometer increment over the output extents
    for (size_t d = rank; d-- > 0;) {
      if (++idx[d] < sizes[d]) break;
      idx[d] = 0;
    }
  }
  const bool rg = tape.wants_grad(x.id());
  auto bw = [xid = x.id(), src_index = std::move(src_index)](Tape<T>& t, int self) {
    if (!t.wants_grad(xid)) return;
    const auto& g = t.node(self).grad;
    auto& gx = t.grad_buf(xid);
    for (size_t i = 0; i < src_index.size(); ++i) gx[src_index[i]] += g[i];
  };
  return tape.emit(std::move(out_shape), std::move(out), rg, rg ? std::function(bw) : nullptr);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  Tape<T>& tape = *x.tape();
  if (numel(new_shape) != x.size()) {
    throw ValidationError(fmt::format("reshape: {} elements cannot fill shape {}", x.size(),
                                      shape_str(new_shape)));
  }
  const bool rg = tape.wants_grad(x.id());
  auto bw = [xid = x.id()](Tape<T>& t, int self) {
    if (!t.wants_grad(xid)) return;
    const auto& g = t.node(self).grad;
    auto& gx = t.grad_buf(xid);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return tape.emit(std::move(new_shape), x.values(), rg, rg ? std::function(bw) : nullptr);
}

/// Packs size-1 tensors into one tensor of the given shape, in order.
template <typename T>
Tensor<T> stack_scalars(Tape<T>& tape, const std::vector<Tensor<T>>& parts, Shape shape) {
  if (numel(shape) != static_cast<std::int64_t>(parts.size())) {
    throw ValidationError("stack_scalars: part count does not match shape");
  }
  std::vector<T> out(parts.size());
  std::vector<int> ids(parts.size());
  bool rg = false;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].tape() != &tape) throw ValidationError("stack_scalars: tape mismatch");
    if (parts[i].size() != 1) throw ValidationError("stack_scalars: parts must be scalars");
    out[i] = parts[i].values()[0];
    ids[i] = parts[i].id();
    rg = rg || tape.wants_grad(parts[i].id());
  }
  auto bw = [ids = std::move(ids)](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (t.wants_grad(ids[i])) t.grad_buf(ids[i])[0] += g[i];
    }
  };
  return tape.emit(std::move(shape), std::move(out), rg, rg ? std::function(bw) : nullptr);
}

/// Dense (m,k) x (k,n) product for small matrices (rotation assembly).
template <typename T>
Tensor<T> matmul_small(const Tensor<T>& a, const Tensor<T>& b) {
  Tape<T>& tape = detail::same_tape(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ValidationError(fmt::format("matmul_small: incompatible shapes {} x {}",
                                      shape_str(a.shape()), shape_str(b.shape())));
  }
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(static_cast<size_t>(m) * n, T(0));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T s = T(0);
      for (int l = 0; l < k; ++l) s += av[i * k + l] * bv[l * n + j];
      out[static_cast<size_t>(i) * n + j] = s;
    }
  const bool rg = tape.wants_grad(a.id()) || tape.wants_grad(b.id());
  auto bw = [aid = a.id(), bid = b.id(), m, k, n](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& av2 = t.node(aid).values;
    const auto& bv2 = t.node(bid).values;
    if (t.wants_grad(aid)) {
      auto& ga = t.grad_buf(aid);  // ga += g * b^T
      for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
          T s = T(0);
          for (int j = 0; j < n; ++j) s += g[i * n + j] * bv2[l * n + j];
          ga[i * k + l] += s;
        }
    }
    if (t.wants_grad(bid)) {
      auto& gb = t.grad_buf(bid);  // gb += a^T * g
      for (int l = 0; l < k; ++l)
        for (int j = 0; j < n; ++j) {
          T s = T(0);
          for (int i = 0; i < m; ++i) s += av2[i * k + l] * g[i * n + j];
          gb[l * n + j] += s;
        }
    }
  };
  return tape.emit({m, n}, std::move(out), rg, rg ? std::function(bw) : nullptr);
}

enum class Padding { kZero, kReflect };

namespace detail {

// Maps a possibly out-of-range coordinate into [0, extent). Returns -1 for
// zero padding; reflection mirrors about the border pixel (no repeat),
// valid for pad < extent.
inline int map_coord(int y, int extent, Padding padding) {
  if (y >= 0 && y < extent) return y;
  if (padding == Padding::kZero) return -1;
  if (y < 0) return -y;
  return 2 * extent - 2 - y;
}

}  // namespace detail

/// 2D convolution, NCHW without the batch axis: input (Cin,H,W), weight
/// (Cout,Cin,K,K) with odd K, bias (Cout). Same-padding of K/2, stride 1
/// or 2.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, Padding padding) {
  Tape<T>& tape = detail::same_tape(input, weight);
  if (input.shape().size() != 3 || weight.shape().size() != 4 || bias.shape().size() != 1) {
    throw ValidationError("conv2d: expected input (C,H,W), weight (Co,Ci,K,K), bias (Co)");
  }
  const int ci = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int co = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != ci || weight.shape()[3] != k || k % 2 == 0 || bias.shape()[0] != co) {
    throw ValidationError(fmt::format("conv2d: inconsistent weight shape {} for input {}",
                                      shape_str(weight.shape()), shape_str(input.shape())));
  }
  if (stride != 1 && stride != 2) throw ValidationError("conv2d: stride must be 1 or 2");
  const int pad = k / 2;
  if (padding == Padding::kReflect && (h <= pad || w <= pad)) {
    throw ValidationError("conv2d: image too small for reflection padding");
  }
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;

  const auto& in = input.values();
  const auto& wt = weight.values();
  const auto& bs = bias.values();
  auto fetch = [&](const std::vector<T>& buf, int c, int y, int x) -> T {
    const int sy = detail::map_coord(y, h, padding);
    const int sx = detail::map_coord(x, w, padding);
    if (sy < 0 || sx < 0) return T(0);
    return buf[(static_cast<size_t>(c) * h + sy) * w + sx];
  };

  std::vector<T> out(static_cast<size_t>(co) * ho * wo);
  parallel_for(static_cast<std::int64_t>(co) * ho * wo, [&](std::int64_t o) {
    const int ox = static_cast<int>(o % wo);
    const int oy = static_cast<int>((o / wo) % ho);
    const int c = static_cast<int>(o / (static_cast<std::int64_t>(wo) * ho));
    T s = bs[c];
    for (int cc = 0; cc < ci; ++cc)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          s += fetch(in, cc, oy * stride - pad + ky, ox * stride - pad + kx) *
               wt[((static_cast<size_t>(c) * ci + cc) * k + ky) * k + kx];
        }
    out[o] = s;
  });

  const bool rg =
      tape.wants_grad(input.id()) || tape.wants_grad(weight.id()) || tape.wants_grad(bias.id());
  auto bw = [iid = input.id(), wid = weight.id(), bid = bias.id(), ci, h, w, co, k, stride, pad,
             padding, ho, wo](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& in2 = t.node(iid).values;
    const auto& wt2 = t.node(wid).values;

    if (t.wants_grad(iid)) {
      // Gradient w.r.t. the padded raster first (pure gather), then fold
      // padded cells back onto their source pixels sequentially so
      // reflection stays deterministic.
      const int hp = h + 2 * pad, wp = w + 2 * pad;
      std::vector<T> gpad(static_cast<size_t>(ci) * hp * wp, T(0));
      parallel_for(static_cast<std::int64_t>(ci) * hp * wp, [&](std::int64_t p) {
        const int px = static_cast<int>(p % wp);
        const int py = static_cast<int>((p / wp) % hp);
        const int cc = static_cast<int>(p / (static_cast<std::int64_t>(wp) * hp));
        T s = T(0);
        for (int ky = 0; ky < k; ++ky) {
          const int ry = py - ky;
          if (ry % stride != 0) continue;
          const int oy = ry / stride;
          if (oy < 0 || oy >= ho) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int rx = px - kx;
            if (rx % stride != 0) continue;
            const int ox = rx / stride;
            if (ox < 0 || ox >= wo) continue;
            for (int c = 0; c < co; ++c) {
              s += g[(static_cast<size_t>(c) * ho + oy) * wo + ox] *
                   wt2[((static_cast<size_t>(c) * ci + cc) * k + ky) * k + kx];
            }
          }
        }
        gpad[p] = s;
      });
      auto& gi = t.grad_buf(iid);
      for (int cc = 0; cc < ci; ++cc)
        for (int py = 0; py < hp; ++py) {
          const int sy = detail::map_coord(py - pad, h, padding);
          if (sy < 0) continue;
          for (int px = 0; px < wp; ++px) {
            const int sx = detail::map_coord(px - pad, w, padding);
            if (sx < 0) continue;
            gi[(static_cast<size_t>(cc) * h + sy) * w + sx] +=
                gpad[(static_cast<size_t>(cc) * hp + py) * wp + px];
          }
        }
    }

    if (t.wants_grad(wid)) {
      auto& gw = t.grad_buf(wid);
      auto fetch2 = [&](int c, int y, int x) -> T {
        const int sy = detail::map_coord(y, h, padding);
        const int sx = detail::map_coord(x, w, padding);
        if (sy < 0 || sx < 0) return T(0);
        return in2[(static_cast<size_t>(c) * h + sy) * w + sx];
      };
      parallel_for(static_cast<std::int64_t>(co) * ci * k * k, [&](std::int64_t wi) {
        const int kx = static_cast<int>(wi % k);
        const int ky = static_cast<int>((wi / k) % k);
        const int cc = static_cast<int>((wi / (k * k)) % ci);
        const int c = static_cast<int>(wi / (static_cast<std::int64_t>(k) * k * ci));
        T s = T(0);
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            s += g[(static_cast<size_t>(c) * ho + oy) * wo + ox] *
                 fetch2(cc, oy * stride - pad + ky, ox * stride - pad + kx);
          }
        gw[wi] += s;
      });
    }

    if (t.wants_grad(bid)) {
      auto& gb = t.grad_buf(bid);
      for (int c = 0; c < co; ++c) {
        T s = T(0);
        for (std::int64_t o = 0; o < static_cast<std::int64_t>(ho) * wo; ++o) {
          s += g[static_cast<size_t>(c) * ho * wo + o];
        }
        gb[c] += s;
      }
    }
  };
  return tape.emit({co, ho, wo}, std::move(out), rg, rg ? std::function(bw) : nullptr);
}

/// Nearest-neighbor 2x upsampling of a (C,H,W) tensor.
template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input) {
  Tape<T>& tape = *input.tape();
  if (input.shape().size() != 3) throw ValidationError("upsample_nearest2x: expected (C,H,W)");
  const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int h2 = h * 2, w2 = w * 2;
  const auto& in = input.values();
  std::vector<T> out(static_cast<size_t>(c) * h2 * w2);
  parallel_for(static_cast<std::int64_t>(c) * h2 * w2, [&](std::int64_t o) {
    const int x = static_cast<int>(o % w2);
    const int y = static_cast<int>((o / w2) % h2);
    const int cc = static_cast<int>(o / (static_cast<std::int64_t>(w2) * h2));
    out[o] = in[(static_cast<size_t>(cc) * h + y / 2) * w + x / 2];
  });
  const bool rg = tape.wants_grad(input.id());
  auto bw = [iid = input.id(), c, h, w](Tape<T>& t, int self) {
    if (!t.wants_grad(iid)) return;
    const auto& g = t.node(self).grad;
    auto& gi = t.grad_buf(iid);
    const int h2 = h * 2, w2 = w * 2;
    parallel_for(static_cast<std::int64_t>(c) * h * w, [&](std::int64_t i) {
      const int x = static_cast<int>(i % w);
      const int y = static_cast<int>((i / w) % h);
      const int cc = static_cast<int>(i / (static_cast<std::int64_t>(w) * h));
      T s = T(0);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          s += g[(static_cast<size_t>(cc) * h2 + 2 * y + dy) * w2 + 2 * x + dx];
        }
      gi[i] += s;
    });
  };
  return tape.emit({c, h2, w2}, std::move(out), rg, rg ? std::function(bw) : nullptr);
}

/// Bilinear gather differentiable w.r.t. both the image and the sampling
/// coordinates. Matches the pure kernel: floor corners, zero reads outside
/// the raster, zero output at non-finite coordinates. The coordinate
/// derivative is the analytic within-cell slope; at integer coordinates
/// this is the right-cell (one-sided) derivative.
template <typename T>
Tensor<T> bilinear_sample_diff(const Tensor<T>& image, const Tensor<T>& u, const Tensor<T>& v) {
  Tape<T>& tape = detail::same_tape(image, u);
  detail::same_tape(u, v);
  if (image.shape().size() != 3 || u.shape() != v.shape()) {
    throw ValidationError("bilinear_sample_diff: expected image (C,H,W) and matching u/v grids");
  }
  const int c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  const Shape& gshape = u.shape();
  const std::int64_t n = numel(gshape);
  const auto& img = image.values();
  const auto& uv = u.values();
  const auto& vv = v.values();

  auto px = [&](int cc, int x, int y) -> T {
    if (x < 0 || x >= w || y < 0 || y >= h) return T(0);
    return img[(static_cast<size_t>(cc) * h + y) * w + x];
  };

  Shape out_shape;
  out_shape.push_back(c);
  for (int d : gshape) out_shape.push_back(d);
  std::vector<T> out(static_cast<size_t>(c) * n, T(0));
  parallel_for(n, [&](std::int64_t i) {
    const T cu = uv[i], cv = vv[i];
    if (!std::isfinite(cu) || !std::isfinite(cv)) return;
    const int x0 = static_cast<int>(std::floor(cu));
    const int y0 = static_cast<int>(std::floor(cv));
    const T wx = cu - std::floor(cu);
    const T wy = cv - std::floor(cv);
    for (int cc = 0; cc < c; ++cc) {
      const T top = px(cc, x0, y0) * (T(1) - wx) + px(cc, x0 + 1, y0) * wx;
      const T bot = px(cc, x0, y0 + 1) * (T(1) - wx) + px(cc, x0 + 1, y0 + 1) * wx;
      out[cc * n + i] = top * (T(1) - wy) + bot * wy;
    }
  });

  const bool rg =
      tape.wants_grad(image.id()) || tape.wants_grad(u.id()) || tape.wants_grad(v.id());
  auto bw = [iid = image.id(), uid = u.id(), vid = v.id(), c, h, w, n](Tape<T>& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& img2 = t.node(iid).values;
    const auto& uv2 = t.node(uid).values;
    const auto& vv2 = t.node(vid).values;
    auto px2 = [&](int cc, int x, int y) -> T {
      if (x < 0 || x >= w || y < 0 || y >= h) return T(0);
      return img2[(static_cast<size_t>(cc) * h + y) * w + x];
    };

    if (t.wants_grad(iid)) {
      // Scatter into the four corners; sequential to keep accumulation
      // order fixed.
      auto& gi = t.grad_buf(iid);
      for (std::int64_t i = 0; i < n; ++i) {
        const T cu = uv2[i], cv = vv2[i];
        if (!std::isfinite(cu) || !std::isfinite(cv)) continue;
        const int x0 = static_cast<int>(std::floor(cu));
        const int y0 = static_cast<int>(std::floor(cv));
        const T wx = cu - std::floor(cu);
        const T wy = cv - std::floor(cv);
        auto deposit = [&](int cc, int x, int y, T weight) {
          if (x < 0 || x >= w || y < 0 || y >= h) return;
          gi[(static_cast<size_t>(cc) * h + y) * w + x] += weight;
        };
        for (int cc = 0; cc < c; ++cc) {
          const T go = g[cc * n + i];
          deposit(cc, x0, y0, go * (T(1) - wx) * (T(1) - wy));
          deposit(cc, x0 + 1, y0, go * wx * (T(1) - wy));
          deposit(cc, x0, y0 + 1, go * (T(1) - wx) * wy);
          deposit(cc, x0 + 1, y0 + 1, go * wx * wy);
        }
      }
    }

    const bool want_u = t.wants_grad(uid);
    const bool want_v = t.wants_grad(vid);
    if (want_u || want_v) {
      std::vector<T>* gu = want_u ? &t.grad_buf(uid) : nullptr;
      std::vector<T>* gv = want_v ? &t.grad_buf(vid) : nullptr;
      parallel_for(n, [&](std::int64_t i) {
        const T cu = uv2[i], cv = vv2[i];
        if (!std::isfinite(cu) || !std::isfinite(cv)) return;
        const int x0 = static_cast<int>(std::floor(cu));
        const int y0 = static_cast<int>(std::floor(cv));
        const T wx = cu - std::floor(cu);
        const T wy = cv - std::floor(cv);
        T du = T(0), dv = T(0);
        for (int cc = 0; cc < c; ++cc) {
          const T go = g[cc * n + i];
          const T v00 = px2(cc, x0, y0), v10 = px2(cc, x0 + 1, y0);
          const T v01 = px2(cc, x0, y0 + 1), v11 = px2(cc, x0 + 1, y0 + 1);
          du += go * ((v10 - v00) * (T(1) - wy) + (v11 - v01) * wy);
          dv += go * ((v01 - v00) * (T(1) - wx) + (v11 - v10) * wx);
        }
        if (gu) (*gu)[i] += du;
        if (gv) (*gv)[i] += dv;
      });
    }
  };
  return tape.emit(std::move(out_shape), std::move(out), rg, rg ? std::function(bw) : nullptr);
}

// Operator sugar, including scalar-constant convenience forms.
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }
template <typename T>
Tensor<T> operator+(const Tensor<T>& a, T c) { return add(a, a.tape()->scalar(c)); }
template <typename T>
Tensor<T> operator+(T c, const Tensor<T>& a) { return add(a.tape()->scalar(c), a); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, T c) { return sub(a, a.tape()->scalar(c)); }
template <typename T>
Tensor<T> operator-(T c, const Tensor<T>& a) { return sub(a.tape()->scalar(c), a); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T c) { return mul(a, a.tape()->scalar(c)); }
template <typename T>
Tensor<T> operator*(T c, const Tensor<T>& a) { return mul(a.tape()->scalar(c), a); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, T c) { return div(a, a.tape()->scalar(c)); }
template <typename T>
Tensor<T> operator/(T c, const Tensor<T>& a) { return div(a.tape()->scalar(c), a); }

// ---------------------------------------------------------------------------
// Finite-difference verification harness.

template <typename T>
struct GradCheckInput {
  Shape shape;
  std::vector<T> values;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;
  int worst_input = -1;
  std::int64_t worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
};

/// Central-difference check of reverse-mode gradients.
///
/// `build` receives a fresh tape plus one variable per input and must
/// return a scalar root. `skip` (optional) suppresses coordinates that sit
/// within eps of a non-differentiable point of the function under test
/// (|x| kinks, min ties, clamp edges, branch thresholds); central
/// differences straddle the kink there and disagree with any one-sided
/// convention, so such coordinates are reported as skipped rather than
/// failed. Relative error uses max(|analytic|, |numeric|, 1) as the
/// denominator so near-zero gradients are judged on absolute error.
template <typename T, typename BuildFn>
GradCheckResult grad_check(BuildFn build, const std::vector<GradCheckInput<T>>& inputs,
                           GradCheckOptions opt = {},
                           const std::function<bool(int, std::int64_t)>& skip = {}) {
  auto eval = [&](const std::vector<GradCheckInput<T>>& ins, std::vector<std::vector<T>>* grads) {
    Tape<T> tape;
    std::vector<Tensor<T>> vars;
    vars.reserve(ins.size());
    for (const auto& in : ins) vars.push_back(tape.variable(in.shape, in.values));
    Tensor<T> root = build(tape, vars);
    const T value = root.value();
    if (grads) {
      tape.backward(root);
      grads->clear();
      for (const auto& var : vars) {
        const auto& g = var.grad();
        grads->push_back(g.empty() ? std::vector<T>(numel(var.shape()), T(0)) : g);
      }
    }
    return value;
  };

  std::vector<std::vector<T>> analytic;
  eval(inputs, &analytic);

  GradCheckResult result;
  std::vector<GradCheckInput<T>> probe = inputs;
  for (size_t vi = 0; vi < inputs.size(); ++vi) {
    for (std::int64_t j = 0; j < static_cast<std::int64_t>(inputs[vi].values.size()); ++j) {
      if (skip && skip(static_cast<int>(vi), j)) {
        ++result.skipped;
        continue;
      }
      const T orig = probe[vi].values[j];
      probe[vi].values[j] = orig + static_cast<T>(opt.eps);
      const double f_plus = eval(probe, nullptr);
      probe[vi].values[j] = orig - static_cast<T>(opt.eps);
      const double f_minus = eval(probe, nullptr);
      probe[vi].values[j] = orig;

      const double numeric = (f_plus - f_minus) / (2.0 * opt.eps);
      const double an = analytic[vi][j];
      const double rel =
          std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), 1.0});
      ++result.checked;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_input = static_cast<int>(vi);
        result.worst_coord = j;
        result.worst_analytic = an;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace issl::ad
