// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with reverse-mode autodiff on an explicit tape.
// Scalar type is a template parameter: float for training, double for
// gradient checks. Copying a Tensor shares the underlying buffer; values are
// treated as immutable once produced by an op.

#ifndef XINT_CORE_TENSOR_HPP
#define XINT_CORE_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/util.hpp"

namespace xint {

template <typename T>
struct TensorData {
  std::vector<size_t> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData<T>>()) {}

  explicit Tensor(std::vector<size_t> shape, T fill = T(0))
      : d_(std::make_shared<TensorData<T>>()) {
    d_->shape = std::move(shape);
    d_->values.assign(count(d_->shape), fill);
  }

  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(std::vector<size_t> shape, T v) { return Tensor(std::move(shape), v); }

  static Tensor from(std::vector<size_t> shape, std::vector<T> values) {
    if (count(shape) != values.size())
      throw ValidationError("tensor: " + std::to_string(values.size()) +
                            " values do not fill shape " + shape_str(shape));
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return from({}, {v}); }

  const std::vector<size_t>& shape() const { return d_->shape; }
  size_t rank() const { return d_->shape.size(); }
  size_t dim(size_t i) const { return d_->shape[i]; }
  size_t numel() const { return d_->values.size(); }

  // The handle is shallow-const: buffers live behind a shared pointer and
  // stay writable through const handles (needed by backward closures).
  T* data() const { return d_->values.data(); }
  std::vector<T>& values() const { return d_->values; }

  T item() const {
    if (numel() != 1)
      throw ValidationError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  const Tensor& set_requires_grad(bool rg = true) const {
    d_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }

  // Lazily allocated, zero-filled gradient buffer.
  std::vector<T>& grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
    return d_->grad;
  }

  void zero_grad() const {
    if (!d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
  }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  std::shared_ptr<TensorData<T>> impl() const { return d_; }

  static size_t count(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t e : shape) n *= e;
    return n;
  }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

// ---------------------------------------------------------------------------
// Tape: ordered record of differentiable ops. Replaying it in reverse visits
// consumers before producers, so each node sees its complete output gradient.
// Leaf gradients accumulate across backward() calls; intermediate gradients
// are scratch and reset per call.
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& current() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

  void record(std::shared_ptr<TensorData<T>> out, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(out), std::move(backward)});
  }

  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ValidationError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    for (auto& n : nodes_) {
      auto& g = n.out->grad;
      g.assign(n.out->values.size(), T(0));
    }
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }

 private:
  struct Node {
    std::shared_ptr<TensorData<T>> out;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

// Activates a tape for the current thread while in scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current()) { Tape<T>::current() = &tape; }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

namespace detail {

template <typename T>
bool wants_grad(std::initializer_list<Tensor<T>> inputs) {
  if (!Tape<T>::current()) return false;
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

template <typename T, typename F>
void record(std::initializer_list<Tensor<T>> inputs, Tensor<T>& out, F&& backward) {
  if (!wants_grad(inputs)) return;
  out.set_requires_grad(true);
  Tape<T>::current()->record(out.impl(), std::forward<F>(backward));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Raw kernels (also used by the backward closures).
// ---------------------------------------------------------------------------

namespace kernel {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  parallel_for(m, [&](size_t r0, size_t r1) {
    for (size_t i = r0; i < r1; ++i) {
      const T* ai = a + i * k;
      T* ci = c + i * n;
      for (size_t p = 0; p < k; ++p) {
        T av = ai[p];
        const T* bp = b + p * n;
        for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  });
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  parallel_for(m, [&](size_t r0, size_t r1) {
    for (size_t i = r0; i < r1; ++i) {
      const T* ai = a + i * k;
      T* ci = c + i * n;
      for (size_t j = 0; j < n; ++j) {
        const T* bj = b + j * k;
        T acc = T(0);
        for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] += acc;
      }
    }
  });
}

// C[k,n] += A[m,k]^T * D[m,n]
template <typename T>
void gemm_tn(const T* a, const T* d, T* c, size_t m, size_t k, size_t n) {
  parallel_for(k, [&](size_t k0, size_t k1) {
    for (size_t i = 0; i < m; ++i) {
      const T* ai = a + i * k;
      const T* di = d + i * n;
      for (size_t p = k0; p < k1; ++p) {
        T av = ai[p];
        T* cp = c + p * n;
        for (size_t j = 0; j < n; ++j) cp[j] += av * di[j];
      }
    }
  });
}

inline size_t conv_out_extent(size_t in, size_t kernel, size_t stride, size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ValidationError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  detail::record({a, b}, out, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ValidationError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  detail::record({a, b}, out, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      const T* pb2 = b.data();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb2[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      const T* pa2 = a.data();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa2[i];
    }
  });
  return out;
}

// y = scale * x + shift, elementwise with scalar coefficients.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (size_t i = 0; i < out.numel(); ++i) po[i] = scale * px[i] + shift;
  detail::record({x}, out, [x, out, scale]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(T(0));
  const T* px = x.data();
  T acc = T(0);
  for (size_t i = 0; i < x.numel(); ++i) acc += px[i];
  out.data()[0] = acc;
  detail::record({x}, out, [x, out]() mutable {
    T g = out.grad()[0];
    auto& gx = x.grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ValidationError("mean: empty tensor");
  return affine(sum(x), T(1) / static_cast<T>(x.numel()), T(0));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<size_t> new_shape) {
  if (Tensor<T>::count(new_shape) != x.numel())
    throw ValidationError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                          shape_str(new_shape));
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), x.values());
  detail::record({x}, out, [x, out]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.rank() != 2)
    throw ValidationError("transpose2d: expected rank-2, got " + shape_str(x.shape()));
  size_t m = x.dim(0), n = x.dim(1);
  Tensor<T> out({n, m});
  const T* px = x.data();
  T* po = out.data();
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
  detail::record({x}, out, [x, out, m, n]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
  });
  return out;
}

// Concatenate two NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3))
    throw ValidationError("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (size_t i = 0; i < n; ++i) {
    std::copy(pa + i * ca * hw, pa + (i + 1) * ca * hw, po + i * (ca + cb) * hw);
    std::copy(pb + i * cb * hw, pb + (i + 1) * cb * hw, po + (i * (ca + cb) + ca) * hw);
  }
  detail::record({a, b}, out, [a, b, out, n, ca, cb, hw]() mutable {
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < ca * hw; ++j) ga[i * ca * hw + j] += g[i * (ca + cb) * hw + j];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < cb * hw; ++j)
          gb[i * cb * hw + j] += g[(i * (ca + cb) + ca) * hw + j];
    }
  });
  return out;
}

// Gather rows of a rank-2 tensor; backward scatter-adds into the source rows.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<size_t>& idx) {
  if (x.rank() != 2)
    throw ValidationError("gather_rows: expected rank-2, got " + shape_str(x.shape()));
  size_t f = x.dim(1);
  for (size_t i : idx)
    if (i >= x.dim(0))
      throw ValidationError("gather_rows: row " + std::to_string(i) + " out of range for " +
                            shape_str(x.shape()));
  Tensor<T> out({idx.size(), f});
  const T* px = x.data();
  T* po = out.data();
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(px + idx[r] * f, px + (idx[r] + 1) * f, po + r * f);
  detail::record({x}, out, [x, out, idx, f]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (size_t j = 0; j < f; ++j) gx[idx[r] * f + j] += g[r * f + j];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (size_t i = 0; i < out.numel(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  detail::record({x}, out, [x, out]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    const T* px2 = x.data();
    for (size_t i = 0; i < g.size(); ++i)
      if (px2[i] > T(0)) gx[i] += g[i];
  });
  return out;
}

// Branch on sign so exp never overflows.
template <typename T>
inline T sigmoid_scalar(T v) {
  if (v >= T(0)) {
    T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (size_t i = 0; i < out.numel(); ++i) po[i] = sigmoid_scalar(px[i]);
  detail::record({x}, out, [x, out]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    const T* py = out.data();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * py[i] * (T(1) - py[i]);
  });
  return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (size_t i = 0; i < out.numel(); ++i) po[i] = std::tanh(px[i]);
  detail::record({x}, out, [x, out]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    const T* py = out.data();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - py[i] * py[i]);
  });
  return out;
}

// Softmax over the last axis, shifted by the row max for stability.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0 || x.dim(x.rank() - 1) < 1)
    throw ValidationError("softmax: last extent must be >= 1, got " + shape_str(x.shape()));
  size_t cols = x.dim(x.rank() - 1);
  size_t rows = x.numel() / cols;
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * cols;
    T* yr = po + r * cols;
    T mx = xr[0];
    for (size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    T z = T(0);
    for (size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (size_t j = 0; j < cols; ++j) yr[j] /= z;
  }
  detail::record({x}, out, [x, out, rows, cols]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    const T* py = out.data();
    for (size_t r = 0; r < rows; ++r) {
      const T* yr = py + r * cols;
      const T* gr = g.data() + r * cols;
      T dot = T(0);
      for (size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
      for (size_t j = 0; j < cols; ++j) gx[r * cols + j] += yr[j] * (gr[j] - dot);
    }
  });
  return out;
}

enum class Act { kRelu, kSigmoid, kTanh, kSoftmaxLastDim };

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Act kind) {
  switch (kind) {
    case Act::kRelu: return relu(x);
    case Act::kSigmoid: return sigmoid(x);
    case Act::kTanh: return tanh(x);
    case Act::kSoftmaxLastDim: return softmax_lastdim(x);
  }
  throw ValidationError("activation: unknown kind");
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ValidationError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  kernel::gemm_nn(a.data(), b.data(), out.data(), m, k, n);
  detail::record({a, b}, out, [a, b, out, m, k, n]() mutable {
    const T* g = out.grad().data();
    if (a.requires_grad()) kernel::gemm_nt(g, b.data(), a.grad().data(), m, n, k);
    if (b.requires_grad()) kernel::gemm_tn(a.data(), g, b.grad().data(), m, k, n);
  });
  return out;
}

// y[n,out] = x[n,in] * W[out,in]^T (+ bias broadcast over rows)
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias = nullptr) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw ValidationError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                          shape_str(w.shape()));
  size_t n = x.dim(0), in = x.dim(1), outf = w.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != outf))
    throw ValidationError("linear: bias " + shape_str(bias->shape()) + " does not match weight " +
                          shape_str(w.shape()));
  Tensor<T> out({n, outf});
  kernel::gemm_nt(x.data(), w.data(), out.data(), n, in, outf);
  if (bias) {
    T* po = out.data();
    const T* pb = bias->data();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < outf; ++j) po[i * outf + j] += pb[j];
  }
  Tensor<T> b = bias ? *bias : Tensor<T>();
  bool has_bias = bias != nullptr;
  auto backward = [x, w, b, out, n, in, outf, has_bias]() mutable {
    const T* g = out.grad().data();
    if (x.requires_grad()) kernel::gemm_nn(g, w.data(), x.grad().data(), n, outf, in);
    if (w.requires_grad()) kernel::gemm_tn(g, x.data(), w.grad().data(), n, outf, in);
    if (has_bias && b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < outf; ++j) gb[j] += g[i * outf + j];
    }
  };
  if (bias)
    detail::record({x, w, *bias}, out, std::move(backward));
  else
    detail::record({x, w}, out, std::move(backward));
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  return linear(x, w, &bias);
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation convention, no kernel flip)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, size_t stride,
                 size_t pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ValidationError("conv2d: expected NCHW input and OIKK weight, got " +
                          shape_str(x.shape()) + " and " + shape_str(w.shape()));
  size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw ValidationError("conv2d: weight channels " + shape_str(w.shape()) +
                          " do not match input " + shape_str(x.shape()));
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw ValidationError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                          shape_str(x.shape()));
  if (stride == 0) throw ValidationError("conv2d: stride must be >= 1");
  if (bias && (bias->rank() != 1 || bias->dim(0) != O))
    throw ValidationError("conv2d: bias " + shape_str(bias->shape()) + " does not match weight " +
                          shape_str(w.shape()));
  size_t Ho = kernel::conv_out_extent(H, kh, stride, pad);
  size_t Wo = kernel::conv_out_extent(W, kw, stride, pad);
  Tensor<T> out({N, O, Ho, Wo});

  const T* px = x.data();
  const T* pw = w.data();
  const T* pb = bias ? bias->data() : nullptr;
  T* po = out.data();
  parallel_for(N * O, [&](size_t t0, size_t t1) {
    for (size_t t = t0; t < t1; ++t) {
      size_t n = t / O, o = t % O;
      for (size_t oh = 0; oh < Ho; ++oh) {
        long base_h = static_cast<long>(oh * stride) - static_cast<long>(pad);
        size_t i0 = base_h < 0 ? static_cast<size_t>(-base_h) : 0;
        size_t i1 = static_cast<size_t>(
            std::min<long>(static_cast<long>(kh), std::max<long>(static_cast<long>(H) - base_h, 0)));
        for (size_t ow = 0; ow < Wo; ++ow) {
          long base_w = static_cast<long>(ow * stride) - static_cast<long>(pad);
          size_t j0 = base_w < 0 ? static_cast<size_t>(-base_w) : 0;
          size_t j1 = static_cast<size_t>(std::min<long>(
              static_cast<long>(kw), std::max<long>(static_cast<long>(W) - base_w, 0)));
          T acc = pb ? pb[o] : T(0);
          for (size_t c = 0; c < C; ++c) {
            for (size_t i = i0; i < i1; ++i) {
              size_t ih = static_cast<size_t>(base_h + static_cast<long>(i));
              size_t iw = static_cast<size_t>(base_w + static_cast<long>(j0));
              const T* xrow = px + ((n * C + c) * H + ih) * W + iw;
              const T* wrow = pw + ((o * C + c) * kh + i) * kw + j0;
              for (size_t j = 0; j + j0 < j1; ++j) acc += xrow[j] * wrow[j];
            }
          }
          po[((n * O + o) * Ho + oh) * Wo + ow] = acc;
        }
      }
    }
  });

  Tensor<T> b = bias ? *bias : Tensor<T>();
  bool has_bias = bias != nullptr;
  auto backward = [x, w, b, out, has_bias, N, C, H, W, O, kh, kw, stride, pad, Ho, Wo]() mutable {
    const T* g = out.grad().data();
    const T* px2 = x.data();
    const T* pw2 = w.data();
    if (x.requires_grad()) {
      T* gx = x.grad().data();
      parallel_for(N, [&](size_t n0, size_t n1) {
        for (size_t n = n0; n < n1; ++n)
          for (size_t o = 0; o < O; ++o)
            for (size_t oh = 0; oh < Ho; ++oh)
              for (size_t ow = 0; ow < Wo; ++ow) {
                T gv = g[((n * O + o) * Ho + oh) * Wo + ow];
                for (size_t c = 0; c < C; ++c)
                  for (size_t i = 0; i < kh; ++i) {
                    long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                    if (ih < 0 || ih >= static_cast<long>(H)) continue;
                    for (size_t j = 0; j < kw; ++j) {
                      long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                      if (iw < 0 || iw >= static_cast<long>(W)) continue;
                      gx[((n * C + c) * H + static_cast<size_t>(ih)) * W +
                         static_cast<size_t>(iw)] += gv * pw2[((o * C + c) * kh + i) * kw + j];
                    }
                  }
              }
      });
    }
    if (w.requires_grad()) {
      T* gw = w.grad().data();
      parallel_for(O, [&](size_t o0, size_t o1) {
        for (size_t o = o0; o < o1; ++o)
          for (size_t n = 0; n < N; ++n)
            for (size_t oh = 0; oh < Ho; ++oh)
              for (size_t ow = 0; ow < Wo; ++ow) {
                T gv = g[((n * O + o) * Ho + oh) * Wo + ow];
                for (size_t c = 0; c < C; ++c)
                  for (size_t i = 0; i < kh; ++i) {
                    long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                    if (ih < 0 || ih >= static_cast<long>(H)) continue;
                    for (size_t j = 0; j < kw; ++j) {
                      long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                      if (iw < 0 || iw >= static_cast<long>(W)) continue;
                      gw[((o * C + c) * kh + i) * kw + j] +=
                          gv * px2[((n * C + c) * H + static_cast<size_t>(ih)) * W +
                                   static_cast<size_t>(iw)];
                    }
                  }
              }
      });
    }
    if (has_bias && b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t n = 0; n < N; ++n)
        for (size_t o = 0; o < O; ++o) {
          T acc = T(0);
          const T* gp = g + (n * O + o) * Ho * Wo;
          for (size_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
          gb[o] += acc;
        }
    }
  };
  if (bias)
    detail::record({x, w, *bias}, out, std::move(backward));
  else
    detail::record({x, w}, out, std::move(backward));
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, size_t stride,
                 size_t pad) {
  return conv2d(x, w, &bias, stride, pad);
}

// One filter per input channel; channels never mix.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, size_t stride, size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != 1)
    throw ValidationError("depthwise_conv2d: expected NCHW input and C1KK weight, got " +
                          shape_str(x.shape()) + " and " + shape_str(w.shape()));
  size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  size_t kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != C)
    throw ValidationError("depthwise_conv2d: weight " + shape_str(w.shape()) +
                          " does not provide one filter per channel of " + shape_str(x.shape()));
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw ValidationError("depthwise_conv2d: kernel " + shape_str(w.shape()) +
                          " larger than padded input " + shape_str(x.shape()));
  if (stride == 0) throw ValidationError("depthwise_conv2d: stride must be >= 1");
  size_t Ho = kernel::conv_out_extent(H, kh, stride, pad);
  size_t Wo = kernel::conv_out_extent(W, kw, stride, pad);
  Tensor<T> out({N, C, Ho, Wo});

  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
  parallel_for(N * C, [&](size_t t0, size_t t1) {
    for (size_t t = t0; t < t1; ++t) {
      size_t n = t / C, c = t % C;
      const T* xc = px + (n * C + c) * H * W;
      const T* wc = pw + c * kh * kw;
      for (size_t oh = 0; oh < Ho; ++oh)
        for (size_t ow = 0; ow < Wo; ++ow) {
          T acc = T(0);
          for (size_t i = 0; i < kh; ++i) {
            long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(H)) continue;
            for (size_t j = 0; j < kw; ++j) {
              long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
              if (iw < 0 || iw >= static_cast<long>(W)) continue;
              acc += xc[static_cast<size_t>(ih) * W + static_cast<size_t>(iw)] * wc[i * kw + j];
            }
          }
          po[((n * C + c) * Ho + oh) * Wo + ow] = acc;
        }
    }
  });

  detail::record({x, w}, out, [x, w, out, N, C, H, W, kh, kw, stride, pad, Ho, Wo]() mutable {
    const T* g = out.grad().data();
    const T* px2 = x.data();
    const T* pw2 = w.data();
    if (x.requires_grad()) {
      T* gx = x.grad().data();
      parallel_for(N * C, [&](size_t t0, size_t t1) {
        for (size_t t = t0; t < t1; ++t) {
          size_t n = t / C, c = t % C;
          const T* wc = pw2 + c * kh * kw;
          for (size_t oh = 0; oh < Ho; ++oh)
            for (size_t ow = 0; ow < Wo; ++ow) {
              T gv = g[((n * C + c) * Ho + oh) * Wo + ow];
              for (size_t i = 0; i < kh; ++i) {
                long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                if (ih < 0 || ih >= static_cast<long>(H)) continue;
                for (size_t j = 0; j < kw; ++j) {
                  long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                  if (iw < 0 || iw >= static_cast<long>(W)) continue;
                  gx[((n * C + c) * H + static_cast<size_t>(ih)) * W + static_cast<size_t>(iw)] +=
                      gv * wc[i * kw + j];
                }
              }
            }
        }
      });
    }
    if (w.requires_grad()) {
      T* gw = w.grad().data();
      parallel_for(C, [&](size_t c0, size_t c1) {
        for (size_t c = c0; c < c1; ++c)
          for (size_t n = 0; n < N; ++n) {
            const T* xc = px2 + (n * C + c) * H * W;
            for (size_t oh = 0; oh < Ho; ++oh)
              for (size_t ow = 0; ow < Wo; ++ow) {
                T gv = g[((n * C + c) * Ho + oh) * Wo + ow];
                for (size_t i = 0; i < kh; ++i) {
                  long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                  if (ih < 0 || ih >= static_cast<long>(H)) continue;
                  for (size_t j = 0; j < kw; ++j) {
                    long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                    if (iw < 0 || iw >= static_cast<long>(W)) continue;
                    gw[c * kh * kw + i * kw + j] +=
                        gv * xc[static_cast<size_t>(ih) * W + static_cast<size_t>(iw)];
                  }
                }
              }
          }
      });
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, size_t k, size_t stride) {
  if (x.rank() != 4) throw ValidationError("maxpool2d: expected NCHW, got " + shape_str(x.shape()));
  size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k > H || k > W)
    throw ValidationError("maxpool2d: window " + std::to_string(k) + " exceeds input " +
                          shape_str(x.shape()));
  if (stride == 0) throw ValidationError("maxpool2d: stride must be >= 1");
  size_t Ho = (H - k) / stride + 1;
  size_t Wo = (W - k) / stride + 1;
  Tensor<T> out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<size_t>>(out.numel());

  const T* px = x.data();
  T* po = out.data();
  for (size_t n = 0; n < N; ++n)
    for (size_t c = 0; c < C; ++c) {
      const T* xc = px + (n * C + c) * H * W;
      for (size_t oh = 0; oh < Ho; ++oh)
        for (size_t ow = 0; ow < Wo; ++ow) {
          size_t best = (oh * stride) * W + ow * stride;
          T bv = xc[best];
          for (size_t i = 0; i < k; ++i)
            for (size_t j = 0; j < k; ++j) {
              size_t pos = (oh * stride + i) * W + (ow * stride + j);
              if (xc[pos] > bv) {
                bv = xc[pos];
                best = pos;
              }
            }
          size_t oidx = ((n * C + c) * Ho + oh) * Wo + ow;
          po[oidx] = bv;
          (*argmax)[oidx] = (n * C + c) * H * W + best;
        }
    }
  detail::record({x}, out, [x, out, argmax]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
  return out;
}

// [N,C,H,W] -> [N,C], mean over the spatial extent.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4)
    throw ValidationError("global_avg_pool: expected NCHW, got " + shape_str(x.shape()));
  size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ValidationError("global_avg_pool: empty spatial extent");
  Tensor<T> out({N, C});
  const T* px = x.data();
  T* po = out.data();
  for (size_t i = 0; i < N * C; ++i) {
    T acc = T(0);
    const T* p = px + i * hw;
    for (size_t j = 0; j < hw; ++j) acc += p[j];
    po[i] = acc / static_cast<T>(hw);
  }
  detail::record({x}, out, [x, out, hw]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      T gv = g[i] / static_cast<T>(hw);
      for (size_t j = 0; j < hw; ++j) gx[i * hw + j] += gv;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over axis 1 (features of [N,F] or channels of [N,C,H,W])
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                    T eps = T(1e-5), T momentum = T(0.1)) {
  if (x.rank() != 2 && x.rank() != 4)
    throw ValidationError("batchnorm: expected rank 2 or 4, got " + shape_str(x.shape()));
  size_t F = x.dim(1);
  for (const Tensor<T>* p :
       std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var})
    if (p->rank() != 1 || p->dim(0) != F)
      throw ValidationError("batchnorm: parameter " + shape_str(p->shape()) +
                            " does not match feature extent of " + shape_str(x.shape()));
  size_t N = x.dim(0);
  size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  size_t M = N * hw;  // reduction set per feature
  if (M == 0) throw ValidationError("batchnorm: empty batch");

  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto invstd = std::make_shared<std::vector<T>>(F);

  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.data();
  auto at = [&](size_t n, size_t f, size_t s) { return (n * F + f) * hw + s; };

  if (training) {
    T* rm = running_mean.data();
    T* rv = running_var.data();
    for (size_t f = 0; f < F; ++f) {
      T s1 = T(0), s2 = T(0);
      for (size_t n = 0; n < N; ++n)
        for (size_t s = 0; s < hw; ++s) {
          T v = px[at(n, f, s)];
          s1 += v;
          s2 += v * v;
        }
      T m = s1 / static_cast<T>(M);
      T var = s2 / static_cast<T>(M) - m * m;
      if (var < T(0)) var = T(0);  // guard fp cancellation
      T is = T(1) / std::sqrt(var + eps);
      (*invstd)[f] = is;
      rm[f] = (T(1) - momentum) * rm[f] + momentum * m;
      rv[f] = (T(1) - momentum) * rv[f] + momentum * var;
      for (size_t n = 0; n < N; ++n)
        for (size_t s = 0; s < hw; ++s) {
          size_t i = at(n, f, s);
          (*xhat)[i] = (px[i] - m) * is;
          po[i] = pg[f] * (*xhat)[i] + pb[f];
        }
    }
  } else {
    const T* rm = running_mean.data();
    const T* rv = running_var.data();
    for (size_t f = 0; f < F; ++f) {
      T is = T(1) / std::sqrt(rv[f] + eps);
      (*invstd)[f] = is;
      for (size_t n = 0; n < N; ++n)
        for (size_t s = 0; s < hw; ++s) {
          size_t i = at(n, f, s);
          (*xhat)[i] = (px[i] - rm[f]) * is;
          po[i] = pg[f] * (*xhat)[i] + pb[f];
        }
    }
  }

  detail::record({x, gamma, beta}, out,
                 [x, gamma, beta, out, xhat, invstd, training, F, N, hw, M]() mutable {
    const auto& g = out.grad();
    const T* pg2 = gamma.data();
    auto at2 = [&](size_t n, size_t f, size_t s) { return (n * F + f) * hw + s; };
    for (size_t f = 0; f < F; ++f) {
      T s1 = T(0), s2 = T(0);
      for (size_t n = 0; n < N; ++n)
        for (size_t s = 0; s < hw; ++s) {
          size_t i = at2(n, f, s);
          s1 += g[i];
          s2 += g[i] * (*xhat)[i];
        }
      if (gamma.requires_grad()) gamma.grad()[f] += s2;
      if (beta.requires_grad()) beta.grad()[f] += s1;
      if (x.requires_grad()) {
        auto& gx = x.grad();
        T is = (*invstd)[f];
        if (training) {
          T mean_g = s1 / static_cast<T>(M);
          T mean_gx = s2 / static_cast<T>(M);
          for (size_t n = 0; n < N; ++n)
            for (size_t s = 0; s < hw; ++s) {
              size_t i = at2(n, f, s);
              gx[i] += pg2[f] * is * (g[i] - mean_g - (*xhat)[i] * mean_gx);
            }
        } else {
          for (size_t n = 0; n < N; ++n)
            for (size_t s = 0; s < hw; ++s) {
              size_t i = at2(n, f, s);
              gx[i] += pg2[f] * is * g[i];
            }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors scaled by 1/(1-p) at train time)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ValidationError("dropout: probability must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  Tensor<T> out(x.shape());
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  const T* px = x.data();
  T* po = out.data();
  for (size_t i = 0; i < x.numel(); ++i) {
    T m = rng.uniform() < p ? T(0) : keep_scale;
    (*mask)[i] = m;
    po[i] = px[i] * m;
  }
  detail::record({x}, out, [x, out, mask]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
  return out;
}

}  // namespace xint

#endif
