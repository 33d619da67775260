// SPDX-License-Identifier: Apache-2.0
#ifndef XINT_CORE_LOSS_HPP
#define XINT_CORE_LOSS_HPP

#include <cmath>
#include <vector>

#include "core/tensor.hpp"

namespace xint {

struct ClassWeights {
  std::vector<double> w;  // one positive weight per class
};

// w = [n_first / total, 1 - n_first / total]
inline ClassWeights compute_class_weights(uint64_t first_count, uint64_t second_count) {
  uint64_t total = first_count + second_count;
  if (total == 0) throw DataError("compute_class_weights: zero total event count");
  double r = static_cast<double>(first_count) / static_cast<double>(total);
  return ClassWeights{{r, 1.0 - r}};
}

// Weighted mean cross-entropy over rows, normalized by the sum of the applied
// weights. Log-sum-exp stabilized.
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                 const ClassWeights& weights) {
  if (logits.rank() != 2)
    throw ValidationError("weighted_cross_entropy: expected [n,classes], got " +
                          shape_str(logits.shape()));
  size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    throw ValidationError("weighted_cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(n) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<size_t>(y) >= weights.w.size() || static_cast<size_t>(y) >= c)
      throw DataError("weighted_cross_entropy: label " + std::to_string(y) + " out of range");
  for (double w : weights.w)
    if (!(w > 0.0)) throw ValidationError("weighted_cross_entropy: class weights must be > 0");

  const T* pl = logits.data();
  T wsum = T(0);
  T loss = T(0);
  // softmax probabilities saved for backward
  auto probs = std::make_shared<std::vector<T>>(n * c);
  for (size_t i = 0; i < n; ++i) {
    const T* row = pl + i * c;
    T mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    T lse = mx + std::log(z);
    for (size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lse);
    T wy = static_cast<T>(weights.w[static_cast<size_t>(labels[i])]);
    loss += wy * (lse - row[static_cast<size_t>(labels[i])]);
    wsum += wy;
  }
  Tensor<T> out = Tensor<T>::scalar(loss / wsum);
  detail::record({logits}, out, [logits, out, probs, labels, weights, n, c, wsum]() mutable {
    T g = out.grad()[0] / wsum;
    auto& gl = logits.grad();
    for (size_t i = 0; i < n; ++i) {
      T wy = static_cast<T>(weights.w[static_cast<size_t>(labels[i])]);
      for (size_t j = 0; j < c; ++j) {
        T ind = static_cast<size_t>(labels[i]) == j ? T(1) : T(0);
        gl[i * c + j] += g * wy * ((*probs)[i * c + j] - ind);
      }
    }
  });
  return out;
}

// Mean binary cross-entropy over unmasked entries; supports soft targets.
// Predictions are clamped away from {0,1} before the logs. A fully masked
// input is defined as 0 and flagged via warning.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& pred, const Tensor<T>& target,
                               const Tensor<T>* mask = nullptr) {
  if (pred.shape() != target.shape())
    throw ValidationError("binary_cross_entropy: prediction " + shape_str(pred.shape()) +
                          " vs target " + shape_str(target.shape()));
  if (mask && mask->shape() != pred.shape())
    throw ValidationError("binary_cross_entropy: mask " + shape_str(mask->shape()) +
                          " vs prediction " + shape_str(pred.shape()));
  const T kClamp = std::is_same_v<T, double> ? T(1e-12) : T(1e-7);
  const T* pp = pred.data();
  const T* pt = target.data();
  const T* pm = mask ? mask->data() : nullptr;

  double m_count = 0;
  T loss = T(0);
  for (size_t i = 0; i < pred.numel(); ++i) {
    if (pm && pm[i] == T(0)) continue;
    m_count += 1;
    T p = std::min(std::max(pp[i], kClamp), T(1) - kClamp);
    loss -= pt[i] * std::log(p) + (T(1) - pt[i]) * std::log(T(1) - p);
  }
  if (m_count == 0) {
    log_warn("binary_cross_entropy: all entries masked out, loss defined as 0");
    Tensor<T> out = Tensor<T>::scalar(T(0));
    detail::record({pred}, out, []() {});
    return out;
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(m_count));
  Tensor<T> mask_copy = mask ? *mask : Tensor<T>();
  bool has_mask = mask != nullptr;
  detail::record({pred}, out, [pred, target, mask_copy, has_mask, out, m_count, kClamp]() mutable {
    T g = out.grad()[0] / static_cast<T>(m_count);
    auto& gp = pred.grad();
    const T* pp2 = pred.data();
    const T* pt2 = target.data();
    const T* pm2 = has_mask ? mask_copy.data() : nullptr;
    for (size_t i = 0; i < gp.size(); ++i) {
      if (pm2 && pm2[i] == T(0)) continue;
      T p = std::min(std::max(pp2[i], kClamp), T(1) - kClamp);
      gp[i] += g * (-pt2[i] / p + (T(1) - pt2[i]) / (T(1) - p));
    }
  });
  return out;
}

// total = cross + lambda * pose + lambda * speed, in exactly that association.
template <typename T>
struct LossBundle {
  Tensor<T> cross;
  Tensor<T> pose;
  Tensor<T> speed;
  Tensor<T> total;
  double lambda = 0.0;
};

template <typename T>
LossBundle<T> combined_loss(const Tensor<T>& cross, const Tensor<T>& pose, const Tensor<T>& speed,
                            double lambda) {
  if (lambda < 0.0)
    throw ValidationError("combined_loss: lambda must be >= 0, got " + std::to_string(lambda));
  LossBundle<T> b;
  b.cross = cross;
  b.pose = pose;
  b.speed = speed;
  b.lambda = lambda;
  T lam = static_cast<T>(lambda);
  b.total = add(add(cross, affine(pose, lam, T(0))), affine(speed, lam, T(0)));
  return b;
}

}  // namespace xint

#endif
