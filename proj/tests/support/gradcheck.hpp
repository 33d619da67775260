// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checking. Lives in test code on purpose:
// the numeric differentiation only ever calls the forward path, so it stays
// independent of the tape machinery it is used to verify.

#ifndef XINT_TESTS_GRADCHECK_HPP
#define XINT_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace xint::testing {

using Fn = std::function<Tensor<double>(void)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  size_t checked = 0;
};

// Relative for large magnitudes, absolute below 1.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Runs `fn` under a fresh tape, backpropagates, then perturbs each checked
// coordinate of each input by +/-h and compares the analytic gradient with
// the central difference. `max_coords_per_input` bounds the cost for large
// tensors (coordinates are chosen by a seeded rng; 0 = all coordinates).
inline GradCheckResult gradcheck(std::vector<Tensor<double>> inputs, const Fn& fn,
                                 double h = 1e-5, size_t max_coords_per_input = 0,
                                 uint64_t coord_seed = 12345) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();  // leaf grads accumulate across tapes; start clean
  }

  Tape<double> tape;
  std::vector<std::vector<double>> analytic;
  {
    TapeScope<double> scope(tape);
    Tensor<double> loss = fn();
    tape.backward(loss);
  }
  for (auto& t : inputs) analytic.push_back(t.grad());
  for (auto& t : inputs) t.set_requires_grad(false);

  GradCheckResult res;
  Rng rng(coord_seed);
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = inputs[ti];
    std::vector<size_t> coords;
    if (max_coords_per_input == 0 || t.numel() <= max_coords_per_input) {
      coords.resize(t.numel());
      for (size_t i = 0; i < t.numel(); ++i) coords[i] = i;
    } else {
      for (size_t i = 0; i < max_coords_per_input; ++i)
        coords.push_back(static_cast<size_t>(rng.next_below(t.numel())));
    }
    for (size_t i : coords) {
      double orig = t.data()[i];
      t.data()[i] = orig + h;
      double fp = fn().item();
      t.data()[i] = orig - h;
      double fm = fn().item();
      t.data()[i] = orig;
      double fd = (fp - fm) / (2.0 * h);
      res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic[ti][i], fd));
      ++res.checked;
    }
  }
  return res;
}

inline Tensor<double> random_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Reduces an arbitrary tensor to a scalar with fixed random coefficients so
// every output element influences the loss.
inline Tensor<double> coeff_sum(const Tensor<double>& t, uint64_t seed = 7) {
  Rng rng(seed);
  Tensor<double> c(t.shape());
  for (size_t i = 0; i < c.numel(); ++i) c.data()[i] = rng.uniform(-1.0, 1.0);
  return sum(mul(t, c));
}

}  // namespace xint::testing

#endif
