// SPDX-License-Identifier: Apache-2.0
#ifndef XINT_CORE_METRICS_HPP
#define XINT_CORE_METRICS_HPP

#include <cstddef>
#include <vector>

namespace xint {

// Index of the row maximum; ties resolve to the lowest index.
size_t argmax_row(const double* row, size_t classes);

// Fraction of rows whose argmax equals the label. logits is row-major [n, classes].
double accuracy(const std::vector<double>& logits, size_t classes, const std::vector<int>& labels);

// TP/(TP+FP) for `positive_class`; NaN when nothing is predicted positive.
double precision(const std::vector<double>& logits, size_t classes, const std::vector<int>& labels,
                 int positive_class = 1);

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;
};

// Full threshold sweep: one point per distinct score, ties grouped, plus the
// (0,0) and (1,1) endpoints. Scores are "probability of the positive class".
std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                 const std::vector<int>& labels);

// Trapezoidal area under the sweep; equals the pairwise ranking probability
// with ties counted 1/2. NaN-free by construction but requires both classes
// to be present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace xint

#endif
