// SPDX-License-Identifier: Apache-2.0
#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "core/error.hpp"

namespace xint {

size_t argmax_row(const double* row, size_t classes) {
  size_t best = 0;
  for (size_t j = 1; j < classes; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

double accuracy(const std::vector<double>& logits, size_t classes,
                const std::vector<int>& labels) {
  size_t n = labels.size();
  if (n == 0) throw ValidationError("accuracy: undefined on an empty set");
  if (logits.size() != n * classes)
    throw ValidationError("accuracy: logit count does not match label count");
  size_t correct = 0;
  for (size_t i = 0; i < n; ++i)
    if (argmax_row(logits.data() + i * classes, classes) == static_cast<size_t>(labels[i]))
      ++correct;
  return static_cast<double>(correct) / static_cast<double>(n);
}

double precision(const std::vector<double>& logits, size_t classes,
                 const std::vector<int>& labels, int positive_class) {
  size_t n = labels.size();
  if (n == 0) throw ValidationError("precision: undefined on an empty set");
  if (logits.size() != n * classes)
    throw ValidationError("precision: logit count does not match label count");
  size_t tp = 0, fp = 0;
  for (size_t i = 0; i < n; ++i) {
    if (argmax_row(logits.data() + i * classes, classes) != static_cast<size_t>(positive_class))
      continue;
    if (labels[i] == positive_class)
      ++tp;
    else
      ++fp;
  }
  if (tp + fp == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::vector<RocPoint> roc_points(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
  size_t n = labels.size();
  if (scores.size() != n) throw ValidationError("roc: score count does not match label count");
  size_t pos = 0, neg = 0;
  for (int y : labels) (y == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw ValidationError("roc: both classes must be present (pos=" + std::to_string(pos) +
                          ", neg=" + std::to_string(neg) + ")");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> pts;
  pts.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  size_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < n) {
    double s = scores[order[i]];
    // consume the whole tie group at threshold s
    while (i < n && scores[order[i]] == s) {
      if (labels[order[i]] == 1)
        ++tp;
      else
        ++fp;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                   static_cast<double>(tp) / static_cast<double>(pos), s});
  }
  return pts;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  auto pts = roc_points(scores, labels);
  double area = 0.0;
  for (size_t k = 1; k < pts.size(); ++k)
    area += (pts[k].fpr - pts[k - 1].fpr) * (pts[k].tpr + pts[k - 1].tpr) / 2.0;
  return area;
}

}  // namespace xint
