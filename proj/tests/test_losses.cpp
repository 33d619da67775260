// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "core/loss.hpp"
#include "core/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace xint;
using xint::testing::gradcheck;
using xint::testing::random_tensor;

TEST_CASE("weighted cross entropy: uniform logits give ln 2") {
  auto logits = Tensor<double>::from({1, 2}, {0.0, 0.0});
  auto loss = weighted_cross_entropy(logits, {1}, ClassWeights{{1.0, 1.0}});
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("weighted cross entropy: confident correct prediction is ~0") {
  auto logits = Tensor<double>::from({1, 2}, {100.0, -100.0});
  auto loss = weighted_cross_entropy(logits, {0}, ClassWeights{{1.0, 1.0}});
  CHECK(loss.item() < 1e-12);
  CHECK(std::isfinite(loss.item()));
}

TEST_CASE("weighted cross entropy matches a hand-computed weighted mean") {
  // Independent scalar evaluation of the weight-normalized mean.
  ClassWeights w{{0.8247, 0.1753}};
  std::vector<double> raw = {0.3, -0.2, 1.1, 0.4, -0.7, 0.9};
  std::vector<int> labels = {0, 1, 0};
  auto logits = Tensor<double>::from({3, 2}, raw);

  double num = 0, den = 0;
  for (size_t i = 0; i < 3; ++i) {
    double a = raw[2 * i], b = raw[2 * i + 1];
    double mx = std::max(a, b);
    double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    double chosen = labels[i] == 0 ? a : b;
    double wy = w.w[static_cast<size_t>(labels[i])];
    num += wy * (lse - chosen);
    den += wy;
  }
  auto loss = weighted_cross_entropy(logits, labels, w);
  CHECK(loss.item() == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("weighted cross entropy with uniform weights equals the unweighted mean") {
  Rng rng(31);
  auto logits = random_tensor({8, 2}, rng, -3.0, 3.0);
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) labels.push_back(static_cast<int>(rng.next_below(2)));
  double weighted = weighted_cross_entropy(logits, labels, ClassWeights{{1.0, 1.0}}).item();
  double plain = 0;
  for (size_t i = 0; i < 8; ++i) {
    double a = logits.data()[2 * i], b = logits.data()[2 * i + 1];
    double mx = std::max(a, b);
    double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    plain += lse - (labels[i] == 0 ? a : b);
  }
  CHECK(weighted == doctest::Approx(plain / 8.0).epsilon(1e-12));
}

TEST_CASE("weighted cross entropy rejects out-of-range labels") {
  auto logits = Tensor<double>::zeros({1, 2});
  CHECK_THROWS_AS(weighted_cross_entropy(logits, {2}, ClassWeights{{1.0, 1.0}}), DataError);
  CHECK_THROWS_AS(weighted_cross_entropy(logits, {-1}, ClassWeights{{1.0, 1.0}}), DataError);
}

TEST_CASE("weighted cross entropy gradient matches finite differences") {
  Rng rng(32);
  auto logits = random_tensor({5, 2}, rng, -2.0, 2.0);
  std::vector<int> labels = {0, 1, 1, 0, 1};
  ClassWeights w{{1760.0 / 2134.0, 1.0 - 1760.0 / 2134.0}};
  auto res = gradcheck({logits}, [&] { return weighted_cross_entropy(logits, labels, w); });
  CHECK(res.max_rel_err < 1e-8);
}

TEST_CASE("binary cross entropy: maximum-entropy prediction gives ln 2") {
  auto p = Tensor<double>::full({4, 3}, 0.5);
  Rng rng(33);
  auto t = random_tensor({4, 3}, rng, 0.0, 1.0);
  CHECK(binary_cross_entropy(p, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("binary cross entropy hand evaluation at p=t=0.9") {
  auto p = Tensor<double>::full({1}, 0.9);
  auto t = Tensor<double>::full({1}, 0.9);
  double expect = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  CHECK(binary_cross_entropy(p, t).item() == doctest::Approx(expect).epsilon(1e-9));
  CHECK(binary_cross_entropy(p, t).item() == doctest::Approx(0.325083).epsilon(1e-5));
}

TEST_CASE("binary cross entropy: fully masked input is defined as 0") {
  auto p = Tensor<double>::full({2, 2}, 0.3);
  auto t = Tensor<double>::full({2, 2}, 1.0);
  auto m = Tensor<double>::zeros({2, 2});
  CHECK(binary_cross_entropy(p, t, &m).item() == 0.0);
}

TEST_CASE("binary cross entropy ignores masked entries") {
  auto p = Tensor<double>::from({2}, {0.8, 0.123});
  auto t = Tensor<double>::from({2}, {1.0, 0.9});
  auto m = Tensor<double>::from({2}, {1.0, 0.0});
  double expect = -std::log(0.8);
  CHECK(binary_cross_entropy(p, t, &m).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("binary cross entropy gradient matches finite differences") {
  Rng rng(34);
  auto p = random_tensor({3, 4}, rng, 0.05, 0.95);
  auto t = random_tensor({3, 4}, rng, 0.0, 1.0);
  auto m = Tensor<double>::full({3, 4}, 1.0);
  for (size_t i = 0; i < 3; ++i) m.data()[i * 4] = 0.0;
  auto res = gradcheck({p}, [&] { return binary_cross_entropy(p, t, &m); });
  CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("combined loss: lambda=0 collapses to the crossing loss exactly") {
  auto cross = Tensor<double>::scalar(0.7312);
  auto pose = Tensor<double>::scalar(0.5);
  auto speed = Tensor<double>::scalar(0.3);
  auto b = combined_loss(cross, pose, speed, 0.0);
  CHECK(b.total.item() == cross.item());
}

TEST_CASE("combined loss arithmetic") {
  auto b = combined_loss(Tensor<double>::scalar(0.7), Tensor<double>::scalar(0.5),
                         Tensor<double>::scalar(0.3), 0.01);
  CHECK(b.total.item() == doctest::Approx(0.708).epsilon(1e-12));
  // exact identity in the documented association
  CHECK(b.total.item() == (0.7 + 0.01 * 0.5) + 0.01 * 0.3);
}

TEST_CASE("combined loss rejects negative lambda") {
  auto s = Tensor<double>::scalar(1.0);
  CHECK_THROWS_AS(combined_loss(s, s, s, -0.1), ValidationError);
}

TEST_CASE("lambda=0 sends exactly zero gradient into auxiliary terms") {
  Rng rng(35);
  auto shared = random_tensor({4}, rng);
  auto aux_param = random_tensor({4}, rng);
  shared.set_requires_grad(true);
  aux_param.set_requires_grad(true);

  auto run = [&](double lambda, bool include_aux) {
    shared.zero_grad();
    aux_param.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto cross = sum(mul(shared, shared));
    auto pose = include_aux ? sum(mul(shared, aux_param)) : Tensor<double>::scalar(0.0);
    auto speed = Tensor<double>::scalar(0.0);
    auto b = combined_loss(cross, pose, speed, lambda);
    tape.backward(b.total);
    return std::make_pair(shared.grad(), aux_param.grad());
  };

  auto [g_shared_l0, g_aux_l0] = run(0.0, true);
  for (double g : g_aux_l0) CHECK(g == 0.0);
  auto [g_shared_cross_only, unused] = run(0.0, false);
  for (size_t i = 0; i < 4; ++i) CHECK(g_shared_l0[i] == g_shared_cross_only[i]);
}

TEST_CASE("class weights reproduce the configured imbalance ratios") {
  auto w1 = compute_class_weights(1760, 374);
  CHECK(std::abs(w1.w[0] - 1760.0 / 2134.0) < 1e-9);
  CHECK(std::abs(w1.w[1] - (1.0 - 1760.0 / 2134.0)) < 1e-9);

  auto w2 = compute_class_weights(1760, 6853);
  CHECK(std::abs(w2.w[0] - 1760.0 / 8613.0) < 1e-9);
  CHECK(std::abs(w2.w[1] - (1.0 - 1760.0 / 8613.0)) < 1e-9);

  auto w3 = compute_class_weights(77, 77);
  CHECK(w3.w[0] == doctest::Approx(0.5));
  CHECK(w3.w[1] == doctest::Approx(0.5));

  CHECK_THROWS_AS(compute_class_weights(0, 0), DataError);
}

TEST_CASE("accuracy extremes and enumeration") {
  std::vector<double> logits = {2, 1, 0, 3};
  CHECK(accuracy(logits, 2, {0, 1}) == 1.0);
  CHECK(accuracy(logits, 2, {1, 0}) == 0.0);
  CHECK_THROWS_AS(accuracy({}, 2, {}), ValidationError);
  // argmax ties break toward class 0
  CHECK(accuracy({0.5, 0.5}, 2, {0}) == 1.0);
  CHECK(accuracy({0.5, 0.5}, 2, {1}) == 0.0);
}

TEST_CASE("accuracy matches a brute-force count on random instances") {
  Rng rng(36);
  std::vector<double> logits(2000);
  std::vector<int> labels(1000);
  for (auto& v : logits) v = rng.uniform(-1, 1);
  for (auto& y : labels) y = static_cast<int>(rng.next_below(2));
  size_t correct = 0;
  for (size_t i = 0; i < 1000; ++i) {
    int pred = logits[2 * i + 1] > logits[2 * i] ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  CHECK(accuracy(logits, 2, labels) == doctest::Approx(correct / 1000.0));
}

TEST_CASE("precision definition and undefined sentinel") {
  // predictions: +,+,+,- with labels +,+,-,+  ->  TP=2 FP=1
  std::vector<double> logits = {0, 1, 0, 1, 0, 1, 1, 0};
  CHECK(precision(logits, 2, {1, 1, 0, 1}) == doctest::Approx(2.0 / 3.0));

  std::vector<double> all_neg = {1, 0, 1, 0};
  CHECK(std::isnan(precision(all_neg, 2, {1, 0})));
}

TEST_CASE("precision matches a confusion-matrix oracle on random data") {
  Rng rng(37);
  std::vector<double> logits(400);
  std::vector<int> labels(200);
  for (auto& v : logits) v = rng.uniform(-1, 1);
  for (auto& y : labels) y = static_cast<int>(rng.next_below(2));
  size_t tp = 0, fp = 0;
  for (size_t i = 0; i < 200; ++i) {
    bool pred_pos = logits[2 * i + 1] > logits[2 * i];
    if (pred_pos && labels[i] == 1) ++tp;
    if (pred_pos && labels[i] == 0) ++fp;
  }
  double got = precision(logits, 2, labels);
  if (tp + fp == 0)
    CHECK(std::isnan(got));
  else
    CHECK(got == doctest::Approx(static_cast<double>(tp) / (tp + fp)));
}

namespace {
// Mann-Whitney statistic by exhaustive pairwise comparison.
double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  size_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i)
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  return wins / static_cast<double>(pairs);
}
}  // namespace

TEST_CASE("roc_auc trivial rankings") {
  CHECK(roc_auc({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), ValidationError);
}

TEST_CASE("roc_auc equals the pairwise oracle on random sets up to 100") {
  Rng rng(38);
  for (int trial = 0; trial < 40; ++trial) {
    size_t n = 2 + rng.next_below(99);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool tie_heavy = trial % 2 == 0;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = tie_heavy ? std::floor(rng.uniform(0, 5)) / 5.0 : rng.uniform(0, 1);
      labels[i] = static_cast<int>(rng.next_below(2));
    }
    // force both classes present
    labels[0] = 1;
    labels[n - 1] = 0;
    CHECK(std::abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-12);
  }
}

TEST_CASE("roc_auc score negation flips the area when there are no ties") {
  Rng rng(39);
  size_t n = 60;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform(0, 1) + 1e-9 * static_cast<double>(i);  // distinct
    labels[i] = static_cast<int>(rng.next_below(2));
  }
  labels[0] = 1;
  labels[1] = 0;
  std::vector<double> neg(n);
  for (size_t i = 0; i < n; ++i) neg[i] = -scores[i];
  CHECK(roc_auc(scores, labels) + roc_auc(neg, labels) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metrics are invariant under simultaneous permutation") {
  Rng rng(40);
  size_t n = 50;
  std::vector<double> scores(n), logits(2 * n);
  std::vector<int> labels(n);
  for (size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform(0, 1);
    logits[2 * i] = 1 - scores[i];
    logits[2 * i + 1] = scores[i];
    labels[i] = static_cast<int>(rng.next_below(2));
  }
  labels[0] = 1;
  labels[1] = 0;
  std::vector<size_t> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<double> ps(n), pl(2 * n);
  std::vector<int> py(n);
  for (size_t i = 0; i < n; ++i) {
    ps[i] = scores[perm[i]];
    pl[2 * i] = logits[2 * perm[i]];
    pl[2 * i + 1] = logits[2 * perm[i] + 1];
    py[i] = labels[perm[i]];
  }
  CHECK(accuracy(logits, 2, labels) == accuracy(pl, 2, py));
  CHECK(roc_auc(scores, labels) == doctest::Approx(roc_auc(ps, py)).epsilon(1e-15));
  double p1 = precision(logits, 2, labels), p2 = precision(pl, 2, py);
  CHECK((std::isnan(p1) ? std::isnan(p2) : p1 == doctest::Approx(p2)));
}

TEST_CASE("roc points start at (0,0) and end at (1,1)") {
  Rng rng(41);
  std::vector<double> scores(30);
  std::vector<int> labels(30);
  for (size_t i = 0; i < 30; ++i) {
    scores[i] = rng.uniform(0, 1);
    labels[i] = static_cast<int>(rng.next_below(2));
  }
  labels[0] = 1;
  labels[1] = 0;
  auto pts = roc_points(scores, labels);
  CHECK(pts.front().fpr == 0.0);
  CHECK(pts.front().tpr == 0.0);
  CHECK(pts.back().fpr == 1.0);
  CHECK(pts.back().tpr == 1.0);
}
