#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ragrec/error.h"
#include "ragrec/metrics.h"
#include "ragrec/rng.h"

namespace ragrec {
namespace {

double pairwise_auc(const std::vector<int>& y, const std::vector<double>& s) {
  double hits = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return hits / pairs;
}

struct Instance {
  std::vector<int> labels;
  std::vector<double> probs;
};

Instance random_instance(Rng& rng) {
  Instance x;
  const std::size_t n = 2 + rng.below(199);
  for (std::size_t i = 0; i < n; ++i) {
    x.labels.push_back(static_cast<int>(rng.below(2)));
    // Coarse values force ties; exact 0 and 1 exercise the clip.
    x.probs.push_back(rng.below(3) == 0 ? static_cast<double>(rng.below(11)) / 10.0 : rng.uniform());
  }
  x.labels[0] = 1;
  x.labels[1] = 0;
  return x;
}

TEST(Auc, ClosedForms) {
  EXPECT_EQ(auc(std::vector<int>{1, 0}, std::vector<double>{0.9, 0.1}), 1.0);
  EXPECT_EQ(auc(std::vector<int>{1, 0, 1, 0}, std::vector<double>{0.8, 0.7, 0.6, 0.5}), 0.75);
  EXPECT_EQ(auc(std::vector<int>{1, 0, 0, 1, 1}, std::vector<double>(5, 0.3)), 0.5);
  EXPECT_EQ(auc(std::vector<int>{0, 1}, std::vector<double>{0.9, 0.1}), 0.0);
}

TEST(Auc, Errors) {
  EXPECT_THROW(auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}), MetricError);
  EXPECT_THROW(auc(std::vector<int>{0}, std::vector<double>{0.1}), MetricError);
  EXPECT_THROW(auc(std::vector<int>{1, 0}, std::vector<double>{0.1}), MetricError);
  EXPECT_THROW(auc(std::vector<int>{}, std::vector<double>{}), MetricError);
}

TEST(Auc, MatchesPairwiseOracle) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    auto x = random_instance(rng);
    EXPECT_NEAR(auc(x.labels, x.probs), pairwise_auc(x.labels, x.probs), 1e-12);
  }
}

TEST(Auc, InvariantUnderIncreasingTransform) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    auto x = random_instance(rng);
    std::vector<double> transformed;
    for (double p : x.probs) transformed.push_back(std::exp(3.0 * p) - 7.0);
    EXPECT_NEAR(auc(x.labels, transformed), auc(x.labels, x.probs), 1e-12);
  }
}

TEST(LogLoss, ClosedForms) {
  EXPECT_NEAR(log_loss(std::vector<int>{1}, std::vector<double>{1.0}), 0.0, 1e-6);
  EXPECT_NEAR(log_loss(std::vector<int>{1, 0}, std::vector<double>{0.5, 0.5}), std::log(2.0), 1e-15);
  EXPECT_NEAR(log_loss(std::vector<int>{1}, std::vector<double>{0.0}), -std::log(1e-7), 1e-9);
  EXPECT_NEAR(log_loss(std::vector<int>{1}, std::vector<double>{0.0}), 16.118, 1e-3);
  EXPECT_THROW(log_loss(std::vector<int>{1}, std::vector<double>{}), MetricError);
}

TEST(LogLoss, MatchesDirectFormula) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    auto x = random_instance(rng);
    double sum = 0.0;
    for (std::size_t i = 0; i < x.labels.size(); ++i) {
      const double p = std::min(std::max(x.probs[i], 1e-7), 1.0 - 1e-7);
      sum += -(x.labels[i] * std::log(p) + (1 - x.labels[i]) * std::log(1.0 - p));
    }
    const double expect = sum / static_cast<double>(x.labels.size());
    const double got = log_loss(x.labels, x.probs);
    EXPECT_NEAR(got, expect, 1e-12);
    EXPECT_GE(got, 0.0);
  }
}

TEST(Accuracy, ClosedForms) {
  EXPECT_EQ(accuracy(std::vector<int>{1, 0}, std::vector<double>{0.9, 0.1}), 1.0);
  EXPECT_EQ(accuracy(std::vector<int>{1, 0}, std::vector<double>{0.1, 0.9}), 0.0);
  EXPECT_EQ(accuracy(std::vector<int>{0}, std::vector<double>{0.5}), 1.0);
  EXPECT_EQ(accuracy(std::vector<int>{1}, std::vector<double>{0.5}), 0.0);
  EXPECT_EQ(accuracy(std::vector<int>{1}, std::vector<double>{0.5}, 0.4), 1.0);
}

TEST(Accuracy, MatchesDirectFormula) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    auto x = random_instance(rng);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < x.labels.size(); ++i) hit += (x.probs[i] > 0.5 ? 1 : 0) == x.labels[i];
    const double got = accuracy(x.labels, x.probs);
    EXPECT_NEAR(got, static_cast<double>(hit) / static_cast<double>(x.labels.size()), 1e-12);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

}  // namespace
}  // namespace ragrec
