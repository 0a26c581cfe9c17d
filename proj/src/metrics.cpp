#include "ragrec/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ragrec/error.h"

namespace ragrec {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw MetricError(std::string(what) + ": labels and scores differ in length");
  if (a == 0) throw MetricError(std::string(what) + ": empty input");
}

}  // namespace

double auc(std::span<const int> labels, std::span<const double> scores) {
  check_lengths(labels.size(), scores.size(), "auc");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] != 0) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("auc is undefined for single-class labels");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double log_loss(std::span<const int> labels, std::span<const double> probs) {
  check_lengths(labels.size(), probs.size(), "log_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probs[i], kLogLossEps, 1.0 - kLogLossEps);
    sum += labels[i] != 0 ? -std::log(p) : -std::log(1.0 - p);
  }
  return sum / static_cast<double>(labels.size());
}

double accuracy(std::span<const int> labels, std::span<const double> probs, double threshold) {
  check_lengths(labels.size(), probs.size(), "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((probs[i] > threshold) == (labels[i] != 0)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace ragrec
