#pragma once

#include <span>

namespace ragrec {

// Probability clip applied by log_loss.
inline constexpr double kLogLossEps = 1e-7;

// Mann-Whitney AUC; tied positive/negative pairs count 1/2.
// Throws MetricError when only one class is present or lengths differ.
double auc(std::span<const int> labels, std::span<const double> scores);

// Mean binary cross-entropy with probs clipped to [eps, 1 - eps].
double log_loss(std::span<const int> labels, std::span<const double> probs);

// Fraction of samples where (prob > threshold) equals the label.
double accuracy(std::span<const int> labels, std::span<const double> probs, double threshold = 0.5);

}  // namespace ragrec
