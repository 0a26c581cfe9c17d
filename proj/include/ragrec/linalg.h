#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

#include "ragrec/store.h"

namespace ragrec {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline EmbeddingStore matrix_to_store(const Matrix& m, std::uint64_t template_hash = 0) {
  EmbeddingStore s(static_cast<std::uint32_t>(m.cols()), template_hash);
  s.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) s.data.push_back(static_cast<float>(m(r, c)));
  }
  return s;
}

inline Matrix store_to_matrix(const EmbeddingStore& s) {
  Matrix m(static_cast<Eigen::Index>(s.count()), static_cast<Eigen::Index>(s.dim));
  for (std::size_t r = 0; r < s.count(); ++r) {
    auto row = s.row(r);
    for (std::size_t c = 0; c < s.dim; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
    }
  }
  return m;
}

// First/second-moment state for one parameter tensor.
struct AdamState {
  Matrix m;
  Matrix v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void update(Matrix& param, const Matrix& grad, double lr) {
    if (m.size() == 0) {
      m = Matrix::Zero(param.rows(), param.cols());
      v = Matrix::Zero(param.rows(), param.cols());
    }
    ++step;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace ragrec
