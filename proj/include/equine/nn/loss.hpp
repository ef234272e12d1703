#pragma once

#include <cmath>

#include "equine/nn/tensor.hpp"

namespace equine::nn {

/// Numerically stable softmax, evaluated in double precision.
template <typename Derived>
Eigen::VectorXd softmax(const Eigen::MatrixBase<Derived>& logits) {
  Eigen::VectorXd z = logits.template cast<double>();
  z.array() -= z.maxCoeff();
  z = z.array().exp().matrix();
  return z / z.sum();
}

template <typename Scalar>
struct LossGrad {
  double loss = 0.0;
  Matrix<Scalar> grad;
};

/// Cross-entropy of softmax(logits) against class `target`; logits is a
/// column vector.
template <typename Scalar>
LossGrad<Scalar> softmax_cross_entropy(const Matrix<Scalar>& logits, int target) {
  const Eigen::VectorXd p = softmax(logits.col(0));
  LossGrad<Scalar> out;
  out.loss = -std::log(std::max(p(target), 1e-300));
  Eigen::VectorXd g = p;
  g(target) -= 1.0;
  out.grad = g.cast<Scalar>();
  return out;
}

/// Binary cross-entropy on a raw logit. Returns {loss, dloss/dlogit}.
inline std::pair<double, double> sigmoid_cross_entropy(double logit, double target) {
  const double loss = std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
  const double sig = 1.0 / (1.0 + std::exp(-logit));
  return {loss, sig - target};
}

/// Huber-style smooth L1 with transition point `beta`. Returns {loss, dloss/ddiff}.
inline std::pair<double, double> smooth_l1(double diff, double beta = 1.0) {
  const double a = std::abs(diff);
  if (a < beta) return {0.5 * diff * diff / beta, diff / beta};
  return {a - 0.5 * beta, diff > 0 ? 1.0 : -1.0};
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace equine::nn
