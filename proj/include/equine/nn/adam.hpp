#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "equine/nn/layers.hpp"

namespace equine::nn {

/// Adaptive-moment optimiser over a fixed parameter list. Parameters marked
/// non-learnable are skipped.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
  };

  Adam(std::vector<Parameter<Scalar>*> params, Options options)
      : params_(std::move(params)), opt_(options) {
    for (const auto* p : params_) {
      m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  const std::vector<Parameter<Scalar>*>& parameters() const noexcept { return params_; }
  long steps() const noexcept { return t_; }

  /// `grads` aligns with parameters() and is scaled by `grad_scale` first
  /// (e.g. 1/batch).
  void step(std::span<const Matrix<Scalar>> grads, double grad_scale = 1.0) {
    ++t_;
    const double b1 = opt_.beta1;
    const double b2 = opt_.beta2;
    const double alpha = opt_.learning_rate * std::sqrt(1.0 - std::pow(b2, static_cast<double>(t_))) /
                         (1.0 - std::pow(b1, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i]->learnable) continue;
      const auto g = (grads[i].array() * static_cast<Scalar>(grad_scale)).eval();
      m_[i].array() = static_cast<Scalar>(b1) * m_[i].array() + static_cast<Scalar>(1.0 - b1) * g;
      v_[i].array() = static_cast<Scalar>(b2) * v_[i].array() + static_cast<Scalar>(1.0 - b2) * g.square();
      params_[i]->value.array() -= static_cast<Scalar>(alpha) * m_[i].array() /
                                   (v_[i].array().sqrt() + static_cast<Scalar>(opt_.epsilon));
    }
  }

 private:
  std::vector<Parameter<Scalar>*> params_;
  Options opt_;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
  long t_ = 0;
};

}  // namespace equine::nn
