#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "equine/nn/tensor.hpp"

namespace equine::nn {

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  /// False for running statistics, which are stored but never optimised.
  bool learnable = true;
};

/// Whatever a layer needs from its forward pass to run backward. Composite
/// layers keep one child context per sublayer.
template <typename Scalar>
struct Context {
  std::vector<Tensor<Scalar>> tensors;
  std::vector<Matrix<Scalar>> matrices;
  std::vector<Eigen::Index> indices;
  std::vector<Context> children;
};

template <typename Scalar>
using GradSpan = std::span<Matrix<Scalar>>;

/// A differentiable map between feature maps. Layers are immutable during
/// forward/backward: passes that need saved state take an explicit Context
/// and gradients land in caller-owned buffers, so one layer can serve
/// concurrent inference calls.
template <typename Scalar>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const noexcept { return name_; }
  virtual std::string_view kind() const noexcept = 0;
  virtual Shape output_shape(const Shape& input) const = 0;

  /// `ctx` may be null for inference.
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const = 0;

  /// Returns dL/dx and accumulates dL/dparam into `grads`, which is aligned
  /// with parameters().
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                                  GradSpan<Scalar> grads) const = 0;

  /// Forward pass that also re-estimates normalisation statistics from `x`.
  virtual Tensor<Scalar> calibrate(const Tensor<Scalar>& x) { return forward(x, nullptr); }

  virtual std::unique_ptr<Layer> clone() const = 0;

  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> out;
    collect(out);
    return out;
  }
  std::vector<const Parameter<Scalar>*> parameters() const {
    std::vector<Parameter<Scalar>*> out;
    const_cast<Layer*>(this)->collect(out);
    return {out.begin(), out.end()};
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 protected:
  virtual void collect(std::vector<Parameter<Scalar>*>& /*out*/) {}

 private:
  std::string name_;
};

struct Padding {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;

  static Padding uniform(int p) { return {p, p, p, p}; }

  /// TensorFlow "same" padding: output = ceil(input / stride), the odd pixel
  /// of padding goes to the bottom/right.
  static Padding same(int in_h, int in_w, int kernel, int stride) {
    auto split = [&](int in) {
      const int out = (in + stride - 1) / stride;
      const int total = std::max((out - 1) * stride + kernel - in, 0);
      return std::pair{total / 2, total - total / 2};
    };
    auto [t, b] = split(in_h);
    auto [l, r] = split(in_w);
    return {t, l, b, r};
  }
};

namespace detail {

inline int pooled_extent(int in, int pad_a, int pad_b, int kernel, int stride) {
  const int span = in + pad_a + pad_b - kernel;
  if (span < 0) throw std::invalid_argument("input smaller than kernel");
  return span / stride + 1;
}

/// Rows: output pixels; columns: (c, ky, kx) patch entries.
template <typename Scalar>
Matrix<Scalar> im2col_t(const Tensor<Scalar>& x, int kh, int kw, int stride, const Padding& pad,
                        const Shape& out) {
  const Matrix<Scalar> xt = x.data().transpose();  // pixels x channels
  const int in_h = x.height();
  const int in_w = x.width();
  Matrix<Scalar> cols(out.pixels(), static_cast<Eigen::Index>(x.channels()) * kh * kw);
  for (int c = 0; c < x.channels(); ++c) {
    const Scalar* src = xt.col(c).data();
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        Scalar* dst = cols.col((static_cast<Eigen::Index>(c) * kh + ky) * kw + kx).data();
        for (int oy = 0; oy < out.height; ++oy) {
          const int iy = oy * stride - pad.top + ky;
          Scalar* row = dst + static_cast<Eigen::Index>(oy) * out.width;
          if (iy < 0 || iy >= in_h) {
            std::fill(row, row + out.width, Scalar(0));
            continue;
          }
          const Scalar* src_row = src + static_cast<Eigen::Index>(iy) * in_w;
          for (int ox = 0; ox < out.width; ++ox) {
            const int ix = ox * stride - pad.left + kx;
            row[ox] = (ix < 0 || ix >= in_w) ? Scalar(0) : src_row[ix];
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
Tensor<Scalar> col2im_t(const Matrix<Scalar>& cols, const Shape& in, int kh, int kw, int stride,
                        const Padding& pad, const Shape& out) {
  Matrix<Scalar> xt = Matrix<Scalar>::Zero(in.pixels(), in.channels);
  for (int c = 0; c < in.channels; ++c) {
    Scalar* dst = xt.col(c).data();
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Scalar* src = cols.col((static_cast<Eigen::Index>(c) * kh + ky) * kw + kx).data();
        for (int oy = 0; oy < out.height; ++oy) {
          const int iy = oy * stride - pad.top + ky;
          if (iy < 0 || iy >= in.height) continue;
          const Scalar* row = src + static_cast<Eigen::Index>(oy) * out.width;
          Scalar* dst_row = dst + static_cast<Eigen::Index>(iy) * in.width;
          for (int ox = 0; ox < out.width; ++ox) {
            const int ix = ox * stride - pad.left + kx;
            if (ix >= 0 && ix < in.width) dst_row[ix] += row[ox];
          }
        }
      }
    }
  }
  return Tensor<Scalar>(in, xt.transpose());
}

}  // namespace detail

/// 2-D convolution. Kernel layout: out x (in * kh * kw), patch index
/// (c * kh + ky) * kw + kx.
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
 public:
  struct Options {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    Padding padding{};
    bool bias = true;
  };

  Conv2d(std::string name, const Options& opt) : Layer<Scalar>(std::move(name)), opt_(opt) {
    if (opt.in_channels <= 0 || opt.out_channels <= 0 || opt.kernel <= 0 || opt.stride <= 0) {
      throw std::invalid_argument("Conv2d: invalid options");
    }
    kernel_ = {this->name() + "/kernel",
               Matrix<Scalar>::Zero(opt.out_channels,
                                    static_cast<Eigen::Index>(opt.in_channels) * opt.kernel * opt.kernel)};
    if (opt.bias) bias_ = {this->name() + "/bias", Matrix<Scalar>::Zero(opt.out_channels, 1)};
  }

  std::string_view kind() const noexcept override { return "conv2d"; }
  const Options& options() const noexcept { return opt_; }
  Parameter<Scalar>& kernel() noexcept { return kernel_; }
  Parameter<Scalar>& bias() noexcept { return bias_; }
  int fan_in() const noexcept { return opt_.in_channels * opt_.kernel * opt_.kernel; }

  Shape output_shape(const Shape& in) const override {
    if (in.channels != opt_.in_channels) {
      throw std::invalid_argument(this->name() + ": expected " + std::to_string(opt_.in_channels) +
                                  " input channels, got " + std::to_string(in.channels));
    }
    const auto& p = opt_.padding;
    return {opt_.out_channels, detail::pooled_extent(in.height, p.top, p.bottom, opt_.kernel, opt_.stride),
            detail::pooled_extent(in.width, p.left, p.right, opt_.kernel, opt_.stride)};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    const Shape out_shape = output_shape(x.shape());
    Tensor<Scalar> out(out_shape, Matrix<Scalar>());
    if (pointwise()) {
      out.data().noalias() = kernel_.value * x.data();
      if (ctx) ctx->tensors = {x};
    } else {
      Matrix<Scalar> cols = detail::im2col_t(x, opt_.kernel, opt_.kernel, opt_.stride, opt_.padding, out_shape);
      out.data().noalias() = kernel_.value * cols.transpose();
      if (ctx) {
        ctx->matrices = {std::move(cols)};
        ctx->indices = {x.channels(), x.height(), x.width()};
      }
    }
    if (opt_.bias) out.data().colwise() += bias_.value.col(0);
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar> grads) const override {
    if (opt_.bias) grads[1].col(0) += grad.data().rowwise().sum();
    if (pointwise()) {
      const auto& x = ctx.tensors.at(0);
      grads[0].noalias() += grad.data() * x.data().transpose();
      return Tensor<Scalar>(x.shape(), kernel_.value.transpose() * grad.data());
    }
    const Matrix<Scalar>& cols = ctx.matrices.at(0);
    grads[0].noalias() += grad.data() * cols;
    Matrix<Scalar> dcols = grad.data().transpose() * kernel_.value;
    const Shape in{static_cast<int>(ctx.indices[0]), static_cast<int>(ctx.indices[1]),
                   static_cast<int>(ctx.indices[2])};
    return detail::col2im_t(dcols, in, opt_.kernel, opt_.kernel, opt_.stride, opt_.padding, grad.shape());
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv2d>(*this); }

 protected:
  void collect(std::vector<Parameter<Scalar>*>& out) override {
    out.push_back(&kernel_);
    if (opt_.bias) out.push_back(&bias_);
  }

 private:
  bool pointwise() const noexcept {
    const auto& p = opt_.padding;
    return opt_.kernel == 1 && opt_.stride == 1 && p.top == 0 && p.left == 0 && p.bottom == 0 &&
           p.right == 0;
  }

  Options opt_;
  Parameter<Scalar> kernel_;
  Parameter<Scalar> bias_;
};

/// Per-channel spatial convolution without bias. Kernel: channels x (k*k).
template <typename Scalar>
class DepthwiseConv2d final : public Layer<Scalar> {
 public:
  DepthwiseConv2d(std::string name, int channels, int kernel, int stride, Padding padding)
      : Layer<Scalar>(std::move(name)), channels_(channels), k_(kernel), stride_(stride), pad_(padding) {
    kernel_ = {this->name() + "/depthwise_kernel",
               Matrix<Scalar>::Zero(channels, static_cast<Eigen::Index>(kernel) * kernel)};
  }

  std::string_view kind() const noexcept override { return "depthwise_conv2d"; }
  Parameter<Scalar>& kernel() noexcept { return kernel_; }
  int fan_in() const noexcept { return k_ * k_; }

  Shape output_shape(const Shape& in) const override {
    if (in.channels != channels_) throw std::invalid_argument(this->name() + ": channel mismatch");
    return {channels_, detail::pooled_extent(in.height, pad_.top, pad_.bottom, k_, stride_),
            detail::pooled_extent(in.width, pad_.left, pad_.right, k_, stride_)};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    const Shape os = output_shape(x.shape());
    const Matrix<Scalar> xt = x.data().transpose();
    Matrix<Scalar> ot = Matrix<Scalar>::Zero(os.pixels(), channels_);
    for (int c = 0; c < channels_; ++c) {
      const Scalar* src = xt.col(c).data();
      Scalar* dst = ot.col(c).data();
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const Scalar w = kernel_.value(c, ky * k_ + kx);
          for (int oy = 0; oy < os.height; ++oy) {
            const int iy = oy * stride_ - pad_.top + ky;
            if (iy < 0 || iy >= x.height()) continue;
            for (int ox = 0; ox < os.width; ++ox) {
              const int ix = ox * stride_ - pad_.left + kx;
              if (ix < 0 || ix >= x.width()) continue;
              dst[static_cast<Eigen::Index>(oy) * os.width + ox] +=
                  w * src[static_cast<Eigen::Index>(iy) * x.width() + ix];
            }
          }
        }
      }
    }
    if (ctx) ctx->tensors = {x};
    return Tensor<Scalar>(os, ot.transpose());
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar> grads) const override {
    const auto& x = ctx.tensors.at(0);
    const Shape& os = grad.shape();
    const Matrix<Scalar> xt = x.data().transpose();
    const Matrix<Scalar> gt = grad.data().transpose();
    Matrix<Scalar> dxt = Matrix<Scalar>::Zero(x.shape().pixels(), channels_);
    for (int c = 0; c < channels_; ++c) {
      const Scalar* src = xt.col(c).data();
      const Scalar* g = gt.col(c).data();
      Scalar* dsrc = dxt.col(c).data();
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const Scalar w = kernel_.value(c, ky * k_ + kx);
          Scalar dw = 0;
          for (int oy = 0; oy < os.height; ++oy) {
            const int iy = oy * stride_ - pad_.top + ky;
            if (iy < 0 || iy >= x.height()) continue;
            for (int ox = 0; ox < os.width; ++ox) {
              const int ix = ox * stride_ - pad_.left + kx;
              if (ix < 0 || ix >= x.width()) continue;
              const Eigen::Index in_idx = static_cast<Eigen::Index>(iy) * x.width() + ix;
              const Scalar go = g[static_cast<Eigen::Index>(oy) * os.width + ox];
              dw += go * src[in_idx];
              dsrc[in_idx] += go * w;
            }
          }
          grads[0](c, ky * k_ + kx) += dw;
        }
      }
    }
    return Tensor<Scalar>(x.shape(), dxt.transpose());
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<DepthwiseConv2d>(*this); }

 protected:
  void collect(std::vector<Parameter<Scalar>*>& out) override { out.push_back(&kernel_); }

 private:
  int channels_;
  int k_;
  int stride_;
  Padding pad_;
  Parameter<Scalar> kernel_;
};

/// Fully connected layer applied independently to every pixel column, so a
/// flattened vector (N x 1 x 1) and a batch laid out as width both work.
template <typename Scalar>
class Dense final : public Layer<Scalar> {
 public:
  Dense(std::string name, int in, int out) : Layer<Scalar>(std::move(name)), in_(in), out_(out) {
    weight_ = {this->name() + "/kernel", Matrix<Scalar>::Zero(out, in)};
    bias_ = {this->name() + "/bias", Matrix<Scalar>::Zero(out, 1)};
  }

  std::string_view kind() const noexcept override { return "dense"; }
  Parameter<Scalar>& weight() noexcept { return weight_; }
  Parameter<Scalar>& bias() noexcept { return bias_; }
  int inputs() const noexcept { return in_; }
  int outputs() const noexcept { return out_; }

  Shape output_shape(const Shape& in) const override {
    if (in.channels != in_) {
      throw std::invalid_argument(this->name() + ": expected " + std::to_string(in_) +
                                  " features, got " + std::to_string(in.channels));
    }
    return {out_, in.height, in.width};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    Tensor<Scalar> out(output_shape(x.shape()), Matrix<Scalar>());
    out.data().noalias() = weight_.value * x.data();
    out.data().colwise() += bias_.value.col(0);
    if (ctx) ctx->tensors = {x};
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar> grads) const override {
    const auto& x = ctx.tensors.at(0);
    grads[0].noalias() += grad.data() * x.data().transpose();
    grads[1].col(0) += grad.data().rowwise().sum();
    return Tensor<Scalar>(x.shape(), weight_.value.transpose() * grad.data());
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Dense>(*this); }

 protected:
  void collect(std::vector<Parameter<Scalar>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int in_;
  int out_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
};

template <typename Scalar>
class Relu final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;

  std::string_view kind() const noexcept override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    Tensor<Scalar> out(x.shape(), x.data().cwiseMax(Scalar(0)));
    if (ctx) ctx->tensors = {out};
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar>) const override {
    const auto& out = ctx.tensors.at(0);
    return Tensor<Scalar>(grad.shape(),
                          (out.data().array() > Scalar(0)).select(grad.data(), Scalar(0)).matrix());
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Relu>(*this); }
};

/// Max pooling. Padded positions either do not take part (`zero_pad` false,
/// TensorFlow "same" pooling) or count as zeros (explicit zero padding layer
/// followed by "valid" pooling).
template <typename Scalar>
class MaxPool2d final : public Layer<Scalar> {
 public:
  MaxPool2d(std::string name, int kernel, int stride, Padding padding = {}, bool zero_pad = false)
      : Layer<Scalar>(std::move(name)), k_(kernel), stride_(stride), pad_(padding), zero_pad_(zero_pad) {}

  std::string_view kind() const noexcept override { return "max_pool2d"; }

  Shape output_shape(const Shape& in) const override {
    return {in.channels, detail::pooled_extent(in.height, pad_.top, pad_.bottom, k_, stride_),
            detail::pooled_extent(in.width, pad_.left, pad_.right, k_, stride_)};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    const Shape os = output_shape(x.shape());
    Tensor<Scalar> out(os, Matrix<Scalar>(os.channels, os.pixels()));
    std::vector<Eigen::Index> argmax(ctx ? static_cast<std::size_t>(os.size()) : 0);
    const auto& in = x.data();
    for (int oy = 0; oy < os.height; ++oy) {
      for (int ox = 0; ox < os.width; ++ox) {
        const Eigen::Index op = static_cast<Eigen::Index>(oy) * os.width + ox;
        for (int c = 0; c < os.channels; ++c) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Eigen::Index best_idx = -1;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_.top + ky;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_.left + kx;
              if (iy < 0 || iy >= x.height() || ix < 0 || ix >= x.width()) {
                if (zero_pad_ && Scalar(0) > best) {
                  best = Scalar(0);
                  best_idx = -1;
                }
                continue;
              }
              const Eigen::Index ip = static_cast<Eigen::Index>(iy) * x.width() + ix;
              if (in(c, ip) > best) {
                best = in(c, ip);
                best_idx = ip * os.channels + c;
              }
            }
          }
          out.data()(c, op) = best;
          if (ctx) argmax[static_cast<std::size_t>(op * os.channels + c)] = best_idx;
        }
      }
    }
    if (ctx) {
      argmax.insert(argmax.end(), {x.channels(), x.height(), x.width()});
      ctx->indices = std::move(argmax);
    }
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar>) const override {
    const std::size_t n = ctx.indices.size() - 3;
    const Shape in{static_cast<int>(ctx.indices[n]), static_cast<int>(ctx.indices[n + 1]),
                   static_cast<int>(ctx.indices[n + 2])};
    Tensor<Scalar> dx(in);
    Scalar* dst = dx.data().data();
    const Scalar* g = grad.data().data();
    for (std::size_t i = 0; i < n; ++i) {
      if (ctx.indices[i] >= 0) dst[ctx.indices[i]] += g[i];
    }
    return dx;
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  int k_;
  int stride_;
  Padding pad_;
  bool zero_pad_;
};

/// Batch normalisation in inference form: fixed running statistics, learnable
/// per-channel scale (gamma) and offset (beta).
template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
 public:
  BatchNorm(std::string name, int channels, double epsilon = 1e-3)
      : Layer<Scalar>(std::move(name)), channels_(channels), epsilon_(epsilon) {
    gamma_ = {this->name() + "/gamma", Matrix<Scalar>::Ones(channels, 1)};
    beta_ = {this->name() + "/beta", Matrix<Scalar>::Zero(channels, 1)};
    mean_ = {this->name() + "/moving_mean", Matrix<Scalar>::Zero(channels, 1), false};
    var_ = {this->name() + "/moving_variance", Matrix<Scalar>::Ones(channels, 1), false};
  }

  std::string_view kind() const noexcept override { return "batch_norm"; }
  Shape output_shape(const Shape& in) const override {
    if (in.channels != channels_) throw std::invalid_argument(this->name() + ": channel mismatch");
    return in;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    output_shape(x.shape());
    const Vector<Scalar> inv_std = inverse_std();
    const Vector<Scalar> scale = gamma_.value.col(0).cwiseProduct(inv_std);
    const Vector<Scalar> shift = beta_.value.col(0) - mean_.value.col(0).cwiseProduct(scale);
    Tensor<Scalar> out(x.shape(), Matrix<Scalar>());
    out.data() = (x.data().array().colwise() * scale.array()).colwise() + shift.array();
    if (ctx) ctx->tensors = {x};
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar> grads) const override {
    const auto& x = ctx.tensors.at(0);
    const Vector<Scalar> inv_std = inverse_std();
    const Matrix<Scalar> xhat =
        ((x.data().array().colwise() - mean_.value.col(0).array()).colwise() * inv_std.array()).matrix();
    grads[0].col(0) += (grad.data().array() * xhat.array()).rowwise().sum().matrix();
    grads[1].col(0) += grad.data().rowwise().sum();
    const Vector<Scalar> scale = gamma_.value.col(0).cwiseProduct(inv_std);
    return Tensor<Scalar>(x.shape(), (grad.data().array().colwise() * scale.array()).matrix());
  }

  Tensor<Scalar> calibrate(const Tensor<Scalar>& x) override {
    const Eigen::Index n = x.data().cols();
    mean_.value.col(0) = x.data().rowwise().mean();
    var_.value.col(0) =
        (x.data().colwise() - mean_.value.col(0)).array().square().rowwise().sum().matrix() /
        static_cast<Scalar>(std::max<Eigen::Index>(n, 1));
    return forward(x, nullptr);
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<BatchNorm>(*this); }

  Parameter<Scalar>& gamma() noexcept { return gamma_; }
  Parameter<Scalar>& beta() noexcept { return beta_; }
  Parameter<Scalar>& moving_mean() noexcept { return mean_; }
  Parameter<Scalar>& moving_variance() noexcept { return var_; }

 protected:
  void collect(std::vector<Parameter<Scalar>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&mean_);
    out.push_back(&var_);
  }

 private:
  Vector<Scalar> inverse_std() const {
    return (var_.value.col(0).array() + static_cast<Scalar>(epsilon_)).rsqrt().matrix();
  }

  int channels_;
  double epsilon_;
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
  Parameter<Scalar> mean_;
  Parameter<Scalar> var_;
};

/// C x H x W -> (C*H*W) x 1 x 1 in height, width, channel order.
template <typename Scalar>
class Flatten final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;

  std::string_view kind() const noexcept override { return "flatten"; }
  Shape output_shape(const Shape& in) const override { return {static_cast<int>(in.size()), 1, 1}; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    if (ctx) ctx->indices = {x.channels(), x.height(), x.width()};
    return x.flattened();
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar>) const override {
    const Shape in{static_cast<int>(ctx.indices[0]), static_cast<int>(ctx.indices[1]),
                   static_cast<int>(ctx.indices[2])};
    Matrix<Scalar> data = Eigen::Map<const Matrix<Scalar>>(grad.data().data(), in.channels, in.pixels());
    return Tensor<Scalar>(in, std::move(data));
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Flatten>(*this); }
};

template <typename Scalar>
class Sequential final : public Layer<Scalar> {
 public:
  using LayerPtr = std::unique_ptr<Layer<Scalar>>;

  explicit Sequential(std::string name = "sequential") : Layer<Scalar>(std::move(name)) {}
  Sequential(const Sequential& other) : Layer<Scalar>(other.name()) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) *this = Sequential(other);
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L>
  L& add(std::unique_ptr<L> layer) {
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  std::size_t size() const noexcept { return layers_.size(); }
  bool empty() const noexcept { return layers_.empty(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<Scalar>& layer(std::size_t i) const { return *layers_.at(i); }

  std::string_view kind() const noexcept override { return "sequential"; }

  Shape output_shape(const Shape& in) const override { return output_shape(in, 0, size()); }
  Shape output_shape(Shape s, std::size_t begin, std::size_t end) const {
    for (std::size_t i = begin; i < end; ++i) s = layers_[i]->output_shape(s);
    return s;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    return forward(x, ctx, 0, size());
  }

  /// Runs layers [begin, end). With a context, child i - begin holds layer i.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx, std::size_t begin,
                         std::size_t end) const {
    if (ctx) ctx->children.assign(end - begin, Context<Scalar>{});
    Tensor<Scalar> cur = x;
    for (std::size_t i = begin; i < end; ++i) {
      cur = layers_[i]->forward(cur, ctx ? &ctx->children[i - begin] : nullptr);
    }
    return cur;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar> grads) const override {
    return backward(grad, ctx, grads, 0, size());
  }

  /// `grads` aligns with the parameters of layers [begin, end).
  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar> grads, std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> offsets{0};
    for (std::size_t i = begin; i < end; ++i) {
      offsets.push_back(offsets.back() + layers_[i]->parameters().size());
    }
    Tensor<Scalar> cur = grad;
    for (std::size_t i = end; i-- > begin;) {
      const std::size_t k = i - begin;
      cur = layers_[i]->backward(cur, ctx.children.at(k),
                                 grads.subspan(offsets[k], offsets[k + 1] - offsets[k]));
    }
    return cur;
  }

  Tensor<Scalar> calibrate(const Tensor<Scalar>& x) override {
    Tensor<Scalar> cur = x;
    for (auto& l : layers_) cur = l->calibrate(cur);
    return cur;
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Sequential>(*this); }

  std::vector<Parameter<Scalar>*> parameters_of(std::size_t begin, std::size_t end) {
    std::vector<Parameter<Scalar>*> out;
    for (std::size_t i = begin; i < end; ++i) {
      auto p = layers_[i]->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  using Layer<Scalar>::parameters;

 protected:
  void collect(std::vector<Parameter<Scalar>*>& out) override {
    auto p = parameters_of(0, size());
    out.insert(out.end(), p.begin(), p.end());
  }

 private:
  std::vector<LayerPtr> layers_;
};

/// out = branch(x) + shortcut(x); an empty shortcut is the identity.
template <typename Scalar>
class Residual final : public Layer<Scalar> {
 public:
  Residual(std::string name, Sequential<Scalar> branch, Sequential<Scalar> shortcut = Sequential<Scalar>{})
      : Layer<Scalar>(std::move(name)), branch_(std::move(branch)), shortcut_(std::move(shortcut)) {}

  std::string_view kind() const noexcept override { return "residual"; }
  Sequential<Scalar>& branch() noexcept { return branch_; }
  Sequential<Scalar>& shortcut() noexcept { return shortcut_; }

  Shape output_shape(const Shape& in) const override {
    const Shape a = branch_.output_shape(in);
    const Shape b = shortcut_.output_shape(in);
    if (!(a == b)) {
      throw std::invalid_argument(this->name() + ": branch " + to_string(a) + " vs shortcut " + to_string(b));
    }
    return a;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Context<Scalar>* ctx) const override {
    if (ctx) ctx->children.assign(2, Context<Scalar>{});
    Tensor<Scalar> out = branch_.forward(x, ctx ? &ctx->children[0] : nullptr);
    Tensor<Scalar> skip = shortcut_.forward(x, ctx ? &ctx->children[1] : nullptr);
    if (!(out.shape() == skip.shape())) throw std::invalid_argument(this->name() + ": shape mismatch");
    out.data() += skip.data();
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad, const Context<Scalar>& ctx,
                          GradSpan<Scalar> grads) const override {
    const std::size_t nb = branch_.parameters().size();
    Tensor<Scalar> dx = branch_.backward(grad, ctx.children.at(0), grads.subspan(0, nb));
    Tensor<Scalar> ds = shortcut_.backward(grad, ctx.children.at(1), grads.subspan(nb));
    dx.data() += ds.data();
    return dx;
  }

  Tensor<Scalar> calibrate(const Tensor<Scalar>& x) override {
    Tensor<Scalar> out = branch_.calibrate(x);
    out.data() += shortcut_.calibrate(x).data();
    return out;
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Residual>(*this); }

 protected:
  void collect(std::vector<Parameter<Scalar>*>& out) override {
    auto b = branch_.parameters();
    auto s = shortcut_.parameters();
    out.insert(out.end(), b.begin(), b.end());
    out.insert(out.end(), s.begin(), s.end());
  }

 private:
  Sequential<Scalar> branch_;
  Sequential<Scalar> shortcut_;
};

/// Zero-initialised gradient buffers matching `params`.
template <typename Scalar>
std::vector<Matrix<Scalar>> zero_gradients(const std::vector<Parameter<Scalar>*>& params) {
  std::vector<Matrix<Scalar>> grads;
  grads.reserve(params.size());
  for (const auto* p : params) grads.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
  return grads;
}

// Initialisers draw from `rng` in parameter order, so a fixed seed yields a
// fixed network.

template <typename Scalar, typename Rng>
void fill_normal(Matrix<Scalar>& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

template <typename Scalar, typename Rng>
void fill_uniform(Matrix<Scalar>& m, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

/// He-normal for convolutions, Glorot-uniform for dense layers, biases zero.
template <typename Scalar, typename Rng>
void initialize(Layer<Scalar>& layer, Rng& rng) {
  if (auto* conv = dynamic_cast<Conv2d<Scalar>*>(&layer)) {
    fill_normal(conv->kernel().value, std::sqrt(2.0 / conv->fan_in()), rng);
  } else if (auto* dw = dynamic_cast<DepthwiseConv2d<Scalar>*>(&layer)) {
    fill_normal(dw->kernel().value, std::sqrt(2.0 / dw->fan_in()), rng);
  } else if (auto* dense = dynamic_cast<Dense<Scalar>*>(&layer)) {
    fill_uniform(dense->weight().value, std::sqrt(6.0 / (dense->inputs() + dense->outputs())), rng);
  } else if (auto* seq = dynamic_cast<Sequential<Scalar>*>(&layer)) {
    for (std::size_t i = 0; i < seq->size(); ++i) initialize(seq->layer(i), rng);
  } else if (auto* res = dynamic_cast<Residual<Scalar>*>(&layer)) {
    initialize(res->branch(), rng);
    initialize(res->shortcut(), rng);
  }
}

}  // namespace equine::nn
