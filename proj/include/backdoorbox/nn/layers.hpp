#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "backdoorbox/nn/tensor.hpp"
#include "backdoorbox/rng.hpp"

namespace bbox::nn {

struct Parameter {
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;

  Parameter() = default;
  explicit Parameter(std::vector<int> s, float fill = 0.0f) : shape(std::move(s)) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    value.assign(n, fill);
    grad.assign(n, 0.0f);
  }
};

/// Qualified handle into a model's state. Buffers (running statistics) are
/// saved with the model but never receive gradients.
struct ParamRef {
  std::string name;
  Parameter *param = nullptr;
  bool buffer = false;
};

class Layer {
public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor &x, bool training) = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  virtual Tensor backward(const Tensor &grad) = 0;
  virtual void collect(const std::string &prefix, std::vector<ParamRef> &out) {
    (void)prefix;
    (void)out;
  }
  virtual void reset(Rng &rng) { (void)rng; }
  /// Frozen layers keep eval-mode behaviour (running statistics) during
  /// training passes but still propagate gradients.
  virtual void set_frozen(bool frozen) { (void)frozen; }
  [[nodiscard]] virtual std::unique_ptr<Layer> clone() const = 0;
  [[nodiscard]] virtual std::string kind() const = 0;
};

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

namespace detail {

inline void uniform_fill(std::vector<float> &v, float bound, Rng &rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto &x : v) x = dist(rng);
}

inline std::string join(const std::string &prefix, const std::string &name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Column matrix (C*k*k) x (N*Ho*Wo) for a strided, zero-padded convolution.
inline void im2col(const Tensor &x, int k, int stride, int pad, int ho, int wo,
                   std::vector<float> &col) {
  const int C = x.c(), H = x.h(), W = x.w(), N = x.n();
  const std::size_t cols = static_cast<std::size_t>(N) * ho * wo;
  col.assign(static_cast<std::size_t>(C) * k * k * cols, 0.0f);
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        float *dst = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int n = 0; n < N; ++n) {
          const float *src = x.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            float *row = dst + (static_cast<std::size_t>(n) * ho + oy) * wo;
            const float *srow = src + static_cast<std::size_t>(iy) * W;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < W) row[ox] = srow[ix];
            }
          }
        }
      }
}

inline void col2im(const std::vector<float> &col, int k, int stride, int pad, int ho, int wo,
                   Tensor &dx) {
  const int C = dx.c(), H = dx.h(), W = dx.w(), N = dx.n();
  const std::size_t cols = static_cast<std::size_t>(N) * ho * wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const float *src = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int n = 0; n < N; ++n) {
          float *dst = dx.data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            const float *row = src + (static_cast<std::size_t>(n) * ho + oy) * wo;
            float *drow = dst + static_cast<std::size_t>(iy) * W;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < W) drow[ix] += row[ox];
            }
          }
        }
      }
}

} // namespace detail

class Conv2d : public Layer {
public:
  Conv2d(int in, int out, int kernel, int stride = 1, int pad = 0, bool bias = true)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_({out, in, kernel, kernel}), bias_(bias ? std::vector<int>{out} : std::vector<int>{0}) {}

  Tensor forward(const Tensor &x, bool training) override {
    if (x.c() != in_)
      throw ShapeError("conv expects " + std::to_string(in_) + " input channels, got " + x.shape_str());
    const int ho = (x.h() + 2 * pad_ - k_) / stride_ + 1;
    const int wo = (x.w() + 2 * pad_ - k_) / stride_ + 1;
    const std::size_t hw = static_cast<std::size_t>(ho) * wo;
    const std::size_t cols = x.n() * hw;
    const int ckk = in_ * k_ * k_;
    detail::im2col(x, k_, stride_, pad_, ho, wo, col_);
    RowMatrix prod = ConstMatMap(weight_.value.data(), out_, ckk) *
                     ConstMatMap(col_.data(), ckk, static_cast<Eigen::Index>(cols));
    Tensor y(x.n(), out_, ho, wo);
    for (int n = 0; n < x.n(); ++n)
      for (int o = 0; o < out_; ++o) {
        const float b = has_bias_ ? bias_.value[o] : 0.0f;
        const float *src = prod.data() + o * cols + n * hw;
        float *dst = y.data.data() + (static_cast<std::size_t>(n) * out_ + o) * hw;
        for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + b;
      }
    if (training) input_shape_ = x.shape;
    else col_.clear();
    return y;
  }

  Tensor backward(const Tensor &grad) override {
    const int ho = grad.h(), wo = grad.w(), N = grad.n();
    const std::size_t hw = static_cast<std::size_t>(ho) * wo;
    const std::size_t cols = N * hw;
    const int ckk = in_ * k_ * k_;
    RowMatrix g(out_, static_cast<Eigen::Index>(cols));
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o) {
        const float *src = grad.data.data() + (static_cast<std::size_t>(n) * out_ + o) * hw;
        std::copy(src, src + hw, g.data() + o * cols + n * hw);
      }
    ConstMatMap col(col_.data(), ckk, static_cast<Eigen::Index>(cols));
    MatMap(weight_.grad.data(), out_, ckk).noalias() += g * col.transpose();
    if (has_bias_)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += g.row(o).sum();
    std::vector<float> dcol(static_cast<std::size_t>(ckk) * cols);
    MatMap(dcol.data(), ckk, static_cast<Eigen::Index>(cols)).noalias() =
        ConstMatMap(weight_.value.data(), out_, ckk).transpose() * g;
    Tensor dx(input_shape_[0], input_shape_[1], input_shape_[2], input_shape_[3]);
    detail::col2im(dcol, k_, stride_, pad_, ho, wo, dx);
    return dx;
  }

  void collect(const std::string &prefix, std::vector<ParamRef> &out) override {
    out.push_back({detail::join(prefix, "weight"), &weight_});
    if (has_bias_) out.push_back({detail::join(prefix, "bias"), &bias_});
  }

  void reset(Rng &rng) override {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_ * k_ * k_));
    detail::uniform_fill(weight_.value, bound, rng);
    if (has_bias_) detail::uniform_fill(bias_.value, bound, rng);
  }

  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  [[nodiscard]] std::string kind() const override { return "Conv2d"; }

private:
  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Parameter weight_, bias_;
  std::vector<float> col_;
  std::array<int, 4> input_shape_{};
};

class Linear : public Layer {
public:
  Linear(int in, int out) : in_(in), out_(out), weight_({out, in}), bias_({out}) {}

  Tensor forward(const Tensor &x, bool training) override {
    if (static_cast<int>(x.sample_size()) != in_)
      throw ShapeError("linear expects " + std::to_string(in_) + " features, got " + x.shape_str());
    Tensor y(x.n(), out_, 1, 1);
    MatMap ym(y.data.data(), x.n(), out_);
    ym.noalias() = ConstMatMap(x.data.data(), x.n(), in_) *
                   ConstMatMap(weight_.value.data(), out_, in_).transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias_.value.data(), out_);
    if (training) input_ = x;
    return y;
  }

  Tensor backward(const Tensor &grad) override {
    const int N = grad.n();
    ConstMatMap g(grad.data.data(), N, out_);
    ConstMatMap x(input_.data.data(), N, in_);
    MatMap(weight_.grad.data(), out_, in_).noalias() += g.transpose() * x;
    Eigen::Map<Eigen::RowVectorXf>(bias_.grad.data(), out_) += g.colwise().sum();
    Tensor dx;
    dx.shape = input_.shape;
    dx.data.resize(input_.size());
    MatMap(dx.data.data(), N, in_).noalias() = g * ConstMatMap(weight_.value.data(), out_, in_);
    return dx;
  }

  void collect(const std::string &prefix, std::vector<ParamRef> &out) override {
    out.push_back({detail::join(prefix, "weight"), &weight_});
    out.push_back({detail::join(prefix, "bias"), &bias_});
  }

  void reset(Rng &rng) override {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_));
    detail::uniform_fill(weight_.value, bound, rng);
    detail::uniform_fill(bias_.value, bound, rng);
  }

  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  [[nodiscard]] std::string kind() const override { return "Linear"; }

private:
  int in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class ReLU : public Layer {
public:
  Tensor forward(const Tensor &x, bool training) override {
    Tensor y = x;
    for (auto &v : y.data) v = v > 0.0f ? v : 0.0f;
    if (training) output_ = y;
    return y;
  }
  Tensor backward(const Tensor &grad) override {
    Tensor dx = grad;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (output_.data[i] <= 0.0f) dx.data[i] = 0.0f;
    return dx;
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
  [[nodiscard]] std::string kind() const override { return "ReLU"; }

private:
  Tensor output_;
};

class MaxPool2d : public Layer {
public:
  explicit MaxPool2d(int size = 2) : size_(size) {}

  Tensor forward(const Tensor &x, bool training) override {
    const int ho = x.h() / size_, wo = x.w() / size_;
    Tensor y(x.n(), x.c(), ho, wo);
    if (training) {
      argmax_.assign(y.size(), 0);
      input_shape_ = x.shape;
    }
    std::size_t out = 0;
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * x.c() + c) * x.plane();
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox, ++out) {
            float best = -std::numeric_limits<float>::infinity();
            std::size_t best_i = 0;
            for (int dy = 0; dy < size_; ++dy)
              for (int dx = 0; dx < size_; ++dx) {
                const std::size_t i = base + static_cast<std::size_t>(oy * size_ + dy) * x.w() + ox * size_ + dx;
                if (x.data[i] > best) {
                  best = x.data[i];
                  best_i = i;
                }
              }
            y.data[out] = best;
            if (training) argmax_[out] = best_i;
          }
      }
    return y;
  }

  Tensor backward(const Tensor &grad) override {
    Tensor dx(input_shape_[0], input_shape_[1], input_shape_[2], input_shape_[3]);
    for (std::size_t i = 0; i < grad.size(); ++i) dx.data[argmax_[i]] += grad.data[i];
    return dx;
  }

  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  [[nodiscard]] std::string kind() const override { return "MaxPool2d"; }

private:
  int size_;
  std::vector<std::size_t> argmax_;
  std::array<int, 4> input_shape_{};
};

class Flatten : public Layer {
public:
  Tensor forward(const Tensor &x, bool training) override {
    if (training) input_shape_ = x.shape;
    Tensor y = x;
    y.shape = {x.n(), static_cast<int>(x.sample_size()), 1, 1};
    return y;
  }
  Tensor backward(const Tensor &grad) override {
    Tensor dx = grad;
    dx.shape = input_shape_;
    return dx;
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
  [[nodiscard]] std::string kind() const override { return "Flatten"; }

private:
  std::array<int, 4> input_shape_{};
};

/// Averages every channel plane to a single value.
class GlobalAvgPool : public Layer {
public:
  Tensor forward(const Tensor &x, bool training) override {
    if (training) input_shape_ = x.shape;
    Tensor y(x.n(), x.c(), 1, 1);
    const std::size_t plane = x.plane();
    for (std::size_t i = 0; i < y.size(); ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) acc += x.data[i * plane + p];
      y.data[i] = static_cast<float>(acc / plane);
    }
    return y;
  }
  Tensor backward(const Tensor &grad) override {
    Tensor dx(input_shape_[0], input_shape_[1], input_shape_[2], input_shape_[3]);
    const std::size_t plane = dx.plane();
    for (std::size_t i = 0; i < grad.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) dx.data[i * plane + p] = grad.data[i] / plane;
    return dx;
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  [[nodiscard]] std::string kind() const override { return "GlobalAvgPool"; }

private:
  std::array<int, 4> input_shape_{};
};

class BatchNorm2d : public Layer {
public:
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f)
      : channels_(channels), momentum_(momentum), eps_(eps), weight_({channels}, 1.0f),
        bias_({channels}, 0.0f), running_mean_({channels}, 0.0f), running_var_({channels}, 1.0f) {}

  Tensor forward(const Tensor &x, bool training) override {
    const int N = x.n(), C = x.c();
    const std::size_t plane = x.plane();
    const double count = static_cast<double>(N) * plane;
    Tensor y(N, C, x.h(), x.w());
    const bool batch_stats = training && !frozen_;
    if (training) {
      xhat_ = Tensor(N, C, x.h(), x.w());
      inv_std_.assign(C, 0.0f);
      used_batch_stats_ = batch_stats;
    }
    for (int c = 0; c < C; ++c) {
      double mean, var;
      if (batch_stats) {
        double s = 0.0, s2 = 0.0;
        for (int n = 0; n < N; ++n) {
          const float *p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
        }
        mean = s / count;
        for (int n = 0; n < N; ++n) {
          const float *p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) s2 += (p[i] - mean) * (p[i] - mean);
        }
        var = s2 / count;
        running_mean_.value[c] = static_cast<float>((1 - momentum_) * running_mean_.value[c] + momentum_ * mean);
        const double unbiased = count > 1 ? s2 / (count - 1) : var;
        running_var_.value[c] = static_cast<float>((1 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const float inv = static_cast<float>(1.0 / std::sqrt(var + eps_));
      if (training) inv_std_[c] = inv;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const float h = (x.data[off + i] - static_cast<float>(mean)) * inv;
          if (training) xhat_.data[off + i] = h;
          y.data[off + i] = weight_.value[c] * h + bias_.value[c];
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor &grad) override {
    const int N = grad.n(), C = grad.c();
    const std::size_t plane = grad.plane();
    const double count = static_cast<double>(N) * plane;
    Tensor dx(N, C, grad.h(), grad.w());
    for (int c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += grad.data[off + i];
          sum_gx += grad.data[off + i] * xhat_.data[off + i];
        }
      }
      weight_.grad[c] += static_cast<float>(sum_gx);
      bias_.grad[c] += static_cast<float>(sum_g);
      if (!used_batch_stats_) {
        const float scale = weight_.value[c] * inv_std_[c];
        for (int n = 0; n < N; ++n) {
          const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dx.data[off + i] = scale * grad.data[off + i];
        }
        continue;
      }
      const double scale = weight_.value[c] * inv_std_[c] / count;
      for (int n = 0; n < N; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          dx.data[off + i] = static_cast<float>(
              scale * (count * grad.data[off + i] - sum_g - xhat_.data[off + i] * sum_gx));
      }
    }
    return dx;
  }

  void collect(const std::string &prefix, std::vector<ParamRef> &out) override {
    out.push_back({detail::join(prefix, "weight"), &weight_});
    out.push_back({detail::join(prefix, "bias"), &bias_});
    out.push_back({detail::join(prefix, "running_mean"), &running_mean_, true});
    out.push_back({detail::join(prefix, "running_var"), &running_var_, true});
  }

  void reset(Rng &) override {
    std::fill(weight_.value.begin(), weight_.value.end(), 1.0f);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
    std::fill(running_mean_.value.begin(), running_mean_.value.end(), 0.0f);
    std::fill(running_var_.value.begin(), running_var_.value.end(), 1.0f);
  }

  void set_frozen(bool frozen) override { frozen_ = frozen; }

  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  [[nodiscard]] std::string kind() const override { return "BatchNorm2d"; }

private:
  int channels_;
  float momentum_, eps_;
  Parameter weight_, bias_, running_mean_, running_var_;
  bool frozen_ = false;
  bool used_batch_stats_ = true;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

/// Two 3x3 conv/BN stages with an identity or projected shortcut.
class BasicBlock : public Layer {
public:
  BasicBlock(int in, int out, int stride)
      : conv1_(in, out, 3, stride, 1, false), bn1_(out), conv2_(out, out, 3, 1, 1, false), bn2_(out),
        project_(stride != 1 || in != out), shortcut_conv_(in, out, 1, stride, 0, false), shortcut_bn_(out) {}

  Tensor forward(const Tensor &x, bool training) override {
    Tensor h = relu1_.forward(bn1_.forward(conv1_.forward(x, training), training), training);
    h = bn2_.forward(conv2_.forward(h, training), training);
    const Tensor s = project_ ? shortcut_bn_.forward(shortcut_conv_.forward(x, training), training) : x;
    for (std::size_t i = 0; i < h.size(); ++i) h.data[i] += s.data[i];
    return relu_out_.forward(h, training);
  }

  Tensor backward(const Tensor &grad) override {
    const Tensor g = relu_out_.backward(grad);
    Tensor dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
    const Tensor ds = project_ ? shortcut_conv_.backward(shortcut_bn_.backward(g)) : g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
    return dx;
  }

  void collect(const std::string &prefix, std::vector<ParamRef> &out) override {
    conv1_.collect(detail::join(prefix, "conv1"), out);
    bn1_.collect(detail::join(prefix, "bn1"), out);
    conv2_.collect(detail::join(prefix, "conv2"), out);
    bn2_.collect(detail::join(prefix, "bn2"), out);
    if (project_) {
      shortcut_conv_.collect(detail::join(prefix, "shortcut.0"), out);
      shortcut_bn_.collect(detail::join(prefix, "shortcut.1"), out);
    }
  }

  void reset(Rng &rng) override {
    conv1_.reset(rng);
    bn1_.reset(rng);
    conv2_.reset(rng);
    bn2_.reset(rng);
    if (project_) {
      shortcut_conv_.reset(rng);
      shortcut_bn_.reset(rng);
    }
  }

  void set_frozen(bool frozen) override {
    bn1_.set_frozen(frozen);
    bn2_.set_frozen(frozen);
    shortcut_bn_.set_frozen(frozen);
  }

  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<BasicBlock>(*this); }
  [[nodiscard]] std::string kind() const override { return "BasicBlock"; }

private:
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReLU relu1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  bool project_;
  Conv2d shortcut_conv_;
  BatchNorm2d shortcut_bn_;
  ReLU relu_out_;
};

} // namespace bbox::nn
