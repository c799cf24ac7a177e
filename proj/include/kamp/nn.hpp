#pragma once

// Minimal CPU neural-network layers: Conv2d (im2col + GEMM), BatchNorm2d,
// ReLU, nearest-neighbor 2x upsampling, and momentum SGD.  Layers are
// templated on the scalar type so the same code runs in float for training
// and in double for the finite-difference oracles in the tests.
//
// Conventions:
//   - activations are [N,C,H,W] row-major tensors
//   - forward(x, train): train=true caches what backward needs
//   - backward(dy) returns dx and accumulates parameter gradients
//   - all reductions happen in a fixed order (bitwise reproducible)

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "kamp/blas.hpp"
#include "kamp/rng.hpp"
#include "kamp/tensor.hpp"

namespace kamp {

template <typename T>
struct ParamRef {
  std::string name;
  TensorT<T>* value = nullptr;
  TensorT<T>* grad = nullptr;
};

// Named persistent array (trainable or not) for checkpointing.
template <typename T>
struct StateRef {
  std::string name;
  TensorT<T>* value = nullptr;
};

namespace detail {

// Expand one sample [C,H,W] into columns [C*kh*kw, Ho*Wo].
template <typename T>
void im2col(const T* x, int c_in, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* col) {
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + (static_cast<size_t>(c) * k * k + static_cast<size_t>(ki) * k + kj) *
                           (static_cast<size_t>(ho) * wo);
        for (int r = 0; r < ho; ++r) {
          int ir = r * stride - pad + ki;
          if (ir < 0 || ir >= h) {
            for (int q = 0; q < wo; ++q) row[static_cast<size_t>(r) * wo + q] = T(0);
            continue;
          }
          const T* src = x + (static_cast<size_t>(c) * h + ir) * w;
          for (int q = 0; q < wo; ++q) {
            int iq = q * stride - pad + kj;
            row[static_cast<size_t>(r) * wo + q] = (iq >= 0 && iq < w) ? src[iq] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add columns [C*kh*kw, Ho*Wo] back into one sample [C,H,W].
template <typename T>
void col2im(const T* col, int c_in, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* x) {
  for (int c = 0; c < c_in; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + (static_cast<size_t>(c) * k * k + static_cast<size_t>(ki) * k + kj) *
                                 (static_cast<size_t>(ho) * wo);
        for (int r = 0; r < ho; ++r) {
          int ir = r * stride - pad + ki;
          if (ir < 0 || ir >= h) continue;
          T* dst = x + (static_cast<size_t>(c) * h + ir) * w;
          for (int q = 0; q < wo; ++q) {
            int iq = q * stride - pad + kj;
            if (iq >= 0 && iq < w) dst[iq] += row[static_cast<size_t>(r) * wo + q];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
class Conv2dT {
 public:
  Conv2dT() = default;
  Conv2dT(int in_ch, int out_ch, int kernel, int stride, int pad)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
    weight_ = TensorT<T>({out_ch, in_ch * kernel * kernel});
    bias_ = TensorT<T>({out_ch});
    dweight_ = TensorT<T>({out_ch, in_ch * kernel * kernel});
    dbias_ = TensorT<T>({out_ch});
  }

  // He-normal weight init, zero bias.
  void init(Pcg32& rng) {
    double std = std::sqrt(2.0 / (static_cast<double>(in_ch_) * k_ * k_));
    for (auto& v : weight_.vec()) v = static_cast<T>(rng.gaussian(0.0, std));
    bias_.fill(T(0));
  }

  int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  TensorT<T> forward(const TensorT<T>& x, bool train) {
    check_input(x);
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = out_size(h), wo = out_size(w);
    const size_t cols = static_cast<size_t>(ho) * wo;
    const int krows = in_ch_ * k_ * k_;
    TensorT<T> y({n, out_ch_, ho, wo});
    ensure_col_buffer(static_cast<size_t>(krows) * cols);
    for (int i = 0; i < n; ++i) {
      const T* xs = x.data() + static_cast<size_t>(i) * in_ch_ * h * w;
      detail::im2col(xs, in_ch_, h, w, k_, stride_, pad_, ho, wo, col_.data());
      T* ys = y.data() + static_cast<size_t>(i) * out_ch_ * cols;
      gemm(false, false, out_ch_, static_cast<int>(cols), krows, T(1), weight_.data(), krows,
           col_.data(), static_cast<int>(cols), T(0), ys, static_cast<int>(cols));
      for (int oc = 0; oc < out_ch_; ++oc) {
        T b = bias_[oc];
        T* yp = ys + static_cast<size_t>(oc) * cols;
        for (size_t q = 0; q < cols; ++q) yp[q] += b;
      }
    }
    if (train) x_cache_ = x;
    return y;
  }

  // dy: [N,out,Ho,Wo].  Accumulates dweight_/dbias_, returns dx.
  TensorT<T> backward(const TensorT<T>& dy) {
    if (x_cache_.empty()) throw invalid_state("conv2d: backward without cached forward");
    const TensorT<T>& x = x_cache_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = out_size(h), wo = out_size(w);
    const size_t cols = static_cast<size_t>(ho) * wo;
    const int krows = in_ch_ * k_ * k_;
    TensorT<T> dx({n, in_ch_, h, w});
    ensure_col_buffer(static_cast<size_t>(krows) * cols);
    std::vector<T> dcol(static_cast<size_t>(krows) * cols);
    for (int i = 0; i < n; ++i) {
      const T* xs = x.data() + static_cast<size_t>(i) * in_ch_ * h * w;
      const T* dys = dy.data() + static_cast<size_t>(i) * out_ch_ * cols;
      detail::im2col(xs, in_ch_, h, w, k_, stride_, pad_, ho, wo, col_.data());
      // dW += dy * col^T
      gemm(false, true, out_ch_, krows, static_cast<int>(cols), T(1), dys,
           static_cast<int>(cols), col_.data(), static_cast<int>(cols), T(1), dweight_.data(),
           krows);
      // db += row sums of dy
      for (int oc = 0; oc < out_ch_; ++oc) {
        T s = T(0);
        const T* dyp = dys + static_cast<size_t>(oc) * cols;
        for (size_t q = 0; q < cols; ++q) s += dyp[q];
        dbias_[oc] += s;
      }
      // dcol = W^T * dy ; dx += col2im(dcol)
      gemm(true, false, krows, static_cast<int>(cols), out_ch_, T(1), weight_.data(), krows,
           dys, static_cast<int>(cols), T(0), dcol.data(), static_cast<int>(cols));
      detail::col2im(dcol.data(), in_ch_, h, w, k_, stride_, pad_, ho, wo,
                     dx.data() + static_cast<size_t>(i) * in_ch_ * h * w);
    }
    return dx;
  }

  void zero_grad() {
    dweight_.fill(T(0));
    dbias_.fill(T(0));
  }

  void collect_params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight_, &dweight_});
    out.push_back({prefix + ".bias", &bias_, &dbias_});
  }
  void collect_state(std::vector<StateRef<T>>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight_});
    out.push_back({prefix + ".bias", &bias_});
  }

  void drop_cache() { x_cache_ = TensorT<T>(); }

  TensorT<T>& weight() { return weight_; }
  TensorT<T>& bias() { return bias_; }
  const TensorT<T>& weight() const { return weight_; }
  const TensorT<T>& bias() const { return bias_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }

 private:
  void check_input(const TensorT<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != in_ch_)
      throw std::invalid_argument("conv2d: expected [N," + std::to_string(in_ch_) +
                                  ",H,W], got " + x.shape_str());
  }
  void ensure_col_buffer(size_t n) {
    if (col_.size() < n) col_.assign(n, T(0));
  }

  int in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  TensorT<T> weight_, bias_, dweight_, dbias_;
  TensorT<T> x_cache_;
  std::vector<T> col_;
};

template <typename T>
class BatchNorm2dT {
 public:
  BatchNorm2dT() = default;
  explicit BatchNorm2dT(int channels, double eps = 1e-5, double momentum = 0.1)
      : c_(channels), eps_(eps), momentum_(momentum) {
    gamma_ = TensorT<T>::full({channels}, T(1));
    beta_ = TensorT<T>({channels});
    dgamma_ = TensorT<T>({channels});
    dbeta_ = TensorT<T>({channels});
    running_mean_ = TensorT<T>({channels});
    running_var_ = TensorT<T>::full({channels}, T(1));
  }

  TensorT<T> forward(const TensorT<T>& x, bool train) {
    if (x.rank() != 4 || x.dim(1) != c_)
      throw std::invalid_argument("batchnorm: expected [N," + std::to_string(c_) + ",H,W]");
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t m = static_cast<size_t>(n) * plane;  // entries per channel
    TensorT<T> y(x.shape());
    if (train) {
      mean_ = TensorT<T>({c_});
      invstd_ = TensorT<T>({c_});
      xhat_ = TensorT<T>(x.shape());
      for (int c = 0; c < c_; ++c) {
        T mu = T(0);
        for (int i = 0; i < n; ++i) {
          const T* p = plane_ptr(x, i, c, plane);
          for (size_t q = 0; q < plane; ++q) mu += p[q];
        }
        mu /= static_cast<T>(m);
        T var = T(0);
        for (int i = 0; i < n; ++i) {
          const T* p = plane_ptr(x, i, c, plane);
          for (size_t q = 0; q < plane; ++q) {
            T d = p[q] - mu;
            var += d * d;
          }
        }
        var /= static_cast<T>(m);
        T is = T(1) / std::sqrt(var + static_cast<T>(eps_));
        mean_[c] = mu;
        invstd_[c] = is;
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mu);
        running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * var);
        for (int i = 0; i < n; ++i) {
          const T* p = plane_ptr(x, i, c, plane);
          T* xh = plane_ptr(xhat_, i, c, plane);
          T* yp = plane_ptr(y, i, c, plane);
          for (size_t q = 0; q < plane; ++q) {
            xh[q] = (p[q] - mu) * is;
            yp[q] = gamma_[c] * xh[q] + beta_[c];
          }
        }
      }
      cached_ = true;
    } else {
      for (int c = 0; c < c_; ++c) {
        T is = T(1) / std::sqrt(running_var_[c] + static_cast<T>(eps_));
        T g = gamma_[c] * is, b = beta_[c] - gamma_[c] * running_mean_[c] * is;
        for (int i = 0; i < n; ++i) {
          const T* p = plane_ptr(x, i, c, plane);
          T* yp = plane_ptr(y, i, c, plane);
          for (size_t q = 0; q < plane; ++q) yp[q] = g * p[q] + b;
        }
      }
    }
    return y;
  }

  TensorT<T> backward(const TensorT<T>& dy) {
    if (!cached_) throw invalid_state("batchnorm: backward without cached forward");
    const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t m = static_cast<size_t>(n) * plane;
    TensorT<T> dx(dy.shape());
    for (int c = 0; c < c_; ++c) {
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int i = 0; i < n; ++i) {
        const T* dyp = plane_ptr(dy, i, c, plane);
        const T* xh = plane_ptr(xhat_, i, c, plane);
        for (size_t q = 0; q < plane; ++q) {
          sum_dy += dyp[q];
          sum_dy_xhat += dyp[q] * xh[q];
        }
      }
      dbeta_[c] += sum_dy;
      dgamma_[c] += sum_dy_xhat;
      T g = gamma_[c], is = invstd_[c];
      T inv_m = T(1) / static_cast<T>(m);
      for (int i = 0; i < n; ++i) {
        const T* dyp = plane_ptr(dy, i, c, plane);
        const T* xh = plane_ptr(xhat_, i, c, plane);
        T* dxp = plane_ptr(dx, i, c, plane);
        for (size_t q = 0; q < plane; ++q)
          dxp[q] = g * is * (dyp[q] - inv_m * sum_dy - xh[q] * inv_m * sum_dy_xhat);
      }
    }
    return dx;
  }

  void zero_grad() {
    dgamma_.fill(T(0));
    dbeta_.fill(T(0));
  }

  void collect_params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma_, &dgamma_});
    out.push_back({prefix + ".beta", &beta_, &dbeta_});
  }
  void collect_state(std::vector<StateRef<T>>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma_});
    out.push_back({prefix + ".beta", &beta_});
    out.push_back({prefix + ".running_mean", &running_mean_});
    out.push_back({prefix + ".running_var", &running_var_});
  }

  void drop_cache() {
    xhat_ = TensorT<T>();
    cached_ = false;
  }

 private:
  template <typename Tensor>
  static auto plane_ptr(Tensor& t, int i, int c, size_t plane)
      -> decltype(t.data()) {
    return t.data() + (static_cast<size_t>(i) * t.dim(1) + c) * plane;
  }

  int c_ = 0;
  double eps_ = 1e-5, momentum_ = 0.1;
  TensorT<T> gamma_, beta_, dgamma_, dbeta_;
  TensorT<T> running_mean_, running_var_;
  TensorT<T> mean_, invstd_, xhat_;
  bool cached_ = false;
};

template <typename T>
class ReLUT {
 public:
  TensorT<T> forward(const TensorT<T>& x, bool train) {
    TensorT<T> y(x.shape());
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (train) y_cache_ = y;
    return y;
  }
  TensorT<T> backward(const TensorT<T>& dy) {
    if (y_cache_.empty()) throw invalid_state("relu: backward without cached forward");
    TensorT<T> dx(dy.shape());
    for (size_t i = 0; i < dy.size(); ++i) dx[i] = y_cache_[i] > T(0) ? dy[i] : T(0);
    return dx;
  }
  void drop_cache() { y_cache_ = TensorT<T>(); }

 private:
  TensorT<T> y_cache_;
};

// Nearest-neighbor 2x spatial upsampling.
template <typename T>
class Upsample2xT {
 public:
  TensorT<T> forward(const TensorT<T>& x, bool /*train*/) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<T> y({n, c, 2 * h, 2 * w});
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const T* xp = x.data() + (static_cast<size_t>(i) * c + ch) * h * w;
        T* yp = y.data() + (static_cast<size_t>(i) * c + ch) * 4 * h * w;
        for (int r = 0; r < h; ++r)
          for (int q = 0; q < w; ++q) {
            T v = xp[static_cast<size_t>(r) * w + q];
            size_t base = static_cast<size_t>(2 * r) * (2 * w) + 2 * q;
            yp[base] = v;
            yp[base + 1] = v;
            yp[base + 2 * w] = v;
            yp[base + 2 * w + 1] = v;
          }
      }
    return y;
  }
  TensorT<T> backward(const TensorT<T>& dy) {
    const int n = dy.dim(0), c = dy.dim(1), h2 = dy.dim(2), w2 = dy.dim(3);
    const int h = h2 / 2, w = w2 / 2;
    TensorT<T> dx({n, c, h, w});
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const T* dyp = dy.data() + (static_cast<size_t>(i) * c + ch) * h2 * w2;
        T* dxp = dx.data() + (static_cast<size_t>(i) * c + ch) * h * w;
        for (int r = 0; r < h; ++r)
          for (int q = 0; q < w; ++q) {
            size_t base = static_cast<size_t>(2 * r) * w2 + 2 * q;
            dxp[static_cast<size_t>(r) * w + q] =
                dyp[base] + dyp[base + 1] + dyp[base + w2] + dyp[base + w2 + 1];
          }
      }
    return dx;
  }
};

// Momentum SGD with decoupled-from-nothing classic weight decay (added to the
// gradient), lr schedule handled by the caller through set_lr().
template <typename T>
class SgdT {
 public:
  SgdT() = default;
  SgdT(std::vector<ParamRef<T>> params, double lr, double momentum, double weight_decay)
      : params_(std::move(params)), lr_(lr), mu_(momentum), wd_(weight_decay) {
    velocity_.reserve(params_.size());
    for (auto& p : params_) velocity_.emplace_back(p.value->shape());
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto& p : params_) p.grad->fill(T(0));
  }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      TensorT<T>& w = *params_[i].value;
      TensorT<T>& g = *params_[i].grad;
      TensorT<T>& v = velocity_[i];
      for (size_t j = 0; j < w.size(); ++j) {
        T grad = g[j] + static_cast<T>(wd_) * w[j];
        v[j] = static_cast<T>(mu_) * v[j] + grad;
        w[j] -= static_cast<T>(lr_) * v[j];
      }
    }
  }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<TensorT<T>> velocity_;
  double lr_ = 0.01, mu_ = 0.9, wd_ = 0.0;
};

}  // namespace kamp
