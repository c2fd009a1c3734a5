#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "incdet/rng.hpp"
#include "incdet/tensor.hpp"

namespace incdet {

/// One convolution layer's parameters. Square kernels, zero padding.
struct Conv {
  Tensor w;  // (OC,IC,K,K)
  Tensor b;  // (OC)
  int stride = 1;
  int pad = 0;

  int out_channels() const { return w.dim(0); }
  int in_channels() const { return w.dim(1); }
  int kernel() const { return w.dim(2); }

  static Conv make(int in_ch, int out_ch, int kernel, int stride, int pad) {
    Conv c;
    c.w = Tensor({out_ch, in_ch, kernel, kernel});
    c.b = Tensor({out_ch});
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  /// He-style normal init, bias zero.
  void init(Rng& rng) {
    const double fan_in = static_cast<double>(in_channels()) * kernel() * kernel();
    const double std = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
    b.fill(0.0);
  }
};

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

inline Tensor conv2d_forward(const Conv& c, const Tensor& x) {
  const int ic = x.dim(0), ih = x.dim(1), iw = x.dim(2);
  if (ic != c.in_channels()) throw std::invalid_argument("conv2d: channel mismatch");
  const int k = c.kernel(), s = c.stride, p = c.pad;
  const int oh = conv_out_dim(ih, k, s, p), ow = conv_out_dim(iw, k, s, p);
  Tensor y({c.out_channels(), oh, ow});
  for (int oc = 0; oc < c.out_channels(); ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = c.b[static_cast<std::size_t>(oc)];
        const int iy0 = oy * s - p, ix0 = ox * s - p;
        for (int i = 0; i < ic; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= ih) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= iw) continue;
              acc += c.w.at4(oc, i, ky, kx) * x.at(i, iy, ix);
            }
          }
        }
        y.at(oc, oy, ox) = acc;
      }
    }
  }
  return y;
}

/// Backward pass for one conv. Accumulates into dx (optional) and grad
/// (optional); callers zero the buffers once per batch.
inline void conv2d_backward(const Conv& c, const Tensor& x, const Tensor& dy, Tensor* dx,
                            Conv* grad) {
  const int ic = x.dim(0), ih = x.dim(1), iw = x.dim(2);
  const int k = c.kernel(), s = c.stride, p = c.pad;
  const int oh = dy.dim(1), ow = dy.dim(2);
  for (int oc = 0; oc < c.out_channels(); ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double g = dy.at(oc, oy, ox);
        if (g == 0.0) continue;
        if (grad) grad->b[static_cast<std::size_t>(oc)] += g;
        const int iy0 = oy * s - p, ix0 = ox * s - p;
        for (int i = 0; i < ic; ++i) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= ih) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= iw) continue;
              if (grad) grad->w.at4(oc, i, ky, kx) += g * x.at(i, iy, ix);
              if (dx) dx->at(i, iy, ix) += g * c.w.at4(oc, i, ky, kx);
            }
          }
        }
      }
    }
  }
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0.0) y[i] = 0.0;
  return y;
}

/// dy <- dy * 1[y > 0], where y is the post-activation value.
inline void relu_backward(const Tensor& y, Tensor& dy) {
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] <= 0.0) dy[i] = 0.0;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Adam optimizer over a fixed list of parameter tensors.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (m_.empty()) {
      for (Tensor* p : params) {
        m_.push_back(Tensor::zeros_like(*p));
        v_.push_back(Tensor::zeros_like(*p));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = *grads[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        p[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace incdet
