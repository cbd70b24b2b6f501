#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "pmq/common.hpp"
#include "pmq/rng.hpp"
#include "pmq/tensor.hpp"

// Layer primitives with explicit forward/backward passes. Layers own their
// parameters and gradient buffers; caches live with the caller so one layer
// instance can serve many concurrent forward passes (per-sample encoding).
namespace pmq::nn {

template <typename T>
inline T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / T(std::numbers::sqrt2)));
}

template <typename T>
inline T gelu_grad(T x) {
  const T inv_sqrt2 = T(1) / T(std::numbers::sqrt2);
  const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
  const T pdf = std::exp(T(-0.5) * x * x) * T(1.0 / std::sqrt(2.0 * std::numbers::pi));
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  int in = 0, out = 0;
  std::vector<T> W;  // [in][out]
  std::vector<T> b;  // [out]
  std::vector<T> gW, gb;

  void init(int in_dim, int out_dim, Rng& rng) {
    in = in_dim;
    out = out_dim;
    W.resize(static_cast<size_t>(in) * out);
    b.assign(static_cast<size_t>(out), T(0));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (T& w : W) w = static_cast<T>(rng.normal(0.0, scale));
    gW.assign(W.size(), T(0));
    gb.assign(b.size(), T(0));
  }

  // y[N x out] = x[N x in] * W + b
  void forward(const Matrix<T>& x, Matrix<T>& y) const {
    y.resize(x.rows, out);
    for (int r = 0; r < x.rows; ++r) {
      const T* xr = x.row(r);
      T* yr = y.row(r);
      for (int j = 0; j < out; ++j) yr[j] = b[static_cast<size_t>(j)];
      for (int i = 0; i < in; ++i) {
        const T xi = xr[i];
        const T* wrow = W.data() + static_cast<size_t>(i) * out;
        for (int j = 0; j < out; ++j) yr[j] += xi * wrow[j];
      }
    }
  }

  // Accumulates parameter grads; writes dx when non-null.
  void backward(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>* dx) {
    if (dx) dx->resize(x.rows, in);
    for (int r = 0; r < x.rows; ++r) {
      const T* xr = x.row(r);
      const T* dyr = dy.row(r);
      for (int j = 0; j < out; ++j) gb[static_cast<size_t>(j)] += dyr[j];
      for (int i = 0; i < in; ++i) {
        T* gwrow = gW.data() + static_cast<size_t>(i) * out;
        const T xi = xr[i];
        T acc = T(0);
        const T* wrow = W.data() + static_cast<size_t>(i) * out;
        for (int j = 0; j < out; ++j) {
          gwrow[j] += xi * dyr[j];
          acc += wrow[j] * dyr[j];
        }
        if (dx) (*dx)(r, i) = acc;
      }
    }
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".W", W, gW);
    f(prefix + ".b", b, gb);
  }
};

// ---------------------------------------------------------------------------

// Same-length dilated 1-D convolution over time-major [S x D] data with an
// odd kernel, zero padding of (k-1)/2*dilation on both sides.
template <typename T>
struct Conv1d {
  int ch = 0, k = 3, dilation = 1;
  std::vector<T> W;  // [k][ci][co]
  std::vector<T> b;  // [co]
  std::vector<T> gW, gb;

  void init(int channels, int kernel, int dil, Rng& rng) {
    require(kernel % 2 == 1, Err::BadConfig, "kernel size must be odd");
    ch = channels;
    k = kernel;
    dilation = dil;
    W.resize(static_cast<size_t>(k) * ch * ch);
    b.assign(static_cast<size_t>(ch), T(0));
    const double scale = 1.0 / std::sqrt(static_cast<double>(ch) * k);
    for (T& w : W) w = static_cast<T>(rng.normal(0.0, scale));
    gW.assign(W.size(), T(0));
    gb.assign(b.size(), T(0));
  }

  void forward(const Matrix<T>& x, Matrix<T>& y) const {
    y.resize(x.rows, ch);
    const int half = (k - 1) / 2;
    for (int t = 0; t < x.rows; ++t) {
      T* yr = y.row(t);
      for (int j = 0; j < ch; ++j) yr[j] = b[static_cast<size_t>(j)];
      for (int kk = 0; kk < k; ++kk) {
        const int tt = t + (kk - half) * dilation;
        if (tt < 0 || tt >= x.rows) continue;
        const T* xr = x.row(tt);
        const T* wk = W.data() + static_cast<size_t>(kk) * ch * ch;
        for (int ci = 0; ci < ch; ++ci) {
          const T xi = xr[ci];
          const T* wrow = wk + static_cast<size_t>(ci) * ch;
          for (int j = 0; j < ch; ++j) yr[j] += xi * wrow[j];
        }
      }
    }
  }

  void backward(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>* dx) {
    if (dx) {
      dx->resize(x.rows, ch);
      dx->zero();
    }
    const int half = (k - 1) / 2;
    for (int t = 0; t < x.rows; ++t) {
      const T* dyr = dy.row(t);
      for (int j = 0; j < ch; ++j) gb[static_cast<size_t>(j)] += dyr[j];
      for (int kk = 0; kk < k; ++kk) {
        const int tt = t + (kk - half) * dilation;
        if (tt < 0 || tt >= x.rows) continue;
        const T* xr = x.row(tt);
        T* dxr = dx ? dx->row(tt) : nullptr;
        T* gwk = gW.data() + static_cast<size_t>(kk) * ch * ch;
        const T* wk = W.data() + static_cast<size_t>(kk) * ch * ch;
        for (int ci = 0; ci < ch; ++ci) {
          const T xi = xr[ci];
          T* gwrow = gwk + static_cast<size_t>(ci) * ch;
          const T* wrow = wk + static_cast<size_t>(ci) * ch;
          T acc = T(0);
          for (int j = 0; j < ch; ++j) {
            gwrow[j] += xi * dyr[j];
            acc += wrow[j] * dyr[j];
          }
          if (dxr) dxr[ci] += acc;
        }
      }
    }
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".W", W, gW);
    f(prefix + ".b", b, gb);
  }
};

// ---------------------------------------------------------------------------

template <typename T>
struct BnCache {
  Matrix<T> xhat;
  std::vector<T> invstd;
};

// Per-feature batch normalization over rows. Training mode uses batch
// statistics (backward supports only this mode); eval mode uses the running
// buffers, which train-mode forwards keep updated.
template <typename T>
struct BatchNorm {
  int dim = 0;
  double momentum = 0.1, eps = 1e-5;
  std::vector<T> gamma, beta;
  std::vector<T> ggamma, gbeta;
  std::vector<T> running_mean, running_var;

  void init(int d) {
    dim = d;
    gamma.assign(static_cast<size_t>(d), T(1));
    beta.assign(static_cast<size_t>(d), T(0));
    ggamma.assign(static_cast<size_t>(d), T(0));
    gbeta.assign(static_cast<size_t>(d), T(0));
    running_mean.assign(static_cast<size_t>(d), T(0));
    running_var.assign(static_cast<size_t>(d), T(1));
  }

  void forward(const Matrix<T>& x, bool training, BnCache<T>* cache, Matrix<T>& y) {
    y.resize(x.rows, dim);
    const int n = x.rows;
    if (!training) {
      for (int j = 0; j < dim; ++j) {
        const T inv = T(1) / std::sqrt(running_var[static_cast<size_t>(j)] + T(eps));
        for (int r = 0; r < n; ++r) {
          y(r, j) = gamma[static_cast<size_t>(j)] * (x(r, j) - running_mean[static_cast<size_t>(j)]) * inv +
                    beta[static_cast<size_t>(j)];
        }
      }
      return;
    }
    if (cache) {
      cache->xhat.resize(n, dim);
      cache->invstd.assign(static_cast<size_t>(dim), T(0));
    }
    for (int j = 0; j < dim; ++j) {
      T mean = T(0);
      for (int r = 0; r < n; ++r) mean += x(r, j);
      mean /= T(n);
      T var = T(0);
      for (int r = 0; r < n; ++r) {
        const T d = x(r, j) - mean;
        var += d * d;
      }
      var /= T(n);
      const T inv = T(1) / std::sqrt(var + T(eps));
      for (int r = 0; r < n; ++r) {
        const T xh = (x(r, j) - mean) * inv;
        if (cache) cache->xhat(r, j) = xh;
        y(r, j) = gamma[static_cast<size_t>(j)] * xh + beta[static_cast<size_t>(j)];
      }
      if (cache) cache->invstd[static_cast<size_t>(j)] = inv;
      const T unbiased = n > 1 ? var * T(n) / T(n - 1) : var;
      running_mean[static_cast<size_t>(j)] =
          T(1.0 - momentum) * running_mean[static_cast<size_t>(j)] + T(momentum) * mean;
      running_var[static_cast<size_t>(j)] =
          T(1.0 - momentum) * running_var[static_cast<size_t>(j)] + T(momentum) * unbiased;
    }
  }

  void backward(const BnCache<T>& cache, const Matrix<T>& dy, Matrix<T>* dx) {
    const int n = dy.rows;
    if (dx) dx->resize(n, dim);
    for (int j = 0; j < dim; ++j) {
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int r = 0; r < n; ++r) {
        sum_dy += dy(r, j);
        sum_dy_xhat += dy(r, j) * cache.xhat(r, j);
      }
      ggamma[static_cast<size_t>(j)] += sum_dy_xhat;
      gbeta[static_cast<size_t>(j)] += sum_dy;
      if (dx) {
        const T g = gamma[static_cast<size_t>(j)];
        const T inv = cache.invstd[static_cast<size_t>(j)];
        for (int r = 0; r < n; ++r) {
          (*dx)(r, j) = g * inv / T(n) *
                        (T(n) * dy(r, j) - sum_dy - cache.xhat(r, j) * sum_dy_xhat);
        }
      }
    }
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma, ggamma);
    f(prefix + ".beta", beta, gbeta);
  }
  template <typename F>
  void visit_buffers(const std::string& prefix, F&& f) {
    f(prefix + ".running_mean", running_mean);
    f(prefix + ".running_var", running_var);
  }
};

}  // namespace pmq::nn
