#pragma once

#include <Eigen/Core>
#include <memory>
#include <vector>

#include "form/nn/tensor.hpp"
#include "form/rng.hpp"

namespace form::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

// Declarative layer description; also the serialization unit.
struct LayerSpec {
  enum class Kind {
    Conv,
    FullyConnected,
    ReLU,
    Dropout,
    GlobalAveragePool,
    Softmax
  };
  Kind kind = Kind::ReLU;
  int channels_out = 0;  // Conv
  int kernel = 0;        // Conv, odd
  int stride = 1;        // Conv
  int n_out = 0;         // FullyConnected
  double rate = 0.0;     // Dropout, in [0,1)
};

inline LayerSpec conv_spec(int channels_out, int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerSpec::Kind::Conv;
  s.channels_out = channels_out;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}
inline LayerSpec fc_spec(int n_out) {
  LayerSpec s;
  s.kind = LayerSpec::Kind::FullyConnected;
  s.n_out = n_out;
  return s;
}
inline LayerSpec relu_spec() { return {}; }
inline LayerSpec dropout_spec(double rate) {
  LayerSpec s;
  s.kind = LayerSpec::Kind::Dropout;
  s.rate = rate;
  return s;
}
inline LayerSpec gap_spec() {
  LayerSpec s;
  s.kind = LayerSpec::Kind::GlobalAveragePool;
  return s;
}
inline LayerSpec softmax_spec() {
  LayerSpec s;
  s.kind = LayerSpec::Kind::Softmax;
  return s;
}

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  explicit Param(std::vector<int> dims)
      : value(dims), grad(std::move(dims)) {}
  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T{0}); }
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng) = 0;
  // grad w.r.t. this layer's output -> grad w.r.t. its input; accumulates
  // into parameter grads
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual LayerSpec spec() const = 0;
  virtual std::vector<int> output_dims(const std::vector<int>& in) const = 0;
};

// ---------------------------------------------------------------------------

// 2D convolution, same padding (k/2), square kernel, via im2col + GEMM.
template <typename T>
class Conv2D : public Layer<T> {
 public:
  Conv2D(int c_in, int c_out, int kernel, int stride, Rng& rng)
      : c_in_(c_in),
        c_out_(c_out),
        k_(kernel),
        stride_(stride),
        w_({c_out, c_in * kernel * kernel}),
        b_({c_out}) {
    if (kernel % 2 == 0) throw ValidationError("Conv2D: kernel must be odd");
    if (stride < 1) throw ValidationError("Conv2D: stride must be >= 1");
    // He initialization
    double sd = std::sqrt(2.0 / (c_in * kernel * kernel));
    for (auto& x : w_.value.v) x = static_cast<T>(rng.normal(0.0, sd));
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Rng&) override {
    if (x.dims.size() != 4 || x.dims[1] != c_in_)
      throw ValidationError("Conv2D: bad input shape " + shape_str(x.dims));
    const int n = x.dims[0], h = x.dims[2], w = x.dims[3];
    const int pad = k_ / 2;
    h_in_ = h;
    w_in_ = w;
    h_out_ = (h + 2 * pad - k_) / stride_ + 1;
    w_out_ = (w + 2 * pad - k_) / stride_ + 1;
    const int cols = h_out_ * w_out_;
    const int rows = c_in_ * k_ * k_;

    cols_.assign(static_cast<std::size_t>(n) * rows * cols, T{0});
    Tensor<T> y({n, c_out_, h_out_, w_out_});
    ConstMatMap<T> wm(w_.value.v.data(), c_out_, rows);
    for (int s = 0; s < n; ++s) {
      T* col = cols_.data() + static_cast<std::size_t>(s) * rows * cols;
      im2col(x.sample(s), col);
      MatMap<T> cm(col, rows, cols);
      MatMap<T> ym(y.sample(s), c_out_, cols);
      ym.noalias() = wm * cm;
      for (int c = 0; c < c_out_; ++c)
        ym.row(c).array() += b_.value.v[static_cast<std::size_t>(c)];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int n = gy.dims[0];
    const int cols = h_out_ * w_out_;
    const int rows = c_in_ * k_ * k_;
    Tensor<T> gx({n, c_in_, h_in_, w_in_});
    MatMap<T> gwm(w_.grad.v.data(), c_out_, rows);
    ConstMatMap<T> wm(w_.value.v.data(), c_out_, rows);
    Mat<T> gcol(rows, cols);
    for (int s = 0; s < n; ++s) {
      const T* col = cols_.data() + static_cast<std::size_t>(s) * rows * cols;
      ConstMatMap<T> cm(col, rows, cols);
      ConstMatMap<T> gym(gy.sample(s), c_out_, cols);
      gwm.noalias() += gym * cm.transpose();
      for (int c = 0; c < c_out_; ++c)
        b_.grad.v[static_cast<std::size_t>(c)] += gym.row(c).sum();
      gcol.noalias() = wm.transpose() * gym;
      col2im(gcol.data(), gx.sample(s));
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&w_, &b_}; }

  LayerSpec spec() const override { return conv_spec(c_out_, k_, stride_); }

  std::vector<int> output_dims(const std::vector<int>& in) const override {
    const int pad = k_ / 2;
    return {in[0], c_out_, (in[2] + 2 * pad - k_) / stride_ + 1,
            (in[3] + 2 * pad - k_) / stride_ + 1};
  }

 private:
  void im2col(const T* img, T* col) const {
    const int pad = k_ / 2;
    const int cols = h_out_ * w_out_;
    for (int c = 0; c < c_in_; ++c) {
      const T* plane = img + static_cast<std::size_t>(c) * h_in_ * w_in_;
      for (int kr = 0; kr < k_; ++kr) {
        for (int kc = 0; kc < k_; ++kc) {
          T* dst = col + static_cast<std::size_t>((c * k_ + kr) * k_ + kc) * cols;
          for (int orow = 0; orow < h_out_; ++orow) {
            int ir = orow * stride_ - pad + kr;
            if (ir < 0 || ir >= h_in_) {
              for (int ocol = 0; ocol < w_out_; ++ocol)
                dst[orow * w_out_ + ocol] = T{0};
              continue;
            }
            const T* src_row = plane + static_cast<std::size_t>(ir) * w_in_;
            for (int ocol = 0; ocol < w_out_; ++ocol) {
              int ic = ocol * stride_ - pad + kc;
              dst[orow * w_out_ + ocol] =
                  (ic >= 0 && ic < w_in_) ? src_row[ic] : T{0};
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, T* img) const {
    const int pad = k_ / 2;
    const int cols = h_out_ * w_out_;
    std::fill(img, img + static_cast<std::size_t>(c_in_) * h_in_ * w_in_, T{0});
    for (int c = 0; c < c_in_; ++c) {
      T* plane = img + static_cast<std::size_t>(c) * h_in_ * w_in_;
      for (int kr = 0; kr < k_; ++kr) {
        for (int kc = 0; kc < k_; ++kc) {
          const T* src =
              col + static_cast<std::size_t>((c * k_ + kr) * k_ + kc) * cols;
          for (int orow = 0; orow < h_out_; ++orow) {
            int ir = orow * stride_ - pad + kr;
            if (ir < 0 || ir >= h_in_) continue;
            T* dst_row = plane + static_cast<std::size_t>(ir) * w_in_;
            for (int ocol = 0; ocol < w_out_; ++ocol) {
              int ic = ocol * stride_ - pad + kc;
              if (ic >= 0 && ic < w_in_) dst_row[ic] += src[orow * w_out_ + ocol];
            }
          }
        }
      }
    }
  }

  int c_in_, c_out_, k_, stride_;
  int h_in_ = 0, w_in_ = 0, h_out_ = 0, w_out_ = 0;
  Param<T> w_, b_;
  std::vector<T> cols_;  // cached im2col buffers for backward
};

// Fully connected; flattens any trailing dims.
template <typename T>
class Dense : public Layer<T> {
 public:
  Dense(int n_in, int n_out, Rng& rng)
      : n_in_(n_in), n_out_(n_out), w_({n_out, n_in}), b_({n_out}) {
    double sd = std::sqrt(2.0 / n_in);
    for (auto& x : w_.value.v) x = static_cast<T>(rng.normal(0.0, sd));
  }

  Tensor<T> forward(const Tensor<T>& x, bool, Rng&) override {
    if (static_cast<int>(x.sample_size()) != n_in_)
      throw ValidationError("Dense: bad input shape " + shape_str(x.dims));
    const int n = x.dims[0];
    in_cache_ = x;
    Tensor<T> y({n, n_out_});
    ConstMatMap<T> xm(x.v.data(), n, n_in_);
    ConstMatMap<T> wm(w_.value.v.data(), n_out_, n_in_);
    MatMap<T> ym(y.v.data(), n, n_out_);
    ym.noalias() = xm * wm.transpose();
    ConstMatMap<T> bm(b_.value.v.data(), 1, n_out_);
    ym.rowwise() += bm.row(0);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const int n = gy.dims[0];
    ConstMatMap<T> gym(gy.v.data(), n, n_out_);
    ConstMatMap<T> xm(in_cache_.v.data(), n, n_in_);
    MatMap<T> gwm(w_.grad.v.data(), n_out_, n_in_);
    MatMap<T> gbm(b_.grad.v.data(), 1, n_out_);
    gwm.noalias() += gym.transpose() * xm;
    gbm.row(0) += gym.colwise().sum();
    Tensor<T> gx(in_cache_.dims);
    MatMap<T> gxm(gx.v.data(), n, n_in_);
    ConstMatMap<T> wm(w_.value.v.data(), n_out_, n_in_);
    gxm.noalias() = gym * wm;
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&w_, &b_}; }
  LayerSpec spec() const override { return fc_spec(n_out_); }
  std::vector<int> output_dims(const std::vector<int>& in) const override {
    return {in[0], n_out_};
  }

 private:
  int n_in_, n_out_;
  Param<T> w_, b_;
  Tensor<T> in_cache_;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool, Rng&) override {
    Tensor<T> y = x;
    for (auto& v : y.v) v = v > T{0} ? v : T{0};
    mask_ = y;  // nonzero where active
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.v.size(); ++i)
      if (mask_.v[i] <= T{0}) gx.v[i] = T{0};
    return gx;
  }
  LayerSpec spec() const override { return relu_spec(); }
  std::vector<int> output_dims(const std::vector<int>& in) const override {
    return in;
  }

 private:
  Tensor<T> mask_;
};

// Inverted dropout; identity in eval mode.
template <typename T>
class Dropout : public Layer<T> {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0)
      throw ValidationError("Dropout: rate must be in [0,1)");
  }
  Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng) override {
    if (!training || rate_ == 0.0) {
      active_ = false;
      return x;
    }
    active_ = true;
    keep_.assign(x.v.size(), T{0});
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.v.size(); ++i) {
      if (!rng.bernoulli(rate_)) {
        keep_[i] = scale;
        y.v[i] *= scale;
      } else {
        y.v[i] = T{0};
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    if (!active_) return gy;
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= keep_[i];
    return gx;
  }
  LayerSpec spec() const override { return dropout_spec(rate_); }
  std::vector<int> output_dims(const std::vector<int>& in) const override {
    return in;
  }

 private:
  double rate_;
  bool active_ = false;
  std::vector<T> keep_;
};

// (N,C,H,W) -> (N,C) per-channel means.
template <typename T>
class GlobalAveragePool : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool, Rng&) override {
    if (x.dims.size() != 4)
      throw ValidationError("GAP: expects (N,C,H,W), got " + shape_str(x.dims));
    in_dims_ = x.dims;
    const int n = x.dims[0], c = x.dims[1];
    const std::size_t hw =
        static_cast<std::size_t>(x.dims[2]) * x.dims[3];
    Tensor<T> y({n, c});
    for (int s = 0; s < n; ++s) {
      const T* src = x.sample(s);
      for (int ch = 0; ch < c; ++ch) {
        T acc{0};
        const T* p = src + hw * ch;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        y.v[static_cast<std::size_t>(s) * c + ch] =
            acc / static_cast<T>(hw);
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(in_dims_);
    const int n = in_dims_[0], c = in_dims_[1];
    const std::size_t hw =
        static_cast<std::size_t>(in_dims_[2]) * in_dims_[3];
    const T inv = static_cast<T>(1.0) / static_cast<T>(hw);
    for (int s = 0; s < n; ++s) {
      T* dst = gx.sample(s);
      for (int ch = 0; ch < c; ++ch) {
        T g = gy.v[static_cast<std::size_t>(s) * c + ch] * inv;
        T* p = dst + hw * ch;
        for (std::size_t i = 0; i < hw; ++i) p[i] = g;
      }
    }
    return gx;
  }
  LayerSpec spec() const override { return gap_spec(); }
  std::vector<int> output_dims(const std::vector<int>& in) const override {
    return {in[0], in[1]};
  }

 private:
  std::vector<int> in_dims_;
};

// Row-wise softmax over the last axis of (N,K).
template <typename T>
class Softmax : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool, Rng&) override {
    const int n = x.dims[0];
    const int k = static_cast<int>(x.sample_size());
    Tensor<T> y = x;
    for (int s = 0; s < n; ++s) {
      T* row = y.sample(s);
      T mx = row[0];
      for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
      T sum{0};
      for (int i = 0; i < k; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
      }
      for (int i = 0; i < k; ++i) row[i] /= sum;
    }
    out_cache_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    const int n = gy.dims[0];
    const int k = static_cast<int>(gy.sample_size());
    Tensor<T> gx = gy;
    for (int s = 0; s < n; ++s) {
      const T* p = out_cache_.sample(s);
      const T* g = gy.sample(s);
      T dot{0};
      for (int i = 0; i < k; ++i) dot += p[i] * g[i];
      T* gr = gx.sample(s);
      for (int i = 0; i < k; ++i) gr[i] = p[i] * (g[i] - dot);
    }
    return gx;
  }
  LayerSpec spec() const override { return softmax_spec(); }
  std::vector<int> output_dims(const std::vector<int>& in) const override {
    return in;
  }

 private:
  Tensor<T> out_cache_;
};

}  // namespace form::nn
