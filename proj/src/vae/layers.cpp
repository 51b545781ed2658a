#include "lgps/vae/layers.hpp"

#include <cmath>
#include <limits>

#include "lgps/error.hpp"

namespace lgps::vae {
namespace {

template <typename T>
Matrix<T> random_normal(int rows, int cols, double stddev, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(rng.normal(0.0, stddev));
  }
  return m;
}

template <typename T>
Parameter<T> make_param(std::string name, Matrix<T> value) {
  Parameter<T> p{std::move(name), std::move(value), {}};
  p.zero_grad();
  return p;
}

void check_even(int h, int w) {
  if (h % 2 != 0 || w % 2 != 0) fail(ErrorKind::kInvalidArgument, "feature map sides must be even");
}

}  // namespace

template <typename T>
Matrix<T> im2col(const Matrix<T>& x, int n, int h, int w, int channels) {
  check_even(h, w);
  const int ho = h / 2, wo = w / 2;
  Matrix<T> cols = Matrix<T>::Zero(9 * channels, static_cast<Eigen::Index>(n) * ho * wo);
  const T* src = x.data();
  T* dst = cols.data();
  const Eigen::Index rows = cols.rows();
  for (int s = 0; s < n; ++s) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        T* col = dst + ((static_cast<Eigen::Index>(s) * ho + oy) * wo + ox) * rows;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= w) continue;
            const T* in = src + ((static_cast<Eigen::Index>(s) * h + iy) * w + ix) * channels;
            T* out = col + (ky * 3 + kx) * channels;
            for (int c = 0; c < channels; ++c) out[c] = in[c];
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, int n, int h, int w, int channels) {
  check_even(h, w);
  const int ho = h / 2, wo = w / 2;
  Matrix<T> x = Matrix<T>::Zero(channels, static_cast<Eigen::Index>(n) * h * w);
  const T* src = cols.data();
  T* dst = x.data();
  const Eigen::Index rows = cols.rows();
  for (int s = 0; s < n; ++s) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const T* col = src + ((static_cast<Eigen::Index>(s) * ho + oy) * wo + ox) * rows;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= w) continue;
            T* out = dst + ((static_cast<Eigen::Index>(s) * h + iy) * w + ix) * channels;
            const T* in = col + (ky * 3 + kx) * channels;
            for (int c = 0; c < channels; ++c) out[c] += in[c];
          }
        }
      }
    }
  }
  return x;
}

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, Rng& rng)
    : weight(make_param<T>(name + ".weight",
                           random_normal<T>(out_channels, 9 * in_channels,
                                            std::sqrt(2.0 / (9.0 * in_channels)), rng))),
      bias(make_param<T>(name + ".bias", Matrix<T>::Zero(out_channels, 1))),
      in_(in_channels),
      out_(out_channels) {}

template <typename T>
Matrix<T> Conv2d<T>::apply(const Matrix<T>& x, int n, int h, int w) const {
  if (x.rows() != in_ || x.cols() != static_cast<Eigen::Index>(n) * h * w) {
    fail(ErrorKind::kInvalidArgument, weight.name + ": input shape mismatch");
  }
  Matrix<T> y = weight.value * im2col(x, n, h, w, in_);
  y.colwise() += bias.value.col(0);
  return y;
}

template <typename T>
Matrix<T> Conv2d<T>::forward(const Matrix<T>& x, int n, int h, int w) {
  if (x.rows() != in_ || x.cols() != static_cast<Eigen::Index>(n) * h * w) {
    fail(ErrorKind::kInvalidArgument, weight.name + ": input shape mismatch");
  }
  n_ = n;
  h_ = h;
  w_ = w;
  cols_ = im2col(x, n, h, w, in_);
  Matrix<T> y = weight.value * cols_;
  y.colwise() += bias.value.col(0);
  return y;
}

template <typename T>
Matrix<T> Conv2d<T>::backward(const Matrix<T>& dy) {
  weight.grad.noalias() += dy * cols_.transpose();
  bias.grad += dy.rowwise().sum();
  const Matrix<T> dcols = weight.value.transpose() * dy;
  return col2im(dcols, n_, h_, w_, in_);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::string name, int in_channels, int out_channels, Rng& rng)
    : weight(make_param<T>(name + ".weight",
                           random_normal<T>(in_channels, 9 * out_channels,
                                            std::sqrt(2.0 / (2.25 * in_channels)), rng))),
      bias(make_param<T>(name + ".bias", Matrix<T>::Zero(out_channels, 1))),
      in_(in_channels),
      out_(out_channels) {}

template <typename T>
Matrix<T> ConvTranspose2d<T>::apply(const Matrix<T>& x, int n, int h, int w) const {
  if (x.rows() != in_ || x.cols() != static_cast<Eigen::Index>(n) * h * w) {
    fail(ErrorKind::kInvalidArgument, weight.name + ": input shape mismatch");
  }
  const Matrix<T> cols = weight.value.transpose() * x;
  Matrix<T> y = col2im(cols, n, 2 * h, 2 * w, out_);
  y.colwise() += bias.value.col(0);
  return y;
}

template <typename T>
Matrix<T> ConvTranspose2d<T>::forward(const Matrix<T>& x, int n, int h, int w) {
  Matrix<T> y = apply(x, n, h, w);
  n_ = n;
  h_ = h;
  w_ = w;
  x_ = x;
  return y;
}

template <typename T>
Matrix<T> ConvTranspose2d<T>::backward(const Matrix<T>& dy) {
  bias.grad += dy.rowwise().sum();
  const Matrix<T> dcols = im2col(dy, n_, 2 * h_, 2 * w_, out_);
  weight.grad.noalias() += x_ * dcols.transpose();
  return weight.value * dcols;
}

template <typename T>
Linear<T>::Linear(std::string name, int in_features, int out_features, Rng& rng, double init_scale)
    : weight(make_param<T>(name + ".weight",
                           random_normal<T>(out_features, in_features,
                                            init_scale * std::sqrt(2.0 / (in_features + out_features)),
                                            rng))),
      bias(make_param<T>(name + ".bias", Matrix<T>::Zero(out_features, 1))) {}

template <typename T>
Matrix<T> Linear<T>::apply(const Matrix<T>& x) const {
  if (x.rows() != weight.value.cols()) {
    fail(ErrorKind::kInvalidArgument, weight.name + ": input shape mismatch");
  }
  Matrix<T> y = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

template <typename T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x) {
  Matrix<T> y = apply(x);
  x_ = x;
  return y;
}

template <typename T>
Matrix<T> Linear<T>::backward(const Matrix<T>& dy) {
  weight.grad.noalias() += dy * x_.transpose();
  bias.grad += dy.rowwise().sum();
  return weight.value.transpose() * dy;
}

template <typename T>
Matrix<T> LeakyRelu<T>::apply(const Matrix<T>& x) const {
  const T slope = slope_;
  return x.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
}

template <typename T>
Matrix<T> LeakyRelu<T>::forward(const Matrix<T>& x) {
  x_ = x;
  return apply(x);
}

template <typename T>
Matrix<T> LeakyRelu<T>::backward(const Matrix<T>& dy) const {
  const T slope = slope_;
  return dy.binaryExpr(x_, [slope](T g, T v) { return v > T(0) ? g : slope * g; });
}

template <typename T>
Matrix<T> Tanh<T>::apply(const Matrix<T>& x) {
  // Clamp so outputs stay strictly inside (-1, 1) even where tanh rounds to +/-1.
  const T bound = T(1) - std::numeric_limits<T>::epsilon();
  return x.array().tanh().max(-bound).min(bound).matrix();
}

template <typename T>
Matrix<T> Tanh<T>::forward(const Matrix<T>& x) {
  y_ = apply(x);
  return y_;
}

template <typename T>
Matrix<T> Tanh<T>::backward(const Matrix<T>& dy) const {
  return (dy.array() * (T(1) - y_.array().square())).matrix();
}

#define LGPS_INSTANTIATE_LAYERS(T)                                                  \
  template Matrix<T> im2col<T>(const Matrix<T>&, int, int, int, int);               \
  template Matrix<T> col2im<T>(const Matrix<T>&, int, int, int, int);               \
  template class Conv2d<T>;                                                         \
  template class ConvTranspose2d<T>;                                                \
  template class Linear<T>;                                                         \
  template class LeakyRelu<T>;                                                      \
  template class Tanh<T>;

LGPS_INSTANTIATE_LAYERS(float)
LGPS_INSTANTIATE_LAYERS(double)

#undef LGPS_INSTANTIATE_LAYERS

}  // namespace lgps::vae
