#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "lgps/rng.hpp"

// Layers with hand-written backward passes. Activations are matrices of shape
// (channels, batch * height * width): one column per (sample, pixel), samples
// outermost and pixels in row-major order, so each sample's feature map is a
// contiguous height x width x channels block. Linear layers view the same
// memory as (features, batch).
namespace lgps::vae {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Gathers 3x3 / stride 2 / pad 1 receptive fields of a (channels, n*h*w)
// map into (9*channels, n*(h/2)*(w/2)). col2im is its exact adjoint.
template <typename T>
Matrix<T> im2col(const Matrix<T>& x, int n, int h, int w, int channels);
template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, int n, int h, int w, int channels);

// 3x3 convolution, stride 2, padding 1: (in, h, w) -> (out, h/2, w/2).
template <typename T>
class Conv2d {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, Rng& rng);

  // Stateless inference pass; forward() additionally caches for backward().
  Matrix<T> apply(const Matrix<T>& x, int n, int h, int w) const;
  Matrix<T> forward(const Matrix<T>& x, int n, int h, int w);
  Matrix<T> backward(const Matrix<T>& dy);

  Parameter<T> weight;  // (out, 9 * in)
  Parameter<T> bias;    // (out, 1)

 private:
  int in_;
  int out_;
  int n_ = 0, h_ = 0, w_ = 0;
  Matrix<T> cols_;
};

// Transposed counterpart of Conv2d: (in, h, w) -> (out, 2h, 2w).
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d(std::string name, int in_channels, int out_channels, Rng& rng);

  Matrix<T> apply(const Matrix<T>& x, int n, int h, int w) const;
  Matrix<T> forward(const Matrix<T>& x, int n, int h, int w);
  Matrix<T> backward(const Matrix<T>& dy);

  Parameter<T> weight;  // (in, 9 * out)
  Parameter<T> bias;    // (out, 1)

 private:
  int in_;
  int out_;
  int n_ = 0, h_ = 0, w_ = 0;
  Matrix<T> x_;
};

template <typename T>
class Linear {
 public:
  Linear(std::string name, int in_features, int out_features, Rng& rng, double init_scale = 1.0);

  // x: (in, batch)
  Matrix<T> apply(const Matrix<T>& x) const;
  Matrix<T> forward(const Matrix<T>& x);
  Matrix<T> backward(const Matrix<T>& dy);

  Parameter<T> weight;  // (out, in)
  Parameter<T> bias;    // (out, 1)

 private:
  Matrix<T> x_;
};

template <typename T>
class LeakyRelu {
 public:
  explicit LeakyRelu(T slope = T(0.2)) : slope_(slope) {}
  Matrix<T> apply(const Matrix<T>& x) const;
  Matrix<T> forward(const Matrix<T>& x);
  Matrix<T> backward(const Matrix<T>& dy) const;

 private:
  T slope_;
  Matrix<T> x_;
};

template <typename T>
class Tanh {
 public:
  static Matrix<T> apply(const Matrix<T>& x);
  Matrix<T> forward(const Matrix<T>& x);
  Matrix<T> backward(const Matrix<T>& dy) const;

 private:
  Matrix<T> y_;
};

}  // namespace lgps::vae
