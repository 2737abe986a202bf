#pragma once

// Forward/backward primitives for the layers used by the classifier and the
// GAN. Layout is NCHW for image batches and [N, F] for dense activations.
// Every function is pure; gradients are returned, never accumulated.

#include <cstddef>
#include <string>
#include <vector>

#include "pneumanet/tensor.hpp"

namespace pneumanet::ops {

enum class Mode { train, infer };

template <typename T>
struct LayerGrad {
  std::vector<Tensor<T>> param_grads;  // same order as the layer's parameters
  Tensor<T> input_grad;                // empty when not requested
};

// Cross-correlation (no kernel flip).
// input [N,C,H,W], kernels [O,C,KH,KW], bias [O] -> [N,O,OH,OW]
// OH = (H + 2*padding - KH) / stride + 1.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels,
                         const Tensor<T>& bias, std::size_t stride,
                         std::size_t padding);

// param_grads = {d kernels, d bias}.
template <typename T>
LayerGrad<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                             const Tensor<T>& upstream, std::size_t stride,
                             std::size_t padding, bool want_input_grad = true);

// Fractionally-strided convolution, the adjoint of conv2d_forward.
// input [N,C,H,W], kernels [C,O,KH,KW], bias [O] -> [N,O,(H-1)*stride - 2*padding + KH, ...]
template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& input, const Tensor<T>& kernels,
                                   const Tensor<T>& bias, std::size_t stride,
                                   std::size_t padding);

template <typename T>
LayerGrad<T> conv_transpose2d_backward(const Tensor<T>& input,
                                       const Tensor<T>& kernels,
                                       const Tensor<T>& upstream, std::size_t stride,
                                       std::size_t padding, bool want_input_grad = true);

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

// Ties resolve to the first maximum in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2d_forward(const Tensor<T>& input, std::size_t window,
                                   std::size_t stride);

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape,
                             const std::vector<std::size_t>& argmax,
                             const Tensor<T>& upstream);

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;  // pre-affine activations
  std::vector<T> inv_std;
};

// Batch normalization over axis 1 of [N,F] or [N,C,H,W] inputs.
// Train mode normalizes with the batch statistics and folds them into
// `stats` with running = momentum * running + (1 - momentum) * batch.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& input, const Tensor<T>& gamma,
                          const Tensor<T>& beta, double eps, double momentum,
                          RunningStats<T>& stats, BatchNormCache<T>* cache = nullptr);

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const Tensor<T>& gamma,
                          const Tensor<T>& beta, double eps,
                          const RunningStats<T>& stats);

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma,
                            const Tensor<T>& beta, double eps, Mode mode,
                            RunningStats<T>& stats, double momentum = 0.9) {
  return mode == Mode::train
             ? batchnorm_train(input, gamma, beta, eps, momentum, stats)
             : batchnorm_infer(input, gamma, beta, eps, stats);
}

// param_grads = {d gamma, d beta}.
template <typename T>
LayerGrad<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                const Tensor<T>& upstream);

// input [N,I], weights [I,O], bias [O] -> [N,O]
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights,
                        const Tensor<T>& bias);

// param_grads = {d weights, d bias}.
template <typename T>
LayerGrad<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weights,
                            const Tensor<T>& upstream, bool want_input_grad = true);

struct Activation {
  enum class Kind { relu, leaky_relu, sigmoid, tanh };
  Kind kind = Kind::relu;
  double alpha = 0.0;  // leaky_relu slope for negative inputs

  static Activation relu() { return {Kind::relu, 0.0}; }
  static Activation leaky_relu(double a) { return {Kind::leaky_relu, a}; }
  static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }
  static Activation tanh() { return {Kind::tanh, 0.0}; }

  friend bool operator==(const Activation&, const Activation&) = default;
};

std::string activation_name(Activation::Kind kind);
Activation::Kind activation_kind_from_string(const std::string& name);

// Sigmoid output is clamped into the open interval (0, 1) for T.
template <typename T>
T sigmoid(T x);

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& input, Activation act);

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& input, const Tensor<T>& output,
                              const Tensor<T>& upstream, Activation act);

}  // namespace pneumanet::ops
