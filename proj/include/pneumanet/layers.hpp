#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "pneumanet/ops.hpp"
#include "pneumanet/tensor.hpp"

namespace pneumanet::nn {

using ops::Mode;

// A stateful wrapper around one primitive. `forward` caches what `backward`
// needs; `infer` is const and safe to call concurrently. Shapes passed to
// `output_shape` exclude the batch axis.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string type() const = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual nlohmann::json config() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual Tensor<T> infer(const Tensor<T>& input) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& input, Mode mode) = 0;
  // Adds parameter gradients into gradients(); returns the input gradient
  // or an empty tensor when want_input_grad is false.
  virtual Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) = 0;

  virtual std::vector<Tensor<T>*> parameters() { return {}; }
  virtual std::vector<Tensor<T>*> gradients() { return {}; }
  // Non-trainable persistent state (batchnorm running statistics).
  virtual std::vector<Tensor<T>*> buffers() { return {}; }

  std::vector<const Tensor<T>*> parameters() const;
  std::vector<const Tensor<T>*> buffers() const;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride = 1, std::size_t padding = 0);

  std::string type() const override { return "conv2d"; }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

  std::vector<Tensor<T>*> parameters() override { return {&kernels_, &bias_}; }
  std::vector<Tensor<T>*> gradients() override { return {&dkernels_, &dbias_}; }

  std::size_t fan_in() const { return kernels_.dim(1) * kernels_.dim(2) * kernels_.dim(3); }

 private:
  std::size_t stride_, padding_;
  Tensor<T> kernels_, bias_, dkernels_, dbias_;
  Tensor<T> input_;
};

template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t padding);

  std::string type() const override { return "conv_transpose2d"; }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<ConvTranspose2d>(*this);
  }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

  std::vector<Tensor<T>*> parameters() override { return {&kernels_, &bias_}; }
  std::vector<Tensor<T>*> gradients() override { return {&dkernels_, &dbias_}; }

  // Each output pixel receives about in_channels * (kernel/stride)^2 terms.
  std::size_t fan_in() const;

 private:
  std::size_t stride_, padding_;
  Tensor<T> kernels_, bias_, dkernels_, dbias_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  explicit BatchNorm(std::size_t features, double eps = 1e-5, double momentum = 0.9);

  std::string type() const override { return "batchnorm"; }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

  std::vector<Tensor<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Tensor<T>*> gradients() override { return {&dgamma_, &dbeta_}; }
  std::vector<Tensor<T>*> buffers() override { return {&stats_.mean, &stats_.var}; }

 private:
  double eps_, momentum_;
  Tensor<T> gamma_, beta_, dgamma_, dbeta_;
  ops::RunningStats<T> stats_;
  ops::BatchNormCache<T> cache_;
  Mode cached_mode_ = Mode::infer;
};

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(ops::Activation act) : act_(act) {}

  std::string type() const override { return "activation"; }
  Shape output_shape(const Shape& input) const override { return input; }
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<ActivationLayer>(*this);
  }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

  ops::Activation activation() const { return act_; }

 private:
  ops::Activation act_;
  Tensor<T> input_, output_;
};

template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {}

  std::string type() const override { return "maxpool2d"; }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

 private:
  std::size_t window_, stride_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  std::string type() const override { return "flatten"; }
  Shape output_shape(const Shape& input) const override { return {shape_size(input)}; }
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

 private:
  Shape input_shape_;
};

// Reinterprets [N, ...] as [N, target...] without moving data.
template <typename T>
class Reshape final : public Layer<T> {
 public:
  explicit Reshape(Shape target) : target_(std::move(target)) {}

  std::string type() const override { return "reshape"; }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Reshape>(*this); }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

 private:
  Shape target_;
  Shape input_shape_;
};

// Keeps the centered height x width window of each plane.
template <typename T>
class CenterCrop final : public Layer<T> {
 public:
  CenterCrop(std::size_t height, std::size_t width) : height_(height), width_(width) {}

  std::string type() const override { return "center_crop"; }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<CenterCrop>(*this); }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

 private:
  std::size_t height_, width_;
  Shape input_shape_;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in_features, std::size_t out_features);

  std::string type() const override { return "dense"; }
  Shape output_shape(const Shape& input) const override;
  nlohmann::json config() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

  Tensor<T> infer(const Tensor<T>& input) const override;
  Tensor<T> forward(const Tensor<T>& input, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad) override;

  std::vector<Tensor<T>*> parameters() override { return {&weights_, &bias_}; }
  std::vector<Tensor<T>*> gradients() override { return {&dweights_, &dbias_}; }

  std::size_t fan_in() const { return weights_.dim(0); }

 private:
  Tensor<T> weights_, bias_, dweights_, dbias_;
  Tensor<T> input_;
};

// Builds a layer from its config() document.
template <typename T>
std::unique_ptr<Layer<T>> make_layer(const nlohmann::json& config);

}  // namespace pneumanet::nn
