#pragma once

#include <memory>
#include <vector>

#include <json.hpp>

#include "pneumanet/layers.hpp"

namespace pneumanet::nn {

// Ordered layer stack with its parameter and gradient buffers. Copying a
// network deep-copies every layer.
template <typename T>
class Network {
 public:
  // input_shape excludes the batch axis, e.g. {1, 148, 148}.
  explicit Network(Shape input_shape = {}) : input_shape_(std::move(input_shape)) {}

  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  // Validates that the layer accepts the current output shape.
  Network& add(std::unique_ptr<Layer<T>> layer);

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(layer));
    return ref;
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  Shape output_shape() const;
  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  // Batch tensors carry a leading batch axis followed by input_shape().
  Tensor<T> infer(const Tensor<T>& batch) const;
  Tensor<T> forward(const Tensor<T>& batch, Mode mode);
  Tensor<T> backward(const Tensor<T>& upstream, bool want_input_grad = false);
  void zero_grad();

  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  std::vector<Tensor<T>*> gradients();
  std::vector<Tensor<T>*> buffers();
  std::vector<const Tensor<T>*> buffers() const;

  std::size_t parameter_count() const;
  std::size_t buffer_count() const;

  // {"input_shape": [...], "layers": [config...]}
  nlohmann::json describe() const;
  static Network from_description(const nlohmann::json& description);

  // Same architecture, parameters and buffers converted element-wise.
  template <typename U>
  Network<U> cast() const {
    Network<U> out = Network<U>::from_description(describe());
    auto src_p = parameters();
    auto dst_p = out.parameters();
    for (std::size_t i = 0; i < src_p.size(); ++i) *dst_p[i] = src_p[i]->template cast<U>();
    auto src_b = buffers();
    auto dst_b = out.buffers();
    for (std::size_t i = 0; i < src_b.size(); ++i) *dst_b[i] = src_b[i]->template cast<U>();
    return out;
  }

 private:
  Shape input_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace pneumanet::nn
