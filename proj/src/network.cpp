#include "pneumanet/network.hpp"

namespace pneumanet::nn {

template <typename T>
Network<T>::Network(const Network& other) : input_shape_(other.input_shape_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
Network<T>& Network<T>::add(std::unique_ptr<Layer<T>> layer) {
  layer->output_shape(output_shape());
  layers_.push_back(std::move(layer));
  return *this;
}

template <typename T>
Shape Network<T>::output_shape() const {
  Shape s = input_shape_;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

namespace {

void check_batch(const Shape& expected_sample, const Shape& batch) {
  Shape sample(batch.begin() + (batch.empty() ? 0 : 1), batch.end());
  if (batch.empty() || sample != expected_sample) {
    throw ShapeError("network input: shape mismatch, expected [N]+" + to_string(expected_sample) +
                     " but got " + to_string(batch));
  }
}

}  // namespace

template <typename T>
Tensor<T> Network<T>::infer(const Tensor<T>& batch) const {
  check_batch(input_shape_, batch.shape());
  Tensor<T> x = batch;
  for (const auto& l : layers_) x = l->infer(x);
  return x;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& batch, Mode mode) {
  check_batch(input_shape_, batch.shape());
  Tensor<T> x = batch;
  for (auto& l : layers_) x = l->forward(x, mode);
  return x;
}

template <typename T>
Tensor<T> Network<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  Tensor<T> g = upstream;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g, i > 0 || want_input_grad);
  }
  return g;
}

template <typename T>
void Network<T>::zero_grad() {
  for (Tensor<T>* g : gradients()) g->fill(T(0));
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_) {
    auto p = l->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Network<T>::parameters() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& l : layers_) {
    auto p = static_cast<const Layer<T>&>(*l).parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::gradients() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_) {
    auto g = l->gradients();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::buffers() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_) {
    auto b = l->buffers();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Network<T>::buffers() const {
  std::vector<const Tensor<T>*> out;
  for (const auto& l : layers_) {
    auto b = static_cast<const Layer<T>&>(*l).buffers();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename T>
std::size_t Network<T>::buffer_count() const {
  std::size_t n = 0;
  for (const auto* b : buffers()) n += b->size();
  return n;
}

template <typename T>
nlohmann::json Network<T>::describe() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back(l->config());
  return {{"input_shape", input_shape_}, {"layers", std::move(layers)}};
}

template <typename T>
Network<T> Network<T>::from_description(const nlohmann::json& description) {
  Shape input;
  try {
    input = description.at("input_shape").get<Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed network description: ") + e.what());
  }
  Network net(input);
  for (const auto& c : description.at("layers")) net.add(make_layer<T>(c));
  return net;
}

template class Network<float>;
template class Network<double>;

}  // namespace pneumanet::nn
