#include "pneumanet/layers.hpp"

#include <algorithm>
#include <cmath>

namespace pneumanet::nn {
namespace {

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& from) {
  require_same_shape(into.shape(), from.shape(), "gradient accumulation");
  T* dst = into.data();
  const T* src = from.data();
  for (std::size_t i = 0; i < into.size(); ++i) dst[i] += src[i];
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                     const std::string& what) {
  if (in + 2 * pad < k) {
    throw ShapeError(what + ": input extent " + std::to_string(in) + " smaller than kernel " +
                     std::to_string(k));
  }
  return (in + 2 * pad - k) / stride + 1;
}

void require_sample_rank(const Shape& input, std::size_t rank, const std::string& what) {
  if (input.size() != rank) {
    throw ShapeError(what + ": unexpected input shape " + to_string(input));
  }
}

}  // namespace

template <typename T>
std::vector<const Tensor<T>*> Layer<T>::parameters() const {
  auto* self = const_cast<Layer<T>*>(this);
  auto p = self->parameters();
  return {p.begin(), p.end()};
}

template <typename T>
std::vector<const Tensor<T>*> Layer<T>::buffers() const {
  auto* self = const_cast<Layer<T>*>(this);
  auto b = self->buffers();
  return {b.begin(), b.end()};
}

// --- Conv2d -----------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t padding)
    : stride_(stride),
      padding_(padding),
      kernels_({out_channels, in_channels, kernel, kernel}),
      bias_({out_channels}),
      dkernels_(kernels_.shape()),
      dbias_(bias_.shape()) {
  if (stride == 0) throw InvalidArgument("conv2d: stride must be positive");
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& input) const {
  require_sample_rank(input, 3, "conv2d");
  if (input[0] != kernels_.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(input) + " does not match kernels " +
                     to_string(kernels_.shape()));
  }
  return {kernels_.dim(0), conv_out(input[1], kernels_.dim(2), stride_, padding_, "conv2d"),
          conv_out(input[2], kernels_.dim(3), stride_, padding_, "conv2d")};
}

template <typename T>
nlohmann::json Conv2d<T>::config() const {
  return {{"type", type()},         {"in_channels", kernels_.dim(1)},
          {"out_channels", kernels_.dim(0)}, {"kernel", kernels_.dim(2)},
          {"stride", stride_},      {"padding", padding_}};
}

template <typename T>
Tensor<T> Conv2d<T>::infer(const Tensor<T>& input) const {
  return ops::conv2d_forward(input, kernels_, bias_, stride_, padding_);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& input, Mode) {
  input_ = input;
  return infer(input);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  auto g = ops::conv2d_backward(input_, kernels_, upstream, stride_, padding_, want_input_grad);
  accumulate(dkernels_, g.param_grads[0]);
  accumulate(dbias_, g.param_grads[1]);
  return std::move(g.input_grad);
}

// --- ConvTranspose2d --------------------------------------------------------

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in_channels, std::size_t out_channels,
                                    std::size_t kernel, std::size_t stride,
                                    std::size_t padding)
    : stride_(stride),
      padding_(padding),
      kernels_({in_channels, out_channels, kernel, kernel}),
      bias_({out_channels}),
      dkernels_(kernels_.shape()),
      dbias_(bias_.shape()) {
  if (stride == 0) throw InvalidArgument("conv_transpose2d: stride must be positive");
}

template <typename T>
Shape ConvTranspose2d<T>::output_shape(const Shape& input) const {
  require_sample_rank(input, 3, "conv_transpose2d");
  if (input[0] != kernels_.dim(0)) {
    throw ShapeError("conv_transpose2d: input " + to_string(input) +
                     " does not match kernels " + to_string(kernels_.shape()));
  }
  const std::size_t fh = (input[1] - 1) * stride_ + kernels_.dim(2);
  const std::size_t fw = (input[2] - 1) * stride_ + kernels_.dim(3);
  if (fh <= 2 * padding_ || fw <= 2 * padding_) {
    throw ShapeError("conv_transpose2d: padding too large for input " + to_string(input));
  }
  return {kernels_.dim(1), fh - 2 * padding_, fw - 2 * padding_};
}

template <typename T>
std::size_t ConvTranspose2d<T>::fan_in() const {
  const std::size_t taps = (kernels_.dim(2) * kernels_.dim(3)) / (stride_ * stride_);
  return kernels_.dim(0) * std::max<std::size_t>(taps, 1);
}

template <typename T>
nlohmann::json ConvTranspose2d<T>::config() const {
  return {{"type", type()},         {"in_channels", kernels_.dim(0)},
          {"out_channels", kernels_.dim(1)}, {"kernel", kernels_.dim(2)},
          {"stride", stride_},      {"padding", padding_}};
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::infer(const Tensor<T>& input) const {
  return ops::conv_transpose2d_forward(input, kernels_, bias_, stride_, padding_);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& input, Mode) {
  input_ = input;
  return infer(input);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  auto g = ops::conv_transpose2d_backward(input_, kernels_, upstream, stride_, padding_,
                                          want_input_grad);
  accumulate(dkernels_, g.param_grads[0]);
  accumulate(dbias_, g.param_grads[1]);
  return std::move(g.input_grad);
}

// --- BatchNorm --------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t features, double eps, double momentum)
    : eps_(eps),
      momentum_(momentum),
      gamma_({features}, T(1)),
      beta_({features}),
      dgamma_({features}),
      dbeta_({features}),
      stats_{Tensor<T>({features}), Tensor<T>({features}, T(1))} {}

template <typename T>
Shape BatchNorm<T>::output_shape(const Shape& input) const {
  if (input.empty() || input[0] != gamma_.dim(0) || (input.size() != 1 && input.size() != 3)) {
    throw ShapeError("batchnorm: input " + to_string(input) + " does not match " +
                     std::to_string(gamma_.dim(0)) + " features");
  }
  return input;
}

template <typename T>
nlohmann::json BatchNorm<T>::config() const {
  return {{"type", type()}, {"features", gamma_.dim(0)}, {"eps", eps_}, {"momentum", momentum_}};
}

template <typename T>
Tensor<T> BatchNorm<T>::infer(const Tensor<T>& input) const {
  return ops::batchnorm_infer(input, gamma_, beta_, eps_, stats_);
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& input, Mode mode) {
  cached_mode_ = mode;
  if (mode == Mode::train) {
    return ops::batchnorm_train(input, gamma_, beta_, eps_, momentum_, stats_, &cache_);
  }
  // Inference-mode forward is an affine map with fixed statistics.
  cache_.inv_std.resize(gamma_.dim(0));
  for (std::size_t f = 0; f < gamma_.dim(0); ++f) {
    cache_.inv_std[f] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats_.var[f]) + eps_));
  }
  cache_.normalized = input;
  return infer(input);
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  if (cached_mode_ == Mode::train) {
    auto g = ops::batchnorm_backward(cache_, gamma_, upstream);
    accumulate(dgamma_, g.param_grads[0]);
    accumulate(dbeta_, g.param_grads[1]);
    return want_input_grad ? std::move(g.input_grad) : Tensor<T>{};
  }
  // Infer mode: y = gamma * (x - mean) * inv_std + beta.
  const Tensor<T>& x = cache_.normalized;
  const std::size_t features = gamma_.dim(0);
  const std::size_t batch = x.dim(0);
  const std::size_t inner = x.size() / (batch * features);
  Tensor<T> dx(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t off = (n * features + f) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T xhat = (x[off + i] - stats_.mean[f]) * cache_.inv_std[f];
        dgamma_[f] += upstream[off + i] * xhat;
        dbeta_[f] += upstream[off + i];
        dx[off + i] = upstream[off + i] * gamma_[f] * cache_.inv_std[f];
      }
    }
  }
  return want_input_grad ? dx : Tensor<T>{};
}

// --- Activation -------------------------------------------------------------

template <typename T>
nlohmann::json ActivationLayer<T>::config() const {
  nlohmann::json j{{"type", type()}, {"kind", ops::activation_name(act_.kind)}};
  if (act_.kind == ops::Activation::Kind::leaky_relu) j["alpha"] = act_.alpha;
  return j;
}

template <typename T>
Tensor<T> ActivationLayer<T>::infer(const Tensor<T>& input) const {
  return ops::activation_forward(input, act_);
}

template <typename T>
Tensor<T> ActivationLayer<T>::forward(const Tensor<T>& input, Mode) {
  input_ = input;
  output_ = infer(input);
  return output_;
}

template <typename T>
Tensor<T> ActivationLayer<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  if (!want_input_grad) return {};
  return ops::activation_backward(input_, output_, upstream, act_);
}

// --- MaxPool2d --------------------------------------------------------------

template <typename T>
Shape MaxPool2d<T>::output_shape(const Shape& input) const {
  require_sample_rank(input, 3, "maxpool2d");
  if (input[1] < window_ || input[2] < window_) {
    throw ShapeError("maxpool2d: window " + std::to_string(window_) + " larger than input " +
                     to_string(input));
  }
  return {input[0], (input[1] - window_) / stride_ + 1, (input[2] - window_) / stride_ + 1};
}

template <typename T>
nlohmann::json MaxPool2d<T>::config() const {
  return {{"type", type()}, {"window", window_}, {"stride", stride_}};
}

template <typename T>
Tensor<T> MaxPool2d<T>::infer(const Tensor<T>& input) const {
  return ops::maxpool2d_forward(input, window_, stride_).output;
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& input, Mode) {
  auto res = ops::maxpool2d_forward(input, window_, stride_);
  input_shape_ = input.shape();
  argmax_ = std::move(res.argmax);
  return std::move(res.output);
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  if (!want_input_grad) return {};
  return ops::maxpool2d_backward(input_shape_, argmax_, upstream);
}

// --- Flatten / Reshape / CenterCrop -----------------------------------------

template <typename T>
nlohmann::json Flatten<T>::config() const {
  return {{"type", type()}};
}

template <typename T>
Tensor<T> Flatten<T>::infer(const Tensor<T>& input) const {
  const std::size_t n = input.dim(0);
  return input.reshaped({n, input.size() / n});
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& input, Mode) {
  input_shape_ = input.shape();
  return infer(input);
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  if (!want_input_grad) return {};
  return upstream.reshaped(input_shape_);
}

template <typename T>
Shape Reshape<T>::output_shape(const Shape& input) const {
  if (shape_size(input) != shape_size(target_)) {
    throw ShapeError("reshape: cannot view " + to_string(input) + " as " + to_string(target_));
  }
  return target_;
}

template <typename T>
nlohmann::json Reshape<T>::config() const {
  return {{"type", type()}, {"target", target_}};
}

template <typename T>
Tensor<T> Reshape<T>::infer(const Tensor<T>& input) const {
  Shape s{input.dim(0)};
  s.insert(s.end(), target_.begin(), target_.end());
  return input.reshaped(std::move(s));
}

template <typename T>
Tensor<T> Reshape<T>::forward(const Tensor<T>& input, Mode) {
  input_shape_ = input.shape();
  return infer(input);
}

template <typename T>
Tensor<T> Reshape<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  if (!want_input_grad) return {};
  return upstream.reshaped(input_shape_);
}

template <typename T>
Shape CenterCrop<T>::output_shape(const Shape& input) const {
  require_sample_rank(input, 3, "center_crop");
  if (input[1] < height_ || input[2] < width_) {
    throw ShapeError("center_crop: input " + to_string(input) + " smaller than " +
                     std::to_string(height_) + "x" + std::to_string(width_));
  }
  return {input[0], height_, width_};
}

template <typename T>
nlohmann::json CenterCrop<T>::config() const {
  return {{"type", type()}, {"height", height_}, {"width", width_}};
}

template <typename T>
Tensor<T> CenterCrop<T>::infer(const Tensor<T>& input) const {
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (h == height_ && w == width_) return input;
  if (h < height_ || w < width_) {
    throw ShapeError("center_crop: input " + to_string(input.shape()) + " too small");
  }
  const std::size_t top = (h - height_) / 2, left = (w - width_) / 2;
  Tensor<T> out({input.dim(0), input.dim(1), height_, width_});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < height_; ++y) {
      const T* src = input.data() + p * h * w + (top + y) * w + left;
      std::copy(src, src + width_, out.data() + (p * height_ + y) * width_);
    }
  }
  return out;
}

template <typename T>
Tensor<T> CenterCrop<T>::forward(const Tensor<T>& input, Mode) {
  input_shape_ = input.shape();
  return infer(input);
}

template <typename T>
Tensor<T> CenterCrop<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  if (!want_input_grad) return {};
  const std::size_t h = input_shape_[2], w = input_shape_[3];
  if (h == height_ && w == width_) return upstream;
  const std::size_t planes = input_shape_[0] * input_shape_[1];
  const std::size_t top = (h - height_) / 2, left = (w - width_) / 2;
  Tensor<T> dx(input_shape_);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < height_; ++y) {
      const T* src = upstream.data() + (p * height_ + y) * width_;
      std::copy(src, src + width_, dx.data() + p * h * w + (top + y) * w + left);
    }
  }
  return dx;
}

// --- Dense ------------------------------------------------------------------

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t out_features)
    : weights_({in_features, out_features}),
      bias_({out_features}),
      dweights_(weights_.shape()),
      dbias_(bias_.shape()) {}

template <typename T>
Shape Dense<T>::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != weights_.dim(0)) {
    throw ShapeError("dense: input " + to_string(input) + " does not match weights " +
                     to_string(weights_.shape()));
  }
  return {weights_.dim(1)};
}

template <typename T>
nlohmann::json Dense<T>::config() const {
  return {{"type", type()}, {"in_features", weights_.dim(0)}, {"out_features", weights_.dim(1)}};
}

template <typename T>
Tensor<T> Dense<T>::infer(const Tensor<T>& input) const {
  return ops::dense_forward(input, weights_, bias_);
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& input, Mode) {
  input_ = input;
  return infer(input);
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& upstream, bool want_input_grad) {
  auto g = ops::dense_backward(input_, weights_, upstream, want_input_grad);
  accumulate(dweights_, g.param_grads[0]);
  accumulate(dbias_, g.param_grads[1]);
  return std::move(g.input_grad);
}

// --- factory ----------------------------------------------------------------

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const nlohmann::json& c) {
  try {
    const std::string type = c.at("type").get<std::string>();
    auto sz = [&](const char* key) { return c.at(key).get<std::size_t>(); };
    if (type == "conv2d") {
      return std::make_unique<Conv2d<T>>(sz("in_channels"), sz("out_channels"), sz("kernel"),
                                         sz("stride"), sz("padding"));
    }
    if (type == "conv_transpose2d") {
      return std::make_unique<ConvTranspose2d<T>>(sz("in_channels"), sz("out_channels"),
                                                  sz("kernel"), sz("stride"), sz("padding"));
    }
    if (type == "batchnorm") {
      return std::make_unique<BatchNorm<T>>(sz("features"), c.at("eps").get<double>(),
                                            c.at("momentum").get<double>());
    }
    if (type == "activation") {
      ops::Activation act{ops::activation_kind_from_string(c.at("kind").get<std::string>()),
                          c.value("alpha", 0.0)};
      return std::make_unique<ActivationLayer<T>>(act);
    }
    if (type == "maxpool2d") return std::make_unique<MaxPool2d<T>>(sz("window"), sz("stride"));
    if (type == "flatten") return std::make_unique<Flatten<T>>();
    if (type == "reshape") return std::make_unique<Reshape<T>>(c.at("target").get<Shape>());
    if (type == "center_crop") return std::make_unique<CenterCrop<T>>(sz("height"), sz("width"));
    if (type == "dense") return std::make_unique<Dense<T>>(sz("in_features"), sz("out_features"));
    throw InvalidArgument("unknown layer type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed layer config: ") + e.what());
  }
}

#define PNEUMANET_INSTANTIATE_LAYERS(T)                                 \
  template class Layer<T>;                                              \
  template class Conv2d<T>;                                             \
  template class ConvTranspose2d<T>;                                    \
  template class BatchNorm<T>;                                          \
  template class ActivationLayer<T>;                                    \
  template class MaxPool2d<T>;                                          \
  template class Flatten<T>;                                            \
  template class Reshape<T>;                                            \
  template class CenterCrop<T>;                                         \
  template class Dense<T>;                                              \
  template std::unique_ptr<Layer<T>> make_layer<T>(const nlohmann::json&);

PNEUMANET_INSTANTIATE_LAYERS(float)
PNEUMANET_INSTANTIATE_LAYERS(double)

#undef PNEUMANET_INSTANTIATE_LAYERS

}  // namespace pneumanet::nn
