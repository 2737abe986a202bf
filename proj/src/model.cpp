#include "pneumanet/model.hpp"

#include <cmath>
#include <random>

namespace pneumanet {

std::string_view label_name(Label label) {
  return label == Label::pneumonia ? "PNEUMONIA" : "NORMAL";
}

Label label_from_string(std::string_view name) {
  if (name == "NORMAL") return Label::normal;
  if (name == "PNEUMONIA") return Label::pneumonia;
  throw InvalidArgument("unknown label '" + std::string(name) + "'");
}

CnnArchitecture CnnArchitecture::standard(std::size_t image_size) {
  CnnArchitecture arch;
  arch.height = arch.width = image_size;
  arch.blocks = {ConvBlock{32}, ConvBlock{64}};
  return arch;
}

void CnnArchitecture::validate() const {
  if (height == 0 || width == 0 || channels == 0) {
    throw InvalidArgument("architecture: input shape must be positive");
  }
  if (blocks.empty()) throw InvalidArgument("architecture: at least one conv block required");
  std::size_t prev = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const ConvBlock& b = blocks[i];
    if (b.filters == 0 || b.kernel == 0 || b.stride == 0) {
      throw InvalidArgument("architecture: block " + std::to_string(i) +
                            " has a zero filter count, kernel or stride");
    }
    if (b.filters < prev) {
      throw InvalidArgument("architecture: filter counts must be non-decreasing (block " +
                            std::to_string(i) + " has " + std::to_string(b.filters) +
                            " after " + std::to_string(prev) + ")");
    }
    prev = b.filters;
  }
  try {
    assemble<float>(*this);
  } catch (const ShapeError& e) {
    throw InvalidArgument(std::string("architecture: ") + e.what());
  }
}

nlohmann::json CnnArchitecture::to_json() const {
  nlohmann::json jb = nlohmann::json::array();
  for (const auto& b : blocks) {
    nlohmann::json act{{"kind", ops::activation_name(b.activation.kind)}};
    if (b.activation.kind == ops::Activation::Kind::leaky_relu) act["alpha"] = b.activation.alpha;
    jb.push_back({{"filters", b.filters},
                  {"kernel", b.kernel},
                  {"stride", b.stride},
                  {"padding", b.padding},
                  {"activation", act},
                  {"batchnorm", b.batchnorm},
                  {"pool", b.pool}});
  }
  return {{"height", height}, {"width", width}, {"channels", channels}, {"blocks", jb}};
}

CnnArchitecture CnnArchitecture::from_json(const nlohmann::json& j) {
  try {
    CnnArchitecture arch;
    arch.height = j.at("height").get<std::size_t>();
    arch.width = j.at("width").get<std::size_t>();
    arch.channels = j.at("channels").get<std::size_t>();
    for (const auto& jb : j.at("blocks")) {
      ConvBlock b;
      b.filters = jb.at("filters").get<std::size_t>();
      b.kernel = jb.at("kernel").get<std::size_t>();
      b.stride = jb.at("stride").get<std::size_t>();
      b.padding = jb.at("padding").get<std::size_t>();
      const auto& act = jb.at("activation");
      b.activation = {ops::activation_kind_from_string(act.at("kind").get<std::string>()),
                      act.value("alpha", 0.0)};
      b.batchnorm = jb.at("batchnorm").get<bool>();
      b.pool = jb.at("pool").get<std::size_t>();
      arch.blocks.push_back(b);
    }
    return arch;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed architecture: ") + e.what());
  }
}

template <typename T>
nn::Network<T> assemble(const CnnArchitecture& arch) {
  nn::Network<T> net({arch.channels, arch.height, arch.width});
  std::size_t in_c = arch.channels;
  for (const ConvBlock& b : arch.blocks) {
    net.template emplace<nn::Conv2d<T>>(in_c, b.filters, b.kernel, b.stride, b.padding);
    if (b.batchnorm) net.template emplace<nn::BatchNorm<T>>(b.filters);
    net.template emplace<nn::ActivationLayer<T>>(b.activation);
    if (b.pool > 0) net.template emplace<nn::MaxPool2d<T>>(b.pool, b.pool);
    in_c = b.filters;
  }
  net.template emplace<nn::Flatten<T>>();
  net.template emplace<nn::Dense<T>>(net.output_shape()[0], 1);
  net.template emplace<nn::ActivationLayer<T>>(ops::Activation::sigmoid());
  return net;
}

template <typename T>
void init_he_uniform(nn::Network<T>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < net.size(); ++i) {
    nn::Layer<T>& layer = net.layer(i);
    std::size_t fan_in = 0;
    if (auto* c = dynamic_cast<nn::Conv2d<T>*>(&layer)) fan_in = c->fan_in();
    if (auto* c = dynamic_cast<nn::ConvTranspose2d<T>*>(&layer)) fan_in = c->fan_in();
    if (auto* d = dynamic_cast<nn::Dense<T>*>(&layer)) fan_in = d->fan_in();
    if (fan_in == 0) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto params = layer.parameters();
    for (T& w : params[0]->values()) w = static_cast<T>(dist(rng));
    params[1]->fill(T(0));
  }
}

template <typename T>
nn::Network<T> build_model(const CnnArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  nn::Network<T> net = assemble<T>(arch);
  init_he_uniform(net, seed);
  return net;
}

template nn::Network<float> assemble<float>(const CnnArchitecture&);
template nn::Network<double> assemble<double>(const CnnArchitecture&);
template void init_he_uniform<float>(nn::Network<float>&, std::uint64_t);
template void init_he_uniform<double>(nn::Network<double>&, std::uint64_t);
template nn::Network<float> build_model<float>(const CnnArchitecture&, std::uint64_t);
template nn::Network<double> build_model<double>(const CnnArchitecture&, std::uint64_t);

}  // namespace pneumanet
