#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pneumanet/network.hpp"

namespace pneumanet {

// PNEUMONIA is the positive class throughout.
enum class Label : int { normal = 0, pneumonia = 1 };

std::string_view label_name(Label label);
Label label_from_string(std::string_view name);

constexpr double kDecisionThreshold = 0.5;

// Ties go to PNEUMONIA.
inline Label label_for_probability(double p) {
  return p >= kDecisionThreshold ? Label::pneumonia : Label::normal;
}

struct ConvBlock {
  std::size_t filters = 32;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  ops::Activation activation = ops::Activation::relu();
  bool batchnorm = true;
  std::size_t pool = 2;  // 0 disables pooling

  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

// conv blocks -> flatten -> dense(1) -> sigmoid
struct CnnArchitecture {
  std::size_t height = 148;
  std::size_t width = 148;
  std::size_t channels = 1;
  std::vector<ConvBlock> blocks;

  // [conv 32 3x3 pad 1, BN, ReLU, pool 2] -> [conv 64 ..., pool 2]
  static CnnArchitecture standard(std::size_t image_size = 148);

  // Throws InvalidArgument describing the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  static CnnArchitecture from_json(const nlohmann::json& j);

  friend bool operator==(const CnnArchitecture&, const CnnArchitecture&) = default;
};

template <typename T>
nn::Network<T> assemble(const CnnArchitecture& arch);

// He-uniform weights (limit sqrt(6 / fan_in)), zero biases, unit gamma.
template <typename T>
void init_he_uniform(nn::Network<T>& net, std::uint64_t seed);

template <typename T>
nn::Network<T> build_model(const CnnArchitecture& arch, std::uint64_t seed);

}  // namespace pneumanet
