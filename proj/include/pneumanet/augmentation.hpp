#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "pneumanet/tensor.hpp"

namespace pneumanet {

enum class Interpolation { bilinear, nearest };

struct AugmentationConfig {
  double rotation_max_deg = 40.0;
  double zoom_low = 0.8;
  double zoom_high = 1.2;
  double shear_max_deg = 10.0;
  double hflip_prob = 0.5;
  float fill_value = 0.0f;
  Interpolation interpolation = Interpolation::bilinear;
  std::uint64_t seed = 0;

  // Throws InvalidArgument naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static AugmentationConfig from_json(const nlohmann::json& j);
};

// One sampled transform. Positive angles rotate clockwise on screen
// (y axis pointing down); zoom > 1 magnifies; shear slants rows along x.
struct AffineParams {
  double angle_deg = 0.0;
  double zoom = 1.0;
  double shear_deg = 0.0;
  bool hflip = false;

  bool is_identity() const { return angle_deg == 0.0 && zoom == 1.0 && shear_deg == 0.0 && !hflip; }
};

// Draws angle, zoom, shear and flip in that order, each from one uniform.
AffineParams sample_params(const AugmentationConfig& config, std::mt19937_64& rng);

// Applies shear, zoom, rotation then flip about the image center by
// inverse mapping. Reads outside the image give fill_value; the result is
// clamped to [0, 1]. Identity and pure-flip transforms are exact copies.
Tensor32 apply_affine(const Tensor32& image, const AffineParams& params,
                      const AugmentationConfig& config);

// target_extra new images; output i transforms source i % n with
// parameters drawn from a generator seeded by (config.seed, i).
std::vector<Tensor32> expand_class(std::span<const Tensor32* const> sources,
                                   std::size_t target_extra, const AugmentationConfig& config);

}  // namespace pneumanet
