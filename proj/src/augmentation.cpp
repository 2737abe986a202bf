#include "pneumanet/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pneumanet {

void AugmentationConfig::validate() const {
  auto bad = [](const std::string& what) { throw InvalidArgument("augmentation: " + what); };
  if (!(rotation_max_deg >= 0)) bad("rotation_max_deg must be >= 0");
  if (!(shear_max_deg >= 0 && shear_max_deg < 90)) bad("shear_max_deg must be in [0, 90)");
  if (!(zoom_low > 0 && zoom_high > 0)) bad("zoom bounds must be positive");
  if (!(zoom_low <= zoom_high)) bad("zoom_low must not exceed zoom_high");
  if (!(hflip_prob >= 0 && hflip_prob <= 1)) bad("hflip_prob must be in [0, 1]");
  if (!(fill_value >= 0 && fill_value <= 1)) bad("fill_value must be in [0, 1]");
}

nlohmann::json AugmentationConfig::to_json() const {
  return {{"rotation_max_deg", rotation_max_deg},
          {"zoom_range", {zoom_low, zoom_high}},
          {"shear_max_deg", shear_max_deg},
          {"hflip_prob", hflip_prob},
          {"fill_value", fill_value},
          {"interpolation", interpolation == Interpolation::nearest ? "nearest" : "bilinear"},
          {"seed", seed}};
}

AugmentationConfig AugmentationConfig::from_json(const nlohmann::json& j) {
  AugmentationConfig c;
  try {
    c.rotation_max_deg = j.value("rotation_max_deg", c.rotation_max_deg);
    if (j.contains("zoom_range")) {
      c.zoom_low = j.at("zoom_range").at(0).get<double>();
      c.zoom_high = j.at("zoom_range").at(1).get<double>();
    }
    c.shear_max_deg = j.value("shear_max_deg", c.shear_max_deg);
    c.hflip_prob = j.value("hflip_prob", c.hflip_prob);
    c.fill_value = j.value("fill_value", c.fill_value);
    const std::string interp = j.value("interpolation", std::string("bilinear"));
    if (interp == "nearest") c.interpolation = Interpolation::nearest;
    else if (interp != "bilinear") throw InvalidArgument("augmentation: unknown interpolation '" + interp + "'");
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("augmentation config: ") + e.what());
  }
  c.validate();
  return c;
}

AffineParams sample_params(const AugmentationConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double ua = u(rng), uz = u(rng), us = u(rng), uf = u(rng);
  AffineParams p;
  p.angle_deg = -c.rotation_max_deg + 2.0 * c.rotation_max_deg * ua;
  p.zoom = c.zoom_low + (c.zoom_high - c.zoom_low) * uz;
  p.shear_deg = -c.shear_max_deg + 2.0 * c.shear_max_deg * us;
  p.hflip = uf < c.hflip_prob;
  return p;
}

namespace {

void check_image(const Tensor32& image) {
  if (image.rank() != 3 || image.dim(2) != 1) {
    throw ShapeError("augmentation: expected (H, W, 1) image, got " + to_string(image.shape()));
  }
}

Tensor32 mirror(const Tensor32& image) {
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor32 out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = image[y * w + (w - 1 - x)];
  return out;
}

}  // namespace

Tensor32 apply_affine(const Tensor32& image, const AffineParams& p, const AugmentationConfig& c) {
  check_image(image);
  if (p.is_identity()) return image;
  const bool pure_flip = p.angle_deg == 0.0 && p.zoom == 1.0 && p.shear_deg == 0.0;
  if (pure_flip) return mirror(image);
  if (!(p.zoom > 0)) throw InvalidArgument("apply_affine: zoom must be positive");

  const std::size_t h = image.dim(0), w = image.dim(1);
  const double cx = (static_cast<double>(w) - 1) / 2, cy = (static_cast<double>(h) - 1) / 2;
  const double rad = p.angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double sh = std::tan(p.shear_deg * std::numbers::pi / 180.0);

  // forward: q = F R Z S p; sample at p = S^-1 Z^-1 R^-1 F^-1 q.
  auto source = [&](double qx, double qy, double& px, double& py) {
    if (p.hflip) qx = -qx;
    const double rx = cs * qx + sn * qy;
    const double ry = -sn * qx + cs * qy;
    const double zx = rx / p.zoom, zy = ry / p.zoom;
    px = zx - sh * zy;
    py = zy;
  };

  constexpr double kEdge = 1e-9;
  const double max_x = static_cast<double>(w) - 1, max_y = static_cast<double>(h) - 1;
  Tensor32 out(image.shape());
  const float* src = image.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double px, py;
      source(static_cast<double>(x) - cx, static_cast<double>(y) - cy, px, py);
      px += cx;
      py += cy;
      float v = c.fill_value;
      if (c.interpolation == Interpolation::nearest) {
        const double rx = std::floor(px + 0.5), ry = std::floor(py + 0.5);
        if (rx >= 0 && ry >= 0 && rx <= max_x && ry <= max_y) {
          v = src[static_cast<std::size_t>(ry) * w + static_cast<std::size_t>(rx)];
        }
      } else if (px >= -kEdge && py >= -kEdge && px <= max_x + kEdge && py <= max_y + kEdge) {
        px = std::clamp(px, 0.0, max_x);
        py = std::clamp(py, 0.0, max_y);
        const auto x0 = static_cast<std::size_t>(px), y0 = static_cast<std::size_t>(py);
        const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double tx = px - static_cast<double>(x0), ty = py - static_cast<double>(y0);
        const double a = src[y0 * w + x0], b = src[y0 * w + x1];
        const double cc = src[y1 * w + x0], d = src[y1 * w + x1];
        const double top = a + tx * (b - a), bot = cc + tx * (d - cc);
        v = static_cast<float>(top + ty * (bot - top));
      }
      out[y * w + x] = std::clamp(v, 0.0f, 1.0f);
    }
  }
  return out;
}

std::vector<Tensor32> expand_class(std::span<const Tensor32* const> sources, std::size_t target_extra,
                                   const AugmentationConfig& config) {
  config.validate();
  if (target_extra == 0) return {};
  if (sources.empty()) throw InvalidArgument("expand_class: no source images");
  std::vector<Tensor32> out;
  out.reserve(target_extra);
  for (std::size_t i = 0; i < target_extra; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(std::uint64_t{i} >> 32)};
    std::mt19937_64 rng(seq);
    out.push_back(apply_affine(*sources[i % sources.size()], sample_params(config, rng), config));
  }
  return out;
}

}  // namespace pneumanet
