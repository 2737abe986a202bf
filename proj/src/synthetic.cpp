#include "pneumanet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "pneumanet/image_io.hpp"

namespace pneumanet {

namespace fs = std::filesystem;

namespace {

double ellipse(double u, double v, double cu, double cv, double ru, double rv) {
  const double du = (u - cu) / ru, dv = (v - cv) / rv;
  return du * du + dv * dv;
}

// Smooth inside/outside mask: 1 well inside, 0 outside.
double soft_inside(double e, double edge = 0.15) { return std::clamp((1.0 - e) / edge, 0.0, 1.0); }

}  // namespace

Tensor32 synthetic_radiograph(Label label, std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  std::normal_distribution<double> noise(0.0, 0.04);

  const double shift_u = uni(-0.04, 0.04), shift_v = uni(-0.04, 0.04);
  const double gain = uni(0.85, 1.15);
  const double lung_ru = uni(0.12, 0.16), lung_rv = uni(0.26, 0.32);
  const double rib_phase = uni(0.0, 2 * std::numbers::pi), rib_freq = uni(5.0, 7.0);

  struct Blob {
    double cu, cv, sigma, amp;
  };
  std::vector<Blob> blobs;
  auto lung_blob = [&](double amp_lo, double amp_hi) {
    const bool left = u01(rng) < 0.5;
    const double cu = (left ? 0.32 : 0.68) + shift_u + uni(-0.06, 0.06);
    const double cv = 0.5 + shift_v + uni(-0.15, 0.15);
    blobs.push_back({cu, cv, uni(0.05, 0.1), uni(amp_lo, amp_hi)});
  };
  if (label == Label::pneumonia) {
    const int n = 1 + static_cast<int>(u01(rng) * 3);
    for (int i = 0; i < n; ++i) lung_blob(0.08, 0.3);
  } else if (u01(rng) < 0.3) {
    lung_blob(0.03, 0.12);
  }

  Tensor32 img({size, size, 1});
  const double s = static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / s, v = (static_cast<double>(y) + 0.5) / s;
      const double body = soft_inside(ellipse(u, v, 0.5 + shift_u, 0.55 + shift_v, 0.46, 0.5));
      const double lungs =
          std::max(soft_inside(ellipse(u, v, 0.32 + shift_u, 0.5 + shift_v, lung_ru, lung_rv)),
                   soft_inside(ellipse(u, v, 0.68 + shift_u, 0.5 + shift_v, lung_ru, lung_rv)));
      const double heart = soft_inside(ellipse(u, v, 0.55 + shift_u, 0.64 + shift_v, 0.1, 0.13));
      double val = 0.08 + 0.5 * body;
      val -= 0.32 * lungs * (1.0 - heart);
      val += 0.06 * lungs * std::sin(2 * std::numbers::pi * rib_freq * v + rib_phase);
      val += 0.12 * heart;
      for (const Blob& b : blobs) {
        const double du = u - b.cu, dv = v - b.cv;
        val += lungs * b.amp * std::exp(-(du * du + dv * dv) / (2 * b.sigma * b.sigma));
      }
      val = val * gain + noise(rng);
      img[y * size + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
    }
  }
  return img;
}

void write_synthetic_corpus(const fs::path& root, const SyntheticCorpus& corpus) {
  std::mt19937_64 rng(corpus.seed);
  for (Label label : {Label::normal, Label::pneumonia}) {
    const std::string name(label_name(label));
    const fs::path dir = root / name;
    fs::create_directories(dir);
    const std::size_t n = label == Label::normal ? corpus.normal : corpus.pneumonia;
    std::string stem = name;
    std::transform(stem.begin(), stem.end(), stem.begin(), [](unsigned char c) { return std::tolower(c); });
    for (std::size_t i = 0; i < n; ++i) {
      char file[64];
      std::snprintf(file, sizeof file, "%s_%04zu.png", stem.c_str(), i);
      write_png(dir / file, to_raw_image(synthetic_radiograph(label, corpus.size, rng)));
    }
  }
}

Tensor32 two_blob_pattern(std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double s = static_cast<double>(size);
  const double sigma = 0.12 * s;
  const double c1x = s * (0.25 + 0.06 * (u01(rng) - 0.5)), c1y = s * (0.5 + 0.2 * (u01(rng) - 0.5));
  const double c2x = s * (0.75 + 0.06 * (u01(rng) - 0.5)), c2y = s * (0.5 + 0.2 * (u01(rng) - 0.5));
  const double a1 = 0.7 + 0.25 * u01(rng), a2 = 0.7 + 0.25 * u01(rng);
  Tensor32 img({size, size, 1});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double d1 = (px - c1x) * (px - c1x) + (py - c1y) * (py - c1y);
      const double d2 = (px - c2x) * (px - c2x) + (py - c2y) * (py - c2y);
      const double v = 0.05 + a1 * std::exp(-d1 / (2 * sigma * sigma)) + a2 * std::exp(-d2 / (2 * sigma * sigma));
      img[y * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace pneumanet
