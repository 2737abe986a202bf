#pragma once

// Procedural stand-ins for real radiographs, used by tests, the acceptance
// suite and `pneumanet make-demo-data`. They are not medical images.

#include <cstdint>
#include <filesystem>
#include <random>

#include "pneumanet/model.hpp"

namespace pneumanet {

// Body silhouette with two darker lung fields and rib banding. PNEUMONIA
// adds one to three diffuse opacities inside the lungs; some NORMAL images
// carry a faint one, so the classes overlap.
Tensor32 synthetic_radiograph(Label label, std::size_t size, std::mt19937_64& rng);

struct SyntheticCorpus {
  std::size_t normal = 100;
  std::size_t pneumonia = 300;
  std::size_t size = 32;
  std::uint64_t seed = 0;
};

// Writes root/NORMAL/normal_0000.png ... and root/PNEUMONIA/pneumonia_0000.png ...
void write_synthetic_corpus(const std::filesystem::path& root, const SyntheticCorpus& corpus);

// 8x8-style toy pattern: two Gaussian blobs, one per horizontal half, with
// jittered centers and amplitudes, over a dim background.
Tensor32 two_blob_pattern(std::size_t size, std::mt19937_64& rng);

}  // namespace pneumanet
