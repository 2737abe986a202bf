#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pneumanet/image_io.hpp"
#include "pneumanet/model.hpp"

namespace pneumanet {

constexpr std::size_t kImageSize = 148;

enum class Provenance { original, augmented, generated };

std::string_view provenance_name(Provenance p);
Provenance provenance_from_string(std::string_view name);

struct ImageRecord {
  std::string id;  // path relative to the dataset root, '/' separated
  Label label = Label::normal;
  Tensor32 tensor;  // (H, W, 1) in [0, 1]
  Provenance provenance = Provenance::original;
};

// Luminance-reduce RGB, bilinear resize to size x size, divide by 255.
Tensor32 preprocess(const RawImage& raw, std::size_t size = kImageSize);

// Half-pixel-centered bilinear resampling with edge clamping. Same-size
// input is returned unchanged.
Tensor32 resize_bilinear(const Tensor32& image, std::size_t height, std::size_t width);

struct LoadResult {
  std::vector<ImageRecord> records;  // sorted by id
  std::vector<std::string> warnings;  // one per skipped file
};

// Reads root/NORMAL and root/PNEUMONIA (*.png, *.jpg, *.jpeg, any case).
LoadResult load_directory(const std::filesystem::path& root, std::size_t size = kImageSize);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitDataset {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> val;
  std::vector<ImageRecord> test;
  std::uint64_t seed = 0;
};

// Per class: shuffle, then val = floor(val * n), test = floor(test * n),
// train = the rest. The train list is shuffled again across classes.
SplitDataset split(std::vector<ImageRecord> records, std::uint64_t seed, SplitRatios ratios = {});

// Per-class record counts, indexed by Label.
std::array<std::size_t, 2> class_counts(const std::vector<ImageRecord>& records);

// cache.bin holds little-endian float32 pixels back to back; cache.json maps
// each id to label, provenance, split and byte offset.
void write_cache(const std::filesystem::path& dir, const SplitDataset& data);
SplitDataset read_cache(const std::filesystem::path& dir);

}  // namespace pneumanet
