#include "pneumanet/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace pneumanet {

namespace fs = std::filesystem;

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::augmented: return "augmented";
    case Provenance::generated: return "generated";
    case Provenance::original: break;
  }
  return "original";
}

Provenance provenance_from_string(std::string_view name) {
  if (name == "original") return Provenance::original;
  if (name == "augmented") return Provenance::augmented;
  if (name == "generated") return Provenance::generated;
  throw InvalidArgument("unknown provenance '" + std::string(name) + "'");
}

Tensor32 resize_bilinear(const Tensor32& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || image.dim(2) != 1) {
    throw ShapeError("resize_bilinear: expected (H, W, 1), got " + to_string(image.shape()));
  }
  if (height == 0 || width == 0) throw InvalidArgument("resize_bilinear: zero target size");
  const std::size_t ih = image.dim(0), iw = image.dim(1);
  if (ih == height && iw == width) return image;

  auto axis = [](std::size_t in, std::size_t out) {
    struct Tap {
      std::size_t lo, hi;
      double t;
    };
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      taps[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return taps;
  };
  const auto ys = axis(ih, height), xs = axis(iw, width);
  Tensor32 out({height, width, 1});
  const float* p = image.data();
  for (std::size_t y = 0; y < height; ++y) {
    const float* r0 = p + ys[y].lo * iw;
    const float* r1 = p + ys[y].hi * iw;
    for (std::size_t x = 0; x < width; ++x) {
      const auto& tx = xs[x];
      const double top = r0[tx.lo] + tx.t * (static_cast<double>(r0[tx.hi]) - r0[tx.lo]);
      const double bot = r1[tx.lo] + tx.t * (static_cast<double>(r1[tx.hi]) - r1[tx.lo]);
      out[y * width + x] = static_cast<float>(top + ys[y].t * (bot - top));
    }
  }
  return out;
}

Tensor32 preprocess(const RawImage& raw, std::size_t size) {
  if (raw.width == 0 || raw.height == 0) throw InvalidArgument("preprocess: zero-sized image");
  if (raw.channels != 1 && raw.channels != 3) {
    throw InvalidArgument("preprocess: expected 1 or 3 channels, got " +
                          std::to_string(raw.channels));
  }
  if (raw.pixels.size() != raw.width * raw.height * raw.channels) {
    throw InvalidArgument("preprocess: pixel buffer does not match dimensions");
  }
  Tensor32 gray({raw.height, raw.width, 1});
  const std::size_t n = raw.width * raw.height;
  if (raw.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) gray[i] = raw.pixels[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* px = raw.pixels.data() + 3 * i;
      gray[i] = static_cast<float>(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
  }
  Tensor32 out = resize_bilinear(gray, size, size);
  for (float& v : out.values()) v = std::clamp(v / 255.0f, 0.0f, 1.0f);
  return out;
}

LoadResult load_directory(const fs::path& root, std::size_t size) {
  if (!fs::is_directory(root)) throw InvalidArgument("dataset root " + root.string() + " is not a directory");
  LoadResult result;
  for (Label label : {Label::normal, Label::pneumonia}) {
    const fs::path dir = root / std::string(label_name(label));
    if (!fs::is_directory(dir)) {
      throw InvalidArgument("dataset root " + root.string() + " has no " +
                            std::string(label_name(label)) + "/ directory");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
    }
    std::size_t loaded = 0;
    for (const fs::path& file : files) {
      const std::string id = fs::relative(file, root).generic_string();
      try {
        result.records.push_back({id, label, preprocess(read_image_file(file), size), Provenance::original});
        ++loaded;
      } catch (const Error& e) {
        result.warnings.push_back("skipped " + file.string() + ": " + e.what());
      }
    }
    if (loaded == 0) {
      throw InvalidArgument("class " + std::string(label_name(label)) + " has no decodable images under " +
                            dir.string());
    }
  }
  std::sort(result.records.begin(), result.records.end(),
            [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
  return result;
}

std::array<std::size_t, 2> class_counts(const std::vector<ImageRecord>& records) {
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& r : records) ++counts[static_cast<int>(r.label)];
  return counts;
}

SplitDataset split(std::vector<ImageRecord> records, std::uint64_t seed, SplitRatios ratios) {
  if (records.empty()) throw InvalidArgument("split: no records");
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw InvalidArgument("split: ratios must be non-negative and sum to 1");
  }
  SplitDataset out;
  out.seed = seed;
  std::mt19937_64 rng(seed);
  for (Label label : {Label::normal, Label::pneumonia}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].label == label) idx.push_back(i);
    if (idx.empty()) continue;
    if (idx.size() < 3) {
      throw InvalidArgument("split: class " + std::string(label_name(label)) + " has only " +
                            std::to_string(idx.size()) + " records, at least 3 are needed");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * n + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n + 1e-9));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& dst = k < n_val ? out.val : k < n_val + n_test ? out.test : out.train;
      dst.push_back(std::move(records[idx[k]]));
    }
  }
  std::shuffle(out.train.begin(), out.train.end(), rng);
  return out;
}

namespace {

void put_f32_le(std::ostream& os, const Tensor32& t) {
  std::vector<unsigned char> buf(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void write_cache(const fs::path& dir, const SplitDataset& data) {
  fs::create_directories(dir);
  std::ofstream bin(dir / "cache.bin", std::ios::binary);
  if (!bin) throw Error("cannot write " + (dir / "cache.bin").string());
  nlohmann::json index;
  index["format"] = "pneumanet-cache";
  index["version"] = 1;
  index["seed"] = data.seed;
  index["data_file"] = "cache.bin";
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::size_t height = 0, width = 0;
  auto emit = [&](const std::vector<ImageRecord>& part, const char* name) {
    for (const auto& r : part) {
      if (height == 0) {
        height = r.tensor.dim(0);
        width = r.tensor.dim(1);
      }
      require_same_shape({height, width, 1}, r.tensor.shape(), "cache record " + r.id);
      entries.push_back({{"id", r.id},
                         {"label", label_name(r.label)},
                         {"provenance", provenance_name(r.provenance)},
                         {"split", name},
                         {"offset", offset}});
      put_f32_le(bin, r.tensor);
      offset += r.tensor.size() * 4;
    }
  };
  emit(data.train, "train");
  emit(data.val, "val");
  emit(data.test, "test");
  if (!bin) throw Error("short write to " + (dir / "cache.bin").string());
  index["height"] = height;
  index["width"] = width;
  index["records"] = std::move(entries);
  std::ofstream js(dir / "cache.json");
  if (!js) throw Error("cannot write " + (dir / "cache.json").string());
  js << index.dump(1) << '\n';
}

SplitDataset read_cache(const fs::path& dir) {
  std::ifstream js(dir / "cache.json");
  if (!js) throw Error("no cache index at " + (dir / "cache.json").string() + "; run `prepare` first");
  SplitDataset out;
  try {
    const auto index = nlohmann::json::parse(js);
    if (index.at("format") != "pneumanet-cache" || index.at("version") != 1) {
      throw Error("unsupported cache format in " + dir.string());
    }
    out.seed = index.at("seed").get<std::uint64_t>();
    const auto h = index.at("height").get<std::size_t>(), w = index.at("width").get<std::size_t>();
    const auto bytes = read_file_bytes(dir / index.at("data_file").get<std::string>());
    for (const auto& e : index.at("records")) {
      const auto off = e.at("offset").get<std::uint64_t>();
      if (off + h * w * 4 > bytes.size()) throw Error("cache.bin is truncated");
      ImageRecord r{e.at("id").get<std::string>(),
                    label_from_string(e.at("label").get<std::string>()),
                    Tensor32({h, w, 1}),
                    provenance_from_string(e.at("provenance").get<std::string>())};
      for (std::size_t i = 0; i < h * w; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= std::uint32_t{bytes[off + 4 * i + b]} << (8 * b);
        r.tensor[i] = std::bit_cast<float>(u);
      }
      const std::string s = e.at("split").get<std::string>();
      if (s == "train") out.train.push_back(std::move(r));
      else if (s == "val") out.val.push_back(std::move(r));
      else if (s == "test") out.test.push_back(std::move(r));
      else throw Error("unknown split '" + s + "' in cache index");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed cache index: " + std::string(e.what()));
  }
  return out;
}

}  // namespace pneumanet
