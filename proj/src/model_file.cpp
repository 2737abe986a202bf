#include "pneumanet/model_file.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace pneumanet {

namespace fs = std::filesystem;
using Kind = ModelFileError::Kind;

ModelFileError::ModelFileError(Kind kind, const std::string& message)
    : Error(std::string("model file (") + pneumanet::to_string(kind) + "): " + message), kind_(kind) {}

const char* to_string(ModelFileError::Kind kind) {
  switch (kind) {
    case Kind::io: return "io";
    case Kind::malformed: return "malformed";
    case Kind::bad_magic: return "bad_magic";
    case Kind::unsupported_version: return "unsupported_version";
    case Kind::checksum_mismatch: return "checksum_mismatch";
    case Kind::shape_mismatch: return "shape_mismatch";
  }
  return "unknown";
}

std::string ModelFile::version_tag() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", checksum);
  return std::string("pnmx") + std::to_string(kModelFormatVersion) + "-" + buf;
}

namespace {

constexpr char kMagic[4] = {'P', 'N', 'M', 'X'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ModelFileError(Kind::malformed, std::string("truncated while reading ") + what);
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) {
    const std::uint8_t* p = take(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t{p[b]} << (8 * b);
    return v;
  }
  std::uint64_t u64(const char* what) {
    const std::uint8_t* p = take(8, what);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t{p[b]} << (8 * b);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

nlohmann::json shapes_of(const std::vector<const Tensor32*>& tensors) {
  nlohmann::json out = nlohmann::json::array();
  for (const Tensor32* t : tensors) out.push_back(t->shape());
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const nn::Network<float>& net, const std::string& kind,
                                          const nlohmann::json& meta) {
  const auto params = net.parameters();
  const auto buffers = net.buffers();
  nlohmann::json desc;
  desc["kind"] = kind;
  desc["network"] = net.describe();
  desc["meta"] = meta;
  desc["parameter_shapes"] = shapes_of(params);
  desc["buffer_shapes"] = shapes_of(buffers);
  const std::string text = desc.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kModelFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  std::uint64_t count = 0;
  for (const Tensor32* t : params) count += t->size();
  for (const Tensor32* t : buffers) count += t->size();
  put_u64(out, count);
  const std::size_t payload_start = out.size();
  auto emit = [&](const Tensor32* t) {
    for (float v : t->values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  };
  for (const Tensor32* t : params) emit(t);
  for (const Tensor32* t : buffers) emit(t);
  put_u32(out, crc32_of(out.data() + payload_start, out.size() - payload_start));
  return out;
}

ModelFile deserialize_model(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
  if (head > 0 && std::memcmp(bytes.data(), kMagic, head) != 0) {
    throw ModelFileError(Kind::bad_magic, "missing PNMX signature");
  }
  if (head < 4) {
    throw ModelFileError(Kind::malformed, "truncated while reading magic");
  }
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kModelFormatVersion) {
    throw ModelFileError(Kind::unsupported_version, "format version " + std::to_string(version) +
                                                        ", this build reads version " +
                                                        std::to_string(kModelFormatVersion));
  }
  const std::uint32_t desc_len = in.u32("descriptor length");
  const std::uint8_t* desc_ptr = in.take(desc_len, "descriptor");
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(desc_ptr, desc_ptr + desc_len);
  } catch (const nlohmann::json::exception& e) {
    throw ModelFileError(Kind::malformed, std::string("descriptor is not JSON: ") + e.what());
  }
  const std::uint64_t count = in.u64("value count");
  if (count > in.remaining() / 4) {
    throw ModelFileError(Kind::malformed, "payload shorter than the declared " + std::to_string(count) + " values");
  }
  const std::uint8_t* payload = in.take(static_cast<std::size_t>(count) * 4, "payload");
  const std::uint32_t stored = in.u32("checksum");
  if (in.remaining() != 0) throw ModelFileError(Kind::malformed, "trailing bytes after checksum");
  const std::uint32_t actual = crc32_of(payload, static_cast<std::size_t>(count) * 4);
  if (stored != actual) throw ModelFileError(Kind::checksum_mismatch, "payload CRC-32 does not match");

  ModelFile mf;
  mf.checksum = actual;
  try {
    mf.kind = desc.at("kind").get<std::string>();
    mf.meta = desc.value("meta", nlohmann::json::object());
    mf.network = nn::Network<float>::from_description(desc.at("network"));
    auto check = [](const std::vector<Tensor32*>& tensors, const nlohmann::json& shapes, const char* what) {
      if (shapes.size() != tensors.size()) {
        throw ModelFileError(Kind::shape_mismatch, std::string(what) + " count differs from the architecture");
      }
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (shapes[i].get<Shape>() != tensors[i]->shape()) {
          throw ModelFileError(Kind::shape_mismatch, std::string(what) + " " + std::to_string(i) +
                                                         ": declared " + to_string(shapes[i].get<Shape>()) +
                                                         ", architecture has " + to_string(tensors[i]->shape()));
        }
      }
    };
    auto params = mf.network.parameters();
    auto buffers = mf.network.buffers();
    check(params, desc.at("parameter_shapes"), "parameter");
    check(buffers, desc.at("buffer_shapes"), "buffer");
    std::uint64_t expected = 0;
    for (const Tensor32* t : params) expected += t->size();
    for (const Tensor32* t : buffers) expected += t->size();
    if (expected != count) {
      throw ModelFileError(Kind::shape_mismatch, "payload has " + std::to_string(count) +
                                                     " values, architecture needs " + std::to_string(expected));
    }
    std::size_t pos = 0;
    auto fill = [&](Tensor32* t) {
      for (float& v : t->values()) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= std::uint32_t{payload[pos + b]} << (8 * b);
        v = std::bit_cast<float>(u);
        pos += 4;
      }
    };
    for (Tensor32* t : params) fill(t);
    for (Tensor32* t : buffers) fill(t);
  } catch (const ModelFileError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFileError(Kind::malformed, std::string("descriptor: ") + e.what());
  } catch (const Error& e) {
    throw ModelFileError(Kind::malformed, std::string("descriptor: ") + e.what());
  }
  return mf;
}

void save_model(const fs::path& path, const nn::Network<float>& net, const std::string& kind,
                const nlohmann::json& meta) {
  const auto bytes = serialize_model(net, kind, meta);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw ModelFileError(Kind::io, "cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ModelFileError(Kind::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw ModelFileError(Kind::io, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

ModelFile load_model(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ModelFileError(Kind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return deserialize_model(bytes);
}

}  // namespace pneumanet
