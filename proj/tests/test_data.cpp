#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "pneumanet/augmentation.hpp"
#include "pneumanet/dataset.hpp"
#include "pneumanet/image_io.hpp"
#include "support/tempdir.hpp"

using namespace pneumanet;

namespace {

RawImage gray_image(std::size_t w, std::size_t h, std::uint8_t fill = 0) {
  RawImage r;
  r.width = w;
  r.height = h;
  r.channels = 1;
  r.pixels.assign(w * h, fill);
  return r;
}

RawImage random_image(std::size_t w, std::size_t h, std::size_t channels, std::mt19937_64& rng) {
  RawImage r;
  r.width = w;
  r.height = h;
  r.channels = channels;
  r.pixels.resize(w * h * channels);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  return r;
}

Tensor32 tensor_from(std::size_t h, std::size_t w, std::vector<float> v) { return Tensor32({h, w, 1}, std::move(v)); }

std::vector<ImageRecord> make_records(std::size_t normal, std::size_t pneumonia) {
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < normal + pneumonia; ++i) {
    ImageRecord r;
    r.id = (i < normal ? "NORMAL/" : "PNEUMONIA/") + std::to_string(100000 + i) + ".png";
    r.label = i < normal ? Label::normal : Label::pneumonia;
    r.tensor = Tensor32({2, 2, 1}, static_cast<float>(i % 97) / 97.0f);
    out.push_back(std::move(r));
  }
  return out;
}

std::set<std::string> ids(const std::vector<ImageRecord>& records) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.id);
  return s;
}

}  // namespace

// ---- image_io ----------------------------------------------------------------

TEST(ImageIo, DetectsFormatFromMagicBytes) {
  std::mt19937_64 rng(1);
  const auto png = encode_png(random_image(5, 4, 1, rng));
  const auto jpg = encode_jpeg(random_image(5, 4, 3, rng));
  EXPECT_EQ(detect_format(png), ImageFormat::png);
  EXPECT_EQ(detect_format(jpg), ImageFormat::jpeg);
  const std::vector<std::uint8_t> text{'h', 'e', 'l', 'l', 'o'};
  EXPECT_EQ(detect_format(text), ImageFormat::unknown);
  EXPECT_EQ(detect_format({}), ImageFormat::unknown);
}

TEST(ImageIo, PngRoundTripIsLossless) {
  std::mt19937_64 rng(2);
  for (std::size_t ch : {1u, 3u}) {
    const RawImage img = random_image(7, 5, ch, rng);
    const RawImage back = decode_image(encode_png(img));
    EXPECT_EQ(back.width, 7u);
    EXPECT_EQ(back.height, 5u);
    EXPECT_EQ(back.channels, ch);
    EXPECT_EQ(back.pixels, img.pixels);
  }
}

TEST(ImageIo, JpegRoundTripIsClose) {
  const RawImage img = gray_image(16, 16, 90);
  const RawImage back = decode_image(encode_jpeg(img));
  ASSERT_EQ(back.width, 16u);
  ASSERT_EQ(back.channels, 1u);
  for (auto p : back.pixels) EXPECT_NEAR(p, 90, 2);
}

TEST(ImageIo, RejectsGarbageAndTruncation) {
  const std::vector<std::uint8_t> text{'n', 'o', 't', ' ', 'a', 'n', ' ', 'i', 'm', 'a', 'g', 'e'};
  EXPECT_THROW(decode_image(text), ImageDecodeError);
  std::mt19937_64 rng(3);
  auto png = encode_png(random_image(32, 32, 1, rng));
  png.resize(png.size() / 2);
  EXPECT_THROW(decode_image(png), ImageDecodeError);
  auto jpg = encode_jpeg(random_image(32, 32, 1, rng));
  jpg.resize(20);
  EXPECT_THROW(decode_image(jpg), ImageDecodeError);
}

TEST(ImageIo, ToRawImageRounds) {
  const Tensor32 t = tensor_from(1, 3, {0.0f, 0.5f, 1.0f});
  const RawImage r = to_raw_image(t);
  EXPECT_EQ(r.pixels, (std::vector<std::uint8_t>{0, 128, 255}));
}

// ---- preprocess --------------------------------------------------------------

TEST(Preprocess, ConstantWhiteBecomesOne) {
  const Tensor32 t = preprocess(gray_image(148, 148, 255));
  EXPECT_EQ(t.shape(), (Shape{148, 148, 1}));
  for (float v : t.values()) EXPECT_EQ(v, 1.0f);
}

TEST(Preprocess, ConstantIsResizeInvariant) {
  for (auto [w, h] : {std::pair{148, 148}, {300, 200}, {37, 91}, {1, 1}}) {
    const Tensor32 t = preprocess(gray_image(w, h, 128));
    for (float v : t.values()) ASSERT_EQ(v, static_cast<float>(128.0 / 255.0));
  }
}

TEST(Preprocess, CheckerboardHalvesToBlockMean) {
  RawImage img = gray_image(296, 296);
  for (std::size_t y = 0; y < 296; ++y)
    for (std::size_t x = 0; x < 296; ++x) img.pixels[y * 296 + x] = (x + y) % 2 ? 255 : 0;
  const Tensor32 t = preprocess(img);
  for (float v : t.values()) ASSERT_EQ(v, 0.5f);
}

TEST(Preprocess, LuminanceWeights) {
  RawImage img;
  img.width = img.height = 1;
  img.channels = 3;
  img.pixels = {200, 100, 50};
  const Tensor32 t = preprocess(img, 1);
  EXPECT_NEAR(t[0], (0.299 * 200 + 0.587 * 100 + 0.114 * 50) / 255.0, 1e-6);
}

TEST(Preprocess, SecondResizeIsIdentity) {
  std::mt19937_64 rng(4);
  const Tensor32 once = preprocess(random_image(211, 173, 1, rng));
  const Tensor32 twice = resize_bilinear(once, 148, 148);
  EXPECT_EQ(once.storage(), twice.storage());
}

TEST(Preprocess, RejectsEmptyImage) { EXPECT_THROW(preprocess(gray_image(0, 5)), InvalidArgument); }

// ---- load_directory ----------------------------------------------------------

TEST(LoadDirectory, ReadsLayoutAndSkipsCorruptFiles) {
  testutil::TempDir dir;
  std::mt19937_64 rng(5);
  std::filesystem::create_directories(dir / "NORMAL");
  std::filesystem::create_directories(dir / "PNEUMONIA");
  for (int i = 0; i < 3; ++i)
    write_png(dir.path() / "NORMAL" / ("n" + std::to_string(i) + ".png"), random_image(20, 30, 1, rng));
  for (int i = 0; i < 5; ++i) {
    const auto bytes = encode_jpeg(random_image(40, 25, 3, rng));
    write_file_bytes(dir.path() / "PNEUMONIA" / ("p" + std::to_string(i) + (i % 2 ? ".JPG" : ".jpeg")), bytes);
  }
  { std::ofstream(dir.path() / "NORMAL" / "broken.png") << "definitely not a png"; }
  { std::ofstream(dir.path() / "NORMAL" / "readme.txt") << "ignored"; }

  const LoadResult res = load_directory(dir.path(), 16);
  ASSERT_EQ(res.records.size(), 8u);
  ASSERT_EQ(res.warnings.size(), 1u);
  EXPECT_NE(res.warnings[0].find("broken.png"), std::string::npos);
  const auto counts = class_counts(res.records);
  EXPECT_EQ(counts[0], 3u);
  EXPECT_EQ(counts[1], 5u);
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    const auto& r = res.records[i];
    if (i > 0) {
      EXPECT_LT(res.records[i - 1].id, r.id);
    }
    EXPECT_EQ(r.label, r.id.rfind("NORMAL/", 0) == 0 ? Label::normal : Label::pneumonia);
    EXPECT_EQ(r.tensor.shape(), (Shape{16, 16, 1}));
    EXPECT_EQ(r.provenance, Provenance::original);
    for (float v : r.tensor.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  const LoadResult again = load_directory(dir.path(), 16);
  ASSERT_EQ(again.records.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(again.records[i].id, res.records[i].id);
    EXPECT_EQ(again.records[i].tensor.storage(), res.records[i].tensor.storage());
  }
}

TEST(LoadDirectory, EmptyClassIsRejected) {
  testutil::TempDir dir;
  std::mt19937_64 rng(6);
  std::filesystem::create_directories(dir / "NORMAL");
  std::filesystem::create_directories(dir / "PNEUMONIA");
  write_png(dir.path() / "NORMAL" / "a.png", random_image(4, 4, 1, rng));
  EXPECT_THROW(load_directory(dir.path(), 8), InvalidArgument);
}

// ---- split -------------------------------------------------------------------

TEST(Split, ExactRatiosForOneThousand) {
  const SplitDataset d = split(make_records(1000, 3), 1);
  const auto tr = class_counts(d.train), va = class_counts(d.val), te = class_counts(d.test);
  EXPECT_EQ(tr[0], 800u);
  EXPECT_EQ(va[0], 100u);
  EXPECT_EQ(te[0], 100u);
}

TEST(Split, FloorRemainderRuleForEleven) {
  const SplitDataset d = split(make_records(11, 11), 2);
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(class_counts(d.train)[c], 9u);
    EXPECT_EQ(class_counts(d.val)[c], 1u);
    EXPECT_EQ(class_counts(d.test)[c], 1u);
  }
}

TEST(Split, ClassWithFewerThanThreeIsRejected) {
  EXPECT_THROW(split(make_records(2, 10), 0), InvalidArgument);
  EXPECT_THROW(split({}, 0), InvalidArgument);
}

TEST(Split, SeedDeterminism) {
  const auto a = split(make_records(40, 60), 7), b = split(make_records(40, 60), 7), c = split(make_records(40, 60), 8);
  std::vector<std::string> order_a, order_b, order_c;
  for (const auto& r : a.train) order_a.push_back(r.id);
  for (const auto& r : b.train) order_b.push_back(r.id);
  for (const auto& r : c.train) order_c.push_back(r.id);
  EXPECT_EQ(order_a, order_b);
  EXPECT_EQ(ids(a.val), ids(b.val));
  EXPECT_NE(order_a, order_c);
  EXPECT_EQ(c.train.size(), a.train.size());
  EXPECT_EQ(c.val.size(), a.val.size());
}

TEST(Split, PartitionPropertyOverRandomDatasets) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> n(3, 120);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n0 = n(rng), n1 = n(rng);
    const auto records = make_records(n0, n1);
    const SplitDataset d = split(records, rng());
    const auto tr = ids(d.train), va = ids(d.val), te = ids(d.test);
    ASSERT_EQ(tr.size() + va.size() + te.size(), n0 + n1);
    std::set<std::string> all(tr);
    all.insert(va.begin(), va.end());
    all.insert(te.begin(), te.end());
    ASSERT_EQ(all, ids(records));
    for (int c = 0; c < 2; ++c) {
      const std::size_t count = c == 0 ? n0 : n1;
      const auto floor10 = static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(count) + 1e-9));
      ASSERT_EQ(class_counts(d.val)[c], floor10);
      ASSERT_EQ(class_counts(d.test)[c], floor10);
    }
  }
}

TEST(Cache, RoundTripIsBitExact) {
  testutil::TempDir dir;
  std::mt19937_64 rng(10);
  auto records = make_records(12, 20);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& r : records)
    for (float& v : r.tensor.values()) v = u(rng);
  const SplitDataset d = split(records, 42);
  write_cache(dir.path(), d);
  const SplitDataset back = read_cache(dir.path());
  EXPECT_EQ(back.seed, 42u);
  auto same = [](const std::vector<ImageRecord>& a, const std::vector<ImageRecord>& b) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].id, b[i].id);
      EXPECT_EQ(a[i].label, b[i].label);
      EXPECT_EQ(a[i].provenance, b[i].provenance);
      EXPECT_EQ(a[i].tensor.shape(), b[i].tensor.shape());
      EXPECT_EQ(a[i].tensor.storage(), b[i].tensor.storage());
    }
  };
  same(d.train, back.train);
  same(d.val, back.val);
  same(d.test, back.test);
}

TEST(Cache, MissingIndexIsAnError) {
  testutil::TempDir dir;
  EXPECT_THROW(read_cache(dir.path()), Error);
}

// ---- augmentation ------------------------------------------------------------

namespace {

AugmentationConfig still_config() {
  AugmentationConfig c;
  c.rotation_max_deg = 0;
  c.zoom_low = c.zoom_high = 1.0;
  c.shear_max_deg = 0;
  c.hflip_prob = 0;
  return c;
}

Tensor32 random_image_tensor(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0, 1);
  Tensor32 t({h, w, 1});
  for (float& v : t.values()) v = u(rng);
  return t;
}

// Clockwise quarter turns of an n x n grid (y down): out[y][x] = in[n-1-x][y].
Tensor32 rotate_cw_oracle(const Tensor32& in, int quarter_turns) {
  const std::size_t n = in.dim(0);
  Tensor32 cur = in;
  for (int q = 0; q < quarter_turns; ++q) {
    Tensor32 next({n, n, 1});
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) next.at({y, x, 0}) = cur.at({n - 1 - x, y, 0});
    cur = next;
  }
  return cur;
}

}  // namespace

TEST(Augmentation, DegenerateRangesGiveIdentityParams) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(sample_params(still_config(), rng).is_identity());
}

TEST(Augmentation, SampleCoverageAndDeterminism) {
  AugmentationConfig c;
  std::mt19937_64 rng(12), rng2(12);
  double lo = 1e9, hi = -1e9;
  for (int i = 0; i < 10000; ++i) {
    const AffineParams p = sample_params(c, rng);
    const AffineParams q = sample_params(c, rng2);
    ASSERT_EQ(p.angle_deg, q.angle_deg);
    ASSERT_EQ(p.zoom, q.zoom);
    ASSERT_EQ(p.hflip, q.hflip);
    ASSERT_LE(std::abs(p.angle_deg), 40.0);
    ASSERT_TRUE(p.zoom >= 0.8 && p.zoom <= 1.2);
    ASSERT_LE(std::abs(p.shear_deg), 10.0);
    lo = std::min(lo, p.angle_deg);
    hi = std::max(hi, p.angle_deg);
  }
  EXPECT_GE((hi - lo) / 80.0, 0.95);
}

TEST(Augmentation, InvalidConfigIsRejected) {
  AugmentationConfig c;
  c.zoom_low = 1.5;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.hflip_prob = 2;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.zoom_low = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Augmentation, ConfigJsonRoundTrip) {
  AugmentationConfig c;
  c.rotation_max_deg = 12;
  c.zoom_low = 0.9;
  c.interpolation = Interpolation::nearest;
  c.seed = 99;
  const AugmentationConfig back = AugmentationConfig::from_json(c.to_json());
  EXPECT_EQ(back.rotation_max_deg, 12);
  EXPECT_EQ(back.zoom_low, 0.9);
  EXPECT_EQ(back.interpolation, Interpolation::nearest);
  EXPECT_EQ(back.seed, 99u);
}

TEST(Augmentation, IdentityIsExact) {
  std::mt19937_64 rng(13);
  const Tensor32 img = random_image_tensor(9, 13, rng);
  const Tensor32 out = apply_affine(img, AffineParams{}, AugmentationConfig{});
  EXPECT_EQ(out.storage(), img.storage());
}

TEST(Augmentation, FlipIsAnInvolution) {
  std::mt19937_64 rng(14);
  const Tensor32 img = random_image_tensor(7, 10, rng);
  AffineParams flip;
  flip.hflip = true;
  const Tensor32 once = apply_affine(img, flip, {});
  EXPECT_NE(once.storage(), img.storage());
  EXPECT_EQ(once.at({2, 0, 0}), img.at({2, 9, 0}));
  EXPECT_EQ(apply_affine(once, flip, {}).storage(), img.storage());
}

TEST(Augmentation, QuarterTurnOfTwoByTwo) {
  AugmentationConfig c;
  c.interpolation = Interpolation::nearest;
  AffineParams p;
  p.angle_deg = 90;
  // [[1,2],[3,4]] in tenths, since outputs are clamped to [0, 1].
  const Tensor32 out = apply_affine(tensor_from(2, 2, {0.1f, 0.2f, 0.3f, 0.4f}), p, c);
  EXPECT_EQ(out.storage(), (std::vector<float>{0.3f, 0.1f, 0.4f, 0.2f}));
}

TEST(Augmentation, GridRotationsMatchPermutationOracle) {
  AugmentationConfig c;
  c.interpolation = Interpolation::nearest;
  std::mt19937_64 rng(15);
  for (std::size_t n : {1u, 2u, 3u, 4u, 7u, 12u}) {
    const Tensor32 img = random_image_tensor(n, n, rng);
    for (int q = 1; q <= 3; ++q) {
      AffineParams p;
      p.angle_deg = 90.0 * q;
      EXPECT_EQ(apply_affine(img, p, c).storage(), rotate_cw_oracle(img, q).storage()) << "n=" << n << " q=" << q;
      p.angle_deg = -90.0 * q;
      EXPECT_EQ(apply_affine(img, p, c).storage(), rotate_cw_oracle(img, 4 - q).storage()) << "n=" << n << " q=-" << q;
    }
  }
}

TEST(Augmentation, RotationPreservesConstantInterior) {
  const std::size_t n = 33;
  const float c = 0.7f;
  const Tensor32 img({n, n, 1}, c);
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    AffineParams p;
    p.angle_deg = std::uniform_real_distribution<double>(-40, 40)(rng);
    const Tensor32 out = apply_affine(img, p, {});
    const double mid = (n - 1) / 2.0;
    std::size_t changed = 0;
    double sum = 0;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const float v = out.at({y, x, 0});
        sum += v;
        if (v != c) ++changed;
        // Any pixel whose preimage stays a full pixel inside the border is untouched.
        if (std::hypot(y - mid, x - mid) <= mid - 1.0) {
          ASSERT_EQ(v, c);
        }
        ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
      }
    const double mean_shift = std::abs(sum / (n * n) - c);
    EXPECT_LE(mean_shift, c * static_cast<double>(changed) / (n * n) + 1e-9);
  }
}

TEST(Augmentation, FillValueOutsideTheImage) {
  AugmentationConfig c;
  c.fill_value = 0.25f;
  AffineParams p;
  p.zoom = 0.5;  // shrinks, exposing the border
  const Tensor32 out = apply_affine(Tensor32({10, 10, 1}, 1.0f), p, c);
  EXPECT_EQ(out.at({0, 0, 0}), 0.25f);
  EXPECT_EQ(out.at({5, 5, 0}), 1.0f);
}

TEST(Augmentation, ZoomMagnifiesAboutTheCenter) {
  AugmentationConfig c;
  c.interpolation = Interpolation::nearest;
  AffineParams p;
  p.zoom = 2.0;
  Tensor32 img({8, 8, 1});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) img.at({y, x, 0}) = (y >= 2 && y < 6 && x >= 2 && x < 6) ? 1.0f : 0.0f;
  const Tensor32 out = apply_affine(img, p, c);
  for (float v : out.values()) EXPECT_EQ(v, 1.0f);
}

TEST(ExpandClass, CountsAndEmptySources) {
  AugmentationConfig c;
  EXPECT_TRUE(expand_class({}, 0, c).empty());
  EXPECT_THROW(expand_class({}, 3, c), InvalidArgument);
  std::mt19937_64 rng(17);
  std::vector<Tensor32> pool;
  for (int i = 0; i < 5; ++i) pool.push_back(random_image_tensor(3, 3, rng));
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 5, target = rng() % 40;
    std::vector<const Tensor32*> src;
    for (std::size_t i = 0; i < n; ++i) src.push_back(&pool[i]);
    c.seed = rng();
    ASSERT_EQ(expand_class(src, target, c).size(), target);
  }
}

TEST(ExpandClass, TableSizedNormalExpansionUsesEachSourceOnceOrTwice) {
  // Identity transforms make each output an exact copy of its source, and
  // sources carry distinct values so the copies can be attributed.
  const std::size_t n = 1349, target = 2534;
  std::vector<Tensor32> pool;
  for (std::size_t i = 0; i < n; ++i) pool.push_back(Tensor32({2, 2, 1}, static_cast<float>(i) / n));
  std::vector<const Tensor32*> src;
  for (const auto& t : pool) src.push_back(&t);
  const auto out = expand_class(src, target, still_config());
  ASSERT_EQ(out.size(), target);
  std::vector<int> uses(n, 0);
  for (const auto& t : out) {
    const auto i = static_cast<std::size_t>(std::lround(t[0] * n));
    ASSERT_LT(i, n);
    ASSERT_EQ(t.storage(), pool[i].storage());
    ++uses[i];
  }
  for (int u : uses) ASSERT_TRUE(u == 1 || u == 2);
  EXPECT_EQ(std::count(uses.begin(), uses.end(), 2), static_cast<long>(target - n));
}

TEST(ExpandClass, OutputsAreValidAndReproducible) {
  std::mt19937_64 rng(18);
  std::vector<Tensor32> pool;
  for (int i = 0; i < 4; ++i) pool.push_back(random_image_tensor(148, 148, rng));
  std::vector<const Tensor32*> src{&pool[0], &pool[1], &pool[2], &pool[3]};
  AugmentationConfig c;
  c.seed = 5;
  const auto a = expand_class(src, 6, c), b = expand_class(src, 6, c);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].shape(), (Shape{148, 148, 1}));
    EXPECT_EQ(a[i].storage(), b[i].storage());
    for (float v : a[i].values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  // A prefix of a longer run is the shorter run.
  const auto longer = expand_class(src, 9, c);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].storage(), longer[i].storage());
}
