#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "pneumanet/gan.hpp"
#include "pneumanet/synthetic.hpp"
#include "support/gradcheck.hpp"

using namespace pneumanet;

namespace {

GanConfig small_config(std::size_t side = 16) {
  GanConfig c;
  c.height = c.width = side;
  c.latent_dim = 12;
  c.g_filters = 8;
  c.d_filters = 4;
  c.batch_size = 4;
  c.seed = 3;
  return c;
}

std::vector<float> flatten(std::vector<const Tensor32*> tensors) {
  std::vector<float> out;
  for (const auto* t : tensors) out.insert(out.end(), t->values().begin(), t->values().end());
  return out;
}

std::vector<float> params_of(const nn::Network<float>& net) { return flatten(net.parameters()); }

Tensor32 real_batch(const GanConfig& c, std::size_t n, std::mt19937_64& rng) {
  std::vector<Tensor32> imgs;
  for (std::size_t i = 0; i < n; ++i) imgs.push_back(two_blob_pattern(c.height, rng));
  std::vector<const Tensor32*> ptrs;
  for (const auto& t : imgs) ptrs.push_back(&t);
  return stack_images<float>(ptrs);
}

}  // namespace

TEST(GanConfigTest, StagesAndBaseSize) {
  GanConfig c;
  EXPECT_EQ(c.stages(), 3u);
  EXPECT_EQ(c.base_height(), 19u);  // 19 * 8 = 152, cropped to 148
  c.height = c.width = 8;
  EXPECT_EQ(c.stages(), 1u);
  EXPECT_EQ(c.base_height(), 4u);
  c.height = c.width = 32;
  EXPECT_EQ(c.stages(), 3u);
  EXPECT_EQ(c.base_height(), 4u);
  c.height = 4;
  EXPECT_THROW(c.validate(), InvalidArgument);
  const GanConfig back = GanConfig::from_json(small_config().to_json());
  EXPECT_EQ(back.to_json(), small_config().to_json());
}

TEST(Generator, DefaultShapeAndRange) {
  GanConfig c;
  const auto g = build_generator(c, 1);
  EXPECT_EQ(g.output_shape(), (Shape{1, 148, 148}));
  std::mt19937_64 rng(1);
  const Tensor32 out = g.infer(sample_latents(4, c.latent_dim, rng));
  EXPECT_EQ(out.shape(), (Shape{4, 1, 148, 148}));
  for (float v : out.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Generator, DeterministicAndRejectsWrongLatentSize) {
  const GanConfig c = small_config();
  const auto g = build_generator(c, 2);
  std::mt19937_64 rng(2);
  const Tensor32 z = sample_latents(3, c.latent_dim, rng);
  EXPECT_EQ(g.infer(z).storage(), g.infer(z).storage());
  EXPECT_EQ(build_generator(c, 2).infer(z).storage(), g.infer(z).storage());
  EXPECT_THROW(g.infer(Tensor32({3, c.latent_dim + 1})), Error);
}

TEST(Generator, ZeroWeightsGiveSigmoidOfFinalBias) {
  for (std::size_t side : {8u, 16u, 148u}) {
    GanConfig c = small_config(side);
    auto g = build_generator(c, 3);
    for (Tensor32* p : g.parameters()) p->fill(0.0f);
    // The last layer with parameters is the output transposed convolution.
    std::size_t last = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!g.layer(i).parameters().empty()) last = i;
    const float b = 0.37f;
    g.layer(last).parameters().back()->fill(b);
    std::mt19937_64 rng(3);
    const Tensor32 out = g.forward(sample_latents(2, c.latent_dim, rng), nn::Mode::train);
    const float want = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(b))));
    for (float v : out.values()) ASSERT_NEAR(v, want, 1e-7f) << "side " << side;
  }
}

TEST(Discriminator, ZeroWeightsGiveOneHalf) {
  const GanConfig c = small_config();
  auto d = build_discriminator(c, 4);
  for (Tensor32* p : d.parameters()) p->fill(0.0f);
  std::mt19937_64 rng(4);
  const Tensor32 out = d.infer(real_batch(c, 5, rng));
  EXPECT_EQ(out.shape(), (Shape{5, 1}));
  for (float v : out.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Discriminator, PerImageIndependence) {
  const GanConfig c = small_config();
  const auto d = build_discriminator(c, 5);
  std::mt19937_64 rng(5);
  const Tensor32 batch = real_batch(c, 4, rng);
  const std::size_t plane = c.height * c.width;
  Tensor32 reversed(batch.shape());
  for (std::size_t i = 0; i < 4; ++i)
    std::memcpy(reversed.data() + i * plane, batch.data() + (3 - i) * plane, plane * sizeof(float));
  const Tensor32 a = d.infer(batch), b = d.infer(reversed);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a[i], b[3 - i]);
  EXPECT_THROW(d.infer(Tensor32({1, 1, c.height + 1, c.width})), Error);
}

TEST(Discriminator, InputGradientMatchesFiniteDifferences) {
  const GanConfig c = small_config();
  auto d = build_discriminator(c, 6).cast<double>();
  std::mt19937_64 rng(6);
  Tensor64 x = gradcheck::random_tensor({2, 1, c.height, c.width}, rng, 0, 1);
  const Tensor64 w = gradcheck::random_tensor({2, 1}, rng, -1, 1);
  d.forward(x, nn::Mode::train);
  const Tensor64 dx = d.backward(w, true);
  gradcheck::Report rep;
  const double h = 1e-5;
  for (int k = 0; k < 200; ++k) {
    const std::size_t i = rng() % x.size();
    const double keep = x[i];
    x[i] = keep + h;
    const double up = gradcheck::weighted_sum(d.forward(x, nn::Mode::train), w);
    x[i] = keep - h;
    const double down = gradcheck::weighted_sum(d.forward(x, nn::Mode::train), w);
    x[i] = keep;
    rep.add(dx[i], (up - down) / (2 * h), "x[" + std::to_string(i) + "]");
  }
  EXPECT_LE(rep.max_rel, 1e-3) << rep.worst;
}

TEST(GanStep, UntrainedDiscriminatorLossIsTwoLn2) {
  const GanConfig c = small_config();
  GanState st = make_gan(c);
  for (Tensor32* p : st.discriminator.parameters()) p->fill(0.0f);
  std::mt19937_64 rng(7);
  const GanLosses l = gan_train_step(st, real_batch(c, 4, rng));
  EXPECT_NEAR(l.loss_d, 2 * std::log(2.0), 1e-6);
  EXPECT_NEAR(l.loss_d, 1.386, 5e-4);
  EXPECT_EQ(st.iteration, 1u);
}

TEST(GanStep, UpdatesAreIsolated) {
  const GanConfig c = small_config();
  GanState st = make_gan(c);
  std::mt19937_64 rng(8);
  const Tensor32 real = real_batch(c, 4, rng);

  const auto g0 = params_of(st.generator), d0 = params_of(st.discriminator);
  const Tensor32 fake = generate_fakes(st, 4);
  discriminator_step(st, real, fake);
  EXPECT_EQ(params_of(st.generator), g0);
  const auto d1 = params_of(st.discriminator);
  EXPECT_NE(d1, d0);

  generator_step(st, fake);
  EXPECT_EQ(params_of(st.discriminator), d1);
  EXPECT_NE(params_of(st.generator), g0);
  for (Tensor32* gr : st.discriminator.gradients())
    for (float v : gr->values()) ASSERT_EQ(v, 0.0f);
}

TEST(GanStep, ReproducibleAndValidated) {
  const GanConfig c = small_config();
  GanState a = make_gan(c), b = make_gan(c);
  std::mt19937_64 rng(9);
  const Tensor32 real = real_batch(c, 4, rng);
  for (int i = 0; i < 3; ++i) {
    const GanLosses la = gan_train_step(a, real), lb = gan_train_step(b, real);
    EXPECT_EQ(la.loss_d, lb.loss_d);
    EXPECT_EQ(la.loss_g, lb.loss_g);
  }
  EXPECT_EQ(params_of(a.generator), params_of(b.generator));
  EXPECT_EQ(params_of(a.discriminator), params_of(b.discriminator));

  EXPECT_THROW(gan_train_step(a, Tensor32({0, 1, c.height, c.width})), Error);
  EXPECT_THROW(gan_train_step(a, real_batch(c, 1, rng)), InvalidArgument);
  EXPECT_THROW(gan_train_step(a, Tensor32({4, 1, c.height + 8, c.width + 8})), Error);
}

TEST(GanTraining, ToyRunStaysFiniteAndInRange) {
  GanConfig c = small_config(8);
  c.iterations = 150;
  c.batch_size = 16;
  GanState st = make_gan(c);
  std::mt19937_64 rng(10);
  std::vector<Tensor32> data;
  for (int i = 0; i < 64; ++i) data.push_back(two_blob_pattern(8, rng));
  std::vector<const Tensor32*> ptrs;
  for (const auto& t : data) ptrs.push_back(&t);
  std::size_t steps = 0;
  train_gan(st, ptrs, [&](const GanProgress& p) {
    ++steps;
    ASSERT_TRUE(std::isfinite(p.losses.loss_d) && std::isfinite(p.losses.loss_g)) << "iteration " << p.iteration;
  });
  EXPECT_EQ(steps, 150u);
  for (const auto& img : synthesize(st.generator, 32, 1))
    for (float v : img.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  const double acc = discriminator_accuracy(st, ptrs, 2);
  EXPECT_TRUE(acc >= 0.0 && acc <= 1.0);
}

TEST(Synthesize, CountsShapesAndDeterminism) {
  const GanConfig c = small_config();
  const auto g = build_generator(c, 11);
  EXPECT_TRUE(synthesize(g, 0, 1).empty());
  const auto a = synthesize(g, 70, 5), b = synthesize(g, 70, 5), other = synthesize(g, 70, 6);
  ASSERT_EQ(a.size(), 70u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].shape(), (Shape{16, 16, 1}));
    EXPECT_EQ(a[i].storage(), b[i].storage());
  }
  EXPECT_NE(a[0].storage(), other[0].storage());
}

TEST(Synthesize, TableSizedNormalBatchAtFullResolution) {
  GanConfig c;
  c.g_filters = 2;  // keeps the run short; the output geometry is unchanged
  const auto g = build_generator(c, 12);
  const auto imgs = synthesize(g, 2534, 7);
  ASSERT_EQ(imgs.size(), 2534u);
  for (const auto& img : imgs) {
    ASSERT_EQ(img.shape(), (Shape{148, 148, 1}));
    for (float v : img.values()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}
