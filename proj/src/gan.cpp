#include "pneumanet/gan.hpp"

#include <algorithm>
#include <cmath>

namespace pneumanet {

std::size_t GanConfig::stages() const {
  const double side = static_cast<double>(std::min(height, width));
  const auto k = static_cast<long>(std::floor(std::log2(side / 4.0)));
  return static_cast<std::size_t>(std::clamp(k, 1L, 3L));
}

std::size_t GanConfig::base_height() const {
  const std::size_t f = std::size_t{1} << stages();
  return (height + f - 1) / f;
}

std::size_t GanConfig::base_width() const {
  const std::size_t f = std::size_t{1} << stages();
  return (width + f - 1) / f;
}

void GanConfig::validate() const {
  auto bad = [](const std::string& what) { throw InvalidArgument("gan: " + what); };
  if (latent_dim == 0) bad("latent_dim must be positive");
  if (height < 8 || width < 8) bad("image side must be at least 8");
  if (g_filters == 0 || d_filters == 0) bad("filter counts must be positive");
  if (!(lr_g > 0 && lr_d > 0)) bad("learning rates must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) bad("Adam betas must be in [0, 1)");
  if (batch_size < 2) bad("batch_size must be at least 2");
}

nlohmann::json GanConfig::to_json() const {
  return {{"latent_dim", latent_dim}, {"height", height},       {"width", width},
          {"g_filters", g_filters},   {"d_filters", d_filters}, {"lr_g", lr_g},
          {"lr_d", lr_d},             {"beta1", beta1},         {"beta2", beta2},
          {"batch_size", batch_size}, {"iterations", iterations}, {"seed", seed}};
}

GanConfig GanConfig::from_json(const nlohmann::json& j) {
  GanConfig c;
  try {
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.g_filters = j.value("g_filters", c.g_filters);
    c.d_filters = j.value("d_filters", c.d_filters);
    c.lr_g = j.value("lr_g", c.lr_g);
    c.lr_d = j.value("lr_d", c.lr_d);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations = j.value("iterations", c.iterations);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("gan config: ") + e.what());
  }
  c.validate();
  return c;
}

nn::Network<float> build_generator(const GanConfig& c, std::uint64_t seed) {
  c.validate();
  const std::size_t k = c.stages(), bh = c.base_height(), bw = c.base_width();
  std::size_t ch = c.g_filters << (k - 1);
  nn::Network<float> g({c.latent_dim});
  g.emplace<nn::Dense<float>>(c.latent_dim, ch * bh * bw);
  g.emplace<nn::Reshape<float>>(Shape{ch, bh, bw});
  g.emplace<nn::BatchNorm<float>>(ch);
  g.emplace<nn::ActivationLayer<float>>(ops::Activation::relu());
  for (std::size_t s = 1; s < k; ++s) {
    g.emplace<nn::ConvTranspose2d<float>>(ch, ch / 2, 4, 2, 1);
    ch /= 2;
    g.emplace<nn::BatchNorm<float>>(ch);
    g.emplace<nn::ActivationLayer<float>>(ops::Activation::relu());
  }
  g.emplace<nn::ConvTranspose2d<float>>(ch, 1, 4, 2, 1);
  const Shape full = g.output_shape();
  if (full[1] != c.height || full[2] != c.width) g.emplace<nn::CenterCrop<float>>(c.height, c.width);
  g.emplace<nn::ActivationLayer<float>>(ops::Activation::sigmoid());
  init_he_uniform(g, seed);
  return g;
}

nn::Network<float> build_discriminator(const GanConfig& c, std::uint64_t seed) {
  c.validate();
  nn::Network<float> d({1, c.height, c.width});
  std::size_t in = 1, out = c.d_filters;
  for (std::size_t s = 0; s < c.stages(); ++s) {
    d.emplace<nn::Conv2d<float>>(in, out, 4, 2, 1);
    d.emplace<nn::ActivationLayer<float>>(ops::Activation::leaky_relu(0.2));
    in = out;
    out *= 2;
  }
  d.emplace<nn::Flatten<float>>();
  d.emplace<nn::Dense<float>>(d.output_shape()[0], 1);
  d.emplace<nn::ActivationLayer<float>>(ops::Activation::sigmoid());
  init_he_uniform(d, seed);
  return d;
}

GanState make_gan(const GanConfig& config) {
  AdamConfig ag{config.lr_g, config.beta1, config.beta2, 1e-8};
  AdamConfig ad{config.lr_d, config.beta1, config.beta2, 1e-8};
  return GanState{config,
                  build_generator(config, config.seed),
                  build_discriminator(config, config.seed + 1),
                  {ag, 0, {}, {}},
                  {ad, 0, {}, {}},
                  std::mt19937_64(config.seed + 2),
                  0};
}

Tensor32 sample_latents(std::size_t count, std::size_t latent_dim, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor32 z({count, latent_dim});
  for (float& v : z.values()) v = normal(rng);
  return z;
}

Tensor32 generate_fakes(GanState& st, std::size_t n) {
  const Tensor32 z = sample_latents(n, st.config.latent_dim, st.rng);
  return st.generator.forward(z, nn::Mode::train);
}

double discriminator_step(GanState& st, const Tensor32& real, const Tensor32& fake) {
  const std::vector<int> ones(real.dim(0), 1), zeros(fake.dim(0), 0);
  st.discriminator.zero_grad();
  const auto lr = bce_loss<float>(st.discriminator.forward(real, nn::Mode::train), ones);
  st.discriminator.backward(lr.grad);
  const auto lf = bce_loss<float>(st.discriminator.forward(fake, nn::Mode::train), zeros);
  st.discriminator.backward(lf.grad);
  adam_step(st.discriminator, st.adam_d);
  return lr.value + lf.value;
}

double generator_step(GanState& st, const Tensor32& fake) {
  const std::vector<int> ones(fake.dim(0), 1);
  const auto lg = bce_loss<float>(st.discriminator.forward(fake, nn::Mode::train), ones);
  const Tensor32 dfake = st.discriminator.backward(lg.grad, true);
  st.discriminator.zero_grad();
  st.generator.zero_grad();
  st.generator.backward(dfake);
  adam_step(st.generator, st.adam_g);
  return lg.value;
}

GanLosses gan_train_step(GanState& st, const Tensor32& real) {
  const GanConfig& c = st.config;
  if (real.rank() != 4 || real.dim(0) == 0) throw InvalidArgument("gan_train_step: empty batch");
  require_same_shape({real.dim(0), 1, c.height, c.width}, real.shape(), "gan_train_step real batch");
  const std::size_t n = real.dim(0);
  if (n < 2) throw InvalidArgument("gan_train_step: batch needs at least 2 images");

  const Tensor32 fake = generate_fakes(st, n);
  GanLosses out;
  out.loss_d = discriminator_step(st, real, fake);
  out.loss_g = generator_step(st, fake);
  ++st.iteration;
  return out;
}

void train_gan(GanState& st, std::span<const Tensor32* const> real,
               const std::function<void(const GanProgress&)>& on_step) {
  if (real.empty()) throw InvalidArgument("train_gan: no real images");
  const GanConfig& c = st.config;
  std::uniform_int_distribution<std::size_t> pick(0, real.size() - 1);
  std::vector<const Tensor32*> batch(std::max<std::size_t>(2, std::min(c.batch_size, real.size())));
  for (std::size_t it = 0; it < c.iterations; ++it) {
    for (auto& b : batch) b = real[pick(st.rng)];
    const GanLosses l = gan_train_step(st, stack_images<float>(batch));
    if (on_step) on_step({it + 1, l});
  }
}

namespace {

std::vector<Tensor32> unstack(const Tensor32& batch) {
  const std::size_t n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
  std::vector<Tensor32> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(Shape{h, w, 1},
                     std::vector<float>(batch.data() + i * h * w, batch.data() + (i + 1) * h * w));
  }
  return out;
}

}  // namespace

std::vector<Tensor32> synthesize(const nn::Network<float>& generator, std::size_t count,
                                 std::uint64_t seed) {
  constexpr std::size_t kChunk = 64;
  const std::size_t latent = generator.input_shape().at(0);
  std::mt19937_64 rng(seed);
  std::vector<Tensor32> out;
  out.reserve(count);
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t m = std::min(kChunk, count - start);
    for (auto& img : unstack(generator.infer(sample_latents(m, latent, rng)))) {
      out.push_back(std::move(img));
    }
  }
  return out;
}

double discriminator_accuracy(const GanState& st, std::span<const Tensor32* const> real,
                              std::uint64_t seed) {
  if (real.empty()) throw InvalidArgument("discriminator_accuracy: no real images");
  const auto fakes = synthesize(st.generator, real.size(), seed);
  std::vector<const Tensor32*> fp;
  for (const auto& f : fakes) fp.push_back(&f);
  const auto pr = predict_batch(st.discriminator, real);
  const auto pf = predict_batch(st.discriminator, fp);
  std::size_t correct = 0;
  for (float p : pr) correct += p >= 0.5f;
  for (float p : pf) correct += p < 0.5f;
  return static_cast<double>(correct) / static_cast<double>(2 * real.size());
}

}  // namespace pneumanet
