#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "pneumanet/training.hpp"

namespace pneumanet {

struct GanConfig {
  std::size_t latent_dim = 100;
  std::size_t height = 148;
  std::size_t width = 148;
  std::size_t g_filters = 32;  // channels before the last upsampling stage
  std::size_t d_filters = 32;  // channels after the first downsampling stage
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t batch_size = 32;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;

  // Number of stride-2 stages in each network, derived from the image size.
  std::size_t stages() const;
  // Side of the generator's first feature map, ceil(size / 2^stages).
  std::size_t base_height() const;
  std::size_t base_width() const;

  void validate() const;
  nlohmann::json to_json() const;
  static GanConfig from_json(const nlohmann::json& j);  // missing keys keep defaults
};

// dense -> reshape -> BN -> ReLU -> [convT 4x4/2 -> BN -> ReLU]* -> convT 4x4/2
// -> center crop -> sigmoid. Input [N, latent_dim], output [N, 1, H, W].
nn::Network<float> build_generator(const GanConfig& config, std::uint64_t seed);

// [conv 4x4/2 -> LeakyReLU(0.2)]* -> flatten -> dense(1) -> sigmoid.
nn::Network<float> build_discriminator(const GanConfig& config, std::uint64_t seed);

struct GanState {
  GanConfig config;
  nn::Network<float> generator;
  nn::Network<float> discriminator;
  AdamState<float> adam_g;
  AdamState<float> adam_d;
  std::mt19937_64 rng;  // latent draws and real-batch selection
  std::uint64_t iteration = 0;
};

GanState make_gan(const GanConfig& config);

struct GanLosses {
  double loss_d = 0;  // mean BCE on reals (label 1) + mean BCE on fakes (label 0)
  double loss_g = 0;  // mean BCE of fakes labelled 1 through the updated discriminator
};

// One discriminator step then one generator step. real_batch is
// [N, 1, H, W] with N >= 2 (the generator batch-normalizes N fakes).
GanLosses gan_train_step(GanState& state, const Tensor32& real_batch);

// The pieces of gan_train_step. generate_fakes runs the generator in
// training mode and must precede generator_step, which backpropagates
// through those cached activations.
Tensor32 generate_fakes(GanState& state, std::size_t count);
double discriminator_step(GanState& state, const Tensor32& real_batch, const Tensor32& fake_batch);
double generator_step(GanState& state, const Tensor32& fake_batch);

// Standard-normal latents [count, latent_dim].
Tensor32 sample_latents(std::size_t count, std::size_t latent_dim, std::mt19937_64& rng);

struct GanProgress {
  std::size_t iteration;
  GanLosses losses;
};

// Runs config.iterations steps, drawing batches uniformly with replacement
// from `real` ((H, W, 1) images).
void train_gan(GanState& state, std::span<const Tensor32* const> real,
               const std::function<void(const GanProgress&)>& on_step = {});

// `count` (H, W, 1) images from the frozen generator (inference mode).
std::vector<Tensor32> synthesize(const nn::Network<float>& generator, std::size_t count,
                                 std::uint64_t seed);

// Fraction of correct real/fake calls at threshold 0.5 over `real` plus
// an equal number of fresh fakes.
double discriminator_accuracy(const GanState& state, std::span<const Tensor32* const> real,
                              std::uint64_t seed);

}  // namespace pneumanet
