#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pneumanet/model.hpp"

namespace pneumanet {

// ---- loss ------------------------------------------------------------------

constexpr double kBceClamp = 1e-7;

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;  // d loss / d probabilities, same shape as the input
};

// Mean binary cross-entropy. Probabilities are clamped to
// [kBceClamp, 1 - kBceClamp]; labels must be 0 or 1.
template <typename T>
LossResult<T> bce_loss(const Tensor<T>& probabilities, std::span<const int> labels);

// ---- optimizer -------------------------------------------------------------

struct AdamConfig {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

// Bias-corrected Adam, applied in place. Moments are allocated on the
// first call.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<Tensor<T>* const> grads,
               AdamState<T>& state);

template <typename T>
void adam_step(nn::Network<T>& net, AdamState<T>& state) {
  auto p = net.parameters();
  auto g = net.gradients();
  adam_step<T>(p, g, state);
}

// ---- early stopping --------------------------------------------------------

// Tracks the best monitored value (strict improvement) and keeps a copy of
// the state observed at that point.
template <typename Snapshot>
class EarlyStopping {
 public:
  // patience 0 never requests a stop.
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when training should stop after this epoch.
  bool observe(double value, std::size_t epoch, const Snapshot& state) {
    if (!best_snapshot_ || value > best_value_) {
      best_value_ = value;
      best_epoch_ = epoch;
      best_snapshot_ = state;
      since_improve_ = 0;
    } else {
      ++since_improve_;
    }
    return patience_ > 0 && since_improve_ >= patience_;
  }

  std::size_t patience() const { return patience_; }
  double best_value() const { return best_value_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_improve() const { return since_improve_; }
  const std::optional<Snapshot>& best_snapshot() const { return best_snapshot_; }

 private:
  std::size_t patience_;
  double best_value_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_improve_ = 0;
  std::optional<Snapshot> best_snapshot_;
};

// ---- training --------------------------------------------------------------

// Non-owning list of (H, W, 1) images with 0/1 labels.
struct ImageSet {
  std::vector<const Tensor32*> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  void add(const Tensor32& image, int label) {
    images.push_back(&image);
    labels.push_back(label);
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double val_accuracy = 0;
};

using TrainingHistory = std::vector<EpochRecord>;

std::string history_csv(const TrainingHistory& history);
void write_history_csv(const TrainingHistory& history, const std::string& path);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::size_t patience = 5;  // 0 disables early stopping
  std::uint64_t seed = 0;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  TrainingHistory history;
  nn::Network<float> best;  // snapshot at the best validation accuracy
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0;
  bool stopped_early = false;
};

// Mini-batch Adam on BCE with seeded per-epoch shuffling. Without a
// validation set the final parameters are returned.
TrainResult train(const nn::Network<float>& initial, const ImageSet& train_set,
                  const ImageSet& val_set, const TrainConfig& config);

// (H, W, C) images -> [N, C, H, W] batch. Only C == 1 is supported.
template <typename T>
Tensor<T> stack_images(std::span<const Tensor32* const> images);

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
  std::vector<float> probabilities;
};

Evaluation evaluate(const nn::Network<float>& net, const ImageSet& set);

// Probability of PNEUMONIA for one (H, W, 1) image, inference mode.
float predict(const nn::Network<float>& net, const Tensor32& image);
std::vector<float> predict_batch(const nn::Network<float>& net,
                                 std::span<const Tensor32* const> images);

}  // namespace pneumanet
