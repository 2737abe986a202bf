#include "pneumanet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace pneumanet {

template <typename T>
LossResult<T> bce_loss(const Tensor<T>& probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size()) {
    throw ShapeError("bce_loss: " + std::to_string(probabilities.size()) +
                     " probabilities for " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw InvalidArgument("bce_loss: empty batch");
  const double n = static_cast<double>(labels.size());
  LossResult<T> res{0.0, Tensor<T>(probabilities.shape())};
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) {
      throw InvalidArgument("bce_loss: label " + std::to_string(y) + " is not 0 or 1");
    }
    const double p = std::clamp(static_cast<double>(probabilities[i]), kBceClamp, 1.0 - kBceClamp);
    total += y ? -std::log(p) : -std::log(1.0 - p);
    res.grad[i] = static_cast<T>((y ? -1.0 / p : 1.0 / (1.0 - p)) / n);
  }
  res.value = total / n;
  return res;
}

template LossResult<float> bce_loss(const Tensor<float>&, std::span<const int>);
template LossResult<double> bce_loss(const Tensor<double>&, std::span<const int>);

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<Tensor<T>* const> grads,
               AdamState<T>& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const Tensor<T>* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k]->shape(), grads[k]->shape(), "adam_step gradient");
    require_same_shape(params[k]->shape(), state.m[k].shape(), "adam_step moment");
  }

  const AdamConfig& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    T* p = params[k]->data();
    const T* g = grads[k]->data();
    T* m = state.m[k].data();
    T* v = state.v[k].data();
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] = static_cast<T>(p[i] - c.alpha * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

template void adam_step<float>(std::span<Tensor<float>* const>, std::span<Tensor<float>* const>,
                               AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>* const>,
                                std::span<Tensor<double>* const>, AdamState<double>&);

std::string history_csv(const TrainingHistory& history) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss << ',' << r.train_accuracy << ',' << r.val_loss << ','
        << r.val_accuracy << '\n';
  }
  return out.str();
}

void write_history_csv(const TrainingHistory& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << history_csv(history);
}

template <typename T>
Tensor<T> stack_images(std::span<const Tensor32* const> images) {
  if (images.empty()) throw InvalidArgument("stack_images: no images");
  const Shape& s = images.front()->shape();
  if (s.size() != 3 || s[2] != 1) {
    throw ShapeError("stack_images: expected (H, W, 1) images, got " + to_string(s));
  }
  const std::size_t plane = s[0] * s[1];
  Tensor<T> batch({images.size(), 1, s[0], s[1]});
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(s, images[i]->shape(), "stack_images");
    std::copy(images[i]->data(), images[i]->data() + plane, batch.data() + i * plane);
  }
  return batch;
}

template Tensor<float> stack_images<float>(std::span<const Tensor32* const>);
template Tensor<double> stack_images<double>(std::span<const Tensor32* const>);

namespace {

void check_image_set(const ImageSet& set, const std::string& what) {
  if (set.images.size() != set.labels.size()) {
    throw InvalidArgument(what + ": image and label counts differ");
  }
}

void check_input_shape(const nn::Network<float>& net, const Tensor32& image) {
  const Shape& in = net.input_shape();
  const Shape expected{in.at(1), in.at(2), in.at(0)};
  require_same_shape(expected, image.shape(), "predict image");
}

}  // namespace

Evaluation evaluate(const nn::Network<float>& net, const ImageSet& set) {
  check_image_set(set, "evaluate");
  Evaluation ev;
  if (set.empty()) return ev;
  ev.probabilities = predict_batch(net, set.images);
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double p = std::clamp(static_cast<double>(ev.probabilities[i]), kBceClamp, 1 - kBceClamp);
    loss += set.labels[i] ? -std::log(p) : -std::log(1 - p);
    correct += static_cast<int>(label_for_probability(ev.probabilities[i])) == set.labels[i];
  }
  ev.loss = loss / static_cast<double>(set.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return ev;
}

float predict(const nn::Network<float>& net, const Tensor32& image) {
  check_input_shape(net, image);
  const Tensor32* one[] = {&image};
  return net.infer(stack_images<float>(one))[0];
}

std::vector<float> predict_batch(const nn::Network<float>& net,
                                 std::span<const Tensor32* const> images) {
  constexpr std::size_t kChunk = 64;
  std::vector<float> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    for (const Tensor32* img : chunk) check_input_shape(net, *img);
    const Tensor32 probs = net.infer(stack_images<float>(chunk));
    out.insert(out.end(), probs.values().begin(), probs.values().end());
  }
  return out;
}

TrainResult train(const nn::Network<float>& initial, const ImageSet& train_set,
                  const ImageSet& val_set, const TrainConfig& config) {
  check_image_set(train_set, "train");
  check_image_set(val_set, "validation");
  if (train_set.empty()) throw InvalidArgument("train: empty training set");
  if (config.batch_size < 2) throw InvalidArgument("train: batch_size must be at least 2");
  if (train_set.size() < 2) throw InvalidArgument("train: need at least 2 training images");

  TrainResult result{{}, initial, 0, 0.0, false};
  nn::Network<float> net = initial;
  AdamState<float> adam{config.adam, 0, {}, {}};
  EarlyStopping<nn::Network<float>> stopper(config.patience);
  std::mt19937_64 rng(config.seed);

  std::vector<std::size_t> order(train_set.size());
  std::vector<const Tensor32*> batch_images;
  std::vector<int> batch_labels;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0;
    std::size_t correct = 0;
    std::size_t start = 0;
    while (start < order.size()) {
      std::size_t end = std::min(start + config.batch_size, order.size());
      // A trailing batch of one cannot be batch-normalized; fold it in.
      if (order.size() - end == 1) end = order.size();
      batch_images.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_images.push_back(train_set.images[order[i]]);
        batch_labels.push_back(train_set.labels[order[i]]);
      }
      const Tensor32 x = stack_images<float>(batch_images);
      const Tensor32 probs = net.forward(x, nn::Mode::train);
      const auto loss = bce_loss<float>(probs, batch_labels);
      net.zero_grad();
      net.backward(loss.grad);
      adam_step(net, adam);

      loss_sum += loss.value * static_cast<double>(batch_labels.size());
      for (std::size_t i = 0; i < batch_labels.size(); ++i) {
        correct += static_cast<int>(label_for_probability(probs[i])) == batch_labels[i];
      }
      start = end;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    bool stop = false;
    if (!val_set.empty()) {
      const Evaluation ev = evaluate(net, val_set);
      rec.val_loss = ev.loss;
      rec.val_accuracy = ev.accuracy;
      stop = stopper.observe(ev.accuracy, epoch, net);
    }
    result.history.push_back(rec);
    if (config.on_epoch) config.on_epoch(rec);
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }

  if (stopper.best_snapshot()) {
    result.best = *stopper.best_snapshot();
    result.best_epoch = stopper.best_epoch();
    result.best_val_accuracy = stopper.best_value();
  } else {
    result.best = std::move(net);
    result.best_epoch = result.history.size();
  }
  return result;
}

}  // namespace pneumanet
