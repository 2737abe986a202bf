#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "pneumanet/model_file.hpp"
#include "pneumanet/model.hpp"

namespace pneumanet {

struct PredictionResult {
  Label label = Label::normal;
  double probability = 0;  // confidence in `label`, max(p, 1 - p)
  double raw_score = 0;    // sigmoid output, probability of PNEUMONIA
  std::string model_version;

  // {"label", "probability", "raw_score", "model_version"}
  nlohmann::json to_json() const;
};

// A loaded classifier plus the preprocessing it expects. Immutable after
// construction; predict may be called from many threads.
class Predictor {
 public:
  explicit Predictor(ModelFile model);
  static Predictor load(const std::filesystem::path& path);

  // Decodes PNG/JPEG bytes (ImageDecodeError otherwise), preprocesses to the
  // model's input size and runs inference.
  PredictionResult predict_bytes(std::span<const std::uint8_t> bytes) const;
  PredictionResult predict_file(const std::filesystem::path& path) const;

  std::size_t image_size() const { return image_size_; }
  const std::string& version() const { return version_; }

 private:
  nn::Network<float> net_;
  std::size_t image_size_;
  std::string version_;
};

struct ServiceOptions {
  std::filesystem::path model_path;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path static_dir;  // served at / when it exists
  std::size_t max_upload_bytes = 10u << 20;
  std::function<void(const std::string&)> log;
  // Called on the worker thread after an upload is accepted and before
  // inference. Lets tests hold a request in flight.
  std::function<void()> on_predict_begin;
};

// Parses "host:port"; a bare port binds 127.0.0.1.
void parse_bind(const std::string& bind, std::string& host, int& port);

class InferenceService {
 public:
  // Loads the model; a missing or invalid file leaves the service running
  // in a degraded state that answers 503.
  explicit InferenceService(ServiceOptions options);
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  bool model_loaded() const { return predictor_ != nullptr; }
  const std::string& load_error() const { return load_error_; }

  // Binds the listening socket and returns the port. Throws Error on failure.
  int bind();
  // Serves until stop(); in-flight requests complete before it returns.
  void run();
  void stop();

 private:
  struct Impl;
  ServiceOptions options_;
  std::unique_ptr<Predictor> predictor_;
  std::string load_error_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pneumanet
