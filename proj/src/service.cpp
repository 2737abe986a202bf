#include "pneumanet/service.hpp"

#include <httplib.h>

#include "pneumanet/dataset.hpp"
#include "pneumanet/image_io.hpp"
#include "pneumanet/training.hpp"

namespace pneumanet {

nlohmann::json PredictionResult::to_json() const {
  return {{"label", label_name(label)},
          {"probability", probability},
          {"raw_score", raw_score},
          {"model_version", model_version}};
}

Predictor::Predictor(ModelFile model) : net_(std::move(model.network)), version_(model.version_tag()) {
  const Shape& in = net_.input_shape();
  if (in.size() != 3 || in[0] != 1 || in[1] != in[2] || net_.output_shape() != Shape{1}) {
    throw InvalidArgument("model is not a square single-channel binary classifier (input " + to_string(in) + ")");
  }
  image_size_ = in[1];
}

Predictor Predictor::load(const std::filesystem::path& path) { return Predictor(load_model(path)); }

PredictionResult Predictor::predict_bytes(std::span<const std::uint8_t> bytes) const {
  const Tensor32 image = preprocess(decode_image(bytes), image_size_);
  const float p = predict(net_, image);
  PredictionResult r;
  r.label = label_for_probability(p);
  r.raw_score = p;
  r.probability = r.label == Label::pneumonia ? static_cast<double>(p) : 1.0 - static_cast<double>(p);
  r.model_version = version_;
  return r;
}

PredictionResult Predictor::predict_file(const std::filesystem::path& path) const {
  return predict_bytes(read_file_bytes(path));
}

void parse_bind(const std::string& bind, std::string& host, int& port) {
  const auto colon = bind.rfind(':');
  std::string port_text = bind;
  host = "127.0.0.1";
  if (colon != std::string::npos) {
    host = bind.substr(0, colon);
    port_text = bind.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    port = std::stoi(port_text, &used);
    if (used != port_text.size() || port < 0 || port > 65535 || host.empty()) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw InvalidArgument("bind address must look like host:port, got '" + bind + "'");
  }
}

struct InferenceService::Impl {
  httplib::Server server;
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"error", code}, {"message", message}};
}

}  // namespace

InferenceService::InferenceService(ServiceOptions options)
    : options_(std::move(options)), impl_(std::make_unique<Impl>()) {
  auto log = [this](const std::string& msg) {
    if (options_.log) options_.log(msg);
  };
  try {
    predictor_ = std::make_unique<Predictor>(Predictor::load(options_.model_path));
    log("loaded model " + options_.model_path.string() + " (" + predictor_->version() + ")");
  } catch (const Error& e) {
    load_error_ = e.what();
    log("model not loaded from " + options_.model_path.string() + ": " + load_error_ +
        "; serving 503 until restarted with a valid model");
  }

  httplib::Server& svr = impl_->server;
  svr.set_payload_max_length(options_.max_upload_bytes);
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});

  svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
    if (predictor_) {
      send_json(res, 200, {{"status", "ok"}, {"model_version", predictor_->version()}});
    } else {
      send_json(res, 503, {{"status", "unavailable"}, {"model_version", nullptr}, {"error", "model_not_loaded"}});
    }
  });

  svr.Post("/api/predict", [this](const httplib::Request& req, httplib::Response& res) {
    if (!predictor_) {
      send_json(res, 503, error_body("model_not_loaded", "no model is loaded"));
      return;
    }
    if (!req.has_file("image")) {
      send_json(res, 400, error_body("missing_file", "multipart field 'image' is required"));
      return;
    }
    const auto file = req.get_file_value("image");
    if (options_.on_predict_begin) options_.on_predict_begin();
    try {
      const auto* p = reinterpret_cast<const std::uint8_t*>(file.content.data());
      const PredictionResult r = predictor_->predict_bytes({p, file.content.size()});
      send_json(res, 200, r.to_json());
    } catch (const ImageDecodeError& e) {
      send_json(res, 400, error_body("invalid_image", e.what()));
    } catch (const InvalidArgument& e) {
      send_json(res, 400, error_body("invalid_image", e.what()));
    }
  });

  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 413) {
      send_json(res, 413, error_body("payload_too_large", "uploads are limited to 10 MiB"));
    } else if (res.status == 404) {
      send_json(res, 404, error_body("not_found", "no such resource"));
    } else {
      send_json(res, res.status, error_body("http_error", "request failed"));
    }
  });

  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send_json(res, 500, error_body("internal_error", what));
  });

  if (!options_.static_dir.empty()) {
    if (std::filesystem::is_directory(options_.static_dir)) {
      svr.set_mount_point("/", options_.static_dir.string());
    } else {
      log("static directory " + options_.static_dir.string() + " not found; UI disabled");
    }
  }
}

InferenceService::~InferenceService() { stop(); }

int InferenceService::bind() {
  httplib::Server& svr = impl_->server;
  int port = options_.port;
  if (port == 0) {
    port = svr.bind_to_any_port(options_.host);
    if (port < 0) throw Error("cannot bind " + options_.host + " to any port");
  } else if (!svr.bind_to_port(options_.host, port)) {
    throw Error("cannot bind " + options_.host + ":" + std::to_string(port));
  }
  return port;
}

void InferenceService::run() { impl_->server.listen_after_bind(); }

void InferenceService::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace pneumanet
