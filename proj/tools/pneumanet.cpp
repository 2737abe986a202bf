#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pneumanet/augmentation.hpp"
#include "pneumanet/dataset.hpp"
#include "pneumanet/experiment.hpp"
#include "pneumanet/gan.hpp"
#include "pneumanet/image_io.hpp"
#include "pneumanet/metrics.hpp"
#include "pneumanet/model_file.hpp"
#include "pneumanet/service.hpp"
#include "pneumanet/synthetic.hpp"

namespace fs = std::filesystem;
using namespace pneumanet;

namespace {

// --config reads one flat JSON object whose keys are long flag names.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (opt->count() > 0) {
        j[name] = opt->results().size() == 1 ? nlohmann::json(opt->results()[0]) : nlohmann::json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      auto text = [](const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(text(v));
      } else {
        item.inputs.push_back(text(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

struct Options {
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t image_size = kImageSize;
  int experiment = 1;
  SplitRatios ratios;

  // training
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t patience = 5;
  std::size_t target_total = kDefaultTargetTotal;

  // augmentation
  AugmentationConfig aug;
  std::string interpolation = "bilinear";

  // gan
  GanConfig gan;
  std::string gan_path;
  std::string class_name;  // empty: minority of the training split
  std::size_t count = 0;   // 0: use the experiment-2 gap

  // inference
  std::string model_path;
  std::string bind = "127.0.0.1:8080";
  std::string static_dir = "webui/dist";
  std::vector<std::string> images;

  // demo data
  SyntheticCorpus demo;
};

void log(const std::string& msg) { std::cerr << "[pneumanet] " << msg << "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

// A prepared cache directory is used as is; a raw NORMAL/PNEUMONIA tree is
// ingested and split with --seed.
SplitDataset load_data(const Options& o) {
  const fs::path dir(o.data_dir);
  if (fs::exists(dir / "cache.json")) {
    SplitDataset data = read_cache(dir);
    const auto& any = !data.train.empty() ? data.train.front() : data.test.front();
    if (any.tensor.shape()[0] != o.image_size) {
      throw InvalidArgument("cache in " + dir.string() + " holds " + std::to_string(any.tensor.shape()[0]) +
                            "px images but --image-size is " + std::to_string(o.image_size));
    }
    log("loaded cache " + dir.string() + " (split seed " + std::to_string(data.seed) + ")");
    return data;
  }
  LoadResult loaded = load_directory(dir, o.image_size);
  for (const auto& w : loaded.warnings) log("warning: " + w);
  SplitDataset data = split(std::move(loaded.records), o.seed, o.ratios);
  return data;
}

void describe_split(const SplitDataset& d) {
  auto line = [](const char* name, const std::vector<ImageRecord>& r) {
    const auto c = class_counts(r);
    log(std::string(name) + ": " + std::to_string(c[0]) + " NORMAL, " + std::to_string(c[1]) + " PNEUMONIA");
  };
  line("train", d.train);
  line("val", d.val);
  line("test", d.test);
}

Label target_class(const Options& o, const SplitDataset& d) {
  return o.class_name.empty() ? minority_class(class_counts(d.train)) : label_from_string(o.class_name);
}

std::vector<const Tensor32*> class_images(const std::vector<ImageRecord>& records, Label l) {
  std::vector<const Tensor32*> out;
  for (const auto& r : records)
    if (r.label == l) out.push_back(&r.tensor);
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

AugmentationConfig aug_config(const Options& o) {
  AugmentationConfig a = o.aug;
  if (o.interpolation == "bilinear") {
    a.interpolation = Interpolation::bilinear;
  } else if (o.interpolation == "nearest") {
    a.interpolation = Interpolation::nearest;
  } else {
    throw InvalidArgument("--interpolation must be bilinear or nearest");
  }
  a.validate();
  return a;
}

RunConfig run_config(const Options& o) {
  RunConfig rc;
  rc.arch = CnnArchitecture::standard(o.image_size);
  rc.train.epochs = o.epochs;
  rc.train.batch_size = o.batch_size;
  rc.train.adam.alpha = o.learning_rate;
  rc.train.patience = o.patience;
  rc.train.on_epoch = [](const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f", e.epoch,
                  e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
    log(buf);
  };
  rc.augmentation = aug_config(o);
  rc.target_total = o.target_total;
  rc.seed = o.seed;
  rc.out_dir = o.out_dir;
  rc.log = log;
  return rc;
}

GanConfig gan_config(const Options& o) {
  GanConfig g = o.gan;
  g.height = g.width = o.image_size;
  return g;
}

std::string default_gan_path(const Options& o) {
  return o.gan_path.empty() ? (fs::path(o.out_dir) / "gan.pnmx").string() : o.gan_path;
}

std::string default_model_path(const Options& o) {
  return o.model_path.empty() ? (fs::path(o.out_dir) / "model.pnmx").string() : o.model_path;
}

struct LoadedGenerator {
  ModelFile file;
  Label label;
};

LoadedGenerator load_generator(const std::string& path) {
  ModelFile f = load_model(path);
  if (f.kind != "gan_generator") throw InvalidArgument(path + " is a '" + f.kind + "' file, not a GAN generator");
  const Label l = label_from_string(f.meta.value("class", std::string("NORMAL")));
  return {std::move(f), l};
}

// ---- subcommands ------------------------------------------------------------

int cmd_prepare(const Options& o) {
  SplitDataset data = load_data(o);
  describe_split(data);
  write_cache(o.out_dir, data);
  log("wrote " + (fs::path(o.out_dir) / "cache.json").string());
  return 0;
}

int cmd_augment(const Options& o) {
  const SplitDataset data = load_data(o);
  const Label l = target_class(o, data);
  const auto sources = class_images(data.train, l);
  std::vector<const ImageRecord*> source_records;
  for (const auto& r : data.train)
    if (r.label == l) source_records.push_back(&r);
  std::size_t count = o.count;
  if (count == 0) count = plan_experiment(2, class_counts(data.train), o.target_total)[l].augmented;
  AugmentationConfig a = aug_config(o);
  a.seed = derive_seed(o.seed, 100, static_cast<std::uint64_t>(l));
  const auto images = expand_class(sources, count, a);
  const fs::path dir = fs::path(o.out_dir) / std::string(label_name(l));
  fs::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const fs::path src(source_records[i % source_records.size()]->id);
    const std::string name = src.stem().string() + "_aug" + std::to_string(i / source_records.size()) + ".png";
    write_png(dir / name, to_raw_image(images[i]));
  }
  log("wrote " + std::to_string(images.size()) + " augmented " + std::string(label_name(l)) + " images to " +
      dir.string());
  return 0;
}

int cmd_gan_train(const Options& o) {
  const SplitDataset data = load_data(o);
  const Label l = target_class(o, data);
  GanConfig g = gan_config(o);
  g.seed = derive_seed(o.seed, 500);
  GanState st = make_gan(g);
  const auto real = class_images(data.train, l);
  log("training GAN on " + std::to_string(real.size()) + " " + std::string(label_name(l)) + " images, " +
      std::to_string(g.iterations) + " iterations");
  std::string history = "iteration,loss_d,loss_g\n";
  const std::size_t every = std::max<std::size_t>(1, g.iterations / 20);
  train_gan(st, real, [&](const GanProgress& p) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", p.iteration, p.losses.loss_d, p.losses.loss_g);
    history += buf;
    if (p.iteration % every == 0 || p.iteration == g.iterations) {
      std::snprintf(buf, sizeof buf, "iteration %zu  loss_d %.4f  loss_g %.4f", p.iteration, p.losses.loss_d,
                    p.losses.loss_g);
      log(buf);
    }
  });
  const std::string path = default_gan_path(o);
  save_model(path, st.generator, "gan_generator", {{"class", label_name(l)}, {"gan", g.to_json()}});
  write_text(fs::path(path).parent_path() / "gan_history.csv", history);
  log("D accuracy on the training images: " + std::to_string(discriminator_accuracy(st, real, o.seed)));
  log("wrote " + path);
  return 0;
}

int cmd_gan_sample(const Options& o) {
  const LoadedGenerator gen = load_generator(default_gan_path(o));
  const std::size_t count = o.count == 0 ? 16 : o.count;
  const auto images = synthesize(gen.file.network, count, derive_seed(o.seed, 200));
  const fs::path dir = fs::path(o.out_dir) / std::string(label_name(gen.label));
  fs::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_gen%05zu.png", lower(label_name(gen.label)).c_str(), i);
    write_png(dir / name, to_raw_image(images[i]));
  }
  log("wrote " + std::to_string(images.size()) + " generated images to " + dir.string());
  return 0;
}

int cmd_train(const Options& o) {
  const SplitDataset data = load_data(o);
  describe_split(data);
  const RunConfig rc = run_config(o);
  const ExperimentPlan plan = plan_experiment(o.experiment, class_counts(data.train), o.target_total);
  std::optional<LoadedGenerator> gen;
  GeneratorSet gens;
  const bool needs_gan = plan.classes[0].generated > 0 || plan.classes[1].generated > 0;
  if (needs_gan) {
    const std::string path = default_gan_path(o);
    if (!fs::exists(path)) {
      throw Error("experiment " + std::to_string(o.experiment) + " needs generated images but " + path +
                  " does not exist; run `pneumanet gan-train` first or pass --gan");
    }
    gen = load_generator(path);
    gens[gen->label] = &gen->file.network;
  }
  const ExperimentResult r = run_experiment(plan, data, gens, rc);
  std::cout << report_table({{o.experiment, r.metrics}});
  log("artifacts in " + o.out_dir);
  return 0;
}

int cmd_evaluate(const Options& o) {
  const ModelFile mf = load_model(default_model_path(o));
  const SplitDataset data = load_data(o);
  ImageSet test;
  for (const auto& r : data.test) test.add(r.tensor, static_cast<int>(r.label));
  if (test.empty()) throw InvalidArgument("the test split is empty");
  const Evaluation ev = evaluate(mf.network, test);
  const MetricsReport m = compute_metrics(confusion(ev.probabilities, test.labels));
  const int id = mf.meta.value("experiment", o.experiment);
  std::cout << report_table({{id, m}});
  write_text(fs::path(o.out_dir) / "metrics.csv", report_csv({{id, m}}));
  return 0;
}

int cmd_sweep(const Options& o) {
  const SplitDataset data = load_data(o);
  describe_split(data);
  const RunConfig rc = run_config(o);
  std::optional<LoadedGenerator> gen;
  if (!o.gan_path.empty()) gen = load_generator(o.gan_path);
  const SweepResult r = run_sweep(data, rc, gan_config(o), gen ? &gen->file.network : nullptr);
  std::cout << report_table(r.reports());
  return 0;
}

int cmd_predict(const Options& o) {
  const Predictor p = Predictor::load(default_model_path(o));
  int status = 0;
  for (const auto& image : o.images) {
    try {
      std::cout << p.predict_file(image).to_json().dump() << "\n";
    } catch (const Error& e) {
      log(image + ": " + e.what());
      status = 1;
    }
  }
  return status;
}

int cmd_serve(const Options& o) {
  ServiceOptions so;
  so.model_path = default_model_path(o);
  so.static_dir = o.static_dir;
  so.log = log;
  parse_bind(o.bind, so.host, so.port);

  // Signals are consumed by a dedicated thread so the server can drain.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  InferenceService service(so);
  const int port = service.bind();
  log("listening on http://" + so.host + ":" + std::to_string(port));
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    if (sig == SIGINT || sig == SIGTERM) log("shutting down");
    service.stop();
  });
  service.run();
  // run() can also return on its own; wake the waiter in that case.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

int cmd_make_demo_data(const Options& o) {
  write_synthetic_corpus(o.data_dir, o.demo);
  log("wrote " + std::to_string(o.demo.normal) + " NORMAL and " + std::to_string(o.demo.pneumonia) +
      " PNEUMONIA synthetic images to " + o.data_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pneumanet: chest X-ray pneumonia classifier with augmentation and GAN balancing"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file of flag values; command-line flags win");
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--data-dir", o.data_dir, "NORMAL/PNEUMONIA image tree or a prepared cache")->capture_default_str();
  app.add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  app.add_option("--seed", o.seed, "Base random seed")->capture_default_str();
  app.add_option("--image-size", o.image_size, "Square input side in pixels")
      ->capture_default_str()
      ->check(CLI::Range(8, 4096));
  app.add_option("--experiment", o.experiment, "1 Original, 2 Augmented, 3 Generated, 4 Org+Aug+Gen")
      ->capture_default_str()
      ->check(CLI::Range(1, 4));
  app.add_option("--val-fraction", o.ratios.val)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  app.add_option("--test-fraction", o.ratios.test)->capture_default_str()->check(CLI::Range(0.0, 1.0));

  app.add_option("--epochs", o.epochs)->capture_default_str();
  app.add_option("--batch-size", o.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--learning-rate", o.learning_rate)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--patience", o.patience, "Early-stopping patience in epochs, 0 disables")->capture_default_str();
  app.add_option("--target-total", o.target_total, "Per-class size in experiment 4")->capture_default_str();

  app.add_option("--rotation", o.aug.rotation_max_deg, "Max rotation in degrees")->capture_default_str();
  app.add_option("--zoom-low", o.aug.zoom_low)->capture_default_str();
  app.add_option("--zoom-high", o.aug.zoom_high)->capture_default_str();
  app.add_option("--shear", o.aug.shear_max_deg, "Max shear in degrees")->capture_default_str();
  app.add_option("--hflip-prob", o.aug.hflip_prob)->capture_default_str();
  app.add_option("--fill", o.aug.fill_value)->capture_default_str();
  app.add_option("--interpolation", o.interpolation)->capture_default_str()->check(CLI::IsMember({"bilinear", "nearest"}));

  app.add_option("--gan", o.gan_path, "Generator checkpoint (default <out-dir>/gan.pnmx)");
  app.add_option("--gan-iterations", o.gan.iterations)->capture_default_str();
  app.add_option("--gan-batch-size", o.gan.batch_size)->capture_default_str()->check(CLI::Range(2, 1 << 20));
  app.add_option("--latent-dim", o.gan.latent_dim)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--g-filters", o.gan.g_filters)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--d-filters", o.gan.d_filters)->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--gan-lr", o.gan.lr_g, "Adam rate for both GAN networks")->capture_default_str();
  app.add_option("--class", o.class_name, "NORMAL or PNEUMONIA (default: training-split minority)")
      ->check(CLI::IsMember({"NORMAL", "PNEUMONIA"}));
  app.add_option("--count", o.count, "Images to write (augment: default fills the class gap)");

  app.add_option("--model", o.model_path, "Model file (default <out-dir>/model.pnmx)");

  auto* prepare = app.add_subcommand("prepare", "Ingest, preprocess and split --data-dir into a cache in --out-dir");
  auto* augment = app.add_subcommand("augment", "Write augmented PNGs for one class of the training split");
  auto* gan_train = app.add_subcommand("gan-train", "Train a GAN on one class of the training split");
  auto* gan_sample = app.add_subcommand("gan-sample", "Write PNGs from a trained generator");
  auto* train_cmd = app.add_subcommand("train", "Run one experiment: compose, train, evaluate, save");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a model on the test split");
  auto* sweep = app.add_subcommand("sweep", "Train one GAN and run experiments 1-4");
  auto* predict_cmd = app.add_subcommand("predict", "Classify image files, one JSON line each");
  predict_cmd->add_option("images", o.images, "PNG or JPEG files")->required()->check(CLI::ExistingFile);
  auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
  serve->add_option("--bind", o.bind, "host:port (PNEUMANET_BIND overrides)")->capture_default_str();
  serve->add_option("--static-dir", o.static_dir, "Web UI assets served at /")->capture_default_str();
  auto* demo = app.add_subcommand("make-demo-data", "Write a synthetic NORMAL/PNEUMONIA corpus to --data-dir");
  demo->add_option("--normal", o.demo.normal)->capture_default_str();
  demo->add_option("--pneumonia", o.demo.pneumonia)->capture_default_str();
  demo->add_option("--size", o.demo.size)->capture_default_str()->check(CLI::Range(8, 4096));

  CLI11_PARSE(app, argc, argv);

  o.gan.lr_d = o.gan.lr_g;
  o.demo.seed = o.seed;
  if (const char* m = std::getenv("PNEUMANET_MODEL"); m && *m) o.model_path = m;
  if (const char* b = std::getenv("PNEUMANET_BIND"); b && *b) o.bind = b;

  try {
    if (*prepare) return cmd_prepare(o);
    if (*augment) return cmd_augment(o);
    if (*gan_train) return cmd_gan_train(o);
    if (*gan_sample) return cmd_gan_sample(o);
    if (*train_cmd) return cmd_train(o);
    if (*evaluate_cmd) return cmd_evaluate(o);
    if (*sweep) return cmd_sweep(o);
    if (*predict_cmd) return cmd_predict(o);
    if (*serve) return cmd_serve(o);
    if (*demo) return cmd_make_demo_data(o);
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return 1;
}
