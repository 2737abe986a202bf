#include "pneumanet/experiment.hpp"

#include <fstream>

#include "pneumanet/model_file.hpp"

namespace pneumanet {

namespace fs = std::filesystem;

nlohmann::json ExperimentPlan::to_json() const {
  nlohmann::json classes_json = nlohmann::json::object();
  for (Label l : {Label::normal, Label::pneumonia}) {
    const ClassPlan& c = (*this)[l];
    classes_json[std::string(label_name(l))] = {{"original", c.original},
                                                {"augmented", c.augmented},
                                                {"generated", c.generated},
                                                {"total", c.total()}};
  }
  return {{"experiment", experiment_id}, {"name", experiment_name(experiment_id)}, {"classes", classes_json}};
}

Label minority_class(std::array<std::size_t, 2> counts) {
  return counts[1] < counts[0] ? Label::pneumonia : Label::normal;
}

ExperimentPlan plan_experiment(int id, std::array<std::size_t, 2> counts, std::size_t target_total) {
  if (id < 1 || id > 4) throw InvalidArgument("experiment id must be 1, 2, 3 or 4, got " + std::to_string(id));
  if (counts[0] == 0 || counts[1] == 0) throw InvalidArgument("plan_experiment: both classes need originals");
  ExperimentPlan plan;
  plan.experiment_id = id;
  for (int c = 0; c < 2; ++c) plan.classes[c].original = counts[c];
  const int minor = static_cast<int>(minority_class(counts));
  const int major = 1 - minor;
  const std::size_t gap = counts[major] - counts[minor];
  switch (id) {
    case 2:
      plan.classes[minor].augmented = gap;
      break;
    case 3:
      plan.classes[minor].generated = gap;
      break;
    case 4: {
      if (target_total < counts[major]) {
        throw InvalidArgument("plan_experiment: target_total " + std::to_string(target_total) +
                              " is below the majority count " + std::to_string(counts[major]));
      }
      const std::size_t deficit = target_total - counts[minor];
      plan.classes[minor].augmented = deficit / 2;
      plan.classes[minor].generated = deficit - deficit / 2;
      plan.classes[major].augmented = target_total - counts[major];
      break;
    }
    default:
      break;
  }
  return plan;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a simple combination.
  std::uint64_t z = base ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full);
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

void require_original(const std::vector<ImageRecord>& records, const char* split_name) {
  for (const auto& r : records) {
    if (r.provenance != Provenance::original) {
      throw Error(std::string("leakage guard: ") + split_name + " split contains non-original record " + r.id);
    }
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, const SplitDataset& data,
                                const GeneratorSet& generators, const RunConfig& config) {
  require_original(data.train, "train");
  require_original(data.val, "validation");
  require_original(data.test, "test");
  auto log = [&](const std::string& msg) {
    if (config.log) config.log(msg);
  };

  std::array<std::vector<const Tensor32*>, 2> originals;
  for (const auto& r : data.train) originals[static_cast<int>(r.label)].push_back(&r.tensor);
  for (Label l : {Label::normal, Label::pneumonia}) {
    if (originals[static_cast<int>(l)].size() != plan[l].original) {
      throw InvalidArgument("plan expects " + std::to_string(plan[l].original) + " original " +
                            std::string(label_name(l)) + " images, the training split has " +
                            std::to_string(originals[static_cast<int>(l)].size()));
    }
  }

  // Synthesized images live here; the ImageSet points into it.
  std::vector<std::vector<Tensor32>> extra;
  ImageSet train_set;
  for (const auto& r : data.train) train_set.add(r.tensor, static_cast<int>(r.label));
  for (Label l : {Label::normal, Label::pneumonia}) {
    const int li = static_cast<int>(l);
    const ClassPlan& cp = plan[l];
    if (cp.augmented > 0) {
      AugmentationConfig aug = config.augmentation;
      aug.seed = derive_seed(config.seed, 100 + plan.experiment_id, li);
      extra.push_back(expand_class(originals[li], cp.augmented, aug));
      log("augmented " + std::to_string(cp.augmented) + " " + std::string(label_name(l)) + " images");
    }
    if (cp.generated > 0) {
      const auto it = generators.find(l);
      if (it == generators.end() || it->second == nullptr) {
        throw Error("experiment " + std::to_string(plan.experiment_id) + " needs generated " +
                    std::string(label_name(l)) + " images but no GAN checkpoint for that class is loaded; "
                    "run `pneumanet gan-train` first");
      }
      const Shape& out = it->second->output_shape();
      const Shape want{1, config.arch.height, config.arch.width};
      require_same_shape(want, out, "generator output");
      extra.push_back(synthesize(*it->second, cp.generated, derive_seed(config.seed, 200 + plan.experiment_id, li)));
      log("generated " + std::to_string(cp.generated) + " " + std::string(label_name(l)) + " images");
    }
  }
  // Add after all vectors exist so the pointers stay valid.
  {
    std::size_t k = 0;
    for (Label l : {Label::normal, Label::pneumonia}) {
      const ClassPlan& cp = plan[l];
      if (cp.augmented > 0)
        for (const auto& t : extra[k++]) train_set.add(t, static_cast<int>(l));
      if (cp.generated > 0)
        for (const auto& t : extra[k++]) train_set.add(t, static_cast<int>(l));
    }
  }

  ImageSet val_set, test_set;
  for (const auto& r : data.val) val_set.add(r.tensor, static_cast<int>(r.label));
  for (const auto& r : data.test) test_set.add(r.tensor, static_cast<int>(r.label));

  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, 300 + plan.experiment_id);
  const auto initial = build_model<float>(config.arch, derive_seed(config.seed, 400));
  log("training on " + std::to_string(train_set.size()) + " images");

  ExperimentResult res;
  res.plan = plan;
  res.training = train(initial, train_set, val_set, tc);
  if (test_set.empty()) throw InvalidArgument("run_experiment: empty test split");
  const Evaluation ev = evaluate(res.training.best, test_set);
  res.confusion = confusion(ev.probabilities, test_set.labels);
  res.metrics = compute_metrics(res.confusion);

  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    nlohmann::json meta{{"experiment", plan.experiment_id},
                        {"plan", plan.to_json()},
                        {"architecture", config.arch.to_json()},
                        {"image_size", config.arch.height},
                        {"best_epoch", res.training.best_epoch},
                        {"best_val_accuracy", res.training.best_val_accuracy},
                        {"seed", config.seed}};
    save_model(config.out_dir / "model.pnmx", res.training.best, "classifier", meta);
    write_history_csv(res.training.history, (config.out_dir / "history.csv").string());
    write_text(config.out_dir / "metrics.csv", report_csv({{plan.experiment_id, res.metrics}}));
    write_text(config.out_dir / "plan.json", plan.to_json().dump(2) + "\n");
  }
  return res;
}

std::map<int, MetricsReport> SweepResult::reports() const {
  std::map<int, MetricsReport> out;
  for (const auto& [id, r] : experiments) out[id] = r.metrics;
  return out;
}

SweepResult run_sweep(const SplitDataset& data, const RunConfig& config, const GanConfig& gan,
                      const nn::Network<float>* generator) {
  auto log = [&](const std::string& msg) {
    if (config.log) config.log(msg);
  };
  const auto counts = class_counts(data.train);
  const Label minor = minority_class(counts);

  std::optional<nn::Network<float>> trained;
  if (generator == nullptr) {
    GanConfig gc = gan;
    gc.height = config.arch.height;
    gc.width = config.arch.width;
    gc.seed = derive_seed(config.seed, 500);
    GanState st = make_gan(gc);
    std::vector<const Tensor32*> real;
    for (const auto& r : data.train)
      if (r.label == minor) real.push_back(&r.tensor);
    log("training GAN on " + std::to_string(real.size()) + " " + std::string(label_name(minor)) + " images for " +
        std::to_string(gc.iterations) + " iterations");
    train_gan(st, real);
    trained = std::move(st.generator);
    generator = &*trained;
    if (!config.out_dir.empty()) {
      save_model(config.out_dir / "gan.pnmx", *generator, "gan_generator",
                 {{"class", label_name(minor)}, {"gan", gc.to_json()}});
    }
  }
  const GeneratorSet gens{{minor, generator}};

  SweepResult out;
  for (int id = 1; id <= 4; ++id) {
    RunConfig rc = config;
    if (!config.out_dir.empty()) rc.out_dir = config.out_dir / ("exp" + std::to_string(id));
    log("experiment " + std::to_string(id) + " (" + experiment_name(id) + ")");
    out.experiments[id] = run_experiment(plan_experiment(id, counts, config.target_total), data, gens, rc);
  }
  if (!config.out_dir.empty()) {
    write_text(config.out_dir / "metrics.csv", report_csv(out.reports()));
    write_text(config.out_dir / "table.txt", report_table(out.reports()));
  }
  return out;
}

}  // namespace pneumanet
