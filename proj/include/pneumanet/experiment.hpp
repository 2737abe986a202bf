#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "pneumanet/augmentation.hpp"
#include "pneumanet/dataset.hpp"
#include "pneumanet/gan.hpp"
#include "pneumanet/metrics.hpp"
#include "pneumanet/training.hpp"

namespace pneumanet {

struct ClassPlan {
  std::size_t original = 0;
  std::size_t augmented = 0;
  std::size_t generated = 0;

  std::size_t total() const { return original + augmented + generated; }
  friend bool operator==(const ClassPlan&, const ClassPlan&) = default;
};

// Training-set composition for one experiment; indexed by Label.
struct ExperimentPlan {
  int experiment_id = 1;
  std::array<ClassPlan, 2> classes;

  const ClassPlan& operator[](Label l) const { return classes[static_cast<int>(l)]; }
  nlohmann::json to_json() const;
};

constexpr std::size_t kDefaultTargetTotal = 5000;

// 1: originals only. 2: augment the minority up to the majority. 3: generate
// the minority up to the majority. 4: both classes to target_total; the
// minority's deficit is split floor(d/2) augmented, the rest generated, and
// the majority is topped up by augmentation. Equal counts treat NORMAL as
// the minority.
ExperimentPlan plan_experiment(int id, std::array<std::size_t, 2> counts,
                               std::size_t target_total = kDefaultTargetTotal);

// The class that receives generated images (the minority, NORMAL on ties).
Label minority_class(std::array<std::size_t, 2> counts);

struct RunConfig {
  CnnArchitecture arch = CnnArchitecture::standard();
  TrainConfig train;
  AugmentationConfig augmentation;
  std::size_t target_total = kDefaultTargetTotal;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty: no artifacts written
  std::function<void(const std::string&)> log;
};

struct ExperimentResult {
  ExperimentPlan plan;
  TrainResult training;
  ConfusionMatrix confusion;
  MetricsReport metrics;
};

// Generators keyed by the class they were trained on.
using GeneratorSet = std::map<Label, const nn::Network<float>*>;

// Builds the training set from the split's originals plus synthesized
// records, trains, and evaluates on the untouched test split. Writes
// model.pnmx, history.csv, metrics.csv and plan.json when out_dir is set.
ExperimentResult run_experiment(const ExperimentPlan& plan, const SplitDataset& data,
                                const GeneratorSet& generators, const RunConfig& config);

struct SweepResult {
  std::map<int, ExperimentResult> experiments;
  std::map<int, MetricsReport> reports() const;
};

// Trains one GAN on the minority class unless `generator` is supplied, then
// runs experiments 1-4 into out_dir/exp<N>, writing metrics.csv and
// table.txt at the top level.
SweepResult run_sweep(const SplitDataset& data, const RunConfig& config, const GanConfig& gan,
                      const nn::Network<float>* generator = nullptr);

// Deterministic child seed for (base, a, b).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace pneumanet
