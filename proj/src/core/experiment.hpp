#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/analog.hpp"
#include "core/beats.hpp"
#include "core/dataset.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"
#include "core/quant.hpp"
#include "core/train.hpp"

namespace ekgnet::experiment {

struct ExperimentConfig {
  Task task = Task::mitbih4;
  std::vector<std::string> records;  // WFDB path prefixes
  std::string beats_csv;             // pre-extracted beats instead of records
  std::string diagnosis_csv;         // PTB record -> label sidecar
  std::string teacher_csv;           // optional distillation logits
  bool strict = false;
  std::string out_dir = "run";
  std::uint64_t seed = 0;

  pipeline::ExtractParams extract;
  pipeline::SplitConfig split;  // empty counts = task defaults
  train::TrainConfig train;
  model::NoiseModel noise;
  analog::MacConfig mac;  // weight_range 0 = derive from the codebook
  int quant_bits = 6;
  int finetune_iterations = 5000;
  int analog_seeds = 10;

  ExperimentConfig();  // sets the experiment-level MAC input reference
};

ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig config_from_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

void apply_task_split_defaults(ExperimentConfig& cfg);

struct AnalogEval {
  double mean_balanced_accuracy = 0.0;
  double sd_balanced_accuracy = 0.0;
  std::vector<double> per_seed;
  metrics::Metrics first_seed_metrics;
};

// Monte Carlo analog evaluation over noise seeds; beats are voltage-scaled.
AnalogEval evaluate_analog(const quant::QuantizedModel& qmodel, const analog::MacConfig& cfg,
                           const model::NoiseModel& noise, const BeatSet& set,
                           std::span<const std::uint32_t> indices, int num_seeds, std::uint64_t seed);

struct ExperimentResult {
  std::string out_dir;
  metrics::Metrics float_metrics;
  metrics::Metrics quantized_metrics;
  metrics::Metrics finetuned_metrics;
  AnalogEval analog;
  double val_accuracy_before_finetune = 0.0;
  double val_accuracy_after_finetune = 0.0;
  int best_epoch = -1;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

const char* version_string();

}  // namespace ekgnet::experiment
