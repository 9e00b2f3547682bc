#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/rng.hpp"

namespace ekgnet::quant {

// Uniform symmetric grid over [-w_max, +w_max]; one codebook for the network.
struct Codebook {
  int bits = 6;
  double w_max = 0.0;
  double step = 0.0;

  int num_levels() const { return 1 << bits; }
  double level(int code) const { return -w_max + step * code; }
};

Codebook build_codebook(const model::ModelParams& params, int bits = 6);

struct QuantizedModel {
  model::Arch arch;
  Codebook codebook;
  std::vector<int> codes;  // flat, same layout as ModelParams::weights
};

int quantize_value(double w, const Codebook& cb);
QuantizedModel quantize(const model::ModelParams& params, const Codebook& cb);
model::ModelParams decode(const QuantizedModel& qmodel);

struct FinetuneTrial {
  int iteration = 0;
  int weight_id = 0;
  int direction = 0;  // +1 up, -1 down
  double acc_before = 0.0;
  double acc_after = 0.0;
  bool accepted = false;
};

struct FinetuneResult {
  std::vector<double> accepted_trace;  // accuracy after each iteration
  std::vector<FinetuneTrial> log;
  double final_accuracy = 0.0;
};

// Single-weight hill climb: move a random code one level up or down, keep the
// move unless accuracy strictly drops. Boundary moves saturate to no-ops.
using CodesEvalFn = std::function<double(const std::vector<int>&)>;

FinetuneResult finetune_codes(std::vector<int>& codes, int num_levels, const CodesEvalFn& eval_fn,
                              int iterations, rng::Stream& rng);

using ModelEvalFn = std::function<double(const QuantizedModel&)>;

FinetuneResult finetune(QuantizedModel& qmodel, const ModelEvalFn& eval_fn, int iterations,
                        rng::Stream& rng);

std::string finetune_log_csv(const FinetuneResult& result);

std::string to_quantized_json(const QuantizedModel& qmodel);
QuantizedModel from_quantized_json(const std::string& text);
void save_quantized(const QuantizedModel& qmodel, const std::string& path);
QuantizedModel load_quantized(const std::string& path);

}  // namespace ekgnet::quant
