#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/model.hpp"

namespace ekgnet::train {

struct TrainConfig {
  double lr0 = 0.003;
  int halve_every = 50;  // epochs per halving
  // Strong enough to hold trained weights inside the sub-volt range the
  // analog noise model and the 6-bit weight DAC are built around.
  double weight_decay = 1e-3;
  int epochs = 150;
  int batch_size = 128;
  double distill_temperature = 1.5;
  double distill_weight = 0.0;  // 0 = plain cross-entropy; requires teacher logits when > 0
  std::uint64_t seed = 0;
  double init_range = 0.1;
  bool reparam_full = true;  // propagate through sigma(w); else straight-through
};

double lr_at(int epoch, const TrainConfig& config);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// Adam (b1=0.9, b2=0.999, eps=1e-8) with L2 decay folded into the gradient.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad, double lr,
               double weight_decay);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_balanced_acc = 0.0;
};

struct TrainResult {
  model::ModelParams best;    // highest validation balanced accuracy
  model::ModelParams final;   // parameters after the last epoch
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val = 0.0;
};

// Teacher logits keyed by source beat index; empty = plain cross-entropy.
using TeacherLogits = std::vector<std::vector<double>>;

TeacherLogits load_teacher_csv(const std::string& path, int classes);

TrainResult train(const model::Arch& arch, const TrainConfig& config, const model::NoiseModel& noise,
                  const BeatSet& data, std::span<const std::uint32_t> train_idx,
                  std::span<const std::uint32_t> val_idx, const TeacherLogits* teacher = nullptr);

std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace ekgnet::train
