#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/quant.hpp"
#include "core/rng.hpp"

namespace ekgnet::analog {

// Behavioral knobs for the sequential MAC. Noise magnitudes are relative to
// the full excursions (weight_range for the weight path, input_range for the
// input path), matching how the NRMSE characterization normalizes.
struct MacConfig {
  double v_ref = 0.0;            // accumulator baseline voltage
  double gain = 1.0;             // folds the output current-to-voltage conversion
  double sigma_w_rel = 0.0036;   // dynamic weight-path noise
  double sigma_in_rel = 0.0062;  // input-path noise
  double sigma_kernel_rel = 0.0002;  // static intra-kernel mismatch
  double leakage_per_step = 0.0;     // volts added per accumulation
  double input_zero = 0.65;      // input voltage treated as zero signal
  double input_range = 0.1;      // hardware input span, V
  double weight_range = 0.2;     // full weight excursion, V

  MacConfig noiseless() const {
    MacConfig c = *this;
    c.sigma_w_rel = c.sigma_in_rel = c.sigma_kernel_rel = 0.0;
    c.leakage_per_step = 0.0;
    return c;
  }
};

// acc starts at v_ref; each step adds gain*(w + eta_w + eta_k)*((x - input_zero) + eta_x)
// plus the per-step leakage. static_mismatch, when given, replaces the
// per-call kernel mismatch draw (one entry per weight).
double mac_sequence(std::span<const double> weights, std::span<const double> inputs,
                    const MacConfig& cfg, rng::Stream& rng,
                    std::span<const double> static_mismatch = {});

struct HardwareOutput {
  int class_code = 0;                 // 2-bit argmax code
  std::vector<double> node_voltages;  // final-layer nodes
};

// Behavioral model of the analog datapath: every conv/FC node is one
// mac_sequence pass; ReLU, max pooling and the final max are ideal
// (digitally assisted in hardware). Hidden layers reference v_ref.
class AnalogSimulator {
 public:
  AnalogSimulator(const quant::QuantizedModel& qmodel, const MacConfig& cfg,
                  const model::NoiseModel& noise, std::uint64_t seed);

  // Deterministic per (seed, trial_id); safe to call concurrently.
  HardwareOutput classify(std::span<const double> beat_volts, std::uint64_t trial_id) const;

  const std::vector<double>& analog_weights() const { return weights_; }

 private:
  model::Arch arch_;
  std::vector<double> weights_;          // dequantized analog levels
  std::vector<double> static_mismatch_;  // per weight, one draw per device
  MacConfig cfg_;
  model::NoiseModel noise_;
  std::uint64_t seed_;
};

HardwareOutput analog_forward(const quant::QuantizedModel& qmodel, std::span<const double> beat_volts,
                              const MacConfig& cfg, const model::NoiseModel& noise, std::uint64_t seed,
                              std::uint64_t trial_id = 0);

struct MacCharacterization {
  double nrmse_weight_path = 0.0;
  double nrmse_input_path = 0.0;
  double nrmse_kernel = 0.0;
  std::int64_t trials = 0;
  double ci_rel = 0.0;  // ~95% relative half-width of the RMS estimates
};

// Monte Carlo sweeps of single multiplies, one noise path at a time,
// each against the ideal product, normalized by the full-scale output range.
MacCharacterization characterize_mac(const MacConfig& cfg, std::int64_t trials, std::uint64_t seed = 1);

std::string characterization_json(const MacConfig& cfg, const MacCharacterization& report);

// Schmitt-trigger gradient detector: output goes high above threshold_high,
// low below threshold_low; an event fires on the second consecutive high
// sample, then a refractory window suppresses retriggering.
std::vector<std::size_t> hardware_rpeak_detect(std::span<const double> samples, double threshold_high,
                                               double threshold_low, int refractory = 25);

// 60%/30% of the calibration window's max gradient.
std::pair<double, double> default_rpeak_thresholds(std::span<const double> calibration);

struct AgcResult {
  double gain = 1.0;
  bool saturated = false;
};

// Sweeps the gain ladder upward until peak-to-valley amplitude meets target.
AgcResult agc(std::span<const double> signal, double target_amplitude, std::span<const double> gain_ladder);

}  // namespace ekgnet::analog
