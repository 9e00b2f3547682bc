#include "core/analog.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "core/error.hpp"

namespace ekgnet::analog {

double mac_sequence(std::span<const double> weights, std::span<const double> inputs,
                    const MacConfig& cfg, rng::Stream& rng, std::span<const double> static_mismatch) {
  require(weights.size() == inputs.size(), Errc::invalid_argument, "mac_sequence: length mismatch");
  require(static_mismatch.empty() || static_mismatch.size() == weights.size(), Errc::invalid_argument,
          "mac_sequence: static mismatch length mismatch");

  const double sigma_w = cfg.sigma_w_rel * cfg.weight_range;
  const double sigma_x = cfg.sigma_in_rel * cfg.input_range;
  const double sigma_k = cfg.sigma_kernel_rel * cfg.weight_range;

  double acc = cfg.v_ref;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double w = weights[i];
    if (!static_mismatch.empty())
      w += static_mismatch[i];
    else if (sigma_k > 0.0)
      w += sigma_k * rng.next_normal();
    if (sigma_w > 0.0) w += sigma_w * rng.next_normal();
    double x = inputs[i] - cfg.input_zero;
    if (sigma_x > 0.0) x += sigma_x * rng.next_normal();
    acc += cfg.gain * w * x + cfg.leakage_per_step;
  }
  return acc;
}

AnalogSimulator::AnalogSimulator(const quant::QuantizedModel& qmodel, const MacConfig& cfg,
                                 const model::NoiseModel& noise, std::uint64_t seed)
    : arch_(qmodel.arch), cfg_(cfg), noise_(noise), seed_(seed) {
  require(cfg.gain > 0, Errc::invalid_argument, "analog: gain must be positive");
  weights_ = quant::decode(qmodel).weights;
  static_mismatch_.resize(weights_.size(), 0.0);
  const double sigma_k = cfg.sigma_kernel_rel * cfg.weight_range;
  if (sigma_k > 0.0) {
    rng::Stream device_rng(rng::mix(seed, 0x4445564943ULL));  // "DEVIC"
    for (auto& m : static_mismatch_) m = sigma_k * device_rng.next_normal();
  }
}

HardwareOutput AnalogSimulator::classify(std::span<const double> beat_volts,
                                         std::uint64_t trial_id) const {
  require(static_cast<int>(beat_volts.size()) == arch_.input_len, Errc::invalid_argument,
          "analog: beat length must be " + std::to_string(arch_.input_len));
  rng::Stream rng(rng::mix(seed_, 0x54524941ULL), trial_id);  // "TRIA"

  const auto w = std::span<const double>(weights_);
  const auto mm = std::span<const double>(static_mismatch_);
  const int k = arch_.kernel, stride = arch_.conv_stride;

  // hidden layers reference the accumulator baseline, not the input port zero
  MacConfig hidden_cfg = cfg_;
  hidden_cfg.input_zero = cfg_.v_ref;

  auto relu_node = [&](double v) { return v > cfg_.v_ref ? v : cfg_.v_ref; };

  // conv1: input voltages from the sample-and-hold
  const int len1 = arch_.conv1_len();
  std::vector<double> a1(static_cast<std::size_t>(len1 * arch_.conv1_out));
  for (int t = 0; t < len1; ++t) {
    for (int co = 0; co < arch_.conv1_out; ++co) {
      const auto off = static_cast<std::size_t>(arch_.conv1_off() + co * k);
      const double v = mac_sequence(w.subspan(off, static_cast<std::size_t>(k)),
                                    beat_volts.subspan(static_cast<std::size_t>(t * stride), static_cast<std::size_t>(k)),
                                    cfg_, rng, mm.subspan(off, static_cast<std::size_t>(k)));
      a1[static_cast<std::size_t>(t * arch_.conv1_out + co)] = relu_node(v);
    }
  }

  // conv2: gather the strided window into kernel order
  const int len2 = arch_.conv2_len();
  std::vector<double> a2(static_cast<std::size_t>(len2));
  std::vector<double> win(static_cast<std::size_t>(arch_.conv1_out * k));
  for (int t = 0; t < len2; ++t) {
    for (int ci = 0; ci < arch_.conv1_out; ++ci)
      for (int j = 0; j < k; ++j)
        win[static_cast<std::size_t>(ci * k + j)] =
            a1[static_cast<std::size_t>((t * stride + j) * arch_.conv1_out + ci)];
    const auto off = static_cast<std::size_t>(arch_.conv2_off());
    const double v = mac_sequence(w.subspan(off, static_cast<std::size_t>(arch_.conv2_size())), win,
                                  hidden_cfg, rng, mm.subspan(off, static_cast<std::size_t>(arch_.conv2_size())));
    a2[static_cast<std::size_t>(t)] = relu_node(v);
  }

  // ideal peak-detector max pooling
  const int plen = arch_.pool_len();
  std::vector<double> pool(static_cast<std::size_t>(plen));
  for (int t = 0; t < plen; ++t) {
    double best = a2[static_cast<std::size_t>(t * arch_.pool_stride)];
    for (int j = 1; j < arch_.pool_kernel; ++j)
      best = std::max(best, a2[static_cast<std::size_t>(t * arch_.pool_stride + j)]);
    pool[static_cast<std::size_t>(t)] = best;
  }

  std::vector<double> h1(static_cast<std::size_t>(arch_.fc1_out));
  for (int i = 0; i < arch_.fc1_out; ++i) {
    const auto off = static_cast<std::size_t>(arch_.fc1_off() + i * plen);
    h1[static_cast<std::size_t>(i)] = mac_sequence(w.subspan(off, static_cast<std::size_t>(plen)), pool,
                                                   hidden_cfg, rng, mm.subspan(off, static_cast<std::size_t>(plen)));
  }

  HardwareOutput out;
  out.node_voltages.resize(static_cast<std::size_t>(arch_.classes));
  for (int c = 0; c < arch_.classes; ++c) {
    const auto off = static_cast<std::size_t>(arch_.fc2_off() + c * arch_.fc1_out);
    out.node_voltages[static_cast<std::size_t>(c)] =
        mac_sequence(w.subspan(off, static_cast<std::size_t>(arch_.fc1_out)), h1, hidden_cfg, rng,
                     mm.subspan(off, static_cast<std::size_t>(arch_.fc1_out)));
  }
  model::apply_output_leakage(out.node_voltages, noise_, rng);

  out.class_code = static_cast<int>(std::max_element(out.node_voltages.begin(), out.node_voltages.end()) -
                                    out.node_voltages.begin());
  return out;
}

HardwareOutput analog_forward(const quant::QuantizedModel& qmodel, std::span<const double> beat_volts,
                              const MacConfig& cfg, const model::NoiseModel& noise, std::uint64_t seed,
                              std::uint64_t trial_id) {
  return AnalogSimulator(qmodel, cfg, noise, seed).classify(beat_volts, trial_id);
}

MacCharacterization characterize_mac(const MacConfig& cfg, std::int64_t trials, std::uint64_t seed) {
  require(trials >= 1, Errc::invalid_argument, "characterize_mac: trials must be >= 1");

  MacCharacterization rep;
  rep.trials = trials;

  const double w_half = cfg.weight_range / 2.0;
  const double x_half = cfg.input_range / 2.0;

  // Each sweep isolates one noise path, single-multiply MACs, v_ref folded out.
  MacConfig base = cfg.noiseless();
  base.v_ref = 0.0;
  base.leakage_per_step = 0.0;

  struct Sweep {
    double sum_sq = 0.0;
    void add(double err) { sum_sq += err * err; }
    double nrmse(std::int64_t n, double range) const {
      return range > 0 ? std::sqrt(sum_sq / static_cast<double>(n)) / range : 0.0;
    }
  };
  Sweep sw_w, sw_x, sw_k;

  MacConfig cfg_w = base;
  cfg_w.sigma_w_rel = cfg.sigma_w_rel;
  MacConfig cfg_x = base;
  cfg_x.sigma_in_rel = cfg.sigma_in_rel;
  MacConfig cfg_k = base;
  cfg_k.sigma_kernel_rel = cfg.sigma_kernel_rel;

  rng::Stream rng(rng::mix(seed, 0x4348415243ULL));  // "CHARC"

  for (std::int64_t i = 0; i < trials; ++i) {
    // weight path: sweep w, input pinned at full-scale deviation
    {
      const double w = rng.next_uniform(-w_half, w_half);
      const double x = cfg.input_zero + x_half;
      const double y = mac_sequence(std::span(&w, 1), std::span(&x, 1), cfg_w, rng);
      sw_w.add(y - cfg.gain * w * (x - cfg.input_zero));
    }
    // input path: sweep x, weight pinned at full scale
    {
      const double w = w_half;
      const double x = cfg.input_zero + rng.next_uniform(-x_half, x_half);
      const double y = mac_sequence(std::span(&w, 1), std::span(&x, 1), cfg_x, rng);
      sw_x.add(y - cfg.gain * w * (x - cfg.input_zero));
    }
    // kernel mismatch: fixed weight and input, fresh device draw per trial
    {
      const double w = w_half;
      const double x = cfg.input_zero + x_half;
      const double y = mac_sequence(std::span(&w, 1), std::span(&x, 1), cfg_k, rng);
      sw_k.add(y - cfg.gain * w * (x - cfg.input_zero));
    }
  }

  // normalize by the full-scale ideal output range of each sweep
  const double out_range_w = cfg.gain * x_half * cfg.weight_range;
  const double out_range_x = cfg.gain * w_half * cfg.input_range;
  rep.nrmse_weight_path = sw_w.nrmse(trials, out_range_w);
  rep.nrmse_input_path = sw_x.nrmse(trials, out_range_x);
  rep.nrmse_kernel = sw_k.nrmse(trials, out_range_w);
  rep.ci_rel = 1.96 / std::sqrt(2.0 * static_cast<double>(trials));
  return rep;
}

std::string characterization_json(const MacConfig& cfg, const MacCharacterization& report) {
  using nlohmann::json;
  json j;
  j["cfg"] = {{"v_ref", cfg.v_ref},
              {"gain", cfg.gain},
              {"sigma_w_rel", cfg.sigma_w_rel},
              {"sigma_in_rel", cfg.sigma_in_rel},
              {"sigma_kernel_rel", cfg.sigma_kernel_rel},
              {"leakage_per_step", cfg.leakage_per_step},
              {"input_zero", cfg.input_zero},
              {"input_range", cfg.input_range},
              {"weight_range", cfg.weight_range}};
  j["trials"] = report.trials;
  j["nrmse_weight_path"] = report.nrmse_weight_path;
  j["nrmse_input_path"] = report.nrmse_input_path;
  j["nrmse_kernel"] = report.nrmse_kernel;
  j["ci"] = {{"relative_halfwidth", report.ci_rel}};
  return j.dump(2) + "\n";
}

std::vector<std::size_t> hardware_rpeak_detect(std::span<const double> samples, double threshold_high,
                                               double threshold_low, int refractory) {
  require(threshold_high > threshold_low, Errc::invalid_argument,
          "rpeak_detect: hysteresis requires high > low");
  std::vector<std::size_t> events;
  bool high = false;
  int consecutive = 0;
  int cooldown = 0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double grad = samples[i] - samples[i - 1];
    if (!high && grad > threshold_high)
      high = true;
    else if (high && grad < threshold_low)
      high = false;

    if (cooldown > 0) {
      --cooldown;
      consecutive = 0;
      continue;
    }
    if (high) {
      if (++consecutive >= 2) {
        events.push_back(i);
        cooldown = refractory;
        consecutive = 0;
      }
    } else {
      consecutive = 0;
    }
  }
  return events;
}

std::pair<double, double> default_rpeak_thresholds(std::span<const double> calibration) {
  require(calibration.size() >= 2, Errc::invalid_argument, "rpeak thresholds: calibration too short");
  double max_grad = 0.0;
  for (std::size_t i = 1; i < calibration.size(); ++i)
    max_grad = std::max(max_grad, calibration[i] - calibration[i - 1]);
  return {0.6 * max_grad, 0.3 * max_grad};
}

AgcResult agc(std::span<const double> signal, double target_amplitude,
              std::span<const double> gain_ladder) {
  require(!gain_ladder.empty(), Errc::invalid_argument, "agc: empty gain ladder");
  require(!signal.empty(), Errc::invalid_argument, "agc: empty signal");
  const auto [mn, mx] = std::minmax_element(signal.begin(), signal.end());
  const double amplitude = *mx - *mn;  // peak-to-valley
  for (const double g : gain_ladder) {
    if (amplitude * g >= target_amplitude) return {g, false};
  }
  return {gain_ladder.back(), true};
}

}  // namespace ekgnet::analog
