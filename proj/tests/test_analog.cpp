#include <doctest.h>

#include <cmath>
#include <numbers>

#include "core/analog.hpp"
#include "core/beats.hpp"
#include "core/error.hpp"
#include "core/quant.hpp"
#include "support/synthetic.hpp"

using namespace ekgnet;
using namespace ekgnet::analog;

namespace {

quant::QuantizedModel random_qmodel(std::uint64_t seed, int classes = 4) {
  model::Arch arch;
  arch.classes = classes;
  rng::Stream rng(seed);
  const model::ModelParams params = model::init_params(arch, rng);
  return quant::quantize(params, quant::build_codebook(params));
}

}  // namespace

TEST_CASE("mac_sequence") {
  rng::Stream rng(1);
  SUBCASE("noiseless config gives the exact centered dot product") {
    MacConfig cfg = MacConfig{}.noiseless();
    cfg.v_ref = 0.0;
    cfg.gain = 1.0;
    const std::vector<double> w = {0.1, -0.2, 0.05};
    const std::vector<double> x = {0.62, 0.7, 0.6};
    const double out = mac_sequence(w, x, cfg, rng);
    double expect = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) expect += w[i] * (x[i] - 0.65);
    CHECK(out == doctest::Approx(expect).epsilon(1e-15));
  }
  SUBCASE("all-zero weights return v_ref") {
    MacConfig cfg = MacConfig{}.noiseless();
    cfg.v_ref = 0.42;
    const std::vector<double> w(5, 0.0);
    const std::vector<double> x(5, 0.66);
    CHECK(mac_sequence(w, x, cfg, rng) == doctest::Approx(0.42).epsilon(1e-15));
  }
  SUBCASE("noiseless output is invariant under pair permutation") {
    MacConfig cfg = MacConfig{}.noiseless();
    std::vector<double> w = {0.1, -0.05, 0.02, 0.08};
    std::vector<double> x = {0.61, 0.69, 0.64, 0.66};
    const double base = mac_sequence(w, x, cfg, rng);
    std::swap(w[0], w[3]);
    std::swap(x[0], x[3]);
    std::swap(w[1], w[2]);
    std::swap(x[1], x[2]);
    CHECK(mac_sequence(w, x, cfg, rng) == doctest::Approx(base).epsilon(1e-15));
  }
  SUBCASE("length mismatch is an error") {
    MacConfig cfg;
    const std::vector<double> w(3, 0.0), x(4, 0.65);
    CHECK_THROWS_AS(mac_sequence(w, x, cfg, rng), Error);
  }
  SUBCASE("noise is additive and zero-mean around the leakage ramp") {
    MacConfig cfg;  // default sigma knobs
    cfg.leakage_per_step = 1e-4;
    const std::vector<double> w = {0.08, -0.06, 0.1, 0.02, -0.09};
    const std::vector<double> x = {0.61, 0.68, 0.66, 0.63, 0.69};
    const double ideal = mac_sequence(w, x, cfg.noiseless(), rng);
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    rng::Stream mc(77);
    for (int i = 0; i < n; ++i) {
      const double d = mac_sequence(w, x, cfg, mc) - ideal;
      sum += d;
      sum_sq += d * d;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sum_sq / n - mean * mean);
    const double expected_mean = cfg.leakage_per_step * static_cast<double>(w.size());
    CHECK(std::abs(mean - expected_mean) < 3.0 * sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("characterize_mac") {
  SUBCASE("all-zero sigmas give zero NRMSE") {
    const MacConfig cfg = MacConfig{}.noiseless();
    const auto rep = characterize_mac(cfg, 10000, 1);
    CHECK(rep.nrmse_weight_path == 0.0);
    CHECK(rep.nrmse_input_path == 0.0);
    CHECK(rep.nrmse_kernel == 0.0);
  }
  SUBCASE("default knobs reproduce the configured NRMSE within 20 percent") {
    const MacConfig cfg;
    const auto rep = characterize_mac(cfg, 100000, 1);
    CHECK(rep.nrmse_weight_path == doctest::Approx(0.0036).epsilon(0.2));
    CHECK(rep.nrmse_input_path == doctest::Approx(0.0062).epsilon(0.2));
    CHECK(rep.nrmse_kernel == doctest::Approx(0.0002).epsilon(0.2));
    CHECK(rep.trials == 100000);
    CHECK(rep.ci_rel > 0.0);
  }
  SUBCASE("deterministic for a fixed seed") {
    const MacConfig cfg;
    const auto a = characterize_mac(cfg, 20000, 9);
    const auto b = characterize_mac(cfg, 20000, 9);
    CHECK(a.nrmse_weight_path == b.nrmse_weight_path);
    CHECK(a.nrmse_input_path == b.nrmse_input_path);
    CHECK(a.nrmse_kernel == b.nrmse_kernel);
  }
}

TEST_CASE("analog_forward noiseless equivalence with the float network") {
  const auto qmodel = random_qmodel(5);
  const model::ModelParams dq = quant::decode(qmodel);
  MacConfig cfg = MacConfig{}.noiseless();
  cfg.input_zero = 0.6;  // model-domain reference: volts = 0.6 + 0.1 * x
  cfg.weight_range = 2.0 * qmodel.codebook.w_max;
  const auto noise = model::NoiseModel::disabled();
  const AnalogSimulator sim(qmodel, cfg, noise, 1);

  rng::Stream rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, kBeatLength> beat{};
    for (auto& v : beat) v = rng.next_unit();
    const auto volts = pipeline::scale_to_voltage(beat);
    const auto hw = sim.classify(volts, static_cast<std::uint64_t>(trial));
    const int ref = model::predict(dq.arch, dq.weights, beat);
    CHECK(hw.class_code == ref);
  }
}

TEST_CASE("analog_forward on an all-center input returns v_ref nodes and code 0") {
  const auto qmodel = random_qmodel(7);
  MacConfig cfg = MacConfig{}.noiseless();
  cfg.v_ref = 0.1;
  const auto noise = model::NoiseModel::disabled();
  const AnalogSimulator sim(qmodel, cfg, noise, 1);

  std::vector<double> beat(kBeatLength, cfg.input_zero);  // zero signal everywhere
  const auto hw = sim.classify(beat, 0);
  for (const double v : hw.node_voltages) CHECK(v == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(hw.class_code == 0);  // tie breaks to the first node
}

TEST_CASE("analog_forward is reproducible per (seed, trial)") {
  const auto qmodel = random_qmodel(8);
  const MacConfig cfg;
  const model::NoiseModel noise;
  const AnalogSimulator sim(qmodel, cfg, noise, 42);
  std::vector<double> beat(kBeatLength, 0.63);
  beat[40] = 0.69;
  const auto a = sim.classify(beat, 3);
  const auto b = sim.classify(beat, 3);
  CHECK(a.node_voltages == b.node_voltages);
  const auto c = sim.classify(beat, 4);
  CHECK(a.node_voltages != c.node_voltages);  // different trial stream
}

TEST_CASE("analog_forward rejects wrong beat lengths") {
  const auto qmodel = random_qmodel(9);
  const MacConfig cfg;
  const model::NoiseModel noise;
  const std::vector<double> beat(100, 0.65);
  CHECK_THROWS_AS(analog_forward(qmodel, beat, cfg, noise, 1), Error);
}

TEST_CASE("hardware_rpeak_detect") {
  SUBCASE("flat signal fires nothing") {
    const std::vector<double> x(500, 0.4);
    CHECK(hardware_rpeak_detect(x, 0.05, 0.02).empty());
  }
  SUBCASE("a single-sample spike is not confirmed") {
    std::vector<double> x(100, 0.0);
    x[50] = 1.0;  // one high-gradient sample, then the gradient collapses
    CHECK(hardware_rpeak_detect(x, 0.5, 0.25).empty());
  }
  SUBCASE("two consecutive high gradients confirm an event") {
    std::vector<double> x(100, 0.0);
    for (int i = 0; i < 5; ++i) x[static_cast<std::size_t>(50 + i)] = 0.3 * (i + 1);
    const auto events = hardware_rpeak_detect(x, 0.2, 0.1);
    REQUIRE(events.size() == 1);
    CHECK(events[0] == 51);  // second high sample
  }
  SUBCASE("refractory period suppresses retriggering") {
    std::vector<double> x(200, 0.0);
    // periodic steep ramps every 10 samples, refractory 25
    for (int start = 10; start < 190; start += 10)
      for (int i = 0; i < 4; ++i) x[static_cast<std::size_t>(start + i)] = 0.4 * i;
    const auto events = hardware_rpeak_detect(x, 0.3, 0.1, 25);
    for (std::size_t i = 1; i < events.size(); ++i) CHECK(events[i] - events[i - 1] > 25);
  }
  SUBCASE("agrees with the software detector on a synthetic beat train") {
    testsupport::SyntheticConfig cfg;
    cfg.beats_per_class = 100;
    cfg.single_class = 0;  // a uniform train of normal beats
    cfg.seed = 31;
    const auto rec = testsupport::make_synthetic_ecg(cfg);
    const auto at125 = pipeline::resample(rec.signal_mv, rec.fs, 125.0);

    // software reference peaks over the whole strip
    std::vector<std::size_t> reference;
    const auto windows = pipeline::split_windows(at125, 1250);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const auto norm = pipeline::normalize(windows[w]);
      for (const auto p : pipeline::find_rpeaks(norm.samples)) reference.push_back(w * 1250 + p);
    }
    REQUIRE(reference.size() > 20);

    const auto [high, low] = default_rpeak_thresholds(
        std::span<const double>(at125).subspan(0, 1250));
    const auto events = hardware_rpeak_detect(at125, high, low);

    // fraction of software peaks matched by a hardware event within 0.1 s
    std::size_t matched = 0;
    for (const auto ref : reference) {
      for (const auto ev : events) {
        const double dt = (static_cast<double>(ev) - static_cast<double>(ref)) / 125.0;
        if (std::abs(dt) <= 0.1) {
          ++matched;
          break;
        }
      }
    }
    CHECK(static_cast<double>(matched) >= 0.9 * static_cast<double>(reference.size()));
  }
}

TEST_CASE("agc") {
  SUBCASE("signal already at target takes the lowest gain") {
    std::vector<double> x = {0.0, 0.5, -0.5};  // amplitude 1.0
    const std::vector<double> ladder = {1, 2, 5};
    const auto r = agc(x, 1.0, ladder);
    CHECK(r.gain == 1.0);
    CHECK_FALSE(r.saturated);
  }
  SUBCASE("small sine picks the first sufficient gain") {
    std::vector<double> x(1000);
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = 0.01 * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 100.0);
    const std::vector<double> ladder = {1, 2, 5, 10};
    const auto r = agc(x, 0.1, ladder);  // peak-to-valley 0.02 * gain
    CHECK(r.gain == 5.0);
    CHECK_FALSE(r.saturated);
  }
  SUBCASE("exhausted ladder saturates at the top gain") {
    const std::vector<double> x = {0.0, 0.001};
    const std::vector<double> ladder = {1, 2};
    const auto r = agc(x, 1.0, ladder);
    CHECK(r.gain == 2.0);
    CHECK(r.saturated);
  }
  SUBCASE("empty ladder is an error") {
    const std::vector<double> x = {0.0, 1.0};
    CHECK_THROWS_AS(agc(x, 1.0, {}), Error);
  }
}
