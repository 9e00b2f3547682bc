#include "support/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/error.hpp"
#include "core/wfdb.hpp"

namespace ekgnet::testsupport {

namespace {

double bump(double t, double center, double sigma, double amplitude) {
  const double d = (t - center) / sigma;
  return amplitude * std::exp(-0.5 * d * d);
}

}  // namespace

namespace {

double beat_waveform_raw(int cls, double t) {
  switch (cls) {
    case 0:  // normal: P wave, narrow QRS, upright T
      return bump(t, -0.16, 0.025, 0.15) + bump(t, 0.0, 0.022, 1.0) + bump(t, 0.26, 0.06, 0.3);
    case 1:  // atrial premature: no P, earlier taller T
      return bump(t, 0.0, 0.02, 1.0) + bump(t, 0.17, 0.045, 0.45);
    case 2:  // ventricular: wide QRS, after-dip, inverted T
      return bump(t, 0.0, 0.045, 1.0) + bump(t, 0.1, 0.05, -0.3) + bump(t, 0.3, 0.07, -0.2);
    case 3:  // paced: spike plus delayed wide complex
      return bump(t, 0.0, 0.02, 1.0) + bump(t, 0.11, 0.06, 0.55) + bump(t, 0.33, 0.06, 0.15);
    default:
      break;
  }
  // PTB-style MI morphology: pathological Q dip and ST elevation
  return bump(t, -0.05, 0.02, -0.22) + bump(t, 0.0, 0.022, 1.0) + bump(t, 0.14, 0.09, 0.45) +
         bump(t, 0.32, 0.06, 0.3);
}

}  // namespace

// Each morphology is scaled so its R-peak value is exactly 1; the overlapping
// secondary waves would otherwise nudge per-class peaks across the 0.9
// detection threshold after min-max normalization.
double beat_waveform(int cls, double t) {
  static const double peaks[] = {beat_waveform_raw(0, 0.0), beat_waveform_raw(1, 0.0),
                                 beat_waveform_raw(2, 0.0), beat_waveform_raw(3, 0.0),
                                 beat_waveform_raw(4, 0.0)};
  const int idx = cls >= 0 && cls < 4 ? cls : 4;
  return beat_waveform_raw(cls, t) / peaks[idx];
}

SyntheticRecord make_synthetic_ecg(const SyntheticConfig& config) {
  require(config.num_classes == 2 || config.num_classes == 4, Errc::invalid_argument,
          "synthetic: 2 or 4 classes");
  rng::Stream rng(config.seed, 0x53594e5448ULL);  // "SYNTH"

  SyntheticRecord out;
  out.fs = config.fs;

  const int total_beats = config.beats_per_class * (config.single_class >= 0 ? 1 : config.num_classes);
  std::vector<double> beat_times;
  std::vector<int> beat_classes;
  double t = 1.0;
  for (int i = 0; i < total_beats; ++i) {
    beat_times.push_back(t);
    beat_classes.push_back(config.single_class >= 0 ? config.single_class : i % config.num_classes);
    t += config.rr_mean_s + rng.next_uniform(-config.rr_jitter_s, config.rr_jitter_s);
  }
  const double duration = t + 1.0;

  const auto n = static_cast<std::size_t>(std::llround(duration * config.fs));
  out.signal_mv.assign(n, 0.0);

  // symbols for the 4-class task; PTB-style records are all 'N'
  static const char symbols4[4] = {'N', 'A', 'V', '/'};

  for (std::size_t b = 0; b < beat_times.size(); ++b) {
    const double center = beat_times[b];
    const int cls = beat_classes[b];
    const double amp = 1.0 + rng.next_uniform(-config.amp_jitter, config.amp_jitter);
    const int morphology = config.num_classes == 4 ? cls : (cls == 0 ? 0 : 4);

    const auto lo = static_cast<std::int64_t>((center - 0.45) * config.fs);
    const auto hi = static_cast<std::int64_t>((center + 0.45) * config.fs);
    for (std::int64_t i = std::max<std::int64_t>(lo, 0);
         i < std::min<std::int64_t>(hi, static_cast<std::int64_t>(n)); ++i) {
      const double rel = static_cast<double>(i) / config.fs - center;
      out.signal_mv[static_cast<std::size_t>(i)] += amp * beat_waveform(morphology, rel);
    }
    const auto peak = static_cast<std::int64_t>(std::llround(center * config.fs));
    out.annotations.emplace_back(peak, config.num_classes == 4 ? symbols4[cls] : 'N');
    out.labels.push_back(cls);
  }

  for (auto& v : out.signal_mv) v += config.noise_sd_mv * rng.next_normal();
  return out;
}

std::vector<std::uint8_t> encode_format212(const std::vector<std::vector<int>>& channels) {
  require(!channels.empty(), Errc::invalid_argument, "encode: no channels");
  const std::size_t num_samples = channels[0].size();
  for (const auto& ch : channels)
    require(ch.size() == num_samples, Errc::invalid_argument, "encode: ragged channels");

  const std::size_t total = channels.size() * num_samples;
  auto sample_at = [&](std::size_t flat) {
    const int v = channels[flat % channels.size()][flat / channels.size()];
    require(v >= -2048 && v <= 2047, Errc::invalid_argument, "encode: sample outside 12-bit range");
    return v & 0xFFF;
  };

  std::vector<std::uint8_t> bytes;
  bytes.reserve((total + 1) / 2 * 3);
  for (std::size_t i = 0; i < total; i += 2) {
    const int s0 = sample_at(i);
    const int s1 = i + 1 < total ? sample_at(i + 1) : 0;
    bytes.push_back(static_cast<std::uint8_t>(s0 & 0xFF));
    bytes.push_back(static_cast<std::uint8_t>(((s0 >> 8) & 0x0F) | (((s1 >> 8) & 0x0F) << 4)));
    bytes.push_back(static_cast<std::uint8_t>(s1 & 0xFF));
  }
  return bytes;
}

namespace {

void push_word(std::vector<std::uint8_t>& out, int code, int data) {
  const std::uint16_t word = static_cast<std::uint16_t>(((code & 0x3F) << 10) | (data & 0x3FF));
  out.push_back(static_cast<std::uint8_t>(word & 0xFF));
  out.push_back(static_cast<std::uint8_t>(word >> 8));
}

}  // namespace

std::vector<std::uint8_t> encode_annotations(std::span<const std::pair<std::int64_t, char>> beats,
                                             bool with_rhythm_prefix) {
  std::vector<std::uint8_t> out;
  std::int64_t time = 0;

  auto advance = [&](std::int64_t target, int code) {
    std::int64_t delta = target - time;
    require(delta >= 0, Errc::invalid_argument, "encode: annotations must be sorted");
    if (delta > 1023) {
      push_word(out, 59, 0);  // SKIP: 32-bit interval, high word first, each LE
      const auto value = static_cast<std::uint32_t>(delta);
      out.push_back(static_cast<std::uint8_t>((value >> 16) & 0xFF));
      out.push_back(static_cast<std::uint8_t>((value >> 24) & 0xFF));
      out.push_back(static_cast<std::uint8_t>(value & 0xFF));
      out.push_back(static_cast<std::uint8_t>((value >> 8) & 0xFF));
      delta = 0;
    }
    push_word(out, code, static_cast<int>(delta));
    time = target;
  };

  if (with_rhythm_prefix && !beats.empty()) {
    // rhythm change with an aux string, like real annotation streams carry
    advance(std::max<std::int64_t>(beats.front().first / 2, 1), 28);  // '+'
    const char aux[] = "(N";
    push_word(out, 63, static_cast<int>(sizeof(aux) - 1));
    out.push_back(static_cast<std::uint8_t>(aux[0]));
    out.push_back(static_cast<std::uint8_t>(aux[1]));
  }

  for (const auto& [sample, symbol] : beats) {
    const int code = wfdb::code_for_symbol(symbol);
    require(code > 0, Errc::invalid_argument, std::string("encode: unknown symbol ") + symbol);
    advance(sample, code);
  }
  push_word(out, 0, 0);  // terminator
  return out;
}

EncodedRecord encode_record(const std::string& name, const SyntheticRecord& record) {
  constexpr double kGain = 200.0;
  constexpr int kBaseline = 1024;

  std::vector<int> adc(record.signal_mv.size());
  for (std::size_t i = 0; i < adc.size(); ++i) {
    int v = static_cast<int>(std::llround(record.signal_mv[i] * kGain)) + kBaseline;
    adc[i] = std::clamp(v, -2048, 2047);
  }

  EncodedRecord out;
  out.dat = encode_format212({adc});
  out.atr = encode_annotations(record.annotations);

  const std::int16_t checksum = wfdb::adc_checksum(adc);
  out.header_text = name + " 1 " + std::to_string(static_cast<int>(record.fs)) + " " +
                    std::to_string(adc.size()) + "\n" + name + ".dat 212 " +
                    std::to_string(static_cast<int>(kGain)) + "(" + std::to_string(kBaseline) +
                    ")/mV 12 " + std::to_string(kBaseline) + " " + std::to_string(adc.empty() ? 0 : adc[0]) +
                    " " + std::to_string(checksum) + " 0 MLII\n# synthetic fixture\n";
  return out;
}

std::string write_wfdb_record(const std::string& dir, const std::string& name,
                              const SyntheticRecord& record) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const EncodedRecord enc = encode_record(name, record);
  const std::string prefix = (fs::path(dir) / name).string();

  std::ofstream hea(prefix + ".hea", std::ios::binary);
  hea << enc.header_text;
  std::ofstream dat(prefix + ".dat", std::ios::binary);
  dat.write(reinterpret_cast<const char*>(enc.dat.data()), static_cast<std::streamsize>(enc.dat.size()));
  std::ofstream atr(prefix + ".atr", std::ios::binary);
  atr.write(reinterpret_cast<const char*>(enc.atr.data()), static_cast<std::streamsize>(enc.atr.size()));
  return prefix;
}

}  // namespace ekgnet::testsupport
