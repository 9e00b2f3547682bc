#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"

namespace ekgnet::testsupport {

// Deterministic ECG-like fixture: a train of P-QRS-T complexes with four
// distinct beat morphologies mapped to the AAMI classes via the symbols
// N (normal), A (atrial premature), V (ventricular), / (paced).
struct SyntheticConfig {
  double fs = 360.0;
  int beats_per_class = 40;
  int num_classes = 4;   // 4 = arrhythmia morphologies, 2 = healthy/MI
  int single_class = -1; // >= 0: every beat gets this class (per-record label)
  double rr_mean_s = 0.8;
  double rr_jitter_s = 0.04;
  double amp_jitter = 0.02;
  double noise_sd_mv = 0.008;
  std::uint64_t seed = 1;
};

struct SyntheticRecord {
  std::vector<double> signal_mv;
  std::vector<std::pair<std::int64_t, char>> annotations;  // beat sample + symbol
  std::vector<int> labels;                                 // class per beat
  double fs = 360.0;
};

SyntheticRecord make_synthetic_ecg(const SyntheticConfig& config);

// Waveform of one beat, relative to the R peak (seconds); mv units.
double beat_waveform(int cls, double t_rel_s);

// ---- test-only WFDB writers ------------------------------------------------

std::vector<std::uint8_t> encode_format212(const std::vector<std::vector<int>>& channels);

// Beat words with SKIP escapes for long intervals; optional leading rhythm
// annotation with an aux string; terminated by the null word.
std::vector<std::uint8_t> encode_annotations(std::span<const std::pair<std::int64_t, char>> beats,
                                             bool with_rhythm_prefix = true);

struct EncodedRecord {
  std::string header_text;
  std::vector<std::uint8_t> dat;
  std::vector<std::uint8_t> atr;
};

// Converts mV to 12-bit ADC (gain 200, baseline 1024) and emits .hea/.dat/.atr
// contents for a single-channel record.
EncodedRecord encode_record(const std::string& name, const SyntheticRecord& record);

// Writes NAME.hea/.dat/.atr under dir and returns the path prefix.
std::string write_wfdb_record(const std::string& dir, const std::string& name,
                              const SyntheticRecord& record);

}  // namespace ekgnet::testsupport
