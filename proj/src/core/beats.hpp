#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/rng.hpp"
#include "core/wfdb.hpp"

namespace ekgnet::pipeline {

struct ExtractParams {
  double fs_target = 125.0;
  int window_len = 1250;        // 10 s at 125 Hz
  double peak_threshold = 0.9;  // on the normalized window
  double beat_factor = 1.2;     // segment length = beat_factor * T
  double label_window_s = 0.15; // max |annotation - peak| for labeling
  int channel = -1;             // -1 = prefer the lead II channel, else first
};

std::vector<double> resample(std::span<const double> signal, double fs_in, double fs_out);

std::vector<std::vector<double>> split_windows(std::span<const double> signal, int window_len = 1250);

struct NormalizedWindow {
  std::vector<double> samples;
  bool degenerate = false;
};

NormalizedWindow normalize(std::span<const double> window);

std::vector<std::size_t> find_rpeaks(std::span<const double> window, double threshold = 0.9);

// Maps a peak's absolute time to a class label; nullopt drops the beat.
using LabelFn = std::function<std::optional<int>(double peak_time_s)>;

std::vector<Beat> extract_beats(const NormalizedWindow& window, const std::vector<std::size_t>& rpeaks,
                                const LabelFn& label_of, double window_start_s, double fs,
                                const std::string& record_name, std::int64_t window_index,
                                double beat_factor = 1.2);

// Full per-record pipeline: resample -> window -> normalize -> peaks -> beats.
// fixed_label labels every detected beat (PTB-style records without beat
// annotations); otherwise labels come from the record's annotations.
std::vector<Beat> record_to_beats(const wfdb::Record& record, const ExtractParams& params,
                                  std::optional<int> fixed_label = std::nullopt);

std::array<double, kBeatLength> scale_to_voltage(const std::array<double, kBeatLength>& samples);

struct SplitConfig {
  std::vector<std::int64_t> test_counts;       // per class
  std::vector<std::int64_t> oversample_target; // per class
  double val_fraction = 0.1;                   // of post-test source beats
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<std::uint32_t> train;  // oversampled (indices repeat)
  std::vector<std::uint32_t> val;
  std::vector<std::uint32_t> test;
};

Split split_and_oversample(const BeatSet& set, const SplitConfig& config);

std::string split_manifest_json(const BeatSet& set, const SplitConfig& config, const Split& split);

}  // namespace ekgnet::pipeline
