#include "core/beats.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "core/error.hpp"
#include "core/textio.hpp"

namespace ekgnet::pipeline {

std::vector<double> resample(std::span<const double> signal, double fs_in, double fs_out) {
  require(!signal.empty(), Errc::invalid_argument, "resample: empty input");
  require(fs_in > 0 && fs_out > 0, Errc::invalid_argument, "resample: rates must be positive");

  const std::size_t n_in = signal.size();
  const std::size_t n_out =
      static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * fs_out / fs_in));
  std::vector<double> out(n_out);
  const double step = fs_in / fs_out;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto k = static_cast<std::size_t>(pos);
    if (k + 1 >= n_in) {
      out[i] = signal[n_in - 1];
    } else {
      const double frac = pos - static_cast<double>(k);
      out[i] = signal[k] * (1.0 - frac) + signal[k + 1] * frac;
    }
  }
  return out;
}

std::vector<std::vector<double>> split_windows(std::span<const double> signal, int window_len) {
  require(window_len > 0, Errc::invalid_argument, "split_windows: window_len must be positive");
  std::vector<std::vector<double>> out;
  const std::size_t len = static_cast<std::size_t>(window_len);
  for (std::size_t start = 0; start + len <= signal.size(); start += len)
    out.emplace_back(signal.begin() + static_cast<std::ptrdiff_t>(start),
                     signal.begin() + static_cast<std::ptrdiff_t>(start + len));
  return out;
}

NormalizedWindow normalize(std::span<const double> window) {
  require(!window.empty(), Errc::invalid_argument, "normalize: empty window");
  const auto [mn_it, mx_it] = std::minmax_element(window.begin(), window.end());
  const double mn = *mn_it, mx = *mx_it;
  NormalizedWindow out;
  out.samples.resize(window.size());
  if (mx == mn) {
    out.degenerate = true;  // all zeros
    return out;
  }
  const double inv = 1.0 / (mx - mn);
  for (std::size_t i = 0; i < window.size(); ++i) out.samples[i] = (window[i] - mn) * inv;
  return out;
}

std::vector<std::size_t> find_rpeaks(std::span<const double> window, double threshold) {
  std::vector<std::size_t> peaks;
  // local maxima via the first derivative's sign change, gated by amplitude
  for (std::size_t i = 1; i + 1 < window.size(); ++i) {
    if (window[i] - window[i - 1] > 0 && window[i + 1] - window[i] <= 0 && window[i] >= threshold)
      peaks.push_back(i);
  }
  return peaks;
}

namespace {

double median_interval(const std::vector<std::size_t>& rpeaks) {
  std::vector<double> diffs;
  diffs.reserve(rpeaks.size() - 1);
  for (std::size_t i = 1; i < rpeaks.size(); ++i)
    diffs.push_back(static_cast<double>(rpeaks[i] - rpeaks[i - 1]));
  std::sort(diffs.begin(), diffs.end());
  const std::size_t n = diffs.size();
  return n % 2 ? diffs[n / 2] : 0.5 * (diffs[n / 2 - 1] + diffs[n / 2]);
}

}  // namespace

std::vector<Beat> extract_beats(const NormalizedWindow& window, const std::vector<std::size_t>& rpeaks,
                                const LabelFn& label_of, double window_start_s, double fs,
                                const std::string& record_name, std::int64_t window_index,
                                double beat_factor) {
  std::vector<Beat> beats;
  if (window.degenerate || rpeaks.size() < 2) return beats;

  const double t_nominal = median_interval(rpeaks);
  const int seg_len = static_cast<int>(std::floor(beat_factor * t_nominal));
  const auto& x = window.samples;

  for (const std::size_t r : rpeaks) {
    const auto label = label_of(window_start_s + static_cast<double>(r) / fs);
    if (!label) continue;
    Beat beat;
    beat.label = *label;
    beat.t_beat = t_nominal;
    beat.source = {record_name, window_index, static_cast<std::int64_t>(r)};
    const int copy_len = std::min(seg_len, kBeatLength);
    for (int i = 0; i < copy_len; ++i) {
      const std::size_t idx = r + static_cast<std::size_t>(i);
      beat.samples[static_cast<std::size_t>(i)] = idx < x.size() ? x[idx] : 0.0;
    }
    beats.push_back(std::move(beat));
  }
  return beats;
}

namespace {

std::size_t pick_channel(const wfdb::Record& record, int requested) {
  if (requested >= 0) {
    require(requested < record.header.num_signals, Errc::invalid_argument,
            "channel " + std::to_string(requested) + " out of range");
    return static_cast<std::size_t>(requested);
  }
  for (std::size_t ch = 0; ch < record.header.signals.size(); ++ch) {
    const std::string& d = record.header.signals[ch].description;
    if (d == "MLII" || d == "II" || d.find("lead II") != std::string::npos) return ch;
  }
  return 0;
}

}  // namespace

std::vector<Beat> record_to_beats(const wfdb::Record& record, const ExtractParams& params,
                                  std::optional<int> fixed_label) {
  const std::size_t channel = pick_channel(record, params.channel);
  const double fs_in = record.header.sampling_rate;
  const auto signal = resample(record.signals_mv[channel], fs_in, params.fs_target);

  // labeled beat events in absolute seconds (source timebase)
  std::vector<std::pair<double, int>> events;
  if (!fixed_label) {
    for (const auto& ann : record.annotations) {
      const auto cls = wfdb::map_to_aami(ann.symbol);
      if (cls) events.emplace_back(static_cast<double>(ann.sample_index) / fs_in, static_cast<int>(*cls));
    }
  }

  LabelFn label_of;
  if (fixed_label) {
    label_of = [&](double) { return fixed_label; };
  } else {
    label_of = [&](double t) -> std::optional<int> {
      // nearest event within the labeling window
      auto it = std::lower_bound(events.begin(), events.end(), std::make_pair(t, 0));
      double best = params.label_window_s + 1.0;
      int label = -1;
      if (it != events.end() && std::abs(it->first - t) < best) {
        best = std::abs(it->first - t);
        label = it->second;
      }
      if (it != events.begin() && std::abs(std::prev(it)->first - t) < best) {
        best = std::abs(std::prev(it)->first - t);
        label = std::prev(it)->second;
      }
      if (best <= params.label_window_s) return label;
      return std::nullopt;
    };
  }

  std::vector<Beat> beats;
  const auto windows = split_windows(signal, params.window_len);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const NormalizedWindow norm = normalize(windows[w]);
    if (norm.degenerate) continue;
    const auto rpeaks = find_rpeaks(norm.samples, params.peak_threshold);
    const double window_start_s = static_cast<double>(w * windows[w].size()) / params.fs_target;
    auto extracted = extract_beats(norm, rpeaks, label_of, window_start_s, params.fs_target,
                                   record.header.record_name, static_cast<std::int64_t>(w),
                                   params.beat_factor);
    for (auto& b : extracted) beats.push_back(std::move(b));
  }
  return beats;
}

std::array<double, kBeatLength> scale_to_voltage(const std::array<double, kBeatLength>& samples) {
  std::array<double, kBeatLength> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(samples[i] >= 0.0 && samples[i] <= 1.0, Errc::invalid_argument,
            "scale_to_voltage: sample outside [0,1]");
    out[i] = 0.6 + 0.1 * samples[i];
  }
  return out;
}

Split split_and_oversample(const BeatSet& set, const SplitConfig& config) {
  const int classes = set.num_classes();
  require(static_cast<int>(config.test_counts.size()) == classes, Errc::invalid_argument,
          "split: test_counts must have one entry per class");
  require(static_cast<int>(config.oversample_target.size()) == classes, Errc::invalid_argument,
          "split: oversample_target must have one entry per class");
  require(config.val_fraction >= 0.0 && config.val_fraction < 1.0, Errc::invalid_argument,
          "split: val_fraction must be in [0, 1)");

  rng::Stream rng(config.seed, 0x53504c4954ULL);  // "SPLIT"
  Split split;

  for (int c = 0; c < classes; ++c) {
    std::vector<std::uint32_t> members;
    for (std::size_t i = 0; i < set.beats.size(); ++i)
      if (set.beats[i].label == c) members.push_back(static_cast<std::uint32_t>(i));

    const auto test_n = static_cast<std::size_t>(config.test_counts[static_cast<std::size_t>(c)]);
    require(members.size() >= test_n, Errc::invalid_argument,
            std::string("split: class ") + class_name(set.task, c) + " has " +
                std::to_string(members.size()) + " beats, test quota is " + std::to_string(test_n));

    rng.shuffle(members.data(), members.size());
    split.test.insert(split.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(test_n));

    std::vector<std::uint32_t> source(members.begin() + static_cast<std::ptrdiff_t>(test_n), members.end());
    const auto val_n = static_cast<std::size_t>(std::floor(config.val_fraction * static_cast<double>(source.size())));
    split.val.insert(split.val.end(), source.begin(), source.begin() + static_cast<std::ptrdiff_t>(val_n));
    source.erase(source.begin(), source.begin() + static_cast<std::ptrdiff_t>(val_n));

    const auto target = static_cast<std::size_t>(config.oversample_target[static_cast<std::size_t>(c)]);
    require(!source.empty() || target == 0, Errc::invalid_argument,
            std::string("split: class ") + class_name(set.task, c) + " has no beats left to oversample");
    require(target >= source.size(), Errc::invalid_argument,
            std::string("split: oversample target ") + std::to_string(target) + " below source count " +
                std::to_string(source.size()) + " for class " + class_name(set.task, c));

    // keep every source beat once, then draw the remainder with replacement
    std::vector<std::uint32_t> train = source;
    train.reserve(target);
    while (train.size() < target)
      train.push_back(source[static_cast<std::size_t>(rng.next_below(source.size()))]);
    split.train.insert(split.train.end(), train.begin(), train.end());
  }

  rng.shuffle(split.train.data(), split.train.size());
  return split;
}

std::string split_manifest_json(const BeatSet& set, const SplitConfig& config, const Split& split) {
  using nlohmann::json;
  json j;
  j["seed"] = config.seed;
  j["task"] = task_name(set.task);
  j["val_fraction"] = config.val_fraction;

  const int classes = set.num_classes();
  std::vector<std::int64_t> test_per(classes, 0), val_per(classes, 0), train_per(classes, 0);
  for (auto i : split.test) ++test_per[static_cast<std::size_t>(set.beats[i].label)];
  for (auto i : split.val) ++val_per[static_cast<std::size_t>(set.beats[i].label)];
  for (auto i : split.train) ++train_per[static_cast<std::size_t>(set.beats[i].label)];

  j["classes"] = json::array();
  const auto totals = set.class_counts();
  for (int c = 0; c < classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    j["classes"].push_back({{"label", c},
                            {"name", class_name(set.task, c)},
                            {"total", totals[ci]},
                            {"test", test_per[ci]},
                            {"val", val_per[ci]},
                            {"train", train_per[ci]}});
  }
  j["counts"] = {{"test", split.test.size()}, {"val", split.val.size()}, {"train", split.train.size()}};

  j["test_sources"] = json::array();
  for (auto i : split.test) {
    const BeatSource& s = set.beats[i].source;
    j["test_sources"].push_back({{"record", s.record}, {"window", s.window}, {"peak", s.peak}});
  }
  return j.dump(2) + "\n";
}

}  // namespace ekgnet::pipeline
