#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ekgnet {

inline constexpr int kBeatLength = 178;

enum class Task : int { mitbih4 = 0, ptb2 = 1 };

int task_num_classes(Task task);
const char* task_name(Task task);
const char* class_name(Task task, int label);
Task task_from_name(const std::string& name);

struct BeatSource {
  std::string record;
  std::int64_t window = 0;
  std::int64_t peak = 0;

  bool operator==(const BeatSource&) const = default;
};

struct Beat {
  std::array<double, kBeatLength> samples{};  // [0,1], or volts after scaling
  int label = 0;
  double t_beat = 0.0;  // nominal heartbeat period in samples at 125 Hz
  BeatSource source;
};

struct BeatSet {
  Task task = Task::mitbih4;
  std::vector<Beat> beats;

  int num_classes() const { return task_num_classes(task); }
  std::vector<std::int64_t> class_counts() const;
};

// CSV rows: 178 samples followed by an integer class label.
BeatSet load_beats_csv(const std::string& path, Task task);
void save_beats_csv(const BeatSet& set, const std::string& path);

std::uint64_t dataset_hash(const BeatSet& set);

// Sidecar table mapping record names to PTB diagnosis labels (Healthy/MI).
// Accepts the class name (case-insensitive) or the numeric label.
std::vector<std::pair<std::string, int>> load_diagnosis_csv(const std::string& path);

}  // namespace ekgnet
