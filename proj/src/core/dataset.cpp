#include "core/dataset.hpp"

#include <algorithm>
#include <cctype>

#include "core/error.hpp"
#include "core/textio.hpp"

namespace ekgnet {

int task_num_classes(Task task) { return task == Task::mitbih4 ? 4 : 2; }

const char* task_name(Task task) { return task == Task::mitbih4 ? "mitbih" : "ptb"; }

const char* class_name(Task task, int label) {
  static const char* mit[] = {"N", "S", "V", "Q"};
  static const char* ptb[] = {"Healthy", "MI"};
  if (task == Task::mitbih4) return (label >= 0 && label < 4) ? mit[label] : "?";
  return (label >= 0 && label < 2) ? ptb[label] : "?";
}

Task task_from_name(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "mitbih" || n == "mit-bih" || n == "mitbih4") return Task::mitbih4;
  if (n == "ptb" || n == "ptb2") return Task::ptb2;
  fail(Errc::invalid_argument, "unknown task: " + name);
}

std::vector<std::int64_t> BeatSet::class_counts() const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes()), 0);
  for (const Beat& b : beats) {
    require(b.label >= 0 && b.label < num_classes(), Errc::state, "beat label out of range");
    ++counts[static_cast<std::size_t>(b.label)];
  }
  return counts;
}

BeatSet load_beats_csv(const std::string& path, Task task) {
  const std::string text = read_text_file(path);
  BeatSet set;
  set.task = task;
  const int classes = set.num_classes();

  std::size_t line_no = 0;
  for (std::string_view rest = text; !rest.empty();) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = nl == std::string_view::npos ? rest : rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line.empty()) continue;

    const auto fields = split_fields(line, ',');
    require(static_cast<int>(fields.size()) == kBeatLength + 1, Errc::parse,
            path + ":" + std::to_string(line_no) + ": expected " + std::to_string(kBeatLength + 1) +
                " columns, got " + std::to_string(fields.size()));
    Beat beat;
    for (int i = 0; i < kBeatLength; ++i)
      beat.samples[static_cast<std::size_t>(i)] =
          parse_double(fields[static_cast<std::size_t>(i)], "sample " + std::to_string(i));
    const std::int64_t label = parse_int(fields.back(), "label");
    require(label >= 0 && label < classes, Errc::parse,
            path + ":" + std::to_string(line_no) + ": label " + std::to_string(label) + " outside [0, " +
                std::to_string(classes) + ")");
    beat.label = static_cast<int>(label);
    beat.source = {"csv:" + path, static_cast<std::int64_t>(line_no), 0};
    set.beats.push_back(std::move(beat));
  }
  return set;
}

void save_beats_csv(const BeatSet& set, const std::string& path) {
  std::string out;
  out.reserve(set.beats.size() * kBeatLength * 8);
  for (const Beat& b : set.beats) {
    for (const double v : b.samples) {
      out += format_double(v);
      out += ',';
    }
    out += std::to_string(b.label);
    out += '\n';
  }
  write_text_file(path, out);
}

std::uint64_t dataset_hash(const BeatSet& set) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::int32_t task = static_cast<std::int32_t>(set.task);
  h = fnv1a64(&task, sizeof(task), h);
  for (const Beat& b : set.beats) {
    h = fnv1a64(b.samples.data(), sizeof(double) * b.samples.size(), h);
    const std::int32_t label = b.label;
    h = fnv1a64(&label, sizeof(label), h);
  }
  return h;
}

std::vector<std::pair<std::string, int>> load_diagnosis_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<std::pair<std::string, int>> out;
  std::size_t line_no = 0;
  for (std::string_view rest = text; !rest.empty();) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = nl == std::string_view::npos ? rest : rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line, ',');
    require(fields.size() == 2, Errc::parse, path + ":" + std::to_string(line_no) + ": expected record,label");
    std::string label(fields[1]);
    std::transform(label.begin(), label.end(), label.begin(), [](unsigned char c) { return std::tolower(c); });
    int value;
    if (label == "healthy" || label == "0")
      value = 0;
    else if (label == "mi" || label == "1")
      value = 1;
    else
      fail(Errc::parse, path + ":" + std::to_string(line_no) + ": unknown diagnosis '" + std::string(fields[1]) + "'");
    out.emplace_back(std::string(fields[0]), value);
  }
  return out;
}

}  // namespace ekgnet
