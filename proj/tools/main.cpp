// Command-line front end; all domain work goes through the ekgnet C API.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ekgnet/ekgnet.h"

namespace {

using nlohmann::json;

const char* status_name(ekg_status s) {
  switch (s) {
    case EKG_OK: return "ok";
    case EKG_EINVAL: return "invalid-argument";
    case EKG_EIO: return "io";
    case EKG_EPARSE: return "parse";
    case EKG_EFORMAT: return "format";
    case EKG_ESTATE: return "state";
    case EKG_EFAIL: return "failure";
  }
  return "unknown";
}

[[noreturn]] void die(ekg_status s) {
  std::cerr << "error: " << status_name(s) << ": " << ekg_last_error() << "\n";
  std::exit(s);
}

void check(ekg_status s) {
  if (s != EKG_OK) die(s);
}

std::string take_string(char* s) {
  std::string out = s ? s : "";
  ekg_string_free(s);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) {
    std::cerr << "error: io: cannot open config file: " << path << "\n";
    std::exit(EKG_EIO);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  if (!path.empty()) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) {
    std::cerr << "error: io: cannot write file: " << path << "\n";
    std::exit(EKG_EIO);
  }
  out << content;
}

// Loads --config (if given) and applies --seed/--out overrides.
json effective_config(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                      const std::string& out_dir) {
  json cfg = json::object();
  if (!config_path.empty()) cfg = json::parse(read_file(config_path));
  if (seed) cfg["seed"] = *seed;
  if (!out_dir.empty()) cfg["out_dir"] = out_dir;
  return cfg;
}

std::string section_or_empty(const json& cfg, const char* key) {
  if (cfg.contains(key)) return cfg.at(key).dump();
  return "";
}

struct RecordHandle {
  ekg_record* ptr = nullptr;
  ~RecordHandle() { ekg_record_free(ptr); }
};
struct BeatsetHandle {
  ekg_beatset* ptr = nullptr;
  ~BeatsetHandle() { ekg_beatset_free(ptr); }
};
struct ModelHandle {
  ekg_model* ptr = nullptr;
  ~ModelHandle() { ekg_model_free(ptr); }
};
struct QmodelHandle {
  ekg_qmodel* ptr = nullptr;
  ~QmodelHandle() { ekg_qmodel_free(ptr); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ECG arrhythmia pipeline: WFDB ingest, beat extraction, noise-aware "
               "training, 6-bit quantization, and analog datapath simulation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ekg_version()));

  std::string config_path, out_dir, task = "mitbih";
  std::optional<std::uint64_t> seed;

  // ---- ingest ----
  auto* ingest = app.add_subcommand("ingest", "Parse WFDB records and print a summary");
  std::vector<std::string> ingest_records;
  bool ingest_strict = false;
  ingest->add_option("records", ingest_records, "record path prefixes")->required();
  ingest->add_flag("--strict", ingest_strict, "fail on checksum or annotation problems");
  ingest->add_option("--out", out_dir, "write per-record summary JSON files here");

  // ---- extract ----
  auto* extract = app.add_subcommand("extract", "Extract labeled beats to a CSV");
  std::vector<std::string> extract_records;
  std::string extract_out, diagnosis_csv;
  extract->add_option("records", extract_records, "record path prefixes")->required();
  extract->add_option("--task", task, "mitbih or ptb");
  extract->add_option("--config", config_path, "config JSON (extract section)");
  extract->add_option("--diagnosis", diagnosis_csv, "record,label sidecar CSV (ptb)");
  extract->add_option("--out", extract_out, "output beats CSV")->required();

  // ---- train ----
  auto* train = app.add_subcommand("train", "Split the data and train the float model");
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--out", out_dir, "override the config out_dir");

  // ---- quantize ----
  auto* quantize = app.add_subcommand("quantize", "Quantize a float checkpoint");
  std::string model_path, qmodel_out;
  int bits = 6;
  quantize->add_option("--model", model_path, "float checkpoint JSON")->required();
  quantize->add_option("--bits", bits, "codebook bits (default 6)");
  quantize->add_option("--out", qmodel_out, "output quantized checkpoint")->required();

  // ---- finetune ----
  auto* finetune = app.add_subcommand("finetune", "Single-weight fine-tuning of a quantized model");
  std::string qmodel_path, val_csv, ft_out, ft_log;
  int iterations = 5000;
  std::uint64_t ft_seed = 0;
  finetune->add_option("--qmodel", qmodel_path, "quantized checkpoint")->required();
  finetune->add_option("--val", val_csv, "validation beats CSV")->required();
  finetune->add_option("--task", task, "mitbih or ptb");
  finetune->add_option("--iterations", iterations, "trial count (default 5000)");
  finetune->add_option("--seed", ft_seed, "rng seed");
  finetune->add_option("--out", ft_out, "output quantized checkpoint")->required();
  finetune->add_option("--log", ft_log, "write the per-trial CSV log here");

  // ---- simulate ----
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo analog inference over a beat set");
  std::string sim_qmodel, sim_beats, sim_out;
  int sim_seeds = 10;
  std::uint64_t sim_seed = 0;
  simulate->add_option("--qmodel", sim_qmodel, "quantized checkpoint")->required();
  simulate->add_option("--beats", sim_beats, "beats CSV")->required();
  simulate->add_option("--task", task, "mitbih or ptb");
  simulate->add_option("--config", config_path, "config JSON (mac section)");
  simulate->add_option("--seeds", sim_seeds, "number of noise seeds (default 10)");
  simulate->add_option("--seed", sim_seed, "base rng seed");
  simulate->add_option("--out", sim_out, "write the report JSON here (default stdout)");

  // ---- characterize-mac ----
  auto* characterize = app.add_subcommand("characterize-mac", "MAC linearity NRMSE report");
  std::int64_t trials = 100000;
  std::uint64_t mac_seed = 1;
  std::string mac_out;
  characterize->add_option("--trials", trials, "Monte Carlo trials (default 100000)");
  characterize->add_option("--seed", mac_seed, "rng seed");
  characterize->add_option("--config", config_path, "config JSON (mac section)");
  characterize->add_option("--out", mac_out, "write the report JSON here (default stdout)");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a beat set");
  std::string eval_model, eval_qmodel, eval_beats, eval_out;
  eval->add_option("--model", eval_model, "float checkpoint JSON");
  eval->add_option("--qmodel", eval_qmodel, "quantized checkpoint JSON");
  eval->add_option("--beats", eval_beats, "beats CSV")->required();
  eval->add_option("--task", task, "mitbih or ptb");
  eval->add_option("--out", eval_out, "write metrics JSON here (default stdout)");

  // ---- run ----
  auto* run = app.add_subcommand("run", "Run the full experiment pipeline");
  run->add_option("--config", config_path, "experiment config JSON")->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out", out_dir, "override the config out_dir");

  CLI11_PARSE(app, argc, argv);

  if (ingest->parsed()) {
    for (const auto& prefix : ingest_records) {
      RecordHandle rec;
      check(ekg_record_open(prefix.c_str(), ingest_strict ? 1 : 0, &rec.ptr));
      char* summary = nullptr;
      check(ekg_record_summary_json(rec.ptr, &summary));
      const std::string text = take_string(summary);
      if (!out_dir.empty()) {
        const auto name = std::filesystem::path(prefix).filename().string();
        write_file((std::filesystem::path(out_dir) / (name + "_summary.json")).string(), text);
      } else {
        std::cout << text;
      }
    }
    return 0;
  }

  if (extract->parsed()) {
    const json cfg = effective_config(config_path, seed, "");
    const std::string params = section_or_empty(cfg, "extract");
    std::vector<std::pair<std::string, int>> diagnosis;
    if (!diagnosis_csv.empty()) {
      std::istringstream in(read_file(diagnosis_csv));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        std::string label = line.substr(comma + 1);
        if (!label.empty() && label.back() == '\r') label.pop_back();
        const int value = (label == "MI" || label == "mi" || label == "1") ? 1 : 0;
        diagnosis.emplace_back(line.substr(0, comma), value);
      }
    }
    BeatsetHandle all;
    for (const auto& prefix : extract_records) {
      RecordHandle rec;
      check(ekg_record_open(prefix.c_str(), 0, &rec.ptr));
      int fixed = -1;
      if (!diagnosis.empty()) {
        const auto name = std::filesystem::path(prefix).filename().string();
        for (const auto& d : diagnosis)
          if (d.first == name) fixed = d.second;
        if (fixed < 0) {
          std::cerr << "error: invalid-argument: no diagnosis entry for record " << name << "\n";
          return EKG_EINVAL;
        }
      }
      BeatsetHandle beats;
      check(ekg_beatset_extract(rec.ptr, task.c_str(), params.empty() ? nullptr : params.c_str(), fixed,
                                &beats.ptr));
      if (all.ptr == nullptr) {
        all.ptr = beats.ptr;
        beats.ptr = nullptr;
      } else {
        check(ekg_beatset_merge(all.ptr, beats.ptr));
      }
    }
    check(ekg_beatset_save_csv(all.ptr, extract_out.c_str()));
    std::cout << "wrote " << ekg_beatset_size(all.ptr) << " beats to " << extract_out << "\n";
    return 0;
  }

  if (train->parsed()) {
    const json cfg = effective_config(config_path, seed, out_dir);
    char* summary = nullptr;
    check(ekg_train_stage(cfg.dump().c_str(), &summary));
    std::cout << take_string(summary);
    return 0;
  }

  if (quantize->parsed()) {
    ModelHandle model;
    check(ekg_model_load(model_path.c_str(), &model.ptr));
    QmodelHandle qmodel;
    check(ekg_quantize_model(model.ptr, bits, &qmodel.ptr));
    check(ekg_qmodel_save(qmodel.ptr, qmodel_out.c_str()));
    std::cout << "wrote " << qmodel_out << "\n";
    return 0;
  }

  if (finetune->parsed()) {
    QmodelHandle qmodel;
    check(ekg_qmodel_load(qmodel_path.c_str(), &qmodel.ptr));
    BeatsetHandle val;
    check(ekg_beatset_load_csv(val_csv.c_str(), task.c_str(), &val.ptr));
    char* log = nullptr;
    check(ekg_finetune_qmodel(qmodel.ptr, val.ptr, iterations, ft_seed, &log));
    const std::string log_text = take_string(log);
    check(ekg_qmodel_save(qmodel.ptr, ft_out.c_str()));
    if (!ft_log.empty()) write_file(ft_log, log_text);
    std::cout << "wrote " << ft_out << "\n";
    return 0;
  }

  if (simulate->parsed()) {
    const json cfg = effective_config(config_path, {}, "");
    QmodelHandle qmodel;
    check(ekg_qmodel_load(sim_qmodel.c_str(), &qmodel.ptr));
    BeatsetHandle beats;
    check(ekg_beatset_load_csv(sim_beats.c_str(), task.c_str(), &beats.ptr));
    const std::string mac = section_or_empty(cfg, "mac");
    char* report = nullptr;
    check(ekg_simulate(qmodel.ptr, beats.ptr, mac.empty() ? nullptr : mac.c_str(), sim_seeds, sim_seed,
                       &report));
    const std::string text = take_string(report);
    if (sim_out.empty())
      std::cout << text;
    else
      write_file(sim_out, text);
    return 0;
  }

  if (characterize->parsed()) {
    const json cfg = effective_config(config_path, {}, "");
    const std::string mac = section_or_empty(cfg, "mac");
    char* report = nullptr;
    check(ekg_characterize_mac(mac.empty() ? nullptr : mac.c_str(), trials, mac_seed, &report));
    const std::string text = take_string(report);
    if (mac_out.empty())
      std::cout << text;
    else
      write_file(mac_out, text);
    return 0;
  }

  if (eval->parsed()) {
    if (eval_model.empty() == eval_qmodel.empty()) {
      std::cerr << "error: invalid-argument: pass exactly one of --model or --qmodel\n";
      return EKG_EINVAL;
    }
    BeatsetHandle beats;
    check(ekg_beatset_load_csv(eval_beats.c_str(), task.c_str(), &beats.ptr));
    char* metrics = nullptr;
    if (!eval_model.empty()) {
      ModelHandle model;
      check(ekg_model_load(eval_model.c_str(), &model.ptr));
      check(ekg_evaluate_model(model.ptr, beats.ptr, &metrics));
    } else {
      QmodelHandle qmodel;
      check(ekg_qmodel_load(eval_qmodel.c_str(), &qmodel.ptr));
      check(ekg_evaluate_qmodel(qmodel.ptr, beats.ptr, &metrics));
    }
    const std::string text = take_string(metrics);
    if (eval_out.empty())
      std::cout << text;
    else
      write_file(eval_out, text);
    return 0;
  }

  if (run->parsed()) {
    const json cfg = effective_config(config_path, seed, out_dir);
    char* summary = nullptr;
    check(ekg_run_experiment(cfg.dump().c_str(), &summary));
    std::cout << take_string(summary);
    return 0;
  }

  return 0;
}
