#include "core/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/textio.hpp"

namespace ekgnet::experiment {

using nlohmann::json;

const char* version_string() {
#ifdef EKGNET_VERSION_STRING
  return EKGNET_VERSION_STRING;
#else
  return "unversioned";
#endif
}

ExperimentConfig::ExperimentConfig() {
  // End-to-end runs reference analog inputs at the bottom of the hardware
  // range so the datapath computes the same function the model was trained
  // on (the network is bias-free; a mid-range reference would shift the
  // first layer by a constant the later nonlinearities do not absorb).
  mac.input_zero = 0.6;
  mac.weight_range = 0.0;  // derive from the weight codebook
}

void apply_task_split_defaults(ExperimentConfig& cfg) {
  if (cfg.split.test_counts.empty()) {
    cfg.split.test_counts = cfg.task == Task::mitbih4 ? std::vector<std::int64_t>{800, 800, 800, 800}
                                                      : std::vector<std::int64_t>{809, 2102};
  }
  if (cfg.split.oversample_target.empty()) {
    cfg.split.oversample_target = cfg.task == Task::mitbih4
                                      ? std::vector<std::int64_t>{88069, 88069, 88069, 88069}
                                      : std::vector<std::int64_t>{8400, 8400};
  }
}

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig cfg;

  cfg.task = task_from_name(get_or<std::string>(j, "task", "mitbih"));
  cfg.records = get_or<std::vector<std::string>>(j, "records", {});
  cfg.beats_csv = get_or<std::string>(j, "beats_csv", "");
  cfg.diagnosis_csv = get_or<std::string>(j, "diagnosis_csv", "");
  cfg.teacher_csv = get_or<std::string>(j, "teacher_csv", "");
  cfg.strict = get_or<bool>(j, "strict", false);
  cfg.out_dir = get_or<std::string>(j, "out_dir", "run");
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);

  if (j.contains("extract")) {
    const json& e = j.at("extract");
    cfg.extract.fs_target = get_or<double>(e, "fs_target", cfg.extract.fs_target);
    cfg.extract.window_len = get_or<int>(e, "window_len", cfg.extract.window_len);
    cfg.extract.peak_threshold = get_or<double>(e, "peak_threshold", cfg.extract.peak_threshold);
    cfg.extract.beat_factor = get_or<double>(e, "beat_factor", cfg.extract.beat_factor);
    cfg.extract.label_window_s = get_or<double>(e, "label_window_s", cfg.extract.label_window_s);
    cfg.extract.channel = get_or<int>(e, "channel", cfg.extract.channel);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    cfg.split.test_counts = get_or<std::vector<std::int64_t>>(s, "test_counts", {});
    cfg.split.oversample_target = get_or<std::vector<std::int64_t>>(s, "oversample_target", {});
    cfg.split.val_fraction = get_or<double>(s, "val_fraction", cfg.split.val_fraction);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    cfg.train.lr0 = get_or<double>(t, "lr0", cfg.train.lr0);
    cfg.train.halve_every = get_or<int>(t, "halve_every", cfg.train.halve_every);
    cfg.train.weight_decay = get_or<double>(t, "weight_decay", cfg.train.weight_decay);
    cfg.train.epochs = get_or<int>(t, "epochs", cfg.train.epochs);
    cfg.train.batch_size = get_or<int>(t, "batch_size", cfg.train.batch_size);
    cfg.train.distill_temperature = get_or<double>(t, "distill_temperature", cfg.train.distill_temperature);
    cfg.train.distill_weight = get_or<double>(t, "distill_weight", cfg.train.distill_weight);
    cfg.train.init_range = get_or<double>(t, "init_range", cfg.train.init_range);
    cfg.train.reparam_full = get_or<bool>(t, "reparam_full", cfg.train.reparam_full);
  }
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    cfg.noise.sigma_a2 = get_or<double>(n, "sigma_a2", cfg.noise.sigma_a2);
    cfg.noise.sigma_a1 = get_or<double>(n, "sigma_a1", cfg.noise.sigma_a1);
    cfg.noise.sigma_a0 = get_or<double>(n, "sigma_a0", cfg.noise.sigma_a0);
    cfg.noise.leakage_mean = get_or<double>(n, "leakage_mean", cfg.noise.leakage_mean);
    cfg.noise.leakage_sd = get_or<double>(n, "leakage_sd", cfg.noise.leakage_sd);
    cfg.noise.weight_noise = get_or<bool>(n, "weight_noise", cfg.noise.weight_noise);
    cfg.noise.output_leakage = get_or<bool>(n, "output_leakage", cfg.noise.output_leakage);
  }
  if (j.contains("mac")) {
    const json& m = j.at("mac");
    cfg.mac.v_ref = get_or<double>(m, "v_ref", cfg.mac.v_ref);
    cfg.mac.gain = get_or<double>(m, "gain", cfg.mac.gain);
    cfg.mac.sigma_w_rel = get_or<double>(m, "sigma_w_rel", cfg.mac.sigma_w_rel);
    cfg.mac.sigma_in_rel = get_or<double>(m, "sigma_in_rel", cfg.mac.sigma_in_rel);
    cfg.mac.sigma_kernel_rel = get_or<double>(m, "sigma_kernel_rel", cfg.mac.sigma_kernel_rel);
    cfg.mac.leakage_per_step = get_or<double>(m, "leakage_per_step", cfg.mac.leakage_per_step);
    cfg.mac.input_zero = get_or<double>(m, "input_zero", cfg.mac.input_zero);
    cfg.mac.input_range = get_or<double>(m, "input_range", cfg.mac.input_range);
    cfg.mac.weight_range = get_or<double>(m, "weight_range", cfg.mac.weight_range);
  }
  if (j.contains("quant")) {
    const json& q = j.at("quant");
    cfg.quant_bits = get_or<int>(q, "bits", cfg.quant_bits);
    cfg.finetune_iterations = get_or<int>(q, "finetune_iterations", cfg.finetune_iterations);
  }
  cfg.analog_seeds = get_or<int>(j, "analog_seeds", cfg.analog_seeds);

  apply_task_split_defaults(cfg);
  return cfg;
}

ExperimentConfig config_from_file(const std::string& path) {
  return config_from_json(read_text_file(path));
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["task"] = task_name(cfg.task);
  j["records"] = cfg.records;
  j["beats_csv"] = cfg.beats_csv;
  j["diagnosis_csv"] = cfg.diagnosis_csv;
  j["teacher_csv"] = cfg.teacher_csv;
  j["strict"] = cfg.strict;
  j["out_dir"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  j["extract"] = {{"fs_target", cfg.extract.fs_target},
                  {"window_len", cfg.extract.window_len},
                  {"peak_threshold", cfg.extract.peak_threshold},
                  {"beat_factor", cfg.extract.beat_factor},
                  {"label_window_s", cfg.extract.label_window_s},
                  {"channel", cfg.extract.channel}};
  j["split"] = {{"test_counts", cfg.split.test_counts},
                {"oversample_target", cfg.split.oversample_target},
                {"val_fraction", cfg.split.val_fraction}};
  j["train"] = {{"lr0", cfg.train.lr0},
                {"halve_every", cfg.train.halve_every},
                {"weight_decay", cfg.train.weight_decay},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"distill_temperature", cfg.train.distill_temperature},
                {"distill_weight", cfg.train.distill_weight},
                {"init_range", cfg.train.init_range},
                {"reparam_full", cfg.train.reparam_full}};
  j["noise"] = {{"sigma_a2", cfg.noise.sigma_a2},
                {"sigma_a1", cfg.noise.sigma_a1},
                {"sigma_a0", cfg.noise.sigma_a0},
                {"leakage_mean", cfg.noise.leakage_mean},
                {"leakage_sd", cfg.noise.leakage_sd},
                {"weight_noise", cfg.noise.weight_noise},
                {"output_leakage", cfg.noise.output_leakage}};
  j["mac"] = {{"v_ref", cfg.mac.v_ref},
              {"gain", cfg.mac.gain},
              {"sigma_w_rel", cfg.mac.sigma_w_rel},
              {"sigma_in_rel", cfg.mac.sigma_in_rel},
              {"sigma_kernel_rel", cfg.mac.sigma_kernel_rel},
              {"leakage_per_step", cfg.mac.leakage_per_step},
              {"input_zero", cfg.mac.input_zero},
              {"input_range", cfg.mac.input_range},
              {"weight_range", cfg.mac.weight_range}};
  j["quant"] = {{"bits", cfg.quant_bits}, {"finetune_iterations", cfg.finetune_iterations}};
  j["analog_seeds"] = cfg.analog_seeds;
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json(cfg);
  return hex64(fnv1a64(text.data(), text.size()));
}

AnalogEval evaluate_analog(const quant::QuantizedModel& qmodel, const analog::MacConfig& cfg,
                           const model::NoiseModel& noise, const BeatSet& set,
                           std::span<const std::uint32_t> indices, int num_seeds, std::uint64_t seed) {
  require(num_seeds >= 1, Errc::invalid_argument, "evaluate_analog: need at least one seed");
  AnalogEval out;
  for (int s = 0; s < num_seeds; ++s) {
    const analog::AnalogSimulator sim(qmodel, cfg, noise, rng::mix(seed, static_cast<std::uint64_t>(s)));
    const auto m = metrics::evaluate(
        [&](const Beat& b) {
          const auto volts = pipeline::scale_to_voltage(b.samples);
          const std::uint64_t trial = fnv1a64(b.samples.data(), sizeof(double) * b.samples.size());
          return sim.classify(volts, trial).class_code;
        },
        set, indices);
    out.per_seed.push_back(m.balanced_accuracy);
    if (s == 0) out.first_seed_metrics = m;
  }
  double sum = 0.0;
  for (const double a : out.per_seed) sum += a;
  out.mean_balanced_accuracy = sum / static_cast<double>(num_seeds);
  double var = 0.0;
  for (const double a : out.per_seed) var += (a - out.mean_balanced_accuracy) * (a - out.mean_balanced_accuracy);
  out.sd_balanced_accuracy = num_seeds > 1 ? std::sqrt(var / static_cast<double>(num_seeds - 1)) : 0.0;
  return out;
}

namespace {

BeatSet subset(const BeatSet& set, std::span<const std::uint32_t> indices) {
  BeatSet out;
  out.task = set.task;
  out.beats.reserve(indices.size());
  for (const auto i : indices) out.beats.push_back(set.beats[i]);
  return out;
}

struct RunLog {
  std::string text;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void line(const std::string& s) { text += s + "\n"; }
  void stage(const std::string& name) {
    const auto dt = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    line("[" + std::to_string(dt) + " ms] " + name);
  }
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  apply_task_split_defaults(cfg);
  cfg.split.seed = rng::mix(cfg.seed, 0x53504c49ULL);
  cfg.train.seed = rng::mix(cfg.seed, 0x5452414eULL);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const auto path = [&](const std::string& name) { return (fs::path(cfg.out_dir) / name).string(); };

  const std::string hash = config_hash(cfg);
  RunLog log;
  log.line("ekgnet " + std::string(version_string()));
  log.line("config_hash " + hash);
  log.line("seed " + std::to_string(cfg.seed));

  write_text_file(path("config.echo.json"), config_to_json(cfg));
  write_text_file(path("run.json"), json{{"status", "incomplete"}, {"config_hash", hash}, {"seed", cfg.seed}}.dump(2) + "\n");

  std::string stage = "setup";
  try {
    ExperimentResult result;
    result.out_dir = cfg.out_dir;

    // ---- ingest + extract -------------------------------------------------
    stage = "ingest";
    BeatSet pool;
    pool.task = cfg.task;
    if (!cfg.beats_csv.empty()) {
      pool = load_beats_csv(cfg.beats_csv, cfg.task);
    } else {
      require(!cfg.records.empty(), Errc::invalid_argument, "no records or beats_csv configured");
      std::vector<std::pair<std::string, int>> diagnosis;
      if (cfg.task == Task::ptb2) {
        require(!cfg.diagnosis_csv.empty(), Errc::invalid_argument,
                "ptb task requires a diagnosis_csv sidecar");
        diagnosis = load_diagnosis_csv(cfg.diagnosis_csv);
      }
      stage = "extract";
      for (const auto& prefix : cfg.records) {
        const wfdb::Record record = wfdb::load_record(prefix, cfg.strict);
        for (const auto& w : record.warnings) log.line("warning: " + prefix + ": " + w);
        std::optional<int> fixed;
        if (cfg.task == Task::ptb2) {
          const auto it = std::find_if(diagnosis.begin(), diagnosis.end(), [&](const auto& d) {
            return d.first == record.header.record_name;
          });
          require(it != diagnosis.end(), Errc::invalid_argument,
                  "no diagnosis entry for record " + record.header.record_name);
          fixed = it->second;
        }
        auto beats = pipeline::record_to_beats(record, cfg.extract, fixed);
        for (auto& b : beats) pool.beats.push_back(std::move(b));
      }
    }
    require(!pool.beats.empty(), Errc::failure, "no beats extracted");
    log.stage("extract: " + std::to_string(pool.beats.size()) + " beats");

    // ---- split ------------------------------------------------------------
    stage = "split";
    const pipeline::Split split = pipeline::split_and_oversample(pool, cfg.split);
    write_text_file(path("split_manifest.json"), pipeline::split_manifest_json(pool, cfg.split, split));
    const BeatSet test_set = subset(pool, split.test);
    save_beats_csv(test_set, path("test_beats.csv"));
    save_beats_csv(subset(pool, split.val), path("val_beats.csv"));
    log.stage("split: train " + std::to_string(split.train.size()) + ", val " +
              std::to_string(split.val.size()) + ", test " + std::to_string(split.test.size()));

    // ---- train ------------------------------------------------------------
    stage = "train";
    model::Arch arch;
    arch.classes = task_num_classes(cfg.task);
    train::TeacherLogits teacher;
    const train::TeacherLogits* teacher_ptr = nullptr;
    if (!cfg.teacher_csv.empty()) {
      teacher = train::load_teacher_csv(cfg.teacher_csv, arch.classes);
      teacher_ptr = &teacher;
      if (cfg.train.distill_weight == 0.0) cfg.train.distill_weight = 0.5;
    } else {
      cfg.train.distill_weight = 0.0;
    }
    const train::TrainResult trained =
        train::train(arch, cfg.train, cfg.noise, pool, split.train, split.val, teacher_ptr);
    result.best_epoch = trained.best_epoch;
    write_text_file(path("history.csv"), train::history_csv(trained.history));
    const json meta = {{"seed", cfg.seed},
                       {"config_hash", hash},
                       {"epoch", trained.best_epoch},
                       {"val_metric", trained.best_val}};
    model::save_checkpoint(trained.best, path("model.json"), meta.dump());
    log.stage("train: best epoch " + std::to_string(trained.best_epoch) + ", val " +
              format_double(trained.best_val));

    // ---- float evaluation ---------------------------------------------------
    stage = "evaluate_float";
    const auto float_predict = [&](const Beat& b) {
      return model::predict(arch, trained.best.weights, b.samples);
    };
    result.float_metrics = metrics::evaluate(float_predict, pool, split.test);
    write_text_file(path("confusion_float.csv"), metrics::confusion_csv(pool, result.float_metrics));
    log.stage("float: balanced " + format_double(result.float_metrics.balanced_accuracy));

    // ---- quantize -----------------------------------------------------------
    stage = "quantize";
    const quant::Codebook cb = quant::build_codebook(trained.best, cfg.quant_bits);
    quant::QuantizedModel qmodel = quant::quantize(trained.best, cb);
    quant::save_quantized(qmodel, path("qmodel.json"));
    const auto quant_predict_for = [&](const quant::QuantizedModel& qm) {
      const model::ModelParams dq = quant::decode(qm);
      return [&, dq](const Beat& b) { return model::predict(dq.arch, dq.weights, b.samples); };
    };
    result.quantized_metrics =
        metrics::evaluate(quant_predict_for(qmodel), pool, split.test);
    write_text_file(path("confusion_quantized.csv"), metrics::confusion_csv(pool, result.quantized_metrics));
    log.stage("quantized: balanced " + format_double(result.quantized_metrics.balanced_accuracy));

    // ---- fine-tune ----------------------------------------------------------
    stage = "finetune";
    const auto val_accuracy = [&](const quant::QuantizedModel& qm) {
      const model::ModelParams dq = quant::decode(qm);
      return metrics::evaluate([&](const Beat& b) { return model::predict(dq.arch, dq.weights, b.samples); },
                               pool, split.val)
          .balanced_accuracy;
    };
    result.val_accuracy_before_finetune = val_accuracy(qmodel);
    rng::Stream ft_rng(rng::mix(cfg.seed, 0x46494e45ULL));  // "FINE"
    const quant::FinetuneResult ft =
        quant::finetune(qmodel, val_accuracy, cfg.finetune_iterations, ft_rng);
    result.val_accuracy_after_finetune = ft.final_accuracy;
    quant::save_quantized(qmodel, path("qmodel_finetuned.json"));
    write_text_file(path("finetune_log.csv"), quant::finetune_log_csv(ft));
    result.finetuned_metrics = metrics::evaluate(quant_predict_for(qmodel), pool, split.test);
    write_text_file(path("confusion_finetuned.csv"), metrics::confusion_csv(pool, result.finetuned_metrics));
    log.stage("finetune: val " + format_double(ft.final_accuracy) + ", test balanced " +
              format_double(result.finetuned_metrics.balanced_accuracy));

    // ---- analog Monte Carlo ---------------------------------------------------
    stage = "analog";
    analog::MacConfig mac = cfg.mac;
    if (mac.weight_range <= 0.0) mac.weight_range = 2.0 * qmodel.codebook.w_max;
    result.analog = evaluate_analog(qmodel, mac, cfg.noise, pool, split.test, cfg.analog_seeds,
                                    rng::mix(cfg.seed, 0x414e4c47ULL));  // "ANLG"
    write_text_file(path("confusion_analog.csv"),
                    metrics::confusion_csv(pool, result.analog.first_seed_metrics));
    {
      json sim;
      sim["seed"] = cfg.seed;
      sim["config_hash"] = hash;
      sim["cfg"] = json::parse(config_to_json(cfg))["mac"];
      sim["cfg"]["weight_range"] = mac.weight_range;
      sim["dataset_hash"] = hex64(dataset_hash(test_set));
      sim["num_seeds"] = cfg.analog_seeds;
      sim["balanced_accuracy_mean"] = result.analog.mean_balanced_accuracy;
      sim["balanced_accuracy_sd"] = result.analog.sd_balanced_accuracy;
      sim["balanced_accuracy_per_seed"] = result.analog.per_seed;
      sim["confusion_first_seed"] =
          json::parse(metrics::metrics_json_fragment(result.analog.first_seed_metrics))["confusion"];
      write_text_file(path("simulation.json"), sim.dump(2) + "\n");
    }
    log.stage("analog: mean balanced " + format_double(result.analog.mean_balanced_accuracy) + " sd " +
              format_double(result.analog.sd_balanced_accuracy));

    // ---- report ---------------------------------------------------------------
    stage = "report";
    json m;
    m["config_hash"] = hash;
    m["seed"] = cfg.seed;
    m["task"] = task_name(cfg.task);
    m["float"] = json::parse(metrics::metrics_json_fragment(result.float_metrics));
    m["quantized"] = json::parse(metrics::metrics_json_fragment(result.quantized_metrics));
    m["finetuned"] = json::parse(metrics::metrics_json_fragment(result.finetuned_metrics));
    m["analog"] = {{"mean_balanced_accuracy", result.analog.mean_balanced_accuracy},
                   {"sd_balanced_accuracy", result.analog.sd_balanced_accuracy},
                   {"per_seed", result.analog.per_seed},
                   {"num_seeds", cfg.analog_seeds}};
    m["validation"] = {{"before_finetune", result.val_accuracy_before_finetune},
                       {"after_finetune", result.val_accuracy_after_finetune},
                       {"best_epoch", result.best_epoch}};
    write_text_file(path("metrics.json"), m.dump(2) + "\n");

    write_text_file(path("run.json"),
                    json{{"status", "ok"}, {"config_hash", hash}, {"seed", cfg.seed}}.dump(2) + "\n");
    log.stage("done");
    write_text_file(path("run.log"), log.text);
    return result;
  } catch (const std::exception& e) {
    const std::string msg = std::string("stage ") + stage + ": " + e.what();
    log.line("failed: " + msg);
    write_text_file(path("run.json"), json{{"status", "failed"},
                                           {"stage", stage},
                                           {"error", e.what()},
                                           {"config_hash", hash},
                                           {"seed", cfg.seed}}
                                              .dump(2) +
                                          "\n");
    write_text_file(path("run.log"), log.text);
    throw Error(Errc::failure, msg);
  }
}

}  // namespace ekgnet::experiment
