#include "ekgnet/ekgnet.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "core/analog.hpp"
#include "core/beats.hpp"
#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/experiment.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"
#include "core/quant.hpp"
#include "core/textio.hpp"
#include "core/train.hpp"
#include "core/wfdb.hpp"

using nlohmann::json;

namespace {

thread_local std::string g_last_error;

ekg_status status_from(ekgnet::Errc code) {
  switch (code) {
    case ekgnet::Errc::invalid_argument: return EKG_EINVAL;
    case ekgnet::Errc::io: return EKG_EIO;
    case ekgnet::Errc::parse: return EKG_EPARSE;
    case ekgnet::Errc::format: return EKG_EFORMAT;
    case ekgnet::Errc::state: return EKG_ESTATE;
    case ekgnet::Errc::failure: return EKG_EFAIL;
  }
  return EKG_EFAIL;
}

template <typename Fn>
ekg_status guarded(Fn&& fn) {
  try {
    fn();
    return EKG_OK;
  } catch (const ekgnet::Error& e) {
    g_last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EKG_EFAIL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ekgnet::Task parse_task(const char* task) {
  ekgnet::require(task != nullptr, ekgnet::Errc::invalid_argument, "task must not be null");
  return ekgnet::task_from_name(task);
}

void check(const void* p, const char* what) {
  ekgnet::require(p != nullptr, ekgnet::Errc::invalid_argument, std::string(what) + " must not be null");
}

}  // namespace

struct ekg_record {
  ekgnet::wfdb::Record record;
};
struct ekg_beatset {
  ekgnet::BeatSet set;
};
struct ekg_model {
  ekgnet::model::ModelParams params;
};
struct ekg_qmodel {
  ekgnet::quant::QuantizedModel qmodel;
};

extern "C" {

const char* ekg_version(void) { return ekgnet::experiment::version_string(); }

const char* ekg_last_error(void) { return g_last_error.c_str(); }

void ekg_string_free(char* s) { std::free(s); }

/* ---- records ---- */

ekg_status ekg_record_open(const char* path_prefix, int strict, ekg_record** out) {
  return guarded([&] {
    check(path_prefix, "path_prefix");
    check(out, "out");
    auto* handle = new ekg_record{ekgnet::wfdb::load_record(path_prefix, strict != 0)};
    *out = handle;
  });
}

void ekg_record_free(ekg_record* record) { delete record; }

ekg_status ekg_record_num_signals(const ekg_record* record, int32_t* out) {
  return guarded([&] {
    check(record, "record");
    check(out, "out");
    *out = record->record.header.num_signals;
  });
}

ekg_status ekg_record_sampling_rate(const ekg_record* record, double* out) {
  return guarded([&] {
    check(record, "record");
    check(out, "out");
    *out = record->record.header.sampling_rate;
  });
}

ekg_status ekg_record_num_samples(const ekg_record* record, int64_t* out) {
  return guarded([&] {
    check(record, "record");
    check(out, "out");
    *out = record->record.header.num_samples;
  });
}

ekg_status ekg_record_num_annotations(const ekg_record* record, int64_t* out) {
  return guarded([&] {
    check(record, "record");
    check(out, "out");
    *out = static_cast<int64_t>(record->record.annotations.size());
  });
}

ekg_status ekg_record_signal(const ekg_record* record, int32_t channel, double* buffer,
                             int64_t capacity, int64_t* written) {
  return guarded([&] {
    check(record, "record");
    check(buffer, "buffer");
    check(written, "written");
    const auto& signals = record->record.signals_mv;
    ekgnet::require(channel >= 0 && static_cast<std::size_t>(channel) < signals.size(),
                    ekgnet::Errc::invalid_argument, "channel out of range");
    const auto& sig = signals[static_cast<std::size_t>(channel)];
    const auto n = std::min<int64_t>(capacity, static_cast<int64_t>(sig.size()));
    for (int64_t i = 0; i < n; ++i) buffer[i] = sig[static_cast<std::size_t>(i)];
    *written = n;
  });
}

ekg_status ekg_record_annotation(const ekg_record* record, int64_t index, int64_t* sample, char* symbol) {
  return guarded([&] {
    check(record, "record");
    const auto& anns = record->record.annotations;
    ekgnet::require(index >= 0 && static_cast<std::size_t>(index) < anns.size(),
                    ekgnet::Errc::invalid_argument, "annotation index out of range");
    if (sample) *sample = anns[static_cast<std::size_t>(index)].sample_index;
    if (symbol) *symbol = anns[static_cast<std::size_t>(index)].symbol;
  });
}

ekg_status ekg_record_summary_json(const ekg_record* record, char** json_out) {
  return guarded([&] {
    check(record, "record");
    check(json_out, "json_out");
    const auto& r = record->record;
    json j;
    j["record"] = r.header.record_name;
    j["num_signals"] = r.header.num_signals;
    j["sampling_rate"] = r.header.sampling_rate;
    j["num_samples"] = r.header.num_samples;
    j["num_annotations"] = r.annotations.size();
    json sigs = json::array();
    for (const auto& s : r.header.signals)
      sigs.push_back({{"description", s.description}, {"gain", s.gain}, {"baseline", s.baseline}});
    j["signals"] = sigs;
    json counts = json::object();
    for (const auto& a : r.annotations) {
      const auto cls = ekgnet::wfdb::map_to_aami(a.symbol);
      if (cls) {
        const char* name = ekgnet::wfdb::aami_name(*cls);
        counts[name] = counts.value(name, 0) + 1;
      }
    }
    j["aami_counts"] = counts;
    j["warnings"] = r.warnings;
    *json_out = dup_string(j.dump(2) + "\n");
  });
}

int32_t ekg_aami_class(char symbol) {
  const auto cls = ekgnet::wfdb::map_to_aami(symbol);
  return cls ? static_cast<int32_t>(*cls) : -1;
}

/* ---- beat sets ---- */

ekg_status ekg_beatset_extract(const ekg_record* record, const char* task, const char* params_json,
                               int32_t fixed_label, ekg_beatset** out) {
  return guarded([&] {
    check(record, "record");
    check(out, "out");
    const ekgnet::Task t = parse_task(task);
    ekgnet::pipeline::ExtractParams params;
    if (params_json != nullptr && *params_json != '\0') {
      const json p = json::parse(params_json);
      params.fs_target = p.value("fs_target", params.fs_target);
      params.window_len = p.value("window_len", params.window_len);
      params.peak_threshold = p.value("peak_threshold", params.peak_threshold);
      params.beat_factor = p.value("beat_factor", params.beat_factor);
      params.label_window_s = p.value("label_window_s", params.label_window_s);
      params.channel = p.value("channel", params.channel);
    }
    std::optional<int> fixed;
    if (fixed_label >= 0) {
      ekgnet::require(fixed_label < ekgnet::task_num_classes(t), ekgnet::Errc::invalid_argument,
                      "fixed_label out of range for task");
      fixed = fixed_label;
    }
    auto* handle = new ekg_beatset;
    handle->set.task = t;
    handle->set.beats = ekgnet::pipeline::record_to_beats(record->record, params, fixed);
    *out = handle;
  });
}

ekg_status ekg_beatset_load_csv(const char* path, const char* task, ekg_beatset** out) {
  return guarded([&] {
    check(path, "path");
    check(out, "out");
    auto* handle = new ekg_beatset{ekgnet::load_beats_csv(path, parse_task(task))};
    *out = handle;
  });
}

ekg_status ekg_beatset_save_csv(const ekg_beatset* set, const char* path) {
  return guarded([&] {
    check(set, "set");
    check(path, "path");
    ekgnet::save_beats_csv(set->set, path);
  });
}

ekg_status ekg_beatset_merge(ekg_beatset* dst, const ekg_beatset* src) {
  return guarded([&] {
    check(dst, "dst");
    check(src, "src");
    ekgnet::require(dst->set.task == src->set.task, ekgnet::Errc::invalid_argument,
                    "cannot merge beat sets from different tasks");
    dst->set.beats.insert(dst->set.beats.end(), src->set.beats.begin(), src->set.beats.end());
  });
}

int64_t ekg_beatset_size(const ekg_beatset* set) {
  return set ? static_cast<int64_t>(set->set.beats.size()) : 0;
}

ekg_status ekg_beatset_beat(const ekg_beatset* set, int64_t index, double* samples178, int32_t* label) {
  return guarded([&] {
    check(set, "set");
    ekgnet::require(index >= 0 && static_cast<std::size_t>(index) < set->set.beats.size(),
                    ekgnet::Errc::invalid_argument, "beat index out of range");
    const ekgnet::Beat& b = set->set.beats[static_cast<std::size_t>(index)];
    if (samples178) std::memcpy(samples178, b.samples.data(), sizeof(double) * b.samples.size());
    if (label) *label = b.label;
  });
}

void ekg_beatset_free(ekg_beatset* set) { delete set; }

/* ---- models ---- */

ekg_status ekg_model_load(const char* path, ekg_model** out) {
  return guarded([&] {
    check(path, "path");
    check(out, "out");
    *out = new ekg_model{ekgnet::model::load_checkpoint(path)};
  });
}

ekg_status ekg_model_save(const ekg_model* model, const char* path) {
  return guarded([&] {
    check(model, "model");
    check(path, "path");
    ekgnet::model::save_checkpoint(model->params, path);
  });
}

ekg_status ekg_model_num_params(const ekg_model* model, int64_t* out) {
  return guarded([&] {
    check(model, "model");
    check(out, "out");
    *out = model->params.arch.num_params();
  });
}

ekg_status ekg_model_num_classes(const ekg_model* model, int32_t* out) {
  return guarded([&] {
    check(model, "model");
    check(out, "out");
    *out = model->params.arch.classes;
  });
}

ekg_status ekg_model_predict(const ekg_model* model, const double* beat178, int32_t* label,
                             double* logits) {
  return guarded([&] {
    check(model, "model");
    check(beat178, "beat178");
    check(label, "label");
    const auto& p = model->params;
    ekgnet::model::ForwardCache cache;
    ekgnet::model::forward(p.arch, p.weights,
                           std::span<const double>(beat178, static_cast<std::size_t>(p.arch.input_len)),
                           cache);
    int best = 0;
    for (int c = 1; c < p.arch.classes; ++c)
      if (cache.logits[static_cast<std::size_t>(c)] > cache.logits[static_cast<std::size_t>(best)]) best = c;
    *label = best;
    if (logits)
      std::memcpy(logits, cache.logits.data(), sizeof(double) * cache.logits.size());
  });
}

void ekg_model_free(ekg_model* model) { delete model; }

ekg_status ekg_qmodel_load(const char* path, ekg_qmodel** out) {
  return guarded([&] {
    check(path, "path");
    check(out, "out");
    *out = new ekg_qmodel{ekgnet::quant::load_quantized(path)};
  });
}

ekg_status ekg_qmodel_save(const ekg_qmodel* qmodel, const char* path) {
  return guarded([&] {
    check(qmodel, "qmodel");
    check(path, "path");
    ekgnet::quant::save_quantized(qmodel->qmodel, path);
  });
}

ekg_status ekg_qmodel_predict(const ekg_qmodel* qmodel, const double* beat178, int32_t* label) {
  return guarded([&] {
    check(qmodel, "qmodel");
    check(beat178, "beat178");
    check(label, "label");
    const auto params = ekgnet::quant::decode(qmodel->qmodel);
    *label = ekgnet::model::predict(
        params.arch, params.weights,
        std::span<const double>(beat178, static_cast<std::size_t>(params.arch.input_len)));
  });
}

void ekg_qmodel_free(ekg_qmodel* qmodel) { delete qmodel; }

ekg_status ekg_quantize_model(const ekg_model* model, int32_t bits, ekg_qmodel** out) {
  return guarded([&] {
    check(model, "model");
    check(out, "out");
    const auto cb = ekgnet::quant::build_codebook(model->params, bits);
    *out = new ekg_qmodel{ekgnet::quant::quantize(model->params, cb)};
  });
}

/* ---- stages ---- */

ekg_status ekg_train_stage(const char* config_json, char** summary_json) {
  return guarded([&] {
    check(config_json, "config_json");
    check(summary_json, "summary_json");
    namespace ex = ekgnet::experiment;
    ex::ExperimentConfig cfg = ex::config_from_json(config_json);

    ekgnet::BeatSet pool;
    pool.task = cfg.task;
    if (!cfg.beats_csv.empty()) {
      pool = ekgnet::load_beats_csv(cfg.beats_csv, cfg.task);
    } else {
      ekgnet::require(!cfg.records.empty(), ekgnet::Errc::invalid_argument,
                      "no records or beats_csv configured");
      std::vector<std::pair<std::string, int>> diagnosis;
      if (cfg.task == ekgnet::Task::ptb2) {
        ekgnet::require(!cfg.diagnosis_csv.empty(), ekgnet::Errc::invalid_argument,
                        "ptb task requires a diagnosis_csv sidecar");
        diagnosis = ekgnet::load_diagnosis_csv(cfg.diagnosis_csv);
      }
      for (const auto& prefix : cfg.records) {
        const auto record = ekgnet::wfdb::load_record(prefix, cfg.strict);
        std::optional<int> fixed;
        if (cfg.task == ekgnet::Task::ptb2) {
          for (const auto& d : diagnosis)
            if (d.first == record.header.record_name) fixed = d.second;
          ekgnet::require(fixed.has_value(), ekgnet::Errc::invalid_argument,
                          "no diagnosis entry for record " + record.header.record_name);
        }
        auto beats = ekgnet::pipeline::record_to_beats(record, cfg.extract, fixed);
        for (auto& b : beats) pool.beats.push_back(std::move(b));
      }
    }

    cfg.split.seed = ekgnet::rng::mix(cfg.seed, 0x53504c49ULL);
    cfg.train.seed = ekgnet::rng::mix(cfg.seed, 0x5452414eULL);
    const auto split = ekgnet::pipeline::split_and_oversample(pool, cfg.split);

    ekgnet::model::Arch arch;
    arch.classes = ekgnet::task_num_classes(cfg.task);
    ekgnet::train::TeacherLogits teacher;
    const ekgnet::train::TeacherLogits* teacher_ptr = nullptr;
    if (!cfg.teacher_csv.empty()) {
      teacher = ekgnet::train::load_teacher_csv(cfg.teacher_csv, arch.classes);
      teacher_ptr = &teacher;
      if (cfg.train.distill_weight == 0.0) cfg.train.distill_weight = 0.5;
    } else {
      cfg.train.distill_weight = 0.0;
    }
    const auto trained = ekgnet::train::train(arch, cfg.train, cfg.noise, pool, split.train, split.val,
                                              teacher_ptr);

    std::filesystem::create_directories(cfg.out_dir);
    const auto out_path = [&](const std::string& name) {
      return (std::filesystem::path(cfg.out_dir) / name).string();
    };
    ekgnet::write_text_file(out_path("split_manifest.json"),
                            ekgnet::pipeline::split_manifest_json(pool, cfg.split, split));
    ekgnet::write_text_file(out_path("history.csv"), ekgnet::train::history_csv(trained.history));

    ekgnet::BeatSet test_set, val_set;
    test_set.task = val_set.task = pool.task;
    for (auto i : split.test) test_set.beats.push_back(pool.beats[i]);
    for (auto i : split.val) val_set.beats.push_back(pool.beats[i]);
    ekgnet::save_beats_csv(test_set, out_path("test_beats.csv"));
    ekgnet::save_beats_csv(val_set, out_path("val_beats.csv"));

    const json meta = {{"seed", cfg.seed},
                       {"config_hash", ex::config_hash(cfg)},
                       {"epoch", trained.best_epoch},
                       {"val_metric", trained.best_val}};
    ekgnet::model::save_checkpoint(trained.best, out_path("model.json"), meta.dump());

    const auto test_metrics = ekgnet::metrics::evaluate(
        [&](const ekgnet::Beat& b) { return ekgnet::model::predict(arch, trained.best.weights, b.samples); },
        pool, split.test);

    json summary;
    summary["out_dir"] = cfg.out_dir;
    summary["model"] = out_path("model.json");
    summary["beats"] = pool.beats.size();
    summary["best_epoch"] = trained.best_epoch;
    summary["val_balanced_accuracy"] = trained.best_val;
    summary["test"] = json::parse(ekgnet::metrics::metrics_json_fragment(test_metrics));
    *summary_json = dup_string(summary.dump(2) + "\n");
  });
}

ekg_status ekg_finetune_qmodel(ekg_qmodel* qmodel, const ekg_beatset* validation, int32_t iterations,
                               uint64_t seed, char** log_csv) {
  return guarded([&] {
    check(qmodel, "qmodel");
    check(validation, "validation");
    const auto eval_fn = [&](const ekgnet::quant::QuantizedModel& qm) {
      const auto params = ekgnet::quant::decode(qm);
      return ekgnet::metrics::evaluate(
                 [&](const ekgnet::Beat& b) {
                   return ekgnet::model::predict(params.arch, params.weights, b.samples);
                 },
                 validation->set)
          .balanced_accuracy;
    };
    ekgnet::rng::Stream rng(ekgnet::rng::mix(seed, 0x46494e45ULL));
    const auto result = ekgnet::quant::finetune(qmodel->qmodel, eval_fn, iterations, rng);
    if (log_csv) *log_csv = dup_string(ekgnet::quant::finetune_log_csv(result));
  });
}

ekg_status ekg_simulate(const ekg_qmodel* qmodel, const ekg_beatset* beats, const char* mac_json,
                        int32_t num_seeds, uint64_t seed, char** report_json) {
  return guarded([&] {
    check(qmodel, "qmodel");
    check(beats, "beats");
    check(report_json, "report_json");
    ekgnet::analog::MacConfig mac;
    mac.input_zero = 0.6;  // model-domain reference; see README
    mac.weight_range = 0.0;
    if (mac_json != nullptr && *mac_json != '\0') {
      const json m = json::parse(mac_json);
      mac.v_ref = m.value("v_ref", mac.v_ref);
      mac.gain = m.value("gain", mac.gain);
      mac.sigma_w_rel = m.value("sigma_w_rel", mac.sigma_w_rel);
      mac.sigma_in_rel = m.value("sigma_in_rel", mac.sigma_in_rel);
      mac.sigma_kernel_rel = m.value("sigma_kernel_rel", mac.sigma_kernel_rel);
      mac.leakage_per_step = m.value("leakage_per_step", mac.leakage_per_step);
      mac.input_zero = m.value("input_zero", mac.input_zero);
      mac.input_range = m.value("input_range", mac.input_range);
      mac.weight_range = m.value("weight_range", mac.weight_range);
    }
    if (mac.weight_range <= 0.0) mac.weight_range = 2.0 * qmodel->qmodel.codebook.w_max;

    const ekgnet::model::NoiseModel noise;  // hardware leakage on the outputs
    const auto eval = ekgnet::experiment::evaluate_analog(qmodel->qmodel, mac, noise, beats->set, {},
                                                          num_seeds, seed);
    json j;
    j["seed"] = seed;
    j["num_seeds"] = num_seeds;
    j["dataset_hash"] = ekgnet::hex64(ekgnet::dataset_hash(beats->set));
    j["balanced_accuracy_mean"] = eval.mean_balanced_accuracy;
    j["balanced_accuracy_sd"] = eval.sd_balanced_accuracy;
    j["balanced_accuracy_per_seed"] = eval.per_seed;
    j["first_seed"] = json::parse(ekgnet::metrics::metrics_json_fragment(eval.first_seed_metrics));
    j["cfg"] = {{"v_ref", mac.v_ref},
                {"gain", mac.gain},
                {"sigma_w_rel", mac.sigma_w_rel},
                {"sigma_in_rel", mac.sigma_in_rel},
                {"sigma_kernel_rel", mac.sigma_kernel_rel},
                {"leakage_per_step", mac.leakage_per_step},
                {"input_zero", mac.input_zero},
                {"input_range", mac.input_range},
                {"weight_range", mac.weight_range}};
    *report_json = dup_string(j.dump(2) + "\n");
  });
}

ekg_status ekg_characterize_mac(const char* mac_json, int64_t trials, uint64_t seed,
                                char** report_json) {
  return guarded([&] {
    check(report_json, "report_json");
    ekgnet::analog::MacConfig mac;
    if (mac_json != nullptr && *mac_json != '\0') {
      const json m = json::parse(mac_json);
      mac.v_ref = m.value("v_ref", mac.v_ref);
      mac.gain = m.value("gain", mac.gain);
      mac.sigma_w_rel = m.value("sigma_w_rel", mac.sigma_w_rel);
      mac.sigma_in_rel = m.value("sigma_in_rel", mac.sigma_in_rel);
      mac.sigma_kernel_rel = m.value("sigma_kernel_rel", mac.sigma_kernel_rel);
      mac.leakage_per_step = m.value("leakage_per_step", mac.leakage_per_step);
      mac.input_zero = m.value("input_zero", mac.input_zero);
      mac.input_range = m.value("input_range", mac.input_range);
      mac.weight_range = m.value("weight_range", mac.weight_range);
    }
    if (mac.weight_range <= 0.0) mac.weight_range = 0.2;
    const auto report = ekgnet::analog::characterize_mac(mac, trials, seed);
    *report_json = dup_string(ekgnet::analog::characterization_json(mac, report));
  });
}

ekg_status ekg_evaluate_model(const ekg_model* model, const ekg_beatset* beats, char** metrics_json) {
  return guarded([&] {
    check(model, "model");
    check(beats, "beats");
    check(metrics_json, "metrics_json");
    const auto& p = model->params;
    ekgnet::require(ekgnet::task_num_classes(beats->set.task) == p.arch.classes,
                    ekgnet::Errc::invalid_argument, "model classes do not match the beat set task");
    const auto m = ekgnet::metrics::evaluate(
        [&](const ekgnet::Beat& b) { return ekgnet::model::predict(p.arch, p.weights, b.samples); },
        beats->set);
    *metrics_json = dup_string(ekgnet::metrics::metrics_json_fragment(m) + "\n");
  });
}

ekg_status ekg_evaluate_qmodel(const ekg_qmodel* qmodel, const ekg_beatset* beats, char** metrics_json) {
  return guarded([&] {
    check(qmodel, "qmodel");
    check(beats, "beats");
    check(metrics_json, "metrics_json");
    const auto params = ekgnet::quant::decode(qmodel->qmodel);
    ekgnet::require(ekgnet::task_num_classes(beats->set.task) == params.arch.classes,
                    ekgnet::Errc::invalid_argument, "model classes do not match the beat set task");
    const auto m = ekgnet::metrics::evaluate(
        [&](const ekgnet::Beat& b) { return ekgnet::model::predict(params.arch, params.weights, b.samples); },
        beats->set);
    *metrics_json = dup_string(ekgnet::metrics::metrics_json_fragment(m) + "\n");
  });
}

ekg_status ekg_run_experiment(const char* config_json, char** summary_json) {
  return guarded([&] {
    check(config_json, "config_json");
    namespace ex = ekgnet::experiment;
    const ex::ExperimentConfig cfg = ex::config_from_json(config_json);
    const ex::ExperimentResult result = ex::run_experiment(cfg);
    if (summary_json) {
      json j;
      j["out_dir"] = result.out_dir;
      j["float_balanced_accuracy"] = result.float_metrics.balanced_accuracy;
      j["quantized_balanced_accuracy"] = result.quantized_metrics.balanced_accuracy;
      j["finetuned_balanced_accuracy"] = result.finetuned_metrics.balanced_accuracy;
      j["analog_balanced_accuracy_mean"] = result.analog.mean_balanced_accuracy;
      j["analog_balanced_accuracy_sd"] = result.analog.sd_balanced_accuracy;
      j["best_epoch"] = result.best_epoch;
      *summary_json = dup_string(j.dump(2) + "\n");
    }
  });
}

}  // extern "C"
