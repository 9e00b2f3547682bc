#include "core/quant.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "core/error.hpp"
#include "core/textio.hpp"

namespace ekgnet::quant {

Codebook build_codebook(const model::ModelParams& params, int bits) {
  require(bits >= 1 && bits <= 16, Errc::invalid_argument, "codebook: bits out of range");
  double w_max = 0.0;
  for (const double w : params.weights) {
    require(std::isfinite(w), Errc::invalid_argument, "codebook: non-finite weight");
    w_max = std::max(w_max, std::abs(w));
  }
  require(w_max > 0.0, Errc::invalid_argument, "codebook: all-zero model");
  Codebook cb;
  cb.bits = bits;
  cb.w_max = w_max;
  cb.step = 2.0 * w_max / static_cast<double>((1 << bits) - 1);
  return cb;
}

int quantize_value(double w, const Codebook& cb) {
  // nearest level; exact midpoints round toward the lower code
  const double pos = (w + cb.w_max) / cb.step;
  int code = static_cast<int>(std::ceil(pos - 0.5));
  code = std::clamp(code, 0, cb.num_levels() - 1);
  return code;
}

QuantizedModel quantize(const model::ModelParams& params, const Codebook& cb) {
  QuantizedModel q;
  q.arch = params.arch;
  q.codebook = cb;
  q.codes.resize(params.weights.size());
  for (std::size_t i = 0; i < params.weights.size(); ++i) q.codes[i] = quantize_value(params.weights[i], cb);
  return q;
}

model::ModelParams decode(const QuantizedModel& qmodel) {
  model::ModelParams params;
  params.arch = qmodel.arch;
  params.weights.resize(qmodel.codes.size());
  for (std::size_t i = 0; i < qmodel.codes.size(); ++i) {
    require(qmodel.codes[i] >= 0 && qmodel.codes[i] < qmodel.codebook.num_levels(), Errc::invalid_argument,
            "decode: code out of range");
    params.weights[i] = qmodel.codebook.level(qmodel.codes[i]);
  }
  return params;
}

FinetuneResult finetune_codes(std::vector<int>& codes, int num_levels, const CodesEvalFn& eval_fn,
                              int iterations, rng::Stream& rng) {
  require(iterations >= 0, Errc::invalid_argument, "finetune: negative iteration count");
  require(!codes.empty(), Errc::invalid_argument, "finetune: empty code vector");

  FinetuneResult result;
  double acc_old = eval_fn(codes);
  result.accepted_trace.reserve(static_cast<std::size_t>(iterations));
  result.log.reserve(static_cast<std::size_t>(iterations));

  for (int it = 0; it < iterations; ++it) {
    const auto weight_id = static_cast<std::size_t>(rng.next_below(codes.size()));
    const int direction = rng.next_below(2) == 0 ? +1 : -1;

    FinetuneTrial trial;
    trial.iteration = it;
    trial.weight_id = static_cast<int>(weight_id);
    trial.direction = direction;
    trial.acc_before = acc_old;

    const int old_code = codes[weight_id];
    const int new_code = std::clamp(old_code + direction, 0, num_levels - 1);
    double acc_new;
    if (new_code == old_code) {
      acc_new = acc_old;  // saturated boundary move: nothing changed
    } else {
      codes[weight_id] = new_code;
      acc_new = eval_fn(codes);
    }
    trial.acc_after = acc_new;

    if (acc_new < acc_old) {
      codes[weight_id] = old_code;  // revert strictly-worse moves only
      trial.accepted = false;
    } else {
      acc_old = acc_new;
      trial.accepted = true;
    }
    result.accepted_trace.push_back(acc_old);
    result.log.push_back(trial);
  }
  result.final_accuracy = acc_old;
  return result;
}

FinetuneResult finetune(QuantizedModel& qmodel, const ModelEvalFn& eval_fn, int iterations,
                        rng::Stream& rng) {
  QuantizedModel scratch = qmodel;
  const CodesEvalFn codes_eval = [&](const std::vector<int>& codes) {
    scratch.codes = codes;
    return eval_fn(scratch);
  };
  FinetuneResult result = finetune_codes(qmodel.codes, qmodel.codebook.num_levels(), codes_eval,
                                         iterations, rng);
  return result;
}

std::string finetune_log_csv(const FinetuneResult& result) {
  std::string out = "iteration,weight_id,direction,acc_before,acc_after,accepted\n";
  for (const auto& t : result.log) {
    out += std::to_string(t.iteration);
    out += ',';
    out += std::to_string(t.weight_id);
    out += ',';
    out += t.direction > 0 ? "up" : "down";
    out += ',';
    out += format_double(t.acc_before);
    out += ',';
    out += format_double(t.acc_after);
    out += ',';
    out += t.accepted ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::string to_quantized_json(const QuantizedModel& qmodel) {
  using nlohmann::json;
  const model::Arch& a = qmodel.arch;
  json j;
  j["bits"] = qmodel.codebook.bits;
  j["w_max"] = qmodel.codebook.w_max;
  j["arch"] = {{"input_len", a.input_len},
               {"channels", {a.conv1_out, a.conv2_out}},
               {"kernel", a.kernel},
               {"strides", {a.conv_stride, a.conv_stride, a.pool_stride}},
               {"classes", a.classes}};
  auto slice = [&](int off, int n) {
    json arr = json::array();
    for (int i = 0; i < n; ++i) arr.push_back(qmodel.codes[static_cast<std::size_t>(off + i)]);
    return arr;
  };
  j["codes"] = {{"conv1", slice(a.conv1_off(), a.conv1_size())},
                {"conv2", slice(a.conv2_off(), a.conv2_size())},
                {"fc1", slice(a.fc1_off(), a.fc1_size())},
                {"fc2", slice(a.fc2_off(), a.fc2_size())}};
  return j.dump(2) + "\n";
}

QuantizedModel from_quantized_json(const std::string& text) {
  using nlohmann::json;
  const json j = json::parse(text);
  QuantizedModel q;
  q.arch.input_len = j.at("arch").at("input_len").get<int>();
  q.arch.classes = j.at("arch").at("classes").get<int>();
  q.codebook.bits = j.at("bits").get<int>();
  q.codebook.w_max = j.at("w_max").get<double>();
  require(q.codebook.w_max > 0, Errc::parse, "quantized checkpoint: w_max must be positive");
  q.codebook.step = 2.0 * q.codebook.w_max / static_cast<double>(q.codebook.num_levels() - 1);

  for (const char* name : {"conv1", "conv2", "fc1", "fc2"})
    for (const auto& c : j.at("codes").at(name)) {
      const int code = c.get<int>();
      require(code >= 0 && code < q.codebook.num_levels(), Errc::parse, "quantized checkpoint: code out of range");
      q.codes.push_back(code);
    }
  require(static_cast<int>(q.codes.size()) == q.arch.num_params(), Errc::parse,
          "quantized checkpoint: wrong code count");
  return q;
}

void save_quantized(const QuantizedModel& qmodel, const std::string& path) {
  write_text_file(path, to_quantized_json(qmodel));
}

QuantizedModel load_quantized(const std::string& path) { return from_quantized_json(read_text_file(path)); }

}  // namespace ekgnet::quant
