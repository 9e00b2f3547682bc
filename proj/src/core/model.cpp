#include "core/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "core/error.hpp"
#include "core/textio.hpp"

namespace ekgnet::model {

ModelParams init_params(const Arch& arch, rng::Stream& rng, double range) {
  ModelParams params;
  params.arch = arch;
  params.weights.resize(static_cast<std::size_t>(arch.num_params()));
  for (auto& w : params.weights) w = rng.next_uniform(-range, range);
  return params;
}

void conv1d(std::span<const double> in, int len, int cin, std::span<const double> w, int cout, int k,
            int stride, std::span<double> out) {
  require(len >= k, Errc::invalid_argument, "conv1d: input shorter than kernel");
  require(static_cast<int>(in.size()) == len * cin, Errc::invalid_argument, "conv1d: input size mismatch");
  require(static_cast<int>(w.size()) == cout * cin * k, Errc::invalid_argument, "conv1d: weight size mismatch");
  const int out_len = (len - k) / stride + 1;
  require(static_cast<int>(out.size()) == out_len * cout, Errc::invalid_argument, "conv1d: output size mismatch");

  for (int t = 0; t < out_len; ++t) {
    for (int co = 0; co < cout; ++co) {
      double acc = 0.0;
      for (int ci = 0; ci < cin; ++ci) {
        const double* wp = &w[static_cast<std::size_t>((co * cin + ci) * k)];
        const double* xp = &in[static_cast<std::size_t>(t * stride * cin + ci)];
        for (int j = 0; j < k; ++j) acc += wp[j] * xp[static_cast<std::size_t>(j) * static_cast<std::size_t>(cin)];
      }
      out[static_cast<std::size_t>(t * cout + co)] = acc;
    }
  }
}

void relu(std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void maxpool1d(std::span<const double> in, int len, int k, int stride, std::span<double> out,
               std::span<int> argmax) {
  require(len >= k, Errc::invalid_argument, "maxpool1d: input shorter than kernel");
  const int out_len = (len - k) / stride + 1;
  require(static_cast<int>(out.size()) == out_len && static_cast<int>(argmax.size()) == out_len,
          Errc::invalid_argument, "maxpool1d: output size mismatch");
  for (int t = 0; t < out_len; ++t) {
    int best = t * stride;
    double best_v = in[static_cast<std::size_t>(best)];
    for (int j = 1; j < k; ++j) {
      const int idx = t * stride + j;
      if (in[static_cast<std::size_t>(idx)] > best_v) {
        best_v = in[static_cast<std::size_t>(idx)];
        best = idx;
      }
    }
    out[static_cast<std::size_t>(t)] = best_v;
    argmax[static_cast<std::size_t>(t)] = best;
  }
}

void dense(std::span<const double> in, int n, std::span<const double> w, int m, std::span<double> out) {
  require(static_cast<int>(in.size()) == n, Errc::invalid_argument, "dense: input size mismatch");
  require(static_cast<int>(w.size()) == m * n, Errc::invalid_argument, "dense: weight size mismatch");
  require(static_cast<int>(out.size()) == m, Errc::invalid_argument, "dense: output size mismatch");
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    const double* row = &w[static_cast<std::size_t>(i * n)];
    for (int j = 0; j < n; ++j) acc += row[j] * in[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = acc;
  }
}

void ForwardCache::resize(const Arch& arch) {
  input.resize(static_cast<std::size_t>(arch.input_len));
  conv1_pre.resize(static_cast<std::size_t>(arch.conv1_len() * arch.conv1_out));
  conv1_act.resize(conv1_pre.size());
  conv2_pre.resize(static_cast<std::size_t>(arch.conv2_len() * arch.conv2_out));
  conv2_act.resize(conv2_pre.size());
  pool.resize(static_cast<std::size_t>(arch.pool_len()));
  pool_argmax.resize(pool.size());
  fc1.resize(static_cast<std::size_t>(arch.fc1_out));
  logits.resize(static_cast<std::size_t>(arch.classes));
}

void forward(const Arch& arch, std::span<const double> weights, std::span<const double> input,
             ForwardCache& cache) {
  require(static_cast<int>(input.size()) == arch.input_len, Errc::invalid_argument,
          "forward: input length must be " + std::to_string(arch.input_len));
  require(static_cast<int>(weights.size()) == arch.num_params(), Errc::invalid_argument,
          "forward: weight count mismatch");
  require(arch.conv2_out == 1, Errc::invalid_argument, "forward: pooling assumes a single conv2 channel");
  cache.resize(arch);
  std::copy(input.begin(), input.end(), cache.input.begin());

  conv1d(input, arch.input_len, 1, weights.subspan(static_cast<std::size_t>(arch.conv1_off()), static_cast<std::size_t>(arch.conv1_size())),
         arch.conv1_out, arch.kernel, arch.conv_stride, cache.conv1_pre);
  relu(cache.conv1_pre, cache.conv1_act);

  conv1d(cache.conv1_act, arch.conv1_len(), arch.conv1_out,
         weights.subspan(static_cast<std::size_t>(arch.conv2_off()), static_cast<std::size_t>(arch.conv2_size())),
         arch.conv2_out, arch.kernel, arch.conv_stride, cache.conv2_pre);
  relu(cache.conv2_pre, cache.conv2_act);

  maxpool1d(cache.conv2_act, arch.conv2_len(), arch.pool_kernel, arch.pool_stride, cache.pool,
            cache.pool_argmax);

  dense(cache.pool, arch.pool_len(),
        weights.subspan(static_cast<std::size_t>(arch.fc1_off()), static_cast<std::size_t>(arch.fc1_size())),
        arch.fc1_out, cache.fc1);
  dense(cache.fc1, arch.fc1_out,
        weights.subspan(static_cast<std::size_t>(arch.fc2_off()), static_cast<std::size_t>(arch.fc2_size())),
        arch.classes, cache.logits);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

double cross_entropy(std::span<const double> logits, int label) {
  require(label >= 0 && label < static_cast<int>(logits.size()), Errc::invalid_argument,
          "cross_entropy: label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (const double v : logits) sum += std::exp(v - mx);
  return std::log(sum) - (logits[static_cast<std::size_t>(label)] - mx);
}

void cross_entropy_grad(std::span<const double> logits, int label, std::span<double> dlogits) {
  const auto p = softmax(logits);
  for (std::size_t i = 0; i < p.size(); ++i) dlogits[i] = p[i];
  dlogits[static_cast<std::size_t>(label)] -= 1.0;
}

namespace {

std::vector<double> softmax_scaled(std::span<const double> logits, double temperature) {
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  return softmax(scaled);
}

}  // namespace

double distill_loss(std::span<const double> student, std::span<const double> teacher, int label,
                    double temperature, double lambda) {
  require(student.size() == teacher.size(), Errc::invalid_argument, "distill: logit size mismatch");
  require(temperature > 0, Errc::invalid_argument, "distill: temperature must be positive");
  require(lambda >= 0.0 && lambda <= 1.0, Errc::invalid_argument, "distill: lambda must be in [0,1]");
  const double ce = cross_entropy(student, label);
  if (lambda == 0.0) return ce;

  const auto p = softmax_scaled(teacher, temperature);
  const auto q = softmax_scaled(student, temperature);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return (1.0 - lambda) * ce + lambda * temperature * temperature * kl;
}

void distill_grad(std::span<const double> student, std::span<const double> teacher, int label,
                  double temperature, double lambda, std::span<double> dlogits) {
  cross_entropy_grad(student, label, dlogits);
  if (lambda == 0.0) return;
  const auto p = softmax_scaled(teacher, temperature);
  const auto q = softmax_scaled(student, temperature);
  for (std::size_t i = 0; i < dlogits.size(); ++i)
    dlogits[i] = (1.0 - lambda) * dlogits[i] + lambda * temperature * (q[i] - p[i]);
}

void sample_noisy_weights(const ModelParams& params, const NoiseModel& noise, rng::Stream& rng,
                          std::span<double> noisy, std::span<double> eps) {
  const auto n = params.weights.size();
  require(noisy.size() == n && eps.size() == n, Errc::invalid_argument, "sample_noisy_weights: size mismatch");
  if (!noise.weight_noise) {
    std::copy(params.weights.begin(), params.weights.end(), noisy.begin());
    std::fill(eps.begin(), eps.end(), 0.0);
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double w = params.weights[i];
    eps[i] = rng.next_normal();
    noisy[i] = w + noise.sigma(w) * eps[i];
  }
}

void apply_output_leakage(std::span<double> logits, const NoiseModel& noise, rng::Stream& rng) {
  if (!noise.output_leakage) return;
  for (auto& v : logits) v += rng.next_normal(noise.leakage_mean, noise.leakage_sd);
}

void backward(const Arch& arch, std::span<const double> weights, const ForwardCache& cache,
              std::span<const double> dlogits, std::span<double> grad) {
  require(static_cast<int>(grad.size()) == arch.num_params(), Errc::invalid_argument,
          "backward: gradient size mismatch");
  require(static_cast<int>(dlogits.size()) == arch.classes, Errc::invalid_argument,
          "backward: dlogits size mismatch");

  const int pool_len = arch.pool_len();
  const int conv2_len = arch.conv2_len();
  const int conv1_len = arch.conv1_len();

  const auto w_fc2 = weights.subspan(static_cast<std::size_t>(arch.fc2_off()), static_cast<std::size_t>(arch.fc2_size()));
  const auto w_fc1 = weights.subspan(static_cast<std::size_t>(arch.fc1_off()), static_cast<std::size_t>(arch.fc1_size()));
  const auto w_conv2 = weights.subspan(static_cast<std::size_t>(arch.conv2_off()), static_cast<std::size_t>(arch.conv2_size()));

  auto g_fc2 = grad.subspan(static_cast<std::size_t>(arch.fc2_off()), static_cast<std::size_t>(arch.fc2_size()));
  auto g_fc1 = grad.subspan(static_cast<std::size_t>(arch.fc1_off()), static_cast<std::size_t>(arch.fc1_size()));
  auto g_conv2 = grad.subspan(static_cast<std::size_t>(arch.conv2_off()), static_cast<std::size_t>(arch.conv2_size()));
  auto g_conv1 = grad.subspan(static_cast<std::size_t>(arch.conv1_off()), static_cast<std::size_t>(arch.conv1_size()));

  // fc2: logits = W2 * fc1
  std::vector<double> d_fc1(static_cast<std::size_t>(arch.fc1_out), 0.0);
  for (int c = 0; c < arch.classes; ++c) {
    const double g = dlogits[static_cast<std::size_t>(c)];
    for (int j = 0; j < arch.fc1_out; ++j) {
      g_fc2[static_cast<std::size_t>(c * arch.fc1_out + j)] += g * cache.fc1[static_cast<std::size_t>(j)];
      d_fc1[static_cast<std::size_t>(j)] += g * w_fc2[static_cast<std::size_t>(c * arch.fc1_out + j)];
    }
  }

  // fc1: fc1 = W1 * pool
  std::vector<double> d_pool(static_cast<std::size_t>(pool_len), 0.0);
  for (int i = 0; i < arch.fc1_out; ++i) {
    const double g = d_fc1[static_cast<std::size_t>(i)];
    for (int j = 0; j < pool_len; ++j) {
      g_fc1[static_cast<std::size_t>(i * pool_len + j)] += g * cache.pool[static_cast<std::size_t>(j)];
      d_pool[static_cast<std::size_t>(j)] += g * w_fc1[static_cast<std::size_t>(i * pool_len + j)];
    }
  }

  // maxpool routes each gradient to the recorded argmax
  std::vector<double> d_conv2_act(static_cast<std::size_t>(conv2_len), 0.0);
  for (int t = 0; t < pool_len; ++t)
    d_conv2_act[static_cast<std::size_t>(cache.pool_argmax[static_cast<std::size_t>(t)])] +=
        d_pool[static_cast<std::size_t>(t)];

  // ReLU after conv2
  std::vector<double> d_conv2_pre(static_cast<std::size_t>(conv2_len));
  for (int t = 0; t < conv2_len; ++t)
    d_conv2_pre[static_cast<std::size_t>(t)] =
        cache.conv2_pre[static_cast<std::size_t>(t)] > 0.0 ? d_conv2_act[static_cast<std::size_t>(t)] : 0.0;

  // conv2: z2[t] = sum_ci sum_j w2[ci,j] * a1[t*s + j, ci]
  std::vector<double> d_conv1_act(static_cast<std::size_t>(conv1_len * arch.conv1_out), 0.0);
  for (int t = 0; t < conv2_len; ++t) {
    const double g = d_conv2_pre[static_cast<std::size_t>(t)];
    if (g == 0.0) continue;
    for (int ci = 0; ci < arch.conv1_out; ++ci) {
      for (int j = 0; j < arch.kernel; ++j) {
        const std::size_t w_idx = static_cast<std::size_t>(ci * arch.kernel + j);
        const std::size_t a_idx = static_cast<std::size_t>((t * arch.conv_stride + j) * arch.conv1_out + ci);
        g_conv2[w_idx] += g * cache.conv1_act[a_idx];
        d_conv1_act[a_idx] += g * w_conv2[w_idx];
      }
    }
  }

  // ReLU after conv1, then conv1 weight gradients
  for (int t = 0; t < conv1_len; ++t) {
    for (int co = 0; co < arch.conv1_out; ++co) {
      const std::size_t idx = static_cast<std::size_t>(t * arch.conv1_out + co);
      if (cache.conv1_pre[idx] <= 0.0) continue;
      const double g = d_conv1_act[idx];
      if (g == 0.0) continue;
      for (int j = 0; j < arch.kernel; ++j)
        g_conv1[static_cast<std::size_t>(co * arch.kernel + j)] +=
            g * cache.input[static_cast<std::size_t>(t * arch.conv_stride + j)];
    }
  }
}

void chain_noise_grad(const Arch& arch, std::span<const double> clean_weights,
                      std::span<const double> eps, const NoiseModel& noise, std::span<double> grad) {
  const auto n = static_cast<std::size_t>(arch.num_params());
  require(clean_weights.size() == n && eps.size() == n && grad.size() == n, Errc::invalid_argument,
          "chain_noise_grad: size mismatch");
  for (std::size_t i = 0; i < n; ++i)
    grad[i] *= 1.0 + noise.sigma_prime(clean_weights[i]) * eps[i];
}

int predict(const Arch& arch, std::span<const double> weights, std::span<const double> input) {
  thread_local ForwardCache cache;
  forward(arch, weights, input, cache);
  return static_cast<int>(std::max_element(cache.logits.begin(), cache.logits.end()) -
                          cache.logits.begin());
}

namespace {

using nlohmann::json;

json tensor3(const std::vector<double>& w, int off, int d0, int d1, int d2) {
  json out = json::array();
  for (int a = 0; a < d0; ++a) {
    json mid = json::array();
    for (int b = 0; b < d1; ++b) {
      json row = json::array();
      for (int c = 0; c < d2; ++c) row.push_back(w[static_cast<std::size_t>(off + (a * d1 + b) * d2 + c)]);
      mid.push_back(std::move(row));
    }
    out.push_back(std::move(mid));
  }
  return out;
}

json tensor2(const std::vector<double>& w, int off, int d0, int d1) {
  json out = json::array();
  for (int a = 0; a < d0; ++a) {
    json row = json::array();
    for (int b = 0; b < d1; ++b) row.push_back(w[static_cast<std::size_t>(off + a * d1 + b)]);
    out.push_back(std::move(row));
  }
  return out;
}

void flatten_into(const json& t, std::vector<double>& out) {
  if (t.is_array()) {
    for (const auto& e : t) flatten_into(e, out);
  } else {
    require(t.is_number(), Errc::parse, "checkpoint: non-numeric tensor entry");
    out.push_back(t.get<double>());
  }
}

}  // namespace

std::string to_checkpoint_json(const ModelParams& params, const std::string& metadata_json) {
  const Arch& a = params.arch;
  json j;
  j["arch"] = {{"input_len", a.input_len},
               {"channels", {a.conv1_out, a.conv2_out}},
               {"kernel", a.kernel},
               {"strides", {a.conv_stride, a.conv_stride, a.pool_stride}},
               {"classes", a.classes}};
  j["tensors"] = {{"conv1", tensor3(params.weights, a.conv1_off(), a.conv1_out, 1, a.kernel)},
                  {"conv2", tensor3(params.weights, a.conv2_off(), a.conv2_out, a.conv1_out, a.kernel)},
                  {"fc1", tensor2(params.weights, a.fc1_off(), a.fc1_out, a.pool_len())},
                  {"fc2", tensor2(params.weights, a.fc2_off(), a.classes, a.fc1_out)}};
  j["metadata"] = json::parse(metadata_json);
  return j.dump(2) + "\n";
}

ModelParams from_checkpoint_json(const std::string& text) {
  const json j = json::parse(text);
  ModelParams params;
  Arch& a = params.arch;
  const json& arch = j.at("arch");
  a.input_len = arch.at("input_len").get<int>();
  a.classes = arch.at("classes").get<int>();
  require(a.classes >= 2, Errc::parse, "checkpoint: classes must be >= 2");

  params.weights.reserve(static_cast<std::size_t>(a.num_params()));
  for (const char* name : {"conv1", "conv2", "fc1", "fc2"})
    flatten_into(j.at("tensors").at(name), params.weights);
  require(static_cast<int>(params.weights.size()) == a.num_params(), Errc::parse,
          "checkpoint: expected " + std::to_string(a.num_params()) + " weights, got " +
              std::to_string(params.weights.size()));
  return params;
}

void save_checkpoint(const ModelParams& params, const std::string& path, const std::string& metadata_json) {
  write_text_file(path, to_checkpoint_json(params, metadata_json));
}

ModelParams load_checkpoint(const std::string& path) { return from_checkpoint_json(read_text_file(path)); }

}  // namespace ekgnet::model
