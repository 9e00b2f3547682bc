#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace ekgnet::model {

// Fixed topology: conv(6ch,k6,s2) -> ReLU -> conv(1ch,k6,s2) -> ReLU ->
// maxpool(k6,s2) -> fc(12) -> fc(classes). All layers bias-free.
struct Arch {
  int input_len = 178;
  int conv1_out = 6;
  int conv2_out = 1;
  int kernel = 6;
  int conv_stride = 2;
  int pool_kernel = 6;
  int pool_stride = 2;
  int fc1_out = 12;
  int classes = 4;

  int conv1_len() const { return (input_len - kernel) / conv_stride + 1; }
  int conv2_len() const { return (conv1_len() - kernel) / conv_stride + 1; }
  int pool_len() const { return (conv2_len() - pool_kernel) / pool_stride + 1; }

  int conv1_size() const { return conv1_out * 1 * kernel; }
  int conv2_size() const { return conv2_out * conv1_out * kernel; }
  int fc1_size() const { return fc1_out * pool_len(); }
  int fc2_size() const { return classes * fc1_out; }

  int conv1_off() const { return 0; }
  int conv2_off() const { return conv1_size(); }
  int fc1_off() const { return conv2_off() + conv2_size(); }
  int fc2_off() const { return fc1_off() + fc1_size(); }
  int num_params() const { return fc2_off() + fc2_size(); }

  bool operator==(const Arch&) const = default;
};

struct ModelParams {
  Arch arch;
  std::vector<double> weights;  // flat: conv1, conv2, fc1, fc2
};

ModelParams init_params(const Arch& arch, rng::Stream& rng, double range = 0.1);

// Analog weight uncertainty: sigma(w) = a2 w^2 + a1 w + a0, plus Gaussian
// leakage added to the network output. Units are volts throughout.
struct NoiseModel {
  double sigma_a2 = 0.0021090;
  double sigma_a1 = 0.0002000;
  double sigma_a0 = 0.002355;
  double leakage_mean = 0.0005;
  double leakage_sd = 0.0001;
  bool weight_noise = true;
  bool output_leakage = true;

  double sigma(double w) const { return sigma_a2 * w * w + sigma_a1 * w + sigma_a0; }
  double sigma_prime(double w) const { return 2.0 * sigma_a2 * w + sigma_a1; }

  static NoiseModel disabled() {
    NoiseModel n;
    n.weight_noise = false;
    n.output_leakage = false;
    return n;
  }
};

// Valid (unpadded) 1-D convolution, no bias.
// in: len x cin row-major, w: cout x cin x k, out: out_len x cout row-major.
void conv1d(std::span<const double> in, int len, int cin, std::span<const double> w, int cout, int k,
            int stride, std::span<double> out);

void relu(std::span<const double> in, std::span<double> out);

// Ties go to the smallest index so gradients are deterministic.
void maxpool1d(std::span<const double> in, int len, int k, int stride, std::span<double> out,
               std::span<int> argmax);

// out = W * in, W is m x n row-major.
void dense(std::span<const double> in, int n, std::span<const double> w, int m, std::span<double> out);

struct ForwardCache {
  std::vector<double> input;      // input_len
  std::vector<double> conv1_pre;  // conv1_len x conv1_out
  std::vector<double> conv1_act;
  std::vector<double> conv2_pre;  // conv2_len
  std::vector<double> conv2_act;
  std::vector<double> pool;       // pool_len
  std::vector<int> pool_argmax;
  std::vector<double> fc1;        // fc1_out
  std::vector<double> logits;     // classes

  void resize(const Arch& arch);
};

// Deterministic forward pass with the given (possibly noisy) flat weights.
void forward(const Arch& arch, std::span<const double> weights, std::span<const double> input,
             ForwardCache& cache);

std::vector<double> softmax(std::span<const double> logits);
double cross_entropy(std::span<const double> logits, int label);
void cross_entropy_grad(std::span<const double> logits, int label, std::span<double> dlogits);

// (1-lambda) * CE(student, label) + lambda * T^2 * KL(soft(teacher/T) || soft(student/T))
double distill_loss(std::span<const double> student, std::span<const double> teacher, int label,
                    double temperature, double lambda);
void distill_grad(std::span<const double> student, std::span<const double> teacher, int label,
                  double temperature, double lambda, std::span<double> dlogits);

// w~ = w + sigma(w) * eps with eps ~ N(0,1) drawn per weight.
void sample_noisy_weights(const ModelParams& params, const NoiseModel& noise, rng::Stream& rng,
                          std::span<double> noisy, std::span<double> eps);

void apply_output_leakage(std::span<double> logits, const NoiseModel& noise, rng::Stream& rng);

// Gradients w.r.t. the weights used in the forward pass (the noisy ones).
// dlogits is dLoss/dlogits; grad is accumulated into (caller zeroes it).
void backward(const Arch& arch, std::span<const double> weights, const ForwardCache& cache,
              std::span<const double> dlogits, std::span<double> grad);

// Chain rule through the reparameterized noise: dw~/dw = 1 + sigma'(w) eps.
void chain_noise_grad(const Arch& arch, std::span<const double> clean_weights,
                      std::span<const double> eps, const NoiseModel& noise, std::span<double> grad);

int predict(const Arch& arch, std::span<const double> weights, std::span<const double> input);

// Checkpoint (de)serialization; JSON with arch, tensors and metadata.
std::string to_checkpoint_json(const ModelParams& params, const std::string& metadata_json);
ModelParams from_checkpoint_json(const std::string& text);
void save_checkpoint(const ModelParams& params, const std::string& path, const std::string& metadata_json = "{}");
ModelParams load_checkpoint(const std::string& path);

}  // namespace ekgnet::model
