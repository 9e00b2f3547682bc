#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "core/error.hpp"
#include "core/model.hpp"

using namespace ekgnet;
using namespace ekgnet::model;

namespace {

// brute-force layer oracles, independent of the implementation path

std::vector<double> conv1d_oracle(const std::vector<double>& in, int len, int cin,
                                  const std::vector<double>& w, int cout, int k, int stride) {
  const int out_len = (len - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(out_len * cout), 0.0);
  for (int t = 0; t < out_len; ++t)
    for (int co = 0; co < cout; ++co)
      for (int ci = 0; ci < cin; ++ci)
        for (int j = 0; j < k; ++j)
          out[static_cast<std::size_t>(t * cout + co)] +=
              w[static_cast<std::size_t>((co * cin + ci) * k + j)] *
              in[static_cast<std::size_t>((t * stride + j) * cin + ci)];
  return out;
}

std::vector<double> maxpool_oracle(const std::vector<double>& in, int k, int stride) {
  const int out_len = (static_cast<int>(in.size()) - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(out_len));
  for (int t = 0; t < out_len; ++t) {
    double best = in[static_cast<std::size_t>(t * stride)];
    for (int j = 1; j < k; ++j) best = std::max(best, in[static_cast<std::size_t>(t * stride + j)]);
    out[static_cast<std::size_t>(t)] = best;
  }
  return out;
}

double cross_entropy_oracle(const std::vector<double>& logits, int label) {
  double denom = 0.0;
  for (const double v : logits) denom += std::exp(v);
  return -std::log(std::exp(logits[static_cast<std::size_t>(label)]) / denom);
}

double distill_oracle(const std::vector<double>& s, const std::vector<double>& t, int label, double T,
                      double lambda) {
  auto soft = [&](const std::vector<double>& v) {
    std::vector<double> p(v.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) denom += std::exp(v[i] / T);
    for (std::size_t i = 0; i < v.size(); ++i) p[i] = std::exp(v[i] / T) / denom;
    return p;
  };
  const auto ps = soft(s), pt = soft(t);
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) kl += pt[i] * std::log(pt[i] / ps[i]);
  return (1.0 - lambda) * cross_entropy_oracle(s, label) + lambda * T * T * kl;
}

std::vector<double> random_vec(rng::Stream& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("parameter census: 336 for 4 classes, 312 for 2") {
  Arch mit;
  mit.classes = 4;
  CHECK(mit.num_params() == 336);
  Arch ptb;
  ptb.classes = 2;
  CHECK(ptb.num_params() == 312);
}

TEST_CASE("dimension chain 178 -> 87 -> 41 -> 18 -> 12 -> C") {
  Arch arch;
  CHECK(arch.conv1_len() == 87);
  CHECK(arch.conv2_len() == 41);
  CHECK(arch.pool_len() == 18);
  CHECK(arch.fc1_out == 12);

  rng::Stream rng(1);
  ModelParams params = init_params(arch, rng);
  ForwardCache cache;
  const auto input = random_vec(rng, 178, 0.0, 1.0);
  forward(arch, params.weights, input, cache);
  CHECK(cache.conv1_pre.size() == 87 * 6);
  CHECK(cache.conv2_pre.size() == 41);
  CHECK(cache.pool.size() == 18);
  CHECK(cache.fc1.size() == 12);
  CHECK(cache.logits.size() == 4);
}

TEST_CASE("conv1d") {
  rng::Stream rng(2);
  SUBCASE("matches the brute-force oracle") {
    for (int trial = 0; trial < 100; ++trial) {
      const int cin = 1 + static_cast<int>(rng.next_below(3));
      const int cout = 1 + static_cast<int>(rng.next_below(3));
      const int k = 2 + static_cast<int>(rng.next_below(4));
      const int stride = 1 + static_cast<int>(rng.next_below(3));
      const int len = k + static_cast<int>(rng.next_below(12));
      const auto in = random_vec(rng, static_cast<std::size_t>(len * cin));
      const auto w = random_vec(rng, static_cast<std::size_t>(cout * cin * k));
      const int out_len = (len - k) / stride + 1;
      std::vector<double> out(static_cast<std::size_t>(out_len * cout));
      conv1d(in, len, cin, w, cout, k, stride, out);
      const auto expect = conv1d_oracle(in, len, cin, w, cout, k, stride);
      for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
  }
  SUBCASE("one-hot kernel reproduces a strided slice") {
    const auto in = random_vec(rng, 10);
    const std::vector<double> w = {1, 0, 0, 0, 0, 0};
    std::vector<double> out(3);
    conv1d(in, 10, 1, w, 1, 6, 2, out);
    CHECK(out[0] == in[0]);
    CHECK(out[1] == in[2]);
    CHECK(out[2] == in[4]);
  }
  SUBCASE("input shorter than the kernel is an error") {
    const std::vector<double> in(4, 0.0), w(6, 0.0);
    std::vector<double> out(1);
    CHECK_THROWS_AS(conv1d(in, 4, 1, w, 1, 6, 1, out), Error);
  }
}

TEST_CASE("maxpool1d") {
  rng::Stream rng(3);
  SUBCASE("matches the window-max oracle") {
    for (int trial = 0; trial < 100; ++trial) {
      const int k = 2 + static_cast<int>(rng.next_below(5));
      const int stride = 1 + static_cast<int>(rng.next_below(3));
      const int len = k + static_cast<int>(rng.next_below(30));
      const auto in = random_vec(rng, static_cast<std::size_t>(len));
      const int out_len = (len - k) / stride + 1;
      std::vector<double> out(static_cast<std::size_t>(out_len));
      std::vector<int> arg(static_cast<std::size_t>(out_len));
      maxpool1d(in, len, k, stride, out, arg);
      const auto expect = maxpool_oracle(in, k, stride);
      CHECK(out == expect);
      for (int t = 0; t < out_len; ++t)
        CHECK(in[static_cast<std::size_t>(arg[static_cast<std::size_t>(t)])] ==
              out[static_cast<std::size_t>(t)]);
    }
  }
  SUBCASE("41 -> 18 with kernel 6 stride 2") {
    std::vector<double> in(41, 0.0), out(18);
    std::vector<int> arg(18);
    maxpool1d(in, 41, 6, 2, out, arg);
    CHECK(out.size() == 18);
  }
  SUBCASE("ties break to the smallest index") {
    const std::vector<double> in(10, 1.5);
    std::vector<double> out(3);
    std::vector<int> arg(3);
    maxpool1d(in, 10, 6, 2, out, arg);
    for (int t = 0; t < 3; ++t) {
      CHECK(out[static_cast<std::size_t>(t)] == 1.5);
      CHECK(arg[static_cast<std::size_t>(t)] == t * 2);  // window start
    }
  }
}

TEST_CASE("dense") {
  SUBCASE("identity and zero weights") {
    const std::vector<double> in = {1, 2, 3};
    std::vector<double> w(9, 0.0);
    w[0] = w[4] = w[8] = 1.0;
    std::vector<double> out(3);
    dense(in, 3, w, 3, out);
    CHECK(out == in);
    std::fill(w.begin(), w.end(), 0.0);
    dense(in, 3, w, 3, out);
    CHECK(out == std::vector<double>{0, 0, 0});
  }
  SUBCASE("3x3 hand computation") {
    const std::vector<double> in = {2, -1, 0.5};
    const std::vector<double> w = {1, 2, 3, -1, 0, 1, 0.5, 0.5, 0.5};
    std::vector<double> out(3);
    dense(in, 3, w, 3, out);
    CHECK(out[0] == doctest::Approx(2 * 1 + -1 * 2 + 0.5 * 3));   // 1.5
    CHECK(out[1] == doctest::Approx(2 * -1 + -1 * 0 + 0.5 * 1));  // -1.5
    CHECK(out[2] == doctest::Approx(0.5 * (2 - 1 + 0.5)));        // 0.75
  }
  SUBCASE("dimension mismatch is an error") {
    const std::vector<double> in = {1, 2};
    const std::vector<double> w(9, 0.0);
    std::vector<double> out(3);
    CHECK_THROWS_AS(dense(in, 3, w, 3, out), Error);
  }
}

TEST_CASE("relu") {
  const std::vector<double> in = {-1.0, 0.0, 2.5};
  std::vector<double> out(3);
  relu(in, out);
  CHECK(out == std::vector<double>{0.0, 0.0, 2.5});
}

TEST_CASE("forward on a zero input gives zero logits and uniform softmax") {
  Arch arch;
  rng::Stream rng(4);
  const ModelParams params = init_params(arch, rng);
  const std::vector<double> input(178, 0.0);
  ForwardCache cache;
  forward(arch, params.weights, input, cache);
  for (const double v : cache.logits) CHECK(v == 0.0);
  const auto p = softmax(cache.logits);
  for (const double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax is a probability vector for wild logits") {
  rng::Stream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(4);
    for (auto& v : logits) v = rng.next_uniform(-700, 700);
    const auto p = softmax(logits);
    double sum = 0.0;
    for (const double v : p) {
      CHECK(v >= 0.0);
      CHECK(std::isfinite(v));
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cross_entropy") {
  SUBCASE("uniform logits give ln(C)") {
    const std::vector<double> logits(4, 0.7);
    CHECK(cross_entropy(logits, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("a huge margin drives the loss to zero") {
    std::vector<double> logits = {0, 0, 50, 0};
    CHECK(cross_entropy(logits, 2) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("matches the direct formula on random logits") {
    rng::Stream rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> logits(4);
      for (auto& v : logits) v = rng.next_uniform(-5, 5);
      const int label = static_cast<int>(rng.next_below(4));
      CHECK(cross_entropy(logits, label) ==
            doctest::Approx(cross_entropy_oracle(logits, label)).epsilon(1e-12));
    }
  }
  SUBCASE("label out of range is an error") {
    const std::vector<double> logits(4, 0.0);
    CHECK_THROWS_AS(cross_entropy(logits, 4), Error);
  }
}

TEST_CASE("distill_loss") {
  rng::Stream rng(7);
  SUBCASE("identical logits at lambda 1 give zero") {
    const auto s = random_vec(rng, 4);
    CHECK(distill_loss(s, s, 0, 1.5, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("lambda 0 equals cross entropy") {
    const auto s = random_vec(rng, 4), t = random_vec(rng, 4);
    CHECK(distill_loss(s, t, 1, 1.5, 0.0) == doctest::Approx(cross_entropy(s, 1)).epsilon(1e-14));
  }
  SUBCASE("matches the direct formula at T = 1.5") {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> s(4), t(4);
      for (auto& v : s) v = rng.next_uniform(-4, 4);
      for (auto& v : t) v = rng.next_uniform(-4, 4);
      const int label = static_cast<int>(rng.next_below(4));
      const double lambda = rng.next_unit();
      CHECK(distill_loss(s, t, label, 1.5, lambda) ==
            doctest::Approx(distill_oracle(s, t, label, 1.5, lambda)).epsilon(1e-12));
    }
  }
}

TEST_CASE("noise model") {
  const NoiseModel noise;
  SUBCASE("sigma at published points") {
    CHECK(noise.sigma(0.0) == doctest::Approx(0.002355).epsilon(1e-12));
    CHECK(noise.sigma(0.1) == doctest::Approx(0.00239609).epsilon(1e-9));
  }
  SUBCASE("sigma stays positive over the usable weight range") {
    for (double w = -10.0; w <= 10.0; w += 0.01) CHECK(noise.sigma(w) > 0.0);
  }
  SUBCASE("disabled noise is the identity") {
    Arch arch;
    rng::Stream rng(8);
    const ModelParams params = init_params(arch, rng);
    std::vector<double> noisy(params.weights.size()), eps(params.weights.size());
    sample_noisy_weights(params, NoiseModel::disabled(), rng, noisy, eps);
    CHECK(noisy == params.weights);
    for (const double e : eps) CHECK(e == 0.0);
  }
  SUBCASE("sampled weights follow w + sigma(w) * eps") {
    Arch arch;
    rng::Stream rng(9);
    const ModelParams params = init_params(arch, rng);
    std::vector<double> noisy(params.weights.size()), eps(params.weights.size());
    sample_noisy_weights(params, noise, rng, noisy, eps);
    for (std::size_t i = 0; i < noisy.size(); ++i)
      CHECK(noisy[i] ==
            doctest::Approx(params.weights[i] + noise.sigma(params.weights[i]) * eps[i]).epsilon(1e-12));
  }
}

TEST_CASE("output leakage statistics over 1e5 draws") {
  NoiseModel noise;
  rng::Stream rng(10);
  const int n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits(1, 0.0);
    apply_output_leakage(logits, noise, rng);
    sum += logits[0];
    sum_sq += logits[0] * logits[0];
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  // 3 standard errors of the mean and of the sd estimate
  CHECK(std::abs(mean - 0.0005) < 3.0 * 0.0001 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(sd - 0.0001) < 3.0 * 0.0001 / std::sqrt(2.0 * n));

  SUBCASE("disabled leakage is the identity") {
    std::vector<double> logits = {1.0, 2.0};
    apply_output_leakage(logits, NoiseModel::disabled(), rng);
    CHECK(logits == std::vector<double>{1.0, 2.0});
  }
  SUBCASE("zero sd is a constant shift") {
    NoiseModel fixed;
    fixed.leakage_sd = 0.0;
    std::vector<double> logits = {1.0};
    apply_output_leakage(logits, fixed, rng);
    CHECK(logits[0] == doctest::Approx(1.0005).epsilon(1e-12));
  }
}

namespace {

// loss as a deterministic function of the clean weights, with frozen noise;
// also reports the activation pattern (ReLU signs and pool argmax) so callers
// can recognize kink crossings where finite differences stop being an oracle
double loss_with_frozen_noise(const Arch& arch, const std::vector<double>& weights,
                              const std::vector<double>& input, int label,
                              const std::vector<double>& eps, const std::vector<double>& leak,
                              const NoiseModel& noise, std::vector<int>* pattern = nullptr) {
  std::vector<double> noisy(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i)
    noisy[i] = weights[i] + noise.sigma(weights[i]) * eps[i];
  ForwardCache cache;
  forward(arch, noisy, input, cache);
  if (pattern) {
    pattern->clear();
    for (const double z : cache.conv1_pre) pattern->push_back(z > 0.0);
    for (const double z : cache.conv2_pre) pattern->push_back(z > 0.0);
    for (const int a : cache.pool_argmax) pattern->push_back(a);
  }
  for (std::size_t c = 0; c < cache.logits.size(); ++c) cache.logits[c] += leak[c];
  return cross_entropy(cache.logits, label);
}

}  // namespace

TEST_CASE("gradient check against central finite differences") {
  Arch arch;
  const NoiseModel noise;
  int mismatches = 0;
  std::size_t skipped = 0, checked = 0;

  for (int trial = 0; trial < 10; ++trial) {
    rng::Stream rng(100 + static_cast<std::uint64_t>(trial));
    ModelParams params = init_params(arch, rng);
    const auto input = random_vec(rng, 178, 0.0, 1.0);
    const int label = static_cast<int>(rng.next_below(4));
    std::vector<double> eps(params.weights.size());
    for (auto& e : eps) e = rng.next_normal();
    std::vector<double> leak(4);
    for (auto& l : leak) l = rng.next_normal(noise.leakage_mean, noise.leakage_sd);

    // analytic gradient through the same frozen noise
    std::vector<double> noisy(params.weights.size());
    for (std::size_t i = 0; i < noisy.size(); ++i)
      noisy[i] = params.weights[i] + noise.sigma(params.weights[i]) * eps[i];
    ForwardCache cache;
    forward(arch, noisy, input, cache);
    for (std::size_t c = 0; c < cache.logits.size(); ++c) cache.logits[c] += leak[c];
    std::vector<double> dlogits(4);
    cross_entropy_grad(cache.logits, label, dlogits);
    std::vector<double> grad(params.weights.size(), 0.0);
    backward(arch, noisy, cache, dlogits, grad);
    chain_noise_grad(arch, params.weights, eps, noise, grad);

    const double h = 1e-5;
    std::vector<int> up_pattern, down_pattern;
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
      auto w = params.weights;
      w[i] += h;
      const double up = loss_with_frozen_noise(arch, w, input, label, eps, leak, noise, &up_pattern);
      w[i] -= 2 * h;
      const double down =
          loss_with_frozen_noise(arch, w, input, label, eps, leak, noise, &down_pattern);
      if (up_pattern != down_pattern) {
        ++skipped;  // ReLU/pool kink inside the stencil: FD is not an oracle here
        continue;
      }
      ++checked;
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
      if (std::abs(fd - grad[i]) / denom >= 1e-4) ++mismatches;
    }
  }
  CHECK(mismatches == 0);
  CHECK(checked > 3300);                  // nearly every component verified
  CHECK(skipped < checked / 100);        // kinks are rare under random draws
}

TEST_CASE("backward routes zero upstream gradient to zero everywhere") {
  Arch arch;
  rng::Stream rng(11);
  const ModelParams params = init_params(arch, rng);
  const auto input = random_vec(rng, 178, 0.0, 1.0);
  ForwardCache cache;
  forward(arch, params.weights, input, cache);
  const std::vector<double> dlogits(4, 0.0);
  std::vector<double> grad(params.weights.size(), 0.0);
  backward(arch, params.weights, cache, dlogits, grad);
  for (const double g : grad) CHECK(g == 0.0);
}

TEST_CASE("maxpool gradient lands on the recorded argmax") {
  Arch arch;
  rng::Stream rng(12);
  const ModelParams params = init_params(arch, rng);
  const auto input = random_vec(rng, 178, 0.0, 1.0);
  ForwardCache cache;
  forward(arch, params.weights, input, cache);

  // perturb one pooled value's source; only that fc1 path should see it
  std::vector<double> dlogits(4);
  cross_entropy_grad(cache.logits, 0, dlogits);
  std::vector<double> grad(params.weights.size(), 0.0);
  backward(arch, params.weights, cache, dlogits, grad);

  // fc1 weight gradient for input j is dL/dfc1_i * pool[j]; check consistency
  std::vector<double> d_fc1(12, 0.0);
  for (int c = 0; c < 4; ++c)
    for (int j = 0; j < 12; ++j)
      d_fc1[static_cast<std::size_t>(j)] +=
          dlogits[static_cast<std::size_t>(c)] *
          params.weights[static_cast<std::size_t>(arch.fc2_off() + c * 12 + j)];
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 18; ++j)
      CHECK(grad[static_cast<std::size_t>(arch.fc1_off() + i * 18 + j)] ==
            doctest::Approx(d_fc1[static_cast<std::size_t>(i)] * cache.pool[static_cast<std::size_t>(j)])
                .epsilon(1e-12));
}

TEST_CASE("checkpoint round trip") {
  Arch arch;
  arch.classes = 4;
  rng::Stream rng(13);
  const ModelParams params = init_params(arch, rng);
  const std::string text = to_checkpoint_json(params, R"({"seed":7})");
  const ModelParams loaded = from_checkpoint_json(text);
  CHECK(loaded.arch == params.arch);
  CHECK(loaded.weights == params.weights);

  SUBCASE("wrong tensor count is rejected") {
    const std::string broken = R"({"arch":{"input_len":178,"classes":4},
      "tensors":{"conv1":[1,2],"conv2":[],"fc1":[],"fc2":[]},"metadata":{}})";
    CHECK_THROWS_AS(from_checkpoint_json(broken), Error);
  }
}
