#include "core/train.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/textio.hpp"

namespace ekgnet::train {

double lr_at(int epoch, const TrainConfig& config) {
  require(epoch >= 0, Errc::invalid_argument, "lr_at: negative epoch");
  require(config.halve_every > 0, Errc::invalid_argument, "lr_at: halve_every must be positive");
  return config.lr0 * std::pow(0.5, epoch / config.halve_every);
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad, double lr,
               double weight_decay) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  require(state.m.size() == params.size() && grad.size() == params.size(), Errc::invalid_argument,
          "adam_step: size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + weight_decay * params[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

TeacherLogits load_teacher_csv(const std::string& path, int classes) {
  const std::string text = read_text_file(path);
  TeacherLogits out;
  std::size_t line_no = 0;
  for (std::string_view rest = text; !rest.empty();) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = nl == std::string_view::npos ? rest : rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line, ',');
    require(static_cast<int>(fields.size()) == classes + 1, Errc::parse,
            path + ":" + std::to_string(line_no) + ": expected beat_id plus " + std::to_string(classes) +
                " logits");
    const auto id = static_cast<std::size_t>(parse_int(fields[0], "beat_id"));
    if (out.size() <= id) out.resize(id + 1);
    std::vector<double> logits(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c)
      logits[static_cast<std::size_t>(c)] = parse_double(fields[static_cast<std::size_t>(c) + 1], "logit");
    out[id] = std::move(logits);
  }
  return out;
}

namespace {

double balanced_accuracy_noiseless(const model::Arch& arch, std::span<const double> weights,
                                   const BeatSet& data, std::span<const std::uint32_t> idx) {
  if (idx.empty()) return 0.0;
  const int classes = arch.classes;
  std::vector<std::int64_t> correct(static_cast<std::size_t>(classes), 0);
  std::vector<std::int64_t> total(static_cast<std::size_t>(classes), 0);
  std::vector<std::uint8_t> hits(idx.size(), 0);

  parallel_chunks(idx.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Beat& b = data.beats[idx[i]];
      hits[i] = model::predict(arch, weights, b.samples) == b.label ? 1 : 0;
    }
  });
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Beat& b = data.beats[idx[i]];
    ++total[static_cast<std::size_t>(b.label)];
    correct[static_cast<std::size_t>(b.label)] += hits[i];
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (total[static_cast<std::size_t>(c)] == 0) continue;
    sum += static_cast<double>(correct[static_cast<std::size_t>(c)]) /
           static_cast<double>(total[static_cast<std::size_t>(c)]);
    ++present;
  }
  return present ? sum / present : 0.0;
}

}  // namespace

TrainResult train(const model::Arch& arch, const TrainConfig& config, const model::NoiseModel& noise,
                  const BeatSet& data, std::span<const std::uint32_t> train_idx,
                  std::span<const std::uint32_t> val_idx, const TeacherLogits* teacher) {
  require(!train_idx.empty(), Errc::invalid_argument, "train: empty training set");
  require(config.batch_size > 0 && config.epochs >= 0, Errc::invalid_argument, "train: bad config");
  require(config.lr0 > 0, Errc::invalid_argument, "train: lr0 must be positive");
  require(config.distill_temperature > 0, Errc::invalid_argument, "train: temperature must be positive");
  require(config.distill_weight >= 0 && config.distill_weight <= 1, Errc::invalid_argument,
          "train: distill_weight must be in [0,1]");
  require(config.distill_weight == 0.0 || teacher != nullptr, Errc::invalid_argument,
          "train: distill_weight > 0 but no teacher logits supplied");
  const bool distill = teacher != nullptr && config.distill_weight > 0.0;

  const auto n_params = static_cast<std::size_t>(arch.num_params());
  rng::Stream init_rng(config.seed, 0x494e4954ULL);  // "INIT"
  model::ModelParams params = model::init_params(arch, init_rng, config.init_range);

  if (distill) {
    for (const auto i : train_idx)
      require(i < teacher->size() && static_cast<int>((*teacher)[i].size()) == arch.classes,
              Errc::invalid_argument,
              "train: missing teacher logits for beat " + std::to_string(i));
  }

  AdamState adam(n_params);
  rng::Stream shuffle_rng(config.seed, 0x53485546ULL);  // "SHUF"

  std::vector<std::uint32_t> order(train_idx.begin(), train_idx.end());
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);

  // per-element scratch, reduced serially for thread-count independence
  std::vector<double> elem_grads(batch * n_params);
  std::vector<double> elem_loss(batch);
  std::vector<double> grad(n_params);

  struct Scratch {
    model::ForwardCache cache;
    std::vector<double> noisy, eps, dlogits;
  };

  TrainResult result;
  result.best = params;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    shuffle_rng.shuffle(order.data(), order.size());

    double epoch_loss = 0.0;
    std::size_t seen = 0;

    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);

      parallel_chunks(count, [&](std::size_t begin, std::size_t end) {
        Scratch s;
        s.noisy.resize(n_params);
        s.eps.resize(n_params);
        s.dlogits.resize(static_cast<std::size_t>(arch.classes));
        for (std::size_t e = begin; e < end; ++e) {
          const std::uint32_t beat_idx = order[start + e];
          const Beat& beat = data.beats[beat_idx];
          // one reproducible stream per (seed, epoch, position-in-epoch)
          const std::uint64_t serial =
              static_cast<std::uint64_t>(epoch) * order.size() + (start + e);
          rng::Stream stream(rng::mix(config.seed, 0x4e4f495345ULL), serial);  // "NOISE"

          model::sample_noisy_weights(params, noise, stream, s.noisy, s.eps);
          model::forward(arch, s.noisy, beat.samples, s.cache);
          model::apply_output_leakage(s.cache.logits, noise, stream);

          double loss;
          if (distill) {
            const auto& t = (*teacher)[beat_idx];
            loss = model::distill_loss(s.cache.logits, t, beat.label, config.distill_temperature,
                                       config.distill_weight);
            model::distill_grad(s.cache.logits, t, beat.label, config.distill_temperature,
                                config.distill_weight, s.dlogits);
          } else {
            loss = model::cross_entropy(s.cache.logits, beat.label);
            model::cross_entropy_grad(s.cache.logits, beat.label, s.dlogits);
          }
          elem_loss[e] = loss;

          auto g = std::span<double>(elem_grads).subspan(e * n_params, n_params);
          std::fill(g.begin(), g.end(), 0.0);
          model::backward(arch, s.noisy, s.cache, s.dlogits, g);
          if (noise.weight_noise && config.reparam_full)
            model::chain_noise_grad(arch, params.weights, s.eps, noise, g);
        }
      });

      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t e = 0; e < count; ++e) {
        batch_loss += elem_loss[e];
        const double* g = &elem_grads[e * n_params];
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += g[i];
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& g : grad) g *= inv;
      batch_loss *= inv;

      require(std::isfinite(batch_loss), Errc::failure,
              "train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                  std::to_string(start / batch));

      adam_step(adam, params.weights, grad, lr, config.weight_decay);
      epoch_loss += batch_loss * static_cast<double>(count);
      seen += count;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = epoch_loss / static_cast<double>(seen);
    stats.val_balanced_acc = balanced_accuracy_noiseless(arch, params.weights, data, val_idx);
    result.history.push_back(stats);

    if (val_idx.empty() || stats.val_balanced_acc > result.best_val) {
      result.best_val = stats.val_balanced_acc;
      result.best_epoch = epoch;
      result.best = params;
    }
  }

  result.final = params;
  if (result.best_epoch < 0) result.best = params;
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,lr,train_loss,val_balanced_acc\n";
  for (const auto& h : history) {
    out += std::to_string(h.epoch);
    out += ',';
    out += format_double(h.lr);
    out += ',';
    out += format_double(h.train_loss);
    out += ',';
    out += format_double(h.val_balanced_acc);
    out += '\n';
  }
  return out;
}

}  // namespace ekgnet::train
