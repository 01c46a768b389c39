#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ntt/decoding.hpp"
#include "ntt/model.hpp"

namespace ntt {

struct TrainConfig {
  double base_lr = 5e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double anneal_factor = 0.8;
  std::size_t anneal_every = 3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; 0 disables
  std::uint64_t seed = 1;
  double target_accuracy = 0.0;  // stop once eval accuracy reaches this; 0 disables
  std::size_t checkpoint_every = 0;

  void validate() const {
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw Error("train config: base_lr must be > 0");
    if (!(anneal_factor > 0.0 && anneal_factor <= 1.0)) throw Error("train config: anneal_factor must be in (0, 1]");
    if (anneal_every == 0) throw Error("train config: anneal_every must be positive");
    if (batch_size == 0) throw Error("train config: batch_size must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw Error("train config: Adam betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) throw Error("train config: eps must be > 0");
    if (clip_norm < 0.0) throw Error("train config: clip_norm must be >= 0");
  }
};

/// base_lr · factor^floor(epoch / every).
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.base_lr * std::pow(cfg.anneal_factor, static_cast<double>(epoch / cfg.anneal_every));
}

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam over every parameter, in name order.
inline void adam_step(ParameterSet& params, double lr, AdamState& state, const TrainConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  params.for_each([&](Parameter& p) {
    auto [mit, m_new] = state.m.try_emplace(p.name, Tensor::zeros_like(p.value));
    auto [vit, v_new] = state.v.try_emplace(p.name, Tensor::zeros_like(p.value));
    auto m = mit->second.data();
    auto v = vit->second.data();
    auto w = p.value.data();
    auto g = p.grad.data();
    if (m.size() != w.size() || v.size() != w.size()) throw Error("adam: moment shape mismatch for '" + p.name + "'");
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  });
}

/// Rescales gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_gradients(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  params.for_each([&](Parameter& p) {
    for (double g : p.grad.data()) sq += g * g;
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    params.for_each([&](Parameter& p) {
      for (double& g : p.grad.data()) g *= k;
    });
  }
  return norm;
}

struct TokenAccuracy {
  double accuracy = 0.0;           // argmax token equals target
  double sentinel_accuracy = 0.0;  // (p_sentinel ≥ 0.5) equals "target is textual"
  std::size_t tokens = 0;
};

/// Teacher-forced next-token accuracy in inference mode.
inline TokenAccuracy teacher_forced_eval(const CaptionModel& model, const std::vector<const Example*>& examples) {
  std::size_t correct = 0, sentinel_correct = 0, total = 0;
  for (const Example* ex : examples) {
    Tape tape;
    EncodedRegions enc = model.encode(tape, ex->regions);
    DecoderState state = model.initial_state(tape);
    for (std::size_t t = 1; t < ex->tokens.size(); ++t) {
      StepOutput out = model.step(tape, enc, state, ex->tokens[t - 1], false, nullptr);
      HeadOutputs h = model.heads(enc, out);
      const WordDistribution dist = model.distribution(enc, out, h);
      const Token& target = ex->tokens[t];
      if (argmax_token(dist).token == target) ++correct;
      if ((dist.p_sentinel >= 0.5) == target.is_text()) ++sentinel_correct;
      ++total;
      state = out.state;
    }
  }
  TokenAccuracy acc;
  acc.tokens = total;
  if (total > 0) {
    acc.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    acc.sentinel_accuracy = static_cast<double>(sentinel_correct) / static_cast<double>(total);
  }
  return acc;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
  double sentinel_accuracy = 0.0;
  std::size_t clamped = 0;

  bool operator==(const EpochRecord&) const = default;
};

/// Mean sequence loss over a batch; gradients of that mean accumulate
/// into the model parameters (example-index order).
inline double batch_loss_and_grad(CaptionModel& model, const std::vector<const Example*>& batch, bool train, Rng* rng,
                                  std::size_t* clamped = nullptr) {
  const double k = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const Example* ex : batch) {
    Tape tape;
    Var loss = model.sequence_loss(tape, *ex, train, rng);
    total += loss.value()[0];
    tape.backward(scale(loss, k));
    if (clamped) *clamped += tape.clamp_count();
  }
  return total * k;
}

/// Epoch-level training loop. Owns the optimizer state and the RNG used for
/// shuffling and dropout so a run can be checkpointed and resumed exactly.
class Trainer {
 public:
  Trainer(CaptionModel& model, TrainConfig cfg) : model_(model), cfg_(cfg), rng_(cfg.seed) { cfg_.validate(); }

  const TrainConfig& config() const { return cfg_; }
  std::size_t epoch() const { return epoch_; }
  const AdamState& adam() const { return adam_; }
  const Rng& rng() const { return rng_; }
  CaptionModel& model() { return model_; }

  void restore(std::size_t epoch, AdamState adam, const Rng& rng) {
    epoch_ = epoch;
    adam_ = std::move(adam);
    rng_ = rng;
  }

  /// One pass over `train` in shuffled mini-batches, then evaluation on `eval`.
  EpochRecord run_epoch(const std::vector<const Example*>& train, const std::vector<const Example*>& eval) {
    if (train.empty()) throw Error("train: no training examples");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng_.below(i + 1)]);

    EpochRecord rec;
    rec.epoch = epoch_;
    rec.lr = lr_schedule(epoch_, cfg_);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg_.batch_size); ++i) {
        batch.push_back(train[order[i]]);
      }
      model_.params().zero_grad();
      double loss = 0.0;
      try {
        loss = batch_loss_and_grad(model_, batch, true, &rng_, &rec.clamped);
      } catch (const Error& e) {
        throw Error("train: epoch " + std::to_string(epoch_) + " batch " + std::to_string(batches) + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch_) + " batch " + std::to_string(batches));
      }
      clip_gradients(model_.params(), cfg_.clip_norm);
      adam_step(model_.params(), rec.lr, adam_, cfg_);
      loss_sum += loss;
      ++batches;
    }
    rec.mean_loss = loss_sum / static_cast<double>(batches);
    const TokenAccuracy acc = teacher_forced_eval(model_, eval.empty() ? train : eval);
    rec.accuracy = acc.accuracy;
    rec.sentinel_accuracy = acc.sentinel_accuracy;
    ++epoch_;
    return rec;
  }

 private:
  CaptionModel& model_;
  TrainConfig cfg_;
  Rng rng_;
  AdamState adam_;
  std::size_t epoch_ = 0;
};

/// Trains until cfg.epochs total epochs have run (counting any resumed
/// ones) or the target accuracy is met. `on_epoch` sees each record.
inline std::vector<EpochRecord> train(Trainer& trainer, const std::vector<const Example*>& train_set,
                                      const std::vector<const Example*>& eval_set,
                                      const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  std::vector<EpochRecord> log;
  const TrainConfig& cfg = trainer.config();
  while (trainer.epoch() < cfg.epochs) {
    log.push_back(trainer.run_epoch(train_set, eval_set));
    if (on_epoch) on_epoch(log.back());
    if (cfg.target_accuracy > 0.0 && log.back().accuracy >= cfg.target_accuracy) break;
  }
  return log;
}

}  // namespace ntt
