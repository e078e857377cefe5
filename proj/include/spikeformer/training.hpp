// Training machinery: smoothed cross-entropy, Adam / SGD-momentum with
// checkpointable state, warmup + step/cosine learning-rate schedules, the
// deterministic train/eval loops, and per-epoch run reporting.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "spikeformer/data.hpp"
#include "spikeformer/model.hpp"
#include "spikeformer/serialize.hpp"
#include "spikeformer/tensor.hpp"

namespace spikeformer {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Cross-entropy of log-softmax(logits) against the uniform-mixture smoothed
// target: the true class gets 1 - eps + eps/K, every class gets eps/K of the
// remaining mass.  Returns the mean over the batch as a scalar tensor.
template <typename S>
Tensor<S> smoothed_cross_entropy(const Tensor<S>& logits, const std::vector<Index>& labels,
                                 double eps) {
  if (logits.rank() != 2)
    throw std::invalid_argument("smoothed_cross_entropy: logits must be [batch, classes], got " +
                                shape_str(logits.shape()));
  if (eps < 0.0 || eps >= 1.0)
    throw std::invalid_argument("smoothed_cross_entropy: smoothing must lie in [0,1), got " +
                                std::to_string(eps));
  const Index b = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<Index>(labels.size()) != b)
    throw std::invalid_argument("smoothed_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(b));
  for (Index i = 0; i < b; ++i)
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k)
      throw std::invalid_argument("smoothed_cross_entropy: label " +
                                  std::to_string(labels[static_cast<std::size_t>(i)]) +
                                  " at batch index " + std::to_string(i) + " is outside [0, " +
                                  std::to_string(k) + ")");

  const S off = static_cast<S>(eps) / static_cast<S>(k);

  // Row-wise log-sum-exp; keep the probabilities for the backward pass.
  std::vector<S> probs(static_cast<std::size_t>(b * k));
  const S* lg = logits.data();
  S total = S(0);
  for (Index i = 0; i < b; ++i) {
    const S* row = lg + i * k;
    S m = row[0];
    for (Index j = 1; j < k; ++j) m = std::max(m, row[j]);
    S z = S(0);
    for (Index j = 0; j < k; ++j) z += std::exp(row[j] - m);
    const S lse = m + std::log(z);
    S row_loss = S(0);
    for (Index j = 0; j < k; ++j) {
      const S logp = row[j] - lse;
      probs[static_cast<std::size_t>(i * k + j)] = std::exp(logp);
      const S q = off + (j == labels[static_cast<std::size_t>(i)] ? S(1) - static_cast<S>(eps)
                                                                  : S(0));
      row_loss -= q * logp;
    }
    total += row_loss;
  }
  Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(b));

  if (detail::want_grad<S>({&logits})) {
    detail::record<S>(out, [logits, out, probs = std::move(probs), labels, b, k, off, eps]() {
      const S g = out.grad()[0] / static_cast<S>(b);
      S* gl = logits.impl()->ensure_grad();
      for (Index i = 0; i < b; ++i)
        for (Index j = 0; j < k; ++j) {
          const S q = off + (j == labels[static_cast<std::size_t>(i)] ? S(1) - static_cast<S>(eps)
                                                                      : S(0));
          gl[i * k + j] += g * (probs[static_cast<std::size_t>(i * k + j)] - q);
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

template <typename S>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies one update from the parameters' accumulated gradients (an empty
  // gradient buffer counts as zero) at the given learning rate.
  virtual void step(S lr) = 0;
  virtual void zero_grad() = 0;
  // Internal state as named tensors ("opt.…") for checkpointing.
  virtual std::vector<std::pair<std::string, Tensor<S>>> named_state() const = 0;
  virtual void load_state(const Checkpoint<S>& ckpt) = 0;

 protected:
  static const S* grad_or_null(const Tensor<S>& p) {
    return p.has_grad() ? p.grad().data() : nullptr;
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with bias correction.  Weight decay is coupled: wd * p is added to the
// gradient before the moment updates.
template <typename S>
class Adam final : public Optimizer<S> {
 public:
  Adam(std::vector<std::pair<std::string, Tensor<S>>> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (auto& [name, p] : params_) {
      m_.push_back(Tensor<S>::zeros(p.shape()));
      v_.push_back(Tensor<S>::zeros(p.shape()));
    }
  }

  void step(S lr) override {
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S corr1 = S(1) - std::pow(b1, static_cast<S>(t_));
    const S corr2 = S(1) - std::pow(b2, static_cast<S>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = params_[i].second;
      const S* g = this->grad_or_null(p);
      S* pv = p.data();
      S* m = m_[i].data();
      S* v = v_[i].data();
      const Index n = p.numel();
      for (Index j = 0; j < n; ++j) {
        const S gj = (g ? g[j] : S(0)) + static_cast<S>(cfg_.weight_decay) * pv[j];
        m[j] = b1 * m[j] + (S(1) - b1) * gj;
        v[j] = b2 * v[j] + (S(1) - b2) * gj * gj;
        const S mhat = m[j] / corr1;
        const S vhat = v[j] / corr2;
        pv[j] -= lr * mhat / (std::sqrt(vhat) + static_cast<S>(cfg_.eps));
      }
    }
  }

  void zero_grad() override {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_state() const override {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    out.emplace_back("opt.step", Tensor<S>::scalar(static_cast<S>(t_)));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.emplace_back("opt.m." + params_[i].first, m_[i]);
      out.emplace_back("opt.v." + params_[i].first, v_[i]);
    }
    return out;
  }

  void load_state(const Checkpoint<S>& ckpt) override {
    t_ = static_cast<std::uint64_t>(require(ckpt, "opt.step").item());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      copy_into(m_[i], require(ckpt, "opt.m." + params_[i].first));
      copy_into(v_[i], require(ckpt, "opt.v." + params_[i].first));
    }
  }

 private:
  static const Tensor<S>& require(const Checkpoint<S>& ckpt, const std::string& name) {
    const Tensor<S>* t = ckpt.find(name);
    if (!t) throw std::runtime_error("checkpoint is missing optimizer state tensor '" + name + "'");
    return *t;
  }
  static void copy_into(Tensor<S>& dst, const Tensor<S>& src) {
    if (dst.shape() != src.shape())
      throw std::runtime_error("optimizer state shape mismatch: have " +
                               shape_str(dst.shape()) + ", checkpoint has " +
                               shape_str(src.shape()));
    std::copy(src.data(), src.data() + src.numel(), dst.data());
  }

  std::vector<std::pair<std::string, Tensor<S>>> params_;
  AdamConfig cfg_;
  std::vector<Tensor<S>> m_, v_;
  std::uint64_t t_ = 0;
};

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Classical momentum: v <- mu*v + (g + wd*p); p <- p - lr*v.
template <typename S>
class SgdMomentum final : public Optimizer<S> {
 public:
  SgdMomentum(std::vector<std::pair<std::string, Tensor<S>>> params, SgdConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (auto& [name, p] : params_) v_.push_back(Tensor<S>::zeros(p.shape()));
  }

  void step(S lr) override {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = params_[i].second;
      const S* g = this->grad_or_null(p);
      S* pv = p.data();
      S* v = v_[i].data();
      const Index n = p.numel();
      for (Index j = 0; j < n; ++j) {
        const S gj = (g ? g[j] : S(0)) + static_cast<S>(cfg_.weight_decay) * pv[j];
        v[j] = static_cast<S>(cfg_.momentum) * v[j] + gj;
        pv[j] -= lr * v[j];
      }
    }
  }

  void zero_grad() override {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  std::vector<std::pair<std::string, Tensor<S>>> named_state() const override {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.emplace_back("opt.v." + params_[i].first, v_[i]);
    return out;
  }

  void load_state(const Checkpoint<S>& ckpt) override {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Tensor<S>* t = ckpt.find("opt.v." + params_[i].first);
      if (!t)
        throw std::runtime_error("checkpoint is missing optimizer state tensor 'opt.v." +
                                 params_[i].first + "'");
      if (t->shape() != v_[i].shape())
        throw std::runtime_error("optimizer state shape mismatch for 'opt.v." +
                                 params_[i].first + "'");
      std::copy(t->data(), t->data() + t->numel(), v_[i].data());
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> params_;
  SgdConfig cfg_;
  std::vector<Tensor<S>> v_;
};

// ---------------------------------------------------------------------------
// Configuration and schedule
// ---------------------------------------------------------------------------

enum class OptimizerKind { adam, sgd };
enum class ScheduleKind { constant, step, cosine };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  AdamConfig adam;           // used when optimizer == adam
  SgdConfig sgd;             // used when optimizer == sgd
  double base_lr = 1e-3;
  double weight_decay = 0.0;  // copied into the chosen optimizer config
  Index batch_size = 16;
  Index epochs = 1;
  Index warmup_epochs = 0;
  ScheduleKind schedule = ScheduleKind::constant;
  Index step_period = 192;       // step schedule: decay every this many epochs
  double step_factor = 0.1;
  std::vector<Index> milestones;  // explicit decay epochs; overrides step_period
  double lr_min = 0.0;            // cosine floor
  double label_smoothing = 0.0;
  double droppath_rate = 0.0;
  std::uint64_t seed = 0;
  Index steps_per_epoch = 1;  // set by the trainer from dataset and batch size

  void validate() const {
    if (base_lr <= 0.0)
      throw std::invalid_argument("train config: base_lr must be positive, got " +
                                  std::to_string(base_lr));
    if (warmup_epochs >= epochs)
      throw std::invalid_argument("train config: warmup_epochs (" +
                                  std::to_string(warmup_epochs) +
                                  ") must be smaller than epochs (" + std::to_string(epochs) +
                                  ")");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw std::invalid_argument("train config: label_smoothing must lie in [0,1), got " +
                                  std::to_string(label_smoothing));
    if (batch_size < 1 || epochs < 1 || steps_per_epoch < 1)
      throw std::invalid_argument("train config: batch_size, epochs and steps_per_epoch must be "
                                  "positive");
    if (schedule == ScheduleKind::step && milestones.empty() && step_period < 1)
      throw std::invalid_argument("train config: step schedule needs a positive period or an "
                                  "explicit milestone list");
  }
};

// Learning rate for one optimizer step.  Warmup rises linearly from 0 at the
// very first step to base_lr when warmup ends, with per-step granularity.
// Afterwards: constant holds base_lr; step multiplies by factor every
// `step_period` epochs (or at each listed milestone epoch), counting epochs
// from 0 *including* warmup; cosine follows
// lr_min + (base - lr_min)/2 * (1 + cos(pi * progress)) with progress also
// measured from epoch 0 over the full run.
inline double lr_at(const TrainConfig& cfg, Index epoch, Index step_in_epoch) {
  const double spe = static_cast<double>(cfg.steps_per_epoch);
  if (epoch < cfg.warmup_epochs) {
    const double global = static_cast<double>(epoch) * spe + static_cast<double>(step_in_epoch);
    const double warm = static_cast<double>(cfg.warmup_epochs) * spe;
    return cfg.base_lr * global / warm;
  }
  switch (cfg.schedule) {
    case ScheduleKind::constant:
      return cfg.base_lr;
    case ScheduleKind::step: {
      double lr = cfg.base_lr;
      if (!cfg.milestones.empty()) {
        for (Index m : cfg.milestones)
          if (epoch >= m) lr *= cfg.step_factor;
      } else {
        lr *= std::pow(cfg.step_factor, static_cast<double>(epoch / cfg.step_period));
      }
      return lr;
    }
    case ScheduleKind::cosine: {
      const double progress =
          (static_cast<double>(epoch) + static_cast<double>(step_in_epoch) / spe) /
          static_cast<double>(cfg.epochs);
      return cfg.lr_min +
             0.5 * (cfg.base_lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
    }
  }
  throw std::logic_error("lr_at: unhandled schedule kind");
}

// ---------------------------------------------------------------------------
// Run reporting
// ---------------------------------------------------------------------------

struct RunReport {
  std::vector<double> train_loss, train_acc, eval_acc, lr, wall_seconds;

  // Line-delimited structured text, one record per epoch.
  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(10);
    for (std::size_t e = 0; e < train_loss.size(); ++e)
      os << "epoch=" << e << " lr=" << lr[e] << " train_loss=" << train_loss[e]
         << " train_acc=" << train_acc[e] << " eval_acc=" << eval_acc[e]
         << " wall_s=" << std::setprecision(3) << wall_seconds[e] << std::setprecision(10)
         << "\n";
    return os.str();
  }

  // Determinism comparison: every recorded metric except wall time, which
  // depends on machine load rather than on the computation.
  bool same_metrics(const RunReport& other) const {
    return train_loss == other.train_loss && train_acc == other.train_acc &&
           eval_acc == other.eval_acc && lr == other.lr;
  }
};

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

// Stacks per-sample [T, 2, H, W] frames into one [T, B, 2, H, W] batch.
inline Tensor<float> stack_frames(const std::vector<FrameSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("stack_frames: empty batch");
  const Shape& s0 = batch.front().frames.shape();
  for (const FrameSample& s : batch)
    if (s.frames.shape() != s0)
      throw std::invalid_argument("stack_frames: mixed sample shapes " + shape_str(s0) + " vs " +
                                  shape_str(s.frames.shape()));
  const Index t = s0[0], c = s0[1], h = s0[2], w = s0[3];
  const Index b = static_cast<Index>(batch.size());
  const Index chw = c * h * w;
  Tensor<float> out = Tensor<float>::zeros({t, b, c, h, w});
  float* dst = out.data();
  for (Index ti = 0; ti < t; ++ti)
    for (Index bi = 0; bi < b; ++bi)
      std::copy(batch[static_cast<std::size_t>(bi)].frames.data() + ti * chw,
                batch[static_cast<std::size_t>(bi)].frames.data() + (ti + 1) * chw,
                dst + (ti * b + bi) * chw);
  return out;
}

inline Index argmax_row(const float* row, Index k) {
  Index best = 0;
  for (Index j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct EpochMetrics {
  double loss = 0.0, accuracy = 0.0, lr_last = 0.0;
};

// Top-1 accuracy with augmentation off, droppath off, and batch-norm in
// running-statistics mode.  Batch order is fixed, so repeated calls agree
// exactly.
inline double evaluate_split(SpikeformerModel<float>& model,
                             const std::vector<EventStream>& data, Index batch_size) {
  if (data.empty()) throw std::runtime_error("evaluate: split is empty; nothing to score");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch size must be positive");
  const Index t_steps = model.spec().time_steps;
  RngStream unused(0);  // droppath is inactive outside training
  Index correct = 0;
  for (std::size_t pos = 0; pos < data.size(); pos += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), pos + static_cast<std::size_t>(batch_size));
    std::vector<FrameSample> batch;
    std::vector<Index> labels;
    for (std::size_t i = pos; i < end; ++i) {
      batch.push_back(bin_events(data[i], t_steps));
      labels.push_back(static_cast<Index>(batch.back().label));
    }
    Tensor<float> logits = model.forward(stack_frames(batch), /*training=*/false, unused);
    const Index k = logits.shape()[1];
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (argmax_row(logits.data() + static_cast<Index>(i) * k, k) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Owns the optimizer and the run's RNG streams; the model is borrowed.  All
// randomness (shuffling, augmentation, droppath) derives from cfg.seed, so a
// fixed seed reproduces the run bit for bit.
class Trainer {
 public:
  Trainer(SpikeformerModel<float>& model, TrainConfig cfg, AugmentConfig aug)
      : model_(model), cfg_(std::move(cfg)), aug_(aug), root_(cfg_.seed) {
    cfg_.validate();
    auto params = named_trainable(model_);
    if (cfg_.optimizer == OptimizerKind::adam) {
      AdamConfig ac = cfg_.adam;
      ac.weight_decay = cfg_.weight_decay;
      opt_ = std::make_unique<Adam<float>>(std::move(params), ac);
    } else {
      SgdConfig sc = cfg_.sgd;
      sc.weight_decay = cfg_.weight_decay;
      opt_ = std::make_unique<SgdMomentum<float>>(std::move(params), sc);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  Optimizer<float>& optimizer() { return *opt_; }
  const RunReport& report() const { return report_; }

  // One pass over the training split: deterministic shuffle, augmentation,
  // forward/backward, optimizer step per batch.  Aborts on non-finite loss.
  EpochMetrics train_epoch(const std::vector<EventStream>& data, Index epoch) {
    if (data.empty()) throw std::runtime_error("train_epoch: training split is empty");
    const Index t_steps = model_.spec().time_steps;
    cfg_.steps_per_epoch = static_cast<Index>((data.size() + cfg_.batch_size - 1) /
                                              static_cast<std::size_t>(cfg_.batch_size));

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle_rng = root_.child(0x5u * 0x100000u + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    RngStream aug_rng = root_.child(0xAu * 0x100000u + static_cast<std::uint64_t>(epoch));
    RngStream drop_rng = root_.child(0xDu * 0x100000u + static_cast<std::uint64_t>(epoch));

    EpochMetrics metrics;
    double loss_sum = 0.0;
    Index correct = 0;
    Index batch_index = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg_.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), pos + cfg_.batch_size);
      std::vector<FrameSample> batch;
      std::vector<Index> labels;
      batch.reserve(end - pos);
      for (std::size_t i = pos; i < end; ++i) {
        FrameSample s = bin_events(data[order[i]], t_steps);
        s = augment(s, aug_, aug_rng);
        labels.push_back(static_cast<Index>(s.label));
        batch.push_back(std::move(s));
      }
      const float lr = static_cast<float>(lr_at(cfg_, epoch, batch_index));

      opt_->zero_grad();
      Tensor<float> loss;
      Index batch_correct = 0;
      {
        Tape<float> tape;
        Tensor<float> x = stack_frames(batch);
        Tensor<float> logits = model_.forward(x, /*training=*/true, drop_rng);
        loss = smoothed_cross_entropy(logits, labels, cfg_.label_smoothing);
        if (!std::isfinite(loss.item()))
          throw std::runtime_error(
              "train_epoch: loss became non-finite at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch_index) + " (lr=" + std::to_string(lr) +
              "); aborting before the update");
        tape.backward(loss);
        const Index k = logits.shape()[1];
        for (std::size_t i = 0; i < labels.size(); ++i)
          if (argmax_row(logits.data() + static_cast<Index>(i) * k, k) ==
              labels[i])
            ++batch_correct;
      }
      opt_->step(lr);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - pos);
      correct += batch_correct;
      metrics.lr_last = lr;
    }
    metrics.loss = loss_sum / static_cast<double>(data.size());
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return metrics;
  }

  double evaluate(const std::vector<EventStream>& data) {
    return evaluate_split(model_, data, cfg_.batch_size);
  }

  // Full run; appends one record per epoch to the report (and `log` when
  // given) and returns the final evaluation accuracy.
  double run(const std::vector<EventStream>& train_set, const std::vector<EventStream>& eval_set,
             std::ostream* log = nullptr) {
    double last_eval = 0.0;
    for (Index e = 0; e < cfg_.epochs; ++e) {
      const auto start = std::chrono::steady_clock::now();
      const EpochMetrics m = train_epoch(train_set, e);
      last_eval = evaluate(eval_set);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report_.train_loss.push_back(m.loss);
      report_.train_acc.push_back(m.accuracy);
      report_.eval_acc.push_back(last_eval);
      report_.lr.push_back(m.lr_last);
      report_.wall_seconds.push_back(wall);
      if (log) {
        std::ostringstream line;
        line << std::setprecision(10) << "epoch=" << e << " lr=" << m.lr_last
             << " train_loss=" << m.loss << " train_acc=" << m.accuracy
             << " eval_acc=" << last_eval << " wall_s=" << std::setprecision(3) << wall;
        (*log) << line.str() << std::endl;
      }
    }
    return last_eval;
  }

  // Model weights + optimizer state + run metadata, ready to serialize.
  Checkpoint<float> checkpoint(Index epochs_done) const {
    Checkpoint<float> ckpt;
    model_.extract_state(ckpt);
    for (auto& [name, t] : opt_->named_state()) ckpt.tensors.emplace_back(name, t);
    const ModelSpec& spec = model_.spec();
    ckpt.metadata["variant"] = spec.name;
    ckpt.metadata["timesteps"] = std::to_string(spec.time_steps);
    ckpt.metadata["classes"] = std::to_string(spec.classes);
    ckpt.metadata["in_channels"] = std::to_string(spec.in_channels);
    ckpt.metadata["input_h"] = std::to_string(spec.input_h);
    ckpt.metadata["input_w"] = std::to_string(spec.input_w);
    ckpt.metadata["neuron_mode"] = neuron_mode_name(spec.neuron_mode);
    ckpt.metadata["seed"] = std::to_string(cfg_.seed);
    ckpt.metadata["epoch"] = std::to_string(epochs_done);
    return ckpt;
  }

  static std::vector<std::pair<std::string, Tensor<float>>> named_trainable(
      const SpikeformerModel<float>& model) {
    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (const NamedTensor<float>& nt : model.named_tensors())
      if (nt.trainable) out.emplace_back(nt.name, nt.tensor);
    return out;
  }

 private:
  SpikeformerModel<float>& model_;
  TrainConfig cfg_;
  AugmentConfig aug_;
  std::unique_ptr<Optimizer<float>> opt_;
  RngStream root_;
  RunReport report_;
};

}  // namespace spikeformer
