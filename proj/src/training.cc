#include "mcsearch/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "mcsearch/filtering.h"

namespace mcsearch {

namespace {

void require_finite(const EncoderModel& model, std::size_t step) {
  if (!model.all_finite())
    throw Error("non-finite parameter after update " + std::to_string(step));
}

// Yields successive batches of indices: shuffled per epoch, with the final
// partial batch of an epoch kept.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : order_(n), batch_size_(batch_size), rng_(seed) {
    reshuffle();
  }

  std::span<const std::size_t> next() {
    if (cursor_ >= order_.size()) {
      ++epoch_;
      reshuffle();
    }
    std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::span<const std::size_t> out(order_.data() + cursor_, end - cursor_);
    cursor_ = end;
    return out;
  }

  bool epoch_done() const { return cursor_ >= order_.size(); }
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  SplitMix64 rng_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

std::size_t total_steps(const TrainConfig& config, std::size_t per_epoch) {
  return config.max_steps ? config.max_steps : config.max_epochs * per_epoch;
}

}  // namespace

TrainConfig TrainConfig::pretrain_defaults() {
  TrainConfig c;
  c.phase = TrainPhase::kPretrain;
  c.batch_size = 64;
  c.learning_rate = 2e-4;
  c.max_epochs = 1;
  return c;
}

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.phase = TrainPhase::kFinetune;
  c.batch_size = 16;
  c.learning_rate = 1e-5;
  c.max_epochs = 3;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error("batch size must be positive");
  if (!(learning_rate > 0)) throw Error("learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0))
    throw Error("invalid Adam hyper-parameters");
  if (!(mask_rate > 0 && mask_rate <= 1))
    throw Error("mask rate must lie in (0, 1]");
}

AdamOptimizer::AdamOptimizer(std::size_t parameter_count,
                             const TrainConfig& config)
    : lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon),
      m_(parameter_count, 0.0),
      v_(parameter_count, 0.0) {}

void AdamOptimizer::step(std::span<double> params,
                         std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw Error("Adam: parameter/gradient size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
  }
}

std::size_t masked_position_count(std::size_t maskable, double rate) {
  if (maskable == 0) return 0;
  auto n = static_cast<std::size_t>(
      std::floor(rate * static_cast<double>(maskable) + 0.5));
  return std::clamp<std::size_t>(n, 1, maskable);
}

std::optional<TrainingExample> mask_for_mlm(const EncodedSequence& seq,
                                            double rate,
                                            std::size_t vocab_size,
                                            SplitMix64& rng) {
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq.attention_mask[i] && !Vocabulary::is_special(seq.ids[i]))
      maskable.push_back(i);
  if (maskable.empty()) return std::nullopt;
  if (vocab_size <= static_cast<std::size_t>(kNumSpecialTokens))
    throw Error("vocabulary has no ordinary tokens to sample");

  const std::size_t n = masked_position_count(maskable.size(), rate);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t j = k + static_cast<std::size_t>(rng.uniform(maskable.size() - k));
    std::swap(maskable[k], maskable[j]);
  }
  maskable.resize(n);
  std::sort(maskable.begin(), maskable.end());

  TrainingExample ex;
  ex.input = seq;
  for (auto pos : maskable) {
    ex.mlm.push_back({pos, seq.ids[pos]});
    const double u = rng.uniform_real();
    if (u < 0.8) {
      ex.input.ids[pos] = kMaskId;
    } else if (u < 0.9) {
      ex.input.ids[pos] = static_cast<TokenId>(
          kNumSpecialTokens +
          rng.uniform(vocab_size - static_cast<std::size_t>(kNumSpecialTokens)));
    }
  }
  return ex;
}

TrainResult pretrain_mlm(EncoderModel& model,
                         std::span<const EncodedSequence> corpus,
                         const TrainConfig& config) {
  config.validate();
  if (corpus.empty()) throw Error("pre-training corpus is empty");

  TrainResult result;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& seq = corpus[i];
    if (seq.size() > model.config().max_len)
      throw Error("sequence longer than the model's max_len");
    bool maskable = false;
    for (std::size_t t = 0; t < seq.size() && !maskable; ++t)
      maskable = seq.attention_mask[t] && !Vocabulary::is_special(seq.ids[t]);
    if (maskable)
      usable.push_back(i);
    else
      ++result.skipped_sequences;
  }
  if (usable.empty())
    throw Error("no pre-training sequence has a maskable position");

  SplitMix64 master(config.seed);
  BatchSchedule schedule(usable.size(), config.batch_size, master.next());
  SplitMix64 mask_rng = master.fork(1);
  SplitMix64 dropout_rng = master.fork(2);
  AdamOptimizer adam(model.parameter_count(), config);

  const std::size_t steps = total_steps(config, schedule.batches_per_epoch());
  std::vector<double> grad;
  std::vector<TrainingExample> batch;
  for (std::size_t step = 0; step < steps; ++step) {
    batch.clear();
    for (auto k : schedule.next()) {
      auto ex = mask_for_mlm(corpus[usable[k]], config.mask_rate,
                             model.config().vocab_size, mask_rng);
      batch.push_back(std::move(*ex));
    }
    auto loss = model.loss(batch, &grad, &dropout_rng);
    if (!std::isfinite(loss.total()))
      throw Error("non-finite MLM loss at step " + std::to_string(step));
    result.curve.push_back({step, loss.total()});
    adam.step(model.parameters(), grad);
    require_finite(model, step);
    ++result.steps;
  }
  result.epochs = schedule.epoch() + (schedule.epoch_done() ? 1 : 0);
  return result;
}

TrainResult finetune_pairs(EncoderModel& model, const Vocabulary& vocab,
                           std::span<const PairExample> pairs,
                           const TrainConfig& config) {
  config.validate();
  TrainResult result;
  if (pairs.empty()) throw Error("fine-tuning needs at least one pair");
  const auto nl = pairs.front().nl;
  const auto pl = pairs.front().pl;
  for (const auto& p : pairs) {
    if (p.pl != pl)
      throw Error("fine-tuning pairs mix programming languages (" +
                  std::string(to_string(pl)) + " and " +
                  std::string(to_string(p.pl)) +
                  "); train one model per language");
    if (p.nl != nl)
      throw Error("fine-tuning pairs mix natural languages (" +
                  std::string(to_string(nl)) + " and " +
                  std::string(to_string(p.nl)) + ")");
    if (p.label != 0 && p.label != 1) throw Error("pair label must be 0 or 1");
  }
  if (vocab.size() > model.config().vocab_size)
    throw Error("vocabulary is larger than the model's embedding table");

  std::vector<TrainingExample> encoded;
  encoded.reserve(pairs.size());
  for (const auto& p : pairs)
    encoded.push_back(
        {encode_pair(p.query, p.code, vocab, model.config().max_len), {},
         p.label});

  SplitMix64 master(config.seed);
  BatchSchedule schedule(encoded.size(), config.batch_size, master.next());
  SplitMix64 dropout_rng = master.fork(2);
  AdamOptimizer adam(model.parameter_count(), config);

  const std::size_t steps = total_steps(config, schedule.batches_per_epoch());
  std::vector<double> grad;
  std::vector<TrainingExample> batch;
  for (std::size_t step = 0; step < steps; ++step) {
    batch.clear();
    for (auto k : schedule.next()) batch.push_back(encoded[k]);
    auto loss = model.loss(batch, &grad, &dropout_rng);
    if (!std::isfinite(loss.total()))
      throw Error("non-finite classification loss at step " +
                  std::to_string(step));
    result.curve.push_back({step, loss.total()});
    adam.step(model.parameters(), grad);
    require_finite(model, step);
    ++result.steps;
  }
  result.epochs =
      steps == 0 ? 0 : schedule.epoch() + (schedule.epoch_done() ? 1 : 0);
  return result;
}

void write_loss_curve(std::ostream& out, std::span<const LossPoint> curve,
                      const std::optional<ArtifactHeader>& header) {
  if (header) out << header->line() << '\n';
  out << "step\tloss\n";
  for (const auto& p : curve) out << p.step << '\t' << format_real(p.loss) << '\n';
}

GradCheckResult grad_check(EncoderModel& model,
                           std::span<const TrainingExample> batch,
                           const GradCheckOptions& options) {
  if (!(options.floor > 0.0) || !(options.step > 0.0))
    throw Error("gradient check step and floor must be positive");
  if (model.parameter_count() > kGradCheckParameterLimit)
    throw Error("gradient check needs a model of at most " +
                std::to_string(kGradCheckParameterLimit) + " parameters, got " +
                std::to_string(model.parameter_count()));
  std::vector<double> analytic;
  auto base = model.loss(batch, &analytic);
  if (!std::isfinite(base.total()))
    throw Error("gradient check: loss is not finite");

  // A few coordinates from every tensor, the rest uniform over all.
  SplitMix64 rng(options.seed);
  std::vector<std::size_t> coords;
  const auto& tensors = model.tensors();
  const std::size_t per_tensor =
      std::max<std::size_t>(1, options.coordinates / (2 * tensors.size()));
  for (const auto& t : tensors)
    for (std::size_t k = 0; k < std::min(per_tensor, t.size()); ++k)
      coords.push_back(t.offset + rng.uniform(t.size()));
  while (coords.size() < options.coordinates)
    coords.push_back(rng.uniform(model.parameter_count()));

  auto params = model.parameters();
  GradCheckResult result;
  for (auto idx : coords) {
    const double saved = params[idx];
    params[idx] = saved + options.step;
    const double up = model.loss(batch, nullptr).total();
    params[idx] = saved - options.step;
    const double down = model.loss(batch, nullptr).total();
    params[idx] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error("gradient check: perturbed loss is not finite");
    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic[idx];
    const double denom =
        std::max({std::abs(a), std::abs(numeric), options.floor});
    const double rel = std::abs(a - numeric) / denom;
    if (result.checked++ == 0 || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      for (const auto& t : tensors)
        if (idx >= t.offset && idx < t.offset + t.size()) {
          result.worst_tensor = t.name;
          result.worst_index = idx - t.offset;
        }
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace mcsearch
