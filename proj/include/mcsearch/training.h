#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcsearch/corpus.h"
#include "mcsearch/model.h"
#include "mcsearch/rng.h"
#include "mcsearch/tokenizer.h"

namespace mcsearch {

enum class TrainPhase { kPretrain, kFinetune };

struct TrainConfig {
  TrainPhase phase = TrainPhase::kPretrain;
  std::size_t batch_size = 64;
  double learning_rate = 2e-4;
  std::size_t max_epochs = 1;
  // When non-zero, training runs exactly this many updates, cycling over
  // the data as often as needed; max_epochs is then ignored.
  std::size_t max_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double mask_rate = 0.15;
  std::uint64_t seed = 0;

  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();
  void validate() const;
};

// Adam with bias correction and a constant learning rate.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t parameter_count, const TrainConfig& config);

  void step(std::span<double> params, std::span<const double> grad);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// Number of positions to corrupt among `maskable`: rate * maskable rounded
// half up, and at least one whenever anything is maskable.
std::size_t masked_position_count(std::size_t maskable, double rate);

// Selects positions among attended non-special tokens; each selected one is
// replaced by [MASK] with probability 0.8, by a random ordinary token with
// probability 0.1, and left unchanged otherwise. Returns nullopt when the
// sequence has no maskable position.
std::optional<TrainingExample> mask_for_mlm(const EncodedSequence& seq,
                                            double rate,
                                            std::size_t vocab_size,
                                            SplitMix64& rng);

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossPoint> curve;  // loss of each batch before its update
  std::size_t steps = 0;
  std::size_t epochs = 0;
  std::size_t skipped_sequences = 0;
};

TrainResult pretrain_mlm(EncoderModel& model,
                         std::span<const EncodedSequence> corpus,
                         const TrainConfig& config);

// Binary cross-entropy on sigmoid([CLS] logit). All pairs must share one
// (natural language, programming language).
TrainResult finetune_pairs(EncoderModel& model, const Vocabulary& vocab,
                           std::span<const PairExample> pairs,
                           const TrainConfig& config);

void write_loss_curve(std::ostream& out, std::span<const LossPoint> curve,
                      const std::optional<ArtifactHeader>& header = std::nullopt);

struct GradCheckOptions {
  std::size_t coordinates = 256;
  double step = 1e-4;
  std::uint64_t seed = 0;
  // Denominator floor. Central differences at step 1e-4 resolve a
  // gradient only to about 1e-11, and some gradients are exactly zero
  // (the attention key bias), so tiny magnitudes are compared in absolute
  // terms.
  double floor = 1e-7;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tolerance) const { return max_relative_error < tolerance; }
};

inline constexpr std::size_t kGradCheckParameterLimit = 100000;

// Compares the analytic gradient of model.loss(batch) with central finite
// differences on a seeded coordinate sample that touches every tensor.
// Relative error per coordinate is |a - n| / max(|a|, |n|, floor).
// Dropout is off. Parameters are restored afterwards.
GradCheckResult grad_check(EncoderModel& model,
                           std::span<const TrainingExample> batch,
                           const GradCheckOptions& options = {});

}  // namespace mcsearch
